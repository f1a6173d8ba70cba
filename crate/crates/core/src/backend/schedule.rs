use serde::{Deserialize, Serialize};

/// Linear warmup to the peak rate, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWarmup {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LinearWarmup {
    /// Rate for the zero-based optimizer step `step`.
    pub fn rate(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.total_steps <= self.warmup_steps {
            return self.peak;
        }
        let remaining = self.total_steps.saturating_sub(step) as f64;
        self.peak * remaining / (self.total_steps - self.warmup_steps) as f64
    }
}

/// Optimization settings shared by classifier and generator training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    /// Validation is run every this many steps.
    pub eval_every: u64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl OptimConfig {
    pub fn qtc_default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-5,
            ..Self::default()
        }
    }

    pub fn qg_default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-5,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> LinearWarmup {
        LinearWarmup {
            peak: self.learning_rate,
            warmup_steps: self.warmup_steps,
            total_steps: self.max_steps,
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-5,
            warmup_steps: 1000,
            max_steps: 20_000,
            eval_every: 500,
            patience: 3,
            seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_decay() {
        let s = LinearWarmup {
            peak: 1.0,
            warmup_steps: 4,
            total_steps: 8,
        };
        let rates: Vec<f64> = (0..9).map(|i| s.rate(i)).collect();
        assert_eq!(rates, vec![0.25, 0.5, 0.75, 1.0, 1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn appendix_defaults() {
        assert_eq!(
            (OptimConfig::qtc_default().batch_size, OptimConfig::qtc_default().learning_rate),
            (8, 1e-5)
        );
        assert_eq!(
            (OptimConfig::qg_default().batch_size, OptimConfig::qg_default().learning_rate),
            (16, 5e-5)
        );
        assert_eq!(OptimConfig::default().warmup_steps, 1000);
    }
}
