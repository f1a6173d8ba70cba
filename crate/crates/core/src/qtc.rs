//! Question-type classification from an answer and its context.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::{encode_for_classification, ClassifierModel, OptimConfig, ParameterGroup};
use crate::corpus::QAExample;
use crate::error::{QuistError, Result};
use crate::qg::BatchCursor;
use crate::question_typing::{match_labels, MatchMode, QuestionType};
use crate::seed;
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QTCExample {
    pub answer_text: String,
    pub context: String,
    pub qtype: QuestionType,
}

impl QTCExample {
    pub fn from_annotated(typed: &[(QAExample, QuestionType)]) -> Vec<QTCExample> {
        typed
            .iter()
            .filter(|(e, _)| !e.answer_text.trim().is_empty())
            .map(|(e, t)| QTCExample {
                answer_text: e.answer_text.clone(),
                context: e.context.clone(),
                qtype: *t,
            })
            .collect()
    }
}

/// `[cls] answer [sep] context [sep]`; the context is shortened to fit
/// `max_len`, the answer and both separators are kept.
pub fn build_qtc_input(answer: &str, context: &str, tokenizer: &Tokenizer, max_len: usize) -> Result<Vec<TokenId>> {
    if answer.trim().is_empty() {
        return Err(QuistError::Argument("answer must be non-empty".into()));
    }
    let sp = tokenizer.special();
    let mut ids = vec![sp.classifier_start];
    ids.extend(tokenizer.encode(answer));
    ids.push(sp.separator);
    let context_ids = tokenizer.encode(context);
    let room = max_len.saturating_sub(ids.len() + 1);
    ids.extend_from_slice(&context_ids[..context_ids.len().min(room)]);
    ids.push(sp.separator);
    Ok(ids)
}

fn counts(examples: &[QTCExample]) -> BTreeMap<QuestionType, usize> {
    let mut c = BTreeMap::new();
    for e in examples {
        *c.entry(e.qtype).or_insert(0) += 1;
    }
    c
}

/// Tops every present type up to the largest type's count with draws (with
/// replacement) from that type. Originals come first, in input order.
pub fn upsample(examples: &[QTCExample], seed_value: u64) -> Result<Vec<QTCExample>> {
    if examples.is_empty() {
        return Err(QuistError::Argument("cannot upsample an empty example list".into()));
    }
    let counts = counts(examples);
    let target = *counts.values().max().expect("non-empty");
    let mut out = examples.to_vec();
    let mut rng = seed::labeled_rng(seed_value, "upsample");
    for (&t, &n) in &counts {
        let members: Vec<&QTCExample> = examples.iter().filter(|e| e.qtype == t).collect();
        for _ in n..target {
            out.push((*members.choose(&mut rng).expect("type is present")).clone());
        }
    }
    Ok(out)
}

/// Argmax with ties going to the earlier type.
pub fn argmax_type(probabilities: &[f64; QuestionType::COUNT]) -> QuestionType {
    let mut best = 0;
    for i in 1..QuestionType::COUNT {
        if probabilities[i] > probabilities[best] {
            best = i;
        }
    }
    QuestionType::ALL[best]
}

pub fn predict_type<C: ClassifierModel>(
    classifier: &C,
    answer: &str,
    context: &str,
) -> Result<(QuestionType, [f64; QuestionType::COUNT])> {
    let ids = build_qtc_input(answer, context, classifier.tokenizer(), classifier.max_len())?;
    let p = encode_for_classification(classifier, &ids)?;
    Ok((argmax_type(&p), p))
}

fn predict_all<C: ClassifierModel>(classifier: &C, examples: &[QTCExample], batch: usize) -> Result<Vec<QuestionType>> {
    let inputs = examples
        .iter()
        .map(|e| build_qtc_input(&e.answer_text, &e.context, classifier.tokenizer(), classifier.max_len()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in inputs.chunks(batch.max(1)) {
        for row in classifier.logits(chunk)? {
            out.push(argmax_type(&crate::backend::softmax8(&row)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub qtype: QuestionType,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    /// False when the class was neither predicted nor gold.
    pub counted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTCReport {
    pub mode: MatchMode,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassReport>,
    /// Rows are (effective) gold types, columns predicted types.
    pub confusion: [[usize; QuestionType::COUNT]; QuestionType::COUNT],
    pub checkpoint: Option<String>,
}

impl QTCReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| QuistError::io(path, e))
    }
}

/// Macro-F1 over the eight classes. In relaxed mode a prediction accepted by
/// [`match_labels`] counts as gold. Classes never predicted and never gold
/// are left out of the mean; any other class with no true positive has F1 0.
pub fn score_predictions(predicted: &[QuestionType], gold: &[QuestionType], mode: MatchMode) -> Result<QTCReport> {
    if predicted.len() != gold.len() {
        return Err(QuistError::Argument(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(QuistError::Argument("no examples to score".into()));
    }
    let mut confusion = [[0usize; QuestionType::COUNT]; QuestionType::COUNT];
    for (&p, &g) in predicted.iter().zip(gold) {
        let effective = if match_labels(p, g, mode) { p } else { g };
        confusion[effective.index()][p.index()] += 1;
    }
    let mut per_class = Vec::with_capacity(QuestionType::COUNT);
    let mut f1_sum = 0.0;
    let mut counted = 0usize;
    for t in QuestionType::ALL {
        let i = t.index();
        let tp = confusion[i][i];
        let support: usize = confusion[i].iter().sum();
        let predicted_n: usize = confusion.iter().map(|row| row[i]).sum();
        let precision = if predicted_n > 0 { tp as f64 / predicted_n as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if tp > 0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let is_counted = support > 0 || predicted_n > 0;
        if is_counted {
            f1_sum += f1;
            counted += 1;
        }
        per_class.push(ClassReport {
            qtype: t,
            precision,
            recall,
            f1,
            support,
            predicted: predicted_n,
            counted: is_counted,
        });
    }
    let correct: usize = (0..QuestionType::COUNT).map(|i| confusion[i][i]).sum();
    Ok(QTCReport {
        mode,
        macro_f1: f1_sum / counted as f64,
        accuracy: correct as f64 / gold.len() as f64,
        per_class,
        confusion,
        checkpoint: None,
    })
}

pub fn evaluate_qtc<C: ClassifierModel>(classifier: &C, examples: &[QTCExample], mode: MatchMode) -> Result<QTCReport> {
    let predicted = predict_all(classifier, examples, 32)?;
    let gold: Vec<QuestionType> = examples.iter().map(|e| e.qtype).collect();
    score_predictions(&predicted, &gold, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QTCTrainConfig {
    pub optim: OptimConfig,
    pub upsample: bool,
}

impl Default for QTCTrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::qtc_default(),
            upsample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTCStep {
    pub step: u64,
    pub loss: f32,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTCEval {
    pub step: u64,
    pub validation_loss: f32,
    pub validation_macro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QTCTrainLog {
    pub steps: Vec<QTCStep>,
    pub evals: Vec<QTCEval>,
    pub best_step: Option<u64>,
    pub stopped_early: bool,
    /// Per-type counts of the (possibly upsampled) training set, i.e. how
    /// often each type is seen per epoch.
    pub epoch_exposure: BTreeMap<QuestionType, usize>,
}

/// Trains every parameter group with cross-entropy, evaluating on
/// `validation` every `eval_every` steps and keeping the checkpoint with the
/// lowest validation loss.
pub fn train_qtc<C: ClassifierModel>(
    classifier: &mut C,
    train: &[QTCExample],
    validation: &[QTCExample],
    config: &QTCTrainConfig,
) -> Result<QTCTrainLog> {
    if train.is_empty() || validation.is_empty() {
        return Err(QuistError::Argument("QTC training needs non-empty train and validation sets".into()));
    }
    if counts(train).len() < 2 {
        return Err(QuistError::Usage("QTC training set covers a single question type".into()));
    }
    let all: std::collections::BTreeSet<ParameterGroup> = classifier.groups().iter().copied().collect();
    classifier.set_trainable(&all)?;

    let optim = &config.optim;
    let data = if config.upsample {
        upsample(train, optim.seed)?
    } else {
        train.to_vec()
    };
    let tokenizer = classifier.tokenizer().clone();
    let max_len = classifier.max_len();
    let encode = |e: &QTCExample| -> Result<(Vec<TokenId>, usize)> {
        Ok((build_qtc_input(&e.answer_text, &e.context, &tokenizer, max_len)?, e.qtype.index()))
    };
    let inputs = data.iter().map(encode).collect::<Result<Vec<_>>>()?;
    let validation_inputs = validation.iter().map(encode).collect::<Result<Vec<_>>>()?;

    let mut log = QTCTrainLog {
        epoch_exposure: counts(&data),
        ..Default::default()
    };
    let schedule = optim.schedule();
    let mut cursor = BatchCursor::new(inputs.len(), optim.seed, "qtc_batches");
    let mut best: Option<(f32, C::Snapshot)> = None;
    let mut bad_evals = 0;
    for step in 0..optim.max_steps {
        let lr = schedule.rate(step);
        let batch: Vec<(Vec<TokenId>, usize)> = cursor
            .next_batch(optim.batch_size)
            .into_iter()
            .map(|(i, _)| inputs[i].clone())
            .collect();
        let loss = classifier.train_step(&batch, lr)?;
        log.steps.push(QTCStep {
            step,
            loss,
            learning_rate: lr,
        });
        if optim.eval_every > 0 && (step + 1) % optim.eval_every == 0 {
            let mut total = 0.0f64;
            for chunk in validation_inputs.chunks(optim.batch_size.max(1)) {
                total += classifier.batch_loss(chunk)? as f64 * chunk.len() as f64;
            }
            let v = (total / validation_inputs.len() as f64) as f32;
            let f1 = evaluate_qtc(classifier, validation, MatchMode::Hard)?.macro_f1;
            log.evals.push(QTCEval {
                step,
                validation_loss: v,
                validation_macro_f1: f1,
            });
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, classifier.snapshot()?));
                log.best_step = Some(step);
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= optim.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, snapshot)) = best {
        classifier.restore(&snapshot)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(t: QuestionType, i: usize) -> QTCExample {
        QTCExample {
            answer_text: format!("a{i}"),
            context: format!("c{i}"),
            qtype: t,
        }
    }

    #[test]
    fn upsample_equalizes() {
        let mut xs: Vec<QTCExample> = (0..5).map(|i| ex(QuestionType::What, i)).collect();
        xs.extend((0..2).map(|i| ex(QuestionType::Who, 10 + i)));
        xs.push(ex(QuestionType::Why, 20));
        let up = upsample(&xs, 1).unwrap();
        assert_eq!(up.len(), 15);
        assert!(counts(&up).values().all(|&c| c == 5));
        assert_eq!(&up[..xs.len()], &xs[..]);
        assert_eq!(up, upsample(&xs, 1).unwrap());
        assert!(upsample(&[], 0).is_err());
    }

    #[test]
    fn tie_goes_to_earlier_type() {
        let mut p = [0.0; 8];
        p[QuestionType::Who.index()] = 0.5;
        p[QuestionType::Where.index()] = 0.5;
        assert_eq!(argmax_type(&p), QuestionType::Where);
    }

    #[test]
    fn macro_f1_edges() {
        let gold = [QuestionType::When, QuestionType::Who, QuestionType::What];
        let perfect = score_predictions(&gold, &gold, MatchMode::Hard).unwrap();
        assert_eq!(perfect.macro_f1, 1.0);
        let all_what = [QuestionType::What; 3];
        let hard = score_predictions(&all_what, &gold, MatchMode::Hard).unwrap();
        let relaxed = score_predictions(&all_what, &gold, MatchMode::Relaxed).unwrap();
        assert!((hard.macro_f1 - (0.5 / 3.0)).abs() < 1e-12, "{}", hard.macro_f1);
        assert_eq!(relaxed.macro_f1, 1.0);
    }

    #[test]
    fn input_layout() {
        let t = Tokenizer::whitespace(["911 dial in emergencies paris is in france ."], 1);
        let sp = t.special();
        let ids = build_qtc_input("911", "dial 911 in emergencies", &t, 64).unwrap();
        assert_eq!(ids[0], sp.classifier_start);
        assert_eq!(ids[1], t.token_id("911").unwrap());
        assert_eq!(ids[2], sp.separator);
        assert_eq!(*ids.last().unwrap(), sp.separator);
        let short = build_qtc_input("911", "dial 911 in emergencies", &t, 6).unwrap();
        assert_eq!(short.len(), 6);
        assert_eq!(short.iter().filter(|&&i| i == sp.separator).count(), 2);
        assert!(build_qtc_input("", "x", &t, 8).is_err());
    }
}
