//! Checkpoint directories: `params.safetensors`, `config.json`,
//! `tokenizer.json`, and a plain-text `manifest.txt` of `key: value` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::transformer::{TransformerClassifier, TransformerConfig, TransformerSeq2Seq};
use super::{ParameterGroup, Trainable};
use crate::error::{QuistError, Result};
use crate::tokenizer::Tokenizer;

const PARAMS: &str = "params.safetensors";
const CONFIG: &str = "config.json";
const TOKENIZER: &str = "tokenizer.json";
const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| QuistError::Lookup(format!("manifest lacks key {key:?}")))
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(':').ok_or_else(|| {
                QuistError::Config(format!("manifest line {}: expected `key: value`", i + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| QuistError::io(&path, e))?;
        Self::parse(&text)
    }
}

fn write_common<M: Trainable>(
    dir: &Path,
    kind: &str,
    model: &M,
    config: &TransformerConfig,
    tokenizer: &Tokenizer,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| QuistError::io(dir, e))?;
    fs::write(dir.join(CONFIG), serde_json::to_string_pretty(config)?)
        .map_err(|e| QuistError::io(dir.join(CONFIG), e))?;
    tokenizer.save(&dir.join(TOKENIZER))?;
    let mut manifest = Manifest::default();
    manifest.set("kind", kind);
    manifest.set("seed", config.seed);
    manifest.set("step", model.steps_taken());
    manifest.set(
        "tokenizer_mode",
        serde_json::to_value(tokenizer.mode())?.as_str().unwrap_or_default(),
    );
    manifest.set("vocab_size", tokenizer.vocab_size());
    for state in model.group_states() {
        manifest.set(&format!("trainable.{}", state.name), state.trainable);
    }
    fs::write(dir.join(MANIFEST), manifest.render()).map_err(|e| QuistError::io(dir.join(MANIFEST), e))
}

fn read_common(dir: &Path, kind: &str) -> Result<(Manifest, TransformerConfig, Tokenizer)> {
    let manifest = Manifest::read(dir)?;
    let found = manifest.require("kind")?;
    if found != kind {
        return Err(QuistError::Config(format!(
            "{} holds a {found} checkpoint, expected {kind}",
            dir.display()
        )));
    }
    let cfg_path = dir.join(CONFIG);
    let text = fs::read_to_string(&cfg_path).map_err(|e| QuistError::io(&cfg_path, e))?;
    let config = serde_json::from_str(&text)?;
    let tokenizer = Tokenizer::load(&dir.join(TOKENIZER))?;
    Ok((manifest, config, tokenizer))
}

fn trainable_from(manifest: &Manifest, owned: &[ParameterGroup]) -> Result<BTreeSet<ParameterGroup>> {
    let mut set = BTreeSet::new();
    for &g in owned {
        if manifest.require(&format!("trainable.{g}"))? == "true" {
            set.insert(g);
        }
    }
    Ok(set)
}

pub fn save_seq2seq(model: &TransformerSeq2Seq, dir: &Path) -> Result<()> {
    write_common(dir, "seq2seq", model, model.config(), super::Seq2SeqModel::tokenizer(model))?;
    model.store().save(&dir.join(PARAMS))
}

pub fn load_seq2seq(dir: &Path) -> Result<TransformerSeq2Seq> {
    let (manifest, config, tokenizer) = read_common(dir, "seq2seq")?;
    let mut model = TransformerSeq2Seq::new(config, tokenizer)?;
    model.store().load(&dir.join(PARAMS))?;
    let trainable = trainable_from(&manifest, &ParameterGroup::ALL)?;
    model.set_trainable(&trainable)?;
    model.set_steps(manifest.require("step")?.parse().unwrap_or(0));
    Ok(model)
}

pub fn save_classifier(model: &TransformerClassifier, dir: &Path) -> Result<()> {
    write_common(dir, "classifier", model, model.config(), super::ClassifierModel::tokenizer(model))?;
    model.store().save(&dir.join(PARAMS))
}

pub fn load_classifier(dir: &Path) -> Result<TransformerClassifier> {
    let (manifest, config, tokenizer) = read_common(dir, "classifier")?;
    let mut model = TransformerClassifier::new(config, tokenizer)?;
    model.store().load(&dir.join(PARAMS))?;
    let owned = model.groups().to_vec();
    let trainable = trainable_from(&manifest, &owned)?;
    model.set_trainable(&trainable)?;
    model.set_steps(manifest.require("step")?.parse().unwrap_or(0));
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::default();
        m.set("seed", 3);
        m.set("trainable.encoder", true);
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("seed"), Some("3"));
        assert!(Manifest::parse("no colon here").is_err());
    }
}
