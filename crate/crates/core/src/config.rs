//! `key = value` run configuration files.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! skipped. Keys are the [`ModelConfig`] and [`TrainConfig`] field names
//! plus `model` and `checkpoint_every`. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelKind};
use crate::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "model",
    "dim",
    "embed_dim",
    "layers",
    "margin",
    "learning_rate",
    "epochs",
    "alpha",
    "beta",
    "seed",
    "clip_norm",
    "max_name_words",
    "retrieval_k",
    "log_every",
    "checkpoint_every",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// write an intermediate checkpoint every this many epochs; 0 writes
    /// only the final one
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::new(ModelKind::CcLstm),
            train: TrainConfig::default(),
            checkpoint_every: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "model" => m.kind = ModelKind::parse(v)?,
            "dim" => m.dim = parse(key, v)?,
            "embed_dim" => m.embed_dim = parse(key, v)?,
            "layers" => m.layers = parse(key, v)?,
            "margin" => t.margin = parse(key, v)?,
            "learning_rate" => t.learning_rate = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "alpha" => t.alpha = parse(key, v)?,
            "beta" => t.beta = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "clip_norm" => t.clip_norm = if v == "none" { None } else { Some(parse(key, v)?) },
            "max_name_words" => t.max_name_words = parse(key, v)?,
            "retrieval_k" => t.retrieval_k = parse(key, v)?,
            "log_every" => t.log_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}` (expected one of {KEYS:?})"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        self.apply_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Every setting as text, in the same syntax [`RunConfig::set`] reads.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let (m, t) = (&self.model, &self.train);
        let entries = [
            ("model", m.kind.name().to_string()),
            ("dim", m.dim.to_string()),
            ("embed_dim", m.embed_dim.to_string()),
            ("layers", m.layers.to_string()),
            ("margin", t.margin.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("epochs", t.epochs.to_string()),
            ("alpha", t.alpha.to_string()),
            ("beta", t.beta.to_string()),
            ("seed", t.seed.to_string()),
            ("clip_norm", t.clip_norm.map_or("none".to_string(), |c| c.to_string())),
            ("max_name_words", t.max_name_words.to_string()),
            ("retrieval_k", t.retrieval_k.to_string()),
            ("log_every", t.log_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_map().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_comments() {
        let mut c = RunConfig::default();
        let text = "# paper values\nmodel = transe\nlearning_rate=0.05\n\nclip_norm = none\nepochs = 3\n";
        c.apply_text(text, Path::new("run.cfg")).unwrap();
        assert_eq!(c.model.kind, ModelKind::TransE);
        assert_eq!((c.train.learning_rate, c.train.clip_norm, c.train.epochs), (0.05, None, 3));
    }

    #[test]
    fn errors_name_the_line() {
        let mut c = RunConfig::default();
        for bad in ["margin 0.1", "gamma = 0.1", "epochs = many"] {
            assert!(matches!(
                c.apply_text(&format!("\n{bad}"), Path::new("run.cfg")),
                Err(Error::Parse { line: 2, .. })
            ));
        }
    }

    #[test]
    fn text_form_round_trips() {
        let mut c = RunConfig::default();
        c.set("beta", "1").unwrap();
        c.set("margin", "0.3").unwrap();
        let mut back = RunConfig {
            checkpoint_every: 9,
            ..RunConfig::default()
        };
        back.apply_text(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.to_map().len(), KEYS.len());
    }
}
