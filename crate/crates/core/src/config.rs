//! Flat `key = value` run configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key must be known;
//! `cnn_widths` takes a comma-separated list.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::TupleFormat;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "data",
    "format",
    "output_dir",
    "dev_eval",
    "encoder",
    "scorer",
    "norm",
    "word_dim",
    "entity_dim",
    "relation_dim",
    "cnn_widths",
    "cnn_channels",
    "lstm_hidden",
    "init_range",
    "core_init_range",
    "objective",
    "optimizer",
    "epochs",
    "batch_size",
    "learning_rate",
    "margin",
    "seed",
    "epsilon",
    "memory_budget_mb",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub format: TupleFormat,
    pub output_dir: Option<PathBuf>,
    /// Evaluate on the dev split after each epoch and keep the best parameters.
    pub dev_eval: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            format: TupleFormat::default(),
            output_dir: None,
            dev_eval: true,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}` (true, false)"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "format" => self.format = value.parse()?,
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "dev_eval" => self.dev_eval = parse_bool(key, value)?,
            "encoder" => m.encoder = value.parse()?,
            "scorer" => m.scorer = value.parse()?,
            "norm" => m.norm = value.parse()?,
            "word_dim" => m.word_dim = parse(key, value)?,
            "entity_dim" => m.entity_dim = parse(key, value)?,
            "relation_dim" => m.relation_dim = parse(key, value)?,
            "cnn_widths" => {
                m.cnn_widths = value
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "cnn_channels" => m.cnn_channels = parse(key, value)?,
            "lstm_hidden" => m.lstm_hidden = parse(key, value)?,
            "init_range" => m.init_range = parse(key, value)?,
            "core_init_range" => m.core_init_range = parse(key, value)?,
            "objective" => t.objective = value.parse()?,
            "optimizer" => t.optimizer = value.parse()?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "margin" => t.margin = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "memory_budget_mb" => t.memory_budget_mb = parse(key, value)?,
            _ => {
                return Err(Error::UnknownConfigKey { key: key.to_string(), valid: KEYS.join(", ") });
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Model and training keys only, in [`KEYS`] order; parses back to the same values.
    pub fn model_train_text(model: &ModelConfig, train: &TrainConfig) -> String {
        let widths: Vec<String> = model.cnn_widths.iter().map(usize::to_string).collect();
        let pairs: [(&str, String); 20] = [
            ("encoder", model.encoder.to_string()),
            ("scorer", model.scorer.to_string()),
            ("norm", model.norm.to_string()),
            ("word_dim", model.word_dim.to_string()),
            ("entity_dim", model.entity_dim.to_string()),
            ("relation_dim", model.relation_dim.to_string()),
            ("cnn_widths", widths.join(",")),
            ("cnn_channels", model.cnn_channels.to_string()),
            ("lstm_hidden", model.lstm_hidden.to_string()),
            ("init_range", model.init_range.to_string()),
            ("core_init_range", model.core_init_range.to_string()),
            ("objective", train.objective.to_string()),
            ("optimizer", train.optimizer.to_string()),
            ("epochs", train.epochs.to_string()),
            ("batch_size", train.batch_size.to_string()),
            ("learning_rate", train.learning_rate.to_string()),
            ("margin", train.margin.to_string()),
            ("seed", train.seed.to_string()),
            ("epsilon", train.epsilon.to_string()),
            ("memory_budget_mb", train.memory_budget_mb.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderKind, ScorerKind};
    use crate::training::Objective;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = RunConfig::parse_str(
            "# toy run\nencoder = bilstm\nscorer=transe\nentity_dim = 8\nrelation_dim = 8\n\
             cnn_widths = 1, 3\nobjective = margin # hinge\nlearning_rate = 0.05\ndev_eval = false\n",
        )
        .unwrap();
        assert_eq!(cfg.model.encoder, EncoderKind::BiLstm);
        assert_eq!(cfg.model.scorer, ScorerKind::TransE);
        assert_eq!(cfg.model.cnn_widths, vec![1, 3]);
        assert_eq!(cfg.train.objective, Objective::Margin);
        assert_eq!(cfg.train.learning_rate, 0.05);
        assert!(!cfg.dev_eval);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        match RunConfig::parse_str("learnig_rate = 0.1\n") {
            Err(Error::UnknownConfigKey { key, valid }) => {
                assert_eq!(key, "learnig_rate");
                assert!(valid.contains("learning_rate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::parse_str("epochs = many").is_err());
        assert!(RunConfig::parse_str("encoder = rnn").is_err());
        assert!(RunConfig::parse_str("scorer = transe\nentity_dim = 8\nrelation_dim = 4").is_err());
        assert!(RunConfig::parse_str("just words").is_err());
    }

    #[test]
    fn text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.model.init_range = 0.123456789012345;
        cfg.train.learning_rate = 3e-4;
        let text = RunConfig::model_train_text(&cfg.model, &cfg.train);
        let back = RunConfig::parse_str(&text).unwrap();
        assert_eq!(back.model, cfg.model);
        assert_eq!(back.train, cfg.train);
    }
}
