use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::PairMode;
use crate::error::{Error, Result};
use crate::model::{Dropouts, ModelConfig, ModelKind, SupervisionMode};

/// Where the supervision trees come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeSource {
    Gold,
    /// A uniformly random binary tree per sentence.
    Random,
    None,
}

impl FromStr for TreeSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(TreeSource::Gold),
            "random" => Ok(TreeSource::Random),
            "none" => Ok(TreeSource::None),
            _ => Err(Error::Config(format!("unknown tree source {:?}", s))),
        }
    }
}

impl fmt::Display for TreeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeSource::Gold => "gold",
            TreeSource::Random => "random",
            TreeSource::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {:?}", s))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Everything a training run depends on. Read from `key = value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub chunk_factor: usize,
    pub tied: bool,
    pub tau: f64,
    pub lookback: usize,

    pub alpha: f64,
    pub supervision_mode: SupervisionMode,
    pub tree_source: TreeSource,
    pub supervision_layer: usize,
    pub pair_mode: PairMode,

    pub bptt: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Multiplier applied when validation perplexity stops improving.
    pub lr_decay: f64,
    /// Epochs without improvement tolerated before decaying.
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
    /// Average iterates from `average_start` (1-based epoch) onwards.
    pub averaging: bool,
    pub average_start: usize,
    pub epochs: usize,
    pub seed: u64,

    pub dropout_word: f64,
    pub dropout_recurrent: f64,
    pub dropout_inter: f64,
    pub dropout_output: f64,
    pub dropout_embedding: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = Dropouts::default();
        TrainConfig {
            model: ModelKind::Onlstm,
            embed_size: 400,
            hidden_size: 1150,
            layers: 3,
            chunk_factor: 1,
            tied: true,
            tau: 10.0,
            lookback: 5,
            alpha: 0.75,
            supervision_mode: SupervisionMode::SplitHead,
            tree_source: TreeSource::Gold,
            supervision_layer: 3,
            pair_mode: PairMode::Symmetric,
            bptt: 70,
            batch_size: 20,
            eval_batch_size: 10,
            optimizer: OptimizerKind::Sgd,
            lr: 30.0,
            lr_decay: 0.25,
            patience: 0,
            clip: 0.25,
            averaging: false,
            average_start: 1,
            epochs: 1000,
            seed: 1111,
            dropout_word: d.word,
            dropout_recurrent: d.recurrent,
            dropout_inter: d.inter_layer,
            dropout_output: d.output,
            dropout_embedding: d.embedding,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {:?} for {}", value, key)))
}

impl TrainConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.update_from_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn update_from_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e)))?;
        }
        self.validate()
    }

    /// Overrides one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "model" => self.model = v.parse()?,
            "embed_size" => self.embed_size = parse_value(key, v)?,
            "hidden_size" => self.hidden_size = parse_value(key, v)?,
            "layers" => self.layers = parse_value(key, v)?,
            "chunk_factor" => self.chunk_factor = parse_value(key, v)?,
            "tied" => self.tied = parse_value(key, v)?,
            "tau" => self.tau = parse_value(key, v)?,
            "lookback" => self.lookback = parse_value(key, v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "supervision_mode" => self.supervision_mode = v.parse()?,
            "tree_source" => self.tree_source = v.parse()?,
            "supervision_layer" => self.supervision_layer = parse_value(key, v)?,
            "pair_mode" => self.pair_mode = v.parse()?,
            "bptt" => self.bptt = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "eval_batch_size" => self.eval_batch_size = parse_value(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "lr" => self.lr = parse_value(key, v)?,
            "lr_decay" => self.lr_decay = parse_value(key, v)?,
            "patience" => self.patience = parse_value(key, v)?,
            "clip" => self.clip = parse_value(key, v)?,
            "averaging" => self.averaging = parse_value(key, v)?,
            "average_start" => self.average_start = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "dropout_word" => self.dropout_word = parse_value(key, v)?,
            "dropout_recurrent" => self.dropout_recurrent = parse_value(key, v)?,
            "dropout_inter" => self.dropout_inter = parse_value(key, v)?,
            "dropout_output" => self.dropout_output = parse_value(key, v)?,
            "dropout_embedding" => self.dropout_embedding = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {:?}", key))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<()> {
        for s in sets {
            let s = s.as_ref();
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", s)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if (self.supervision_mode == SupervisionMode::None) != (self.tree_source == TreeSource::None) {
            return bad(format!(
                "supervision_mode = {} requires tree_source = {}",
                self.supervision_mode,
                if self.supervision_mode == SupervisionMode::None {
                    "none"
                } else {
                    "gold or random"
                }
            ));
        }
        if self.bptt == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("bptt, batch_size and eval_batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || !(self.clip >= 0.0) {
            return bad("lr must be positive, lr_decay in (0, 1], clip >= 0".into());
        }
        for (name, p) in [
            ("dropout_word", self.dropout_word),
            ("dropout_recurrent", self.dropout_recurrent),
            ("dropout_inter", self.dropout_inter),
            ("dropout_output", self.dropout_output),
            ("dropout_embedding", self.dropout_embedding),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{} must be in [0, 1), got {}", name, p));
            }
        }
        self.model_config(2).validate()
    }

    pub fn dropouts(&self) -> Dropouts {
        Dropouts {
            word: self.dropout_word,
            recurrent: self.dropout_recurrent,
            inter_layer: self.dropout_inter,
            output: self.dropout_output,
            embedding: self.dropout_embedding,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            vocab_size,
            embed_size: self.embed_size,
            hidden_size: self.hidden_size,
            n_layers: self.layers,
            chunk_factor: self.chunk_factor,
            tied: self.tied,
            supervision: self.supervision_mode,
            supervision_layer: self.supervision_layer,
            tau: self.tau,
            lookback: self.lookback,
        }
    }

    /// Canonical `key = value` text; parsing it gives the same config back.
    pub fn to_text(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("model", self.model.to_string()),
            ("embed_size", self.embed_size.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("layers", self.layers.to_string()),
            ("chunk_factor", self.chunk_factor.to_string()),
            ("tied", self.tied.to_string()),
            ("tau", self.tau.to_string()),
            ("lookback", self.lookback.to_string()),
            ("alpha", self.alpha.to_string()),
            ("supervision_mode", self.supervision_mode.to_string()),
            ("tree_source", self.tree_source.to_string()),
            ("supervision_layer", self.supervision_layer.to_string()),
            ("pair_mode", self.pair_mode.to_string()),
            ("bptt", self.bptt.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_batch_size", self.eval_batch_size.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("patience", self.patience.to_string()),
            ("clip", self.clip.to_string()),
            ("averaging", self.averaging.to_string()),
            ("average_start", self.average_start.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("dropout_word", self.dropout_word.to_string()),
            ("dropout_recurrent", self.dropout_recurrent.to_string()),
            ("dropout_inter", self.dropout_inter.to_string()),
            ("dropout_output", self.dropout_output.to_string()),
            ("dropout_embedding", self.dropout_embedding.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{} = {}\n", k, v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!(c.alpha, 0.75);
        assert_eq!(c.supervision_layer, 3);
        assert_eq!(
            (c.dropout_word, c.dropout_recurrent, c.dropout_inter, c.dropout_output, c.dropout_embedding),
            (0.5, 0.45, 0.3, 0.45, 0.125)
        );
        assert_eq!((c.embed_size, c.hidden_size, c.layers), (400, 1150, 3));
        c.validate().unwrap();
    }

    #[test]
    fn parse_and_round_trip() {
        let c = TrainConfig::parse("alpha = 0.5 # ratio\n\nhidden_size=32\n supervision_mode = one-set-of-trees").unwrap();
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.hidden_size, 32);
        assert_eq!(c.supervision_mode, SupervisionMode::OneSetOfTrees);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn mode_and_source_must_agree() {
        assert!(matches!(
            TrainConfig::parse("supervision_mode = none"),
            Err(Error::Config(_))
        ));
        assert!(TrainConfig::parse("tree_source = none").is_err());
        TrainConfig::parse("supervision_mode = none\ntree_source = none").unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("alpha = -1").is_err());
        assert!(TrainConfig::parse("nonsense = 3").is_err());
        assert!(TrainConfig::parse("just words").is_err());
        assert!(TrainConfig::parse("dropout_word = 1.0").is_err());
        let mut c = TrainConfig::default();
        assert!(c.apply_overrides(&["lr"]).is_err());
        c.apply_overrides(&["lr=1.5", "epochs = 3"]).unwrap();
        assert_eq!((c.lr, c.epochs), (1.5, 3));
    }
}
