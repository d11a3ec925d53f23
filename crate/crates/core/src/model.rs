//! The model switchboard: which network, which supervision head, and the
//! common forward interface training and evaluation drive.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::onlstm::OnLstm;
use crate::prpn::{PrpnState, PrpnSyd};

/// Every dropout mask in the models draws from this generator.
pub type ModelRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionMode {
    /// Separate master-forget head sharing the pre-activation (the SYD model).
    SplitHead,
    /// Rank the LM master-forget distances directly.
    OneSetOfTrees,
    /// Linear regression head on the hidden state.
    VanillaMultitask,
    None,
}

impl FromStr for SupervisionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "split-head" => SupervisionMode::SplitHead,
            "one-set-of-trees" => SupervisionMode::OneSetOfTrees,
            "vanilla-multitask" => SupervisionMode::VanillaMultitask,
            "none" => SupervisionMode::None,
            _ => return Err(Error::Config(format!("unknown supervision mode {:?}", s))),
        })
    }
}

impl fmt::Display for SupervisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SupervisionMode::SplitHead => "split-head",
            SupervisionMode::OneSetOfTrees => "one-set-of-trees",
            SupervisionMode::VanillaMultitask => "vanilla-multitask",
            SupervisionMode::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Onlstm,
    PrpnSyd,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onlstm" | "onlstm-syd" => Ok(ModelKind::Onlstm),
            "prpn-syd" => Ok(ModelKind::PrpnSyd),
            _ => Err(Error::Config(format!("unknown model {:?}", s))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Onlstm => "onlstm",
            ModelKind::PrpnSyd => "prpn-syd",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub n_layers: usize,
    /// Master gates have `hidden / chunk_factor` entries.
    pub chunk_factor: usize,
    pub tied: bool,
    pub supervision: SupervisionMode,
    /// 1-based layer whose distances are supervised.
    pub supervision_layer: usize,
    /// PRPN relatedness temperature.
    pub tau: f64,
    /// PRPN convolution lookback.
    pub lookback: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Onlstm,
            vocab_size: 0,
            embed_size: 400,
            hidden_size: 1150,
            n_layers: 3,
            chunk_factor: 1,
            tied: true,
            supervision: SupervisionMode::SplitHead,
            supervision_layer: 3,
            tau: 10.0,
            lookback: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab size {} is too small", self.vocab_size));
        }
        if self.embed_size == 0 || self.hidden_size == 0 || self.n_layers == 0 {
            return bad("embed_size, hidden_size and n_layers must be positive".into());
        }
        if self.chunk_factor == 0 {
            return bad("chunk_factor must be positive".into());
        }
        if self.supervision != SupervisionMode::None
            && (self.supervision_layer == 0 || self.supervision_layer > self.n_layers)
        {
            return bad(format!(
                "supervision_layer {} outside 1..={}",
                self.supervision_layer, self.n_layers
            ));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.lookback == 0 {
            return bad("lookback must be at least 1".into());
        }
        Ok(())
    }

    /// Hidden width of each layer; with tying the last layer matches the embedding.
    pub fn layer_sizes(&self) -> Vec<usize> {
        (0..self.n_layers)
            .map(|l| {
                if self.tied && l + 1 == self.n_layers {
                    self.embed_size
                } else {
                    self.hidden_size
                }
            })
            .collect()
    }

    pub fn has_syd(&self) -> bool {
        self.supervision != SupervisionMode::None
    }
}

/// Dropout probabilities; all zero means a deterministic forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropouts {
    pub word: f64,
    pub recurrent: f64,
    pub inter_layer: f64,
    pub output: f64,
    pub embedding: f64,
}

impl Dropouts {
    pub fn none() -> Self {
        Dropouts {
            word: 0.0,
            recurrent: 0.0,
            inter_layer: 0.0,
            output: 0.0,
            embedding: 0.0,
        }
    }
}

impl Default for Dropouts {
    fn default() -> Self {
        Dropouts {
            word: 0.5,
            recurrent: 0.45,
            inter_layer: 0.3,
            output: 0.45,
            embedding: 0.125,
        }
    }
}

/// Recurrent state carried between windows, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    /// `(h, c)` per layer, each `[batch, hidden]`.
    Onlstm(Vec<(Tensor, Tensor)>),
    Prpn(Vec<PrpnState>),
}

/// Output of one forward pass over a `steps x batch` window. Distances are
/// flat `[steps * batch]`, time-major, aligned with the input ids: the value
/// at the step reading `x_t` belongs to the slot between `x_{t-1}` and `x_t`.
pub struct ForwardOut {
    /// `[steps * batch, vocab]`.
    pub logits: Var,
    pub d_lm: Vec<Var>,
    pub d_syd: Option<Var>,
    pub state: State,
}

#[derive(Clone, Debug)]
enum Net {
    Onlstm(OnLstm),
    Prpn(PrpnSyd),
}

/// A language model with its parameters.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    config: ModelConfig,
    params: ParamStore,
    net: Net,
}

/// Per-slot distances of one sentence (`n - 1` values for `n` words).
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceDistances {
    pub lm: Vec<Vec<f64>>,
    pub syd: Option<Vec<f64>>,
}

impl LanguageModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let net = match config.kind {
            ModelKind::Onlstm => Net::Onlstm(OnLstm::new(&config, &mut params, seed)?),
            ModelKind::PrpnSyd => Net::Prpn(PrpnSyd::new(&config, &mut params, seed)?),
        };
        Ok(LanguageModel {
            config,
            params,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn onlstm(&self) -> Option<&OnLstm> {
        match &self.net {
            Net::Onlstm(m) => Some(m),
            Net::Prpn(_) => None,
        }
    }

    pub fn init_state(&self, batch: usize) -> State {
        match &self.net {
            Net::Onlstm(m) => m.init_state(batch),
            Net::Prpn(m) => m.init_state(batch),
        }
    }

    /// Runs `ids` (time-major, `steps * batch`) from `state`. Dropout is
    /// applied only when `dropout` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ids: &[u32],
        steps: usize,
        batch: usize,
        state: &State,
        dropout: Option<(&Dropouts, &mut ModelRng)>,
    ) -> Result<ForwardOut> {
        if ids.len() != steps * batch {
            return Err(Error::shape(
                "forward",
                format!("{} ids for {} steps x {} columns", ids.len(), steps, batch),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Data(format!(
                "token id {} outside vocabulary of {}",
                bad, self.config.vocab_size
            )));
        }
        match &self.net {
            Net::Onlstm(m) => m.forward(g, bound, ids, steps, batch, state, dropout),
            Net::Prpn(m) => m.forward(g, bound, ids, steps, batch, state, dropout),
        }
    }

    /// Distances for one sentence from a fresh state, no dropout.
    pub fn sentence_distances(&self, ids: &[u32]) -> Result<SentenceDistances> {
        let n = ids.len();
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let out = self.forward(&mut g, &bound, ids, n, 1, &self.init_state(1), None)?;
        let tail = |v: Var, g: &Graph| g.value(v).data()[1..].to_vec();
        Ok(SentenceDistances {
            lm: out.d_lm.iter().map(|&v| tail(v, &g)).collect(),
            syd: out.d_syd.map(|v| tail(v, &g)),
        })
    }

    /// Checkpoint with `header` (free text, usually JSON) in front.
    pub fn save<W: Write>(&self, w: W, header: &str) -> Result<()> {
        self.params.write_checkpoint(w, header)
    }

    /// Rebuilds the model for `config` and loads parameters from a checkpoint.
    /// Returns the stored header.
    pub fn load<R: Read>(config: ModelConfig, r: R) -> Result<(Self, String)> {
        let mut model = LanguageModel::new(config, 0)?;
        let (store, header) = ParamStore::read_checkpoint(r)?;
        if store.names() != model.params.names() {
            return Err(Error::Data(format!(
                "checkpoint parameters {:?} do not match the model's {:?}",
                store.names(),
                model.params.names()
            )));
        }
        for (dst, src) in model.params.values_mut().iter_mut().zip(store.values()) {
            if dst.shape() != src.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor shape {:?} vs model {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok((model, header))
    }
}
