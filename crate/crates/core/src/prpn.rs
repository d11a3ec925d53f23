//! Parsing-reading-predict network. The parsing side turns per-word distances
//! into soft sibling gates that truncate the reading network's attention; the
//! SYD variant computes two distance streams from a unidirectional encoder.

use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Dropouts, ForwardOut, ModelConfig, ModelRng, State, SupervisionMode};
use crate::nn::{linear, lstm_step, rows};

/// `(hardtanh((d_t - d_j) τ) + 1) / 2`.
pub fn relatedness_alpha(d_t: f64, d_j: f64, tau: f64) -> f64 {
    (((d_t - d_j) * tau).clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// Gates `g_i = Π_{j=i+1}^{t-1} α_j` for `i = 0..t` given `α_0..α_{t-1}`.
pub fn parsing_gates(alphas: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0; alphas.len()];
    for i in (0..alphas.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * alphas[i + 1];
    }
    out
}

/// `s_i = g_i z_i / Σ g`; when every gate is zero, all weight goes to the
/// most recent position.
pub fn gated_attention(gates: &[f64], z: &[f64]) -> Vec<f64> {
    let total: f64 = gates.iter().sum();
    if total <= 0.0 {
        let mut s = vec![0.0; z.len()];
        if let Some(last) = s.last_mut() {
            *last = 1.0;
        }
        return s;
    }
    gates.iter().zip(z).map(|(g, z)| g * z / total).collect()
}

/// Relatedness of `d_t` (shape `[1]`) to each of `d_past` (shape `[t]`).
pub fn alpha_var(g: &mut Graph, d_t: Var, d_past: Var, tau: f64) -> Result<Var> {
    let diff = g.sub(d_past, d_t)?;
    let scaled = g.affine(diff, -tau, 0.0);
    let ht = g.hardtanh(scaled);
    Ok(g.affine(ht, 0.5, 0.5))
}

/// Tape version of [`parsing_gates`] over a `[t]` vector of alphas.
pub fn parsing_gates_var(g: &mut Graph, alphas: Var) -> Result<Var> {
    let t = g.shape(alphas)[0];
    let one = g.constant(Tensor::ones(&[1]));
    if t == 1 {
        return Ok(one);
    }
    let row = g.reshape(alphas, &[1, t])?;
    let suffix = g.rev_cumprod(row)?;
    let suffix = g.reshape(suffix, &[t])?;
    let tail = g.slice(suffix, 0, 1, t)?;
    g.concat(&[tail, one], 0)
}

/// Tape version of [`gated_attention`], both inputs `[t]`.
pub fn gated_attention_var(g: &mut Graph, gates: Var, z: Var) -> Result<Var> {
    let t = g.shape(gates)[0];
    if g.value(gates).sum() <= 0.0 {
        let mut one_hot = vec![0.0; t];
        one_hot[t - 1] = 1.0;
        return Ok(g.constant(Tensor::vector(one_hot)));
    }
    let gz = g.mul(gates, z)?;
    let total = g.sum(gates);
    g.div(gz, total)
}

/// Conv-stack distances: `e` is `[T, E]`, `pad` the `[L, E]` boundary rows,
/// `wc` `[(L+1) E, C]`, `wd` `[C, 1]`. Returns `[T]`, all nonnegative.
pub fn prpn_distances(g: &mut Graph, e: Var, pad: Var, wc: Var, bc: Var, wd: Var, bd: Var) -> Result<Var> {
    let window = g.shape(pad)[0] + 1;
    let t = g.shape(e)[0];
    let x = g.concat(&[pad, e], 0)?;
    let h = g.causal_conv1d(x, wc, window)?;
    let h = g.add(h, bc)?;
    let h = g.relu(h);
    let d = linear(g, h, wd, bd)?;
    let d = g.relu(d);
    g.reshape(d, &[t])
}

/// Two-layer feed-forward head `Linear -> ReLU -> Linear` to one scalar per row.
#[derive(Clone, Copy, Debug)]
pub struct FfVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl FfVars {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let h = linear(g, x, self.w1, self.b1)?;
        let h = g.relu(h);
        let y = linear(g, h, self.w2, self.b2)?;
        g.reshape(y, &[n])
    }
}

/// Encoder weights bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub word_w: Var,
    pub word_b: Var,
    /// `[L, H]` learned rows standing in for positions before the sequence.
    pub pad: Var,
    pub conv_w: Var,
    pub conv_b: Var,
    pub dist_w: Var,
    pub dist_b: Var,
    pub ff_lm: FfVars,
    pub ff_syd: Option<FfVars>,
}

/// Recurrent carry of one sequence: word, distance and reading LSTMs.
#[derive(Clone, Debug, PartialEq)]
pub struct PrpnState {
    pub word: (Tensor, Tensor),
    pub dist: (Tensor, Tensor),
    pub read: (Tensor, Tensor),
}

impl PrpnState {
    pub fn zeros(hidden: usize) -> Self {
        let z = || (Tensor::zeros(&[1, hidden]), Tensor::zeros(&[1, hidden]));
        PrpnState {
            word: z(),
            dist: z(),
            read: z(),
        }
    }
}

fn run_lstm(
    g: &mut Graph,
    xs: Var,
    init: &(Tensor, Tensor),
    w: Var,
    b: Var,
) -> Result<(Var, (Tensor, Tensor))> {
    let t = g.shape(xs)[0];
    let mut h = g.constant(init.0.clone());
    let mut c = g.constant(init.1.clone());
    let mut hs = Vec::with_capacity(t);
    for i in 0..t {
        let x = rows(g, xs, i, i + 1)?;
        let (h2, c2) = lstm_step(g, x, h, c, w, b)?;
        h = h2;
        c = c2;
        hs.push(h);
    }
    let carry = (g.value(h).clone(), g.value(c).clone());
    Ok((g.concat(&hs, 0)?, carry))
}

/// Word LSTM, causal convolution over its outputs, distance LSTM and the two
/// feed-forward heads. `e` is one sequence `[T, E]`; nothing at position i
/// depends on inputs after i. Returns `(d_lm, d_syd, carried word and
/// distance states)`.
#[allow(clippy::type_complexity)]
pub fn prpn_syd_encoder(
    g: &mut Graph,
    e: Var,
    enc: &EncoderVars,
    state: &PrpnState,
) -> Result<(Var, Option<Var>, (Tensor, Tensor), (Tensor, Tensor))> {
    let (hw, word_carry) = run_lstm(g, e, &state.word, enc.word_w, enc.word_b)?;
    let window = g.shape(enc.pad)[0] + 1;
    let padded = g.concat(&[enc.pad, hw], 0)?;
    let conv = g.causal_conv1d(padded, enc.conv_w, window)?;
    let conv = g.add(conv, enc.conv_b)?;
    let conv = g.relu(conv);
    let (hd, dist_carry) = run_lstm(g, conv, &state.dist, enc.dist_w, enc.dist_b)?;
    let d_lm = enc.ff_lm.apply(g, hd)?;
    let d_syd = match &enc.ff_syd {
        Some(ff) => Some(ff.apply(g, hd)?),
        None => None,
    };
    Ok((d_lm, d_syd, word_carry, dist_carry))
}

#[derive(Clone, Copy, Debug)]
struct FfIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FfIds {
    fn new(ps: &mut ParamStore, name: &str, input: usize, hidden: usize, seed: u64) -> Self {
        FfIds {
            w1: ps.add_uniform(&format!("{}.w1", name), &[input, hidden], 1.0 / (input as f64).sqrt(), seed),
            b1: ps.add_zeros(&format!("{}.b1", name), &[hidden]),
            w2: ps.add_uniform(&format!("{}.w2", name), &[hidden, 1], 1.0 / (hidden as f64).sqrt(), seed),
            b2: ps.add_zeros(&format!("{}.b2", name), &[1]),
        }
    }

    fn bind(&self, b: &Bound) -> FfVars {
        FfVars {
            w1: b.get(self.w1),
            b1: b.get(self.b1),
            w2: b.get(self.w2),
            b2: b.get(self.b2),
        }
    }
}

/// PRPN-SYD language model. The reading network is an LSTM whose previous
/// state is an attention mixture over the window's past memories, with the
/// attention truncated by the parsing gates of `d_lm`; a linear head predicts
/// the next token from its output. Attention memories do not cross window
/// boundaries; the recurrent states do (detached).
#[derive(Clone, Debug)]
pub struct PrpnSyd {
    emb: ParamId,
    word: (ParamId, ParamId),
    pad: ParamId,
    conv: (ParamId, ParamId),
    dist: (ParamId, ParamId),
    ff_lm: FfIds,
    ff_syd: Option<FfIds>,
    multitask: Option<(ParamId, ParamId)>,
    read: (ParamId, ParamId),
    attn: ParamId,
    out_w: Option<ParamId>,
    out_b: ParamId,
    supervision: SupervisionMode,
    hidden: usize,
    embed: usize,
    vocab: usize,
    tau: f64,
}

impl PrpnSyd {
    pub fn new(cfg: &ModelConfig, ps: &mut ParamStore, seed: u64) -> Result<Self> {
        let (v, e, h, l) = (cfg.vocab_size, cfg.embed_size, cfg.hidden_size, cfg.lookback);
        if cfg.tied && e != h {
            return Err(Error::Config(format!(
                "prpn-syd ties the output to the embedding, which needs embed_size == hidden_size (got {} and {})",
                e, h
            )));
        }
        let r = 1.0 / (h as f64).sqrt();
        let emb = ps.add_uniform("emb", &[v, e], 0.1, seed);
        let word = (
            ps.add_uniform("enc.word.w", &[e + h, 4 * h], r, seed),
            ps.add_zeros("enc.word.b", &[4 * h]),
        );
        let pad = ps.add_uniform("enc.pad", &[l, h], 0.1, seed);
        let conv = (
            ps.add_uniform("enc.conv.w", &[(l + 1) * h, h], 1.0 / (((l + 1) * h) as f64).sqrt(), seed),
            ps.add_zeros("enc.conv.b", &[h]),
        );
        let dist = (
            ps.add_uniform("enc.dist.w", &[2 * h, 4 * h], r, seed),
            ps.add_zeros("enc.dist.b", &[4 * h]),
        );
        let ff_lm = FfIds::new(ps, "ff_lm", h, h, seed);
        let ff_syd = (cfg.supervision == SupervisionMode::SplitHead).then(|| FfIds::new(ps, "ff_syd", h, h, seed));
        let multitask = (cfg.supervision == SupervisionMode::VanillaMultitask)
            .then(|| (ps.add_uniform("mt.w", &[h, 1], r, seed), ps.add_zeros("mt.b", &[1])));
        let read = (
            ps.add_uniform("read.w", &[e + h, 4 * h], r, seed),
            ps.add_zeros("read.b", &[4 * h]),
        );
        let attn = ps.add_uniform("read.attn", &[e, h], 1.0 / (e as f64).sqrt(), seed);
        let out_w = (!cfg.tied).then(|| ps.add_uniform("out.w", &[h, v], 0.1, seed));
        let out_b = ps.add_zeros("out.b", &[v]);
        Ok(PrpnSyd {
            emb,
            word,
            pad,
            conv,
            dist,
            ff_lm,
            ff_syd,
            multitask,
            read,
            attn,
            out_w,
            out_b,
            supervision: cfg.supervision,
            hidden: h,
            embed: e,
            vocab: v,
            tau: cfg.tau,
        })
    }

    pub fn init_state(&self, batch: usize) -> State {
        State::Prpn((0..batch).map(|_| PrpnState::zeros(self.hidden)).collect())
    }

    pub fn encoder_vars(&self, b: &Bound) -> EncoderVars {
        EncoderVars {
            word_w: b.get(self.word.0),
            word_b: b.get(self.word.1),
            pad: b.get(self.pad),
            conv_w: b.get(self.conv.0),
            conv_b: b.get(self.conv.1),
            dist_w: b.get(self.dist.0),
            dist_b: b.get(self.dist.1),
            ff_lm: self.ff_lm.bind(b),
            ff_syd: self.ff_syd.map(|f| f.bind(b)),
        }
    }

    /// Reading network over one sequence; returns the `[T, H]` outputs.
    #[allow(clippy::too_many_arguments)]
    fn read(
        &self,
        g: &mut Graph,
        bound: &Bound,
        e: Var,
        d: Var,
        init: &(Tensor, Tensor),
    ) -> Result<(Var, (Tensor, Tensor))> {
        let t_len = g.shape(e)[0];
        let (w, b) = (bound.get(self.read.0), bound.get(self.read.1));
        let attn = bound.get(self.attn);
        let scale = 1.0 / (self.hidden as f64).sqrt();
        let mut hs: Vec<Var> = Vec::with_capacity(t_len);
        let mut cs: Vec<Var> = Vec::with_capacity(t_len);
        let mut h_prev = g.constant(init.0.clone());
        let mut c_prev = g.constant(init.1.clone());
        for t in 0..t_len {
            let x = rows(g, e, t, t + 1)?;
            let (h_mix, c_mix) = if t == 0 {
                (h_prev, c_prev)
            } else {
                let mem_h = g.concat(&hs, 0)?;
                let mem_c = g.concat(&cs, 0)?;
                let q = g.matmul(x, attn)?;
                let qt = g.transpose(q)?;
                let scores = g.matmul(mem_h, qt)?;
                let scores = g.reshape(scores, &[1, t])?;
                let scores = g.affine(scores, scale, 0.0);
                let z = g.softmax(scores)?;
                let z = g.reshape(z, &[t])?;
                let d_t = g.slice(d, 0, t, t + 1)?;
                let d_past = g.slice(d, 0, 0, t)?;
                let alphas = alpha_var(g, d_t, d_past, self.tau)?;
                let gates = parsing_gates_var(g, alphas)?;
                let s = gated_attention_var(g, gates, z)?;
                let s = g.reshape(s, &[1, t])?;
                (g.matmul(s, mem_h)?, g.matmul(s, mem_c)?)
            };
            let (h, c) = lstm_step(g, x, h_mix, c_mix, w, b)?;
            if !g.value(c).all_finite() || !g.value(h).all_finite() {
                return Err(Error::Numeric(format!("non-finite PRPN state at timestep {}", t)));
            }
            hs.push(h);
            cs.push(c);
            h_prev = h;
            c_prev = c;
        }
        let carry = (g.value(h_prev).clone(), g.value(c_prev).clone());
        Ok((g.concat(&hs, 0)?, carry))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ids: &[u32],
        steps: usize,
        batch: usize,
        state: &State,
        mut dropout: Option<(&Dropouts, &mut ModelRng)>,
    ) -> Result<ForwardOut> {
        let init = match state {
            State::Prpn(s) if s.len() == batch => s,
            _ => return Err(Error::shape("prpn", "state does not match the batch")),
        };
        let emb = bound.get(self.emb);
        let enc = self.encoder_vars(bound);
        let mut hs_cols = Vec::with_capacity(batch);
        let mut dl_cols = Vec::with_capacity(batch);
        let mut ds_cols = Vec::with_capacity(batch);
        let mut carry = Vec::with_capacity(batch);
        for col in 0..batch {
            let idx: Vec<usize> = (0..steps).map(|t| ids[t * batch + col] as usize).collect();
            let mut e = g.embedding(emb, &idx)?;
            if let Some((p, rng)) = dropout.as_mut() {
                let keep_e = 1.0 - p.embedding;
                let keep_w = 1.0 - p.word;
                let word: Vec<f64> = (0..self.embed)
                    .map(|_| if p.word <= 0.0 || rng.gen::<f64>() < keep_w { 1.0 / keep_w } else { 0.0 })
                    .collect();
                let mut mask = Vec::with_capacity(steps * self.embed);
                let mut row_keep = std::collections::BTreeMap::new();
                for &id in &idx {
                    let k = *row_keep.entry(id).or_insert_with(|| {
                        if p.embedding <= 0.0 || rng.gen::<f64>() < keep_e {
                            1.0 / keep_e
                        } else {
                            0.0
                        }
                    });
                    mask.extend(word.iter().map(|w| w * k));
                }
                e = g.mul_const(e, Tensor::new(vec![steps, self.embed], mask)?)?;
            }
            let (d_lm, d_syd, word_carry, dist_carry) = prpn_syd_encoder(g, e, &enc, &init[col])?;
            let (hs, read_carry) = self.read(g, bound, e, d_lm, &init[col].read)?;
            hs_cols.push(hs);
            dl_cols.push(d_lm);
            if let Some(d) = d_syd {
                ds_cols.push(d);
            }
            carry.push(PrpnState {
                word: word_carry,
                dist: dist_carry,
                read: read_carry,
            });
        }
        // columns are stacked column-major; gather them back to time-major
        let perm: Vec<usize> = (0..steps * batch)
            .map(|r| (r % batch) * steps + r / batch)
            .collect();
        let hs = g.concat(&hs_cols, 0)?;
        let mut hs = g.embedding(hs, &perm)?;
        let d_lm = g.concat(&dl_cols, 0)?;
        let d_lm = g.take(d_lm, &perm)?;
        let d_syd = match self.supervision {
            SupervisionMode::SplitHead => {
                let d = g.concat(&ds_cols, 0)?;
                Some(g.take(d, &perm)?)
            }
            SupervisionMode::OneSetOfTrees => Some(d_lm),
            SupervisionMode::VanillaMultitask => {
                let (w, b) = self.multitask.expect("multitask head");
                let y = linear(g, hs, bound.get(w), bound.get(b))?;
                Some(g.reshape(y, &[steps * batch])?)
            }
            SupervisionMode::None => None,
        };
        if let Some((p, rng)) = dropout.as_mut() {
            if p.output > 0.0 {
                let m = crate::nn::locked_mask(steps, batch, self.hidden, p.output, *rng);
                hs = g.mul_const(hs, m)?;
            }
        }
        let w_out = match self.out_w {
            Some(w) => bound.get(w),
            None => g.transpose(emb)?,
        };
        let logits = linear(g, hs, w_out, bound.get(self.out_b))?;
        debug_assert_eq!(g.shape(logits), &[steps * batch, self.vocab]);
        Ok(ForwardOut {
            logits,
            d_lm: vec![d_lm],
            d_syd,
            state: State::Prpn(carry),
        })
    }
}
