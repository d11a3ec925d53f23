//! Ordered-neurons LSTM: cumax master gates, the split supervised head and
//! the stacked language model built from them.

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Dropouts, ForwardOut, ModelConfig, ModelRng, State, SupervisionMode};
use crate::nn::{linear, locked_mask, rows};

use rand::Rng;

/// `D_m - Σ f̃`.
pub fn extract_distance(master_forget: &[f64]) -> f64 {
    master_forget.len() as f64 - master_forget.iter().sum::<f64>()
}

/// Row-wise distance of a `[batch, D_m]` master forget gate, shape `[batch]`.
pub fn distance_var(g: &mut Graph, master_forget: Var) -> Result<Var> {
    let dm = g.shape(master_forget)[1] as f64;
    let s = g.sum_axis(master_forget, 1)?;
    Ok(g.affine(s, -1.0, dm))
}

/// Split head over the shared pre-activation `h_f`: returns `(f̃, f̃^w, d^w)`.
pub fn syd_head(g: &mut Graph, hf_pre: Var, ws: Var, bs: Var) -> Result<(Var, Var, Var)> {
    let mf = g.cumax(hf_pre)?;
    let z = linear(g, hf_pre, ws, bs)?;
    let mfw = g.cumax(z)?;
    let dw = distance_var(g, mfw)?;
    Ok((mf, mfw, dw))
}

/// The gated cell update given plain gates and (already expanded) master gates:
/// returns `(f̂, î)`.
pub fn combine_gates(g: &mut Graph, f: Var, i: Var, mf: Var, mi: Var) -> Result<(Var, Var)> {
    let w = g.mul(mf, mi)?;
    let fw = g.mul(f, w)?;
    let mf_w = g.sub(mf, w)?;
    let fhat = g.add(fw, mf_w)?;
    let iw = g.mul(i, w)?;
    let mi_w = g.sub(mi, w)?;
    let ihat = g.add(iw, mi_w)?;
    Ok((fhat, ihat))
}

/// `[D_m, D_m * chunk]` 0/1 matrix repeating each master entry `chunk` times.
pub fn chunk_expander(dm: usize, chunk: usize) -> Tensor {
    let h = dm * chunk;
    let mut data = vec![0.0; dm * h];
    for k in 0..dm {
        for r in 0..chunk {
            data[k * h + k * chunk + r] = 1.0;
        }
    }
    Tensor::new(vec![dm, h], data).expect("expander shape")
}

/// Weights of one cell bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    /// `[in + H, 4H + 2 D_m]`, columns f, i, o, ĉ, f̃, ĩ.
    pub w: Var,
    pub b: Var,
    /// Split head `(W_s, b_s)`, when this is the supervised layer.
    pub head: Option<(Var, Var)>,
    /// Constant chunk expander, `None` when the chunk factor is 1.
    pub expand: Option<Var>,
    pub hidden: usize,
    pub dm: usize,
}

pub struct StepOutput {
    pub h: Var,
    pub c: Var,
    pub master_f: Var,
    pub master_i: Var,
    /// `[batch]`.
    pub d_lm: Var,
    pub d_syd: Option<Var>,
}

/// One ON-LSTM step over a `[batch, in]` input. `t` names the timestep in
/// errors.
pub fn onlstm_step(g: &mut Graph, x: Var, h: Var, c: Var, cell: &CellVars, t: usize) -> Result<StepOutput> {
    let (hd, dm) = (cell.hidden, cell.dm);
    let xh = g.concat(&[x, h], 1)?;
    let z = linear(g, xh, cell.w, cell.b)?;
    let gate = |g: &mut Graph, k: usize| g.slice(z, 1, k * hd, (k + 1) * hd);
    let f = gate(g, 0)?;
    let f = g.sigmoid(f);
    let i = gate(g, 1)?;
    let i = g.sigmoid(i);
    let o = gate(g, 2)?;
    let o = g.sigmoid(o);
    let u = gate(g, 3)?;
    let u = g.tanh(u);
    let hf = g.slice(z, 1, 4 * hd, 4 * hd + dm)?;
    let hi = g.slice(z, 1, 4 * hd + dm, 4 * hd + 2 * dm)?;

    let (master_f, d_syd) = match cell.head {
        Some((ws, bs)) => {
            let (mf, _, dw) = syd_head(g, hf, ws, bs)?;
            (mf, Some(dw))
        }
        None => (g.cumax(hf)?, None),
    };
    let ci = g.cumax(hi)?;
    let master_i = g.one_minus(ci);
    let d_lm = distance_var(g, master_f)?;

    let (mf, mi) = match cell.expand {
        Some(e) => (g.matmul(master_f, e)?, g.matmul(master_i, e)?),
        None => (master_f, master_i),
    };
    let (fhat, ihat) = combine_gates(g, f, i, mf, mi)?;
    let keep = g.mul(fhat, c)?;
    let write = g.mul(ihat, u)?;
    let c_new = g.add(keep, write)?;
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc)?;
    if !g.value(c_new).all_finite() || !g.value(h_new).all_finite() {
        return Err(Error::Numeric(format!("non-finite ON-LSTM state at timestep {}", t)));
    }
    Ok(StepOutput {
        h: h_new,
        c: c_new,
        master_f,
        master_i,
        d_lm,
        d_syd,
    })
}

#[derive(Clone, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
    hidden: usize,
    dm: usize,
}

/// Parameter handles of the stacked ON-LSTM language model.
#[derive(Clone, Debug)]
pub struct OnLstm {
    emb: ParamId,
    layers: Vec<Layer>,
    head: Option<(ParamId, ParamId)>,
    multitask: Option<(ParamId, ParamId)>,
    out_w: Option<ParamId>,
    out_b: ParamId,
    chunk: usize,
    supervision: SupervisionMode,
    /// 0-based supervised layer.
    sup: usize,
    vocab: usize,
    embed: usize,
}

impl OnLstm {
    pub fn new(cfg: &ModelConfig, ps: &mut ParamStore, seed: u64) -> Result<Self> {
        let sizes = cfg.layer_sizes();
        let chunk = cfg.chunk_factor;
        let emb = ps.add_uniform("emb", &[cfg.vocab_size, cfg.embed_size], 0.1, seed);
        let mut layers = Vec::new();
        let mut input = cfg.embed_size;
        for (l, &hidden) in sizes.iter().enumerate() {
            if hidden % chunk != 0 {
                return Err(Error::Config(format!(
                    "layer {} width {} is not divisible by chunk_factor {}",
                    l + 1,
                    hidden,
                    chunk
                )));
            }
            let dm = hidden / chunk;
            let cols = 4 * hidden + 2 * dm;
            let bound = 1.0 / (hidden as f64).sqrt();
            let w = ps.add_uniform(&format!("l{}.w", l), &[input + hidden, cols], bound, seed);
            let b = ps.add_zeros(&format!("l{}.b", l), &[cols]);
            layers.push(Layer {
                w,
                b,
                hidden,
                dm,
            });
            input = hidden;
        }
        let sup = cfg.supervision_layer.saturating_sub(1);
        let mut head = None;
        let mut multitask = None;
        match cfg.supervision {
            SupervisionMode::SplitHead => {
                let dm = layers[sup].dm;
                let ws = ps.add_uniform("syd.ws", &[dm, dm], 1.0 / (dm as f64).sqrt(), seed);
                let bs = ps.add_zeros("syd.bs", &[dm]);
                head = Some((ws, bs));
            }
            SupervisionMode::VanillaMultitask => {
                let h = layers[sup].hidden;
                let w = ps.add_uniform("mt.w", &[h, 1], 1.0 / (h as f64).sqrt(), seed);
                let b = ps.add_zeros("mt.b", &[1]);
                multitask = Some((w, b));
            }
            SupervisionMode::OneSetOfTrees | SupervisionMode::None => {}
        }
        let last = *sizes.last().expect("at least one layer");
        let out_w = if cfg.tied {
            None
        } else {
            Some(ps.add_uniform("out.w", &[last, cfg.vocab_size], 0.1, seed))
        };
        let out_b = ps.add_zeros("out.b", &[cfg.vocab_size]);
        Ok(OnLstm {
            emb,
            layers,
            head,
            multitask,
            out_w,
            out_b,
            chunk,
            supervision: cfg.supervision,
            sup,
            vocab: cfg.vocab_size,
            embed: cfg.embed_size,
        })
    }

    pub fn init_state(&self, batch: usize) -> State {
        State::Onlstm(
            self.layers
                .iter()
                .map(|l| (Tensor::zeros(&[batch, l.hidden]), Tensor::zeros(&[batch, l.hidden])))
                .collect(),
        )
    }

    /// Master-gate width per layer.
    pub fn master_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.dm).collect()
    }

    pub fn split_head_ids(&self) -> Option<(ParamId, ParamId)> {
        self.head
    }

    fn cell_vars(&self, g: &mut Graph, bound: &Bound, l: usize) -> CellVars {
        let layer = &self.layers[l];
        let expand = if self.chunk > 1 {
            Some(g.constant(chunk_expander(layer.dm, self.chunk)))
        } else {
            None
        };
        CellVars {
            w: bound.get(layer.w),
            b: bound.get(layer.b),
            head: if l == self.sup {
                self.head.map(|(a, b)| (bound.get(a), bound.get(b)))
            } else {
                None
            },
            expand,
            hidden: layer.hidden,
            dm: layer.dm,
        }
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
            State::Onlstm(s) if s.len() == self.layers.len() => s,
            _ => return Err(Error::shape("onlstm", "state does not match the layer stack")),
        };
        let n = steps * batch;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let emb = bound.get(self.emb);
        let mut x = g.embedding(emb, &idx)?;

        // Masks are drawn in a fixed order so runs are reproducible.
        if let Some((p, rng)) = dropout.as_mut() {
            let keep_e = 1.0 - p.embedding;
            let rows_keep: Vec<f64> = (0..self.vocab)
                .map(|_| {
                    if p.embedding <= 0.0 || rng.gen::<f64>() < keep_e {
                        1.0 / keep_e
                    } else {
                        0.0
                    }
                })
                .collect();
            let word = locked_mask(steps, batch, self.embed, p.word.max(0.0), *rng);
            let mut mask = word.into_data();
            for (r, &id) in idx.iter().enumerate() {
                for v in &mut mask[r * self.embed..(r + 1) * self.embed] {
                    *v *= rows_keep[id];
                }
            }
            x = g.mul_const(x, Tensor::new(vec![n, self.embed], mask)?)?;
        }

        let mut d_lm = Vec::with_capacity(self.layers.len());
        let mut d_syd = None;
        let mut final_state = Vec::with_capacity(self.layers.len());
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let cell = self.cell_vars(g, bound, l);
            let rec_mask = match dropout.as_mut() {
                Some((p, rng)) if p.recurrent > 0.0 => {
                    Some(locked_mask(1, batch, layer.hidden, p.recurrent, *rng))
                }
                _ => None,
            };
            let mut h = g.constant(init[l].0.clone());
            let mut c = g.constant(init[l].1.clone());
            let mut hs = Vec::with_capacity(steps);
            let mut ds = Vec::with_capacity(steps);
            let mut dws = Vec::with_capacity(steps);
            for t in 0..steps {
                let xt = rows(g, x, t * batch, (t + 1) * batch)?;
                let h_in = match &rec_mask {
                    Some(m) => g.mul_const(h, m.clone())?,
                    None => h,
                };
                let out = onlstm_step(g, xt, h_in, c, &cell, t)
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("{} (layer {})", m, l + 1)),
                        e => e,
                    })?;
                h = out.h;
                c = out.c;
                hs.push(h);
                ds.push(out.d_lm);
                if let Some(dw) = out.d_syd {
                    dws.push(dw);
                }
            }
            final_state.push((g.value(h).clone(), g.value(c).clone()));
            let layer_d = g.concat(&ds, 0)?;
            d_lm.push(layer_d);
            let mut out = g.concat(&hs, 0)?;
            if l == self.sup {
                d_syd = match self.supervision {
                    SupervisionMode::SplitHead => Some(g.concat(&dws, 0)?),
                    SupervisionMode::OneSetOfTrees => Some(layer_d),
                    SupervisionMode::VanillaMultitask => {
                        let (w, b) = self.multitask.expect("multitask head");
                        let y = linear(g, out, bound.get(w), bound.get(b))?;
                        Some(g.reshape(y, &[n])?)
                    }
                    SupervisionMode::None => None,
                };
            }
            if let Some((p, rng)) = dropout.as_mut() {
                let rate = if l + 1 == n_layers { p.output } else { p.inter_layer };
                if rate > 0.0 {
                    let m = locked_mask(steps, batch, layer.hidden, rate, *rng);
                    out = g.mul_const(out, m)?;
                }
            }
            x = out;
        }
        let w_out = match self.out_w {
            Some(w) => bound.get(w),
            None => g.transpose(emb)?,
        };
        let logits = linear(g, x, w_out, bound.get(self.out_b))?;
        Ok(ForwardOut {
            logits,
            d_lm,
            d_syd,
            state: State::Onlstm(final_state),
        })
    }
}
