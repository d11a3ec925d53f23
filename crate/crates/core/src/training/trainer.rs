use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::batches::{bptt_batches, epoch_order, supervision_targets, Batch};
use super::config::{OptimizerKind, TrainConfig, TreeSource};
use super::losses::{joint_loss_var, lm_loss, RankPairs};
use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::eval::{perplexity, stream_ranking_accuracy, DistanceStream};
use crate::model::{LanguageModel, ModelRng, State};
use crate::treebank::Corpus;

/// First-order update rule over a whole parameter store.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd,
    Adam {
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        t: u64,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamStore) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: params.values().iter().map(|p| Tensor::zeros(p.shape())).collect(),
                v: params.values().iter().map(|p| Tensor::zeros(p.shape())).collect(),
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.values_mut().iter_mut().zip(grads) {
                    for (a, b) in p.data_mut().iter_mut().zip(g.data()) {
                        *a -= lr * b;
                    }
                }
            }
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t as i32);
                let c2 = 1.0 - B2.powi(*t as i32);
                for (k, (p, g)) in params.values_mut().iter_mut().zip(grads).enumerate() {
                    let (mk, vk) = (m[k].data_mut(), v[k].data_mut());
                    for (i, (a, &gr)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        mk[i] = B1 * mk[i] + (1.0 - B1) * gr;
                        vk[i] = B2 * vk[i] + (1.0 - B2) * gr * gr;
                        *a -= lr * (mk[i] / c1) / ((vk[i] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean LM loss (nats per token) over the epoch's windows.
    pub train_lm: f64,
    /// Mean ranking loss over windows with supervised pairs.
    pub train_syd: Option<f64>,
    pub valid_ppl: f64,
    /// Gold-pair ranking accuracy of the supervised stream on validation data,
    /// read in context like the perplexity.
    pub valid_rank_acc: Option<f64>,
    pub wall_secs: f64,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: LanguageModel,
    /// Parameters after the last epoch (averaged when averaging is on).
    pub last: ParamStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn numeric_context(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {}, step {}: {}", epoch, step, m)),
        e => e,
    }
}

/// The distance stream a run supervises (and reports ranking accuracy for).
pub fn supervised_stream(model: &LanguageModel) -> DistanceStream {
    if model.config().has_syd() {
        DistanceStream::Syd
    } else {
        DistanceStream::Lm(model.config().supervision_layer.clamp(1, model.config().n_layers))
    }
}

/// Trains `model` on `train`, validating on `valid` (or on `train` when none
/// is given). `on_epoch` sees each log line as soon as it exists.
pub fn train(
    mut model: LanguageModel,
    train: &Corpus,
    valid: Option<&Corpus>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config().vocab_size != train.vocab.len() {
        return Err(Error::Data(format!(
            "model vocabulary {} does not match corpus vocabulary {}",
            model.config().vocab_size,
            train.vocab.len()
        )));
    }
    let valid = valid.unwrap_or(train);
    let targets = supervision_targets(train, cfg.tree_source, cfg.seed);
    let batches = bptt_batches(train, &targets, cfg.batch_size, cfg.bptt)?;
    let supervise = model.config().has_syd() && cfg.alpha > 0.0 && cfg.tree_source != TreeSource::None;
    let pairs: Vec<RankPairs> = batches
        .iter()
        .map(|b| RankPairs::build(&b.gold, &b.gold_mask, &b.group, cfg.pair_mode))
        .collect();
    let gold_valid = supervision_targets(valid, TreeSource::Gold, 0);
    let stream = supervised_stream(&model);

    let mut rng = ModelRng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut opt = Optimizer::new(cfg.optimizer, model.params());
    let dropouts = cfg.dropouts();
    let mut lr = cfg.lr;
    let mut avg: Option<(ParamStore, u64)> = None;
    let mut best: Option<(f64, ParamStore, usize)> = None;
    let mut bad_epochs = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let mut state: Option<State> = None;
        let (mut lm_sum, mut lm_n) = (0.0, 0usize);
        let (mut syd_sum, mut syd_n) = (0.0, 0usize);
        for (step, &bi) in epoch_order(&batches, cfg.seed, epoch).iter().enumerate() {
            let b: &Batch = &batches[bi];
            let init = match state.take() {
                Some(s) if !b.reset => s,
                _ => model.init_state(b.batch),
            };
            let mut g = Graph::new();
            let bound = model.params().bind(&mut g);
            let out = model
                .forward(&mut g, &bound, &b.inputs, b.steps, b.batch, &init, Some((&dropouts, &mut rng)))
                .map_err(|e| numeric_context(e, epoch, step))?;
            state = Some(out.state);
            let l_lm = lm_loss(&mut g, out.logits, &b.targets, &b.target_mask)?;
            let mut loss = l_lm;
            if let Some(d) = out.d_syd {
                if !pairs[bi].is_empty() {
                    syd_sum += pairs[bi].value(g.value(d).data());
                    syd_n += 1;
                    if supervise {
                        let l_syd = pairs[bi].loss(&mut g, d)?;
                        loss = joint_loss_var(&mut g, l_lm, l_syd, cfg.alpha)?;
                    }
                }
            }
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {}, step {}: loss is {}",
                    epoch, step, value
                )));
            }
            lm_sum += g.value(l_lm).item();
            lm_n += 1;
            let mut grads = g.backward(loss)?;
            let mut gs = model.params().collect_grads(&mut grads, &bound);
            let norm = clip_global_norm(&mut gs, cfg.clip);
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {}, step {}: gradient norm is {}",
                    epoch, step, norm
                )));
            }
            opt.step(model.params_mut(), &gs, lr);
            if cfg.averaging && epoch >= cfg.average_start {
                match &mut avg {
                    None => avg = Some((model.params().clone(), 1)),
                    Some((a, k)) => {
                        *k += 1;
                        let inv = 1.0 / *k as f64;
                        for (av, p) in a.values_mut().iter_mut().zip(model.params().values()) {
                            for (x, y) in av.data_mut().iter_mut().zip(p.data()) {
                                *x += (y - *x) * inv;
                            }
                        }
                    }
                }
            }
        }

        let mut eval_model = model.clone();
        if let Some((a, _)) = &avg {
            *eval_model.params_mut() = a.clone();
        }
        let at_validation = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("epoch {}, validation: {}", epoch, m)),
            e => e,
        };
        let valid_ppl = perplexity(&eval_model, valid, cfg.eval_batch_size, cfg.bptt).map_err(at_validation)?;
        let valid_rank_acc =
            stream_ranking_accuracy(&eval_model, valid, &gold_valid, stream, cfg.eval_batch_size, cfg.bptt)
                .map_err(at_validation)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_lm: lm_sum / lm_n.max(1) as f64,
            train_syd: (syd_n > 0).then(|| syd_sum / syd_n as f64),
            valid_ppl,
            valid_rank_acc,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry)?;
        log.push(entry);

        let improved = match &best {
            None => true,
            Some((b, _, _)) => valid_ppl < *b,
        };
        if improved {
            best = Some((valid_ppl, eval_model.params().clone(), epoch));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                lr *= cfg.lr_decay;
                bad_epochs = 0;
            }
        }
    }

    let last = match avg {
        Some((a, _)) => a,
        None => model.params().clone(),
    };
    let best_epoch = match best {
        Some((_, params, epoch)) => {
            *model.params_mut() = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model,
        last,
        log,
        best_epoch,
    })
}
