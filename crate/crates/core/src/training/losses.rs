use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Which pairs of the ranking hinge are penalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// Only `i < j` terms `max(0, (1 - sign(g_i - g_j)) (w_i - w_j))`.
    AsWritten,
    /// The as-written terms plus the mirror image of every strictly ordered
    /// pair. Gold ties keep the single as-written term.
    Symmetric,
}

impl FromStr for PairMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(PairMode::AsWritten),
            "symmetric" => Ok(PairMode::Symmetric),
            _ => Err(Error::Config(format!("unknown pair mode {:?}", s))),
        }
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairMode::AsWritten => "as-written",
            PairMode::Symmetric => "symmetric",
        })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Hinge terms `(a, b, c)` meaning `max(0, c (w_a - w_b))`.
fn hinge_terms(gold: &[f64], mask: &[bool], group: &[usize], mode: PairMode) -> (Vec<(usize, usize, f64)>, usize) {
    let mut terms = Vec::new();
    let mut pairs = 0;
    for i in 0..gold.len() {
        if !mask[i] {
            continue;
        }
        for j in i + 1..gold.len() {
            if !mask[j] || group[i] != group[j] {
                continue;
            }
            pairs += 1;
            let c = 1.0 - sign(gold[i] - gold[j]);
            if c != 0.0 {
                terms.push((i, j, c));
            }
            if mode == PairMode::Symmetric && gold[i] != gold[j] {
                let c = 1.0 - sign(gold[j] - gold[i]);
                if c != 0.0 {
                    terms.push((j, i, c));
                }
            }
        }
    }
    (terms, pairs)
}

/// Summed ranking hinge over every masked-in pair of one sequence.
pub fn ranking_loss(d_w: &[f64], d_g: &[f64], mask: &[bool], mode: PairMode) -> Result<f64> {
    if d_w.len() != d_g.len() || d_w.len() != mask.len() {
        return Err(Error::shape(
            "ranking_loss",
            format!("lengths {} / {} / {}", d_w.len(), d_g.len(), mask.len()),
        ));
    }
    let group = vec![0; d_w.len()];
    let (terms, _) = hinge_terms(d_g, mask, &group, mode);
    Ok(terms.iter().map(|&(a, b, c)| (c * (d_w[a] - d_w[b])).max(0.0)).sum())
}

/// Precomputed hinge terms for a window; pairs never cross groups
/// (sentences).
#[derive(Clone, Debug)]
pub struct RankPairs {
    left: Vec<usize>,
    right: Vec<usize>,
    coef: Vec<f64>,
    /// Unordered masked-in pairs, the normalizer of the mean.
    pub n_pairs: usize,
}

impl RankPairs {
    pub fn build(gold: &[f64], mask: &[bool], group: &[usize], mode: PairMode) -> Self {
        let (terms, n_pairs) = hinge_terms(gold, mask, group, mode);
        RankPairs {
            left: terms.iter().map(|t| t.0).collect(),
            right: terms.iter().map(|t| t.1).collect(),
            coef: terms.iter().map(|t| t.2).collect(),
            n_pairs,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_pairs == 0
    }

    /// Mean hinge per pair, on the tape. `d` is flat and indexed like the
    /// arrays given to [`RankPairs::build`].
    pub fn loss(&self, g: &mut Graph, d: Var) -> Result<Var> {
        if self.left.is_empty() {
            let z = g.constant(Tensor::scalar(0.0));
            return Ok(z);
        }
        let a = g.take(d, &self.left)?;
        let b = g.take(d, &self.right)?;
        let diff = g.sub(a, b)?;
        let scaled = g.mul_const(diff, Tensor::vector(self.coef.clone()))?;
        let hinge = g.relu(scaled);
        let total = g.sum(hinge);
        Ok(g.affine(total, 1.0 / self.n_pairs as f64, 0.0))
    }

    /// Same number as [`RankPairs::loss`] from plain values.
    pub fn value(&self, d: &[f64]) -> f64 {
        if self.n_pairs == 0 {
            return 0.0;
        }
        let total: f64 = (0..self.left.len())
            .map(|k| (self.coef[k] * (d[self.left[k]] - d[self.right[k]])).max(0.0))
            .sum();
        total / self.n_pairs as f64
    }
}

/// Fraction of strictly ordered gold pairs (same group, both masked in) whose
/// predicted order agrees. `None` when there is no such pair.
pub fn ranking_accuracy(d: &[f64], gold: &[f64], mask: &[bool], group: &[usize]) -> Option<f64> {
    let (correct, total) = ranking_counts(d, gold, mask, group);
    (total > 0).then(|| correct as f64 / total as f64)
}

pub fn ranking_counts(d: &[f64], gold: &[f64], mask: &[bool], group: &[usize]) -> (usize, usize) {
    let (mut correct, mut total) = (0, 0);
    for i in 0..gold.len() {
        if !mask[i] {
            continue;
        }
        for j in i + 1..gold.len() {
            if !mask[j] || group[i] != group[j] || gold[i] == gold[j] {
                continue;
            }
            total += 1;
            if sign(d[i] - d[j]) == sign(gold[i] - gold[j]) {
                correct += 1;
            }
        }
    }
    (correct, total)
}

/// Mean cross-entropy over the targets whose `mask` entry is set.
pub fn lm_loss(g: &mut Graph, logits: Var, targets: &[u32], mask: &[bool]) -> Result<Var> {
    let idx: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let nll = g.cross_entropy(logits, &idx)?;
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::Data("no target tokens in batch".into()));
    }
    let kept = if count == mask.len() {
        nll
    } else {
        let m = Tensor::vector(mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect());
        g.mul_const(nll, m)?
    };
    let total = g.sum(kept);
    Ok(g.affine(total, 1.0 / count as f64, 0.0))
}

/// `l_lm + α l_syd`.
pub fn joint_loss(l_lm: f64, l_syd: f64, alpha: f64) -> f64 {
    l_lm + alpha * l_syd
}

pub fn joint_loss_var(g: &mut Graph, l_lm: Var, l_syd: Var, alpha: f64) -> Result<Var> {
    let s = g.affine(l_syd, alpha, 0.0);
    g.add(l_lm, s)
}
