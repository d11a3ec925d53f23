//! Conversions between binary trees and syntactic-distance sequences.
//!
//! A sentence of N words has N-1 slots; slot t sits between word t and word
//! t+1 (0-based) and carries the height of the lowest node spanning both.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::treebank::BinaryTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Gold,
    ModelLm,
    ModelSyd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSeq {
    pub values: Vec<f64>,
    /// Supervised slots.
    pub mask: Vec<bool>,
    pub n_tokens: usize,
    pub provenance: Provenance,
}

impl DistanceSeq {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Self {
        let n = values.len() + 1;
        DistanceSeq {
            mask: vec![true; values.len()],
            values,
            n_tokens: n,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `N v_1 .. v_{N-1} m_1 .. m_{N-1}` on one line.
    pub fn to_line(&self) -> String {
        let mut s = self.n_tokens.to_string();
        for v in &self.values {
            write!(s, " {}", v).unwrap();
        }
        for m in &self.mask {
            s.push_str(if *m { " 1" } else { " 0" });
        }
        s
    }

    pub fn from_line(line: &str, provenance: Provenance) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("bad distance line {:?}: {}", line, m));
        let mut it = line.split_whitespace();
        let n: usize = it
            .next()
            .ok_or_else(|| bad("empty"))?
            .parse()
            .map_err(|_| bad("token count"))?;
        if n == 0 {
            return Err(bad("zero tokens"));
        }
        let rest: Vec<&str> = it.collect();
        if rest.len() != 2 * (n - 1) {
            return Err(bad("wrong field count"));
        }
        let values = rest[..n - 1]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>>>()?;
        let mask = rest[n - 1..]
            .iter()
            .map(|m| match *m {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(bad("mask bit")),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DistanceSeq {
            values,
            mask,
            n_tokens: n,
            provenance,
        })
    }
}

/// Gold distances: each slot gets the height of the node that splits there.
pub fn tree_to_distances(tree: &BinaryTree) -> DistanceSeq {
    fn walk(t: &BinaryTree, out: &mut Vec<f64>) {
        if let BinaryTree::Node {
            height, left, right, ..
        } = t
        {
            walk(left, out);
            out.push(*height as f64);
            walk(right, out);
        }
    }
    let mut values = Vec::with_capacity(tree.n_leaves().saturating_sub(1));
    walk(tree, &mut values);
    DistanceSeq::new(values, Provenance::Gold)
}

fn leaf_of(word: &str) -> BinaryTree {
    BinaryTree::leaf("X", word)
}

/// Top-down recovery: split each span at its largest slot. Ties go to the
/// rightmost maximal slot, so flat regions come out left-branching.
pub fn distances_to_tree_unbiased<S: AsRef<str>>(d: &[f64], leaves: &[S]) -> Result<BinaryTree> {
    check_lengths(d.len(), leaves.len())?;
    fn go<S: AsRef<str>>(d: &[f64], leaves: &[S]) -> BinaryTree {
        if leaves.len() == 1 {
            return leaf_of(leaves[0].as_ref());
        }
        let mut best = 0;
        for (i, v) in d.iter().enumerate() {
            if *v >= d[best] {
                best = i;
            }
        }
        let left = go(&d[..best], &leaves[..=best]);
        let right = go(&d[best + 1..], &leaves[best + 1..]);
        BinaryTree::join("X", left, right)
    }
    Ok(go(d, leaves))
}

/// How the biased decoder should read its distance input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    /// N-1 values, one per slot between adjacent words.
    Slot,
    /// N values, one per word; word i's value scores the boundary to its left.
    PerWord,
}

/// Greedy decoder with a right-branching bias: the word at the maximal
/// position (leftmost on ties) becomes the left sibling of the recursively
/// built remainder, `[build(left), [pivot, build(right)]]`.
pub fn distances_to_tree_biased<S: AsRef<str>>(
    d: &[f64],
    leaves: &[S],
    convention: Convention,
) -> Result<BinaryTree> {
    let per_word: Vec<f64> = match convention {
        Convention::Slot => {
            check_lengths(d.len(), leaves.len())?;
            std::iter::once(f64::NEG_INFINITY).chain(d.iter().copied()).collect()
        }
        Convention::PerWord => {
            if d.len() != leaves.len() {
                return Err(Error::Data(format!(
                    "{} per-word distances for {} words",
                    d.len(),
                    leaves.len()
                )));
            }
            if leaves.is_empty() {
                return Err(Error::Data("no words".into()));
            }
            d.to_vec()
        }
    };
    fn go<S: AsRef<str>>(d: &[f64], leaves: &[S]) -> BinaryTree {
        match leaves.len() {
            1 => return leaf_of(leaves[0].as_ref()),
            2 => {
                return BinaryTree::join("X", leaf_of(leaves[0].as_ref()), leaf_of(leaves[1].as_ref()))
            }
            _ => {}
        }
        let mut pivot = 0;
        for (i, v) in d.iter().enumerate() {
            if *v > d[pivot] {
                pivot = i;
            }
        }
        let mut right = leaf_of(leaves[pivot].as_ref());
        if pivot + 1 < leaves.len() {
            right = BinaryTree::join("X", right, go(&d[pivot + 1..], &leaves[pivot + 1..]));
        }
        if pivot == 0 {
            right
        } else {
            BinaryTree::join("X", go(&d[..pivot], &leaves[..pivot]), right)
        }
    }
    Ok(go(&per_word, leaves))
}

fn check_lengths(n_slots: usize, n_leaves: usize) -> Result<()> {
    if n_leaves == 0 || n_slots + 1 != n_leaves {
        return Err(Error::Data(format!(
            "{} distances for {} words (need words - 1)",
            n_slots, n_leaves
        )));
    }
    Ok(())
}

/// True iff every internal node's stored height is `max(children) + 1`
/// (which makes it strictly larger than both children).
pub fn validate_heights(tree: &BinaryTree) -> bool {
    match tree {
        BinaryTree::Leaf { .. } => true,
        BinaryTree::Node {
            height, left, right, ..
        } => {
            let (hl, hr) = (left.height(), right.height());
            *height == hl.max(hr) + 1
                && *height > hl
                && *height > hr
                && validate_heights(left)
                && validate_heights(right)
        }
    }
}

/// Every binary tree shape over `n` leaves (Catalan many), leaves named `w0..`.
pub fn all_shapes(n: usize) -> Vec<BinaryTree> {
    fn go(lo: usize, hi: usize) -> Vec<BinaryTree> {
        if hi - lo == 1 {
            return vec![BinaryTree::leaf("X", format!("w{}", lo))];
        }
        let mut out = Vec::new();
        for k in lo + 1..hi {
            let lefts = go(lo, k);
            let rights = go(k, hi);
            for l in &lefts {
                for r in &rights {
                    out.push(BinaryTree::join("X", l.clone(), r.clone()));
                }
            }
        }
        out
    }
    if n == 0 {
        return Vec::new();
    }
    go(0, n)
}
