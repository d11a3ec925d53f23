use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::treebank::{BinaryTree, Tree};

pub type Span = (usize, usize);

/// Constituent spans of one sentence (half-open word ranges).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpanSet {
    pub spans: BTreeSet<Span>,
    /// `(start, end, label)` for every internal node, duplicates kept.
    pub labeled: Vec<(usize, usize, String)>,
    pub n_words: usize,
}

/// One span per internal node, single-word spans excluded. The whole-sentence
/// span is kept only when `keep_root` is set.
pub fn spans_of(tree: &Tree, keep_root: bool) -> SpanSet {
    fn go(t: &Tree, start: usize, out: &mut SpanSet) -> usize {
        match t {
            Tree::Leaf { .. } => start + 1,
            Tree::Node { label, children } => {
                let mut pos = start;
                for c in children {
                    pos = go(c, pos, out);
                }
                if pos - start > 1 {
                    out.spans.insert((start, pos));
                    out.labeled.push((start, pos, label.clone()));
                }
                pos
            }
        }
    }
    let mut out = SpanSet::default();
    out.n_words = go(tree, 0, &mut out);
    if !keep_root {
        let whole = (0, out.n_words);
        out.spans.remove(&whole);
        out.labeled.retain(|(s, e, _)| (*s, *e) != whole);
    }
    out
}

/// Unlabeled F1 in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    /// Counts pooled over the corpus.
    pub micro: f64,
    /// Mean of per-sentence F1.
    pub macro_: f64,
}

fn f1_from_counts(overlap: usize, n_pred: usize, n_gold: usize) -> f64 {
    if n_pred == 0 && n_gold == 0 {
        return 100.0;
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / n_pred as f64;
    let r = overlap as f64 / n_gold as f64;
    100.0 * 2.0 * p * r / (p + r)
}

/// Per-sentence overlap, predicted and gold span counts (F1 convention).
pub fn span_counts(pred: &Tree, gold: &Tree) -> (usize, usize, usize) {
    let p = spans_of(pred, false);
    let g = spans_of(gold, false);
    (p.spans.intersection(&g.spans).count(), p.spans.len(), g.spans.len())
}

fn check_aligned(pred: &[Tree], gold: &[Tree]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predicted trees vs {} gold trees",
            pred.len(),
            gold.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.n_leaves() != g.n_leaves() {
            return Err(Error::Data(format!(
                "sentence {}: predicted tree has {} leaves, gold has {}",
                i,
                p.n_leaves(),
                g.n_leaves()
            )));
        }
    }
    Ok(())
}

/// Unlabeled F1 ignoring single-word and whole-sentence spans.
pub fn unlabeled_f1(pred: &[Tree], gold: &[Tree]) -> Result<F1Scores> {
    check_aligned(pred, gold)?;
    if pred.is_empty() {
        return Ok(F1Scores {
            micro: 100.0,
            macro_: 100.0,
        });
    }
    let counts: Vec<(usize, usize, usize)> = pred
        .par_iter()
        .zip(gold.par_iter())
        .map(|(p, g)| span_counts(p, g))
        .collect();
    let (mut o, mut np, mut ng) = (0, 0, 0);
    let mut macro_sum = 0.0;
    for &(a, b, c) in &counts {
        o += a;
        np += b;
        ng += c;
        macro_sum += f1_from_counts(a, b, c);
    }
    Ok(F1Scores {
        micro: f1_from_counts(o, np, ng),
        macro_: macro_sum / counts.len() as f64,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub correct: usize,
    pub total: usize,
}

impl Rate {
    /// Percent; `None` when nothing was counted.
    pub fn percent(&self) -> Option<f64> {
        if self.total == 0 {
            None
        } else {
            Some(100.0 * self.correct as f64 / self.total as f64)
        }
    }
}

/// For each tag, how many multi-word gold constituents with that label have
/// their boundaries reproduced by the prediction (whole-sentence spans kept).
pub fn per_tag_accuracy(pred: &[Tree], gold: &[Tree], tags: &[&str]) -> Result<BTreeMap<String, Rate>> {
    check_aligned(pred, gold)?;
    let mut out: BTreeMap<String, Rate> = tags.iter().map(|t| (t.to_string(), Rate::default())).collect();
    for (p, g) in pred.iter().zip(gold) {
        let ps = spans_of(p, true);
        let gs = spans_of(g, true);
        for (s, e, label) in &gs.labeled {
            if let Some(rate) = out.get_mut(label) {
                rate.total += 1;
                if ps.spans.contains(&(*s, *e)) {
                    rate.correct += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Mean tree depth (edges on the longest root-to-leaf path) and the pooled
/// ratio of leaves that are non-rightmost children to rightmost children.
pub fn depth_and_ratio(trees: &[Tree]) -> (f64, Option<f64>) {
    fn count(t: &Tree, left: &mut usize, right: &mut usize) {
        if let Tree::Node { children, .. } = t {
            let last = children.len() - 1;
            for (i, c) in children.iter().enumerate() {
                if c.is_leaf() {
                    if i == last {
                        *right += 1;
                    } else {
                        *left += 1;
                    }
                } else {
                    count(c, left, right);
                }
            }
        }
    }
    if trees.is_empty() {
        return (0.0, None);
    }
    let (mut left, mut right) = (0, 0);
    let mut depth = 0usize;
    for t in trees {
        depth += t.depth();
        count(t, &mut left, &mut right);
    }
    let ratio = if right == 0 {
        None
    } else {
        Some(left as f64 / right as f64)
    };
    (depth as f64 / trees.len() as f64, ratio)
}

/// Predicted internal nodes (root excluded) bucketed by their height in the
/// predicted tree (leaves have height 1); a node is correct when its span is
/// a gold constituent.
pub fn accuracy_by_height(pred: &[Tree], gold: &[Tree]) -> Result<BTreeMap<u32, Rate>> {
    if pred.len() != gold.len() {
        return Err(Error::Data("predicted and gold lists differ in length".into()));
    }
    let mut out: BTreeMap<u32, Rate> = BTreeMap::new();
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.n_leaves() != g.n_leaves() {
            return Err(Error::Data(format!("sentence {}: leaf counts differ", i)));
        }
        let gold_spans: HashSet<Span> = spans_of(g, true).spans.into_iter().collect();
        // returns (end, height)
        fn walk(
            t: &Tree,
            start: usize,
            is_root: bool,
            gold: &HashSet<Span>,
            out: &mut BTreeMap<u32, Rate>,
        ) -> (usize, u32) {
            match t {
                Tree::Leaf { .. } => (start + 1, 1),
                Tree::Node { children, .. } => {
                    let (mut end, mut height) = (start, 0);
                    for c in children {
                        let (e, h) = walk(c, end, false, gold, out);
                        end = e;
                        height = height.max(h);
                    }
                    let height = height + 1;
                    if !is_root && end - start > 1 {
                        let r = out.entry(height).or_default();
                        r.total += 1;
                        if gold.contains(&(start, end)) {
                            r.correct += 1;
                        }
                    }
                    (end, height)
                }
            }
        }
        walk(p, 0, true, &gold_spans, &mut out);
    }
    Ok(out)
}

pub fn right_branching<S: AsRef<str>>(words: &[S]) -> BinaryTree {
    let mut it = words.iter().rev();
    let mut t = BinaryTree::leaf("X", it.next().expect("non-empty").as_ref());
    for w in it {
        t = BinaryTree::join("X", BinaryTree::leaf("X", w.as_ref()), t);
    }
    t
}

pub fn left_branching<S: AsRef<str>>(words: &[S]) -> BinaryTree {
    let mut it = words.iter();
    let mut t = BinaryTree::leaf("X", it.next().expect("non-empty").as_ref());
    for w in it {
        t = BinaryTree::join("X", t, BinaryTree::leaf("X", w.as_ref()));
    }
    t
}

/// Splits each span at its midpoint (left half gets the extra word).
pub fn balanced<S: AsRef<str>>(words: &[S]) -> BinaryTree {
    if words.len() == 1 {
        return BinaryTree::leaf("X", words[0].as_ref());
    }
    let mid = words.len().div_ceil(2);
    BinaryTree::join("X", balanced(&words[..mid]), balanced(&words[mid..]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagRow {
    pub tag: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightRow {
    pub height: u32,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Every structure number for one set of predicted trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub sentences: usize,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub per_tag: Vec<TagRow>,
    pub mean_depth: f64,
    pub left_right_ratio: Option<f64>,
    pub height_accuracy: Vec<HeightRow>,
}

pub const DEFAULT_TAGS: [&str; 4] = ["ADJP", "NP", "VP", "PP"];

impl StructureReport {
    pub fn compute(pred_trees: &[Tree], gold: &[Tree], tags: &[&str]) -> Result<Self> {
        let f1 = unlabeled_f1(&pred_trees, gold)?;
        let tags = per_tag_accuracy(&pred_trees, gold, tags)?;
        let (mean_depth, ratio) = depth_and_ratio(&pred_trees);
        let heights = accuracy_by_height(pred_trees, gold)?;
        Ok(StructureReport {
            sentences: pred_trees.len(),
            f1_micro: f1.micro,
            f1_macro: f1.macro_,
            per_tag: tags
                .into_iter()
                .map(|(tag, r)| TagRow {
                    tag,
                    correct: r.correct,
                    total: r.total,
                    accuracy: r.percent(),
                })
                .collect(),
            mean_depth,
            left_right_ratio: ratio,
            height_accuracy: heights
                .into_iter()
                .map(|(height, r)| HeightRow {
                    height,
                    correct: r.correct,
                    total: r.total,
                    accuracy: r.percent().unwrap_or(0.0),
                })
                .collect(),
        })
    }

    /// `series,key,correct,total,value` rows: one per height bucket and per tag.
    pub fn to_csv(&self, series: &str) -> String {
        let mut s = String::from("series,kind,key,correct,total,value\n");
        for h in &self.height_accuracy {
            s.push_str(&format!(
                "{},height,{},{},{},{:.4}\n",
                series, h.height, h.correct, h.total, h.accuracy
            ));
        }
        for t in &self.per_tag {
            s.push_str(&format!(
                "{},tag,{},{},{},{}\n",
                series,
                t.tag,
                t.correct,
                t.total,
                t.accuracy.map(|a| format!("{:.4}", a)).unwrap_or_default()
            ));
        }
        s
    }
}
