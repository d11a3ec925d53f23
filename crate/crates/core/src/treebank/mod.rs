//! Treebank ingestion: bracketed reader, leaf pruning, right binarization,
//! vocabulary and the corpus builder that keeps gold trees aligned with the
//! cleaned token stream.

mod corpus;
mod parse;
mod tree;
mod vocab;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use corpus::{hex_digest, preprocess_corpus, Corpus, CorpusMode, PreprocessRules};
pub use parse::{parse_bracketed, strip_function_tags};
pub use tree::{BinaryTree, Tree};
pub use vocab::{Vocab, EOS, UNK};

use crate::error::{Error, Result};

/// Removes leaves for which `drop(tag, word)` holds, then any internal node
/// left without children. Unary chains are kept. `None` if nothing remains.
pub fn prune_leaves(tree: &Tree, drop: &impl Fn(&str, &str) -> bool) -> Option<Tree> {
    match tree {
        Tree::Leaf { tag, word } => {
            if drop(tag, word) {
                None
            } else {
                Some(tree.clone())
            }
        }
        Tree::Node { label, children } => {
            let kids: Vec<Tree> = children.iter().filter_map(|c| prune_leaves(c, drop)).collect();
            if kids.is_empty() {
                None
            } else {
                Some(Tree::Node {
                    label: label.clone(),
                    children: kids,
                })
            }
        }
    }
}

/// Label given to the intermediate nodes introduced by binarization.
pub fn sentinel_label(label: &str) -> String {
    if label.ends_with('\'') {
        label.to_string()
    } else {
        format!("{}'", label)
    }
}

/// Right-branching binarization. A node `(X c1 c2 .. ck)` with k > 2 becomes
/// `(X c1 (X' c2 .. ck))`, recursively; unary nodes collapse into their
/// child, which inherits the upper label when it is internal.
pub fn binarize_right(tree: &Tree) -> BinaryTree {
    match tree {
        Tree::Leaf { tag, word } => BinaryTree::leaf(tag.clone(), word.clone()),
        Tree::Node { label, children } => {
            if children.len() == 1 {
                return match binarize_right(&children[0]) {
                    BinaryTree::Node {
                        height,
                        left,
                        right,
                        ..
                    } => BinaryTree::Node {
                        label: label.clone(),
                        height,
                        left,
                        right,
                    },
                    leaf => leaf,
                };
            }
            let bins: Vec<BinaryTree> = children.iter().map(binarize_right).collect();
            nest_right(label, bins)
        }
    }
}

fn nest_right(label: &str, mut kids: Vec<BinaryTree>) -> BinaryTree {
    debug_assert!(kids.len() >= 2);
    if kids.len() == 2 {
        let right = kids.pop().unwrap();
        let left = kids.pop().unwrap();
        return BinaryTree::join(label, left, right);
    }
    let rest = kids.split_off(1);
    let first = kids.pop().unwrap();
    BinaryTree::join(label, first, nest_right(&sentinel_label(label), rest))
}

/// Random binary tree over `n_leaves` placeholder words `w0..`, choosing each
/// span's split point uniformly. Deterministic in `seed`.
pub fn random_binary_tree(n_leaves: usize, seed: u64) -> Result<BinaryTree> {
    let words: Vec<String> = (0..n_leaves).map(|i| format!("w{}", i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tree_over(&words, &mut rng)
}

/// Random binary tree over the given words, uniform split per span.
pub fn random_tree_over<R: Rng>(words: &[String], rng: &mut R) -> Result<BinaryTree> {
    if words.is_empty() {
        return Err(Error::Config("random tree needs at least one leaf".into()));
    }
    fn go<R: Rng>(words: &[String], rng: &mut R) -> BinaryTree {
        if words.len() == 1 {
            return BinaryTree::leaf("X", words[0].clone());
        }
        let split = rng.gen_range(1..words.len());
        let left = go(&words[..split], rng);
        let right = go(&words[split..], rng);
        BinaryTree::join("X", left, right)
    }
    Ok(go(words, rng))
}
