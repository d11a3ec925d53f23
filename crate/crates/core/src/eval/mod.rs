//! Language-model and structure metrics, tree induction from model
//! distances, and ASCII rendering.

mod render;
mod structure;

pub use render::{render_ascii, render_stacked};
pub use structure::*;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::distance::{distances_to_tree_biased, distances_to_tree_unbiased, Convention};
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::training::{bptt_batches, ranking_counts};
use crate::treebank::{BinaryTree, Corpus, CorpusMode};

// small evaluation sets get fewer columns rather than an error
fn eval_columns(corpus: &Corpus, batch_size: usize) -> usize {
    let cap = match corpus.mode {
        CorpusMode::Concatenated => corpus.tokens.len() / 2,
        CorpusMode::SeparateSentence => corpus.n_sentences(),
    };
    batch_size.min(cap).max(1)
}

/// Summed negative log-likelihood (nats) and the number of scored tokens.
pub fn nll(model: &LanguageModel, corpus: &Corpus, batch_size: usize, bptt: usize) -> Result<(f64, usize)> {
    if corpus.vocab.len() != model.config().vocab_size {
        return Err(Error::Data(format!(
            "corpus vocabulary {} does not match model vocabulary {}",
            corpus.vocab.len(),
            model.config().vocab_size
        )));
    }
    let none = vec![None; corpus.n_sentences()];
    let batches = bptt_batches(corpus, &none, eval_columns(corpus, batch_size), bptt)?;
    let (mut total, mut count) = (0.0, 0usize);
    let mut state = None;
    for b in &batches {
        let init = match state.take() {
            Some(s) if !b.reset => s,
            _ => model.init_state(b.batch),
        };
        let mut g = Graph::new();
        let bound = model.params().bind(&mut g);
        let out = model.forward(&mut g, &bound, &b.inputs, b.steps, b.batch, &init, None)?;
        state = Some(out.state);
        let targets: Vec<usize> = b.targets.iter().map(|&t| t as usize).collect();
        let ce = g.cross_entropy(out.logits, &targets)?;
        for (v, keep) in g.value(ce).data().iter().zip(&b.target_mask) {
            if *keep {
                total += v;
                count += 1;
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("evaluation NLL is {}", total)));
    }
    Ok((total, count))
}

/// `exp` of the mean NLL per predicted token, dropout off. In concatenated
/// corpora the eos tokens are predicted and scored.
pub fn perplexity(model: &LanguageModel, corpus: &Corpus, batch_size: usize, bptt: usize) -> Result<f64> {
    let (total, count) = nll(model, corpus, batch_size, bptt)?;
    if count == 0 {
        return Err(Error::Data("no tokens to score".into()));
    }
    Ok((total / count as f64).exp())
}

/// Sentences of at most `max_len` tokens (the WSJ10 convention for 10).
pub fn length_filter(corpus: &Corpus, max_len: usize) -> Result<Corpus> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    Ok(corpus.filter_sentences(|_, s| s.len() <= max_len))
}

/// Which distances a tree is induced from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceStream {
    /// Master-forget distances of a 1-based layer.
    Lm(usize),
    Syd,
}

impl fmt::Display for DistanceStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceStream::Lm(l) => write!(f, "lm{}", l),
            DistanceStream::Syd => f.write_str("syd"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeAlgo {
    Biased,
    Unbiased,
}

impl FromStr for TreeAlgo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(TreeAlgo::Biased),
            "unbiased" => Ok(TreeAlgo::Unbiased),
            _ => Err(Error::Config(format!("unknown tree algorithm {:?}", s))),
        }
    }
}

impl fmt::Display for TreeAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeAlgo::Biased => "biased",
            TreeAlgo::Unbiased => "unbiased",
        })
    }
}

/// Slot distances of sentence `i` on `stream`, or `None` when the model has
/// no such stream.
pub fn stream_distances(
    model: &LanguageModel,
    ids: &[u32],
    stream: DistanceStream,
) -> Result<Option<Vec<f64>>> {
    let d = model.sentence_distances(ids)?;
    Ok(match stream {
        DistanceStream::Syd => d.syd,
        DistanceStream::Lm(l) => {
            if l == 0 || l > d.lm.len() {
                return Err(Error::Config(format!("layer {} outside 1..={}", l, d.lm.len())));
            }
            Some(d.lm[l - 1].clone())
        }
    })
}

pub fn decode(d: &[f64], words: &[String], algo: TreeAlgo) -> Result<BinaryTree> {
    match algo {
        TreeAlgo::Unbiased => distances_to_tree_unbiased(d, words),
        TreeAlgo::Biased => distances_to_tree_biased(d, words, Convention::Slot),
    }
}

/// One induced tree per sentence, in corpus order. Errors when the model
/// lacks the requested stream.
pub fn induce_trees(
    model: &LanguageModel,
    corpus: &Corpus,
    stream: DistanceStream,
    algo: TreeAlgo,
) -> Result<Vec<BinaryTree>> {
    (0..corpus.n_sentences())
        .into_par_iter()
        .map(|i| {
            let d = stream_distances(model, corpus.sentence(i), stream)?
                .ok_or_else(|| Error::Config(format!("model has no {} distance stream", stream)))?;
            decode(&d, &corpus.sentence_words(i), algo)
        })
        .collect()
}

/// Gold-pair ranking accuracy of `stream` read in context: the corpus runs
/// as in training (state carried across windows, dropout off) and pairs are
/// formed within each sentence and window. `None` when the stream is absent
/// or no strictly ordered pair exists.
pub fn stream_ranking_accuracy(
    model: &LanguageModel,
    corpus: &Corpus,
    targets: &[Option<Vec<f64>>],
    stream: DistanceStream,
    batch_size: usize,
    bptt: usize,
) -> Result<Option<f64>> {
    if stream == DistanceStream::Syd && !model.config().has_syd() {
        return Ok(None);
    }
    let batches = bptt_batches(corpus, targets, eval_columns(corpus, batch_size), bptt)?;
    let (mut correct, mut total) = (0, 0);
    let mut state = None;
    for b in &batches {
        let init = match state.take() {
            Some(s) if !b.reset => s,
            _ => model.init_state(b.batch),
        };
        let mut g = Graph::new();
        let bound = model.params().bind(&mut g);
        let out = model.forward(&mut g, &bound, &b.inputs, b.steps, b.batch, &init, None)?;
        state = Some(out.state);
        let d = match stream {
            DistanceStream::Syd => out.d_syd,
            DistanceStream::Lm(l) => {
                if l == 0 || l > out.d_lm.len() {
                    return Err(Error::Config(format!("layer {} outside 1..={}", l, out.d_lm.len())));
                }
                Some(out.d_lm[l - 1])
            }
        };
        if let Some(d) = d {
            let (c, t) = ranking_counts(g.value(d).data(), &b.gold, &b.gold_mask, &b.group);
            correct += c;
            total += t;
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Gold-pair ranking accuracy of `stream` over every sentence with a
/// target; `None` when the stream is absent or no strictly ordered pair
/// exists.
pub fn corpus_ranking_accuracy(
    model: &LanguageModel,
    corpus: &Corpus,
    targets: &[Option<Vec<f64>>],
    stream: DistanceStream,
) -> Result<Option<f64>> {
    if stream == DistanceStream::Syd && !model.config().has_syd() {
        return Ok(None);
    }
    let counts: Vec<(usize, usize)> = (0..corpus.n_sentences())
        .into_par_iter()
        .map(|i| {
            let gold = match &targets[i] {
                Some(t) if t.len() >= 2 => t,
                _ => return Ok((0, 0)),
            };
            let d = match stream_distances(model, corpus.sentence(i), stream)? {
                Some(d) => d,
                None => return Ok((0, 0)),
            };
            let mask = vec![true; gold.len()];
            let group = vec![0; gold.len()];
            Ok(ranking_counts(&d, gold, &mask, &group))
        })
        .collect::<Result<_>>()?;
    let (c, t) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((t > 0).then(|| c as f64 / t as f64))
}
