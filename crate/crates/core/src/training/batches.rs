use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TreeSource;
use crate::distance::tree_to_distances;
use crate::error::{Error, Result};
use crate::treebank::{random_tree_over, Corpus, CorpusMode};

/// One truncated-BPTT window, time-major (`index = t * batch + column`).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub steps: usize,
    pub batch: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    /// Targets that count towards the LM loss (false on padding).
    pub target_mask: Vec<bool>,
    /// Gold distance of the slot between the previous input and this one.
    pub gold: Vec<f64>,
    pub gold_mask: Vec<bool>,
    /// Ranking pairs are formed only within one group (column and sentence).
    pub group: Vec<usize>,
    /// Start from a fresh state instead of the previous window's.
    pub reset: bool,
}

impl Batch {
    pub fn n_supervised(&self) -> usize {
        self.gold_mask.iter().filter(|m| **m).count()
    }
}

/// Per-sentence slot distances from the chosen tree source.
pub fn supervision_targets(corpus: &Corpus, source: TreeSource, seed: u64) -> Vec<Option<Vec<f64>>> {
    (0..corpus.n_sentences())
        .map(|i| match source {
            TreeSource::None => None,
            TreeSource::Gold => corpus.gold_trees[i].as_ref().map(|t| tree_to_distances(t).values),
            TreeSource::Random => {
                let words = corpus.sentence_words(i);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                random_tree_over(&words, &mut rng)
                    .ok()
                    .map(|t| tree_to_distances(&t).values)
            }
        })
        .collect()
}

/// Per stream position: `(gold, masked-in, sentence index)` of the slot
/// that ends at that token.
fn slot_table(corpus: &Corpus, targets: &[Option<Vec<f64>>]) -> Vec<(f64, bool, usize)> {
    let mut table = vec![(0.0, false, usize::MAX); corpus.tokens.len()];
    for (s, &(start, end)) in corpus.spans.iter().enumerate() {
        for (p, slot) in table.iter_mut().enumerate().take(end).skip(start) {
            *slot = (0.0, false, s);
            if p > start {
                if let Some(d) = &targets[s] {
                    *slot = (d[p - start - 1], true, s);
                }
            }
        }
    }
    table
}

/// Splits a corpus into training windows. Concatenated corpora fold the
/// stream into `batch_size` columns (remainder dropped) and cut windows of
/// `bptt` steps; separate-sentence corpora give one sentence per column,
/// length-bucketed and padded, with a state reset per batch.
pub fn bptt_batches(
    corpus: &Corpus,
    targets: &[Option<Vec<f64>>],
    batch_size: usize,
    bptt: usize,
) -> Result<Vec<Batch>> {
    if targets.len() != corpus.n_sentences() {
        return Err(Error::Data("supervision targets do not match the sentences".into()));
    }
    if corpus.tokens.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    match corpus.mode {
        CorpusMode::Concatenated => concatenated(corpus, targets, batch_size, bptt),
        CorpusMode::SeparateSentence => separate(corpus, targets, batch_size),
    }
}

fn concatenated(corpus: &Corpus, targets: &[Option<Vec<f64>>], batch: usize, bptt: usize) -> Result<Vec<Batch>> {
    let total = corpus.tokens.len();
    if batch > total {
        return Err(Error::Data(format!(
            "batch size {} exceeds the {} tokens of the corpus",
            batch, total
        )));
    }
    let col_len = total / batch;
    if col_len < 2 {
        return Err(Error::Data(format!(
            "{} tokens in {} columns leave nothing to predict",
            total, batch
        )));
    }
    let table = slot_table(corpus, targets);
    let mut out = Vec::new();
    let mut start = 0;
    while start < col_len - 1 {
        let steps = bptt.min(col_len - 1 - start);
        let n = steps * batch;
        let mut b = Batch {
            steps,
            batch,
            inputs: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            target_mask: vec![true; n],
            gold: Vec::with_capacity(n),
            gold_mask: Vec::with_capacity(n),
            group: Vec::with_capacity(n),
            reset: start == 0,
        };
        for t in 0..steps {
            for col in 0..batch {
                let p = col * col_len + start + t;
                b.inputs.push(corpus.tokens[p]);
                b.targets.push(corpus.tokens[p + 1]);
                let (gd, m, s) = table[p];
                // the column's first window position has no left neighbour in view
                let in_view = p > col * col_len;
                b.gold.push(gd);
                b.gold_mask.push(m && in_view);
                b.group.push(s.wrapping_mul(batch).wrapping_add(col));
            }
        }
        out.push(b);
        start += steps;
    }
    Ok(out)
}

fn separate(corpus: &Corpus, targets: &[Option<Vec<f64>>], batch: usize) -> Result<Vec<Batch>> {
    if batch > corpus.n_sentences() {
        return Err(Error::Data(format!(
            "batch size {} exceeds the {} sentences of the corpus",
            batch,
            corpus.n_sentences()
        )));
    }
    let eos = corpus.vocab.eos_id();
    let mut order: Vec<usize> = (0..corpus.n_sentences()).collect();
    order.sort_by_key(|&i| (corpus.sentence(i).len(), i));
    let mut out = Vec::new();
    for chunk in order.chunks(batch) {
        let cols = chunk.len();
        let steps = chunk.iter().map(|&i| corpus.sentence(i).len()).max().unwrap_or(0);
        let n = steps * cols;
        let mut b = Batch {
            steps,
            batch: cols,
            inputs: vec![eos; n],
            targets: vec![eos; n],
            target_mask: vec![false; n],
            gold: vec![0.0; n],
            gold_mask: vec![false; n],
            group: vec![0; n],
            reset: true,
        };
        for (col, &s) in chunk.iter().enumerate() {
            let words = corpus.sentence(s);
            for (t, &w) in words.iter().enumerate() {
                let k = t * cols + col;
                b.inputs[k] = w;
                b.targets[k] = words.get(t + 1).copied().unwrap_or(eos);
                b.target_mask[k] = true;
                b.group[k] = s;
                if t > 0 {
                    if let Some(d) = &targets[s] {
                        b.gold[k] = d[t - 1];
                        b.gold_mask[k] = true;
                    }
                }
            }
        }
        out.push(b);
    }
    Ok(out)
}

/// Shuffles separate-sentence batches; concatenated order is kept because
/// state flows from one window to the next.
pub fn epoch_order(batches: &[Batch], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..batches.len()).collect();
    if batches.iter().all(|b| b.reset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5851_F42D_4C95_7F2D).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
    }
    order
}
