use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tree::{BinaryTree, Tree};
use super::vocab::{Vocab, EOS, UNK};
use super::{binarize_right, prune_leaves};
use crate::error::{Error, Result};

const CORPUS_MAGIC: &str = "SYDCORPUS";
const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusMode {
    /// One stream, each sentence followed by an end-of-sentence token.
    Concatenated,
    /// Sentences modeled independently, no end-of-sentence tokens in the stream.
    SeparateSentence,
}

impl std::str::FromStr for CorpusMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" | "concatenated" => Ok(CorpusMode::Concatenated),
            "sepsent" | "separate" | "separate-sentence" => Ok(CorpusMode::SeparateSentence),
            _ => Err(Error::Config(format!("unknown corpus mode {:?}", s))),
        }
    }
}

/// Cleaning rules applied to every sentence. Missing fields take defaults
/// when read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessRules {
    pub lowercase: bool,
    /// POS tags whose leaves are removed from both the stream and the trees.
    pub drop_tags: BTreeSet<String>,
    /// Words matching this pattern (after lowercasing) become `number_token`.
    pub number_pattern: String,
    pub number_token: String,
    /// Total vocabulary size including `<unk>` and `<eos>`.
    pub vocab_max_size: usize,
    pub mode: CorpusMode,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        PreprocessRules {
            lowercase: true,
            drop_tags: [".", ",", ":", "``", "''", "-LRB-", "-RRB-", "#", "$"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            number_pattern: r"^[+\-]?[0-9][0-9.,:/\-]*$".to_string(),
            number_token: "N".to_string(),
            vocab_max_size: 10_000,
            mode: CorpusMode::Concatenated,
        }
    }
}

/// Token stream with sentence spans and aligned gold trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub tokens: Vec<u32>,
    /// Half-open token ranges, one per sentence, excluding end-of-sentence tokens.
    pub spans: Vec<(usize, usize)>,
    /// Binarized gold tree per sentence; leaf i is token `spans[s].0 + i`.
    pub gold_trees: Vec<Option<BinaryTree>>,
    /// The cleaned n-ary gold tree (labels kept), for per-tag evaluation.
    pub labeled_trees: Vec<Option<Tree>>,
    pub vocab: Vocab,
    pub mode: CorpusMode,
}

impl Corpus {
    pub fn n_sentences(&self) -> usize {
        self.spans.len()
    }

    pub fn sentence(&self, i: usize) -> &[u32] {
        let (s, e) = self.spans[i];
        &self.tokens[s..e]
    }

    pub fn sentence_words(&self, i: usize) -> Vec<String> {
        self.sentence(i)
            .iter()
            .map(|&id| self.vocab.word(id).unwrap_or(UNK).to_string())
            .collect()
    }

    /// Keeps the sentences selected by `keep`, rebuilding the stream.
    pub fn filter_sentences(&self, keep: impl Fn(usize, &[u32]) -> bool) -> Corpus {
        let mut out = Corpus {
            tokens: Vec::new(),
            spans: Vec::new(),
            gold_trees: Vec::new(),
            labeled_trees: Vec::new(),
            vocab: self.vocab.clone(),
            mode: self.mode,
        };
        for i in 0..self.n_sentences() {
            let ids = self.sentence(i);
            if !keep(i, ids) {
                continue;
            }
            let start = out.tokens.len();
            out.tokens.extend_from_slice(ids);
            out.spans.push((start, out.tokens.len()));
            if self.mode == CorpusMode::Concatenated {
                out.tokens.push(self.vocab.eos_id());
            }
            out.gold_trees.push(self.gold_trees[i].clone());
            out.labeled_trees.push(self.labeled_trees[i].clone());
        }
        out
    }

    /// Checks the span/tree alignment invariants.
    pub fn validate(&self) -> Result<()> {
        if self.gold_trees.len() != self.spans.len() || self.labeled_trees.len() != self.spans.len() {
            return Err(Error::Data("per-sentence arrays disagree in length".into()));
        }
        let mut pos = 0;
        for (i, &(s, e)) in self.spans.iter().enumerate() {
            if s != pos || e <= s || e > self.tokens.len() {
                return Err(Error::Data(format!("sentence {} has a bad span ({}, {})", i, s, e)));
            }
            pos = e;
            if self.mode == CorpusMode::Concatenated {
                if self.tokens.get(e) != Some(&self.vocab.eos_id()) {
                    return Err(Error::Data(format!(
                        "sentence {} is not followed by an end-of-sentence token",
                        i
                    )));
                }
                pos += 1;
            }
            if let Some(t) = &self.gold_trees[i] {
                if t.n_leaves() != e - s {
                    return Err(Error::Data(format!(
                        "sentence {}: gold tree has {} leaves, span has {} tokens",
                        i,
                        t.n_leaves(),
                        e - s
                    )));
                }
            }
        }
        if pos != self.tokens.len() {
            return Err(Error::Data("spans do not cover the token stream".into()));
        }
        if let Some(&bad) = self.tokens.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(Error::Data(format!("token id {} outside vocabulary", bad)));
        }
        Ok(())
    }

    /// Magic line, version, then a single JSON document.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", CORPUS_MAGIC, CORPUS_VERSION)?;
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Corpus> {
        let mut first = String::new();
        r.read_line(&mut first)?;
        let mut parts = first.split_whitespace();
        if parts.next() != Some(CORPUS_MAGIC) {
            return Err(Error::Data("not a corpus file (bad magic header)".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Data("corpus header lacks a version".into()))?;
        if version != CORPUS_VERSION {
            return Err(Error::Data(format!("unsupported corpus version {}", version)));
        }
        let corpus: Corpus = serde_json::from_reader(r)?;
        corpus.validate()?;
        Ok(corpus)
    }

    /// SHA-256 over the serialized form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        hex_digest(&buf)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

struct Cleaner {
    rules: PreprocessRules,
    number: Regex,
}

impl Cleaner {
    fn new(rules: &PreprocessRules) -> Result<Self> {
        let number = Regex::new(&rules.number_pattern)
            .map_err(|e| Error::Config(format!("bad number pattern: {}", e)))?;
        Ok(Cleaner {
            rules: rules.clone(),
            number,
        })
    }

    fn word(&self, w: &str) -> String {
        let w = if self.rules.lowercase {
            w.to_lowercase()
        } else {
            w.to_string()
        };
        if self.number.is_match(&w) {
            self.rules.number_token.clone()
        } else {
            w
        }
    }

    /// Pruned tree with cleaned words, or `None` if no word survives.
    fn sentence(&self, tree: &Tree) -> Option<Tree> {
        let pruned = prune_leaves(tree, &|tag, _| self.rules.drop_tags.contains(tag))?;
        let words: Vec<String> = pruned.words().into_iter().map(|w| self.word(w)).collect();
        Some(pruned.with_words(&words))
    }
}

/// Cleans every tree, builds (or reuses) the vocabulary and lays out the
/// token stream with gold trees pruned in lockstep.
pub fn preprocess_corpus(
    trees: &[Tree],
    rules: &PreprocessRules,
    vocab: Option<Vocab>,
) -> Result<Corpus> {
    let cleaner = Cleaner::new(rules)?;
    let cleaned: Vec<Tree> = trees.iter().filter_map(|t| cleaner.sentence(t)).collect();

    let vocab = match vocab {
        Some(v) => {
            if v.word(v.unk_id()) != Some(UNK) || v.word(v.eos_id()) != Some(EOS) {
                return Err(Error::Config("supplied vocabulary lacks the special ids".into()));
            }
            v
        }
        None => {
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in &cleaned {
                for w in t.words() {
                    *counts.entry(w.to_string()).or_default() += 1;
                }
            }
            Vocab::from_counts(&counts, rules.vocab_max_size)?
        }
    };

    let mut corpus = Corpus {
        tokens: Vec::new(),
        spans: Vec::new(),
        gold_trees: Vec::new(),
        labeled_trees: Vec::new(),
        vocab,
        mode: rules.mode,
    };
    for t in cleaned {
        let start = corpus.tokens.len();
        corpus.tokens.extend(t.words().into_iter().map(|w| corpus.vocab.id(w)));
        corpus.spans.push((start, corpus.tokens.len()));
        if rules.mode == CorpusMode::Concatenated {
            corpus.tokens.push(corpus.vocab.eos_id());
        }
        corpus.gold_trees.push(Some(binarize_right(&t)));
        corpus.labeled_trees.push(Some(t));
    }
    corpus.validate()?;
    Ok(corpus)
}
