//! Seeded toy treebanks from a small right-skewed PCFG. Every word belongs
//! to exactly one part of speech, so the bracketing is recoverable from
//! lexical cues.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::treebank::Tree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub prepositions: usize,
    /// Chance that a noun phrase takes a prepositional modifier.
    pub p_pp: f64,
    /// Chance of an adjective phrase inside a noun phrase.
    pub p_adj: f64,
    /// Chance of a pronoun subject (a one-word noun phrase).
    pub p_pronoun: f64,
    /// Chance that a verb takes a clausal complement instead of an object.
    pub p_clause: f64,
    /// Nesting limit for PP and clause recursion.
    pub max_depth: usize,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            nouns: 12,
            verbs: 8,
            adjectives: 5,
            prepositions: 4,
            p_pp: 0.35,
            p_adj: 0.3,
            p_pronoun: 0.25,
            p_clause: 0.15,
            max_depth: 2,
        }
    }
}

struct Gen<'a> {
    cfg: &'a GrammarConfig,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn word(&mut self, tag: &str, prefix: &str, n: usize) -> Tree {
        let k = self.rng.gen_range(0..n.max(1));
        Tree::leaf(tag, format!("{}{}", prefix, k))
    }

    fn np(&mut self, depth: usize) -> Tree {
        let det = if self.rng.gen_bool(0.5) { "the" } else { "a" };
        let mut kids = vec![Tree::leaf("DT", det)];
        if self.rng.gen_bool(self.cfg.p_adj) {
            if self.rng.gen_bool(0.3) {
                let adj = self.word("JJ", "adj", self.cfg.adjectives);
                kids.push(Tree::node("ADJP", vec![Tree::leaf("RB", "very"), adj]));
            } else {
                kids.push(self.word("JJ", "adj", self.cfg.adjectives));
            }
        }
        kids.push(self.word("NN", "noun", self.cfg.nouns));
        let base = Tree::node("NP", kids);
        if depth < self.cfg.max_depth && self.rng.gen_bool(self.cfg.p_pp) {
            let pp = self.pp(depth + 1);
            Tree::node("NP", vec![base, pp])
        } else {
            base
        }
    }

    fn pp(&mut self, depth: usize) -> Tree {
        let p = self.word("IN", "prep", self.cfg.prepositions);
        let np = self.np(depth);
        Tree::node("PP", vec![p, np])
    }

    fn vp(&mut self, depth: usize) -> Tree {
        let v = self.word("VB", "verb", self.cfg.verbs);
        let comp = if depth < self.cfg.max_depth && self.rng.gen_bool(self.cfg.p_clause) {
            let s = self.clause(depth + 1);
            Tree::node("SBAR", vec![Tree::leaf("IN", "that"), s])
        } else {
            self.np(depth)
        };
        Tree::node("VP", vec![v, comp])
    }

    fn clause(&mut self, depth: usize) -> Tree {
        let subj = if self.rng.gen_bool(self.cfg.p_pronoun) {
            let w = if self.rng.gen_bool(0.5) { "she" } else { "they" };
            Tree::node("NP", vec![Tree::leaf("PRP", w)])
        } else {
            self.np(depth)
        };
        let vp = self.vp(depth);
        Tree::node("S", vec![subj, vp])
    }
}

/// Sentences from the grammar until the words plus one eos per sentence
/// reach `min_tokens`. Deterministic in `seed`.
pub fn generate_treebank(cfg: &GrammarConfig, min_tokens: usize, seed: u64) -> Vec<Tree> {
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut out = Vec::new();
    let mut tokens = 0;
    while tokens < min_tokens {
        let t = g.clause(0);
        tokens += t.n_leaves() + 1;
        out.push(t);
    }
    out
}
