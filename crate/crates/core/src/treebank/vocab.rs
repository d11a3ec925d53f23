use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

/// Dense word <-> id map. Ids 0 and 1 are always `<unk>` and `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
    max_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    max_size: usize,
    words: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;
    fn try_from(r: VocabRepr) -> Result<Self> {
        Vocab::from_words(r.words, r.max_size)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            max_size: v.max_size,
            words: v.words,
        }
    }
}

impl Vocab {
    /// Builds from an explicit id-ordered word list, which must start with the
    /// two special markers.
    pub fn from_words(words: Vec<String>, max_size: usize) -> Result<Self> {
        if words.len() < 2 || words[0] != UNK || words[1] != EOS {
            return Err(Error::Config(format!(
                "vocabulary must start with {} and {} (ids 0 and 1)",
                UNK, EOS
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word {:?}", w)));
            }
        }
        Ok(Vocab {
            words,
            index,
            max_size,
        })
    }

    /// Most frequent words first, ties broken lexicographically, truncated so
    /// the total size (including the two specials) is at most `max_size`.
    pub fn from_counts(counts: &HashMap<String, usize>, max_size: usize) -> Result<Self> {
        if max_size < 2 {
            return Err(Error::Config("vocab max size must be at least 2".into()));
        }
        let mut ranked: Vec<(&String, &usize)> = counts
            .iter()
            .filter(|(w, _)| w.as_str() != UNK && w.as_str() != EOS)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let mut words = vec![UNK.to_string(), EOS.to_string()];
        words.extend(ranked.into_iter().take(max_size - 2).map(|(w, _)| w.clone()));
        Self::from_words(words, max_size)
    }

    pub fn unk_id(&self) -> u32 {
        0
    }

    pub fn eos_id(&self) -> u32 {
        1
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Id of `word`, or the unknown id.
    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(|s| s.as_str())
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_truncation() {
        let counts: HashMap<String, usize> = [("the", 5), ("cat", 2), ("sat", 1)]
            .iter()
            .map(|(w, c)| (w.to_string(), *c))
            .collect();
        let v = Vocab::from_counts(&counts, 4).unwrap();
        assert_eq!(v.words(), &["<unk>", "<eos>", "the", "cat"]);
        assert_eq!(v.id("sat"), v.unk_id());
        assert_eq!(v.id("cat"), 3);
    }

    #[test]
    fn ties_are_lexicographic() {
        let counts: HashMap<String, usize> = [("b", 2), ("a", 2), ("c", 2), ("z", 3)]
            .iter()
            .map(|(w, c)| (w.to_string(), *c))
            .collect();
        let v = Vocab::from_counts(&counts, 5).unwrap();
        assert_eq!(v.words(), &["<unk>", "<eos>", "z", "a", "b"]);
    }

    #[test]
    fn missing_specials_rejected() {
        assert!(Vocab::from_words(vec!["a".into(), "b".into()], 10).is_err());
        let json = r#"{"max_size":3,"words":["x","<eos>"]}"#;
        assert!(serde_json::from_str::<Vocab>(json).is_err());
    }
}
