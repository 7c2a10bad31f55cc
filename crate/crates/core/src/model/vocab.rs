//! Token vocabulary and label set.

use crate::data::Corpus;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const UNK: &str = "<unk>";

/// Exact-match vocabulary with an unknown-token fallback at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from a corpus, keeping words that occur at least `min_count`
    /// times. One-off strings fall to the unknown id, which therefore gets
    /// trained whenever the corpus contains singletons.
    pub fn build(corpus: &Corpus, min_count: usize) -> Vocab {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for d in &corpus.docs {
            for t in &d.tokens {
                *counts.entry(t.text.clone()).or_default() += 1;
            }
        }
        let mut words = vec![UNK.to_string()];
        words.extend(
            counts
                .into_iter()
                .filter(|(_, c)| *c >= min_count)
                .map(|(w, _)| w),
        );
        Vocab::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Vocab {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    /// Exact lookup; misses map to the unknown id.
    pub fn id_of(&self, text: &str) -> usize {
        self.index.get(text).copied().unwrap_or(0)
    }

    pub fn is_known(&self, text: &str) -> bool {
        self.index.contains_key(text)
    }
}

/// Ordered BIO tag set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    tags: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn build(corpus: &Corpus) -> LabelSet {
        LabelSet::from_tags(corpus.label_set())
    }

    pub fn from_tags(tags: Vec<String>) -> LabelSet {
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        LabelSet { tags, index }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn id_of(&self, tag: &str) -> Result<usize> {
        self.index.get(tag).copied().ok_or_else(|| {
            Error::InvalidArgument(format!("label '{tag}' not in the model's label set"))
        })
    }
}
