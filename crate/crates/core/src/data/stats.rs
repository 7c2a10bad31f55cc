//! Corpus statistics at word and derived line granularity.

use super::document::Corpus;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub words: usize,
    pub lines: usize,
    pub label_counts: BTreeMap<String, usize>,
}

pub fn stats(corpus: &Corpus) -> CorpusStats {
    let mut label_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut words = 0;
    let mut lines = 0;
    for d in &corpus.docs {
        words += d.tokens.len();
        lines += d.lines.len();
        for t in &d.tokens {
            *label_counts.entry(t.label.clone()).or_default() += 1;
        }
    }
    CorpusStats {
        documents: corpus.len(),
        words,
        lines,
        label_counts,
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "documents: {}", self.documents)?;
        writeln!(f, "word boxes: {}", self.words)?;
        writeln!(f, "line boxes: {}", self.lines)?;
        for (label, count) in &self.label_counts {
            writeln!(f, "  {label}: {count}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_corpus, SynthConfig};

    #[test]
    fn empty_corpus_is_all_zeros() {
        let s = stats(&Corpus::default());
        assert_eq!(s.documents, 0);
        assert_eq!(s.words, 0);
        assert_eq!(s.lines, 0);
        assert!(s.label_counts.is_empty());
    }

    #[test]
    fn counts_match_generator_output_exactly() {
        let cfg = SynthConfig {
            docs: 12,
            seed: 9,
            rasters: false,
            ..Default::default()
        };
        let c = synth_corpus(&cfg);
        let s = stats(&c);
        assert_eq!(s.documents, 12);
        assert_eq!(
            s.words,
            c.docs.iter().map(|d| d.tokens.len()).sum::<usize>()
        );
        assert_eq!(s.lines, c.docs.iter().map(|d| d.lines.len()).sum::<usize>());
    }
}
