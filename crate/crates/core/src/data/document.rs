//! Core document model: tokens with boxes and BIO labels, derived lines,
//! optional page raster.

use crate::attack_pixel::Raster;
use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::rng::content_hash;
use serde::{Deserialize, Serialize};

/// Attack/evaluation granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Word,
    Line,
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Granularity::Word => write!(f, "word"),
            Granularity::Line => write!(f, "line"),
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "word" => Ok(Granularity::Word),
            "line" => Ok(Granularity::Line),
            other => Err(Error::InvalidArgument(format!(
                "unknown granularity '{other}' (expected word|line)"
            ))),
        }
    }
}

/// One OCR word: text, normalized box, BIO tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub bbox: BBox,
    pub label: String,
    pub word_id: usize,
}

/// A merged line: member word ids (left to right), union box, joined text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub members: Vec<usize>,
    pub bbox: BBox,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<Token>,
    pub lines: Vec<Line>,
    #[serde(skip)]
    pub raster: Option<Raster>,
    /// Page raster size in pixels (width, height).
    pub page: (u32, u32),
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            t.bbox
                .validate()
                .map_err(|e| Error::InvalidGeometry(format!("doc {} token {i}: {e}", self.id)))?;
        }
        let mut seen = vec![false; self.tokens.len()];
        for (li, line) in self.lines.iter().enumerate() {
            if line.members.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "doc {} line {li} has no members",
                    self.id
                )));
            }
            for &m in &line.members {
                if m >= self.tokens.len() {
                    return Err(Error::InvalidArgument(format!(
                        "doc {} line {li} references token {m} out of {}",
                        self.id,
                        self.tokens.len()
                    )));
                }
                if seen[m] {
                    return Err(Error::InvalidArgument(format!(
                        "doc {} token {m} belongs to more than one line",
                        self.id
                    )));
                }
                seen[m] = true;
                let b = &self.tokens[m].bbox;
                let l = &line.bbox;
                if b.x0 < l.x0 - 1e-9
                    || b.y0 < l.y0 - 1e-9
                    || b.x1 > l.x1 + 1e-9
                    || b.y1 > l.y1 + 1e-9
                {
                    return Err(Error::InvalidGeometry(format!(
                        "doc {} line {li} does not contain token {m}",
                        self.id
                    )));
                }
            }
        }
        if !self.lines.is_empty() && seen.iter().any(|&s| !s) {
            return Err(Error::InvalidArgument(format!(
                "doc {}: line membership does not partition tokens",
                self.id
            )));
        }
        Ok(())
    }

    /// Boxes of the attack units at a granularity.
    pub fn unit_boxes(&self, granularity: Granularity) -> Vec<BBox> {
        match granularity {
            Granularity::Word => self.tokens.iter().map(|t| t.bbox).collect(),
            Granularity::Line => self.lines.iter().map(|l| l.bbox).collect(),
        }
    }

    pub fn unit_count(&self, granularity: Granularity) -> usize {
        match granularity {
            Granularity::Word => self.tokens.len(),
            Granularity::Line => self.lines.len(),
        }
    }

    pub fn gold_labels(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.label.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Self {
        Corpus { docs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Sorted unique BIO tags present in the corpus.
    pub fn label_set(&self) -> Vec<String> {
        let mut tags: Vec<String> = self
            .docs
            .iter()
            .flat_map(|d| d.tokens.iter().map(|t| t.label.clone()))
            .collect();
        tags.sort();
        tags.dedup();
        tags
    }

    /// Sorted unique token texts.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .docs
            .iter()
            .flat_map(|d| d.tokens.iter().map(|t| t.text.clone()))
            .collect();
        words.sort();
        words.dedup();
        words
    }

    /// Deterministic split: first `1 - frac` of docs for training, the rest
    /// held out.
    pub fn split_holdout(&self, frac: f64) -> (Corpus, Corpus) {
        let n = self.docs.len();
        let cut = ((n as f64) * (1.0 - frac)).round() as usize;
        let cut = cut.clamp(0, n);
        (
            Corpus::new(self.docs[..cut].to_vec()),
            Corpus::new(self.docs[cut..].to_vec()),
        )
    }

    /// Stable content hash over annotations and raster bytes.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0;
        for d in &self.docs {
            let json = serde_json::to_vec(d).expect("document serializes");
            h ^= content_hash(&json).rotate_left(17);
            if let Some(r) = &d.raster {
                h ^= content_hash(r.samples()).rotate_left(31);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(text: &str, x0: f64, y0: f64, x1: f64, y1: f64, label: &str, id: usize) -> Token {
        Token {
            text: text.into(),
            bbox: BBox::new(x0, y0, x1, y1).unwrap(),
            label: label.into(),
            word_id: id,
        }
    }

    #[test]
    fn validate_catches_line_not_containing_member() {
        let t = tok("hi", 0.0, 0.0, 50.0, 20.0, "O", 0);
        let doc = Document {
            id: "d".into(),
            tokens: vec![t],
            lines: vec![Line {
                members: vec![0],
                bbox: BBox::new(10.0, 0.0, 50.0, 20.0).unwrap(),
                text: "hi".into(),
            }],
            raster: None,
            page: (100, 100),
        };
        assert!(doc.validate().is_err());
    }

    #[test]
    fn validate_requires_partition() {
        let doc = Document {
            id: "d".into(),
            tokens: vec![
                tok("a", 0.0, 0.0, 10.0, 10.0, "O", 0),
                tok("b", 20.0, 0.0, 30.0, 10.0, "O", 1),
            ],
            lines: vec![Line {
                members: vec![0],
                bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                text: "a".into(),
            }],
            raster: None,
            page: (100, 100),
        };
        assert!(doc.validate().is_err());
    }

    #[test]
    fn holdout_split_is_deterministic() {
        let docs: Vec<Document> = (0..10)
            .map(|i| Document {
                id: format!("d{i}"),
                tokens: vec![],
                lines: vec![],
                raster: None,
                page: (10, 10),
            })
            .collect();
        let c = Corpus::new(docs);
        let (train, held) = c.split_holdout(0.2);
        assert_eq!(train.len(), 8);
        assert_eq!(held.len(), 2);
        assert_eq!(held.docs[0].id, "d8");
    }
}
