//! Entity-level F1 over BIO sequences and normalized Levenshtein answer
//! scoring.

use crate::error::{Error, Result};

/// Exact spans `(type, start, end_inclusive)` of a BIO sequence. An `I-X`
/// that does not continue a span of the same type opens a new span.
pub fn extract_spans(tags: &[String]) -> Vec<(String, usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (kind, stem) = match tag.split_once('-') {
            Some((k, s)) if k == "B" || k == "I" => (k, s.to_string()),
            _ => ("O", String::new()),
        };
        match kind {
            "B" => {
                if let Some((t, s)) = open.take() {
                    spans.push((t, s, i - 1));
                }
                open = Some((stem, i));
            }
            "I" => match &open {
                Some((t, _)) if *t == stem => {}
                _ => {
                    if let Some((t, s)) = open.take() {
                        spans.push((t, s, i - 1));
                    }
                    open = Some((stem, i));
                }
            },
            _ => {
                if let Some((t, s)) = open.take() {
                    spans.push((t, s, i - 1));
                }
            }
        }
    }
    if let Some((t, s)) = open {
        spans.push((t, s, tags.len() - 1));
    }
    spans
}

fn span_counts(pred: &[String], gold: &[String]) -> (usize, usize, usize) {
    let p = extract_spans(pred);
    let g = extract_spans(gold);
    let gset: std::collections::HashSet<&(String, usize, usize)> = g.iter().collect();
    let matched = p.iter().filter(|s| gset.contains(s)).count();
    (matched, p.len(), g.len())
}

/// Micro-averaged exact-span entity F1 for one sequence pair.
pub fn entity_f1(pred: &[String], gold: &[String]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "sequence lengths differ: {} predictions vs {} references",
            pred.len(),
            gold.len()
        )));
    }
    let (m, p, g) = span_counts(pred, gold);
    Ok(f1_from_counts(m, p, g))
}

/// Micro-averaged exact-span entity F1 over a corpus of sequence pairs.
pub fn entity_f1_corpus(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "document counts differ: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut matched = 0;
    let mut p_total = 0;
    let mut g_total = 0;
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::InvalidArgument(format!(
                "sequence lengths differ: {} predictions vs {} references",
                p.len(),
                g.len()
            )));
        }
        let (m, pc, gc) = span_counts(p, g);
        matched += m;
        p_total += pc;
        g_total += gc;
    }
    Ok(f1_from_counts(matched, p_total, g_total))
}

fn f1_from_counts(matched: usize, pred: usize, gold: usize) -> f64 {
    if pred == 0 && gold == 0 {
        return 1.0;
    }
    if matched == 0 {
        return 0.0;
    }
    let p = matched as f64 / pred as f64;
    let r = matched as f64 / gold as f64;
    2.0 * p * r / (p + r)
}

/// Levenshtein distance (two-row dynamic program) over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn normalize_answer(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Normalized Levenshtein similarity against a set of reference answers:
/// per reference, `s = 1 - dist / max(len)`; the score is the best `s` at or
/// above 0.5, else 0. Case-insensitive, whitespace-trimmed.
pub fn anls(pred: &str, golds: &[String]) -> Result<f64> {
    if golds.is_empty() {
        return Err(Error::InvalidArgument(
            "anls needs at least one reference answer".into(),
        ));
    }
    let p = normalize_answer(pred);
    let mut best = 0.0f64;
    for gold in golds {
        let g = normalize_answer(gold);
        let s = if p.is_empty() && g.is_empty() {
            1.0
        } else {
            let denom = p.chars().count().max(g.chars().count());
            1.0 - levenshtein(&p, &g) as f64 / denom as f64
        };
        if s >= 0.5 {
            best = best.max(s);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_sequences_score_one() {
        let g = tags(&["B-A", "I-A", "O", "B-B"]);
        assert_eq!(entity_f1(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn all_o_predictions_score_zero() {
        let gold = tags(&["B-A", "I-A", "O"]);
        let pred = tags(&["O", "O", "O"]);
        assert_eq!(entity_f1(&pred, &gold).unwrap(), 0.0);
    }

    #[test]
    fn one_of_two_spans_matched() {
        // P = 1/1, R = 1/2 -> F1 = 2/3
        let gold = tags(&["B-A", "O", "B-B", "I-B"]);
        let pred = tags(&["B-A", "O", "O", "O"]);
        let f1 = entity_f1(&pred, &gold).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(entity_f1(&tags(&["O"]), &tags(&["O", "O"])).is_err());
    }

    #[test]
    fn stray_i_tag_opens_a_span() {
        let a = tags(&["O", "I-X", "I-X", "O"]);
        assert_eq!(extract_spans(&a), vec![("X".to_string(), 1, 2)]);
        let b = tags(&["B-X", "I-Y"]);
        assert_eq!(
            extract_spans(&b),
            vec![("X".to_string(), 0, 0), ("Y".to_string(), 1, 1)]
        );
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("", ""), 0);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("helo", "hello"), 1);
    }

    #[test]
    fn anls_examples() {
        assert_eq!(anls("match", &["match".into()]).unwrap(), 1.0);
        let v = anls("helo", &["hello".into()]).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        assert_eq!(anls("zzzz", &["hello".into()]).unwrap(), 0.0);
        // case and whitespace are normalized away
        assert_eq!(anls("  HELLO ", &["hello".into()]).unwrap(), 1.0);
        // best reference wins
        let v = anls("helo", &["zzz".into(), "hello".into()]).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
    }
}
