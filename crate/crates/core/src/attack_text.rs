//! Text-channel attacks under the edit-rate budget: random character
//! replacement and a genetic search over Unicode combining-mark attachments.

use crate::data::Document;
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::model::SurrogateModel;
use crate::rng::doc_stream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Combining Diacritical Marks block.
pub const MARK_RANGE: (u32, u32) = (0x0300, 0x036F);

fn is_mark(c: char) -> bool {
    let v = c as u32;
    (MARK_RANGE.0..=MARK_RANGE.1).contains(&v)
}

/// Maximum fraction of base characters that may be modified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextBudget {
    rho: f64,
}

impl TextBudget {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!(
                "text budget rho must lie in [0, 1], got {rho}"
            )));
        }
        Ok(TextBudget { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Decompose into (base character, attached combining marks) units.
pub fn base_units(text: &str) -> Vec<(char, Vec<char>)> {
    let mut out: Vec<(char, Vec<char>)> = Vec::new();
    for c in text.chars() {
        if is_mark(c) {
            if let Some(last) = out.last_mut() {
                last.1.push(c);
            }
            // a leading mark with no base is dropped from the count
        } else {
            out.push((c, Vec::new()));
        }
    }
    out
}

/// Fraction of base characters that differ, counting a base as modified when
/// either the base itself or its attached marks changed. Both strings must
/// hold the same number of base characters (replacement-only regime).
pub fn edit_rate(x: &str, y: &str) -> Result<f64> {
    let a = base_units(x);
    let b = base_units(y);
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "base-character counts differ ({} vs {}): insert/delete edits are not allowed",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let modified = a
        .iter()
        .zip(&b)
        .filter(|((ca, ma), (cb, mb))| ca != cb || ma != mb)
        .count();
    Ok(modified as f64 / a.len() as f64)
}

/// Pooled edit rate over all tokens of a document pair.
pub fn doc_edit_rate(orig: &Document, perturbed: &Document) -> Result<f64> {
    if orig.tokens.len() != perturbed.tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "token counts differ: {} vs {}",
            orig.tokens.len(),
            perturbed.tokens.len()
        )));
    }
    let mut modified = 0usize;
    let mut total = 0usize;
    for (a, b) in orig.tokens.iter().zip(&perturbed.tokens) {
        let ua = base_units(&a.text);
        let ub = base_units(&b.text);
        if ua.len() != ub.len() {
            return Err(Error::InvalidArgument(format!(
                "token {} base-character counts differ ({} vs {})",
                a.word_id,
                ua.len(),
                ub.len()
            )));
        }
        total += ua.len();
        modified += ua
            .iter()
            .zip(&ub)
            .filter(|((ca, ma), (cb, mb))| ca != cb || ma != mb)
            .count();
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(modified as f64 / total as f64)
}

const UPPER: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

fn replacement_for(orig: char, rng: &mut ChaCha8Rng) -> char {
    let pool: &[u8] = if orig.is_ascii_uppercase() {
        UPPER
    } else if orig.is_ascii_lowercase() {
        LOWER
    } else {
        ALNUM
    };
    loop {
        let c = pool[rng.gen_range(0..pool.len())] as char;
        if c != orig {
            return c;
        }
    }
}

/// Replace exactly `floor(rho * len)` characters of each token at distinct
/// positions, drawing case-preserving alphanumeric substitutes. Token count,
/// order, and per-token length never change.
pub fn random_replace(doc: &Document, budget: &TextBudget, seed: u64) -> Document {
    let mut out = doc.clone();
    for (ti, tok) in out.tokens.iter_mut().enumerate() {
        let mut chars: Vec<char> = tok.text.chars().collect();
        let n = chars.len();
        let k = (budget.rho() * n as f64).floor() as usize;
        if k == 0 {
            continue;
        }
        let mut rng = doc_stream(seed, "random-replace", &doc.id, ti as u64);
        let mut positions: Vec<usize> = (0..n).collect();
        positions.shuffle(&mut rng);
        positions.truncate(k);
        positions.sort_unstable();
        for p in positions {
            chars[p] = replacement_for(chars[p], &mut rng);
        }
        tok.text = chars.into_iter().collect();
        // word text changed; keep the joined line text in sync
    }
    for line in out.lines.iter_mut() {
        line.text = line
            .members
            .iter()
            .map(|&m| out.tokens[m].text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiacriticConfig {
    /// Inclusive codepoint range of usable combining marks.
    pub mark_lo: u32,
    pub mark_hi: u32,
    pub population: usize,
    pub generations: usize,
    /// Per-character attach probability when seeding the population.
    pub attach_prob: f64,
    /// Per-gene toggle probability during mutation.
    pub mutation_prob: f64,
    pub tournament: usize,
    pub seed: u64,
}

impl Default for DiacriticConfig {
    fn default() -> Self {
        DiacriticConfig {
            mark_lo: MARK_RANGE.0,
            mark_hi: MARK_RANGE.1,
            population: 16,
            generations: 10,
            attach_prob: 0.15,
            mutation_prob: 0.03,
            tournament: 3,
            seed: 0,
        }
    }
}

impl DiacriticConfig {
    fn mark_count(&self) -> usize {
        (self.mark_hi - self.mark_lo + 1) as usize
    }

    fn mark(&self, id: u16) -> char {
        char::from_u32(self.mark_lo + (id as u32 - 1)).expect("combining mark codepoint")
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        if self.mark_lo > self.mark_hi || self.mark_hi > 0x10FFFF {
            return Err(Error::Config("invalid mark range".into()));
        }
        if self.tournament == 0 {
            return Err(Error::Config("tournament size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiacriticStats {
    pub best_fitness: f64,
    pub generation_best: Vec<f64>,
    pub vocab_misses: usize,
    pub marks_attached: usize,
}

/// A genome assigns one optional mark to every base character of the
/// document.
type Genome = Vec<u16>;

fn genome_slots(doc: &Document) -> Vec<usize> {
    doc.tokens
        .iter()
        .map(|t| base_units(&t.text).len())
        .collect()
}

fn apply_genome(
    doc: &Document,
    slots: &[usize],
    genome: &Genome,
    cfg: &DiacriticConfig,
) -> Document {
    let mut out = doc.clone();
    let mut off = 0;
    for (ti, tok) in out.tokens.iter_mut().enumerate() {
        let n = slots[ti];
        let genes = &genome[off..off + n];
        off += n;
        if genes.iter().all(|&g| g == 0) {
            continue;
        }
        let units = base_units(&tok.text);
        let mut s = String::with_capacity(tok.text.len() + 2 * n);
        for ((base, marks), &gene) in units.iter().zip(genes) {
            s.push(*base);
            for &m in marks {
                s.push(m);
            }
            if gene != 0 {
                s.push(cfg.mark(gene));
            }
        }
        tok.text = s;
    }
    for line in out.lines.iter_mut() {
        line.text = line
            .members
            .iter()
            .map(|&m| out.tokens[m].text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
    }
    out
}

/// Zero out random genes until the attachment count fits the document-level
/// budget.
fn repair(genome: &mut Genome, cap: usize, rng: &mut ChaCha8Rng) {
    let mut active: Vec<usize> = genome
        .iter()
        .enumerate()
        .filter(|(_, &g)| g != 0)
        .map(|(i, _)| i)
        .collect();
    while active.len() > cap {
        let k = rng.gen_range(0..active.len());
        genome[active.swap_remove(k)] = 0;
    }
}

/// Genetic search over mark attachments: fitness is the surrogate task loss
/// of the mutated document; selection is tournament-based with single-point
/// crossover, bit-toggle mutation, and an elitist carry-over. Attachments
/// only add marks after existing base characters, and the total number of
/// marked characters stays within the document-level budget.
pub fn diacritic_attack(
    surrogate: &SurrogateModel,
    doc: &Document,
    budget: &TextBudget,
    cfg: &DiacriticConfig,
    parallel: bool,
) -> Result<(Document, DiacriticStats)> {
    cfg.validate()?;
    let slots = genome_slots(doc);
    let total: usize = slots.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument(format!(
            "document {} has no characters to perturb",
            doc.id
        )));
    }
    let cap = (budget.rho() * total as f64).floor() as usize;
    let marks = cfg.mark_count() as u16;
    let mut rng = doc_stream(cfg.seed, "diacritic", &doc.id, 0);

    let random_gene = |rng: &mut ChaCha8Rng| -> u16 { rng.gen_range(1..=marks) };
    let mut population: Vec<Genome> = (0..cfg.population)
        .map(|_| {
            let mut g: Genome = (0..total)
                .map(|_| {
                    if rng.gen_bool(cfg.attach_prob) {
                        random_gene(&mut rng)
                    } else {
                        0
                    }
                })
                .collect();
            repair(&mut g, cap, &mut rng);
            g
        })
        .collect();

    let evaluate = |pop: &[Genome]| -> Result<Vec<f64>> {
        let scores: Vec<Result<f64>> = map_indexed(pop, parallel, |_, g| {
            surrogate.task_loss(&apply_genome(doc, &slots, g, cfg))
        });
        scores.into_iter().collect()
    };

    let mut fitness = evaluate(&population)?;
    let best_of = |fit: &[f64]| -> usize {
        let mut b = 0;
        for i in 1..fit.len() {
            if fit[i] > fit[b] {
                b = i;
            }
        }
        b
    };
    let mut best_idx = best_of(&fitness);
    let mut best = (population[best_idx].clone(), fitness[best_idx]);
    let mut generation_best = vec![best.1];

    for _gen in 0..cfg.generations {
        let mut next: Vec<Genome> = Vec::with_capacity(cfg.population);
        next.push(best.0.clone());
        while next.len() < cfg.population {
            let tournament = |rng: &mut ChaCha8Rng| -> usize {
                let mut w = rng.gen_range(0..population.len());
                for _ in 1..cfg.tournament {
                    let c = rng.gen_range(0..population.len());
                    if fitness[c] > fitness[w] {
                        w = c;
                    }
                }
                w
            };
            let pa = tournament(&mut rng);
            let pb = tournament(&mut rng);
            let cut = rng.gen_range(1..total.max(2));
            let mut child: Genome = population[pa][..cut.min(total)]
                .iter()
                .chain(&population[pb][cut.min(total)..])
                .copied()
                .collect();
            for gene in child.iter_mut() {
                if rng.gen_bool(cfg.mutation_prob) {
                    *gene = if *gene != 0 { 0 } else { random_gene(&mut rng) };
                }
            }
            repair(&mut child, cap, &mut rng);
            next.push(child);
        }
        population = next;
        fitness = evaluate(&population)?;
        best_idx = best_of(&fitness);
        if fitness[best_idx] > best.1 {
            best = (population[best_idx].clone(), fitness[best_idx]);
        }
        generation_best.push(best.1);
    }

    let out = apply_genome(doc, &slots, &best.0, cfg);
    let stats = DiacriticStats {
        best_fitness: best.1,
        generation_best,
        vocab_misses: surrogate.vocab_misses(&out),
        marks_attached: best.0.iter().filter(|&&g| g != 0).count(),
    };
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthConfig};
    use crate::model::{train_surrogate, SurrogateConfig, SurrogateTrainConfig};

    fn corpus() -> crate::data::Corpus {
        synth_corpus(&SynthConfig {
            docs: 8,
            seed: 61,
            rasters: false,
            ..Default::default()
        })
    }

    #[test]
    fn edit_rate_examples() {
        assert_eq!(edit_rate("abc", "abc").unwrap(), 0.0);
        assert!((edit_rate("abcde", "abxde").unwrap() - 0.2).abs() < 1e-12);
        // a combining mark counts its base as modified
        assert_eq!(edit_rate("e", "e\u{0301}").unwrap(), 1.0);
        // insert/delete is rejected
        assert!(edit_rate("ab", "abc").is_err());
    }

    #[test]
    fn zero_budget_is_identity() {
        let c = corpus();
        let b = TextBudget::new(0.0).unwrap();
        for doc in &c.docs {
            let out = random_replace(doc, &b, 5);
            assert_eq!(&out, doc);
        }
    }

    #[test]
    fn replacement_counts_match_floor_rule() {
        let c = corpus();
        let b = TextBudget::new(0.1).unwrap();
        for doc in &c.docs {
            let out = random_replace(doc, &b, 5);
            assert_eq!(out.tokens.len(), doc.tokens.len());
            for (a, p) in doc.tokens.iter().zip(&out.tokens) {
                let n = a.text.chars().count();
                let expect = (0.1 * n as f64).floor() as usize;
                let diff = a
                    .text
                    .chars()
                    .zip(p.text.chars())
                    .filter(|(x, y)| x != y)
                    .count();
                assert_eq!(diff, expect, "token '{}' -> '{}'", a.text, p.text);
                assert_eq!(a.text.chars().count(), p.text.chars().count());
            }
            assert!(doc_edit_rate(doc, &out).unwrap() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn token_length_twenty_changes_exactly_two() {
        let mut doc = corpus().docs[0].clone();
        doc.tokens[0].text = "ABCDEFGHIJKLMNOPQRST".into();
        let out = random_replace(&doc, &TextBudget::new(0.1).unwrap(), 1);
        let diff = doc.tokens[0]
            .text
            .chars()
            .zip(out.tokens[0].text.chars())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(diff, 2);
        // and a seven-character token stays untouched
        let short: Vec<&crate::data::Token> = doc
            .tokens
            .iter()
            .filter(|t| t.text.chars().count() < 10)
            .collect();
        assert!(!short.is_empty());
    }

    #[test]
    fn replacements_preserve_case_class() {
        let mut doc = corpus().docs[0].clone();
        doc.tokens[0].text = "ABCDEFGHIJklmnopqrst".into();
        let out = random_replace(&doc, &TextBudget::new(0.5).unwrap(), 9);
        for (a, b) in doc.tokens[0].text.chars().zip(out.tokens[0].text.chars()) {
            if a != b {
                if a.is_ascii_uppercase() {
                    assert!(b.is_ascii_uppercase());
                }
                if a.is_ascii_lowercase() {
                    assert!(b.is_ascii_lowercase());
                }
            }
        }
    }

    #[test]
    fn random_replace_is_deterministic() {
        let c = corpus();
        let b = TextBudget::new(0.1).unwrap();
        assert_eq!(
            random_replace(&c.docs[0], &b, 3),
            random_replace(&c.docs[0], &b, 3)
        );
        assert_ne!(
            random_replace(&c.docs[0], &b, 3),
            random_replace(&c.docs[0], &b, 4)
        );
    }

    fn tiny_surrogate(c: &crate::data::Corpus) -> SurrogateModel {
        train_surrogate(
            c,
            &SurrogateConfig::desk(3),
            &SurrogateTrainConfig {
                epochs: 3,
                lr: 2e-3,
                batch_docs: 4,
                ..Default::default()
            },
        )
        .unwrap()
        .0
    }

    #[test]
    fn diacritic_zero_generations_empty_masks_is_identity() {
        let c = corpus();
        let surrogate = tiny_surrogate(&c);
        let cfg = DiacriticConfig {
            generations: 0,
            attach_prob: 0.0,
            seed: 2,
            ..Default::default()
        };
        let (out, stats) = diacritic_attack(
            &surrogate,
            &c.docs[0],
            &TextBudget::new(0.1).unwrap(),
            &cfg,
            false,
        )
        .unwrap();
        assert_eq!(out, c.docs[0]);
        assert_eq!(stats.marks_attached, 0);
    }

    #[test]
    fn diacritic_is_elitist_and_budgeted() {
        let c = corpus();
        let surrogate = tiny_surrogate(&c);
        let cfg = DiacriticConfig {
            population: 6,
            generations: 4,
            seed: 7,
            ..Default::default()
        };
        let budget = TextBudget::new(0.1).unwrap();
        let (out, stats) = diacritic_attack(&surrogate, &c.docs[1], &budget, &cfg, false).unwrap();
        for w in stats.generation_best.windows(2) {
            assert!(w[1] >= w[0], "best fitness decreased: {w:?}");
        }
        assert!(stats.best_fitness >= stats.generation_best[0]);
        let rate = doc_edit_rate(&c.docs[1], &out).unwrap();
        assert!(rate <= 0.1 + 1e-12, "edit rate {rate}");
        // base characters and token count unchanged
        assert_eq!(out.tokens.len(), c.docs[1].tokens.len());
        for (a, b) in c.docs[1].tokens.iter().zip(&out.tokens) {
            let ba: Vec<char> = base_units(&a.text).iter().map(|(c, _)| *c).collect();
            let bb: Vec<char> = base_units(&b.text).iter().map(|(c, _)| *c).collect();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn diacritic_parallel_matches_sequential() {
        let c = corpus();
        let surrogate = tiny_surrogate(&c);
        let cfg = DiacriticConfig {
            population: 4,
            generations: 2,
            seed: 11,
            ..Default::default()
        };
        let budget = TextBudget::new(0.1).unwrap();
        let (a, _) = diacritic_attack(&surrogate, &c.docs[2], &budget, &cfg, false).unwrap();
        let (b, _) = diacritic_attack(&surrogate, &c.docs[2], &budget, &cfg, true).unwrap();
        assert_eq!(a, b);
    }
}
