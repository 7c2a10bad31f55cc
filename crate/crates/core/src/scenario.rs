//! Scenario orchestration: composes the layout, pixel, and text channels
//! per scenario under one attack configuration, with a per-document budget
//! ledger and a reproducibility manifest.

use crate::attack_box::{pgd_attack, random_shift, CandidateRecord, PgdConfig, RandomShiftConfig};
use crate::attack_pixel::{augment, translate_region, AugmentKind};
use crate::attack_text::{
    diacritic_attack, doc_edit_rate, random_replace, DiacriticConfig, TextBudget,
};
use crate::data::{Corpus, Document, Granularity};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::geom::LayoutBudget;
use crate::model::{BBoxPredictor, SurrogateModel};
use crate::rng::{derive_seed, doc_stream};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::S1,
        Scenario::S2,
        Scenario::S3,
        Scenario::S4,
        Scenario::S5,
        Scenario::S6,
    ];

    pub fn layout(&self) -> bool {
        !matches!(self, Scenario::S4)
    }

    pub fn pixel(&self) -> bool {
        matches!(self, Scenario::S2 | Scenario::S3 | Scenario::S6)
    }

    pub fn text(&self) -> bool {
        matches!(self, Scenario::S4 | Scenario::S5 | Scenario::S6)
    }

    /// Whether page augmentation belongs to this scenario (mandatory for S3,
    /// optional for S6).
    pub fn augmentable(&self) -> bool {
        matches!(self, Scenario::S3 | Scenario::S6)
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
            Scenario::S4 => "S4",
            Scenario::S5 => "S5",
            Scenario::S6 => "S6",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "S4" => Ok(Scenario::S4),
            "S5" => Ok(Scenario::S5),
            "S6" => Ok(Scenario::S6),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario '{other}' (expected S1..S6)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Pgd,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Random => write!(f, "random"),
            Method::Pgd => write!(f, "pgd"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Method::Random),
            "pgd" => Ok(Method::Pgd),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected random|pgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    RandomReplace,
    Diacritic,
}

impl std::str::FromStr for TextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random_replace" | "random-replace" => Ok(TextMode::RandomReplace),
            "diacritic" => Ok(TextMode::Diacritic),
            other => Err(Error::InvalidArgument(format!(
                "unknown text mode '{other}' (expected random_replace|diacritic)"
            ))),
        }
    }
}

/// Full attack configuration for one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub scenario: Scenario,
    pub granularity: Granularity,
    pub method: Method,
    pub tau: LayoutBudget,
    pub rho: TextBudget,
    pub text_mode: TextMode,
    pub augment: bool,
    pub pgd_steps: usize,
    pub pgd_alpha: f64,
    pub pgd_lambda_box: f64,
    pub diacritic: DiacriticConfig,
    pub seed: u64,
    /// Keep per-candidate trace records for debugging exports.
    pub keep_traces: bool,
}

impl AttackConfig {
    pub fn new(
        scenario: Scenario,
        granularity: Granularity,
        method: Method,
        tau: f64,
        rho: f64,
    ) -> Result<Self> {
        let cfg = AttackConfig {
            scenario,
            granularity,
            method,
            tau: LayoutBudget::new(tau)?,
            rho: TextBudget::new(rho)?,
            text_mode: TextMode::RandomReplace,
            augment: scenario == Scenario::S3,
            pgd_steps: 10,
            pgd_alpha: 0.05,
            pgd_lambda_box: 1.0,
            diacritic: DiacriticConfig::default(),
            seed: 0,
            keep_traces: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario == Scenario::S4 && self.method == Method::Pgd {
            return Err(Error::Config(
                "gradient attacks act on the layout channel only; S4 has no layout channel, use method=random".into(),
            ));
        }
        if self.augment && !self.scenario.augmentable() {
            return Err(Error::Config(format!(
                "augmentation is only valid for S3/S6, not {}",
                self.scenario
            )));
        }
        if self.scenario == Scenario::S3 && !self.augment {
            return Err(Error::Config(
                "S3 includes page augmentation; set augment=true".into(),
            ));
        }
        if self.method == Method::Pgd {
            self.pgd_config().validate()?;
        }
        self.diacritic.validate()?;
        Ok(())
    }

    pub fn pgd_config(&self) -> PgdConfig {
        PgdConfig {
            steps: self.pgd_steps,
            alpha: self.pgd_alpha,
            lambda_box: self.pgd_lambda_box,
            tau: self.tau,
        }
    }
}

/// Per-document budget ledger entry, written by the attack and re-checked
/// from scratch by the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocLedger {
    pub doc_id: String,
    /// Realized IoU per unit at the attack granularity (empty when the
    /// layout channel is frozen).
    pub unit_ious: Vec<f64>,
    pub edit_rate: f64,
    pub augment: Option<String>,
    /// Layout channel outcome; None when the scenario freezes layout.
    pub layout_failed: Option<bool>,
    pub vocab_misses: usize,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub entries: Vec<DocLedger>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocTrace {
    pub doc_id: String,
    pub candidates: Vec<CandidateRecord>,
}

pub struct ScenarioRun {
    pub docs: Vec<Document>,
    pub ledger: BudgetLedger,
    pub traces: Vec<DocTrace>,
    pub config: AttackConfig,
}

pub struct ScenarioContext<'a> {
    pub surrogate: Option<&'a SurrogateModel>,
    pub predictor: Option<&'a BBoxPredictor>,
}

fn required<'a, T>(opt: Option<&'a T>, what: &str) -> Result<&'a T> {
    opt.ok_or_else(|| Error::Config(format!("this configuration requires {what}")))
}

struct DocResult {
    doc: Document,
    ledger: DocLedger,
    trace: Option<DocTrace>,
}

fn attack_document(
    ctx: &ScenarioContext<'_>,
    doc: &Document,
    cfg: &AttackConfig,
) -> Result<DocResult> {
    let mut notes: Vec<String> = Vec::new();
    let mut current = doc.clone();
    let mut unit_ious: Vec<f64> = Vec::new();
    let mut layout_failed = None;
    let mut trace = None;

    // Layout channel.
    if cfg.scenario.layout() {
        match cfg.method {
            Method::Random => {
                let out = random_shift(
                    doc,
                    cfg.granularity,
                    &RandomShiftConfig {
                        tau: cfg.tau,
                        seed: derive_seed(cfg.seed, "layout", 0),
                    },
                )?;
                notes.extend(out.notes);
                unit_ious = out.unit_ious;
                layout_failed = Some(out.failed);
                current = out.doc;
            }
            Method::Pgd => {
                let surrogate = required(ctx.surrogate, "a trained surrogate (gradient source)")?;
                let predictor = required(ctx.predictor, "a trained bbox predictor")?;
                if predictor.cfg.granularity != cfg.granularity {
                    return Err(Error::Config(format!(
                        "predictor granularity {} does not match requested {}",
                        predictor.cfg.granularity, cfg.granularity
                    )));
                }
                let (out, records) = pgd_attack(surrogate, predictor, doc, &cfg.pgd_config())?;
                notes.extend(out.notes.clone());
                unit_ious = out.unit_ious;
                layout_failed = Some(out.failed);
                current = out.doc;
                if cfg.keep_traces {
                    trace = Some(DocTrace {
                        doc_id: doc.id.clone(),
                        candidates: records,
                    });
                }
            }
        }
    }

    // Pixel channel: move box regions to follow the realized layout, then
    // optionally augment the whole page.
    if cfg.scenario.pixel() {
        let Some(img) = doc.raster.clone() else {
            return Ok(DocResult {
                doc: current,
                ledger: DocLedger {
                    doc_id: doc.id.clone(),
                    unit_ious,
                    edit_rate: 0.0,
                    augment: None,
                    layout_failed,
                    vocab_misses: 0,
                    notes,
                    error: Some("pixel scenario but the document has no raster".into()),
                },
                trace,
            });
        };
        let mut img = img;
        let from_boxes = doc.unit_boxes(cfg.granularity);
        let to_boxes = current.unit_boxes(cfg.granularity);
        for (i, (from, to)) in from_boxes.iter().zip(&to_boxes).enumerate() {
            if from == to {
                continue;
            }
            let (next, mut move_notes) = translate_region(&img, from, to)?;
            img = next;
            for n in move_notes.drain(..) {
                notes.push(format!("unit {i}: {n}"));
            }
        }
        let mut augment_name = None;
        if cfg.scenario == Scenario::S3 || (cfg.scenario == Scenario::S6 && cfg.augment) {
            let kinds = AugmentKind::default_set();
            let mut rng = doc_stream(cfg.seed, "augment-pick", &doc.id, 0);
            let kind = kinds[rng.gen_range(0..kinds.len())].clone();
            let aug_seed = derive_seed(derive_seed(cfg.seed, "augment", 0), &doc.id, 0);
            img = augment(&img, &kind, aug_seed);
            augment_name = Some(kind.name().to_string());
        }
        current.raster = Some(img);
        // Text channel may still follow; stash the augment name in notes via
        // the ledger below.
        if let Some(name) = &augment_name {
            notes.push(format!("augment: {name}"));
        }
    }

    // Text channel.
    let mut vocab_misses = 0;
    if cfg.scenario.text() {
        match cfg.text_mode {
            TextMode::RandomReplace => {
                current = random_replace(&current, &cfg.rho, derive_seed(cfg.seed, "text", 0));
            }
            TextMode::Diacritic => {
                let surrogate = required(ctx.surrogate, "a surrogate (diacritic fitness)")?;
                let mut dcfg = cfg.diacritic.clone();
                dcfg.seed = derive_seed(cfg.seed, "text", 0);
                // documents already fan out in parallel; keep fitness serial
                let (out, stats) = diacritic_attack(surrogate, &current, &cfg.rho, &dcfg, false)?;
                current = out;
                vocab_misses = stats.vocab_misses;
            }
        }
    }

    let edit_rate = doc_edit_rate(doc, &current)?;
    let augment_name = notes
        .iter()
        .find_map(|n| n.strip_prefix("augment: ").map(str::to_string));
    Ok(DocResult {
        ledger: DocLedger {
            doc_id: doc.id.clone(),
            unit_ious,
            edit_rate,
            augment: augment_name,
            layout_failed,
            vocab_misses,
            notes,
            error: None,
        },
        doc: current,
        trace,
    })
}

/// Run one scenario over a corpus. Documents fan out in parallel; all per-
/// document randomness derives from `(seed, channel, doc id)`, so output is
/// independent of scheduling. A missing raster in a pixel scenario becomes a
/// per-document error entry and the run continues.
pub fn run_scenario(
    ctx: &ScenarioContext<'_>,
    corpus: &Corpus,
    cfg: &AttackConfig,
    parallel: bool,
) -> Result<ScenarioRun> {
    cfg.validate()?;
    if cfg.method == Method::Pgd {
        required(ctx.surrogate, "a trained surrogate (gradient source)")?;
        required(ctx.predictor, "a trained bbox predictor")?;
    }
    if cfg.scenario.text() && cfg.text_mode == TextMode::Diacritic {
        required(ctx.surrogate, "a surrogate (diacritic fitness)")?;
    }
    let results: Vec<Result<DocResult>> = map_indexed(&corpus.docs, parallel, |_, doc| {
        attack_document(ctx, doc, cfg)
    });
    let mut docs = Vec::with_capacity(corpus.len());
    let mut ledger = BudgetLedger::default();
    let mut traces = Vec::new();
    for r in results {
        let r = r?;
        docs.push(r.doc);
        ledger.entries.push(r.ledger);
        if let Some(t) = r.trace {
            traces.push(t);
        }
    }
    Ok(ScenarioRun {
        docs,
        ledger,
        traces,
        config: cfg.clone(),
    })
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub corpus_hash: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        master_seed: u64,
        corpus: &Corpus,
        config: serde_json::Value,
    ) -> Self {
        RunManifest {
            tool: "docadv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            master_seed,
            corpus_hash: format!("{:016x}", corpus.hash()),
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthConfig};
    use crate::model::{train_surrogate, SurrogateConfig, SurrogateTrainConfig};

    fn corpus(rasters: bool) -> Corpus {
        synth_corpus(&SynthConfig {
            docs: 6,
            seed: 71,
            rasters,
            ..Default::default()
        })
    }

    fn ctx_with_surrogate(c: &Corpus) -> SurrogateModel {
        train_surrogate(
            c,
            &SurrogateConfig::desk(9),
            &SurrogateTrainConfig {
                epochs: 2,
                lr: 2e-3,
                batch_docs: 4,
                ..Default::default()
            },
        )
        .unwrap()
        .0
    }

    #[test]
    fn s4_with_pgd_is_rejected() {
        let err = AttackConfig::new(Scenario::S4, Granularity::Line, Method::Pgd, 0.6, 0.1);
        assert!(err.is_err());
    }

    #[test]
    fn augment_outside_s3_s6_is_rejected() {
        let mut cfg =
            AttackConfig::new(Scenario::S1, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        cfg.augment = true;
        assert!(cfg.validate().is_err());
        let mut s3 =
            AttackConfig::new(Scenario::S3, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        assert!(s3.augment);
        s3.augment = false;
        assert!(s3.validate().is_err());
    }

    #[test]
    fn s1_full_budget_returns_input_corpus() {
        let c = corpus(false);
        let cfg =
            AttackConfig::new(Scenario::S1, Granularity::Line, Method::Random, 1.0, 0.1).unwrap();
        let ctx = ScenarioContext {
            surrogate: None,
            predictor: None,
        };
        let run = run_scenario(&ctx, &c, &cfg, false).unwrap();
        assert_eq!(run.docs, c.docs);
        assert!(run
            .ledger
            .entries
            .iter()
            .all(|e| e.layout_failed == Some(true)));
    }

    #[test]
    fn s4_zero_rho_returns_input_corpus() {
        let c = corpus(false);
        let cfg =
            AttackConfig::new(Scenario::S4, Granularity::Line, Method::Random, 0.6, 0.0).unwrap();
        let ctx = ScenarioContext {
            surrogate: None,
            predictor: None,
        };
        let run = run_scenario(&ctx, &c, &cfg, false).unwrap();
        assert_eq!(run.docs, c.docs);
        assert!(run.ledger.entries.iter().all(|e| e.edit_rate == 0.0));
    }

    #[test]
    fn frozen_channels_stay_bit_identical() {
        let c = corpus(true);
        // S1 freezes text and raster
        let cfg =
            AttackConfig::new(Scenario::S1, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        let ctx = ScenarioContext {
            surrogate: None,
            predictor: None,
        };
        let run = run_scenario(&ctx, &c, &cfg, true).unwrap();
        for (orig, out) in c.docs.iter().zip(&run.docs) {
            for (a, b) in orig.tokens.iter().zip(&out.tokens) {
                assert_eq!(a.text, b.text);
            }
            assert_eq!(orig.raster, out.raster);
        }
        // S4 freezes boxes and raster
        let cfg =
            AttackConfig::new(Scenario::S4, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        let run = run_scenario(&ctx, &c, &cfg, true).unwrap();
        for (orig, out) in c.docs.iter().zip(&run.docs) {
            for (a, b) in orig.tokens.iter().zip(&out.tokens) {
                assert_eq!(a.bbox, b.bbox);
            }
            assert_eq!(orig.raster, out.raster);
            assert!(doc_edit_rate(orig, out).unwrap() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn missing_raster_becomes_error_entry_and_run_continues() {
        let mut c = corpus(true);
        c.docs[2].raster = None;
        let cfg =
            AttackConfig::new(Scenario::S2, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        let ctx = ScenarioContext {
            surrogate: None,
            predictor: None,
        };
        let run = run_scenario(&ctx, &c, &cfg, false).unwrap();
        assert_eq!(run.docs.len(), c.docs.len());
        assert!(run.ledger.entries[2].error.is_some());
        assert!(
            run.ledger
                .entries
                .iter()
                .filter(|e| e.error.is_some())
                .count()
                == 1
        );
    }

    #[test]
    fn scenario_runs_reproduce_across_worker_modes() {
        let c = corpus(true);
        let surrogate = ctx_with_surrogate(&c);
        for scenario in [Scenario::S2, Scenario::S5, Scenario::S6] {
            let cfg = AttackConfig {
                seed: 33,
                ..AttackConfig::new(scenario, Granularity::Line, Method::Random, 0.6, 0.1).unwrap()
            };
            let ctx = ScenarioContext {
                surrogate: Some(&surrogate),
                predictor: None,
            };
            let seq = run_scenario(&ctx, &c, &cfg, false).unwrap();
            let par = run_scenario(&ctx, &c, &cfg, true).unwrap();
            assert_eq!(seq.docs, par.docs, "{scenario} differs across exec modes");
            assert_eq!(seq.ledger, par.ledger);
        }
    }

    #[test]
    fn s3_augments_every_page() {
        let c = corpus(true);
        let cfg =
            AttackConfig::new(Scenario::S3, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        let ctx = ScenarioContext {
            surrogate: None,
            predictor: None,
        };
        let run = run_scenario(&ctx, &c, &cfg, false).unwrap();
        for e in &run.ledger.entries {
            assert!(e.augment.is_some(), "doc {} missing augment", e.doc_id);
        }
    }
}
