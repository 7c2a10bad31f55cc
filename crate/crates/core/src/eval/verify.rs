//! Independent budget verification: recompute every per-box IoU and
//! document edit rate from the corpora themselves, trusting nothing the
//! attackers reported.

use crate::attack_text::doc_edit_rate;
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::geom::{iou, IOU_TOLERANCE};
use crate::scenario::AttackConfig;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub doc_id: String,
    pub kind: String,
    pub detail: String,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub documents: usize,
    pub boxes_checked: usize,
    pub violations: Vec<Violation>,
}

impl ComplianceReport {
    pub fn compliant(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-check the layout, text, and raster budgets of a perturbed corpus
/// against its original under a configuration. Frozen channels must be
/// bit-identical; attacked channels must satisfy their budgets.
pub fn verify_budgets(
    original: &Corpus,
    perturbed: &Corpus,
    cfg: &AttackConfig,
) -> Result<ComplianceReport> {
    let by_id: HashMap<&str, &crate::data::Document> =
        perturbed.docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut violations = Vec::new();
    let mut boxes_checked = 0usize;
    for orig in &original.docs {
        let pert = by_id.get(orig.id.as_str()).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "document {} missing from the perturbed corpus",
                orig.id
            ))
        })?;
        if orig.tokens.len() != pert.tokens.len() {
            return Err(Error::InvalidArgument(format!(
                "document {}: token counts differ ({} vs {})",
                orig.id,
                orig.tokens.len(),
                pert.tokens.len()
            )));
        }

        // Layout channel.
        if cfg.scenario.layout() {
            let tau = cfg.tau.tau();
            let orig_units = orig.unit_boxes(cfg.granularity);
            let pert_units = pert.unit_boxes(cfg.granularity);
            if orig_units.len() != pert_units.len() {
                violations.push(Violation {
                    doc_id: orig.id.clone(),
                    kind: "layout-structure".into(),
                    detail: format!(
                        "unit counts differ: {} vs {}",
                        orig_units.len(),
                        pert_units.len()
                    ),
                    value: pert_units.len() as f64,
                    bound: orig_units.len() as f64,
                });
                continue;
            }
            for (i, (o, p)) in orig_units.iter().zip(&pert_units).enumerate() {
                boxes_checked += 1;
                let v = if o == p { 1.0 } else { iou(o, p)? };
                if v < tau - IOU_TOLERANCE {
                    violations.push(Violation {
                        doc_id: orig.id.clone(),
                        kind: "layout-iou".into(),
                        detail: format!("unit {i} below the layout budget"),
                        value: v,
                        bound: tau,
                    });
                }
            }
        } else {
            for (i, (a, b)) in orig.tokens.iter().zip(&pert.tokens).enumerate() {
                boxes_checked += 1;
                if a.bbox != b.bbox {
                    violations.push(Violation {
                        doc_id: orig.id.clone(),
                        kind: "layout-frozen".into(),
                        detail: format!("token {i} box changed in a layout-frozen scenario"),
                        value: 0.0,
                        bound: 0.0,
                    });
                }
            }
        }

        // Text channel.
        if cfg.scenario.text() {
            let rate = doc_edit_rate(orig, pert)?;
            if rate > cfg.rho.rho() + 1e-12 {
                violations.push(Violation {
                    doc_id: orig.id.clone(),
                    kind: "text-rate".into(),
                    detail: "document edit rate above the text budget".into(),
                    value: rate,
                    bound: cfg.rho.rho(),
                });
            }
        } else {
            for (i, (a, b)) in orig.tokens.iter().zip(&pert.tokens).enumerate() {
                if a.text != b.text {
                    violations.push(Violation {
                        doc_id: orig.id.clone(),
                        kind: "text-frozen".into(),
                        detail: format!("token {i} text changed in a text-frozen scenario"),
                        value: 1.0,
                        bound: 0.0,
                    });
                }
            }
        }

        // Raster channel: frozen scenarios must not touch a single sample.
        if !cfg.scenario.pixel() {
            let changed = match (&orig.raster, &pert.raster) {
                (Some(a), Some(b)) => a != b,
                (None, None) => false,
                _ => true,
            };
            if changed {
                violations.push(Violation {
                    doc_id: orig.id.clone(),
                    kind: "pixel-frozen".into(),
                    detail: "raster changed in a pixel-frozen scenario".into(),
                    value: 1.0,
                    bound: 0.0,
                });
            }
        }
    }
    Ok(ComplianceReport {
        documents: original.len(),
        boxes_checked,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, Granularity, SynthConfig};
    use crate::scenario::{AttackConfig, Method, Scenario};

    fn corpus() -> Corpus {
        synth_corpus(&SynthConfig {
            docs: 5,
            seed: 81,
            rasters: false,
            ..Default::default()
        })
    }

    #[test]
    fn clean_vs_clean_is_fully_compliant() {
        let c = corpus();
        let cfg =
            AttackConfig::new(Scenario::S1, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        let report = verify_budgets(&c, &c, &cfg).unwrap();
        assert!(report.compliant());
        assert!(report.boxes_checked > 0);
    }

    #[test]
    fn constructed_violation_is_itemized_exactly_once() {
        let c = corpus();
        let mut bad = c.clone();
        // push one line far past the budget
        let line0 = bad.docs[0].lines[0].clone();
        let shift = line0.bbox.width() * 0.8;
        for &m in &line0.members {
            bad.docs[0].tokens[m].bbox = bad.docs[0].tokens[m].bbox.translated(shift, 0.0);
        }
        bad.docs[0].lines[0].bbox = line0.bbox.translated(shift, 0.0);
        let cfg =
            AttackConfig::new(Scenario::S1, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        let report = verify_budgets(&c, &bad, &cfg).unwrap();
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        assert_eq!(report.violations[0].kind, "layout-iou");
        assert_eq!(report.violations[0].doc_id, c.docs[0].id);
    }

    #[test]
    fn frozen_text_change_is_flagged() {
        let c = corpus();
        let mut bad = c.clone();
        bad.docs[1].tokens[0].text = "tampered".into();
        let cfg =
            AttackConfig::new(Scenario::S1, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        let report = verify_budgets(&c, &bad, &cfg).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == "text-frozen" && v.doc_id == c.docs[1].id));
    }

    #[test]
    fn id_mismatch_is_an_error() {
        let c = corpus();
        let mut other = c.clone();
        other.docs[0].id = "renamed".into();
        let cfg =
            AttackConfig::new(Scenario::S1, Granularity::Line, Method::Random, 0.6, 0.1).unwrap();
        assert!(verify_budgets(&c, &other, &cfg).is_err());
    }

    #[test]
    fn random_shift_output_passes_end_to_end() {
        use crate::scenario::{run_scenario, ScenarioContext};
        let c = synth_corpus(&SynthConfig {
            docs: 40,
            seed: 82,
            rasters: false,
            ..Default::default()
        });
        let cfg = AttackConfig {
            seed: 5,
            ..AttackConfig::new(Scenario::S1, Granularity::Word, Method::Random, 0.6, 0.1).unwrap()
        };
        let ctx = ScenarioContext {
            surrogate: None,
            predictor: None,
        };
        let run = run_scenario(&ctx, &c, &cfg, true).unwrap();
        let pert = Corpus::new(run.docs);
        let report = verify_budgets(&c, &pert, &cfg).unwrap();
        assert!(
            report.boxes_checked >= 1000,
            "checked {}",
            report.boxes_checked
        );
        assert!(report.compliant(), "{:?}", report.violations.first());
    }
}
