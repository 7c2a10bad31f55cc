//! Attack reports: clean/attacked scores, drops, and the scenario-by-method
//! summary table.

use super::metrics::entity_f1_corpus;
use super::verify::ComplianceReport;
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::model::SurrogateModel;
use crate::scenario::{AttackConfig, BudgetLedger, Method, Scenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub scenario: Scenario,
    pub granularity: String,
    pub method: Method,
    pub tau: f64,
    pub rho: f64,
    /// Clean and attacked span F1, in percent.
    pub clean_f1: f64,
    pub attacked_f1: f64,
    /// Absolute drop in percentage points (headline number).
    pub drop_pp: f64,
    /// Relative drop, logged alongside but never the headline.
    pub drop_relative: f64,
    pub documents: usize,
    pub failed_documents: usize,
    pub compliance: Option<ComplianceReport>,
}

/// Tag predictions for every document of a corpus.
pub fn predict_corpus(
    model: &SurrogateModel,
    corpus: &Corpus,
    parallel: bool,
) -> Result<Vec<Vec<String>>> {
    let preds: Vec<Result<Vec<String>>> =
        map_indexed(&corpus.docs, parallel, |_, d| model.predict_tags(d));
    preds.into_iter().collect()
}

/// Score an attack: clean F1 on the original corpus, attacked F1 on the
/// perturbed corpus (against the original gold labels), plus an independent
/// budget re-check.
pub fn evaluate_attack(
    model: &SurrogateModel,
    original: &Corpus,
    perturbed: &Corpus,
    cfg: &AttackConfig,
    ledger: Option<&BudgetLedger>,
    parallel: bool,
) -> Result<AttackReport> {
    if original.len() != perturbed.len() {
        return Err(Error::InvalidArgument(format!(
            "corpus sizes differ: {} vs {}",
            original.len(),
            perturbed.len()
        )));
    }
    let gold: Vec<Vec<String>> = original.docs.iter().map(|d| d.gold_labels()).collect();
    let clean_pred = predict_corpus(model, original, parallel)?;
    let attacked_pred = predict_corpus(model, perturbed, parallel)?;
    let clean = entity_f1_corpus(&clean_pred, &gold)? * 100.0;
    let attacked = entity_f1_corpus(&attacked_pred, &gold)? * 100.0;
    let compliance = super::verify::verify_budgets(original, perturbed, cfg)?;
    let failed_documents = ledger
        .map(|l| {
            l.entries
                .iter()
                .filter(|e| e.layout_failed == Some(true))
                .count()
        })
        .unwrap_or(0);
    Ok(AttackReport {
        scenario: cfg.scenario,
        granularity: cfg.granularity.to_string(),
        method: cfg.method,
        tau: cfg.tau.tau(),
        rho: cfg.rho.rho(),
        clean_f1: clean,
        attacked_f1: attacked,
        drop_pp: clean - attacked,
        drop_relative: if clean > 0.0 {
            (clean - attacked) / clean
        } else {
            0.0
        },
        documents: original.len(),
        failed_documents,
        compliance: Some(compliance),
    })
}

/// Paired reports from evaluating one perturbed corpus on the model it was
/// crafted against and on an independently trained one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub on_source: AttackReport,
    pub on_target: AttackReport,
}

pub fn transfer_eval(
    source: &SurrogateModel,
    target: &SurrogateModel,
    original: &Corpus,
    perturbed: &Corpus,
    cfg: &AttackConfig,
    ledger: Option<&BudgetLedger>,
    parallel: bool,
) -> Result<TransferReport> {
    Ok(TransferReport {
        on_source: evaluate_attack(source, original, perturbed, cfg, ledger, parallel)?,
        on_target: evaluate_attack(target, original, perturbed, cfg, ledger, parallel)?,
    })
}

/// Scenario-by-method drop matrix rendered as an aligned text table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    pub rows: Vec<MatrixRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub scenario: Scenario,
    pub random_drop: Option<f64>,
    pub pgd_drop: Option<f64>,
}

impl ScenarioMatrix {
    pub fn from_reports(reports: &[AttackReport]) -> ScenarioMatrix {
        let mut rows = Vec::new();
        for scenario in Scenario::ALL {
            let pick = |method: Method| {
                reports
                    .iter()
                    .find(|r| r.scenario == scenario && r.method == method)
                    .map(|r| r.drop_pp)
            };
            let random_drop = pick(Method::Random);
            let pgd_drop = pick(Method::Pgd);
            if random_drop.is_some() || pgd_drop.is_some() {
                rows.push(MatrixRow {
                    scenario,
                    random_drop,
                    pgd_drop,
                });
            }
        }
        ScenarioMatrix { rows }
    }

    pub fn render(&self, title: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!("{title}\n"));
        out.push_str(&format!(
            "{:<10} {:>14} {:>14}\n",
            "Scenario", "Random drop", "PGD drop"
        ));
        for row in &self.rows {
            let fmt_cell = |v: Option<f64>| match v {
                Some(d) => format!("{d:>13.2}"),
                None => format!("{:>13}", "--"),
            };
            out.push_str(&format!(
                "{:<10} {} {}\n",
                row.scenario.to_string(),
                fmt_cell(row.random_drop),
                fmt_cell(row.pgd_drop)
            ));
        }
        out
    }
}
