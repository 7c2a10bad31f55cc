//! Metrics, budget verification, and attack reporting.

mod metrics;
mod report;
mod verify;

pub use metrics::{anls, entity_f1, entity_f1_corpus, extract_spans, levenshtein};
pub use report::{
    evaluate_attack, predict_corpus, transfer_eval, AttackReport, MatrixRow, ScenarioMatrix,
    TransferReport,
};
pub use verify::{verify_budgets, ComplianceReport, Violation};
