//! Budget-constrained multi-modal adversarial perturbations (layout, text,
//! pixel) against OCR-based document-understanding models, with a
//! self-contained differentiable surrogate.

pub mod attack_box;
pub mod attack_pixel;
pub mod attack_text;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geom;
pub mod model;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
