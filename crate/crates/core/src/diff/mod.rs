//! Minimal reverse-mode differentiation engine.
//!
//! A [`Graph`] records forward operations on dense f64 tensors and replays
//! them backward in reverse creation order. One graph is single-threaded;
//! distinct graphs may run on distinct threads. Everything is f64 and every
//! kernel is a plain sequential loop, so gradients are bit-deterministic.

mod check;
mod graph;
mod tensor;

pub use check::grad_check;
pub use graph::{Graph, OverlapKind, Var};
pub use tensor::Tensor;

/// Epsilon used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
