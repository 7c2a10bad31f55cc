//! Documents, annotation I/O, line derivation, and corpus generation.

mod document;
mod funsd;
mod lines;
mod stats;
mod synth;

pub use document::{Corpus, Document, Granularity, Line, Token};
pub use funsd::{load_annotations, write_corpus, LoadOptions, SCHEMA_VERSION};
pub use lines::merge_lines;
pub use stats::{stats, CorpusStats};
pub use synth::{synth_corpus, SynthConfig};
