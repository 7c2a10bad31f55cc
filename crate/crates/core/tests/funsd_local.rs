//! Checks against a locally available FUNSD-style dataset. These run only
//! when `DOCADV_FUNSD_DIR` points at the dataset root (the directory holding
//! `training_data/` and `testing_data/`); otherwise they are skipped.

use docadv_core::data::{load_annotations, stats, LoadOptions};
use std::path::PathBuf;

fn funsd_root() -> Option<PathBuf> {
    let root = PathBuf::from(std::env::var_os("DOCADV_FUNSD_DIR")?);
    root.join("testing_data").is_dir().then_some(root)
}

#[test]
fn funsd_test_split_word_and_line_counts() {
    let Some(root) = funsd_root() else {
        eprintln!("DOCADV_FUNSD_DIR not set; skipping the local dataset check");
        return;
    };
    let corpus = load_annotations(&root.join("testing_data"), &LoadOptions::default())
        .expect("local dataset loads");
    let s = stats(&corpus);
    assert_eq!(s.words, 8707, "test split word boxes");
    assert_eq!(s.lines, 2270, "derived test split line boxes");
}
