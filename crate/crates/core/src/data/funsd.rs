//! Annotation I/O.
//!
//! The native schema is a versioned superset of the common form-annotation
//! layout (`form` entries with `words`): it adds `schema_version`, a `page`
//! record, per-word BIO labels, and stores boxes already normalized to the
//! [0, 1000] grid as integers. Plain form annotations (no `schema_version`,
//! boxes in page pixels, entry-level labels only) load through the same
//! entry point; their word labels are derived from the entry label and
//! their lines are re-derived geometrically.

use super::document::{Corpus, Document, Line, Token};
use super::lines::merge_lines;
use crate::attack_pixel::{load_raster, save_raster};
use crate::error::{Error, Result};
use crate::geom::BBox;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WordRecord {
    text: String,
    box_: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

// `box` is a keyword; map the field name manually.
impl WordRecord {
    fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("text".into(), self.text.clone().into());
        m.insert(
            "box".into(),
            serde_json::json!([self.box_[0], self.box_[1], self.box_[2], self.box_[3]]),
        );
        if let Some(l) = &self.label {
            m.insert("label".into(), l.clone().into());
        }
        serde_json::Value::Object(m)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Page size to assume when neither the annotation nor a paired raster
    /// provides one (needed to normalize pixel-coordinate boxes).
    pub page_size: Option<(u32, u32)>,
}

fn get_f64(v: &serde_json::Value, what: &str, ctx: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Parse(format!("{ctx}: {what} is not a number")))
}

fn parse_box(v: &serde_json::Value, ctx: &str) -> Result<[f64; 4]> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Parse(format!("{ctx}: box is not an array")))?;
    if arr.len() != 4 {
        return Err(Error::Parse(format!(
            "{ctx}: box has {} entries, expected 4",
            arr.len()
        )));
    }
    Ok([
        get_f64(&arr[0], "box[0]", ctx)?,
        get_f64(&arr[1], "box[1]", ctx)?,
        get_f64(&arr[2], "box[2]", ctx)?,
        get_f64(&arr[3], "box[3]", ctx)?,
    ])
}

fn bio_from_entry(label: &str, word_idx: usize) -> String {
    let stem = label.trim().to_ascii_lowercase();
    if stem.is_empty() || stem == "other" || stem == "o" {
        "O".to_string()
    } else if word_idx == 0 {
        format!("B-{}", stem.to_ascii_uppercase())
    } else {
        format!("I-{}", stem.to_ascii_uppercase())
    }
}

fn load_document(path: &Path, opts: &LoadOptions) -> Result<Document> {
    let file = path.display().to_string();
    let bytes = std::fs::read(path)?;
    let root: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{file}: {e}")))?;
    let native = root.get("schema_version").is_some();
    if native {
        let v = root["schema_version"].as_u64().unwrap_or(0);
        if v != SCHEMA_VERSION as u64 {
            return Err(Error::Parse(format!(
                "{file}: unsupported schema_version {v} (expected {SCHEMA_VERSION})"
            )));
        }
    }
    let id = root
        .get("id")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "doc".into())
        });

    // Page size: annotation record, else paired raster, else options.
    let raster_path = raster_path_for(path, &id);
    let raster = raster_path
        .as_ref()
        .filter(|p| p.exists())
        .map(|p| load_raster(p))
        .transpose()?;
    let page: (u32, u32) = if let Some(p) = root.get("page") {
        let w = p
            .get("width")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse(format!("{file}: page.width missing")))?;
        let h = p
            .get("height")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse(format!("{file}: page.height missing")))?;
        (w as u32, h as u32)
    } else if let Some(r) = &raster {
        (r.width() as u32, r.height() as u32)
    } else if let Some(p) = opts.page_size {
        p
    } else {
        return Err(Error::Parse(format!(
            "{file}: no page size available (no page record, paired raster, or override)"
        )));
    };

    let form = root
        .get("form")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Parse(format!("{file}: missing form array")))?;

    let scale_x = if native { 1.0 } else { 1000.0 / page.0 as f64 };
    let scale_y = if native { 1.0 } else { 1000.0 / page.1 as f64 };

    let mut tokens: Vec<Token> = Vec::new();
    let mut lines: Vec<Line> = Vec::new();
    for (ei, entry) in form.iter().enumerate() {
        let ctx = format!("{file}: form[{ei}]");
        let entry_label = entry
            .get("label")
            .and_then(|v| v.as_str())
            .unwrap_or("other")
            .to_string();
        let words = entry
            .get("words")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Parse(format!("{ctx}: missing words array")))?;
        let mut members = Vec::new();
        for (wi, w) in words.iter().enumerate() {
            let wctx = format!("{ctx}.words[{wi}]");
            let text = w
                .get("text")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Parse(format!("{wctx}: missing text")))?
                .to_string();
            let raw = parse_box(
                w.get("box")
                    .ok_or_else(|| Error::Parse(format!("{wctx}: missing box")))?,
                &wctx,
            )?;
            if raw[2] <= raw[0] || raw[3] <= raw[1] {
                return Err(Error::Parse(format!(
                    "{wctx}: inverted or empty box [{}, {}, {}, {}]",
                    raw[0], raw[1], raw[2], raw[3]
                )));
            }
            let bbox = BBox::new(
                raw[0] * scale_x,
                raw[1] * scale_y,
                raw[2] * scale_x,
                raw[3] * scale_y,
            )
            .map_err(|e| Error::Parse(format!("{wctx}: {e}")))?;
            let label = match w.get("label").and_then(|v| v.as_str()) {
                Some(l) => l.to_string(),
                None => bio_from_entry(&entry_label, wi),
            };
            members.push(tokens.len());
            tokens.push(Token {
                text,
                bbox,
                label,
                word_id: tokens.len(),
            });
        }
        if native {
            if members.is_empty() {
                return Err(Error::Parse(format!("{ctx}: entry has no words")));
            }
            let bbox = members
                .iter()
                .map(|&m| tokens[m].bbox)
                .reduce(|a, b| a.union_bounds(&b))
                .unwrap();
            let text = members
                .iter()
                .map(|&m| tokens[m].text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            lines.push(Line {
                members,
                bbox,
                text,
            });
        }
    }

    let mut doc = Document {
        id,
        tokens,
        lines,
        raster,
        page,
    };
    if !native {
        doc = merge_lines(&doc);
    }
    doc.validate()?;
    Ok(doc)
}

fn raster_path_for(annotation: &Path, id: &str) -> Option<std::path::PathBuf> {
    let dir = annotation.parent()?;
    let base = dir.parent()?;
    Some(base.join("images").join(format!("{id}.png")))
}

/// Load every `annotations/*.json` under `dir` (or a single file), sorted by
/// file name. Paired rasters are read from a sibling `images/` directory.
pub fn load_annotations(path: &Path, opts: &LoadOptions) -> Result<Corpus> {
    let mut docs = Vec::new();
    if path.is_file() {
        docs.push(load_document(path, opts)?);
        return Ok(Corpus::new(docs));
    }
    let ann_dir = if path.join("annotations").is_dir() {
        path.join("annotations")
    } else {
        path.to_path_buf()
    };
    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(&ann_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Parse(format!(
            "no annotation files found under {}",
            ann_dir.display()
        )));
    }
    for f in files {
        docs.push(load_document(&f, opts)?);
    }
    Ok(Corpus::new(docs))
}

fn entry_label_of(doc: &Document, line: &Line) -> String {
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    for &m in &line.members {
        let stem = match doc.tokens[m].label.split_once('-') {
            Some((_, s)) => s.to_ascii_lowercase(),
            None => "other".to_string(),
        };
        *counts.entry(stem).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|(_, c)| *c)
        .map(|(s, _)| s)
        .unwrap_or_else(|| "other".into())
}

fn doc_to_json(doc: &Document) -> serde_json::Value {
    let form: Vec<serde_json::Value> = doc
        .lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let words: Vec<serde_json::Value> = line
                .members
                .iter()
                .map(|&m| {
                    let t = &doc.tokens[m];
                    let b = t.bbox.clamped().rounded();
                    WordRecord {
                        text: t.text.clone(),
                        box_: [b.x0, b.y0, b.x1, b.y1],
                        label: Some(t.label.clone()),
                    }
                    .to_json()
                })
                .collect();
            let lb = line.bbox.clamped().rounded();
            serde_json::json!({
                "id": i,
                "label": entry_label_of(doc, line),
                "text": line.text,
                "box": [lb.x0, lb.y0, lb.x1, lb.y1],
                "words": words,
            })
        })
        .collect();
    serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "id": doc.id,
        "page": {"width": doc.page.0, "height": doc.page.1},
        "form": form,
    })
}

/// Write a corpus as `annotations/*.json` plus `images/*.png` under `dir`.
/// Text is written exactly as stored (no Unicode normalization).
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    let ann = dir.join("annotations");
    std::fs::create_dir_all(&ann)?;
    for doc in &corpus.docs {
        let json = doc_to_json(doc);
        let mut out = serde_json::to_vec_pretty(&json)?;
        out.push(b'\n');
        std::fs::write(ann.join(format!("{}.json", doc.id)), out)?;
        if let Some(r) = &doc.raster {
            save_raster(r, &dir.join("images").join(format!("{}.png", doc.id)))?;
        }
    }
    Ok(())
}
