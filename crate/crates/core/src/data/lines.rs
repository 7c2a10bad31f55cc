//! Word -> line derivation by merging vertically aligned word boxes.

use super::document::{Document, Line};

/// Group words into lines: two words join the same line when their vertical
/// centers are within 0.5 x the median word height and the horizontal gap is
/// at most 1.0 x the median word height. Groups are ordered left to right;
/// the line box is the union of member boxes.
pub fn merge_lines(doc: &Document) -> Document {
    let mut out = doc.clone();
    out.lines = derive_lines(doc);
    out
}

fn derive_lines(doc: &Document) -> Vec<Line> {
    let n = doc.tokens.len();
    if n == 0 {
        return Vec::new();
    }
    let mut heights: Vec<f64> = doc.tokens.iter().map(|t| t.bbox.height()).collect();
    heights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_h = heights[heights.len() / 2];
    let v_tol = 0.5 * median_h;
    let gap_tol = 1.0 * median_h;

    // Reading order: left to right, ties by vertical position then id.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ta = &doc.tokens[a].bbox;
        let tb = &doc.tokens[b].bbox;
        ta.x0
            .partial_cmp(&tb.x0)
            .unwrap()
            .then(ta.y0.partial_cmp(&tb.y0).unwrap())
            .then(a.cmp(&b))
    });

    struct Cluster {
        members: Vec<usize>,
        yc_sum: f64,
        max_x1: f64,
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    for &i in &order {
        let b = &doc.tokens[i].bbox;
        let yc = (b.y0 + b.y1) / 2.0;
        let mut best: Option<usize> = None;
        let mut best_gap = f64::INFINITY;
        for (ci, cl) in clusters.iter().enumerate() {
            let cl_yc = cl.yc_sum / cl.members.len() as f64;
            let gap = b.x0 - cl.max_x1;
            if (yc - cl_yc).abs() <= v_tol && gap <= gap_tol && gap < best_gap {
                best = Some(ci);
                best_gap = gap;
            }
        }
        match best {
            Some(ci) => {
                clusters[ci].members.push(i);
                clusters[ci].yc_sum += yc;
                clusters[ci].max_x1 = clusters[ci].max_x1.max(b.x1);
            }
            None => clusters.push(Cluster {
                members: vec![i],
                yc_sum: yc,
                max_x1: b.x1,
            }),
        }
    }

    // Stable output order: top to bottom, then left to right.
    let mut lines: Vec<Line> = clusters
        .into_iter()
        .map(|cl| {
            let mut members = cl.members;
            members.sort_by(|&a, &b| {
                doc.tokens[a]
                    .bbox
                    .x0
                    .partial_cmp(&doc.tokens[b].bbox.x0)
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let bbox = members
                .iter()
                .map(|&m| doc.tokens[m].bbox)
                .reduce(|acc, b| acc.union_bounds(&b))
                .expect("non-empty cluster");
            let text = members
                .iter()
                .map(|&m| doc.tokens[m].text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            Line {
                members,
                bbox,
                text,
            }
        })
        .collect();
    lines.sort_by(|a, b| {
        a.bbox
            .y0
            .partial_cmp(&b.bbox.y0)
            .unwrap()
            .then(a.bbox.x0.partial_cmp(&b.bbox.x0).unwrap())
    });
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::document::Token;
    use crate::geom::BBox;

    fn doc_of(tokens: Vec<(&str, f64, f64, f64, f64)>) -> Document {
        Document {
            id: "t".into(),
            tokens: tokens
                .into_iter()
                .enumerate()
                .map(|(i, (text, x0, y0, x1, y1))| Token {
                    text: text.into(),
                    bbox: BBox::new(x0, y0, x1, y1).unwrap(),
                    label: "O".into(),
                    word_id: i,
                })
                .collect(),
            lines: vec![],
            raster: None,
            page: (100, 100),
        }
    }

    #[test]
    fn single_word_is_a_single_line() {
        let doc = doc_of(vec![("hello", 10.0, 10.0, 60.0, 30.0)]);
        let out = merge_lines(&doc);
        assert_eq!(out.lines.len(), 1);
        assert_eq!(out.lines[0].bbox, doc.tokens[0].bbox);
        assert_eq!(out.lines[0].text, "hello");
    }

    #[test]
    fn same_baseline_small_gap_merges() {
        // heights 20, median 20; gap 10 <= 20 merges
        let doc = doc_of(vec![
            ("hello", 10.0, 10.0, 60.0, 30.0),
            ("world", 70.0, 10.0, 120.0, 30.0),
        ]);
        let out = merge_lines(&doc);
        assert_eq!(out.lines.len(), 1);
        assert_eq!(out.lines[0].members, vec![0, 1]);
        assert_eq!(out.lines[0].text, "hello world");
        assert_eq!(
            out.lines[0].bbox,
            BBox::new(10.0, 10.0, 120.0, 30.0).unwrap()
        );
    }

    #[test]
    fn vertical_separation_splits() {
        // 3x median height apart vertically
        let doc = doc_of(vec![
            ("a", 10.0, 10.0, 40.0, 30.0),
            ("b", 10.0, 70.0, 40.0, 90.0),
        ]);
        let out = merge_lines(&doc);
        assert_eq!(out.lines.len(), 2);
    }

    #[test]
    fn wide_gap_splits() {
        let doc = doc_of(vec![
            ("a", 10.0, 10.0, 40.0, 30.0),
            ("b", 200.0, 10.0, 240.0, 30.0),
        ]);
        let out = merge_lines(&doc);
        assert_eq!(out.lines.len(), 2);
    }

    #[test]
    fn merge_is_idempotent_at_line_level() {
        let doc = doc_of(vec![
            ("a", 10.0, 10.0, 40.0, 30.0),
            ("b", 50.0, 10.0, 90.0, 30.0),
            ("c", 200.0, 12.0, 260.0, 32.0),
            ("d", 10.0, 70.0, 60.0, 90.0),
        ]);
        let once = merge_lines(&doc);
        // Re-merge treating each line as a word.
        let line_doc = doc_of(
            once.lines
                .iter()
                .map(|l| ("x", l.bbox.x0, l.bbox.y0, l.bbox.x1, l.bbox.y1))
                .collect(),
        );
        let again = merge_lines(&line_doc);
        assert_eq!(again.lines.len(), once.lines.len());
        for (l2, l1) in again.lines.iter().zip(&once.lines) {
            assert_eq!(l2.bbox, l1.bbox);
        }
    }

    #[test]
    fn every_word_in_exactly_one_line() {
        let doc = doc_of(vec![
            ("a", 10.0, 10.0, 40.0, 30.0),
            ("b", 50.0, 11.0, 90.0, 31.0),
            ("c", 10.0, 70.0, 60.0, 90.0),
            ("d", 70.0, 70.0, 110.0, 90.0),
            ("e", 500.0, 70.0, 560.0, 90.0),
        ]);
        let out = merge_lines(&doc);
        out.validate().unwrap();
        let total: usize = out.lines.iter().map(|l| l.members.len()).sum();
        assert_eq!(total, doc.tokens.len());
    }
}
