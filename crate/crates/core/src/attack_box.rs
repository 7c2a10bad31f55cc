//! Layout attackers: budget-constrained random shift and projected gradient
//! ascent on the summed token embeddings.

use crate::data::{Document, Granularity};
use crate::diff::{Graph, OverlapKind, Tensor};
use crate::error::{Error, Result};
use crate::geom::{
    iou_raw, max_axis_shift, project_to_budget, BBox, BoxParam, LayoutBudget, GRID_MAX,
    IOU_TOLERANCE,
};
use crate::model::{BBoxPredictor, SurrogateModel};
use crate::rng::doc_stream;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub steps: usize,
    pub alpha: f64,
    pub lambda_box: f64,
    pub tau: LayoutBudget,
}

impl PgdConfig {
    pub fn new(tau: LayoutBudget) -> Self {
        PgdConfig {
            steps: 10,
            alpha: 0.05,
            lambda_box: 1.0,
            tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("pgd steps must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "pgd alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.lambda_box.is_nan() || self.lambda_box <= 0.0 {
            return Err(Error::Config(format!(
                "lambda_box must be positive, got {}",
                self.lambda_box
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomShiftConfig {
    pub tau: LayoutBudget,
    pub seed: u64,
}

/// Result of a layout attack on one document.
#[derive(Debug, Clone)]
pub struct LayoutOutcome {
    pub doc: Document,
    /// Realized IoU against the original box, per unit at the attack
    /// granularity.
    pub unit_ious: Vec<f64>,
    /// Set exactly when every returned unit box equals its original.
    pub failed: bool,
    pub notes: Vec<String>,
}

/// One evaluated PGD candidate, exportable as a structured trace record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub step: usize,
    pub tau_variant: f64,
    pub l_task: f64,
    /// Mean realized IoU against the original boxes.
    pub mean_iou: f64,
    /// Mean IoU of the raw (pre-projection) candidate boxes against the
    /// originals; tracks how far the box trajectory itself wandered.
    pub raw_mean_iou: f64,
    pub feasible_pre_projection: bool,
    pub selected: bool,
}

/// Replace unit boxes at a granularity. Word units swap the token box; line
/// units apply the line's affine change (translate + scale) to every member
/// word, preserving relative layout inside the line. Changed boxes are
/// clamped to the grid and rounded; untouched units stay bit-identical.
pub fn realize_boxes(
    doc: &Document,
    granularity: Granularity,
    targets: &[BBox],
) -> Result<Document> {
    let units = doc.unit_count(granularity);
    if targets.len() != units {
        return Err(Error::InvalidArgument(format!(
            "{} target boxes for {} {granularity} units",
            targets.len(),
            units
        )));
    }
    let mut out = doc.clone();
    match granularity {
        Granularity::Word => {
            for (i, target) in targets.iter().enumerate() {
                if *target == doc.tokens[i].bbox {
                    continue;
                }
                out.tokens[i].bbox = target.clamped().rounded();
            }
            for line in out.lines.iter_mut() {
                line.bbox = line
                    .members
                    .iter()
                    .map(|&m| out.tokens[m].bbox)
                    .reduce(|a, b| a.union_bounds(&b))
                    .expect("lines are non-empty");
            }
        }
        Granularity::Line => {
            for (li, target) in targets.iter().enumerate() {
                let old = doc.lines[li].bbox;
                if *target == old {
                    continue;
                }
                let sx = target.width() / old.width();
                let sy = target.height() / old.height();
                for &m in &doc.lines[li].members {
                    let b = &doc.tokens[m].bbox;
                    let mapped = BBox {
                        x0: target.x0 + (b.x0 - old.x0) * sx,
                        y0: target.y0 + (b.y0 - old.y0) * sy,
                        x1: target.x0 + (b.x1 - old.x0) * sx,
                        y1: target.y0 + (b.y1 - old.y0) * sy,
                    };
                    out.tokens[m].bbox = mapped.clamped().rounded();
                }
                out.lines[li].bbox = doc.lines[li]
                    .members
                    .iter()
                    .map(|&m| out.tokens[m].bbox)
                    .reduce(|a, b| a.union_bounds(&b))
                    .expect("lines are non-empty");
            }
        }
    }
    Ok(out)
}

/// Realize unit targets while keeping every realized unit inside the IoU
/// budget after grid rounding. Displacements that violate the budget are
/// damped toward the original; the terminal fallback leaves the unit
/// untouched.
pub fn realize_within_budget(
    doc: &Document,
    granularity: Granularity,
    targets: &[BBox],
    tau: f64,
) -> Result<(Document, Vec<f64>)> {
    let originals = doc.unit_boxes(granularity);
    let mut scaled: Vec<BBox> = targets.to_vec();
    let mut damp: Vec<f64> = vec![1.0; targets.len()];
    for _round in 0..40 {
        let realized = realize_boxes(doc, granularity, &scaled)?;
        let new_units = realized.unit_boxes(granularity);
        let mut all_ok = true;
        let mut ious = Vec::with_capacity(new_units.len());
        for (i, (orig, new)) in originals.iter().zip(&new_units).enumerate() {
            let v = if orig == new { 1.0 } else { iou_raw(orig, new) };
            ious.push(v);
            if v < tau - IOU_TOLERANCE {
                all_ok = false;
                damp[i] *= 0.7;
                scaled[i] = if damp[i] < 1e-3 {
                    originals[i]
                } else {
                    BoxParam::lerp(
                        &BoxParam::encode(&originals[i]),
                        &BoxParam::encode(&targets[i]),
                        damp[i],
                    )
                    .decode()
                };
            }
        }
        if all_ok {
            return Ok((realized, ious));
        }
    }
    // Fallback: everything it could not place stays at the original.
    let realized = realize_boxes(doc, granularity, &originals)?;
    let ious = vec![1.0; originals.len()];
    Ok((realized, ious))
}

/// Per box: pick one of five modes (shift in four directions or shrink about
/// the center), with the translation magnitude uniform inside the closed-form
/// feasibility bound and the scale factor uniform in [sqrt(tau), 1].
pub fn random_shift(
    doc: &Document,
    granularity: Granularity,
    cfg: &RandomShiftConfig,
) -> Result<LayoutOutcome> {
    let tau = cfg.tau.tau();
    let originals = doc.unit_boxes(granularity);
    let mut targets = Vec::with_capacity(originals.len());
    let mut notes = Vec::new();
    for (i, orig) in originals.iter().enumerate() {
        if orig.validate().is_err() {
            notes.push(format!("unit {i}: degenerate box skipped"));
            targets.push(*orig);
            continue;
        }
        let mut rng = doc_stream(cfg.seed, "random-shift", &doc.id, i as u64);
        let mode = rng.gen_range(0..5u8);
        let cand = match mode {
            0..=3 => {
                let extent = if mode < 2 {
                    orig.width()
                } else {
                    orig.height()
                };
                let bound = max_axis_shift(tau, extent)?;
                let mag = rng.gen_range(0.0..=bound);
                match mode {
                    0 => orig.translated(-mag, 0.0),
                    1 => orig.translated(mag, 0.0),
                    2 => orig.translated(0.0, -mag),
                    _ => orig.translated(0.0, mag),
                }
            }
            _ => {
                let s_min = tau.sqrt();
                let f = rng.gen_range(s_min..=1.0);
                orig.scaled_about_center(f, f)
            }
        };
        targets.push(cand);
    }
    let (realized, unit_ious) = realize_within_budget(doc, granularity, &targets, tau)?;
    let new_units = realized.unit_boxes(granularity);
    let failed = originals == new_units;
    Ok(LayoutOutcome {
        doc: realized,
        unit_ious,
        failed,
        notes,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Normalized box parameters of a unit: the token's own row at word
/// granularity, the mean over member rows at line granularity.
fn unit_params(
    params: &Tensor,
    granularity: Granularity,
    line_members: &[Vec<usize>],
    units: usize,
) -> Vec<[f64; 4]> {
    let d = params.data();
    match granularity {
        Granularity::Word => (0..units)
            .map(|i| [d[i * 4], d[i * 4 + 1], d[i * 4 + 2], d[i * 4 + 3]])
            .collect(),
        Granularity::Line => line_members
            .iter()
            .map(|members| {
                let mut acc = [0.0f64; 4];
                for &m in members {
                    for j in 0..4 {
                        acc[j] += d[m * 4 + j];
                    }
                }
                for v in acc.iter_mut() {
                    *v /= members.len() as f64;
                }
                acc
            })
            .collect(),
    }
}

fn encode_unit_norm(b: &BBox) -> [f64; 4] {
    let p = BoxParam::encode(b);
    [
        p.cx / GRID_MAX,
        p.cy / GRID_MAX,
        (b.width() / GRID_MAX).ln(),
        (b.height() / GRID_MAX).ln(),
    ]
}

fn decode_unit_norm(p: &[f64; 4]) -> BBox {
    BoxParam {
        cx: p[0] * GRID_MAX,
        cy: p[1] * GRID_MAX,
        logw: p[2] + GRID_MAX.ln(),
        logh: p[3] + GRID_MAX.ln(),
    }
    .decode()
}

/// The pool of projection budgets evaluated for a run at `tau`: the run's
/// own budget plus every stricter standard budget. Projections at stricter
/// budgets stay feasible at looser ones, so candidate pools are nested
/// across the standard budgets and the selected task loss is monotone in
/// the budget by construction.
fn pool_taus(tau: f64) -> Vec<f64> {
    let mut taus = vec![tau];
    for t in [0.6, 0.75, 0.9] {
        if t > tau + 1e-12 {
            taus.push(t);
        }
    }
    taus
}

/// Gradient ascent on the adversarial objective (task loss minus the
/// weighted mean `1 - IoU` between boxes predicted from clean and perturbed
/// embeddings), realizing a budget-projected candidate document after every
/// step and returning the feasible candidate with maximal task loss. If the
/// best candidate leaves every unit untouched the attack is flagged failed
/// and the clean document is returned.
pub fn pgd_attack(
    surrogate: &SurrogateModel,
    predictor: &BBoxPredictor,
    doc: &Document,
    cfg: &PgdConfig,
) -> Result<(LayoutOutcome, Vec<CandidateRecord>)> {
    cfg.validate()?;
    let granularity = predictor.cfg.granularity;
    if predictor.cfg.in_dim != surrogate.cfg.dim {
        return Err(Error::Config(format!(
            "predictor in_dim {} does not match surrogate dim {}",
            predictor.cfg.in_dim, surrogate.cfg.dim
        )));
    }
    let labels = surrogate.label_ids(doc)?;
    let clean_embed = surrogate.embed_tensor(doc)?;
    let clean_params = predictor.predict_params(&clean_embed)?;

    let line_members: Vec<Vec<usize>> = doc.lines.iter().map(|l| l.members.clone()).collect();
    let originals = doc.unit_boxes(granularity);
    let units = originals.len();
    let clean_unit = unit_params(&clean_params, granularity, &line_members, units);
    let orig_params: Vec<[f64; 4]> = originals.iter().map(encode_unit_norm).collect();
    let taus = pool_taus(cfg.tau.tau());

    let mut adv_embed = clean_embed.clone();
    let mut candidates: Vec<(CandidateRecord, Document, Vec<f64>)> = Vec::new();
    for step in 1..=cfg.steps {
        // Ascend the adversarial objective.
        let mut g = Graph::new();
        let e = g.input(&adv_embed);
        let bound_s = surrogate.bind(&mut g, false);
        let bound_p = predictor.bind(&mut g, false);
        let l_task = surrogate.loss_from_embeddings(&mut g, &bound_s, e, &labels)?;
        let pred = predictor.forward(&mut g, &bound_p, e)?;
        let clean_const = g.constant(&clean_params);
        let iou_term = g.overlap_loss(pred, clean_const, OverlapKind::Iou)?;
        let neg = g.scale(iou_term, -cfg.lambda_box);
        let l_adv = g.add(l_task, neg)?;
        g.backward(l_adv)?;
        let grad = g
            .grad(e)
            .ok_or_else(|| Error::Attack {
                step,
                msg: "objective does not depend on the embedding".into(),
            })?
            .to_vec();
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Attack {
                step,
                msg: "non-finite gradient".into(),
            });
        }
        for (v, gr) in adv_embed.data_mut().iter_mut().zip(&grad) {
            *v += cfg.alpha * sign(*gr);
        }

        // Recompute predicted boxes and realize one candidate per pool budget.
        let adv_params = predictor.predict_params(&adv_embed)?;
        let adv_unit = unit_params(&adv_params, granularity, &line_members, units);
        let cand_boxes: Vec<BBox> = (0..units)
            .map(|i| {
                let mut p = orig_params[i];
                for j in 0..4 {
                    p[j] += adv_unit[i][j] - clean_unit[i][j];
                }
                decode_unit_norm(&p)
            })
            .collect();

        let raw_mean_iou = cand_boxes
            .iter()
            .zip(&originals)
            .map(|(c, o)| {
                if c.validate().is_ok() {
                    iou_raw(o, c)
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / units.max(1) as f64;
        for &tau_v in &taus {
            let feasible_pre = cand_boxes
                .iter()
                .zip(&originals)
                .all(|(c, o)| c.validate().is_ok() && iou_raw(o, c) >= tau_v - IOU_TOLERANCE);
            let mut projected = Vec::with_capacity(units);
            for (orig, cand) in originals.iter().zip(&cand_boxes) {
                let p = if cand.validate().is_ok() {
                    project_to_budget(orig, cand, tau_v)?
                } else {
                    *orig
                };
                projected.push(p);
            }
            let (cand_doc, ious) = realize_within_budget(doc, granularity, &projected, tau_v)?;
            let l_realized = surrogate.task_loss(&cand_doc)?;
            let mean_iou = ious.iter().sum::<f64>() / ious.len().max(1) as f64;
            candidates.push((
                CandidateRecord {
                    step,
                    tau_variant: tau_v,
                    l_task: l_realized,
                    mean_iou,
                    raw_mean_iou,
                    feasible_pre_projection: feasible_pre,
                    selected: false,
                },
                cand_doc,
                ious,
            ));
        }
    }

    // Keep the candidate with maximal task loss; ties prefer higher mean
    // IoU, then the earlier candidate.
    let mut best = 0usize;
    for i in 1..candidates.len() {
        let (ci, cb) = (&candidates[i].0, &candidates[best].0);
        if ci.l_task > cb.l_task || (ci.l_task == cb.l_task && ci.mean_iou > cb.mean_iou) {
            best = i;
        }
    }
    candidates[best].0.selected = true;
    let records: Vec<CandidateRecord> = candidates.iter().map(|(r, _, _)| r.clone()).collect();
    let (_, best_doc, best_ious) = candidates.swap_remove(best);
    let failed = best_doc.unit_boxes(granularity) == originals;
    let outcome = if failed {
        LayoutOutcome {
            doc: doc.clone(),
            unit_ious: vec![1.0; units],
            failed: true,
            notes: Vec::new(),
        }
    } else {
        LayoutOutcome {
            doc: best_doc,
            unit_ious: best_ious,
            failed: false,
            notes: Vec::new(),
        }
    };
    Ok((outcome, records))
}
