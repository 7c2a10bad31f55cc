//! Training loops for the surrogate and the box predictor. Deterministic per
//! seed: document order is shuffled with a seeded stream and every gradient
//! accumulation runs sequentially.

use super::config::{PredictorConfig, PredictorTrainConfig, SurrogateConfig, SurrogateTrainConfig};
use super::optim::AdamW;
use super::predictor::{mean_iou, BBoxPredictor};
use super::surrogate::SurrogateModel;
use super::vocab::{LabelSet, Vocab};
use crate::data::Corpus;
use crate::diff::{Graph, OverlapKind, Tensor};
use crate::error::{Error, Result};
use crate::eval::entity_f1_corpus;
use crate::exec::map_indexed;
use crate::rng::{derive_seed, stream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub heldout_f1: f64,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub heldout_miou: f64,
    pub train_miou_curve: Vec<f64>,
}

fn epoch_lr(base: f64, final_frac: f64, epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let t = epoch as f64 / (total - 1) as f64;
    base * (1.0 - (1.0 - final_frac) * t)
}

fn accumulate(total: &mut [Vec<f64>], grads: Vec<Option<Vec<f64>>>) {
    for (t, g) in total.iter_mut().zip(grads) {
        if let Some(g) = g {
            for (a, b) in t.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

/// Train the surrogate token classifier. The vocabulary and label set come
/// from the training split; clean span F1 on the held-out split is reported.
pub fn train_surrogate(
    corpus: &Corpus,
    model_cfg: &SurrogateConfig,
    train_cfg: &SurrogateTrainConfig,
) -> Result<(SurrogateModel, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let (train, held) = corpus.split_holdout(train_cfg.holdout_frac);
    if train.is_empty() {
        return Err(Error::InvalidArgument(
            "holdout fraction leaves no training documents".into(),
        ));
    }
    let vocab = Vocab::build(&train, model_cfg.vocab_min_count);
    let labels = LabelSet::build(corpus);
    let mut model = SurrogateModel::new(model_cfg.clone(), vocab, labels)?;

    let mut opt = AdamW::new(train_cfg.lr, train_cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_curve = Vec::with_capacity(train_cfg.epochs);
    let mut final_loss = f64::NAN;
    for epoch in 0..train_cfg.epochs {
        opt.lr = epoch_lr(
            train_cfg.lr,
            train_cfg.final_lr_frac,
            epoch,
            train_cfg.epochs,
        );
        let mut rng = stream(train_cfg.seed, "surrogate-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_docs.max(1)) {
            let mut grads: Vec<Vec<f64>> = model
                .params()
                .iter()
                .map(|p| vec![0.0; p.numel()])
                .collect();
            let mut batch_loss = 0.0;
            for &di in batch {
                let doc = &train.docs[di];
                let jittered;
                let doc = if train_cfg.coord_jitter > 0.0 {
                    let mut rng = stream(
                        derive_seed(train_cfg.seed, "jitter", epoch as u64),
                        &doc.id,
                        0,
                    );
                    let j = train_cfg.coord_jitter;
                    let mut d = doc.clone();
                    for t in d.tokens.iter_mut() {
                        let dx = rng.gen_range(-j..=j);
                        let dy = rng.gen_range(-j..=j);
                        t.bbox = t.bbox.translated(dx, dy).clamped();
                    }
                    jittered = d;
                    &jittered
                } else {
                    doc
                };
                let mut g = Graph::new();
                let bound = model.bind(&mut g, true);
                let loss = model.loss_from_doc(&mut g, &bound, doc)?;
                let lv = g.value(loss).item()?;
                if !lv.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        msg: format!("loss became non-finite on document {}", doc.id),
                    });
                }
                batch_loss += lv;
                g.backward(loss)?;
                let doc_grads: Vec<Option<Vec<f64>>> = bound
                    .vars()
                    .iter()
                    .map(|&v| g.grad(v).map(|s| s.to_vec()))
                    .collect();
                accumulate(&mut grads, doc_grads);
            }
            let scale = 1.0 / batch.len() as f64;
            for gv in grads.iter_mut() {
                for x in gv.iter_mut() {
                    *x *= scale;
                }
            }
            let mask = model.trainable_mask();
            let mut params = model.params_mut();
            let mut step_params: Vec<&mut Tensor> = Vec::new();
            let mut step_grads: Vec<Vec<f64>> = Vec::new();
            for ((p, g), keep) in params.drain(..).zip(grads).zip(&mask) {
                if *keep {
                    step_params.push(p);
                    step_grads.push(g);
                }
            }
            opt.step(&mut step_params, &step_grads);
            epoch_loss += batch_loss;
        }
        final_loss = epoch_loss / train.len() as f64;
        loss_curve.push(final_loss);
    }

    let heldout_f1 = if held.is_empty() {
        f64::NAN
    } else {
        clean_f1(&model, &held, true)?
    };
    Ok((
        model,
        TrainReport {
            epochs: train_cfg.epochs,
            final_train_loss: final_loss,
            heldout_f1,
            loss_curve,
        },
    ))
}

/// Clean span F1 of a model over a corpus (documents evaluated in parallel).
pub fn clean_f1(model: &SurrogateModel, corpus: &Corpus, parallel: bool) -> Result<f64> {
    let preds: Vec<Result<Vec<String>>> =
        map_indexed(&corpus.docs, parallel, |_, d| model.predict_tags(d));
    let mut pred_tags = Vec::with_capacity(preds.len());
    for p in preds {
        pred_tags.push(p?);
    }
    let gold: Vec<Vec<String>> = corpus.docs.iter().map(|d| d.gold_labels()).collect();
    entity_f1_corpus(&pred_tags, &gold)
}

/// Train the box predictor on frozen surrogate embeddings.
pub fn train_bbox_predictor(
    surrogate: &SurrogateModel,
    corpus: &Corpus,
    pred_cfg: &PredictorConfig,
    train_cfg: &PredictorTrainConfig,
) -> Result<(BBoxPredictor, PredictorReport)> {
    train_cfg.validate()?;
    if pred_cfg.in_dim != surrogate.cfg.dim {
        return Err(Error::Config(format!(
            "predictor in_dim {} does not match surrogate dim {}",
            pred_cfg.in_dim, surrogate.cfg.dim
        )));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let (train, held) = corpus.split_holdout(train_cfg.holdout_frac);
    let mut predictor = BBoxPredictor::new(pred_cfg.clone())?;

    // Frozen embeddings and targets, once per split.
    let embed_all = |c: &Corpus| -> Result<Vec<(Tensor, Tensor)>> {
        let rows: Vec<Result<(Tensor, Tensor)>> = map_indexed(&c.docs, true, |_, d| {
            Ok((surrogate.embed_tensor(d)?, predictor.targets(d)?))
        });
        rows.into_iter().collect()
    };
    let train_set = embed_all(&train)?;
    let held_set = embed_all(&held)?;

    let mut opt = AdamW::new(train_cfg.lr, train_cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut final_loss = f64::NAN;
    let mut miou_curve = Vec::with_capacity(train_cfg.epochs);
    let ema_on = train_cfg.ema_decay > 0.0;
    let mut ema: Vec<Vec<f64>> = predictor
        .params()
        .iter()
        .map(|p| p.data().to_vec())
        .collect();
    for epoch in 0..train_cfg.epochs {
        opt.lr = epoch_lr(
            train_cfg.lr,
            train_cfg.final_lr_frac,
            epoch,
            train_cfg.epochs,
        );
        let mut rng = stream(train_cfg.seed, "predictor-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_docs.max(1)) {
            let mut grads: Vec<Vec<f64>> = predictor
                .params()
                .iter()
                .map(|p| vec![0.0; p.numel()])
                .collect();
            for &di in batch {
                let (emb, target) = &train_set[di];
                let mut g = Graph::new();
                let bound = predictor.bind(&mut g, true);
                let e = g.constant(emb);
                let pred = predictor.forward(&mut g, &bound, e)?;
                let tgt = g.constant(target);
                let l1 = g.smooth_l1(pred, tgt)?;
                let gl = g.overlap_loss(pred, tgt, OverlapKind::Giou)?;
                let glw = g.scale(gl, train_cfg.lambda_giou);
                let loss = g.add(l1, glw)?;
                let lv = g.value(loss).item()?;
                if !lv.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        msg: "predictor loss became non-finite".into(),
                    });
                }
                epoch_loss += lv;
                g.backward(loss)?;
                let doc_grads: Vec<Option<Vec<f64>>> = bound
                    .vars()
                    .iter()
                    .map(|&v| g.grad(v).map(|s| s.to_vec()))
                    .collect();
                accumulate(&mut grads, doc_grads);
            }
            let scale = 1.0 / batch.len() as f64;
            for gv in grads.iter_mut() {
                for x in gv.iter_mut() {
                    *x *= scale;
                }
            }
            let mut params = predictor.params_mut();
            opt.step(&mut params, &grads);
        }
        final_loss = epoch_loss / train_set.len().max(1) as f64;
        if ema_on {
            let d = train_cfg.ema_decay;
            for (avg, p) in ema.iter_mut().zip(predictor.params()) {
                for (a, &v) in avg.iter_mut().zip(p.data()) {
                    *a = d * *a + (1.0 - d) * v;
                }
            }
            let mut tracked = predictor.clone();
            for (p, avg) in tracked.params_mut().into_iter().zip(&ema) {
                p.data_mut().copy_from_slice(avg);
            }
            miou_curve.push(corpus_miou(&tracked, &train, &train_set)?);
        } else {
            miou_curve.push(corpus_miou(&predictor, &train, &train_set)?);
        }
    }
    if ema_on {
        for (p, avg) in predictor.params_mut().into_iter().zip(&ema) {
            p.data_mut().copy_from_slice(avg);
        }
    }

    let heldout_miou = if held.is_empty() {
        f64::NAN
    } else {
        corpus_miou(&predictor, &held, &held_set)?
    };
    Ok((
        predictor,
        PredictorReport {
            epochs: train_cfg.epochs,
            final_train_loss: final_loss,
            heldout_miou,
            train_miou_curve: miou_curve,
        },
    ))
}

fn corpus_miou(
    predictor: &BBoxPredictor,
    corpus: &Corpus,
    embedded: &[(Tensor, Tensor)],
) -> Result<f64> {
    let per_doc: Vec<Result<(f64, usize)>> = map_indexed(&corpus.docs, true, |i, d| {
        let boxes = predictor.predict_boxes(&embedded[i].0)?;
        let gt: Vec<crate::geom::BBox> = match predictor.cfg.granularity {
            crate::data::Granularity::Word => d.tokens.iter().map(|t| t.bbox).collect(),
            crate::data::Granularity::Line => {
                let map = super::predictor::token_line_map(d)?;
                map.iter().map(|&li| d.lines[li].bbox).collect()
            }
        };
        Ok((mean_iou(&boxes, &gt)? * boxes.len() as f64, boxes.len()))
    });
    let mut total = 0.0;
    let mut count = 0usize;
    for r in per_doc {
        let (s, c) = r?;
        total += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no boxes to evaluate".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, Granularity, SynthConfig};

    fn small_corpus(docs: usize, seed: u64) -> Corpus {
        synth_corpus(&SynthConfig {
            docs,
            seed,
            rasters: false,
            ..Default::default()
        })
    }

    #[test]
    fn zero_epochs_stays_near_uniform() {
        let corpus = small_corpus(20, 31);
        let cfg = SurrogateConfig::desk(1);
        let tcfg = SurrogateTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (model, report) = train_surrogate(&corpus, &cfg, &tcfg).unwrap();
        // zero-initialized head predicts the first label everywhere
        assert!(report.heldout_f1 < 0.5, "f1 = {}", report.heldout_f1);
        let l = model.task_loss(&corpus.docs[0]).unwrap();
        assert!((l - (model.labels.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let corpus = small_corpus(16, 32);
        let cfg = SurrogateConfig::desk(2);
        let tcfg = SurrogateTrainConfig {
            epochs: 2,
            batch_docs: 4,
            ..Default::default()
        };
        let (a, ra) = train_surrogate(&corpus, &cfg, &tcfg).unwrap();
        let (b, rb) = train_surrogate(&corpus, &cfg, &tcfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(ra, rb);
    }

    #[test]
    fn training_reduces_loss_on_training_documents() {
        let corpus = small_corpus(24, 33);
        let cfg = SurrogateConfig::desk(3);
        let tcfg = SurrogateTrainConfig {
            epochs: 8,
            batch_docs: 6,
            lr: 1e-3,
            ..Default::default()
        };
        let (model, report) = train_surrogate(&corpus, &cfg, &tcfg).unwrap();
        let uniform = (model.labels.len() as f64).ln();
        let l = model.task_loss(&corpus.docs[0]).unwrap();
        assert!(l < uniform, "trained loss {l} not below uniform {uniform}");
        assert!(report.loss_curve[report.loss_curve.len() - 1] < report.loss_curve[0]);
    }

    #[test]
    fn predictor_overfits_single_document() {
        let corpus = small_corpus(6, 34);
        let cfg = SurrogateConfig::desk(4);
        let (surrogate, _) = train_surrogate(
            &corpus,
            &cfg,
            &SurrogateTrainConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let one = Corpus::new(vec![corpus.docs[0].clone()]);
        let pcfg = PredictorConfig::desk(cfg.dim, Granularity::Word, 5);
        let tcfg = PredictorTrainConfig {
            epochs: 1200,
            lr: 5e-3,
            final_lr_frac: 0.05,
            batch_docs: 1,
            holdout_frac: 0.0,
            ..Default::default()
        };
        let (predictor, report) = train_bbox_predictor(&surrogate, &one, &pcfg, &tcfg).unwrap();
        let emb = surrogate.embed_tensor(&one.docs[0]).unwrap();
        let boxes = predictor.predict_boxes(&emb).unwrap();
        let gt: Vec<_> = one.docs[0].tokens.iter().map(|t| t.bbox).collect();
        let miou = mean_iou(&boxes, &gt).unwrap();
        assert!(miou > 0.9, "memorization miou = {miou}");
        // training mIoU improved over the run
        assert!(report.train_miou_curve[report.epochs - 1] > report.train_miou_curve[0]);
    }

    #[test]
    fn predictor_rejects_mismatched_dim() {
        let corpus = small_corpus(6, 35);
        let cfg = SurrogateConfig::desk(6);
        let (surrogate, _) = train_surrogate(
            &corpus,
            &cfg,
            &SurrogateTrainConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        let pcfg = PredictorConfig::desk(cfg.dim + 1, Granularity::Word, 5);
        let err = train_bbox_predictor(&surrogate, &corpus, &pcfg, &Default::default());
        assert!(err.is_err());
    }
}
