//! Per-token box predictor: input projection MLP, transformer encoder, and
//! an output MLP emitting center/log-size box parameters in normalized page
//! units. At line granularity every token regresses the box of its line.

use super::config::PredictorConfig;
use super::encoder::{BoundEncoder, EncoderWeights};
use crate::data::{Document, Granularity};
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{BBox, BoxParam, GRID_MAX};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights {
    pub proj1_w: Tensor,
    pub proj1_b: Tensor,
    pub proj2_w: Tensor,
    pub proj2_b: Tensor,
    pub encoder: EncoderWeights,
    pub out1_w: Tensor,
    pub out1_b: Tensor,
    pub out2_w: Tensor,
    pub out2_b: Tensor,
}

pub struct BoundPredictor {
    proj1_w: Var,
    proj1_b: Var,
    proj2_w: Var,
    proj2_b: Var,
    enc: BoundEncoder,
    out1_w: Var,
    out1_b: Var,
    out2_w: Var,
    out2_b: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BBoxPredictor {
    pub cfg: PredictorConfig,
    pub weights: PredictorWeights,
}

/// Normalized parameter encoding used for regression targets: centers in
/// [0, 1] and log-sizes of [0, 1] extents.
pub fn encode_norm(b: &BBox) -> [f64; 4] {
    let p = BoxParam::encode(b);
    [
        p.cx / GRID_MAX,
        p.cy / GRID_MAX,
        (b.width() / GRID_MAX).ln(),
        (b.height() / GRID_MAX).ln(),
    ]
}

/// Decode normalized parameters back to grid units.
pub fn decode_norm(p: &[f64]) -> BBox {
    BoxParam {
        cx: p[0] * GRID_MAX,
        cy: p[1] * GRID_MAX,
        logw: p[2] + GRID_MAX.ln(),
        logh: p[3] + GRID_MAX.ln(),
    }
    .decode()
}

impl BBoxPredictor {
    pub fn new(cfg: PredictorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, "predictor-init", 0);
        let xavier = |r: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let limit = (6.0 / (r + c) as f64).sqrt();
            Tensor::rand_uniform(vec![r, c], limit, rng)
        };
        let m = cfg.model_dim;
        let weights = PredictorWeights {
            proj1_w: xavier(cfg.in_dim, m, &mut rng),
            proj1_b: Tensor::zeros(vec![m]),
            proj2_w: xavier(m, m, &mut rng),
            proj2_b: Tensor::zeros(vec![m]),
            encoder: EncoderWeights::init(m, cfg.ffn_dim, cfg.layers, cfg.heads, &mut rng),
            out1_w: xavier(m, m, &mut rng),
            out1_b: Tensor::zeros(vec![m]),
            out2_w: Tensor::zeros(vec![m, 4]),
            out2_b: Tensor::zeros(vec![4]),
        };
        Ok(BBoxPredictor { cfg, weights })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundPredictor {
        let mut up = |t: &Tensor| if trainable { g.input(t) } else { g.constant(t) };
        BoundPredictor {
            proj1_w: up(&self.weights.proj1_w),
            proj1_b: up(&self.weights.proj1_b),
            proj2_w: up(&self.weights.proj2_w),
            proj2_b: up(&self.weights.proj2_b),
            out1_w: up(&self.weights.out1_w),
            out1_b: up(&self.weights.out1_b),
            out2_w: up(&self.weights.out2_w),
            out2_b: up(&self.weights.out2_b),
            enc: BoundEncoder::bind(g, &self.weights.encoder, trainable),
        }
    }

    /// `[n, in_dim]` embeddings -> `[n, 4]` normalized box parameters.
    pub fn forward(&self, g: &mut Graph, bound: &BoundPredictor, e: Var) -> Result<Var> {
        let h0 = g.matmul(e, bound.proj1_w)?;
        let h1 = g.add_row(h0, bound.proj1_b)?;
        let h2 = g.gelu(h1);
        let h3 = g.matmul(h2, bound.proj2_w)?;
        let proj = g.add_row(h3, bound.proj2_b)?;
        let enc = bound.enc.forward(g, proj)?;
        let o0 = g.matmul(enc, bound.out1_w)?;
        let o1 = g.add_row(o0, bound.out1_b)?;
        let o2 = g.gelu(o1);
        let o3 = g.matmul(o2, bound.out2_w)?;
        g.add_row(o3, bound.out2_b)
    }

    /// Forward on detached embeddings.
    pub fn predict_params(&self, embeddings: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let e = g.constant(embeddings);
        let out = self.forward(&mut g, &bound, e)?;
        Ok(g.value(out).clone())
    }

    /// Decoded boxes per token.
    pub fn predict_boxes(&self, embeddings: &Tensor) -> Result<Vec<BBox>> {
        let params = self.predict_params(embeddings)?;
        let (n, _) = params.dims2()?;
        Ok((0..n)
            .map(|i| decode_norm(&params.data()[i * 4..i * 4 + 4]))
            .collect())
    }

    /// Regression targets for a document at the predictor's granularity.
    pub fn targets(&self, doc: &Document) -> Result<Tensor> {
        let n = doc.tokens.len();
        let mut data = Vec::with_capacity(n * 4);
        match self.cfg.granularity {
            Granularity::Word => {
                for t in &doc.tokens {
                    data.extend_from_slice(&encode_norm(&t.bbox));
                }
            }
            Granularity::Line => {
                let line_of = token_line_map(doc)?;
                for (i, _) in doc.tokens.iter().enumerate() {
                    let lb = &doc.lines[line_of[i]].bbox;
                    data.extend_from_slice(&encode_norm(lb));
                }
            }
        }
        Tensor::new(vec![n, 4], data)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "proj1_w".to_string(),
            "proj1_b".to_string(),
            "proj2_w".to_string(),
            "proj2_b".to_string(),
        ];
        names.extend(self.weights.encoder.params().into_iter().map(|(n, _)| n));
        names.extend([
            "out1_w".to_string(),
            "out1_b".to_string(),
            "out2_w".to_string(),
            "out2_b".to_string(),
        ]);
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let w = &self.weights;
        let mut out: Vec<&Tensor> = vec![&w.proj1_w, &w.proj1_b, &w.proj2_w, &w.proj2_b];
        out.extend(w.encoder.params().into_iter().map(|(_, t)| t));
        out.extend([&w.out1_w, &w.out1_b, &w.out2_w, &w.out2_b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let w = &mut self.weights;
        let mut out: Vec<&mut Tensor> = vec![
            &mut w.proj1_w,
            &mut w.proj1_b,
            &mut w.proj2_w,
            &mut w.proj2_b,
        ];
        out.extend(w.encoder.params_mut());
        out.extend([&mut w.out1_w, &mut w.out1_b, &mut w.out2_w, &mut w.out2_b]);
        out
    }
}

impl BoundPredictor {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.proj1_w, self.proj1_b, self.proj2_w, self.proj2_b];
        out.extend(self.enc.vars());
        out.extend([self.out1_w, self.out1_b, self.out2_w, self.out2_b]);
        out
    }
}

/// Index of the line containing each token.
pub fn token_line_map(doc: &Document) -> Result<Vec<usize>> {
    let mut map = vec![usize::MAX; doc.tokens.len()];
    for (li, line) in doc.lines.iter().enumerate() {
        for &m in &line.members {
            map[m] = li;
        }
    }
    if map.contains(&usize::MAX) {
        return Err(Error::InvalidArgument(format!(
            "document {} has tokens outside any line",
            doc.id
        )));
    }
    Ok(map)
}

/// Mean IoU between two equal-length box lists.
pub fn mean_iou(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "box count mismatch: {} predictions vs {} references",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty box list".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += crate::geom::iou(p, g)?;
    }
    Ok(total / pred.len() as f64)
}
