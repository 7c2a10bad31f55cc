//! Pre-norm transformer encoder shared by the surrogate and the box
//! predictor.

use crate::diff::{Graph, Tensor, Var};
use crate::error::Result;
use rand_chacha::ChaCha8Rng;

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::rand_uniform(vec![rows, cols], limit, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub layers: Vec<LayerWeights>,
    pub final_g: Tensor,
    pub final_b: Tensor,
    pub heads: usize,
}

impl EncoderWeights {
    pub fn init(
        dim: usize,
        ffn_dim: usize,
        layers: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layer = |rng: &mut ChaCha8Rng| LayerWeights {
            wq: xavier(dim, dim, rng),
            bq: Tensor::zeros(vec![dim]),
            wk: xavier(dim, dim, rng),
            bk: Tensor::zeros(vec![dim]),
            wv: xavier(dim, dim, rng),
            bv: Tensor::zeros(vec![dim]),
            wo: xavier(dim, dim, rng),
            bo: Tensor::zeros(vec![dim]),
            ln1_g: Tensor::full(vec![dim], 1.0),
            ln1_b: Tensor::zeros(vec![dim]),
            w1: xavier(dim, ffn_dim, rng),
            b1: Tensor::zeros(vec![ffn_dim]),
            w2: xavier(ffn_dim, dim, rng),
            b2: Tensor::zeros(vec![dim]),
            ln2_g: Tensor::full(vec![dim], 1.0),
            ln2_b: Tensor::zeros(vec![dim]),
        };
        EncoderWeights {
            layers: (0..layers).map(|_| layer(rng)).collect(),
            final_g: Tensor::full(vec![dim], 1.0),
            final_b: Tensor::zeros(vec![dim]),
            heads,
        }
    }

    /// Canonical parameter order (must match `BoundEncoder::vars`).
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("enc.{i}.{n}");
            out.push((p("wq"), &l.wq));
            out.push((p("bq"), &l.bq));
            out.push((p("wk"), &l.wk));
            out.push((p("bk"), &l.bk));
            out.push((p("wv"), &l.wv));
            out.push((p("bv"), &l.bv));
            out.push((p("wo"), &l.wo));
            out.push((p("bo"), &l.bo));
            out.push((p("ln1_g"), &l.ln1_g));
            out.push((p("ln1_b"), &l.ln1_b));
            out.push((p("w1"), &l.w1));
            out.push((p("b1"), &l.b1));
            out.push((p("w2"), &l.w2));
            out.push((p("b2"), &l.b2));
            out.push((p("ln2_g"), &l.ln2_g));
            out.push((p("ln2_b"), &l.ln2_b));
        }
        out.push(("enc.final_g".into(), &self.final_g));
        out.push(("enc.final_b".into(), &self.final_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in self.layers.iter_mut() {
            out.push(&mut l.wq);
            out.push(&mut l.bq);
            out.push(&mut l.wk);
            out.push(&mut l.bk);
            out.push(&mut l.wv);
            out.push(&mut l.bv);
            out.push(&mut l.wo);
            out.push(&mut l.bo);
            out.push(&mut l.ln1_g);
            out.push(&mut l.ln1_b);
            out.push(&mut l.w1);
            out.push(&mut l.b1);
            out.push(&mut l.w2);
            out.push(&mut l.b2);
            out.push(&mut l.ln2_g);
            out.push(&mut l.ln2_b);
        }
        out.push(&mut self.final_g);
        out.push(&mut self.final_b);
        out
    }
}

pub struct BoundLayer {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln1_g: Var,
    ln1_b: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    ln2_g: Var,
    ln2_b: Var,
}

pub struct BoundEncoder {
    layers: Vec<BoundLayer>,
    final_g: Var,
    final_b: Var,
    heads: usize,
}

impl BoundEncoder {
    /// Upload encoder weights into a graph; `trainable` attaches gradients.
    pub fn bind(g: &mut Graph, w: &EncoderWeights, trainable: bool) -> BoundEncoder {
        let mut up = |t: &Tensor| if trainable { g.input(t) } else { g.constant(t) };
        let layers = w
            .layers
            .iter()
            .map(|l| BoundLayer {
                wq: up(&l.wq),
                bq: up(&l.bq),
                wk: up(&l.wk),
                bk: up(&l.bk),
                wv: up(&l.wv),
                bv: up(&l.bv),
                wo: up(&l.wo),
                bo: up(&l.bo),
                ln1_g: up(&l.ln1_g),
                ln1_b: up(&l.ln1_b),
                w1: up(&l.w1),
                b1: up(&l.b1),
                w2: up(&l.w2),
                b2: up(&l.b2),
                ln2_g: up(&l.ln2_g),
                ln2_b: up(&l.ln2_b),
            })
            .collect();
        BoundEncoder {
            layers,
            final_g: up(&w.final_g),
            final_b: up(&w.final_b),
            heads: w.heads,
        }
    }

    /// Vars in the canonical parameter order of `EncoderWeights::params`.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_g, l.ln1_b, l.w1, l.b1, l.w2,
                l.b2, l.ln2_g, l.ln2_b,
            ]);
        }
        out.extend([self.final_g, self.final_b]);
        out
    }

    fn norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let n = g.layer_norm(x)?;
        let scaled = g.mul_row(n, gain)?;
        g.add_row(scaled, bias)
    }

    fn attention(&self, g: &mut Graph, l: &BoundLayer, z: Var) -> Result<Var> {
        let dim = g.value(z).dims2()?.1;
        let dh = dim / self.heads;
        let q0 = g.matmul(z, l.wq)?;
        let q = g.add_row(q0, l.bq)?;
        let k0 = g.matmul(z, l.wk)?;
        let k = g.add_row(k0, l.bk)?;
        let v0 = g.matmul(z, l.wv)?;
        let v = g.add_row(v0, l.bv)?;
        let mut ctx = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = g.softmax(scaled)?;
            ctx.push(g.matmul(attn, vh)?);
        }
        let cat = g.concat_cols(&ctx)?;
        let o = g.matmul(cat, l.wo)?;
        g.add_row(o, l.bo)
    }

    /// Encode `[n, dim]` token states.
    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            let z = Self::norm(g, x, l.ln1_g, l.ln1_b)?;
            let attn = self.attention(g, l, z)?;
            x = g.add(x, attn)?;
            let z2 = Self::norm(g, x, l.ln2_g, l.ln2_b)?;
            let h0 = g.matmul(z2, l.w1)?;
            let h1 = g.add_row(h0, l.b1)?;
            let h2 = g.gelu(h1);
            let h3 = g.matmul(h2, l.w2)?;
            let ffn = g.add_row(h3, l.b2)?;
            x = g.add(x, ffn)?;
        }
        Self::norm(g, x, self.final_g, self.final_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn forward_shape_and_determinism() {
        let mut rng = stream(1, "enc-test", 0);
        let w = EncoderWeights::init(16, 32, 2, 2, &mut rng);
        let x = Tensor::randn(vec![5, 16], 0.5, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let xe = g.constant(&x);
            let b = BoundEncoder::bind(&mut g, &w, false);
            let out = b.forward(&mut g, xe).unwrap();
            g.value(out).data().to_vec()
        };
        let a = run();
        assert_eq!(a.len(), 5 * 16);
        assert_eq!(a, run());
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn param_order_matches_bound_vars() {
        let mut rng = stream(2, "enc-test", 0);
        let mut w = EncoderWeights::init(8, 16, 3, 2, &mut rng);
        let names = w.params().len();
        let muts = w.params_mut().len();
        let mut g = Graph::new();
        let b = BoundEncoder::bind(&mut g, &w, true);
        assert_eq!(names, muts);
        assert_eq!(names, b.vars().len());
        // spot-check alignment: every bound var value equals the tensor at
        // the same position in the canonical order
        for ((_, t), v) in w.params().iter().zip(b.vars()) {
            assert_eq!(g.value(v).data(), t.data());
        }
    }

    #[test]
    fn permuting_rows_permutes_outputs() {
        // No positional information inside the encoder itself.
        let mut rng = stream(3, "enc-test", 0);
        let w = EncoderWeights::init(12, 24, 2, 2, &mut rng);
        let x = Tensor::randn(vec![4, 12], 0.5, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let mut xp = Tensor::zeros(vec![4, 12]);
        for (dst, &src) in perm.iter().enumerate() {
            xp.data_mut()[dst * 12..(dst + 1) * 12]
                .copy_from_slice(&x.data()[src * 12..(src + 1) * 12]);
        }
        let run = |inp: &Tensor| {
            let mut g = Graph::new();
            let xe = g.constant(inp);
            let b = BoundEncoder::bind(&mut g, &w, false);
            let out = b.forward(&mut g, xe).unwrap();
            g.value(out).data().to_vec()
        };
        let base = run(&x);
        let permuted = run(&xp);
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..12 {
                assert!(
                    (permuted[dst * 12 + j] - base[src * 12 + j]).abs() < 1e-9,
                    "row {dst} col {j}"
                );
            }
        }
    }
}
