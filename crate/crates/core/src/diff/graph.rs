//! Computation graph with reverse-mode backward.

use super::tensor::Tensor;
use super::LAYER_NORM_EPS;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Which overlap metric an overlap loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapKind {
    Iou,
    Giou,
}

enum Op {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddRow {
        a: Var,
        row: Var,
    },
    MulRow {
        a: Var,
        row: Var,
    },
    Scale {
        a: Var,
        c: f64,
    },
    Relu {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        a: Var,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    SliceCols {
        a: Var,
        start: usize,
        len: usize,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        mask: Option<Vec<bool>>,
        probs: Vec<f64>,
    },
    SmoothL1 {
        pred: Var,
        target: Var,
    },
    OverlapLoss {
        pred: Var,
        target: Var,
        kind: OverlapKind,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records forward ops; `backward` fills gradients for every node that
/// (transitively) depends on a gradient-requiring leaf.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that participates in gradient computation.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T`, used for attention scores.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.nodes[a.0].value.dims2()?;
        let (br, bc) = self.nodes[b.0].value.dims2()?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::Shape(format!(
                "matmul{} inner dims differ: left {:?}, right {:?}",
                if trans_b { "_nt" } else { "" },
                self.nodes[a.0].value.shape(),
                self.nodes[b.0].value.shape()
            )));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![0.0; m * n];
        if trans_b {
            for i in 0..m {
                let ar = &av[i * k..(i + 1) * k];
                let or = &mut out[i * n..(i + 1) * n];
                for (j, oj) in or.iter_mut().enumerate() {
                    let br_ = &bv[j * k..(j + 1) * k];
                    let mut s = 0.0;
                    for p in 0..k {
                        s += ar[p] * br_[p];
                    }
                    *oj = s;
                }
            }
        } else {
            for i in 0..m {
                let ar = &av[i * k..(i + 1) * k];
                let or = &mut out[i * n..(i + 1) * n];
                for (p, &ap) in ar.iter().enumerate() {
                    if ap == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    for j in 0..n {
                        or[j] += ap * brow[j];
                    }
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::Matmul { a, b, trans_b },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (
            self.nodes[a.0].value.shape().to_vec(),
            self.nodes[b.0].value.shape().to_vec(),
        );
        if sa != sb {
            return Err(Error::Shape(format!(
                "add operand shapes differ: {sa:?} vs {sb:?}"
            )));
        }
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(sa, out)?, Op::Add { a, b }, needs))
    }

    /// Broadcast-add a length-`n` row vector to every row of `[m, n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2()?;
        let rlen = self.nodes[row.0].value.numel();
        if rlen != n {
            return Err(Error::Shape(format!(
                "add_row: matrix {:?} vs row {:?}",
                self.nodes[a.0].value.shape(),
                self.nodes[row.0].value.shape()
            )));
        }
        let av = self.nodes[a.0].value.data();
        let rv = self.nodes[row.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] + rv[j];
            }
        }
        let shape = self.nodes[a.0].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow { a, row }, needs))
    }

    /// Broadcast-multiply every row of `[m, n]` by a length-`n` row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2()?;
        let rlen = self.nodes[row.0].value.numel();
        if rlen != n {
            return Err(Error::Shape(format!(
                "mul_row: matrix {:?} vs row {:?}",
                self.nodes[a.0].value.shape(),
                self.nodes[row.0].value.shape()
            )));
        }
        let av = self.nodes[a.0].value.data();
        let rv = self.nodes[row.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] * rv[j];
            }
        }
        let shape = self.nodes[a.0].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(Tensor::new(shape, out)?, Op::MulRow { a, row }, needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.nodes[a.0].value.data().iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, out).unwrap(), Op::Scale { a, c }, needs)
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (
            self.nodes[a.0].value.shape().to_vec(),
            self.nodes[b.0].value.shape().to_vec(),
        );
        if sa != sb {
            return Err(Error::Shape(format!(
                "mul operand shapes differ: {sa:?} vs {sb:?}"
            )));
        }
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(sa, out)?, Op::Mul { a, b }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, out).unwrap(), Op::Relu { a }, needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|&x| {
                let u = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            })
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let needs = self.needs(a);
        self.push(Tensor::new(shape, out).unwrap(), Op::Gelu { a }, needs)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2()?;
        let av = self.nodes[a.0].value.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                z += e;
            }
            for j in 0..n {
                out[i * n + j] /= z;
            }
        }
        let shape = self.nodes[a.0].value.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a }, needs))
    }

    /// Row-wise normalization to zero mean, unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2()?;
        let av = self.nodes[a.0].value.data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = istd;
            for j in 0..n {
                out[i * n + j] = (row[j] - mu) * istd;
            }
        }
        let shape = self.nodes[a.0].value.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { a, inv_std },
            needs,
        ))
    }

    /// Gather rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.nodes[table.0].value.dims2()?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidArgument(format!(
                "embedding id {bad} out of range for table with {v} rows"
            )));
        }
        let tv = self.nodes[table.0].value.data();
        let mut out = vec![0.0; ids.len() * d];
        for (r, &id) in ids.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero parts".into()));
        }
        let (m, _) = self.nodes[parts[0].0].value.dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = self.nodes[p.0].value.dims2()?;
            if pm != m {
                return Err(Error::Shape(format!(
                    "concat_cols row counts differ: {} vs {}",
                    m, pm
                )));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pv = self.nodes[p.0].value.data();
            for i in 0..m {
                out[i * n + off..i * n + off + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Take columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2()?;
        if start + len > n {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} out of bounds for {n} columns",
                start + len
            )));
        }
        let av = self.nodes[a.0].value.data();
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&av[i * n + start..i * n + start + len]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![m, len], out)?,
            Op::SliceCols { a, start, len },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.numel().max(1);
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s / n as f64), Op::Mean { a }, needs)
    }

    /// Mean cross-entropy of row logits against class labels, restricted to
    /// unmasked rows when a mask is given.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (m, c) = self.nodes[logits.0].value.dims2()?;
        if labels.len() != m {
            return Err(Error::Shape(format!(
                "cross_entropy: {m} logit rows vs {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        if let Some(mk) = mask {
            if mk.len() != m {
                return Err(Error::Shape(format!(
                    "cross_entropy: {m} rows vs {} mask entries",
                    mk.len()
                )));
            }
        }
        let active = mask.map_or(m, |mk| mk.iter().filter(|&&b| b).count());
        if active == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "cross_entropy over an empty batch".into(),
            ));
        }
        let lv = self.nodes[logits.0].value.data();
        let mut probs = vec![0.0; m * c];
        let mut total = 0.0;
        for i in 0..m {
            let row = &lv[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                probs[i * c + j] /= z;
            }
            let on = mask.is_none_or(|mk| mk[i]);
            if on {
                total += z.ln() + mx - row[labels[i]];
            }
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / active as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                mask: mask.map(|m| m.to_vec()),
                probs,
            },
            needs,
        ))
    }

    /// Mean smooth-L1 (transition at |residual| = 1) between same-shape tensors.
    pub fn smooth_l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (
            self.nodes[pred.0].value.shape().to_vec(),
            self.nodes[target.0].value.shape().to_vec(),
        );
        if sp != st {
            return Err(Error::Shape(format!(
                "smooth_l1 shapes differ: {sp:?} vs {st:?}"
            )));
        }
        let n = self.nodes[pred.0].value.numel();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "smooth_l1 over an empty batch".into(),
            ));
        }
        let pv = self.nodes[pred.0].value.data();
        let tv = self.nodes[target.0].value.data();
        let mut total = 0.0;
        for i in 0..n {
            let r = pv[i] - tv[i];
            total += if r.abs() < 1.0 {
                0.5 * r * r
            } else {
                r.abs() - 0.5
            };
        }
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::SmoothL1 { pred, target },
            needs,
        ))
    }

    /// Mean of `1 - overlap(decode(pred_row), decode(target_row))` over rows
    /// of center/log-size box parameters.
    pub fn overlap_loss(&mut self, pred: Var, target: Var, kind: OverlapKind) -> Result<Var> {
        let (m, c) = self.nodes[pred.0].value.dims2()?;
        let (tm, tc) = self.nodes[target.0].value.dims2()?;
        if c != 4 || tc != 4 || m != tm {
            return Err(Error::Shape(format!(
                "overlap_loss wants matching [n, 4] params, got {:?} vs {:?}",
                self.nodes[pred.0].value.shape(),
                self.nodes[target.0].value.shape()
            )));
        }
        if m == 0 {
            return Err(Error::InvalidArgument(
                "overlap_loss over an empty batch".into(),
            ));
        }
        let pv = self.nodes[pred.0].value.data();
        let tv = self.nodes[target.0].value.data();
        let mut total = 0.0;
        for i in 0..m {
            let (v, _, _) = overlap_value_grad(&pv[i * 4..i * 4 + 4], &tv[i * 4..i * 4 + 4], kind);
            total += 1.0 - v;
        }
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(
            Tensor::scalar(total / m as f64),
            Op::OverlapLoss { pred, target, kind },
            needs,
        ))
    }

    /// Accumulate gradients of the scalar `root` into every reachable node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let gout = self.grads[idx].take().unwrap();
            self.step_backward(idx, &gout);
            self.grads[idx] = Some(gout);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    #[allow(clippy::needless_range_loop)]
    fn step_backward(&mut self, idx: usize, gout: &[f64]) {
        // Ops only reference earlier nodes, so values can be read immutably
        // via raw indices while grads are written.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul { a, b, trans_b } => {
                let (a, b, trans_b) = (*a, *b, *trans_b);
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = if trans_b {
                    self.nodes[b.0].value.dims2().unwrap().0
                } else {
                    self.nodes[b.0].value.dims2().unwrap().1
                };
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                if trans_b {
                    // out = A @ B^T, B is [n, k]
                    self.acc(a, |ga| {
                        for i in 0..m {
                            for j in 0..n {
                                let g = gout[i * n + j];
                                if g == 0.0 {
                                    continue;
                                }
                                let br = &bv[j * k..(j + 1) * k];
                                let gr = &mut ga[i * k..(i + 1) * k];
                                for p in 0..k {
                                    gr[p] += g * br[p];
                                }
                            }
                        }
                    });
                    self.acc(b, |gb| {
                        for i in 0..m {
                            let ar = &av[i * k..(i + 1) * k];
                            for j in 0..n {
                                let g = gout[i * n + j];
                                if g == 0.0 {
                                    continue;
                                }
                                let gr = &mut gb[j * k..(j + 1) * k];
                                for p in 0..k {
                                    gr[p] += g * ar[p];
                                }
                            }
                        }
                    });
                } else {
                    // out = A @ B, B is [k, n]
                    self.acc(a, |ga| {
                        for i in 0..m {
                            let gr = &gout[i * n..(i + 1) * n];
                            let gar = &mut ga[i * k..(i + 1) * k];
                            for p in 0..k {
                                let br = &bv[p * n..(p + 1) * n];
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += gr[j] * br[j];
                                }
                                gar[p] += s;
                            }
                        }
                    });
                    self.acc(b, |gb| {
                        for i in 0..m {
                            let ar = &av[i * k..(i + 1) * k];
                            let gr = &gout[i * n..(i + 1) * n];
                            for p in 0..k {
                                let ap = ar[p];
                                if ap == 0.0 {
                                    continue;
                                }
                                let gbr = &mut gb[p * n..(p + 1) * n];
                                for j in 0..n {
                                    gbr[j] += ap * gr[j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.acc(a, |ga| {
                    for (g, &v) in ga.iter_mut().zip(gout) {
                        *g += v;
                    }
                });
                self.acc(b, |gb| {
                    for (g, &v) in gb.iter_mut().zip(gout) {
                        *g += v;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.acc(a, |ga| {
                    for i in 0..bv.len() {
                        ga[i] += gout[i] * bv[i];
                    }
                });
                self.acc(b, |gb| {
                    for i in 0..av.len() {
                        gb[i] += gout[i] * av[i];
                    }
                });
            }
            Op::AddRow { a, row } => {
                let (a, row) = (*a, *row);
                let (m, n) = self.nodes[a.0].value.dims2().unwrap();
                self.acc(a, |ga| {
                    for (g, &v) in ga.iter_mut().zip(gout) {
                        *g += v;
                    }
                });
                self.acc(row, |gr| {
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] += gout[i * n + j];
                        }
                    }
                });
            }
            Op::MulRow { a, row } => {
                let (a, row) = (*a, *row);
                let (m, n) = self.nodes[a.0].value.dims2().unwrap();
                let av = self.nodes[a.0].value.data().to_vec();
                let rv = self.nodes[row.0].value.data().to_vec();
                self.acc(a, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += gout[i * n + j] * rv[j];
                        }
                    }
                });
                self.acc(row, |gr| {
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] += gout[i * n + j] * av[i * n + j];
                        }
                    }
                });
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                self.acc(a, |ga| {
                    for (g, &v) in ga.iter_mut().zip(gout) {
                        *g += c * v;
                    }
                });
            }
            Op::Relu { a } => {
                let a = *a;
                let av = self.nodes[a.0].value.data().to_vec();
                self.acc(a, |ga| {
                    for i in 0..av.len() {
                        if av[i] > 0.0 {
                            ga[i] += gout[i];
                        }
                    }
                });
            }
            Op::Gelu { a } => {
                let a = *a;
                let av = self.nodes[a.0].value.data().to_vec();
                self.acc(a, |ga| {
                    for i in 0..av.len() {
                        let x = av[i];
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                        ga[i] += gout[i] * d;
                    }
                });
            }
            Op::Softmax { a } => {
                let a = *a;
                let (m, n) = self.nodes[idx].value.dims2().unwrap();
                let sv = self.nodes[idx].value.data().to_vec();
                self.acc(a, |ga| {
                    for i in 0..m {
                        let s = &sv[i * n..(i + 1) * n];
                        let g = &gout[i * n..(i + 1) * n];
                        let dot: f64 = s.iter().zip(g).map(|(x, y)| x * y).sum();
                        let gr = &mut ga[i * n..(i + 1) * n];
                        for j in 0..n {
                            gr[j] += s[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { a, inv_std } => {
                let a = *a;
                let istd = inv_std.clone();
                let (m, n) = self.nodes[idx].value.dims2().unwrap();
                let yv = self.nodes[idx].value.data().to_vec();
                self.acc(a, |ga| {
                    for i in 0..m {
                        let y = &yv[i * n..(i + 1) * n];
                        let g = &gout[i * n..(i + 1) * n];
                        let gmean: f64 = g.iter().sum::<f64>() / n as f64;
                        let gymean: f64 =
                            g.iter().zip(y).map(|(x, z)| x * z).sum::<f64>() / n as f64;
                        let gr = &mut ga[i * n..(i + 1) * n];
                        for j in 0..n {
                            gr[j] += istd[i] * (g[j] - gmean - y[j] * gymean);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let d = self.nodes[idx].value.dims2().unwrap().1;
                self.acc(table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gout[r * d..(r + 1) * d];
                        let dst = &mut gt[id * d..(id + 1) * d];
                        for j in 0..d {
                            dst[j] += src[j];
                        }
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let (m, n) = self.nodes[idx].value.dims2().unwrap();
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.dims2().unwrap().1;
                    let o = off;
                    self.acc(p, |gp| {
                        for i in 0..m {
                            for j in 0..w {
                                gp[i * w + j] += gout[i * n + o + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { a, start, len } => {
                let (a, start, len) = (*a, *start, *len);
                let (m, n) = self.nodes[a.0].value.dims2().unwrap();
                self.acc(a, |ga| {
                    for i in 0..m {
                        for j in 0..len {
                            ga[i * n + start + j] += gout[i * len + j];
                        }
                    }
                });
            }
            Op::Sum { a } => {
                let a = *a;
                let g = gout[0];
                self.acc(a, |ga| {
                    for v in ga.iter_mut() {
                        *v += g;
                    }
                });
            }
            Op::Mean { a } => {
                let a = *a;
                let n = self.nodes[a.0].value.numel().max(1);
                let g = gout[0] / n as f64;
                self.acc(a, |ga| {
                    for v in ga.iter_mut() {
                        *v += g;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                mask,
                probs,
            } => {
                let logits = *logits;
                let labels = labels.clone();
                let mask = mask.clone();
                let probs = probs.clone();
                let (m, c) = self.nodes[logits.0].value.dims2().unwrap();
                let active = mask
                    .as_ref()
                    .map_or(m, |mk| mk.iter().filter(|&&b| b).count());
                let g = gout[0] / active as f64;
                self.acc(logits, |gl| {
                    for i in 0..m {
                        if let Some(mk) = &mask {
                            if !mk[i] {
                                continue;
                            }
                        }
                        for j in 0..c {
                            let one = if labels[i] == j { 1.0 } else { 0.0 };
                            gl[i * c + j] += g * (probs[i * c + j] - one);
                        }
                    }
                });
            }
            Op::SmoothL1 { pred, target } => {
                let (pred, target) = (*pred, *target);
                let n = self.nodes[pred.0].value.numel();
                let pv = self.nodes[pred.0].value.data().to_vec();
                let tv = self.nodes[target.0].value.data().to_vec();
                let g = gout[0] / n as f64;
                self.acc(pred, |gp| {
                    for i in 0..n {
                        let r = pv[i] - tv[i];
                        gp[i] += g * r.clamp(-1.0, 1.0);
                    }
                });
                self.acc(target, |gt| {
                    for i in 0..n {
                        let r = pv[i] - tv[i];
                        gt[i] -= g * r.clamp(-1.0, 1.0);
                    }
                });
            }
            Op::OverlapLoss { pred, target, kind } => {
                let (pred, target, kind) = (*pred, *target, *kind);
                let m = self.nodes[pred.0].value.dims2().unwrap().0;
                let pv = self.nodes[pred.0].value.data().to_vec();
                let tv = self.nodes[target.0].value.data().to_vec();
                let g = gout[0] / m as f64;
                self.acc(pred, |gp| {
                    for i in 0..m {
                        let (_, dp, _) =
                            overlap_value_grad(&pv[i * 4..i * 4 + 4], &tv[i * 4..i * 4 + 4], kind);
                        for j in 0..4 {
                            gp[i * 4 + j] -= g * dp[j];
                        }
                    }
                });
                self.acc(target, |gt| {
                    for i in 0..m {
                        let (_, _, dt) =
                            overlap_value_grad(&pv[i * 4..i * 4 + 4], &tv[i * 4..i * 4 + 4], kind);
                        for j in 0..4 {
                            gt[i * 4 + j] -= g * dt[j];
                        }
                    }
                });
            }
        }
    }
}

/// Overlap metric of two boxes given as `(cx, cy, logw, logh)` parameters,
/// with analytic gradients w.r.t. both parameter quadruples. At exact
/// min/max ties the subgradient 0 is used.
fn overlap_value_grad(p: &[f64], t: &[f64], kind: OverlapKind) -> (f64, [f64; 4], [f64; 4]) {
    // Decode to corners; track d(corner)/d(param) at the end via chain rule.
    let (pw, ph) = (p[2].exp(), p[3].exp());
    let (tw, th) = (t[2].exp(), t[3].exp());
    let a = [
        p[0] - pw / 2.0,
        p[1] - ph / 2.0,
        p[0] + pw / 2.0,
        p[1] + ph / 2.0,
    ];
    let b = [
        t[0] - tw / 2.0,
        t[1] - th / 2.0,
        t[0] + tw / 2.0,
        t[1] + th / 2.0,
    ];

    // corner gradients: da[i], db[i] for i in x0,y0,x1,y1
    let mut da = [0.0f64; 4];
    let mut db = [0.0f64; 4];

    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);

    let ix0 = a[0].max(b[0]);
    let iy0 = a[1].max(b[1]);
    let ix1 = a[2].min(b[2]);
    let iy1 = a[3].min(b[3]);
    let iw = (ix1 - ix0).max(0.0);
    let ih = (iy1 - iy0).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    let iou = inter / union;

    // d inter / d corners (zero when the clamp or a tie is active)
    let mut dia = [0.0f64; 4];
    let mut dib = [0.0f64; 4];
    if iw > 0.0 && ih > 0.0 {
        if a[0] > b[0] {
            dia[0] = -ih;
        } else if b[0] > a[0] {
            dib[0] = -ih;
        }
        if a[2] < b[2] {
            dia[2] = ih;
        } else if b[2] < a[2] {
            dib[2] = ih;
        }
        if a[1] > b[1] {
            dia[1] = -iw;
        } else if b[1] > a[1] {
            dib[1] = -iw;
        }
        if a[3] < b[3] {
            dia[3] = iw;
        } else if b[3] < a[3] {
            dib[3] = iw;
        }
    }

    // d area / d corners
    let daa = [-(a[3] - a[1]), -(a[2] - a[0]), a[3] - a[1], a[2] - a[0]];
    let dab = [-(b[3] - b[1]), -(b[2] - b[0]), b[3] - b[1], b[2] - b[0]];

    // d iou = (dI * U - I * dU) / U^2, dU = dA + dB - dI
    for i in 0..4 {
        let du_a = daa[i] - dia[i];
        let du_b = dab[i] - dib[i];
        da[i] += (dia[i] * union - inter * du_a) / (union * union);
        db[i] += (dib[i] * union - inter * du_b) / (union * union);
    }

    let value = match kind {
        OverlapKind::Iou => iou,
        OverlapKind::Giou => {
            let ex0 = a[0].min(b[0]);
            let ey0 = a[1].min(b[1]);
            let ex1 = a[2].max(b[2]);
            let ey1 = a[3].max(b[3]);
            let ew = ex1 - ex0;
            let eh = ey1 - ey0;
            let encl = ew * eh;

            let mut dea = [0.0f64; 4];
            let mut deb = [0.0f64; 4];
            if a[0] < b[0] {
                dea[0] = -eh;
            } else if b[0] < a[0] {
                deb[0] = -eh;
            }
            if a[2] > b[2] {
                dea[2] = eh;
            } else if b[2] > a[2] {
                deb[2] = eh;
            }
            if a[1] < b[1] {
                dea[1] = -ew;
            } else if b[1] < a[1] {
                deb[1] = -ew;
            }
            if a[3] > b[3] {
                dea[3] = ew;
            } else if b[3] > a[3] {
                deb[3] = ew;
            }

            // giou = iou - 1 + U/C; d(U/C) = (dU*C - U*dC)/C^2
            for i in 0..4 {
                let du_a = daa[i] - dia[i];
                let du_b = dab[i] - dib[i];
                da[i] += (du_a * encl - union * dea[i]) / (encl * encl);
                db[i] += (du_b * encl - union * deb[i]) / (encl * encl);
            }
            iou - (encl - union) / encl
        }
    };

    // Chain corners -> (cx, cy, logw, logh).
    let dp = [
        da[0] + da[2],
        da[1] + da[3],
        (da[2] - da[0]) * pw / 2.0,
        (da[3] - da[1]) * ph / 2.0,
    ];
    let dt = [
        db[0] + db[2],
        db[1] + db[3],
        (db[2] - db[0]) * tw / 2.0,
        (db[3] - db[1]) * th / 2.0,
    ];
    (value, dp, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{giou, BBox, BoxParam};

    fn params_of(b: &BBox) -> Vec<f64> {
        let p = BoxParam::encode(b);
        vec![p.cx, p.cy, p.logw, p.logh]
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i3 = Tensor::new(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let x = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let a = g.constant(&i3);
        let b = g.constant(&x);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), x.data());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(vec![2, 3]));
        let b = g.constant(&Tensor::zeros(vec![4, 5]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap());
        let s = g.softmax(x).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x =
            g.constant(&Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 10.0, 10.0, -30.0]).unwrap());
        let s = g.softmax(x).unwrap();
        let d = g.value(s).data();
        for i in 0..2 {
            let sum: f64 = d[i * 3..(i + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::new(vec![4], vec![3.0, 3.0, 3.0, 3.0]).unwrap());
        let y = g.layer_norm(x).unwrap();
        for &v in g.value(y).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn sum_backward_is_ones_and_constant_grad_is_zero() {
        let mut g = Graph::new();
        let t = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.0, 5.0]).unwrap();
        let x = g.input(&t);
        let c = g.constant(&t);
        let s = g.sum(x);
        let sc = g.scale(c, 1.0);
        let _ = sc;
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(vec![2, 2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn smooth_l1_values() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::scalar(3.0));
        let y = g.constant(&Tensor::scalar(3.0));
        let l = g.smooth_l1(x, y).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);

        let mut g = Graph::new();
        let x = g.constant(&Tensor::scalar(2.0));
        let y = g.constant(&Tensor::scalar(0.0));
        let l = g.smooth_l1(x, y).unwrap();
        assert!((g.value(l).item().unwrap() - 1.5).abs() < 1e-12);

        let mut g = Graph::new();
        let x = g.constant(&Tensor::scalar(0.5));
        let y = g.constant(&Tensor::scalar(0.0));
        let l = g.smooth_l1(x, y).unwrap();
        assert!((g.value(l).item().unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_rejects_empty() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::zeros(vec![0]));
        let y = g.constant(&Tensor::zeros(vec![0]));
        assert!(g.smooth_l1(x, y).is_err());
    }

    #[test]
    fn overlap_loss_zero_on_identical_batches() {
        let b1 = BBox::new(10.0, 10.0, 60.0, 40.0).unwrap();
        let b2 = BBox::new(100.0, 200.0, 180.0, 260.0).unwrap();
        let data: Vec<f64> = [&b1, &b2].iter().flat_map(|b| params_of(b)).collect();
        let t = Tensor::new(vec![2, 4], data).unwrap();
        let mut g = Graph::new();
        let p = g.constant(&t);
        let q = g.constant(&t);
        let l = g.overlap_loss(p, q, OverlapKind::Giou).unwrap();
        assert!(g.value(l).item().unwrap().abs() < 1e-12);
    }

    #[test]
    fn overlap_loss_matches_geom_giou() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(4.0, 2.0, 16.0, 9.0).unwrap();
        let ta = Tensor::new(vec![1, 4], params_of(&a)).unwrap();
        let tb = Tensor::new(vec![1, 4], params_of(&b)).unwrap();
        let mut g = Graph::new();
        let p = g.constant(&ta);
        let q = g.constant(&tb);
        let l = g.overlap_loss(p, q, OverlapKind::Giou).unwrap();
        let expect = 1.0 - giou(&a, &b).unwrap();
        assert!((g.value(l).item().unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot_over_batch() {
        let mut g = Graph::new();
        let logits = Tensor::new(vec![2, 3], vec![0.2, -0.3, 1.0, 2.0, 0.0, -1.0]).unwrap();
        let x = g.input(&logits);
        let labels = [2usize, 0usize];
        let sm = g.softmax(x).unwrap();
        let probs = g.value(sm).data().to_vec();
        let loss = g.cross_entropy(x, &labels, None).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let one = if labels[i] == j { 1.0 } else { 0.0 };
                let expect = (probs[i * 3 + j] - one) / 2.0;
                assert!(
                    (grad[i * 3 + j] - expect).abs() < 1e-6,
                    "grad {} expect {}",
                    grad[i * 3 + j],
                    expect
                );
            }
        }
    }

    #[test]
    fn cross_entropy_rejects_empty_batch() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(vec![2, 3]));
        let mask = [false, false];
        assert!(g.cross_entropy(x, &[0, 1], Some(&mask)).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let x =
                g.input(&Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.7, 0.1, -0.4]).unwrap());
            let w =
                g.input(&Tensor::new(vec![3, 2], vec![0.5, -0.2, 0.8, 0.3, -0.6, 0.9]).unwrap());
            let h = g.matmul(x, w).unwrap();
            let r = g.gelu(h);
            let s = g.sum(r);
            g.backward(s).unwrap();
            (g.grad(x).unwrap().to_vec(), g.grad(w).unwrap().to_vec())
        };
        assert_eq!(run(), run());
    }
}
