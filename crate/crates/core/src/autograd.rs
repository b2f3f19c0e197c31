//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends a node holding its forward value and enough cached
//! state to run its adjoint. Nodes are appended in evaluation order, so the tape
//! itself is a topological order and [`Tape::backward`] walks it once in reverse.

use crate::error::{dim_err, Result, VldError};
use crate::kernels::{self, MatmulDims};
use crate::tensor::{numel, permute_index, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Bmm { a: Var, b: Var, dims: MatmulDims },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, c: f64 },
    ScaleBy { x: Var, s: Var },
    Gelu(Var),
    Softmax { x: Var },
    CausalSoftmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Reshape(Var),
    Permute { x: Var, src: Vec<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    MeanGroups { x: Var, group: usize },
    Sum(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    PairwiseDist { x: Var },
    Wrt { dist: Var, coef: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Max-subtracted softmax of one slice; entries at and after `valid` get zero.
fn softmax_slice(row: &mut [f64], valid: usize) {
    let m = row[..valid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row[..valid].iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row[..valid].iter_mut() {
        *x /= s;
    }
    row[valid..].iter_mut().for_each(|x| *x = 0.0);
}

/// Sum with operands visited in ascending value order, so the result does not
/// depend on the order the operands are stored in.
fn order_free_sum(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.iter().sum()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Var {
        assert_eq!(numel(&shape), value.len());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::from_parts(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated at a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    // ---- linear algebra -------------------------------------------------

    /// `[..., m, k] x [k, n] -> [..., m, n]` with a shared right operand.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || last_dim(&sa) != sb[0] {
            return Err(dim_err(format!("matmul of {:?} and {:?}", sa, sb)));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k.max(1);
        let dims = MatmulDims { batch: 1, m, k, n, b_shared: true };
        let value = kernels::bmm(self.value(a), self.value(b), dims);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, Op::Bmm { a, b, dims }, rg))
    }

    /// `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err(format!("batched matmul of {:?} and {:?}", sa, sb)));
        }
        let dims = MatmulDims { batch: sa[0], m: sa[1], k: sa[2], n: sb[2], b_shared: false };
        let value = kernels::bmm(self.value(a), self.value(b), dims);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![sa[0], sa[1], sb[2]], value, Op::Bmm { a, b, dims }, rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(format!("{} of {:?} and {:?}", what, self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b), rg))
    }

    /// Adds a `[n]` vector to every row of `[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = last_dim(self.shape(x));
        if self.shape(bias) != [n] {
            return Err(dim_err(format!("bias {:?} for rows of {:?}", self.shape(bias), self.shape(x))));
        }
        let b = self.value(bias).to_vec();
        let mut v = self.value(x).to_vec();
        v.chunks_mut(n).for_each(|row| row.iter_mut().zip(&b).for_each(|(r, c)| *r += c));
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(self.shape(x).to_vec(), v, Op::AddBias { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).iter().map(|a| a * c).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), v, Op::Scale { x, c }, rg)
    }

    /// Multiplies by a scalar node.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if numel(self.shape(s)) != 1 {
            return Err(dim_err(format!("scale_by needs a scalar, got {:?}", self.shape(s))));
        }
        let c = self.value(s)[0];
        let v = self.value(x).iter().map(|a| a * c).collect();
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(self.shape(x).to_vec(), v, Op::ScaleBy { x, s }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&a| gelu(a)).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), v, Op::Gelu(x), rg)
    }

    // ---- normalisation --------------------------------------------------

    /// Softmax over the last axis. NaN inputs propagate to NaN outputs.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = last_dim(self.shape(x));
        let mut v = self.value(x).to_vec();
        kernels::for_each_row(&mut v, n, |_, row| softmax_slice(row, row.len()));
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), v, Op::Softmax { x }, rg)
    }

    /// Softmax over the last axis of `[..., L, L]` scores where query `i` only
    /// sees keys `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(dim_err(format!("causal softmax needs square trailing axes, got {:?}", s)));
        }
        let len = s[s.len() - 1];
        let mut v = self.value(x).to_vec();
        kernels::for_each_row(&mut v, len, |i, row| softmax_slice(row, i % len + 1));
        let rg = self.rg(x);
        Ok(self.push(s, v, Op::CausalSoftmax { x }, rg))
    }

    /// Layer norm over the last axis with affine `gain`, `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = last_dim(self.shape(x));
        if d < 2 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(dim_err(format!(
                "layer norm over {:?} with gain {:?}, bias {:?}",
                self.shape(x),
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let rows = numel(self.shape(x)) / d;
        let xs = self.value(x);
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for (o, a) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (a - mean) * rs;
            }
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let mut v = xhat.clone();
        v.chunks_mut(d).for_each(|row| {
            for i in 0..d {
                row[i] = row[i] * g[i] + b[i];
            }
        });
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(self.shape(x).to_vec(), v, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Unit-normalises each row of `[..., D]`.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let d = last_dim(self.shape(x));
        let mut v = self.value(x).to_vec();
        let mut norms = Vec::with_capacity(v.len() / d.max(1));
        for row in v.chunks_mut(d) {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|a| *a /= n);
            norms.push(n);
        }
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), v, Op::NormalizeRows { x, norms }, rg)
    }

    // ---- structural -----------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(dim_err(format!("cannot reshape {:?} to {:?}", self.shape(x), shape)));
        }
        let v = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let (shape, src) = permute_index(self.shape(x), axes)?;
        let xs = self.value(x);
        let v = src.iter().map(|&i| xs[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(shape, v, Op::Permute { x, src }, rg))
    }

    /// Output row `r` is input row `idx[r]`, rows being last-axis vectors.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let w = last_dim(self.shape(x));
        let rows = numel(self.shape(x)) / w.max(1);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(dim_err(format!("row {} out of range for {:?}", bad, self.shape(x))));
        }
        let xs = self.value(x);
        let mut v = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            v.extend_from_slice(&xs[i * w..(i + 1) * w]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![idx.len(), w], v, Op::GatherRows { x, idx: idx.to_vec() }, rg))
    }

    /// Stacks the rows of several `[.., w]` tensors into one `[rows, w]`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let w = parts.first().map(|&p| last_dim(self.shape(p))).unwrap_or(0);
        let mut v = Vec::new();
        for &p in parts {
            if last_dim(self.shape(p)) != w {
                return Err(dim_err(format!("concat of row width {} and {:?}", w, self.shape(p))));
            }
            v.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let rows = v.len() / w.max(1);
        Ok(self.push(vec![rows, w], v, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Mean over consecutive groups of `group` rows: `[G*group, w] -> [G, w]`.
    /// The result is independent of the row order inside each group.
    pub fn mean_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let w = last_dim(self.shape(x));
        let rows = numel(self.shape(x)) / w.max(1);
        if group == 0 || !rows.is_multiple_of(group) {
            return Err(dim_err(format!("{} rows do not split into groups of {}", rows, group)));
        }
        let xs = self.value(x);
        let g = rows / group;
        let mut v = vec![0.0; g * w];
        let mut buf = vec![0.0; group];
        for gi in 0..g {
            for c in 0..w {
                for (t, b) in buf.iter_mut().enumerate() {
                    *b = xs[(gi * group + t) * w + c];
                }
                v[gi * w + c] = order_free_sum(&mut buf) / group as f64;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![g, w], v, Op::MeanGroups { x, group }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = numel(self.shape(x)).max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    // ---- losses ---------------------------------------------------------

    /// Mean softmax cross-entropy of `[n, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(dim_err(format!("cross entropy of {:?} with {} labels", s, labels.len())));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(VldError::Data(format!("label {} out of range for {} classes", bad, c)));
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        for (row, &l) in probs.chunks_mut(c).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            loss += lse - row[l];
            softmax_slice(row, c);
        }
        let n = labels.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            vec![],
            vec![loss / n],
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            rg,
        ))
    }

    /// Euclidean distance matrix between the rows of `[n, D]`.
    pub fn pairwise_dist(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(dim_err(format!("pairwise distance needs [n, D], got {:?}", s)));
        }
        let (n, d) = (s[0], s[1]);
        let xs = self.value(x);
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = (0..d)
                    .map(|c| {
                        let t = xs[i * d + c] - xs[j * d + c];
                        t * t
                    })
                    .sum::<f64>()
                    .sqrt();
                v[i * n + j] = dist;
                v[j * n + i] = dist;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![n, n], v, Op::PairwiseDist { x }, rg))
    }

    /// Weighted regularized triplet loss over a distance matrix.
    ///
    /// Per anchor, positives are weighted by `softmax(d)` and negatives by
    /// `softmax(-d)`; the loss is the batch mean of
    /// `softplus(sum w_p d_p - sum w_n d_n)`.
    pub fn wrt_loss(&mut self, dist: Var, labels: &[usize]) -> Result<Var> {
        let n = labels.len();
        if self.shape(dist) != [n, n] || n == 0 {
            return Err(dim_err(format!("distance {:?} for {} labels", self.shape(dist), n)));
        }
        let d = self.value(dist);
        let mut coef = vec![0.0; n * n];
        let mut loss = 0.0;
        for i in 0..n {
            let pos: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
            let neg: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
            if pos.is_empty() || neg.is_empty() {
                return Err(VldError::Contract(format!(
                    "anchor {} (label {}) has {} positives and {} negatives",
                    i,
                    labels[i],
                    pos.len(),
                    neg.len()
                )));
            }
            let mut wp: Vec<f64> = pos.iter().map(|&j| d[i * n + j]).collect();
            softmax_slice(&mut wp, pos.len());
            let mut wn: Vec<f64> = neg.iter().map(|&k| -d[i * n + k]).collect();
            softmax_slice(&mut wn, neg.len());
            let sp: f64 = pos.iter().zip(&wp).map(|(&j, w)| w * d[i * n + j]).sum();
            let sn: f64 = neg.iter().zip(&wn).map(|(&k, w)| w * d[i * n + k]).sum();
            loss += softplus(sp - sn);
            let sig = sigmoid(sp - sn) / n as f64;
            for (&j, w) in pos.iter().zip(&wp) {
                coef[i * n + j] = sig * w * (1.0 + d[i * n + j] - sp);
            }
            for (&k, w) in neg.iter().zip(&wn) {
                coef[i * n + k] = -sig * w * (1.0 - d[i * n + k] + sn);
            }
        }
        let rg = self.rg(dist);
        Ok(self.push(vec![], vec![loss / n as f64], Op::Wrt { dist, coef }, rg))
    }

    // ---- reverse pass ---------------------------------------------------

    /// Propagates d(loss)/d(node) back to every leaf that requires a gradient.
    /// Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if numel(self.shape(loss)) != 1 {
            return Err(VldError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                add_into(&mut self.nodes[i].grad, &g);
                continue;
            }
            for (parent, pg) in self.adjoint(i, &g) {
                if self.nodes[parent.0].requires_grad {
                    add_into(&mut grads[parent.0], &pg);
                }
            }
        }
        Ok(())
    }

    /// Clears every leaf gradient on the tape.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn adjoint(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => vec![],
            Op::Bmm { a, b, dims } => {
                let d = *dims;
                let mut out = Vec::with_capacity(2);
                if self.rg(*a) {
                    // dA = dC . B^T
                    let bt = if d.b_shared {
                        kernels::transpose_last2(self.value(*b), 1, d.k, d.n)
                    } else {
                        kernels::transpose_last2(self.value(*b), d.batch, d.k, d.n)
                    };
                    let da = kernels::bmm(
                        g,
                        &bt,
                        MatmulDims { batch: d.batch, m: d.m, k: d.n, n: d.k, b_shared: d.b_shared },
                    );
                    out.push((*a, da));
                }
                if self.rg(*b) {
                    // dB = A^T . dC, summed over the batch when B is shared
                    let db = if d.b_shared {
                        let rows = d.batch * d.m;
                        let at = kernels::transpose_last2(self.value(*a), 1, rows, d.k);
                        kernels::bmm(&at, g, MatmulDims { batch: 1, m: d.k, k: rows, n: d.n, b_shared: true })
                    } else {
                        let at = kernels::transpose_last2(self.value(*a), d.batch, d.m, d.k);
                        kernels::bmm(&at, g, MatmulDims { batch: d.batch, m: d.k, k: d.m, n: d.n, b_shared: false })
                    };
                    out.push((*b, db));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                vec![
                    (*a, g.iter().zip(vb).map(|(x, y)| x * y).collect()),
                    (*b, g.iter().zip(va).map(|(x, y)| x * y).collect()),
                ]
            }
            Op::AddBias { x, bias } => {
                let n = last_dim(&node.shape);
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![(*x, g.to_vec()), (*bias, db)]
            }
            Op::Scale { x, c } => vec![(*x, g.iter().map(|v| v * c).collect())],
            Op::ScaleBy { x, s } => {
                let c = self.value(*s)[0];
                let ds: f64 = g.iter().zip(self.value(*x)).map(|(a, b)| a * b).sum();
                vec![(*x, g.iter().map(|v| v * c).collect()), (*s, vec![ds])]
            }
            Op::Gelu(x) => vec![(
                *x,
                g.iter().zip(self.value(*x)).map(|(gv, &xv)| gv * gelu_grad(xv)).collect(),
            )],
            Op::Softmax { x } | Op::CausalSoftmax { x, .. } => {
                let n = last_dim(&node.shape);
                let y = &node.value;
                let mut dx = g.to_vec();
                kernels::for_each_row(&mut dx, n, |r, row| {
                    let yr = &y[r * n..(r + 1) * n];
                    let dot: f64 = row.iter().zip(yr).map(|(a, b)| a * b).sum();
                    row.iter_mut().zip(yr).for_each(|(a, b)| *a = b * (*a - dot));
                });
                vec![(*x, dx)]
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = last_dim(&node.shape);
                let gv = self.value(*gain);
                let mut dx = vec![0.0; g.len()];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                let mut dxh = vec![0.0; d];
                for (r, rs) in rstd.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    for c in 0..d {
                        dg[c] += gr[c] * xr[c];
                        db[c] += gr[c];
                        dxh[c] = gr[c] * gv[c];
                    }
                    let m1 = dxh.iter().sum::<f64>() / d as f64;
                    let m2 = dxh.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        dx[r * d + c] = rs * (dxh[c] - m1 - xr[c] * m2);
                    }
                }
                vec![(*x, dx), (*gain, dg), (*bias, db)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Permute { x, src } => {
                let mut dx = vec![0.0; g.len()];
                for (o, &s) in src.iter().enumerate() {
                    dx[s] = g[o];
                }
                vec![(*x, dx)]
            }
            Op::GatherRows { x, idx } => {
                let w = last_dim(&node.shape);
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, &s) in idx.iter().enumerate() {
                    dx[s * w..(s + 1) * w]
                        .iter_mut()
                        .zip(&g[r * w..(r + 1) * w])
                        .for_each(|(a, b)| *a += b);
                }
                vec![(*x, dx)]
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let len = self.value(p).len();
                        let part = g[off..off + len].to_vec();
                        off += len;
                        (p, part)
                    })
                    .collect()
            }
            Op::MeanGroups { x, group } => {
                let w = last_dim(&node.shape);
                let inv = 1.0 / *group as f64;
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, row) in dx.chunks_mut(w).enumerate() {
                    let gr = &g[(r / group) * w..(r / group + 1) * w];
                    row.iter_mut().zip(gr).for_each(|(a, b)| *a = b * inv);
                }
                vec![(*x, dx)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::NormalizeRows { x, norms } => {
                let d = last_dim(&node.shape);
                let y = &node.value;
                let mut dx = vec![0.0; g.len()];
                for (r, n) in norms.iter().enumerate() {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..d {
                        dx[r * d + c] = (gr[c] - yr[c] * dot) / n;
                    }
                }
                vec![(*x, dx)]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = probs.len() / labels.len();
                let scale = g[0] / labels.len() as f64;
                let mut dx = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * c + l] -= 1.0;
                }
                dx.iter_mut().for_each(|v| *v *= scale);
                vec![(*logits, dx)]
            }
            Op::PairwiseDist { x } => {
                let n = node.shape[0];
                let xs = self.value(*x);
                let d = xs.len() / n.max(1);
                let dist = &node.value;
                let mut dx = vec![0.0; xs.len()];
                for i in 0..n {
                    for j in 0..n {
                        let dij = dist[i * n + j];
                        if i == j || dij == 0.0 {
                            continue;
                        }
                        let coef = (g[i * n + j] + g[j * n + i]) / dij;
                        if coef == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            dx[i * d + c] += coef * (xs[i * d + c] - xs[j * d + c]);
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Wrt { dist, coef } => vec![(*dist, coef.iter().map(|c| c * g[0]).collect())],
        }
    }
}
