//! A small reverse-mode automatic differentiation tape over `f64` matrices.
//!
//! Every value is a 2-D row-major [`Mat`]. Operations append a node to the
//! tape; [`Tape::backward`] walks the nodes in reverse and accumulates
//! adjoints. Inner products accumulate left to right, so results are
//! reproducible bit for bit.

use std::f64::consts::PI;

/// Row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a · b`
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.data[i * a.cols + k] * b.data[k * b.cols + j];
            }
            out.data[i * b.cols + j] = acc;
        }
    }
    out
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimension");
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            let br = b.row(j);
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += ar[k] * br[k];
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    out
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dimension");
    let mut out = Mat::zeros(a.cols, b.cols);
    for i in 0..a.cols {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.rows {
                acc += a.data[k * a.cols + i] * b.data[k * b.cols + j];
            }
            out.data[i * b.cols + j] = acc;
        }
    }
    out
}

const GELU_C: f64 = 0.044715;

/// `sqrt(2/pi)`
fn gelu_k() -> f64 {
    (2.0 / PI).sqrt()
}

/// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (gelu_k() * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = gelu_k();
    let t = (k * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const NORMALIZE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    /// out[i][j] = v[0][j] * mask[i][j]
    RowTimesConst(Var, Mat),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    MeanPoolGroups(Var, usize),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Mat,
    },
    MaskedMse {
        pred: Var,
        target: Mat,
        mask: Mat,
        count: f64,
    },
    WeightedSum(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`; with `b` a `[out, in]` weight this is a dense layer.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = matmul_nt(self.value(a), self.value(b));
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!((out.rows, out.cols), (self.value(b).rows, self.value(b).cols), "add shapes");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, self.value(a).cols), "row broadcast shape");
        let mut out = self.value(a).clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] += r.data[j];
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(a, s))
    }

    /// Adds a constant (non-differentiated) matrix.
    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(c);
        self.push(out, Op::AddConst(a))
    }

    pub fn row_times_const(&mut self, row: Var, mask: Mat) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, mask.cols), "row/mask shape");
        let mut out = mask.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] *= r.data[j];
            }
        }
        self.push(out, Op::RowTimesConst(row, mask))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(out, Op::Gelu(a))
    }

    /// Per-row layer normalization with learned `1 x c` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let g = self.value(gamma);
        let b = self.value(beta);
        assert_eq!((g.rows, g.cols, b.rows, b.cols), (1, cols, 1, cols), "layer norm params");
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..cols {
                let h = (row[j] - mean) * inv;
                xhat.data[i * cols + j] = h;
                out.data[i * cols + j] = g.data[j] * h + b.data[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for i in 0..av.rows {
            softmax_in_place(&mut out.data[i * av.cols..(i + 1) * av.cols]);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows);
        for i in 0..xv.rows {
            let row = &mut out.data[i * xv.cols..(i + 1) * xv.cols];
            let n = (row.iter().map(|v| v * v).sum::<f64>() + NORMALIZE_EPS).sqrt();
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        self.push(out, Op::NormalizeRows { x, norms })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.rows, "row slice out of range");
        let out = Mat::from_vec(len, av.cols, av.data[start * av.cols..(start + len) * av.cols].to_vec());
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat column count");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        let out = Mat::from_vec(rows, cols, av.data.clone());
        self.push(out, Op::Reshape(a))
    }

    /// Averages consecutive groups of `group` rows: `[b*group, c] -> [b, c]`.
    pub fn mean_pool_groups(&mut self, a: Var, group: usize) -> Var {
        let av = self.value(a);
        assert!(group > 0 && av.rows % group == 0, "pool group");
        let b = av.rows / group;
        let mut out = Mat::zeros(b, av.cols);
        for i in 0..b {
            for t in 0..group {
                let src = av.row(i * group + t);
                for j in 0..av.cols {
                    out.data[i * av.cols + j] += src[j];
                }
            }
            for j in 0..av.cols {
                out.data[i * av.cols + j] /= group as f64;
            }
        }
        self.push(out, Op::MeanPoolGroups(a, group))
    }

    /// Mean softmax cross-entropy; a `1 x 1` node. Empty batches give 0.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, labels.len(), "one label per row");
        let mut probs = lv.clone();
        let mut total = 0.0;
        for i in 0..lv.rows {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[i]];
            softmax_in_place(&mut probs.data[i * lv.cols..(i + 1) * lv.cols]);
        }
        let loss = if lv.rows == 0 { 0.0 } else { total / lv.rows as f64 };
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Squared error averaged over entries where `mask` is non-zero.
    pub fn masked_mse(&mut self, pred: Var, target: Mat, mask: Mat) -> Var {
        let pv = self.value(pred);
        assert_eq!((pv.rows, pv.cols), (target.rows, target.cols), "mse shapes");
        let count = mask.data.iter().filter(|&&m| m != 0.0).count() as f64;
        let mut total = 0.0;
        for ((p, t), m) in pv.data.iter().zip(&target.data).zip(&mask.data) {
            total += m * (p - t) * (p - t);
        }
        let loss = if count == 0.0 { 0.0 } else { total / count };
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::MaskedMse {
                pred,
                target,
                mask,
                count,
            },
        )
    }

    /// `sum(a ⊙ w)` for a constant `w`; a `1 x 1` node.
    pub fn weighted_sum(&mut self, a: Var, w: Mat) -> Var {
        let av = self.value(a);
        assert_eq!((av.rows, av.cols), (w.rows, w.cols), "weighted sum shapes");
        let s = av.data.iter().zip(&w.data).fold(0.0, |acc, (x, y)| acc + x * y);
        self.push(Mat::from_vec(1, 1, vec![s]), Op::WeightedSum(a, w))
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let lv = self.value(loss);
        assert_eq!((lv.rows, lv.cols), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, self.value(*b));
                    let db = matmul_tn(self.value(*a), &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = matmul(&g, self.value(*b));
                    let db = matmul_tn(&g, self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            dr.data[j] += g.data[i * g.cols + j];
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, dr);
                }
                Op::Scale(a, s) => {
                    let mut da = g;
                    da.data.iter_mut().for_each(|v| *v *= s);
                    accumulate(&mut grads, *a, da);
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::RowTimesConst(row, mask) => {
                    let mut dr = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            dr.data[j] += g.data[i * g.cols + j] * mask.data[i * g.cols + j];
                        }
                    }
                    accumulate(&mut grads, *row, dr);
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let mut da = g;
                    for (d, x) in da.data.iter_mut().zip(&av.data) {
                        *d *= gelu_grad(*x);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = (g.rows, g.cols);
                    let gv = self.value(*gamma);
                    let mut dgamma = Mat::zeros(1, cols);
                    let mut dbeta = Mat::zeros(1, cols);
                    let mut dx = Mat::zeros(rows, cols);
                    for i in 0..rows {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..cols {
                            let gij = g.data[i * cols + j];
                            let h = xhat.data[i * cols + j];
                            dgamma.data[j] += gij * h;
                            dbeta.data[j] += gij;
                            let dh = gij * gv.data[j];
                            sum_dh += dh;
                            sum_dh_h += dh * h;
                        }
                        let n = cols as f64;
                        for j in 0..cols {
                            let h = xhat.data[i * cols + j];
                            let dh = g.data[i * cols + j] * gv.data[j];
                            dx.data[i * cols + j] = inv_std[i] / n * (n * dh - sum_dh - h * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Mat::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot = yr.iter().zip(gr).fold(0.0, |acc, (a, b)| acc + a * b);
                        for j in 0..g.cols {
                            da.data[i * g.cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot = yr.iter().zip(gr).fold(0.0, |acc, (a, b)| acc + a * b);
                        for j in 0..g.cols {
                            dx.data[i * g.cols + j] = (gr[j] - yr[j] * dot) / norms[i];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut da = Mat::zeros(av.rows, av.cols);
                    da.data[start * av.cols..start * av.cols + g.data.len()].copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.data.len();
                        let dp = Mat::from_vec(pv.rows, pv.cols, g.data[offset..offset + n].to_vec());
                        offset += n;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::Reshape(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads, *a, Mat::from_vec(av.rows, av.cols, g.data));
                }
                Op::MeanPoolGroups(a, group) => {
                    let av = self.value(*a);
                    let mut da = Mat::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        for j in 0..av.cols {
                            da.data[r * av.cols + j] = g.data[(r / group) * g.cols + j] / *group as f64;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let upstream = g.scalar();
                    let mut dl = probs.clone();
                    if !labels.is_empty() {
                        let n = labels.len() as f64;
                        for (i, &y) in labels.iter().enumerate() {
                            dl.data[i * probs.cols + y] -= 1.0;
                        }
                        dl.data.iter_mut().for_each(|v| *v *= upstream / n);
                    }
                    accumulate(&mut grads, *logits, dl);
                }
                Op::MaskedMse {
                    pred,
                    target,
                    mask,
                    count,
                } => {
                    let upstream = g.scalar();
                    let pv = self.value(*pred);
                    let mut dp = Mat::zeros(pv.rows, pv.cols);
                    if *count > 0.0 {
                        for i in 0..dp.data.len() {
                            dp.data[i] = 2.0 * mask.data[i] * (pv.data[i] - target.data[i]) * upstream / count;
                        }
                    }
                    accumulate(&mut grads, *pred, dp);
                }
                Op::WeightedSum(a, w) => {
                    let upstream = g.scalar();
                    let mut da = w.clone();
                    da.data.iter_mut().for_each(|v| *v *= upstream);
                    accumulate(&mut grads, *a, da);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Adjoints produced by [`Tape::backward`]. Only leaves keep theirs.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_finite_differences() {
        for c in super::super::gradcheck::layer_suite() {
            assert!(c.max_rel_error < 1e-4, "{}: {}", c.name, c.max_rel_error);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let mut t = Tape::new();
        let l = t.leaf(Mat::zeros(3, 5));
        let loss = t.cross_entropy(l, &[0, 1, 4]);
        assert!((t.value(loss).scalar() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        // tanh-approximation values
        assert!((gelu(1.0) - 0.841_191_990_608_276_8).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_808_009_391_723_24).abs() < 1e-12);
    }
}
