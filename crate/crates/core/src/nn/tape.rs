//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list visits every node after all of its consumers. Nodes that do not
//! depend on a gradient-requiring leaf are skipped during the sweep.

use ndarray::{s, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    /// Row-wise standardization; the cache holds `1 / sigma` per row.
    LayerNormRows(Var),
    MeanRows(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
    cache: Option<Vec<f64>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if it did not require one or was unused.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad, cache: None });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad, cache: None });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    /// `a + row`, broadcasting a `1 x m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.push(v, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let mut inv = Vec::with_capacity(v.nrows());
        for mut row in v.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.fold(0.0, |acc, &x| acc + (x - mean) * (x - mean)) / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|x| (x - mean) * is);
            inv.push(is);
        }
        let out = self.push(v, Op::LayerNormRows(a), &[a]);
        self.nodes[out.0].cache = Some(inv);
        out
    }

    /// Column means, `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("equal column counts");
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a), &[a])
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("element count preserved");
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Reverse sweep from `out`, seeded with `seed` (shaped like `out`).
    pub fn backward(&self, out: Var, seed: Array2<f64>) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(seed.dim(), self.value(out).dim(), "seed shape");
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let da = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    self.acc_if(&mut grads, *b, || g.clone());
                    self.acc_if(&mut grads, *a, || g);
                }
                Op::AddRow(a, row) => {
                    self.acc_if(&mut grads, *row, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    self.acc_if(&mut grads, *a, || g);
                }
                Op::Mul(a, b) => {
                    self.acc_if(&mut grads, *a, || &g * self.value(*b));
                    self.acc_if(&mut grads, *b, || &g * self.value(*a));
                }
                Op::MulRow(a, row) => {
                    self.acc_if(&mut grads, *row, || {
                        (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0))
                    });
                    self.acc_if(&mut grads, *a, || &g * self.value(*row));
                }
                Op::Scale(a, k) => self.acc_if(&mut grads, *a, || g * *k),
                Op::Tanh(a) => {
                    let y = &node.value;
                    self.acc_if(&mut grads, *a, || {
                        let mut d = g;
                        d.zip_mut_with(y, |gv, &yv| *gv *= 1.0 - yv * yv);
                        d
                    });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    self.acc_if(&mut grads, *a, || {
                        let mut d = g;
                        d.zip_mut_with(y, |gv, &yv| *gv *= yv * (1.0 - yv));
                        d
                    });
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    self.acc_if(&mut grads, *a, || {
                        let mut d = g;
                        d.zip_mut_with(x, |gv, &xv| {
                            let th = (GELU_C * (xv + GELU_A * xv * xv * xv)).tanh();
                            let dudx = GELU_C * (1.0 + 3.0 * GELU_A * xv * xv);
                            *gv *= 0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th * th) * dudx;
                        });
                        d
                    });
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    self.acc_if(&mut grads, *a, || {
                        let mut d = g;
                        for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                            let dot = drow.dot(&yrow);
                            drow.zip_mut_with(&yrow, |gv, &yv| *gv = yv * (*gv - dot));
                        }
                        d
                    });
                }
                Op::LayerNormRows(a) => {
                    let xhat = &node.value;
                    let inv = node.cache.as_ref().expect("layer norm cache");
                    self.acc_if(&mut grads, *a, || {
                        let mut d = g;
                        for ((mut drow, xrow), &is) in d.rows_mut().into_iter().zip(xhat.rows()).zip(inv) {
                            let n = drow.len() as f64;
                            let mean_g = drow.sum() / n;
                            let mean_gx = drow.dot(&xrow) / n;
                            drow.zip_mut_with(&xrow, |gv, &xv| *gv = is * (*gv - mean_g - xv * mean_gx));
                        }
                        d
                    });
                }
                Op::MeanRows(a) => {
                    let (n, m) = self.value(*a).dim();
                    self.acc_if(&mut grads, *a, || {
                        g.broadcast((n, m)).expect("row broadcast").mapv(|v| v / n as f64)
                    });
                }
                Op::SliceCols(a, start) => {
                    let dim = self.value(*a).dim();
                    let len = g.ncols();
                    self.acc_if(&mut grads, *a, || {
                        let mut d = Array2::zeros(dim);
                        d.slice_mut(s![.., *start..*start + len]).assign(&g);
                        d
                    });
                }
                Op::SliceRows(a, start) => {
                    let dim = self.value(*a).dim();
                    let len = g.nrows();
                    self.acc_if(&mut grads, *a, || {
                        let mut d = Array2::zeros(dim);
                        d.slice_mut(s![*start..*start + len, ..]).assign(&g);
                        d
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        self.acc_if(&mut grads, *p, || g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        self.acc_if(&mut grads, *p, || g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::Transpose(a) => self.acc_if(&mut grads, *a, || g.t().to_owned()),
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    self.acc_if(&mut grads, *a, || {
                        let flat: Vec<f64> = g.iter().copied().collect();
                        Array2::from_shape_vec(dim, flat).expect("element count preserved")
                    });
                }
            }
        }
        Gradients { grads }
    }

    fn acc_if(&self, grads: &mut [Option<Array2<f64>>], v: Var, delta: impl FnOnce() -> Array2<f64>) {
        if self.nodes[v.0].needs_grad {
            accumulate(grads, v, delta());
        }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Checks every op's backward pass against central differences on the
    /// scalar `sum(out * probe)`.
    fn check(build: impl Fn(&mut Tape, Var) -> Var, x: Array2<f64>) {
        let value = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone(), false);
            let out = build(&mut t, v);
            let o = t.value(out);
            o.iter().enumerate().map(|(i, y)| y * (1.0 + 0.1 * i as f64)).sum::<f64>()
        };
        let mut t = Tape::new();
        let v = t.leaf(x.clone(), true);
        let out = build(&mut t, v);
        let dim = t.value(out).dim();
        let seed = Array2::from_shape_fn(dim, |(r, c)| 1.0 + 0.1 * (r * dim.1 + c) as f64);
        let grads = t.backward(out, seed);
        let analytic = grads.get(v).unwrap();
        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (value(&xp) - value(&xm)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            assert!((a - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "idx {idx}: analytic {a} fd {fd}");
        }
    }

    fn x() -> Array2<f64> {
        array![[0.3, -1.2, 0.8], [1.5, 0.1, -0.4]]
    }

    #[test]
    fn elementwise_ops() {
        check(|t, v| t.tanh(v), x());
        check(|t, v| t.sigmoid(v), x());
        check(|t, v| t.gelu(v), x());
        check(|t, v| t.scale(v, -2.5), x());
        check(|t, v| t.mul(v, v), x());
        check(|t, v| t.add(v, v), x());
    }

    #[test]
    fn row_ops() {
        check(|t, v| t.softmax_rows(v), x());
        check(|t, v| t.layer_norm_rows(v), x());
        check(|t, v| t.mean_rows(v), x());
        check(|t, v| {
            let r = t.slice_rows(v, 1, 1);
            let a = t.add_row(v, r);
            t.mul_row(a, r)
        }, x());
    }

    #[test]
    fn structural_ops() {
        check(|t, v| {
            let tr = t.transpose(v);
            t.matmul(v, tr)
        }, x());
        check(|t, v| {
            let a = t.slice_cols(v, 1, 2);
            let b = t.slice_cols(v, 0, 1);
            let c = t.concat_cols(&[a, b, a]);
            let r = t.reshape(c, 5, 2);
            t.concat_rows(&[r, r])
        }, x());
    }

    #[test]
    fn constant_leaves_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(x(), false);
        let b = t.leaf(x(), true);
        let c = t.mul(a, b);
        let g = t.backward(c, Array2::ones((2, 3)));
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap(), &x());
    }
}
