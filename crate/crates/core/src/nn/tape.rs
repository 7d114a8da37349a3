//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are appended
//! in evaluation order, so the tape is a topological order by construction and
//! [`Tape::backward`] is a single reverse sweep.

use std::rc::Rc;

use super::matrix::Matrix;
use super::params::{ParamId, ParamSet};
use super::special::{digamma, ln_gamma};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Noise consumed by one reparameterized Gamma draw (Marsaglia–Tsang).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaNoise {
    /// Accepted standard-normal proposal.
    pub normal: f64,
    /// Uniform used for shape boosting when the shape is below one.
    pub boost_uniform: Option<f64>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param { set: u64, id: ParamId },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    SubCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    LnGamma(Var),
    Square(Var),
    SumAll(Var),
    RowSum(Var),
    LogSumExpRows(Var),
    ConcatCols(Var, Var),
    Reshape(Var),
    GraphAggregate { adj: Rc<Matrix>, x: Var },
    SegmentSum { x: Var, block: usize },
    RepeatBlocks { x: Var, block: usize, reps: usize },
    Min(Var, Var),
    Max(Var, Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    LogGammaSample { shape: Var, noise: Rc<Vec<GammaNoise>> },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

/// Recording of one differentiable computation.
pub struct Tape {
    nodes: Vec<Node>,
    frozen_params: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(128), frozen_params: false }
    }

    /// A tape on which parameters enter as constants (target networks, evaluation).
    pub fn no_grad() -> Self {
        Self { nodes: Vec::with_capacity(64), frozen_params: true }
    }

    /// While frozen, parameters enter as constants; lets one network be
    /// differentiated through without accumulating into its parameters.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen_params = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input not backed by a parameter set (used for gradient checks).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        let value = set.value(id).clone();
        if self.frozen_params {
            self.push(value, Op::Leaf, false)
        } else {
            self.push(value, Op::Param { set: set.uid(), id }, true)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Adds the `1×c` row vector `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(bias), (1, c), "add_row bias shape");
        let mut v = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..r {
            for (x, y) in v.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(v, Op::AddRow(a, bias), ng)
    }

    /// Multiplies row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, _) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "mul_col column shape");
        let mut v = self.value(a).clone();
        for i in 0..r {
            let s = self.value(col).data()[i];
            v.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(v, Op::MulCol(a, col), ng)
    }

    /// Divides row `i` of `a` by `col[i]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        let (r, _) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "div_col column shape");
        let mut v = self.value(a).clone();
        for i in 0..r {
            let s = self.value(col).data()[i];
            v.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(v, Op::DivCol(a, col), ng)
    }

    /// Subtracts `col[i]` from every entry of row `i` of `a`.
    pub fn sub_col(&mut self, a: Var, col: Var) -> Var {
        let (r, _) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "sub_col column shape");
        let mut v = self.value(a).clone();
        for i in 0..r {
            let s = self.value(col).data()[i];
            v.row_mut(i).iter_mut().for_each(|x| *x -= s);
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(v, Op::SubCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        let ng = self.ng(a);
        self.push(v, Op::Softplus(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(v, Op::Log(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn ln_gamma(&mut self, a: Var) -> Var {
        let v = self.value(a).map(ln_gamma);
        let ng = self.ng(a);
        self.push(v, Op::LnGamma(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).row_sums();
        let ng = self.ng(a);
        self.push(v, Op::RowSum(a), ng)
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows()).map(|r| logsumexp(m.row(r))).collect();
        let v = Matrix::from_vec(m.rows(), 1, data);
        let ng = self.ng(a);
        self.push(v, Op::LogSumExpRows(a), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ra, rb, "concat_cols row mismatch");
        let mut v = Matrix::zeros(ra, ca + cb);
        for r in 0..ra {
            v.row_mut(r)[..ca].copy_from_slice(self.value(a).row(r));
            v.row_mut(r)[ca..].copy_from_slice(self.value(b).row(r));
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::ConcatCols(a, b), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).clone().reshaped(rows, cols);
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    /// For each consecutive block of `adj.rows()` rows of `x`, computes `adj · block`.
    pub fn graph_aggregate(&mut self, adj: Rc<Matrix>, x: Var) -> Var {
        let n = adj.rows();
        assert_eq!(adj.cols(), n, "adjacency must be square");
        let (r, c) = self.shape(x);
        assert!(n > 0 && r % n == 0, "rows not a multiple of graph size");
        let xv = self.value(x);
        let mut v = Matrix::zeros(r, c);
        for b in 0..r / n {
            for i in 0..n {
                let out = b * n + i;
                for j in 0..n {
                    let w = adj[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    let src = xv.row(b * n + j).to_vec();
                    for (o, s) in v.row_mut(out).iter_mut().zip(&src) {
                        *o += w * s;
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(v, Op::GraphAggregate { adj, x }, ng)
    }

    /// Sums each consecutive block of `block` rows into one row.
    pub fn segment_sum(&mut self, x: Var, block: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(block > 0 && r % block == 0, "rows not a multiple of block");
        let xv = self.value(x);
        let mut v = Matrix::zeros(r / block, c);
        for i in 0..r {
            let src = xv.row(i);
            for (o, s) in v.row_mut(i / block).iter_mut().zip(src) {
                *o += s;
            }
        }
        let ng = self.ng(x);
        self.push(v, Op::SegmentSum { x, block }, ng)
    }

    /// Repeats each consecutive block of `block` rows `reps` times in place.
    pub fn repeat_blocks(&mut self, x: Var, block: usize, reps: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(block > 0 && r % block == 0, "rows not a multiple of block");
        let xv = self.value(x);
        let mut data = Vec::with_capacity(r * c * reps);
        for b in 0..r / block {
            let chunk = &xv.data()[b * block * c..(b + 1) * block * c];
            for _ in 0..reps {
                data.extend_from_slice(chunk);
            }
        }
        let v = Matrix::from_vec(r * reps, c, data);
        let ng = self.ng(x);
        self.push(v, Op::RepeatBlocks { x, block, reps }, ng)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), f64::min);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Min(a, b), ng)
    }

    /// Elementwise maximum. Ties route the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| if x >= y { x } else { y });
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Max(a, b), ng)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|v| v.clamp(lo, hi));
        let ng = self.ng(x);
        self.push(v, Op::Clamp { x, lo, hi }, ng)
    }

    /// Log of Gamma(shape, 1) draws expressed as a differentiable function of
    /// `shape` given the accepted proposal noise.
    pub fn log_gamma_sample(&mut self, shape: Var, noise: Rc<Vec<GammaNoise>>) -> Var {
        let s = self.value(shape);
        assert_eq!(s.len(), noise.len(), "one noise record per shape entry");
        let data = s.data().iter().zip(noise.iter()).map(|(&a, n)| log_gamma_from_noise(a, n).0).collect();
        let v = Matrix::from_vec(s.rows(), s.cols(), data);
        let ng = self.ng(shape);
        self.push(v, Op::LogGammaSample { shape, noise }, ng)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward requires a scalar loss");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &self.nodes[idx].value;
        let acc = |grads: &mut [Option<Matrix>], v: Var, delta: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, bias) => {
                acc(grads, *a, g.clone());
                if self.ng(*bias) {
                    acc(grads, *bias, g.col_sums());
                }
            }
            Op::MulCol(a, col) => {
                let cv = self.value(*col);
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let s = cv.data()[i];
                        ga.row_mut(i).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(grads, *a, ga);
                }
                if self.ng(*col) {
                    let av = self.value(*a);
                    let data = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    acc(grads, *col, Matrix::from_vec(g.rows(), 1, data));
                }
            }
            Op::DivCol(a, col) => {
                let cv = self.value(*col);
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let s = cv.data()[i];
                        ga.row_mut(i).iter_mut().for_each(|x| *x /= s);
                    }
                    acc(grads, *a, ga);
                }
                if self.ng(*col) {
                    // d(a/s)/ds = -a/s² = -out/s
                    let data = (0..g.rows())
                        .map(|i| {
                            let s = cv.data()[i];
                            -g.row(i).iter().zip(out.row(i)).map(|(x, y)| x * y).sum::<f64>() / s
                        })
                        .collect();
                    acc(grads, *col, Matrix::from_vec(g.rows(), 1, data));
                }
            }
            Op::SubCol(a, col) => {
                acc(grads, *a, g.clone());
                if self.ng(*col) {
                    acc(grads, *col, g.row_sums().map(|x| -x));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                acc(grads, *a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::Relu(a) => {
                acc(grads, *a, g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Softplus(a) => {
                acc(grads, *a, g.zip_map(self.value(*a), |x, y| x * sigmoid(y)));
            }
            Op::Log(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Exp(a) => acc(grads, *a, g.zip_map(out, |x, y| x * y)),
            Op::LnGamma(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, y| x * digamma(y))),
            Op::Square(a) => acc(grads, *a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y)),
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                acc(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    let gi = g.data()[i];
                    ga.row_mut(i).iter_mut().for_each(|x| *x = gi);
                }
                acc(grads, *a, ga);
            }
            Op::LogSumExpRows(a) => {
                let av = self.value(*a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    let lse = out.data()[i];
                    let gi = g.data()[i];
                    for (o, &x) in ga.row_mut(i).iter_mut().zip(av.row(i)) {
                        *o = if lse == f64::NEG_INFINITY { 0.0 } else { gi * (x - lse).exp() };
                    }
                }
                acc(grads, *a, ga);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                let cb = self.shape(*b).1;
                let r = g.rows();
                if self.ng(*a) {
                    let mut ga = Matrix::zeros(r, ca);
                    for i in 0..r {
                        ga.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                    }
                    acc(grads, *a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Matrix::zeros(r, cb);
                    for i in 0..r {
                        gb.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                    }
                    acc(grads, *b, gb);
                }
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                acc(grads, *a, g.clone().reshaped(r, c));
            }
            Op::GraphAggregate { adj, x } => {
                let n = adj.rows();
                let (r, c) = g.shape();
                let mut gx = Matrix::zeros(r, c);
                for b in 0..r / n {
                    for i in 0..n {
                        let gi = g.row(b * n + i).to_vec();
                        for j in 0..n {
                            let w = adj[(i, j)];
                            if w == 0.0 {
                                continue;
                            }
                            for (o, s) in gx.row_mut(b * n + j).iter_mut().zip(&gi) {
                                *o += w * s;
                            }
                        }
                    }
                }
                acc(grads, *x, gx);
            }
            Op::SegmentSum { x, block } => {
                let (r, c) = self.shape(*x);
                let mut gx = Matrix::zeros(r, c);
                for i in 0..r {
                    gx.row_mut(i).copy_from_slice(g.row(i / block));
                }
                acc(grads, *x, gx);
            }
            Op::RepeatBlocks { x, block, reps } => {
                let (r, c) = self.shape(*x);
                let mut gx = Matrix::zeros(r, c);
                let width = block * c;
                for b in 0..r / block {
                    let dst = &mut gx.data_mut()[b * width..(b + 1) * width];
                    for k in 0..*reps {
                        let start = (b * reps + k) * width;
                        for (o, s) in dst.iter_mut().zip(&g.data()[start..start + width]) {
                            *o += s;
                        }
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Min(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mask_a = av.zip_map(bv, |x, y| if x <= y { 1.0 } else { 0.0 });
                acc(grads, *a, g.zip_map(&mask_a, |x, m| x * m));
                acc(grads, *b, g.zip_map(&mask_a, |x, m| x * (1.0 - m)));
            }
            Op::Max(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mask_a = av.zip_map(bv, |x, y| if x >= y { 1.0 } else { 0.0 });
                acc(grads, *a, g.zip_map(&mask_a, |x, m| x * m));
                acc(grads, *b, g.zip_map(&mask_a, |x, m| x * (1.0 - m)));
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                acc(grads, *x, g.zip_map(self.value(*x), |gv, v| if v >= lo && v <= hi { gv } else { 0.0 }));
            }
            Op::LogGammaSample { shape, noise } => {
                let sv = self.value(*shape);
                let data = sv
                    .data()
                    .iter()
                    .zip(noise.iter())
                    .zip(g.data())
                    .map(|((&a, n), gv)| gv * log_gamma_from_noise(a, n).1)
                    .collect();
                acc(grads, *shape, Matrix::from_vec(sv.rows(), sv.cols(), data));
            }
        }
    }

    /// Branch selection of every non-smooth op (ReLU sign, clamp range, min/max
    /// side). Two evaluations with equal signatures lie on the same smooth piece.
    pub fn nonsmooth_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => sig.extend(self.value(*a).data().iter().map(|&x| x > 0.0)),
                Op::Clamp { x, lo, hi } => {
                    sig.extend(self.value(*x).data().iter().map(|&v| v >= *lo && v <= *hi));
                }
                Op::Min(a, b) => {
                    sig.extend(self.value(*a).data().iter().zip(self.value(*b).data()).map(|(x, y)| x <= y));
                }
                Op::Max(a, b) => {
                    sig.extend(self.value(*a).data().iter().zip(self.value(*b).data()).map(|(x, y)| x >= y));
                }
                _ => {}
            }
        }
        sig
    }

    /// Adds the gradients of every parameter of `set` recorded on this tape into `set`.
    pub fn accumulate_into(&self, grads: &Gradients, set: &mut ParamSet) {
        let uid = set.uid();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { set: s, id } = node.op {
                if s == uid {
                    if let Some(g) = &grads.grads[i] {
                        set.grad_mut(id).add_assign(g);
                    }
                }
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Returns `(ln z, d ln z / d shape)` for the Marsaglia–Tsang transform of `noise`.
pub fn log_gamma_from_noise(shape: f64, noise: &GammaNoise) -> (f64, f64) {
    let (base_shape, boost) = match noise.boost_uniform {
        Some(u) => (shape + 1.0, Some(u)),
        None => (shape, None),
    };
    let d = base_shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    let x = noise.normal;
    let w = 1.0 + c * x;
    // ln z = ln d + 3 ln w
    let dc_dd = -0.5 * 9.0 * (9.0 * d).powf(-1.5);
    let mut log_z = d.ln() + 3.0 * w.ln();
    let mut dlog = 1.0 / d + 3.0 * x * dc_dd / w;
    if let Some(u) = boost {
        log_z += u.ln() / shape;
        dlog -= u.ln() / (shape * shape);
    }
    (log_z, dlog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_inputs, worst};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
    }

    #[test]
    fn quadratic_gradient_is_twice_weights() {
        let mut tape = Tape::new();
        let w = tape.leaf(Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        let g = tape.backward(loss);
        assert_eq!(g.wrt(w).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_zero_parameter_gradients() {
        let mut set = ParamSet::new();
        let id = set.add("w", Matrix::from_vec(2, 1, vec![3.0, 4.0]));
        let mut tape = Tape::new();
        let w = tape.param(&set, id);
        let z = tape.scale(w, 0.0);
        let s = tape.sum(z);
        let loss = tape.add_scalar(s, 7.0);
        let g = tape.backward(loss);
        tape.accumulate_into(&g, &mut set);
        assert!(set.grad(id).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut set = ParamSet::new();
        let id = set.add("w", Matrix::scalar(1.5));
        for _ in 0..3 {
            let mut tape = Tape::new();
            let w = tape.param(&set, id);
            let loss = tape.square(w);
            let g = tape.backward(loss);
            tape.accumulate_into(&g, &mut set);
        }
        assert_eq!(set.grad(id).item(), 9.0);
    }

    #[test]
    fn frozen_tape_records_no_gradient() {
        let mut set = ParamSet::new();
        let id = set.add("w", Matrix::scalar(2.0));
        let mut tape = Tape::no_grad();
        let w = tape.param(&set, id);
        let loss = tape.square(w);
        let g = tape.backward(loss);
        tape.accumulate_into(&g, &mut set);
        assert_eq!(set.grad(id).item(), 0.0);
    }

    #[test]
    fn composite_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let adj = Rc::new(Matrix::filled(3, 3, 1.0 / 3.0));
        let inputs = vec![random(6, 4, -1.0, 1.0, &mut rng), random(4, 2, -1.0, 1.0, &mut rng), random(6, 1, 0.5, 2.0, &mut rng)];
        let f = move |t: &mut Tape, v: &[Var]| {
            let agg = t.graph_aggregate(adj.clone(), v[0]);
            let h = t.matmul(agg, v[1]);
            let sp = t.softplus(h);
            let m = t.mul_col(sp, v[2]);
            let d = t.div_col(m, v[2]);
            let e = t.concat_cols(d, m);
            let seg = t.segment_sum(e, 3);
            let rep = t.repeat_blocks(seg, 1, 2);
            let lse = t.logsumexp_rows(rep);
            let sc = t.sub_col(rep, lse);
            let sq = t.square(sc);
            t.sum(sq)
        };
        let coords: Vec<(usize, usize)> = (0..24).map(|i| (0, i)).chain((0..8).map(|i| (1, i))).chain((0..6).map(|i| (2, i))).collect();
        let probes = check_inputs(&inputs, &f, &coords, 1e-5);
        let (err, n) = worst(&probes);
        assert_eq!(n, coords.len());
        assert!(err < 1e-6, "worst relative error {err}");
    }
}
