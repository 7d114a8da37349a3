use std::rc::Rc;

use rand::Rng;

use super::matrix::Matrix;
use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};

/// Fully connected layer `x·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let weight = params.add_uniform(format!("{name}.weight"), fan_in, fan_out, fan_in, rng);
        let bias = params.add_uniform(format!("{name}.bias"), 1, fan_out, fan_in, rng);
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Var {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }
}

/// Graph convolution with a skip connection: `ReLU(Â·X·W + X·W_skip)`.
///
/// `Â` is applied per graph to consecutive blocks of `Â.rows()` node rows, so a
/// batch of equally sized graphs is a single stacked feature matrix.
#[derive(Clone, Copy, Debug)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub skip: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl GcnLayer {
    pub fn new(params: &mut ParamSet, name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let weight = params.add_uniform(format!("{name}.weight"), in_features, out_features, in_features, rng);
        let skip = params.add_uniform(format!("{name}.skip"), in_features, out_features, in_features, rng);
        Self { weight, skip, in_features, out_features }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, adj: Rc<Matrix>, x: Var) -> Var {
        let w = tape.param(params, self.weight);
        let ws = tape.param(params, self.skip);
        let agg = tape.graph_aggregate(adj, x);
        let h = tape.matmul(agg, w);
        let s = tape.matmul(x, ws);
        let pre = tape.add(h, s);
        tape.relu(pre)
    }
}

/// Standalone GCN evaluation used by tests and the FFI layer.
pub fn gcn_layer(x: &Matrix, adj: &Matrix, weight: &Matrix, skip: &Matrix) -> Result<Matrix, super::NnError> {
    let n = adj.rows();
    if adj.cols() != n || x.rows() % n.max(1) != 0 || weight.rows() != x.cols() || skip.shape() != weight.shape() {
        return Err(super::NnError::ShapeMismatch(format!(
            "x {:?}, adjacency {:?}, weight {:?}, skip {:?}",
            x.shape(),
            adj.shape(),
            weight.shape(),
            skip.shape()
        )));
    }
    let mut tape = Tape::no_grad();
    let xv = tape.constant(x.clone());
    let w = tape.constant(weight.clone());
    let ws = tape.constant(skip.clone());
    let agg = tape.graph_aggregate(Rc::new(adj.clone()), xv);
    let h = tape.matmul(agg, w);
    let s = tape.matmul(xv, ws);
    let pre = tape.add(h, s);
    let out = tape.relu(pre);
    Ok(tape.value(out).clone())
}
