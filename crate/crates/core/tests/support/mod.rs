//! Shared finite-difference suites for the gradient tests and the acceptance run.

#![allow(dead_code)]

use std::rc::Rc;

use amod_core::agents::{ActorNet, CriticArch, CriticVariant};
use amod_core::env::complete_graph_adjacency;
use amod_core::nn::dirichlet::{log_prob_rows, sample_log_gamma};
use amod_core::nn::gradcheck::{check_inputs, check_params, worst};
use amod_core::nn::{Matrix, ParamId, ParamSet, Tape, Var};
pub mod flow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const MIN_PROBES: usize = 100;

#[derive(Debug)]
pub struct Report {
    pub name: String,
    pub worst: f64,
    pub probes: usize,
}

impl Report {
    pub fn ok(&self, tol: f64) -> bool {
        self.probes >= MIN_PROBES && self.worst <= tol
    }
}

pub fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

type OpFn = Rc<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// Builds a scalar loss `Σ R ⊙ op(inputs)` so every output entry matters.
fn projected(op: OpFn, weights: Matrix) -> impl Fn(&mut Tape, &[Var]) -> Var {
    move |t: &mut Tape, v: &[Var]| {
        let out = op(t, v);
        let r = t.constant(weights.clone());
        let m = t.mul(out, r);
        t.sum(m)
    }
}

/// One op: input generators (shape and range) plus the op itself.
struct OpCase {
    name: &'static str,
    inputs: Vec<(usize, usize, f64, f64)>,
    op: OpFn,
}

fn op_cases() -> Vec<OpCase> {
    let adj = Rc::new(complete_graph_adjacency(3));
    let adj2 = adj.clone();
    let mut c = vec![
        OpCase { name: "matmul", inputs: vec![(6, 4, -1.0, 1.0), (4, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.matmul(v[0], v[1])) },
        OpCase { name: "add", inputs: vec![(6, 5, -1.0, 1.0), (6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.add(v[0], v[1])) },
        OpCase { name: "sub", inputs: vec![(6, 5, -1.0, 1.0), (6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.sub(v[0], v[1])) },
        OpCase { name: "mul", inputs: vec![(6, 5, -1.0, 1.0), (6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.mul(v[0], v[1])) },
        OpCase { name: "add_row", inputs: vec![(6, 5, -1.0, 1.0), (1, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.add_row(v[0], v[1])) },
        OpCase { name: "mul_col", inputs: vec![(6, 5, -1.0, 1.0), (6, 1, -1.0, 1.0)], op: Rc::new(|t, v| t.mul_col(v[0], v[1])) },
        OpCase { name: "div_col", inputs: vec![(6, 5, -1.0, 1.0), (6, 1, 0.5, 2.0)], op: Rc::new(|t, v| t.div_col(v[0], v[1])) },
        OpCase { name: "sub_col", inputs: vec![(6, 5, -1.0, 1.0), (6, 1, -1.0, 1.0)], op: Rc::new(|t, v| t.sub_col(v[0], v[1])) },
        OpCase { name: "scale", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.scale(v[0], -1.7)) },
        OpCase { name: "add_scalar", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.add_scalar(v[0], 0.3)) },
        OpCase { name: "relu", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.relu(v[0])) },
        OpCase { name: "softplus", inputs: vec![(6, 5, -3.0, 3.0)], op: Rc::new(|t, v| t.softplus(v[0])) },
        OpCase { name: "log", inputs: vec![(6, 5, 0.2, 3.0)], op: Rc::new(|t, v| t.log(v[0])) },
        OpCase { name: "exp", inputs: vec![(6, 5, -2.0, 2.0)], op: Rc::new(|t, v| t.exp(v[0])) },
        OpCase { name: "ln_gamma", inputs: vec![(6, 5, 0.05, 6.0)], op: Rc::new(|t, v| t.ln_gamma(v[0])) },
        OpCase { name: "square", inputs: vec![(6, 5, -2.0, 2.0)], op: Rc::new(|t, v| t.square(v[0])) },
        OpCase { name: "sum", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.sum(v[0])) },
        OpCase { name: "mean", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.mean(v[0])) },
        OpCase { name: "row_sum", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.row_sum(v[0])) },
        OpCase { name: "logsumexp_rows", inputs: vec![(6, 5, -3.0, 3.0)], op: Rc::new(|t, v| t.logsumexp_rows(v[0])) },
        OpCase { name: "concat_cols", inputs: vec![(6, 3, -1.0, 1.0), (6, 2, -1.0, 1.0)], op: Rc::new(|t, v| t.concat_cols(v[0], v[1])) },
        OpCase { name: "reshape", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.reshape(v[0], 10, 3)) },
        OpCase { name: "graph_aggregate", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(move |t, v| t.graph_aggregate(adj.clone(), v[0])) },
        OpCase { name: "segment_sum", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.segment_sum(v[0], 3)) },
        OpCase { name: "repeat_blocks", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.repeat_blocks(v[0], 3, 4)) },
        OpCase { name: "min", inputs: vec![(6, 5, -1.0, 1.0), (6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.min(v[0], v[1])) },
        OpCase { name: "max", inputs: vec![(6, 5, -1.0, 1.0), (6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.max(v[0], v[1])) },
        OpCase { name: "clamp", inputs: vec![(6, 5, -1.0, 1.0)], op: Rc::new(|t, v| t.clamp(v[0], -0.6, 0.6)) },
        OpCase {
            name: "dirichlet_log_prob",
            inputs: vec![(6, 5, 0.3, 4.0), (6, 5, 0.05, 1.0)],
            op: Rc::new(|t, v| {
                // rows of the second input are normalised onto the simplex first
                let s = t.row_sum(v[1]);
                let x = t.div_col(v[1], s);
                log_prob_rows(t, v[0], x)
            }),
        },
        OpCase {
            name: "gcn_composite",
            inputs: vec![(6, 4, -1.0, 1.0), (4, 3, -1.0, 1.0)],
            op: Rc::new(move |t, v| {
                let agg = t.graph_aggregate(adj2.clone(), v[0]);
                let h = t.matmul(agg, v[1]);
                t.relu(h)
            }),
        },
    ];
    c.shrink_to_fit();
    c
}

/// Runs every op until at least [`MIN_PROBES`] smooth probes were compared.
pub fn op_suite(seed: u64) -> Vec<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in op_cases() {
        let mut worst_err: f64 = 0.0;
        let mut probes = 0;
        let mut rounds = 0;
        while probes < MIN_PROBES && rounds < 50 {
            rounds += 1;
            let inputs: Vec<Matrix> = case.inputs.iter().map(|&(r, c, lo, hi)| random(r, c, lo, hi, &mut rng)).collect();
            let mut probe_tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|m| probe_tape.leaf(m.clone())).collect();
            let o = (case.op)(&mut probe_tape, &vars);
            let (r, c) = probe_tape.shape(o);
            let f = projected(case.op.clone(), random(r, c, -1.0, 1.0, &mut rng));
            let coords: Vec<(usize, usize)> =
                inputs.iter().enumerate().flat_map(|(k, m)| (0..m.len()).map(move |i| (k, i))).collect();
            let (w, n) = worst(&check_inputs(&inputs, &f, &coords, H));
            worst_err = worst_err.max(w);
            probes += n;
        }
        out.push(Report { name: case.name.to_string(), worst: worst_err, probes });
    }
    out.push(log_gamma_sample_report(&mut rng));
    out
}

fn log_gamma_sample_report(rng: &mut ChaCha8Rng) -> Report {
    let mut worst_err: f64 = 0.0;
    let mut probes = 0;
    while probes < MIN_PROBES {
        // shapes both below and above one exercise the boosted branch
        let shape = random(4, 5, 0.2, 4.0, rng);
        let noise: Vec<_> = shape.data().iter().map(|&c| sample_log_gamma(c, rng).1).collect();
        let noise = Rc::new(noise);
        let op: OpFn = Rc::new(move |t, v| t.log_gamma_sample(v[0], noise.clone()));
        let f = projected(op, random(4, 5, -1.0, 1.0, rng));
        let coords: Vec<(usize, usize)> = (0..20).map(|i| (0, i)).collect();
        let (w, n) = worst(&check_inputs(&[shape], &f, &coords, H));
        worst_err = worst_err.max(w);
        probes += n;
    }
    Report { name: "log_gamma_sample".into(), worst: worst_err, probes }
}

fn param_coords(params: &ParamSet, k: usize, rng: &mut impl Rng) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = params.ids().collect();
    let all: Vec<(ParamId, usize)> = ids.iter().flat_map(|&id| (0..params.value(id).len()).map(move |i| (id, i))).collect();
    // every tensor at least once, the rest uniformly
    let mut out: Vec<(ParamId, usize)> = ids.iter().map(|&id| (id, rng.gen_range(0..params.value(id).len()))).collect();
    while out.len() < k {
        out.push(all[rng.gen_range(0..all.len())]);
    }
    out
}

pub fn simplex_rows(rows: usize, n: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = random(rows, n, 0.05, 1.0, rng);
    for r in 0..rows {
        let s: f64 = m.row(r).iter().sum();
        m.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// Actor and every critic variant, probed on parameters and on inputs.
pub fn network_suite(seed: u64) -> Vec<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, f, hidden, b, reps) = (4, 6, 8, 2, 3);
    let adj = Rc::new(complete_graph_adjacency(n));
    let mut out = Vec::new();

    let actor = ActorNet::new(f, hidden, &mut rng);
    let x = random(b * n, f, -1.0, 1.0, &mut rng);
    let w = random(b, n, -1.0, 1.0, &mut rng);
    let mut params = actor.params.clone();
    let coords = param_coords(&params, 150, &mut rng);
    let (a2, adj2, x2, w2) = (actor.clone(), adj.clone(), x.clone(), w.clone());
    let loss = move |t: &mut Tape, p: &ParamSet| {
        let xv = t.constant(x2.clone());
        let c = a2.forward_with(t, p, adj2.clone(), xv);
        let wv = t.constant(w2.clone());
        let m = t.mul(c, wv);
        t.sum(m)
    };
    let (we, ne) = worst(&check_params(&mut params, &loss, &coords, H));
    let (a3, adj3, w3) = (actor.clone(), adj.clone(), w.clone());
    let in_loss = move |t: &mut Tape, v: &[Var]| {
        let c = a3.forward(t, adj3.clone(), v[0]);
        let wv = t.constant(w3.clone());
        let m = t.mul(c, wv);
        t.sum(m)
    };
    let in_coords: Vec<(usize, usize)> = (0..x.len()).map(|i| (0, i)).collect();
    let (wi, ni) = worst(&check_inputs(&[x.clone()], &in_loss, &in_coords, H));
    out.push(Report { name: "actor".into(), worst: we.max(wi), probes: ne + ni });

    for variant in CriticVariant::ALL {
        let (arch, mut params) = CriticArch::new(variant, f, n, hidden, &mut rng);
        let a = simplex_rows(b * reps, n, &mut rng);
        let wq = random(b * reps, 1, -1.0, 1.0, &mut rng);
        let coords = param_coords(&params, 150, &mut rng);
        let (ar, adj2, x2, a2, wq2) = (arch.clone(), adj.clone(), x.clone(), a.clone(), wq.clone());
        let loss = move |t: &mut Tape, p: &ParamSet| {
            let xv = t.constant(x2.clone());
            let av = t.constant(a2.clone());
            let q = ar.forward(t, p, adj2.clone(), xv, av, reps);
            let wv = t.constant(wq2.clone());
            let m = t.mul(q, wv);
            t.sum(m)
        };
        let (we, ne) = worst(&check_params(&mut params, &loss, &coords, H));
        let (ar, adj3, wq3, p3) = (arch.clone(), adj.clone(), wq.clone(), params.clone());
        let in_loss = move |t: &mut Tape, v: &[Var]| {
            let q = ar.forward(t, &p3, adj3.clone(), v[0], v[1], reps);
            let wv = t.constant(wq3.clone());
            let m = t.mul(q, wv);
            t.sum(m)
        };
        let in_coords: Vec<(usize, usize)> = (0..x.len()).map(|i| (0, i)).chain((0..a.len()).map(|i| (1, i))).collect();
        let (wi, ni) = worst(&check_inputs(&[x.clone(), a], &in_loss, &in_coords, H));
        out.push(Report { name: variant.name().into(), worst: we.max(wi), probes: ne + ni });
    }
    out
}
