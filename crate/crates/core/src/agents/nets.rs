//! Graph actor and critic networks.
//!
//! A batch of `B` equally sized graphs is one stacked `B·N×F` node-feature
//! matrix; actions are `B×N` matrices. Critic inputs may repeat each state
//! `reps` times so several actions per state share one state encoding.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{GcnLayer, Linear, Matrix, ParamSet, Tape, Var};

/// Lower bound added to every concentration.
pub const CONCENTRATION_FLOOR: f64 = 1e-4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetError {
    #[error("unknown critic variant `{0}`")]
    UnknownVariant(String),
    #[error("non-finite network output")]
    NonFiniteOutput,
}

/// Dirichlet policy: GCN encoder followed by a per-node three-layer MLP.
#[derive(Clone, Debug)]
pub struct ActorNet {
    pub params: ParamSet,
    gcn: GcnLayer,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

impl ActorNet {
    pub fn new(n_features: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let gcn = GcnLayer::new(&mut params, "actor.gcn", n_features, n_features, rng);
        let fc1 = Linear::new(&mut params, "actor.fc1", n_features, hidden, rng);
        let fc2 = Linear::new(&mut params, "actor.fc2", hidden, hidden, rng);
        let fc3 = Linear::new(&mut params, "actor.fc3", hidden, 1, rng);
        Self { params, gcn, fc1, fc2, fc3 }
    }

    pub fn n_features(&self) -> usize {
        self.gcn.in_features
    }

    pub fn output_layer(&self) -> Linear {
        self.fc3
    }

    /// Concentrations `B×N` for stacked observations `x` (`B·N×F`).
    pub fn forward(&self, tape: &mut Tape, adj: Rc<Matrix>, x: Var) -> Var {
        self.forward_with(tape, &self.params, adj, x)
    }

    /// Same as [`ActorNet::forward`] with externally supplied parameter values.
    pub fn forward_with(&self, tape: &mut Tape, params: &ParamSet, adj: Rc<Matrix>, x: Var) -> Var {
        let n = adj.rows();
        let b = tape.shape(x).0 / n;
        let h = self.gcn.forward(tape, params, adj, x);
        let h = self.fc1.forward(tape, params, h);
        let h = tape.relu(h);
        let h = self.fc2.forward(tape, params, h);
        let h = tape.relu(h);
        let h = self.fc3.forward(tape, params, h);
        let c = tape.softplus(h);
        let c = tape.add_scalar(c, CONCENTRATION_FLOOR);
        tape.reshape(c, b, n)
    }

    /// Concentrations for a batch, outside any gradient computation.
    pub fn concentration(&self, adj: &Rc<Matrix>, x: &Matrix) -> Matrix {
        let mut tape = Tape::no_grad();
        let xv = tape.constant(x.clone());
        let c = self.forward(&mut tape, adj.clone(), xv);
        tape.value(c).clone()
    }
}

/// How the critic combines node encodings with the action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum CriticVariant {
    /// Encoding ⊙ action, sum readout, three graph-level dense layers.
    Critic1,
    /// Sum readout of the encoding concatenated with the raw action vector,
    /// three dense layers. Tied to the station count it was built for.
    Critic2,
    /// Action as an extra GCN input feature, sum readout, three dense layers.
    Critic3,
    /// Encoding concatenated with the action per node, two node-level dense
    /// layers, sum readout, final dense layer.
    #[default]
    Critic4,
    /// Encoding ⊙ action, two node-level dense layers, readout, final layer.
    Critic1v2,
    /// Action as an extra GCN input, two node-level dense layers, readout, final layer.
    Critic3v2,
}

impl CriticVariant {
    pub const ALL: [CriticVariant; 6] = [
        CriticVariant::Critic1,
        CriticVariant::Critic2,
        CriticVariant::Critic3,
        CriticVariant::Critic4,
        CriticVariant::Critic1v2,
        CriticVariant::Critic3v2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriticVariant::Critic1 => "critic1",
            CriticVariant::Critic2 => "critic2",
            CriticVariant::Critic3 => "critic3",
            CriticVariant::Critic4 => "critic4",
            CriticVariant::Critic1v2 => "critic1v2",
            CriticVariant::Critic3v2 => "critic3v2",
        }
    }

    fn action_in_gcn(self) -> bool {
        matches!(self, CriticVariant::Critic3 | CriticVariant::Critic3v2)
    }

    /// True when the readout happens right after the encoder.
    fn early_readout(self) -> bool {
        matches!(self, CriticVariant::Critic1 | CriticVariant::Critic2 | CriticVariant::Critic3)
    }
}

impl fmt::Display for CriticVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriticVariant {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['-', '_', ' ', '(', ')'], "");
        CriticVariant::ALL.into_iter().find(|v| v.name() == key).ok_or_else(|| NetError::UnknownVariant(s.to_string()))
    }
}

/// Layer layout of a critic; the values live in a separate [`ParamSet`] so
/// twin and target critics share one architecture.
#[derive(Clone, Debug)]
pub struct CriticArch {
    pub variant: CriticVariant,
    n_nodes: usize,
    gcn: GcnLayer,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

impl CriticArch {
    /// Builds the layout and a freshly initialised parameter set.
    pub fn new(variant: CriticVariant, n_features: usize, n_nodes: usize, hidden: usize, rng: &mut impl Rng) -> (Self, ParamSet) {
        let mut p = ParamSet::new();
        let gcn_in = n_features + usize::from(variant.action_in_gcn());
        let gcn = GcnLayer::new(&mut p, "critic.gcn", gcn_in, gcn_in, rng);
        let fc1_in = match variant {
            CriticVariant::Critic2 => gcn_in + n_nodes,
            CriticVariant::Critic4 => gcn_in + 1,
            _ => gcn_in,
        };
        let fc1 = Linear::new(&mut p, "critic.fc1", fc1_in, hidden, rng);
        let fc2 = Linear::new(&mut p, "critic.fc2", hidden, hidden, rng);
        let fc3 = Linear::new(&mut p, "critic.fc3", hidden, 1, rng);
        (Self { variant, n_nodes, gcn, fc1, fc2, fc3 }, p)
    }

    pub fn output_layer(&self) -> Linear {
        self.fc3
    }

    /// Q-values `B·reps×1` for states `x` (`B·N×F`) and actions `a`
    /// (`B·reps×N`, rows ordered state-major).
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, adj: Rc<Matrix>, x: Var, a: Var, reps: usize) -> Var {
        let n = adj.rows();
        if self.variant == CriticVariant::Critic2 {
            assert_eq!(n, self.n_nodes, "critic2 is tied to {} stations", self.n_nodes);
        }
        let rows = tape.shape(a).0;
        let a_col = tape.reshape(a, rows * n, 1);
        let node = if self.variant.action_in_gcn() {
            let xr = if reps > 1 { tape.repeat_blocks(x, n, reps) } else { x };
            let xa = tape.concat_cols(xr, a_col);
            self.gcn.forward(tape, params, adj, xa)
        } else {
            let h = self.gcn.forward(tape, params, adj, x);
            if reps > 1 {
                tape.repeat_blocks(h, n, reps)
            } else {
                h
            }
        };
        let joint = match self.variant {
            CriticVariant::Critic1 | CriticVariant::Critic1v2 => tape.mul_col(node, a_col),
            CriticVariant::Critic4 => tape.concat_cols(node, a_col),
            _ => node,
        };
        if self.variant.early_readout() {
            let mut g = tape.segment_sum(joint, n);
            if self.variant == CriticVariant::Critic2 {
                g = tape.concat_cols(g, a);
            }
            let h = self.fc1.forward(tape, params, g);
            let h = tape.relu(h);
            let h = self.fc2.forward(tape, params, h);
            let h = tape.relu(h);
            self.fc3.forward(tape, params, h)
        } else {
            let h = self.fc1.forward(tape, params, joint);
            let h = tape.relu(h);
            let h = self.fc2.forward(tape, params, h);
            let h = tape.relu(h);
            let g = tape.segment_sum(h, n);
            self.fc3.forward(tape, params, g)
        }
    }

    /// Q-values for one action per state, outside any gradient computation.
    pub fn q_values(&self, params: &ParamSet, adj: &Rc<Matrix>, x: &Matrix, a: &Matrix) -> Vec<f64> {
        let mut tape = Tape::no_grad();
        let xv = tape.constant(x.clone());
        let av = tape.constant(a.clone());
        let q = self.forward(&mut tape, params, adj.clone(), xv, av, 1);
        tape.value(q).data().to_vec()
    }
}
