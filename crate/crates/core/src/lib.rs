//! Fleet rebalancing laboratory for autonomous mobility-on-demand systems.
//!
//! A station-graph fleet is simulated under Poisson demand and controlled
//! through a three-step loop: passenger matching, a desired idle-vehicle
//! distribution chosen by a controller, and a minimum-cost rebalancing flow.
//! Controllers range from heuristics and receding-horizon MPC to graph-network
//! actor-critic agents trained online (SAC) or purely from logged data
//! (CQL, Cal-CQL).

pub mod nn;
pub mod agents;
pub mod baselines;
pub mod control;
pub mod dataset;
pub mod demand;
pub mod env;
pub mod experiment;
pub mod flow;
pub mod scenario;
