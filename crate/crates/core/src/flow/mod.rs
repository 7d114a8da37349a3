//! Exact optimisation core of the three-step control loop: passenger
//! matching, conversion of a distribution to desired vehicle counts, and the
//! minimum-cost rebalancing flow.

pub mod mcf;

use serde::Serialize;

use crate::scenario::Cents;
pub use mcf::{is_optimal, solve_min_cost_flow, Arc, FlowProblem, FlowSolution};

/// Tolerance on `Σ a_i = 1` for a distribution action.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("action is not a distribution: {0}")]
    SimplexViolation(String),
    #[error("infeasible flow problem: {0}")]
    Infeasible(String),
    #[error("arc costs contain a negative cycle")]
    NegativeCycle,
}

/// Passenger trips served in one step, `N×N` row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PassengerFlow {
    pub n: usize,
    pub x: Vec<u32>,
    pub profit_cents: Cents,
}

/// Empty-vehicle moves in one step, `N×N` row-major with a zero diagonal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RebalancingFlow {
    pub n: usize,
    pub y: Vec<u32>,
    pub cost_cents: Cents,
}

impl PassengerFlow {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.x[i * self.n + j]
    }

    pub fn total(&self) -> u64 {
        self.x.iter().map(|&v| u64::from(v)).sum()
    }
}

impl RebalancingFlow {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.y[i * self.n + j]
    }

    pub fn total(&self) -> u64 {
        self.y.iter().map(|&v| u64::from(v)).sum()
    }

    /// Vehicle counts after the moves: `m_i + Σ_j (y_ji − y_ij)`.
    pub fn resulting_counts(&self, idle: &[u32]) -> Vec<u32> {
        (0..self.n)
            .map(|i| {
                let inflow: u32 = (0..self.n).map(|j| self.get(j, i)).sum();
                let outflow: u32 = (0..self.n).map(|j| self.get(i, j)).sum();
                idle[i] + inflow - outflow
            })
            .collect()
    }
}

fn check_square(name: &str, len: usize, n: usize) -> Result<(), FlowError> {
    if len != n * n {
        return Err(FlowError::DimensionMismatch(format!("{name} has {len} entries, expected {n}×{n}")));
    }
    Ok(())
}

/// Profit-maximising assignment of idle vehicles to requests.
///
/// Origins are independent (a vehicle only serves requests at its own
/// station), so each origin fills its most profitable destinations first;
/// non-positive margins are never served. Ties go to the lower destination.
pub fn solve_matching(demand: &[u32], price: &[Cents], cost: &[Cents], idle: &[u32]) -> Result<PassengerFlow, FlowError> {
    let n = idle.len();
    check_square("demand", demand.len(), n)?;
    check_square("price", price.len(), n)?;
    check_square("cost", cost.len(), n)?;
    let mut x = vec![0u32; n * n];
    let mut profit = 0;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let row = i * n;
        order.clear();
        order.extend((0..n).filter(|&j| demand[row + j] > 0 && price[row + j] > cost[row + j]));
        order.sort_by_key(|&j| (std::cmp::Reverse(price[row + j] - cost[row + j]), j));
        let mut left = idle[i];
        for &j in &order {
            if left == 0 {
                break;
            }
            let take = demand[row + j].min(left);
            x[row + j] = take;
            left -= take;
            profit += Cents::from(take) * (price[row + j] - cost[row + j]);
        }
    }
    Ok(PassengerFlow { n, x, profit_cents: profit })
}

/// `m̂_i = ⌊a_i · Σ m⌋`.
///
/// Products within 1e-9 below an integer are rounded up so that an action
/// equal to `m / Σm` reproduces `m` exactly; the total never exceeds `Σ m`.
pub fn desired_counts(action: &[f64], idle: &[u32]) -> Result<Vec<u32>, FlowError> {
    if action.len() != idle.len() {
        return Err(FlowError::DimensionMismatch(format!("action has {} entries for {} stations", action.len(), idle.len())));
    }
    if let Some(a) = action.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(FlowError::SimplexViolation(format!("component {a} is negative or not finite")));
    }
    let sum: f64 = action.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(FlowError::SimplexViolation(format!("components sum to {sum}")));
    }
    let total: u64 = idle.iter().map(|&m| u64::from(m)).sum();
    let tf = total as f64;
    let snapped: Vec<u32> = action.iter().map(|a| (a * tf + 1e-9).floor() as u32).collect();
    if snapped.iter().map(|&v| u64::from(v)).sum::<u64>() <= total {
        return Ok(snapped);
    }
    Ok(action.iter().map(|a| (a * tf).floor() as u32).collect())
}

/// Minimum-cost moves of idle vehicles so every station ends with at least
/// `desired[i]` vehicles, never moving more than are idle at a station.
pub fn solve_rebalancing(idle: &[u32], desired: &[u32], cost: &[Cents]) -> Result<RebalancingFlow, FlowError> {
    let n = idle.len();
    if desired.len() != n {
        return Err(FlowError::DimensionMismatch(format!("desired has {} entries for {n} stations", desired.len())));
    }
    check_square("cost", cost.len(), n)?;
    let total: i64 = idle.iter().map(|&m| i64::from(m)).sum();
    let wanted: i64 = desired.iter().map(|&m| i64::from(m)).sum();
    assert!(wanted <= total, "desired counts {wanted} exceed fleet {total}");

    // Node i: idle supply at i. Node n + j: arrivals at j, must absorb m̂_j.
    let mut p = FlowProblem::new(2 * n);
    for i in 0..n {
        p.balance[i] = i64::from(idle[i]);
        p.balance[n + i] = -i64::from(desired[i]);
    }
    let mut index = Vec::with_capacity(n * n);
    for i in 0..n {
        if idle[i] == 0 {
            continue;
        }
        for j in 0..n {
            if desired[j] == 0 {
                continue;
            }
            let c = if i == j { 0 } else { cost[i * n + j] };
            index.push((i, j, p.add_arc(i, n + j, total, c)));
        }
    }
    let sol = solve_min_cost_flow(&p).map_err(|e| match e {
        FlowError::Infeasible(m) => panic!("rebalancing infeasible although Σm̂ ≤ Σm: {m}"),
        other => other,
    })?;
    let mut y = vec![0u32; n * n];
    let mut cost_cents = 0;
    for (i, j, a) in index {
        if i != j {
            let f = sol.flow[a];
            y[i * n + j] = f as u32;
            cost_cents += f * cost[i * n + j];
        }
    }
    Ok(RebalancingFlow { n, y, cost_cents })
}
