//! Integral minimum-cost flow by successive shortest paths with potentials.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::FlowError;

const INF: i64 = i64::MAX / 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub capacity: i64,
    pub cost: i64,
}

/// A flow problem. `balance[v] > 0` lets node `v` emit up to that many units,
/// `balance[v] < 0` requires it to absorb exactly that many, and zero-balance
/// nodes conserve flow.
#[derive(Clone, Debug, Default)]
pub struct FlowProblem {
    pub balance: Vec<i64>,
    pub arcs: Vec<Arc>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowSolution {
    /// Flow on each arc of the problem, in arc order.
    pub flow: Vec<i64>,
    pub cost: i64,
}

impl FlowProblem {
    pub fn new(n_nodes: usize) -> Self {
        Self { balance: vec![0; n_nodes], arcs: Vec::new() }
    }

    pub fn n_nodes(&self) -> usize {
        self.balance.len()
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: i64, cost: i64) -> usize {
        self.arcs.push(Arc { from, to, capacity, cost });
        self.arcs.len() - 1
    }
}

struct Residual {
    head: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
    adj: Vec<Vec<usize>>,
}

impl Residual {
    fn new(n: usize) -> Self {
        Self { head: Vec::new(), cap: Vec::new(), cost: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn push(&mut self, from: usize, to: usize, cap: i64, cost: i64) -> usize {
        let e = self.head.len();
        self.head.extend([to, from]);
        self.cap.extend([cap, 0]);
        self.cost.extend([cost, -cost]);
        self.adj[from].push(e);
        self.adj[to].push(e + 1);
        e
    }

    fn tail(&self, e: usize) -> usize {
        self.head[e ^ 1]
    }

    /// Bellman-Ford distances from `src` over arcs with residual capacity;
    /// `None` if a negative cycle is reachable.
    fn bellman_ford(&self, src: usize) -> Option<Vec<i64>> {
        let n = self.adj.len();
        let mut dist = vec![INF; n];
        dist[src] = 0;
        for round in 0..n {
            let mut changed = false;
            for e in 0..self.head.len() {
                let u = self.tail(e);
                if self.cap[e] > 0 && dist[u] < INF && dist[u] + self.cost[e] < dist[self.head[e]] {
                    dist[self.head[e]] = dist[u] + self.cost[e];
                    changed = true;
                }
            }
            if !changed {
                return Some(dist);
            }
            if round == n - 1 {
                return None;
            }
        }
        Some(dist)
    }

    /// True when no cycle of negative cost exists among residual arcs.
    fn has_no_negative_cycle(&self) -> bool {
        let n = self.adj.len();
        let mut dist = vec![0i64; n];
        for _ in 0..=n {
            let mut changed = false;
            for e in 0..self.head.len() {
                let u = self.tail(e);
                if self.cap[e] > 0 && dist[u] + self.cost[e] < dist[self.head[e]] {
                    dist[self.head[e]] = dist[u] + self.cost[e];
                    changed = true;
                }
            }
            if !changed {
                return true;
            }
        }
        false
    }
}

/// Solves `problem` to integral optimality. Ties between optimal flows are
/// resolved deterministically by node and arc insertion order.
pub fn solve_min_cost_flow(problem: &FlowProblem) -> Result<FlowSolution, FlowError> {
    let n = problem.n_nodes();
    for a in &problem.arcs {
        if a.from >= n || a.to >= n {
            return Err(FlowError::DimensionMismatch(format!("arc {}->{} on {n} nodes", a.from, a.to)));
        }
        if a.capacity < 0 {
            return Err(FlowError::DimensionMismatch(format!("arc {}->{} has negative capacity", a.from, a.to)));
        }
    }
    let supply: i64 = problem.balance.iter().filter(|b| **b > 0).sum();
    let demand: i64 = -problem.balance.iter().filter(|b| **b < 0).sum::<i64>();
    if supply < demand {
        return Err(FlowError::Infeasible(format!("supply {supply} below demand {demand}")));
    }
    let (s, t) = (n, n + 1);
    let mut g = Residual::new(n + 2);
    let arc_edges: Vec<usize> = problem.arcs.iter().map(|a| g.push(a.from, a.to, a.capacity, a.cost)).collect();
    for (v, &b) in problem.balance.iter().enumerate() {
        if b > 0 {
            g.push(s, v, b, 0);
        } else if b < 0 {
            g.push(v, t, -b, 0);
        }
    }

    let mut potential = g.bellman_ford(s).ok_or(FlowError::NegativeCycle)?;
    let mut sent = 0i64;
    let mut dist = vec![INF; n + 2];
    let mut prev_edge = vec![usize::MAX; n + 2];
    while sent < demand {
        dist.iter_mut().for_each(|d| *d = INF);
        prev_edge.iter_mut().for_each(|p| *p = usize::MAX);
        dist[s] = 0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0i64, s)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &g.adj[u] {
                if g.cap[e] == 0 {
                    continue;
                }
                let v = g.head[e];
                if potential[v] >= INF {
                    continue;
                }
                let nd = d + g.cost[e] + potential[u] - potential[v];
                if nd < dist[v] {
                    dist[v] = nd;
                    prev_edge[v] = e;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        if dist[t] >= INF {
            return Err(FlowError::Infeasible(format!("only {sent} of {demand} demand units can be routed")));
        }
        let dt = dist[t];
        for v in 0..n + 2 {
            if potential[v] < INF {
                potential[v] += dist[v].min(dt);
            }
        }
        let mut push = demand - sent;
        let mut v = t;
        while v != s {
            let e = prev_edge[v];
            push = push.min(g.cap[e]);
            v = g.tail(e);
        }
        let mut v = t;
        while v != s {
            let e = prev_edge[v];
            g.cap[e] -= push;
            g.cap[e ^ 1] += push;
            v = g.tail(e);
        }
        sent += push;
    }
    debug_assert!(g.has_no_negative_cycle(), "min-cost flow left a negative residual cycle");

    let flow: Vec<i64> = arc_edges.iter().map(|&e| g.cap[e ^ 1]).collect();
    let cost = flow.iter().zip(&problem.arcs).map(|(f, a)| f * a.cost).sum();
    Ok(FlowSolution { flow, cost })
}

/// Optimality certificate: a feasible flow is optimal iff its residual graph
/// (including the super source/sink arcs) has no negative-cost cycle.
pub fn is_optimal(problem: &FlowProblem, flow: &[i64]) -> bool {
    let n = problem.n_nodes();
    let mut g = Residual::new(n + 2);
    let mut net = vec![0i64; n];
    for (a, &f) in problem.arcs.iter().zip(flow) {
        let e = g.push(a.from, a.to, a.capacity, a.cost);
        g.cap[e] -= f;
        g.cap[e ^ 1] += f;
        net[a.from] += f;
        net[a.to] -= f;
    }
    for (v, &b) in problem.balance.iter().enumerate() {
        if b > 0 {
            let e = g.push(n, v, b, 0);
            g.cap[e] -= net[v];
            g.cap[e ^ 1] += net[v];
        } else if b < 0 {
            let e = g.push(v, n + 1, -b, 0);
            g.cap[e] += net[v];
            g.cap[e ^ 1] -= net[v];
        }
    }
    g.has_no_negative_cycle()
}
