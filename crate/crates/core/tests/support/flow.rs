//! Exhaustive optimisers for small flow instances.

use amod_core::flow::FlowProblem;

/// Calls `f` on every vector with `0 <= v[k] <= upper[k]`.
pub fn for_each_box(upper: &[i64], f: &mut dyn FnMut(&[i64])) {
    let mut v = vec![0i64; upper.len()];
    loop {
        f(&v);
        let mut k = 0;
        loop {
            if k == v.len() {
                return;
            }
            if v[k] < upper[k] {
                v[k] += 1;
                break;
            }
            v[k] = 0;
            k += 1;
        }
    }
}

pub fn brute_force_flow(p: &FlowProblem) -> Option<i64> {
    let caps: Vec<i64> = p.arcs.iter().map(|a| a.capacity).collect();
    let mut best: Option<i64> = None;
    for_each_box(&caps, &mut |f| {
        let mut net = vec![0i64; p.n_nodes()];
        for (a, &x) in p.arcs.iter().zip(f) {
            net[a.from] += x;
            net[a.to] -= x;
        }
        let ok = p.balance.iter().zip(&net).all(|(&b, &out)| match b {
            b if b > 0 => (0..=b).contains(&out),
            b if b < 0 => out == b,
            _ => out == 0,
        });
        if ok {
            let c: i64 = p.arcs.iter().zip(f).map(|(a, x)| a.cost * x).sum();
            best = Some(best.map_or(c, |b: i64| b.min(c)));
        }
    });
    best
}

pub fn brute_force_matching(n: usize, d: &[u32], p: &[i64], c: &[i64], m: &[u32]) -> i64 {
    let upper: Vec<i64> = d.iter().map(|&v| i64::from(v)).collect();
    let mut best = i64::MIN;
    for_each_box(&upper, &mut |x| {
        for i in 0..n {
            let out: i64 = x[i * n..(i + 1) * n].iter().sum();
            if out > i64::from(m[i]) {
                return;
            }
        }
        let profit: i64 = (0..n * n).map(|k| x[k] * (p[k] - c[k])).sum();
        best = best.max(profit);
    });
    best
}

pub fn brute_force_rebalancing(n: usize, m: &[u32], target: &[u32], c: &[i64]) -> i64 {
    let offdiag: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let upper: Vec<i64> = offdiag.iter().map(|&(i, _)| i64::from(m[i])).collect();
    let mut best = i64::MAX;
    for_each_box(&upper, &mut |y| {
        let mut count: Vec<i64> = m.iter().map(|&v| i64::from(v)).collect();
        let mut out = vec![0i64; n];
        for (&(i, j), &v) in offdiag.iter().zip(y) {
            out[i] += v;
            count[i] -= v;
            count[j] += v;
        }
        if (0..n).any(|i| out[i] > i64::from(m[i]) || count[i] < i64::from(target[i])) {
            return;
        }
        let cost: i64 = offdiag.iter().zip(y).map(|(&(i, j), &v)| v * c[i * n + j]).sum();
        best = best.min(cost);
    });
    best
}
