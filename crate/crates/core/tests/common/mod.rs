//! Independent oracles shared by the integration tests. Nothing here calls
//! the solvers under test except the model types.

#![allow(dead_code)]

use std::collections::VecDeque;

use auditgame_core::model::{AuditGame, TargetUtilities};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.gen::<f64>() * 1024.0).round() / 1024.0
}

pub fn random_utilities(rng: &mut ChaCha8Rng) -> TargetUtilities {
    let (a, b, c, d) = (unit(rng), unit(rng), unit(rng), unit(rng));
    TargetUtilities::new(a.max(b), a.min(b), c.min(d), c.max(d))
}

/// Utilities on the 2^-10 grid; each (resource, target) pair is forbidden
/// with probability `density`. `k` is capped at `n - 1`.
pub fn random_game(rng: &mut ChaCha8Rng, n: usize, k: usize, density: f64, cost: f64) -> AuditGame {
    let k = k.min(n - 1);
    let targets = (0..n).map(|_| random_utilities(rng)).collect();
    let mut restricted = Vec::new();
    for j in 0..k {
        for i in 0..n {
            if rng.gen::<f64>() < density {
                restricted.push((j, i));
            }
        }
    }
    AuditGame::new(targets, k, &restricted, cost).unwrap()
}

/// Resource `s` audits targets `0, 1, 2s, 2s + 1`.
pub fn explosion_game(k: usize) -> AuditGame {
    let n = 2 * k;
    let t = TargetUtilities::new(0.75, 0.25, 0.25, 0.75);
    let mut restricted = Vec::new();
    for s in 0..k {
        let allowed = [0, 1, 2 * s, 2 * s + 1];
        for i in 0..n {
            if !allowed.contains(&i) {
                restricted.push((s, i));
            }
        }
    }
    AuditGame::new(vec![t; n], k, &restricted, 0.01).unwrap()
}

/// Max flow source -> resources (cap 1) -> allowed targets -> sink (cap p_i),
/// by Edmonds-Karp. Returns `sum p - flow`.
pub fn flow_deficit(game: &AuditGame, p: &[f64]) -> f64 {
    let (n, k) = (game.n_targets(), game.n_resources());
    let size = n + k + 2;
    let (s, t) = (n + k, n + k + 1);
    let mut cap = vec![vec![0.0f64; size]; size];
    for j in 0..k {
        cap[s][j] = 1.0;
        for i in 0..n {
            if game.can_audit(j, i) {
                cap[j][k + i] = 2.0;
            }
        }
    }
    for i in 0..n {
        cap[k + i][t] = p[i].max(0.0);
    }
    let mut flow = 0.0;
    loop {
        let mut prev = vec![usize::MAX; size];
        prev[s] = s;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for v in 0..size {
                if prev[v] == usize::MAX && cap[u][v] > 1e-15 {
                    prev[v] = u;
                    q.push_back(v);
                }
            }
        }
        if prev[t] == usize::MAX {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = t;
        while v != s {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = t;
        while v != s {
            cap[prev[v]][v] -= push;
            cap[v][prev[v]] += push;
            v = prev[v];
        }
        flow += push;
    }
    p.iter().map(|v| v.max(0.0)).sum::<f64>() - flow
}

/// Whether `p` (in the unit box) is the column-sum vector of some allocation.
pub fn liftable(game: &AuditGame, p: &[f64], tol: f64) -> bool {
    p.iter().all(|&v| v >= -tol && v <= 1.0 + tol) && flow_deficit(game, p) <= tol
}

/// Connected induced subgraphs, counted over all vertex subsets.
pub fn brute_connected_count(n: usize, edges: &[(usize, usize)]) -> u64 {
    let mut adj = vec![0u32; n];
    for &(u, v) in edges {
        adj[u] |= 1 << v;
        adj[v] |= 1 << u;
    }
    let mut count = 0;
    for mask in 1u32..(1u32 << n) {
        let start = mask.trailing_zeros();
        let mut seen = 1u32 << start;
        let mut frontier = seen;
        while frontier != 0 {
            let v = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let new = adj[v] & mask & !seen;
            seen |= new;
            frontier |= new;
        }
        if seen == mask {
            count += 1;
        }
    }
    count
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p_edge: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p_edge {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Best defender utility of a single-resource game without restrictions,
/// by exhaustive search over `(p_star, x)` on a `step` grid. For each pair
/// the other coverages are set to the least value their best-response rows
/// allow; the point is feasible if they fit in the unit box and the total
/// stays at most one.
pub fn single_resource_grid(game: &AuditGame, step: f64) -> f64 {
    let n = game.n_targets();
    let t = game.targets();
    let delta: Vec<f64> = t.iter().map(|u| u.ua_unaudited - u.ua_audited).collect();
    let steps = (1.0 / step).round() as usize;
    let mut best = f64::NEG_INFINITY;
    for star in 0..n {
        let gain = t[star].ud_audited - t[star].ud_unaudited;
        for xs in 0..=steps {
            let x = xs as f64 * step;
            for ps in 0..=steps {
                let p = ps as f64 * step;
                let mut total = p;
                let mut ok = true;
                for i in (0..n).filter(|&i| i != star) {
                    let need = p * (x + delta[star]) + t[i].ua_unaudited - t[star].ua_unaudited;
                    let den = x + delta[i];
                    let pi = if den > 0.0 {
                        (need / den).max(0.0)
                    } else if need <= 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    if pi > 1.0 + 1e-12 {
                        ok = false;
                        break;
                    }
                    total += pi;
                }
                if ok && total <= 1.0 + 1e-12 {
                    let obj = t[star].ud_unaudited + p * gain - game.cost_a() * x - game.cost_a1() * x * p;
                    best = best.max(obj);
                }
            }
        }
    }
    best
}

/// Membership test for `sum_{targets} p <= bound` rows plus pinned zeros.
pub struct Rows {
    pub rows: Vec<(Vec<usize>, f64)>,
    pub pinned: Vec<usize>,
}

impl Rows {
    /// One row per resource subset `L`: targets auditable only by `L` carry
    /// total coverage at most `|L|`. Targets no resource audits are pinned.
    pub fn from_game(game: &AuditGame) -> Self {
        let (n, k) = (game.n_targets(), game.n_resources());
        let sets: Vec<u64> =
            (0..n).map(|i| (0..k).filter(|&j| game.can_audit(j, i)).fold(0u64, |m, j| m | 1 << j)).collect();
        let rows = (1u64..1 << k)
            .map(|l| {
                let targets = (0..n).filter(|&i| sets[i] != 0 && sets[i] & !l == 0).collect();
                (targets, l.count_ones() as f64)
            })
            .collect();
        Self { rows, pinned: (0..n).filter(|&i| sets[i] == 0).collect() }
    }

    /// Largest value of `p[free]` keeping every row satisfied, given the rest.
    fn room(&self, p: &[f64], free: usize) -> f64 {
        if self.pinned.contains(&free) {
            return 0.0;
        }
        let mut r = 1.0f64;
        for (targets, bound) in &self.rows {
            if targets.contains(&free) {
                let used: f64 = targets.iter().filter(|&&i| i != free).map(|&i| p[i]).sum();
                r = r.min(bound - used);
            }
        }
        r
    }

    fn holds(&self, p: &[f64]) -> bool {
        self.pinned.iter().all(|&i| p[i] <= 1e-12)
            && self.rows.iter().all(|(t, b)| t.iter().map(|&i| p[i]).sum::<f64>() <= b + 1e-12)
    }
}

/// Target-specific punishments with `n <= 3`, by grid search over the star
/// coverage and one other coverage; the last coverage takes the most room
/// the rows leave, since each rate only falls as its coverage grows.
pub fn target_specific_grid(game: &AuditGame, rows: &Rows, step: f64) -> f64 {
    let n = game.n_targets();
    assert!(n <= 3);
    let t = game.targets();
    let delta: Vec<f64> = t.iter().map(|u| u.ua_unaudited - u.ua_audited).collect();
    let costs = game.effective_target_costs();
    let steps = (1.0 / step).round() as usize;
    let rate = |i: usize, kappa: f64, p: f64| -> Option<f64> {
        if kappa <= 0.0 {
            return Some(0.0);
        }
        if p <= 0.0 {
            return None;
        }
        let x = (kappa / p - delta[i]).max(0.0);
        (x <= 1.0 + 1e-12).then_some(x)
    };
    let mut best = f64::NEG_INFINITY;
    for star in 0..n {
        let others: Vec<usize> = (0..n).filter(|&i| i != star).collect();
        let gain = t[star].ud_audited - t[star].ud_unaudited;
        for ps in 0..=steps {
            let p_star = ps as f64 * step;
            let kappa: Vec<f64> =
                (0..n).map(|i| p_star * delta[star] + t[i].ua_unaudited - t[star].ua_unaudited).collect();
            let firsts: Vec<Option<f64>> = match others.first() {
                None => vec![None],
                Some(_) => (0..=steps).map(|q| Some(q as f64 * step)).collect(),
            };
            for first in firsts {
                let mut p = vec![0.0; n];
                p[star] = p_star;
                if let Some(v) = first {
                    p[others[0]] = v;
                }
                if let Some(&last) = others.get(1) {
                    let room = rows.room(&p, last);
                    if room < -1e-12 {
                        continue;
                    }
                    p[last] = room.clamp(0.0, 1.0);
                }
                if !rows.holds(&p) {
                    continue;
                }
                let mut cost = 0.0;
                let mut ok = true;
                for &i in &others {
                    match rate(i, kappa[i], p[i]) {
                        Some(x) => cost += costs[i] * x,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    best = best.max(t[star].ud_unaudited + p_star * gain - cost);
                }
            }
        }
    }
    best
}

pub fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}
