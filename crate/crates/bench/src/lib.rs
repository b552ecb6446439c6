//! Deterministic fixtures for the benchmarks.

use auditgame_core::alloc::AllocationMatrix;
use auditgame_core::model::{AuditGame, TargetUtilities};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.gen::<f64>() * 1024.0).round() / 1024.0
}

/// Random game with `n` targets and `k` resources; each (resource, target)
/// pair is forbidden with probability `density`.
pub fn random_game(seed: u64, n: usize, k: usize, density: f64) -> AuditGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = (0..n)
        .map(|_| {
            let (a, b, c, d) = (unit(&mut rng), unit(&mut rng), unit(&mut rng), unit(&mut rng));
            TargetUtilities::new(a.max(b), a.min(b), c.min(d), c.max(d))
        })
        .collect();
    let mut restricted = Vec::new();
    for j in 0..k {
        for i in 0..n {
            if rng.gen::<f64>() < density {
                restricted.push((j, i));
            }
        }
    }
    AuditGame::new(targets, k, &restricted, 0.01).expect("generated game is valid")
}

/// Resource `s` audits targets `0, 1, 2s, 2s + 1`; resource 0 only the
/// first two. The number of distinct coverage constraints grows
/// combinatorially in `k`.
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
    AuditGame::new(vec![t; n], k, &restricted, 0.01).expect("explosion family is valid")
}

/// Random matrix with row and column sums at most one.
pub fn random_substochastic(seed: u64, rows: usize, cols: usize) -> AllocationMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = AllocationMatrix::zeros(rows, cols);
    for r in m.entries.iter_mut() {
        for v in r.iter_mut() {
            if rng.gen::<f64>() < 0.5 {
                *v = rng.gen::<f64>();
            }
        }
    }
    let scale = m.row_sums().into_iter().chain(m.column_sums()).fold(1.0, f64::max);
    m.entries.iter_mut().flatten().for_each(|v| *v /= scale);
    m
}
