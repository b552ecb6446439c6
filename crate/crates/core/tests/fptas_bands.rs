mod common;

use auditgame_core::constraints::{constraint_find, DEFAULT_ENUMERATION_CAP};
use auditgame_core::fpt::{solve_star_program, verify_solution, Formulation, SolveConfig, SolveError, VERIFY_TOL};
use auditgame_core::fptas::{build_subproblem, make_feasible, solve_fptas, sort_deltas, BoundaryOrigin, CandidatePoint};
use auditgame_core::model::{compute_deltas, AuditGame};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn seeded_game() -> impl Strategy<Value = AuditGame> {
    (any::<u64>(), 2usize..=5, 1usize..=3, 0usize..5, 0usize..3).prop_map(|(seed, n, k, d, c)| {
        random_game(&mut rng(seed), n, k, d as f64 * 0.2, [0.01, 0.1, 0.4][c])
    })
}

#[test]
fn band_index_out_of_range() {
    let g = random_game(&mut rng(3), 3, 1, 0.0, 0.01);
    let set = constraint_find(&g, DEFAULT_ENUMERATION_CAP).unwrap();
    assert!(build_subproblem(&g, 0, 2, &set, 0.0).is_ok());
    assert!(matches!(build_subproblem(&g, 0, 3, &set, 0.0), Err(SolveError::Config(_))));
}

#[test]
fn sorted_order_is_stable_and_excludes_star() {
    let g = random_game(&mut rng(11), 6, 2, 0.3, 0.01);
    let d = compute_deltas(&g);
    for star in 0..6 {
        let order = sort_deltas(&g, star);
        assert_eq!(order.len(), 5);
        assert!(!order.contains(&star));
        for w in order.windows(2) {
            let (a, b) = (d.pair(w[0], star), d.pair(w[1], star));
            assert!(a < b || (a == b && w[0] < w[1]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bands_partition_the_plane(g in seeded_game(), seed in any::<u64>()) {
        let set = constraint_find(&g, DEFAULT_ENUMERATION_CAP).unwrap();
        let m = g.n_targets() - 1;
        let mut r = rng(seed);
        for star in 0..g.n_targets() {
            let bands: Vec<_> = (0..=m).map(|j| build_subproblem(&g, star, j, &set, 0.0).unwrap()).collect();
            for _ in 0..1000 {
                let (p, x) = (r.gen::<f64>(), r.gen::<f64>());
                let hits = bands.iter().filter(|b| b.in_band(p, x)).count();
                prop_assert_eq!(hits, 1, "({}, {}) lies in {} bands", p, x, hits);
            }
        }
    }

    #[test]
    fn coverage_boundaries_are_tight(g in seeded_game(), seed in any::<u64>()) {
        let set = constraint_find(&g, DEFAULT_ENUMERATION_CAP).unwrap();
        let d = compute_deltas(&g);
        let mut r = rng(seed);
        for star in 0..g.n_targets() {
            for j in 0..g.n_targets() {
                let eq = build_subproblem(&g, star, j, &set, 0.0).unwrap();
                for b in &eq.boundaries {
                    let BoundaryOrigin::Coverage(idx) = b.origin else { continue };
                    let Some(c) = set.constraints().get(idx) else { continue };
                    let x = r.gen::<f64>();
                    let (a, m) = (b.a.eval(x), b.mult.eval(x));
                    if a.abs() < 1e-6 || m.abs() < 1e-6 {
                        continue;
                    }
                    let p = -b.b.eval(x) / a;
                    if !(0.0..=1.0).contains(&p) {
                        continue;
                    }
                    // Coverage implied by tight best-response rows, unclamped.
                    let cov = |i: usize| -> f64 {
                        if i == star {
                            p
                        } else if eq.active.contains(&i) {
                            eq.hyperbola(i, p, x) / (x + d.delta[i])
                        } else {
                            0.0
                        }
                    };
                    let total: f64 = c.targets.iter().map(|&i| cov(i)).sum();
                    prop_assert!((total - c.bound as f64).abs() <= 1e-7 * (1.0 + total.abs()),
                        "star {} band {} x {}: sum {} vs bound {}", star, j, x, total, c.bound);
                }
            }
        }
    }

    #[test]
    fn projected_candidates_satisfy_their_band(g in seeded_game(), xs in prop::collection::vec(-0.2f64..1.2, 1..20)) {
        let set = constraint_find(&g, DEFAULT_ENUMERATION_CAP).unwrap();
        for star in 0..g.n_targets() {
            for j in 0..g.n_targets() {
                let eq = build_subproblem(&g, star, j, &set, 0.0).unwrap();
                let raw: Vec<CandidatePoint> = xs.iter().map(|&x| CandidatePoint {
                    p_n: 0.0,
                    x,
                    objective: f64::NEG_INFINITY,
                    provenance: auditgame_core::fptas::Provenance::Corner,
                    feasible: false,
                    on_open_boundary: false,
                }).collect();
                for c in make_feasible(&raw, &eq) {
                    prop_assert!((0.0..=1.0).contains(&c.x));
                    if c.feasible {
                        // Band membership up to rounding at the closed edge.
                        let lower = eq.zeroed.last().map_or(f64::NEG_INFINITY, |&i| eq.hyperbola(i, c.p_n, c.x));
                        let upper = eq.active.first().map_or(f64::INFINITY, |&i| eq.hyperbola(i, c.p_n, c.x));
                        prop_assert!(lower < 0.0 && upper >= -1e-10, "star {} band {}: lower {} upper {}", star, j, lower, upper);
                        prop_assert!(eq.boundaries.iter().all(|b| b.violation(c.p_n, c.x) <= 1e-9));
                        prop_assert!((c.objective - eq.objective(c.p_n, c.x)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn no_fixed_rate_program_beats_the_scheme(g in seeded_game()) {
        let out = solve_fptas(&g, &SolveConfig::default()).unwrap();
        let res = verify_solution(&g, &out.solution, None).unwrap();
        prop_assert!(res.ok(VERIFY_TOL), "{:?}", res);
        let set = constraint_find(&g, DEFAULT_ENUMERATION_CAP).unwrap();
        let d = compute_deltas(&g);
        for star in 0..g.n_targets() {
            for step in 0..=100 {
                let x = step as f64 / 100.0;
                let r = solve_star_program(&g, &d, star, x, 0.0, Formulation::Transformed, Some(&set)).unwrap();
                if let Some(obj) = r.objective {
                    prop_assert!(obj <= out.solution.objective + 1e-6,
                        "star {} at x = {} reaches {} > {}", star, x, obj, out.solution.objective);
                }
            }
        }
    }
}

#[test]
fn precision_scaling() {
    let mut r = rng(5150);
    for _ in 0..8 {
        let n = r.gen_range(2..=5);
        let g = random_game(&mut r, n, 2, 0.3, 0.2);
        let solve = |l: u32| solve_fptas(&g, &SolveConfig { root_bits: l, ..SolveConfig::default() }).unwrap();
        let reference = solve(30).solution.objective;
        for l in [8u32, 12, 16, 20] {
            let obj = solve(l).solution.objective;
            let bound = 4.0 * 2f64.powi(-(l as i32));
            assert!((obj - reference).abs() <= bound, "l = {l}: {obj} vs {reference}");
        }
    }
}
