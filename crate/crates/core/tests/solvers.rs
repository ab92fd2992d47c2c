use cellflow::correction::{CorrectionProblem, DenseRow};
use cellflow::instances::{random_problem, ToySpec};
use cellflow::solvers::{branch_and_bound, brute_force_ilp, solve_flow, tu_sample_check, BnbLimits};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(seed: u64, n_max: usize) -> CorrectionProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_problem(
        &mut rng,
        ToySpec {
            n_max,
            ..Default::default()
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_optimum_equals_enumeration(seed in any::<u64>()) {
        let p = toy(seed, 10);
        let (a, s) = solve_flow(&p).unwrap();
        let (_, best) = brute_force_ilp(&p).unwrap();
        prop_assert!((s.objective - best).abs() < 1e-9, "flow {} brute {}", s.objective, best);
        prop_assert!((p.check(&a).unwrap() - best).abs() < 1e-9);
        prop_assert!(s.objective <= p.check(&p.all_stay()).unwrap() + 1e-12);
    }

    #[test]
    fn raising_a_cap_never_hurts(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let p = toy(seed, 12);
        let (_, before) = solve_flow(&p).unwrap();
        let mut q = p.clone();
        let capped: Vec<usize> = (0..q.bounds.len()).filter(|&c| q.bounds[c].is_some_and(|b| b.hi > 0)).collect();
        let c = capped[pick.index(capped.len())];
        q.bounds[c].as_mut().unwrap().hi += 1;
        let (_, after) = solve_flow(&q).unwrap();
        prop_assert!(after.objective <= before.objective + 1e-12);
    }

    #[test]
    fn sampled_subdeterminants_are_unimodular(seed in any::<u64>()) {
        let p = toy(seed, 10);
        let r = tu_sample_check(&p, 50, 7, seed).unwrap();
        prop_assert!(r.passed(), "max |det| {}", r.max_abs_det);
    }

    #[test]
    fn branch_and_bound_equals_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_problem(&mut rng, ToySpec { n_max: 8, ..Default::default() }).unwrap();
        if p.table.cands.is_empty() {
            return Ok(());
        }
        let k = rng.gen_range(1..=p.table.cands.len().min(12));
        let mut terms: Vec<(usize, i64)> = Vec::new();
        for _ in 0..k {
            let c = rng.gen_range(0..p.table.cands.len());
            if terms.iter().all(|t| t.0 != c) {
                terms.push((c, if rng.gen_bool(0.7) { 1 } else { -1 }));
            }
        }
        let lo = rng.gen_range(-2..=2);
        let hi = lo + rng.gen_range(0..=2);
        p.dense_rows.push(DenseRow { terms, lo, hi });
        match brute_force_ilp(&p) {
            Ok((_, best)) => {
                let (a, s) = branch_and_bound(&p, BnbLimits::default()).unwrap();
                prop_assert!((s.objective - best).abs() < 1e-9, "bnb {} brute {}", s.objective, best);
                prop_assert!((p.check(&a).unwrap() - best).abs() < 1e-9);
            }
            Err(_) => prop_assert!(branch_and_bound(&p, BnbLimits::default()).is_err()),
        }
    }
}

/// Choosing exactly k of K entrants: the optimum is the k cheapest extra
/// costs on top of everybody staying, checked against all subsets.
#[test]
fn k_of_k_selection_matches_subset_enumeration() {
    use cellflow::correction::{build_candidates, build_problem, direction_set};
    use cellflow::grid::{CellGrid, Dims};
    use cellflow::particles::ParticleSet;

    let d = Dims::new2(12, 5).unwrap();
    let mut g = CellGrid::tank(d, 1.0);
    let mut ps = ParticleSet::new();
    let ideal_up = [0.3, 0.9, 0.1, 0.6, 0.45, 0.75, 0.2, 0.8];
    for (x, up) in ideal_up.iter().enumerate() {
        let j = ps.push([x as f64 + 1.5, 1.5, 0.5], [0.0; 3]);
        ps.x_ideal[j] = [x as f64 + 1.5, 1.5 + up, 0.5];
    }
    g.rebuild_gamma(&ps).unwrap();
    g.classify(&vec![false; d.len()], None).unwrap();
    g.assign_depth();
    g.snapshot();
    let t = build_candidates(&ps, &g, &direction_set(2).unwrap()).unwrap();
    let base = build_problem(&g, t, 1, None, None).unwrap();
    let ups: Vec<usize> = (0..ps.len()).map(|j| base.table.index(j, 1).unwrap()).collect();
    let big = ups.len();
    for k in 0..=big {
        let mut p = base.clone();
        p.dense_rows.push(DenseRow {
            terms: ups.iter().map(|&c| (c, 1)).collect(),
            lo: k as i64,
            hi: k as i64,
        });
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << big) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let cost: f64 = (0..big)
                .map(|j| {
                    let dir = if mask >> j & 1 == 1 { 1 } else { 4 };
                    p.table.cands[p.table.index(j, dir).unwrap()].cost
                })
                .sum();
            best = best.min(cost);
        }
        let (_, s) = branch_and_bound(&p, BnbLimits::default()).unwrap();
        assert!(
            (s.objective - best).abs() < 1e-9,
            "k={k}: bnb {} subsets {}",
            s.objective,
            best
        );
    }
}
