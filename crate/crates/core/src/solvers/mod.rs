//! Exact solvers for the correction problem.

pub mod bnb;
pub mod brute;
pub mod mcf;
pub mod tu;

use std::time::Duration;

use crate::correction::{Assignment, CorrectionProblem};
use crate::error::{integrity, Error, Result};

pub use bnb::{branch_and_bound, BnbLimits};
pub use brute::{brute_force_ilp, BRUTE_FORCE_MAX_N};
pub use mcf::{solve_mcf, FlowArc, FlowNetwork};
pub use tu::{tu_sample_check, TuReport};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub objective: f64,
    pub integral: bool,
    pub iterations: usize,
    pub wall_time: Duration,
}

/// Flow network of a problem plus the candidate index carried by each
/// particle→cell arc.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedNetwork {
    pub net: FlowNetwork,
    pub source: usize,
    pub sink: usize,
    pub arc_candidate: Vec<Option<usize>>,
}

/// Nodes are particles, then every grid cell, then source and sink.
pub fn reduce_to_flow(problem: &CorrectionProblem) -> Result<ReducedNetwork> {
    if !problem.dense_rows.is_empty() {
        return Err(Error::Unsupported(
            "dense rows do not reduce to a flow network; use branch_and_bound".into(),
        ));
    }
    let n = problem.n();
    let cells = problem.dims.len();
    let source = n + cells;
    let sink = source + 1;
    let mut net = FlowNetwork::new(n + cells + 2);
    let mut arc_candidate = Vec::new();
    let mut flow_total = 0i64;
    let shift = cost_shift(problem);
    for j in 0..n {
        if problem.table.of(j).is_empty() {
            continue;
        }
        net.add_arc(source, j, 0, 1, 0.0);
        arc_candidate.push(None);
        flow_total += 1;
        for k in problem.table.range(j) {
            if problem.forbidden[k] {
                continue;
            }
            let c = &problem.table.cands[k];
            net.add_arc(j, n + c.cell, 0, 1, c.cost - shift[j]);
            arc_candidate.push(Some(k));
        }
    }
    for c in 0..cells {
        let (lo, hi) = match problem.bounds[c] {
            Some(b) => (b.lo as i64, b.hi as i64),
            None => (0, flow_total.max(1)),
        };
        net.add_arc(n + c, sink, lo, hi, 0.0);
        arc_candidate.push(None);
    }
    net.supply[source] = flow_total;
    net.supply[sink] = -flow_total;
    Ok(ReducedNetwork {
        net,
        source,
        sink,
        arc_candidate,
    })
}

/// Cheapest allowed candidate cost per particle. Subtracting it from every
/// candidate of that particle leaves the optimum unchanged, makes every arc
/// cost nonnegative and gives each particle a zero-cost arc.
pub fn cost_shift(problem: &CorrectionProblem) -> Vec<f64> {
    (0..problem.n())
        .map(|j| {
            let m = problem
                .table
                .range(j)
                .filter(|&k| !problem.forbidden[k])
                .map(|k| problem.table.cands[k].cost)
                .fold(f64::INFINITY, f64::min);
            if m.is_finite() {
                m
            } else {
                0.0
            }
        })
        .collect()
}

/// Exact solve of a problem without dense rows.
pub fn solve_flow(problem: &CorrectionProblem) -> Result<(Assignment, SolveStats)> {
    let red = reduce_to_flow(problem)?;
    let (flows, mut stats) = solve_mcf(&red.net)?;
    let mut choice = vec![usize::MAX; problem.n()];
    for (a, f) in red.arc_candidate.iter().zip(&flows) {
        if let (Some(k), 1) = (a, f) {
            let c = &problem.table.cands[*k];
            choice[c.particle] = c.dir;
        }
    }
    for j in 0..problem.n() {
        if choice[j] == usize::MAX && !problem.table.of(j).is_empty() {
            return integrity(format!("flow left particle {j} unassigned"));
        }
    }
    let assignment = Assignment { choice };
    stats.objective = if cfg!(debug_assertions) {
        problem.check(&assignment)?
    } else {
        problem.objective(&assignment)?
    };
    Ok((assignment, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::{build_candidates, build_problem, direction_set, CellBound};
    use crate::grid::{CellGrid, Dims};
    use crate::particles::ParticleSet;

    fn problem(nx: usize, ny: usize, mu: u32, pts: &[([f64; 2], [f64; 2])]) -> CorrectionProblem {
        let d = Dims::new2(nx, ny).unwrap();
        let mut g = CellGrid::tank(d, 1.0);
        let mut ps = ParticleSet::new();
        for (at, ideal) in pts {
            let j = ps.push([at[0], at[1], 0.5], [0.0; 3]);
            ps.x_ideal[j] = [ideal[0], ideal[1], 0.5];
        }
        g.rebuild_gamma(&ps).unwrap();
        g.classify(&vec![false; d.len()], None).unwrap();
        g.assign_depth();
        g.snapshot();
        let t = build_candidates(&ps, &g, &direction_set(2).unwrap()).unwrap();
        build_problem(&g, t, mu, None, None).unwrap()
    }

    /// Plain enumeration of every combination, validated by `check`.
    fn enumerate(p: &CorrectionProblem) -> f64 {
        let n = p.n();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; n];
        loop {
            let a = Assignment {
                choice: (0..n).map(|j| p.table.of(j)[idx[j]].dir).collect(),
            };
            if let Ok(v) = p.check(&a) {
                best = best.min(v);
            }
            let mut j = 0;
            loop {
                if j == n {
                    return best;
                }
                idx[j] += 1;
                if idx[j] < p.table.of(j).len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    #[test]
    fn network_shape_for_one_particle() {
        let p = problem(7, 7, 4, &[([3.5, 3.5], [3.6, 3.5])]);
        let red = reduce_to_flow(&p).unwrap();
        let cells = p.dims.len();
        assert_eq!(red.net.nodes, 1 + cells + 2);
        assert_eq!(red.net.arcs.len(), 6 + cells);
        let wall = red.net.arcs.iter().find(|a| a.from == 1 && a.to == red.sink).unwrap();
        assert_eq!((wall.lower, wall.cap), (0, 0));
    }

    #[test]
    fn lower_bounds_reach_the_sink_arcs() {
        let mut p = problem(7, 7, 2, &[([3.5, 3.5], [3.5, 3.5])]);
        let c = p.dims.index([3, 3, 0]);
        p.bounds[c] = Some(CellBound { lo: 1, hi: 2 });
        let red = reduce_to_flow(&p).unwrap();
        let arc = red
            .net
            .arcs
            .iter()
            .find(|a| a.from == 1 + c && a.to == red.sink)
            .unwrap();
        assert_eq!((arc.lower, arc.cap), (1, 2));
    }

    #[test]
    fn single_particle_takes_zero_cost_candidate() {
        let p = problem(7, 7, 1, &[([3.5, 3.5], [4.3, 3.6])]);
        let (a, s) = solve_flow(&p).unwrap();
        assert_eq!(a.choice, vec![0]);
        assert_eq!(s.objective, 0.0);
        assert!(s.integral);
    }

    #[test]
    fn two_cells_of_capacity_two_match_enumeration() {
        let p = problem(
            6,
            5,
            2,
            &[
                ([2.3, 2.5], [2.9, 2.5]),
                ([2.7, 2.5], [3.2, 2.5]),
                ([3.3, 2.5], [2.8, 2.5]),
                ([3.7, 2.5], [3.1, 2.5]),
            ],
        );
        let (a, s) = solve_flow(&p).unwrap();
        assert!((s.objective - enumerate(&p)).abs() < 1e-12);
        assert!((p.check(&a).unwrap() - s.objective).abs() < 1e-12);
    }

    #[test]
    fn full_block_only_permutes() {
        let p = problem(
            4,
            4,
            1,
            &[
                ([1.5, 1.5], [1.9, 1.6]),
                ([2.5, 1.5], [2.1, 1.4]),
                ([1.5, 2.5], [1.5, 2.9]),
                ([2.5, 2.5], [2.5, 2.5]),
            ],
        );
        for b in p.bounds.iter().flatten() {
            assert!(b.lo == b.hi);
        }
        let (a, s) = solve_flow(&p).unwrap();
        assert!((s.objective - enumerate(&p)).abs() < 1e-12);
        let stay_sum: f64 = (0..p.n()).map(|j| p.table.of(j).last().unwrap().cost).sum();
        assert!((s.objective - stay_sum).abs() < 1e-12);
        assert!(a.choice.iter().all(|&i| i == 4));
    }

    #[test]
    fn two_particles_competing_for_one_cell() {
        let p = problem(7, 7, 1, &[([2.5, 3.5], [3.5, 3.5]), ([4.5, 3.5], [3.4, 3.5])]);
        let (a, s) = solve_flow(&p).unwrap();
        let entering = a
            .choice
            .iter()
            .zip([0usize, 2])
            .filter(|(c, into)| **c == *into)
            .count();
        assert_eq!(entering, 1);
        assert!((s.objective - enumerate(&p)).abs() < 1e-12);
    }

    #[test]
    fn dense_rows_are_refused_by_the_flow_reduction() {
        let mut p = problem(7, 7, 1, &[([3.5, 3.5], [3.5, 3.5])]);
        p.dense_rows.push(Default::default());
        assert!(matches!(reduce_to_flow(&p), Err(Error::Unsupported(_))));
        assert!(matches!(tu_sample_check(&p, 1, 1, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn brute_force_handles_empty_and_refuses_large() {
        let p = problem(7, 7, 1, &[]);
        assert_eq!(brute_force_ilp(&p).unwrap().1, 0.0);
        let pts: Vec<_> = (0..13)
            .map(|i| {
                (
                    [1.5 + (i % 5) as f64, 1.5 + (i / 5) as f64],
                    [1.5 + (i % 5) as f64, 1.5 + (i / 5) as f64],
                )
            })
            .collect();
        let p = problem(7, 7, 1, &pts);
        assert!(matches!(brute_force_ilp(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bnb_without_violation_returns_relaxation() {
        let mut p = problem(7, 7, 1, &[([3.5, 3.5], [4.3, 3.5])]);
        let (relaxed, _) = solve_flow(&p).unwrap();
        let k = p.table.index(0, 0).unwrap();
        p.dense_rows.push(crate::correction::DenseRow {
            terms: vec![(k, 1)],
            lo: 0,
            hi: 1,
        });
        let (a, _) = branch_and_bound(&p, BnbLimits::default()).unwrap();
        assert_eq!(a, relaxed);
    }

    #[test]
    fn bnb_cardinality_beyond_candidates_is_infeasible() {
        let mut p = problem(7, 7, 1, &[([3.5, 3.5], [4.3, 3.5]), ([2.5, 2.5], [2.5, 2.5])]);
        let terms: Vec<_> = (0..2).map(|j| (p.table.index(j, 0).unwrap(), 1)).collect();
        p.dense_rows.push(crate::correction::DenseRow { terms, lo: 3, hi: 3 });
        assert!(matches!(
            branch_and_bound(&p, BnbLimits::default()),
            Err(Error::Integrity(_))
        ));
    }
}
