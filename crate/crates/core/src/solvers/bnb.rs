//! Branch and bound over dense-row candidates, with min-cost-flow
//! relaxations and a Lagrangian bound on the most violated row.

use std::time::Instant;

use crate::correction::{Assignment, CorrectionProblem};
use crate::error::{integrity, Error, Result};

use super::{solve_flow, SolveStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnbLimits {
    pub max_n: usize,
    pub max_dense: usize,
    pub max_nodes: usize,
    pub lagrange_steps: usize,
}

impl Default for BnbLimits {
    fn default() -> Self {
        Self {
            max_n: 5000,
            max_dense: 64,
            max_nodes: 20_000,
            lagrange_steps: 16,
        }
    }
}

struct Relaxed {
    assignment: Assignment,
    /// Objective under the original costs.
    objective: f64,
    mask: Vec<bool>,
}

fn relax(base: &CorrectionProblem, forbidden: &[bool], adjust: Option<&[f64]>) -> Result<Option<Relaxed>> {
    let mut p = CorrectionProblem {
        dims: base.dims,
        mu: base.mu,
        table: base.table.clone(),
        bounds: base.bounds.clone(),
        forbidden: forbidden.to_vec(),
        dense_rows: Vec::new(),
    };
    if let Some(adj) = adjust {
        for (c, a) in p.table.cands.iter_mut().zip(adj) {
            c.cost += a;
        }
    }
    let assignment = match solve_flow(&p) {
        Ok((a, _)) => a,
        Err(Error::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let sel = base.selected(&assignment)?;
    let mut mask = vec![false; base.table.cands.len()];
    for &k in &sel {
        mask[k] = true;
    }
    let objective = sel.iter().map(|&k| base.table.cands[k].cost).sum();
    Ok(Some(Relaxed {
        assignment,
        objective,
        mask,
    }))
}

/// Signed violation of every dense row; positive above `hi`, negative below `lo`.
fn violations(p: &CorrectionProblem, mask: &[bool]) -> Vec<i64> {
    p.dense_rows
        .iter()
        .map(|r| {
            let v = r.value(mask);
            if v > r.hi {
                v - r.hi
            } else if v < r.lo {
                v - r.lo
            } else {
                0
            }
        })
        .collect()
}

fn is_fixed(p: &CorrectionProblem, forbidden: &[bool], k: usize) -> bool {
    if forbidden[k] {
        return true;
    }
    let j = p.table.cands[k].particle;
    p.table.range(j).all(|q| q == k || forbidden[q])
}

/// Exact optimum of a problem carrying dense rows.
pub fn branch_and_bound(problem: &CorrectionProblem, limits: BnbLimits) -> Result<(Assignment, SolveStats)> {
    let t0 = Instant::now();
    if problem.dense_rows.is_empty() {
        return solve_flow(problem);
    }
    let n = (0..problem.n()).filter(|&j| !problem.table.of(j).is_empty()).count();
    let mut dense: Vec<usize> = problem
        .dense_rows
        .iter()
        .flat_map(|r| r.terms.iter().map(|t| t.0))
        .collect();
    dense.sort_unstable();
    dense.dedup();
    if n > limits.max_n || dense.len() > limits.max_dense {
        return Err(Error::Unsupported(format!(
            "branch and bound is limited to {} particles and {} dense candidates (got {n} and {}); \
             use the flow-paths band strategy instead",
            limits.max_n,
            limits.max_dense,
            dense.len()
        )));
    }

    let mut best: Option<(Assignment, f64)> = None;
    let mut nodes = 0usize;
    let mut stack: Vec<Vec<bool>> = vec![problem.forbidden.clone()];
    while let Some(forbidden) = stack.pop() {
        nodes += 1;
        if nodes > limits.max_nodes {
            return Err(Error::Unsupported(format!(
                "branch and bound exceeded {} nodes; use the flow-paths band strategy instead",
                limits.max_nodes
            )));
        }
        let incumbent = best.as_ref().map_or(f64::INFINITY, |b| b.1);
        let Some(root) = relax(problem, &forbidden, None)? else {
            continue;
        };
        if root.objective >= incumbent - 1e-12 {
            continue;
        }
        let viol = violations(problem, &root.mask);
        let Some(r) = (0..viol.len()).max_by_key(|&r| (viol[r].abs(), std::cmp::Reverse(r))) else {
            unreachable!()
        };
        if viol[r] == 0 {
            best = Some((root.assignment, root.objective));
            continue;
        }

        let (bound, prune) = lagrangian(problem, &forbidden, r, viol[r] > 0, root.objective, limits, &mut best)?;
        let incumbent = best.as_ref().map_or(f64::INFINITY, |b| b.1);
        if prune || bound >= incumbent - 1e-12 {
            continue;
        }

        let row = &problem.dense_rows[r];
        let too_high = viol[r] > 0;
        let pick = row.terms.iter().find_map(|&(k, coef)| {
            if is_fixed(problem, &forbidden, k) || coef == 0 {
                return None;
            }
            let sel = root.mask[k];
            // Moving the value down means dropping positive or adding negative terms.
            let drop = (coef > 0) == too_high;
            if drop && sel {
                Some((k, true))
            } else if !drop && !sel {
                Some((k, false))
            } else {
                None
            }
        });
        let Some((k, forbid_first)) = pick else { continue };
        let mut off = forbidden.clone();
        off[k] = true;
        let mut on = forbidden;
        let j = problem.table.cands[k].particle;
        for q in problem.table.range(j) {
            if q != k {
                on[q] = true;
            }
        }
        if forbid_first {
            stack.push(on);
            stack.push(off);
        } else {
            stack.push(off);
            stack.push(on);
        }
    }
    let Some((assignment, objective)) = best else {
        return integrity("dense-row problem has no feasible assignment");
    };
    problem.check(&assignment)?;
    Ok((
        assignment,
        SolveStats {
            objective,
            integral: true,
            iterations: nodes,
            wall_time: t0.elapsed(),
        },
    ))
}

/// Maximizes the Lagrangian dual of row `r` by bisection on its multiplier.
/// Feasible solutions met along the way update `best`. Returns the bound and
/// whether the node is proven infeasible.
fn lagrangian(
    p: &CorrectionProblem,
    forbidden: &[bool],
    r: usize,
    too_high: bool,
    l0: f64,
    limits: BnbLimits,
    best: &mut Option<(Assignment, f64)>,
) -> Result<(f64, bool)> {
    let row = &p.dense_rows[r];
    let sign = if too_high { 1.0 } else { -1.0 };
    let rhs = if too_high { row.hi } else { row.lo } as f64;
    let mut coef = vec![0.0; p.table.cands.len()];
    for &(k, c) in &row.terms {
        coef[k] += c as f64;
    }
    let mut bound = l0;
    // Returns (dual value, subgradient).
    let eval = |lambda: f64, best: &mut Option<(Assignment, f64)>| -> Result<Option<(f64, f64)>> {
        let adj: Vec<f64> = coef.iter().map(|c| lambda * sign * c).collect();
        let Some(s) = relax(p, forbidden, Some(&adj))? else {
            return Ok(None);
        };
        let value = s
            .mask
            .iter()
            .zip(&coef)
            .filter(|(m, _)| **m)
            .map(|(_, c)| c)
            .sum::<f64>();
        let dual = s.objective + lambda * sign * (value - rhs);
        if violations(p, &s.mask).iter().all(|&v| v == 0) && best.as_ref().is_none_or(|b| s.objective < b.1 - 1e-12) {
            *best = Some((s.assignment, s.objective));
        }
        Ok(Some((dual, sign * (value - rhs))))
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut found = false;
    for _ in 0..25 {
        let Some((dual, g)) = eval(hi, best)? else {
            return Ok((f64::INFINITY, true));
        };
        bound = bound.max(dual);
        if g <= 0.0 {
            found = true;
            break;
        }
        lo = hi;
        hi *= 4.0;
    }
    if !found {
        // The row cannot be satisfied at any multiplier: no completion fixes it.
        return Ok((f64::INFINITY, true));
    }
    for _ in 0..limits.lagrange_steps {
        let mid = 0.5 * (lo + hi);
        let Some((dual, g)) = eval(mid, best)? else {
            return Ok((f64::INFINITY, true));
        };
        bound = bound.max(dual);
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((bound, false))
}
