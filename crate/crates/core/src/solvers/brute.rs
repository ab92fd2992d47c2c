//! Exhaustive enumeration oracle for small instances.

use crate::correction::{Assignment, CorrectionProblem};
use crate::error::{integrity, Error, Result};

pub const BRUTE_FORCE_MAX_N: usize = 12;

struct Search<'a> {
    p: &'a CorrectionProblem,
    order: Vec<usize>,
    /// Allowed candidates per position in `order`.
    options: Vec<Vec<usize>>,
    min_rest: Vec<f64>,
    /// `reach[q][c]`: particles at positions ≥ q able to land in cell c.
    reach: Vec<Vec<u32>>,
    row_coef: Vec<Vec<i64>>,
    row_min_rest: Vec<Vec<i64>>,
    row_max_rest: Vec<Vec<i64>>,
    counts: Vec<u32>,
    row_val: Vec<i64>,
    pick: Vec<usize>,
    best: f64,
    best_pick: Option<Vec<usize>>,
}

impl Search<'_> {
    fn feasible_rest(&self, q: usize) -> bool {
        for (c, b) in self.p.bounds.iter().enumerate() {
            if let Some(b) = b {
                if self.counts[c] > b.hi || self.counts[c] + self.reach[q][c] < b.lo {
                    return false;
                }
            }
        }
        for r in 0..self.p.dense_rows.len() {
            let row = &self.p.dense_rows[r];
            if self.row_val[r] + self.row_min_rest[r][q] > row.hi || self.row_val[r] + self.row_max_rest[r][q] < row.lo
            {
                return false;
            }
        }
        true
    }

    fn go(&mut self, q: usize, cost: f64) {
        if cost + self.min_rest[q] >= self.best {
            return;
        }
        if !self.feasible_rest(q) {
            return;
        }
        if q == self.order.len() {
            self.best = cost;
            self.best_pick = Some(self.pick.clone());
            return;
        }
        for t in 0..self.options[q].len() {
            let k = self.options[q][t];
            let cand = &self.p.table.cands[k];
            self.counts[cand.cell] += 1;
            for r in 0..self.row_val.len() {
                self.row_val[r] += self.row_coef[r][k];
            }
            self.pick.push(k);
            self.go(q + 1, cost + cand.cost);
            self.pick.pop();
            for r in 0..self.row_val.len() {
                self.row_val[r] -= self.row_coef[r][k];
            }
            self.counts[cand.cell] -= 1;
        }
    }
}

/// Global optimum over all assignments, honoring bounds, dense rows and
/// forbidden candidates. Refuses more than [`BRUTE_FORCE_MAX_N`] particles.
pub fn brute_force_ilp(problem: &CorrectionProblem) -> Result<(Assignment, f64)> {
    let order: Vec<usize> = (0..problem.n()).filter(|&j| !problem.table.of(j).is_empty()).collect();
    if order.len() > BRUTE_FORCE_MAX_N {
        return Err(Error::Unsupported(format!(
            "brute force is limited to {BRUTE_FORCE_MAX_N} particles, got {}",
            order.len()
        )));
    }
    let options: Vec<Vec<usize>> = order
        .iter()
        .map(|&j| problem.table.range(j).filter(|&k| !problem.forbidden[k]).collect())
        .collect();
    let len = order.len();
    let cells = problem.dims.len();
    let mut min_rest = vec![0.0; len + 1];
    let mut reach = vec![vec![0u32; cells]; len + 1];
    for q in (0..len).rev() {
        let m = options[q]
            .iter()
            .map(|&k| problem.table.cands[k].cost)
            .fold(f64::INFINITY, f64::min);
        min_rest[q] = min_rest[q + 1] + m;
        reach[q] = reach[q + 1].clone();
        let mut seen: Vec<usize> = options[q].iter().map(|&k| problem.table.cands[k].cell).collect();
        seen.sort_unstable();
        seen.dedup();
        for c in seen {
            reach[q][c] += 1;
        }
    }
    let nk = problem.table.cands.len();
    let nr = problem.dense_rows.len();
    let mut row_coef = vec![vec![0i64; nk]; nr];
    let mut row_min_rest = vec![vec![0i64; len + 1]; nr];
    let mut row_max_rest = vec![vec![0i64; len + 1]; nr];
    for (r, row) in problem.dense_rows.iter().enumerate() {
        for &(k, c) in &row.terms {
            row_coef[r][k] += c;
        }
        for q in (0..len).rev() {
            let vals = options[q].iter().map(|&k| row_coef[r][k]);
            row_min_rest[r][q] = row_min_rest[r][q + 1] + vals.clone().min().unwrap_or(0);
            row_max_rest[r][q] = row_max_rest[r][q + 1] + vals.max().unwrap_or(0);
        }
    }
    let mut s = Search {
        p: problem,
        order,
        options,
        min_rest,
        reach,
        row_coef,
        row_min_rest,
        row_max_rest,
        counts: vec![0; cells],
        row_val: vec![0; nr],
        pick: Vec::with_capacity(len),
        best: f64::INFINITY,
        best_pick: None,
    };
    s.go(0, 0.0);
    let Some(pick) = s.best_pick else {
        return integrity("brute force found no feasible assignment");
    };
    let mut choice = vec![usize::MAX; problem.n()];
    for k in pick {
        let c = &problem.table.cands[k];
        choice[c.particle] = c.dir;
    }
    Ok((Assignment { choice }, s.best))
}
