//! Sampled total-unimodularity checks on the constraint matrix of a
//! correction problem written in `A b ≤ c` form.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correction::CorrectionProblem;
use crate::error::{Error, Result};

pub type SparseRow = Vec<(usize, i64)>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TuReport {
    pub trials: usize,
    pub failures: usize,
    pub max_abs_det: i128,
    /// Sampled submatrix count per size `k` (index 0 unused).
    pub by_size: Vec<usize>,
}

impl TuReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Rows: `b ≤ 1`, `−b ≤ 0`, both signs of each choose-one equality, cell
/// caps, and negated cell lower bounds. Columns are allowed candidates.
pub fn canonical_matrix(p: &CorrectionProblem) -> Result<(Vec<SparseRow>, usize)> {
    if !p.dense_rows.is_empty() {
        return Err(Error::Unsupported(
            "dense rows are outside the unimodular structure".into(),
        ));
    }
    let cols: Vec<usize> = (0..p.table.cands.len()).filter(|&k| !p.forbidden[k]).collect();
    let mut col_of = vec![usize::MAX; p.table.cands.len()];
    for (c, &k) in cols.iter().enumerate() {
        col_of[k] = c;
    }
    let nc = cols.len();
    let mut rows: Vec<SparseRow> = Vec::new();
    for c in 0..nc {
        rows.push(vec![(c, 1)]);
    }
    for c in 0..nc {
        rows.push(vec![(c, -1)]);
    }
    for j in 0..p.n() {
        let r: SparseRow = p
            .table
            .range(j)
            .filter(|&k| col_of[k] != usize::MAX)
            .map(|k| (col_of[k], 1))
            .collect();
        if r.is_empty() {
            continue;
        }
        rows.push(r.iter().map(|&(c, _)| (c, -1)).collect());
        rows.push(r);
    }
    let mut by_cell: Vec<Vec<usize>> = vec![Vec::new(); p.dims.len()];
    for (c, &k) in cols.iter().enumerate() {
        by_cell[p.table.cands[k].cell].push(c);
    }
    for (cell, b) in p.bounds.iter().enumerate() {
        let Some(b) = b else { continue };
        if by_cell[cell].is_empty() {
            continue;
        }
        rows.push(by_cell[cell].iter().map(|&c| (c, 1)).collect());
        if b.lo > 0 {
            rows.push(by_cell[cell].iter().map(|&c| (c, -1)).collect());
        }
    }
    Ok((rows, nc))
}

/// Exact integer determinant by fraction-free (Bareiss) elimination.
pub fn det(mut m: Vec<Vec<i128>>) -> i128 {
    let n = m.len();
    if n == 0 {
        return 1;
    }
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k][k] == 0 {
            let Some(swap) = (k + 1..n).find(|&i| m[i][k] != 0) else {
                return 0;
            };
            m.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
            m[i][k] = 0;
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}

/// Samples `trials` square submatrices of size 1..=`max_k`. Column sets are
/// drawn uniformly; rows are drawn from those touching the chosen columns,
/// topped up with arbitrary rows when too few touch them.
pub fn tu_sample_check(p: &CorrectionProblem, trials: usize, max_k: usize, seed: u64) -> Result<TuReport> {
    let (rows, nc) = canonical_matrix(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TuReport {
        by_size: vec![0; max_k + 1],
        ..Default::default()
    };
    if nc == 0 || max_k == 0 {
        return Ok(report);
    }
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for (r, row) in rows.iter().enumerate() {
        for &(c, _) in row {
            col_rows[c].push(r);
        }
    }
    for _ in 0..trials {
        let k = rng.gen_range(1..=max_k.min(nc).min(rows.len()));
        let cs = sample(&mut rng, nc, k).into_vec();
        let mut touching: Vec<usize> = cs.iter().flat_map(|&c| col_rows[c].iter().copied()).collect();
        touching.sort_unstable();
        touching.dedup();
        let mut rs: Vec<usize> = if touching.len() >= k {
            sample(&mut rng, touching.len(), k)
                .into_iter()
                .map(|i| touching[i])
                .collect()
        } else {
            touching.clone()
        };
        while rs.len() < k {
            let r = rng.gen_range(0..rows.len());
            if !rs.contains(&r) {
                rs.push(r);
            }
        }
        let sub: Vec<Vec<i128>> = rs
            .iter()
            .map(|&r| {
                let mut line = vec![0i128; k];
                for &(c, v) in &rows[r] {
                    if let Some(pos) = cs.iter().position(|&x| x == c) {
                        line[pos] = v as i128;
                    }
                }
                line
            })
            .collect();
        let d = det(sub);
        report.trials += 1;
        report.by_size[k] += 1;
        report.max_abs_det = report.max_abs_det.max(d.abs());
        if d.abs() > 1 {
            report.failures += 1;
        }
    }
    Ok(report)
}
