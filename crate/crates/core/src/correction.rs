//! The grid-movement correction problem: every particle picks one of a
//! small set of candidate positions, subject to per-cell particle counts.

use std::fmt::Write as _;

use crate::error::{input, integrity, Error, Result};
use crate::grid::{CellGrid, CellIndex, Dims, Marking};
use crate::particles::{sq_dist, ParticleSet, Vec3};
use crate::solids::SolidObjective;

/// Margin used when clamping positions against cell faces.
pub const EPS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionSet {
    pub dirs: Vec<[i32; 3]>,
}

impl DirectionSet {
    pub fn m(&self) -> usize {
        self.dirs.len()
    }

    /// Index of the zero (stay) direction; always last.
    pub fn stay(&self) -> usize {
        self.dirs.len() - 1
    }
}

/// Positive axes, negative axes, then the zero vector.
pub fn direction_set(d: usize) -> Result<DirectionSet> {
    if d != 2 && d != 3 {
        return input(format!("direction set needs d in {{2,3}}, got {d}"));
    }
    let mut dirs = Vec::with_capacity(2 * d + 1);
    for sign in [1, -1] {
        for a in 0..d {
            let mut v = [0; 3];
            v[a] = sign;
            dirs.push(v);
        }
    }
    dirs.push([0; 3]);
    Ok(DirectionSet { dirs })
}

/// Closest point to `q` inside cell `c`, pulled `EPS` inside any face it
/// would otherwise cross.
pub fn phi_close(dims: &Dims, q: &Vec3, c: CellIndex) -> Vec3 {
    let lo = dims.coords(c);
    let mut out = *q;
    for k in 0..dims.d {
        let center = lo[k] as f64 + 0.5;
        let v = q[k] - center;
        out[k] = if v.abs() < 0.5 {
            q[k]
        } else if v >= 0.5 {
            lo[k] as f64 + 1.0 - EPS
        } else {
            lo[k] as f64 + EPS
        };
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub particle: usize,
    pub dir: usize,
    pub cell: CellIndex,
    pub xi: Vec3,
    pub cost: f64,
}

/// Valid candidates grouped by particle, in direction order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateTable {
    pub m: usize,
    pub n: usize,
    pub cands: Vec<Candidate>,
    /// Candidates of particle `j` are `cands[start[j]..start[j + 1]]`.
    pub start: Vec<usize>,
}

impl CandidateTable {
    pub fn of(&self, j: usize) -> &[Candidate] {
        &self.cands[self.start[j]..self.start[j + 1]]
    }

    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        self.start[j]..self.start[j + 1]
    }

    pub fn index(&self, j: usize, dir: usize) -> Option<usize> {
        self.range(j).find(|&k| self.cands[k].dir == dir)
    }

    fn push_particle(&mut self, list: impl IntoIterator<Item = Candidate>) {
        if self.start.is_empty() {
            self.start.push(0);
        }
        self.cands.extend(list);
        self.start.push(self.cands.len());
        self.n += 1;
    }
}

/// Candidates for every live particle: ξ_ij is the closest point to x̂_j in
/// the cell reached from cell(x̄_j) along direction i. Wall and off-grid
/// targets are dropped. Dead particles get no candidates.
pub fn build_candidates(particles: &ParticleSet, grid: &CellGrid, dirs: &DirectionSet) -> Result<CandidateTable> {
    let dims = grid.dims;
    let mut table = CandidateTable {
        m: dirs.m(),
        start: vec![0],
        ..Default::default()
    };
    for j in 0..particles.len() {
        if !particles.alive[j] {
            table.push_particle([]);
            continue;
        }
        let Some(home) = dims.cell_of(&particles.x_prev[j]) else {
            return integrity(format!("particle {j} previous position is off-grid"));
        };
        let target = particles.x_ideal[j];
        let list: Vec<Candidate> = dirs
            .dirs
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| {
                let cell = dims.offset(home, o)?;
                if grid.boundary[cell] {
                    return None;
                }
                let xi = phi_close(&dims, &target, cell);
                Some(Candidate {
                    particle: j,
                    dir: i,
                    cell,
                    xi,
                    cost: sq_dist(&xi, &target),
                })
            })
            .collect();
        if !list.iter().any(|c| c.dir == dirs.stay()) {
            return integrity(format!("particle {j} sits in a wall cell"));
        }
        table.push_particle(list);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellBound {
    pub lo: u32,
    pub hi: u32,
}

/// `lo ≤ Σ coef·b ≤ hi` over candidate indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DenseRow {
    pub terms: Vec<(usize, i64)>,
    pub lo: i64,
    pub hi: i64,
}

impl DenseRow {
    pub fn value(&self, selected: &[bool]) -> i64 {
        self.terms.iter().filter(|(k, _)| selected[*k]).map(|(_, c)| c).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionProblem {
    pub dims: Dims,
    pub mu: u32,
    pub table: CandidateTable,
    /// Per-cell count bounds; `None` leaves the cell unconstrained.
    pub bounds: Vec<Option<CellBound>>,
    /// Forbidden candidates; forcing a candidate forbids its siblings.
    pub forbidden: Vec<bool>,
    pub dense_rows: Vec<DenseRow>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    /// Selected direction index per particle (`usize::MAX` for dead ones).
    pub choice: Vec<usize>,
}

/// Source line, lo, hi and `(particle, dir, coef)` terms of a dumped row.
type DumpRow = (usize, i64, i64, Vec<(usize, usize, i64)>);

impl CorrectionProblem {
    pub fn n(&self) -> usize {
        self.table.n
    }

    /// Every valid candidate targeting `cell` (the set γ̃_c).
    pub fn gamma_tilde(&self, cell: CellIndex) -> Vec<usize> {
        (0..self.table.cands.len())
            .filter(|&k| self.table.cands[k].cell == cell)
            .collect()
    }

    pub fn allowed(&self, k: usize) -> bool {
        !self.forbidden[k]
    }

    pub fn force(&mut self, k: usize) {
        let j = self.table.cands[k].particle;
        for q in self.table.range(j) {
            if q != k {
                self.forbidden[q] = true;
            }
        }
    }

    /// Stay candidate index of every particle that has candidates.
    pub fn stay_candidates(&self) -> Vec<Option<usize>> {
        let stay = self.table.m - 1;
        (0..self.n()).map(|j| self.table.index(j, stay)).collect()
    }

    pub fn all_stay(&self) -> Assignment {
        let stay = self.table.m - 1;
        Assignment {
            choice: (0..self.n())
                .map(|j| if self.table.of(j).is_empty() { usize::MAX } else { stay })
                .collect(),
        }
    }

    /// Candidate indices selected by `a`, validating shape.
    pub fn selected(&self, a: &Assignment) -> Result<Vec<usize>> {
        if a.choice.len() != self.n() {
            return integrity(format!(
                "assignment covers {} of {} particles",
                a.choice.len(),
                self.n()
            ));
        }
        let mut out = Vec::with_capacity(self.n());
        for (j, &i) in a.choice.iter().enumerate() {
            if self.table.of(j).is_empty() {
                if i != usize::MAX {
                    return integrity(format!("particle {j} has no candidates but chose {i}"));
                }
                continue;
            }
            match self.table.index(j, i) {
                Some(k) => out.push(k),
                None => return integrity(format!("particle {j} chose invalid direction {i}")),
            }
        }
        Ok(out)
    }

    pub fn objective(&self, a: &Assignment) -> Result<f64> {
        Ok(self.selected(a)?.iter().map(|&k| self.table.cands[k].cost).sum())
    }

    /// Checks every constraint; returns the objective.
    pub fn check(&self, a: &Assignment) -> Result<f64> {
        let sel = self.selected(a)?;
        let mut counts = vec![0u32; self.dims.len()];
        let mut mask = vec![false; self.table.cands.len()];
        for &k in &sel {
            if self.forbidden[k] {
                let c = &self.table.cands[k];
                return integrity(format!("particle {} uses forbidden direction {}", c.particle, c.dir));
            }
            counts[self.table.cands[k].cell] += 1;
            mask[k] = true;
        }
        for (c, b) in self.bounds.iter().enumerate() {
            if let Some(b) = b {
                if counts[c] < b.lo || counts[c] > b.hi {
                    return integrity(format!("cell {c} holds {} outside [{}, {}]", counts[c], b.lo, b.hi));
                }
            }
        }
        for (r, row) in self.dense_rows.iter().enumerate() {
            let v = row.value(&mask);
            if v < row.lo || v > row.hi {
                return integrity(format!(
                    "dense row {r} evaluates to {v} outside [{}, {}]",
                    row.lo, row.hi
                ));
            }
        }
        Ok(sel.iter().map(|&k| self.table.cands[k].cost).sum())
    }

    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        let n = self.dims.n;
        let _ = writeln!(s, "cellflow-problem 1");
        let _ = writeln!(s, "dims {} {} {} {}", self.dims.d, n[0], n[1], n[2]);
        let _ = writeln!(s, "mu {}", self.mu);
        let _ = writeln!(s, "n {} m {}", self.n(), self.table.m);
        for (k, c) in self.table.cands.iter().enumerate() {
            let _ = writeln!(s, "cand {} {} {} {:?}", c.particle, c.dir, c.cell, c.cost);
            if self.forbidden[k] {
                let _ = writeln!(s, "forbid {} {}", c.particle, c.dir);
            }
        }
        for (c, b) in self.bounds.iter().enumerate() {
            if let Some(b) = b {
                let _ = writeln!(s, "bound {} {} {}", c, b.lo, b.hi);
            }
        }
        for row in &self.dense_rows {
            let _ = write!(s, "row {} {}", row.lo, row.hi);
            for &(k, coef) in &row.terms {
                let c = &self.table.cands[k];
                let _ = write!(s, " {}:{}:{}", c.particle, c.dir, coef);
            }
            s.push('\n');
        }
        s
    }

    /// Parses the text produced by [`CorrectionProblem::to_dump`]. Candidate
    /// positions are not stored; they are reconstructed as cell centers.
    pub fn from_dump(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let mut dims = None;
        let mut mu = None;
        let mut nm = None;
        let mut cands: Vec<Candidate> = Vec::new();
        let mut forbid: Vec<(usize, usize)> = Vec::new();
        let mut bounds: Vec<(usize, CellBound)> = Vec::new();
        let mut rows: Vec<DumpRow> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let t: Vec<&str> = raw.split_whitespace().collect();
            if t.is_empty() || t[0].starts_with('#') {
                continue;
            }
            let num = |i: usize| -> Result<i64> {
                t.get(i)
                    .ok_or_else(|| perr(line, format!("missing field {i} of `{}`", t[0])))?
                    .parse::<i64>()
                    .map_err(|e| perr(line, format!("field {i} of `{}`: {e}", t[0])))
            };
            let unum = |i: usize| -> Result<usize> {
                let v = num(i)?;
                usize::try_from(v).map_err(|_| perr(line, format!("field {i} of `{}` is negative", t[0])))
            };
            match t[0] {
                "cellflow-problem" => {
                    if num(1)? != 1 {
                        return Err(perr(line, "unsupported dump version".into()));
                    }
                }
                "dims" => {
                    let d =
                        Dims::new(unum(1)?, [unum(2)?, unum(3)?, unum(4)?]).map_err(|e| perr(line, e.to_string()))?;
                    dims = Some(d);
                }
                "mu" => mu = Some(unum(1)? as u32),
                "n" => {
                    if t.get(2) != Some(&"m") {
                        return Err(perr(line, "expected `n <count> m <count>`".into()));
                    }
                    nm = Some((unum(1)?, unum(3)?));
                }
                "cand" => {
                    let cost: f64 = t
                        .get(4)
                        .ok_or_else(|| perr(line, "missing cost".into()))?
                        .parse()
                        .map_err(|e| perr(line, format!("cost: {e}")))?;
                    cands.push(Candidate {
                        particle: unum(1)?,
                        dir: unum(2)?,
                        cell: unum(3)?,
                        xi: [0.5; 3],
                        cost,
                    });
                }
                "forbid" => forbid.push((unum(1)?, unum(2)?)),
                "bound" => bounds.push((
                    unum(1)?,
                    CellBound {
                        lo: unum(2)? as u32,
                        hi: unum(3)? as u32,
                    },
                )),
                "row" => {
                    let mut terms = Vec::new();
                    for tok in &t[3..] {
                        let parts: Vec<&str> = tok.split(':').collect();
                        let bad = || perr(line, format!("bad row term `{tok}`"));
                        if parts.len() != 3 {
                            return Err(bad());
                        }
                        terms.push((
                            parts[0].parse().map_err(|_| bad())?,
                            parts[1].parse().map_err(|_| bad())?,
                            parts[2].parse().map_err(|_| bad())?,
                        ));
                    }
                    rows.push((line, num(1)?, num(2)?, terms));
                }
                other => return Err(perr(line, format!("unknown record `{other}`"))),
            }
        }
        let dims = dims.ok_or_else(|| perr(0, "missing `dims`".into()))?;
        let mu = mu.ok_or_else(|| perr(0, "missing `mu`".into()))?;
        let (n, m) = nm.ok_or_else(|| perr(0, "missing `n .. m ..`".into()))?;
        let mut table = CandidateTable {
            m,
            start: vec![0],
            ..Default::default()
        };
        let mut it = cands.into_iter().peekable();
        for j in 0..n {
            let mut list = Vec::new();
            while let Some(c) = it.next_if(|c| c.particle == j) {
                if c.dir >= m || c.cell >= dims.len() {
                    return input(format!("candidate ({j}, {}) out of range", c.dir));
                }
                let mut c = c;
                c.xi = dims.center(c.cell);
                list.push(c);
            }
            table.push_particle(list);
        }
        if it.next().is_some() {
            return input("candidates must be sorted by particle and reference particles < n");
        }
        let mut problem = CorrectionProblem {
            dims,
            mu,
            forbidden: vec![false; table.cands.len()],
            table,
            bounds: vec![None; dims.len()],
            dense_rows: Vec::new(),
        };
        for (j, i) in forbid {
            let k = problem.lookup(j, i)?;
            problem.forbidden[k] = true;
        }
        for (c, b) in bounds {
            if c >= dims.len() {
                return input(format!("bound for cell {c} out of range"));
            }
            problem.bounds[c] = Some(b);
        }
        for (line, lo, hi, terms) in rows {
            let mut row = DenseRow {
                lo,
                hi,
                terms: Vec::new(),
            };
            for (j, i, coef) in terms {
                let k = problem.lookup(j, i).map_err(|e| perr(line, e.to_string()))?;
                row.terms.push((k, coef));
            }
            problem.dense_rows.push(row);
        }
        Ok(problem)
    }

    fn lookup(&self, j: usize, i: usize) -> Result<usize> {
        if j >= self.n() {
            return input(format!("particle {j} out of range"));
        }
        self.table
            .index(j, i)
            .ok_or_else(|| Error::Input(format!("no candidate ({j}, {i})")))
    }
}

/// Assembles count bounds from the previous-step snapshot. In band mode
/// (`band_r = Some(R)`) the interface at depth −R only gets a cap, cells at
/// −R < β < 0 keep their previous count as a lower bound, and deeper cells
/// are unconstrained. Cells solid now or before are capped at zero. A solid
/// objective replaces the cost of candidates targeting prospective solid cells.
pub fn build_problem(
    grid: &CellGrid,
    table: CandidateTable,
    mu: u32,
    band_r: Option<i32>,
    solid: Option<&SolidObjective>,
) -> Result<CorrectionProblem> {
    let dims = grid.dims;
    let prev = &grid.prev;
    let mut bounds = vec![None; dims.len()];
    for (c, slot) in bounds.iter_mut().enumerate() {
        let cap = CellBound { lo: 0, hi: mu };
        let b = if grid.marking[c] == Marking::Solid || prev.marking[c] == Marking::Solid {
            Some(CellBound { lo: 0, hi: 0 })
        } else {
            match (prev.marking[c], band_r) {
                (Marking::Empty | Marking::Surface, _) => Some(cap),
                (Marking::Inner, None) => Some(CellBound {
                    lo: prev.count[c] as u32,
                    hi: mu,
                }),
                (Marking::Inner, Some(r)) => {
                    let beta = prev.depth[c];
                    if beta == -r {
                        Some(cap)
                    } else if beta > -r {
                        Some(CellBound {
                            lo: prev.count[c] as u32,
                            hi: mu,
                        })
                    } else {
                        None
                    }
                }
                (Marking::Solid, _) => unreachable!(),
            }
        };
        if let Some(b) = b {
            if b.lo > b.hi {
                return integrity(format!("cell {c} lower bound {} exceeds cap {}", b.lo, b.hi));
            }
        }
        *slot = b;
    }
    let mut table = table;
    if let Some(so) = solid {
        for c in table.cands.iter_mut() {
            if let Some(p) = so.penalty(c.cell)? {
                c.cost = p;
            }
        }
    }
    Ok(CorrectionProblem {
        dims,
        mu,
        forbidden: vec![false; table.cands.len()],
        table,
        bounds,
        dense_rows: Vec::new(),
    })
}

/// Writes ξ of the chosen candidates into `x` after checking feasibility.
pub fn apply_solution(problem: &CorrectionProblem, a: &Assignment, particles: &mut ParticleSet) -> Result<f64> {
    let objective = problem.check(a)?;
    for j in 0..problem.n() {
        if a.choice[j] == usize::MAX {
            continue;
        }
        let k = problem.table.index(j, a.choice[j]).expect("checked");
        particles.x[j] = problem.table.cands[k].xi;
    }
    Ok(objective)
}
