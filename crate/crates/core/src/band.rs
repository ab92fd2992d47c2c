//! Narrow-band particles: only cells at depth −R..0 carry particles, deeper
//! fluid lives on the grid and is tracked as a count of imaginary particles.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correction::{apply_solution, phi_close, Assignment, CorrectionProblem, DenseRow, EPS};
use crate::error::{input, integrity, Result};
use crate::flip::MacGrid;
use crate::grid::{CellGrid, CellIndex, Marking};
use crate::particles::{sq_dist, ParticleSet, Vec3};
use crate::solids::{sigma_solid_obj, SolidObjective};
use crate::solvers::{branch_and_bound, solve_flow, BnbLimits};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FullConstraint,
    OneWay,
    FlowPaths,
}

impl Strategy {
    /// Short name as accepted on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Strategy::FullConstraint => "full",
            Strategy::OneWay => "oneway",
            Strategy::FlowPaths => "flow",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Strategy::FullConstraint, Strategy::OneWay, Strategy::FlowPaths]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandState {
    pub r: i32,
    pub n_deep: i64,
    pub strategy: Strategy,
    /// Deep cells of the last completed step; they stay fluid without particles.
    pub deep_mask: Vec<bool>,
    pub alpha_interface: i64,
    pub alpha_deep: i64,
}

impl BandState {
    pub fn new(r: i32, strategy: Strategy, cells: usize) -> Result<Self> {
        if r < 1 {
            return input(format!("band thickness R must be at least 1, got {r}"));
        }
        Ok(Self {
            r,
            n_deep: 0,
            strategy,
            deep_mask: vec![false; cells],
            alpha_interface: 0,
            alpha_deep: 0,
        })
    }
}

fn prev_depth_is(grid: &CellGrid, c: CellIndex, beta: i32) -> bool {
    grid.prev.marking[c].is_fluid() && grid.prev.depth[c] == beta
}

/// (α_{−R}, α_{<−R}) from the previous-step snapshot.
pub fn compute_alphas(grid: &CellGrid, r: i32, mu: u32, n_deep: i64) -> Result<(i64, i64)> {
    let mu = mu as i64;
    let mut interface = 0i64;
    let mut deep_cells = 0i64;
    for c in 0..grid.len() {
        if !grid.prev.marking[c].is_fluid() {
            continue;
        }
        let beta = grid.prev.depth[c];
        if beta == -r {
            interface += mu - grid.prev.count[c] as i64;
        } else if beta < -r {
            deep_cells += 1;
        }
    }
    let deep = mu * deep_cells - n_deep;
    if interface < 0 || deep < 0 {
        return integrity(format!("negative bubble capacity: interface {interface}, deep {deep}"));
    }
    Ok((interface, deep))
}

/// Candidate moves across the band interface: γ̃_in goes from depth 1−R
/// into −R, γ̃_out the reverse, both under the previous markings.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CrossingSets {
    pub gamma_in: Vec<usize>,
    pub gamma_out: Vec<usize>,
}

pub fn crossing_sets(problem: &CorrectionProblem, grid: &CellGrid, r: i32) -> CrossingSets {
    let stay = problem.table.m - 1;
    let mut s = CrossingSets::default();
    for j in 0..problem.n() {
        let Some(home) = problem.table.index(j, stay).map(|k| problem.table.cands[k].cell) else {
            continue;
        };
        for k in problem.table.range(j) {
            let to = problem.table.cands[k].cell;
            if prev_depth_is(grid, home, 1 - r) && prev_depth_is(grid, to, -r) {
                s.gamma_in.push(k);
            } else if prev_depth_is(grid, home, -r) && prev_depth_is(grid, to, 1 - r) {
                s.gamma_out.push(k);
            }
        }
    }
    s
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BandIo {
    pub n_in: i64,
    pub n_out: i64,
    pub s_in: i64,
    pub s_out: i64,
}

impl BandIo {
    pub fn new(n_in: i64, n_out: i64, alpha: i64) -> Self {
        Self {
            n_in,
            n_out,
            s_in: n_out - n_in + alpha,
            s_out: n_in - n_out,
        }
    }

    pub fn ok(&self) -> bool {
        self.s_in >= 0 && self.s_out >= 0
    }
}

pub fn compute_io(problem: &CorrectionProblem, sets: &CrossingSets, a: &Assignment, alpha: i64) -> Result<BandIo> {
    let mut sel = vec![false; problem.table.cands.len()];
    for k in problem.selected(a)? {
        sel[k] = true;
    }
    let n_in = sets.gamma_in.iter().filter(|&&k| sel[k]).count() as i64;
    let n_out = sets.gamma_out.iter().filter(|&&k| sel[k]).count() as i64;
    Ok(BandIo::new(n_in, n_out, alpha))
}

/// The same counts measured from positions: previous cell versus current cell.
pub fn measure_io(grid: &CellGrid, particles: &ParticleSet, r: i32, alpha: i64) -> BandIo {
    let dims = &grid.dims;
    let (mut n_in, mut n_out) = (0, 0);
    for j in 0..particles.len() {
        if !particles.alive[j] {
            continue;
        }
        let (Some(a), Some(b)) = (dims.cell_of(&particles.x_prev[j]), dims.cell_of(&particles.x[j])) else {
            continue;
        };
        if prev_depth_is(grid, a, 1 - r) && prev_depth_is(grid, b, -r) {
            n_in += 1;
        } else if prev_depth_is(grid, a, -r) && prev_depth_is(grid, b, 1 - r) {
            n_out += 1;
        }
    }
    BandIo::new(n_in, n_out, alpha)
}

/// Second-pass problem that only limits flow in the overfull direction:
/// the other direction is frozen to `b*`, unselected moves in the limited
/// direction are removed and a cardinality row fixes how many remain.
pub fn build_one_way(
    problem: &CorrectionProblem,
    sets: &CrossingSets,
    b_star: &Assignment,
    io: BandIo,
    alpha: i64,
) -> Result<CorrectionProblem> {
    let (fixed, limited, k) = if io.s_in < 0 {
        (&sets.gamma_out, &sets.gamma_in, io.n_out + alpha)
    } else if io.s_out < 0 {
        (&sets.gamma_in, &sets.gamma_out, io.n_in)
    } else {
        return integrity("one-way constraint requested although both slacks are nonnegative");
    };
    let mut sel = vec![false; problem.table.cands.len()];
    for q in problem.selected(b_star)? {
        sel[q] = true;
    }
    let mut p = problem.clone();
    for &q in fixed {
        if sel[q] {
            p.force(q);
        } else {
            p.forbidden[q] = true;
        }
    }
    for &q in limited {
        if !sel[q] {
            p.forbidden[q] = true;
        }
    }
    p.dense_rows.push(DenseRow {
        terms: limited.iter().map(|&q| (q, 1)).collect(),
        lo: k,
        hi: k,
    });
    Ok(p)
}

/// `0 ≤ Σ γ̃_in − Σ γ̃_out ≤ α_{≤−R}`.
pub fn build_full_band_constraint(sets: &CrossingSets, alpha: i64) -> DenseRow {
    let mut terms: Vec<(usize, i64)> = sets.gamma_in.iter().map(|&k| (k, 1)).collect();
    terms.extend(sets.gamma_out.iter().map(|&k| (k, -1)));
    DenseRow {
        terms,
        lo: 0,
        hi: alpha,
    }
}

// ---------------------------------------------------------------------------
// Flow along paths

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    None,
    Root,
    Particle(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Path {
    pub edge: usize,
    pub sink: CellIndex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowDirection {
    /// Out of the band interface toward the surface.
    Out,
    /// Into the band interface from the surface.
    In,
}

/// Mutable cell occupancy plus what the path search needs to price moves.
pub struct PathContext<'a> {
    pub grid: &'a CellGrid,
    pub mu: u32,
    /// Current particle lists per cell, sorted by particle index.
    pub gamma: Vec<Vec<usize>>,
    /// Cells no particle may enter (walls, obstacles, zero caps).
    pub blocked: Vec<bool>,
    pub solid: Option<&'a SolidObjective>,
}

#[derive(Clone, Copy)]
struct Node {
    cost: f64,
    seq: u64,
    cell: CellIndex,
    edge: Edge,
    root: CellIndex,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        self.cost.total_cmp(&o.cost).then(self.seq.cmp(&o.seq))
    }
}

impl<'a> PathContext<'a> {
    pub fn new(
        grid: &'a CellGrid,
        particles: &ParticleSet,
        mu: u32,
        blocked: Vec<bool>,
        solid: Option<&'a SolidObjective>,
    ) -> Result<Self> {
        let mut gamma = vec![Vec::new(); grid.len()];
        for j in 0..particles.len() {
            if !particles.alive[j] {
                continue;
            }
            match grid.dims.cell_of(&particles.x[j]) {
                Some(c) => gamma[c].push(j),
                None => return integrity(format!("particle {j} left the grid")),
            }
        }
        Ok(Self {
            grid,
            mu,
            gamma,
            blocked,
            solid,
        })
    }

    fn sigma(&self, q: &Vec3, r: &Vec3) -> f64 {
        match self.solid {
            Some(so) => sigma_solid_obj(&self.grid.dims, q, r, so).unwrap_or(f64::INFINITY),
            None => sq_dist(q, r),
        }
    }

    /// Cost change of moving particle `j` from its current position to the
    /// best spot in cell `c`.
    pub fn sigma_edge(&self, particles: &ParticleSet, j: usize, c: CellIndex) -> f64 {
        let ideal = particles.x_ideal[j];
        let to = phi_close(&self.grid.dims, &ideal, c);
        self.sigma(&to, &ideal) - self.sigma(&particles.x[j], &ideal)
    }

    /// The cheapest particle in `c` that may move to `c_next` without ending
    /// more than one cell from its previous position.
    pub fn best_edge(&self, particles: &ParticleSet, c: CellIndex, c_next: CellIndex) -> Option<usize> {
        let dims = &self.grid.dims;
        let mut best: Option<(f64, usize)> = None;
        for &j in &self.gamma[c] {
            let home = dims.cell_of(&particles.x_prev[j]);
            if home != Some(c) && home != Some(c_next) {
                continue;
            }
            let s = self.sigma_edge(particles, j, c_next);
            if best.is_none_or(|(b, _)| s < b) {
                best = Some((s, j));
            }
        }
        best.map(|(_, j)| j)
    }

    /// Multi-source label-setting search for cell-disjoint paths from
    /// non-empty sources to sinks with space. Queue entries are duplicated
    /// instead of decreased; stale ones are skipped on dequeue.
    pub fn find_paths(&self, particles: &ParticleSet, sources: &[bool], sinks: &[bool]) -> (Vec<Path>, Vec<Edge>) {
        let dims = &self.grid.dims;
        let n = self.grid.len();
        let mut j_edge = vec![Edge::None; n];
        let mut fin = vec![false; n];
        let mut sigma = vec![f64::INFINITY; n];
        let mut q = BinaryHeap::new();
        let mut seq = 0u64;
        let mut paths = Vec::new();
        for c in 0..n {
            if !sources[c] || self.gamma[c].is_empty() {
                continue;
            }
            j_edge[c] = Edge::Root;
            sigma[c] = 0.0;
            q.push(Reverse(Node {
                cost: 0.0,
                seq,
                cell: c,
                edge: Edge::Root,
                root: c,
            }));
            seq += 1;
        }
        let offsets = dims.axis_offsets();
        while let Some(Reverse(a)) = q.pop() {
            let c = a.cell;
            if !matches!(j_edge[c], Edge::None | Edge::Root) {
                continue;
            }
            if fin[a.root] {
                continue;
            }
            j_edge[c] = a.edge;
            if sinks[c] && (self.gamma[c].len() as u32) < self.mu {
                if let Edge::Particle(j) = a.edge {
                    fin[a.root] = true;
                    paths.push(Path { edge: j, sink: c });
                    continue;
                }
            }
            for &o in &offsets {
                let Some(cn) = dims.offset(c, o) else { continue };
                if j_edge[cn] != Edge::None || self.blocked[cn] {
                    continue;
                }
                let Some(j) = self.best_edge(particles, c, cn) else {
                    continue;
                };
                let t = sigma[c] + self.sigma_edge(particles, j, cn);
                if t >= sigma[cn] {
                    continue;
                }
                sigma[cn] = t;
                q.push(Reverse(Node {
                    cost: t,
                    seq,
                    cell: cn,
                    edge: Edge::Particle(j),
                    root: a.root,
                }));
                seq += 1;
            }
        }
        (paths, j_edge)
    }

    /// Pushes particles one cell along `path`, from the sink back to its root.
    pub fn update_path(&mut self, path: &Path, j_edge: &[Edge], particles: &mut ParticleSet) -> Result<()> {
        let dims = self.grid.dims;
        let mut edge = Edge::Particle(path.edge);
        let mut c = path.sink;
        let mut steps = 0usize;
        while let Edge::Particle(j) = edge {
            let Some(from) = dims.cell_of(&particles.x[j]) else {
                return integrity(format!("path particle {j} is off-grid"));
            };
            particles.x[j] = phi_close(&dims, &particles.x_ideal[j], c);
            let pos = self.gamma[from]
                .binary_search(&j)
                .map_err(|_| crate::error::Error::Integrity(format!("particle {j} missing from cell {from}")))?;
            self.gamma[from].remove(pos);
            let at = self.gamma[c].binary_search(&j).unwrap_or_else(|e| e);
            self.gamma[c].insert(at, j);
            if steps == 0 && self.gamma[c].len() as u32 > self.mu {
                return integrity(format!("path sink {c} exceeds capacity"));
            }
            edge = j_edge[from];
            c = from;
            steps += 1;
            if steps > dims.len() {
                return integrity("path does not terminate at a root");
            }
        }
        if edge != Edge::Root {
            return integrity(format!("path walk ended at cell {c} without a root"));
        }
        Ok(())
    }

    /// Source and sink masks for the requested direction, from the
    /// previous-step markings.
    pub fn endpoints(&self, r: i32, dir: FlowDirection) -> (Vec<bool>, Vec<bool>) {
        let g = self.grid;
        let n = g.len();
        let mut sources = vec![false; n];
        let mut sinks = vec![false; n];
        for c in 0..n {
            if self.blocked[c] {
                continue;
            }
            let m = g.prev.marking[c];
            let beta = g.prev.depth[c];
            match dir {
                FlowDirection::Out => {
                    sources[c] = m.is_fluid() && beta == -r;
                    sinks[c] = m == Marking::Empty || (m.is_fluid() && beta >= 1 - r);
                }
                FlowDirection::In => {
                    sources[c] = m == Marking::Surface;
                    sinks[c] = m.is_fluid() && beta <= -r;
                }
            }
        }
        (sources, sinks)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlowReport {
    pub n_move: usize,
    pub paths: usize,
    pub find_calls: usize,
}

/// Moves `n_move` particles along paths in direction `dir`, searching again
/// on the updated state whenever the last batch of paths is used up.
pub fn correct_band_flow(
    ctx: &mut PathContext,
    particles: &mut ParticleSet,
    r: i32,
    dir: FlowDirection,
    n_move: usize,
) -> Result<FlowReport> {
    let mut report = FlowReport {
        n_move,
        ..Default::default()
    };
    if n_move == 0 {
        return Ok(report);
    }
    let (sources, sinks) = ctx.endpoints(r, dir);
    while report.paths < n_move {
        let (paths, j_edge) = ctx.find_paths(particles, &sources, &sinks);
        report.find_calls += 1;
        if paths.is_empty() {
            return integrity(format!("found only {} of {n_move} band correction paths", report.paths));
        }
        for p in &paths {
            if report.paths == n_move {
                break;
            }
            ctx.update_path(p, &j_edge, particles)?;
            report.paths += 1;
        }
    }
    Ok(report)
}

/// Cells a path may not enter: static walls and cells capped at zero.
pub fn blocked_cells(grid: &CellGrid, problem: &CorrectionProblem) -> Vec<bool> {
    (0..grid.len())
        .map(|c| grid.boundary[c] || problem.bounds[c].is_some_and(|b| b.hi == 0))
        .collect()
}

/// The assignment whose candidates put every live particle where it is now.
pub fn assignment_from_positions(problem: &CorrectionProblem, particles: &ParticleSet) -> Result<Assignment> {
    let mut choice = vec![usize::MAX; problem.n()];
    for (j, slot) in choice.iter_mut().enumerate() {
        if problem.table.of(j).is_empty() {
            continue;
        }
        let cell = problem.dims.cell_of(&particles.x[j]);
        match problem.table.of(j).iter().find(|c| Some(c.cell) == cell) {
            Some(c) => *slot = c.dir,
            None => return integrity(format!("particle {j} sits outside its candidate cells")),
        }
    }
    Ok(Assignment { choice })
}

/// Per-step band correction diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BandReport {
    /// Slacks after the plain min-cost-flow solve.
    pub plain: BandIo,
    /// Slacks measured from the final positions.
    pub after: BandIo,
    pub alpha: i64,
    pub flow: FlowReport,
    pub objective: f64,
}

/// Solves the band-constrained correction with the state's strategy and
/// writes the corrected positions into `x`.
pub fn correct_band(
    grid: &CellGrid,
    problem: &CorrectionProblem,
    particles: &mut ParticleSet,
    state: &mut BandState,
    solid: Option<&SolidObjective>,
) -> Result<BandReport> {
    let r = state.r;
    let (ai, ad) = compute_alphas(grid, r, problem.mu, state.n_deep)?;
    state.alpha_interface = ai;
    state.alpha_deep = ad;
    let alpha = ai + ad;
    let sets = crossing_sets(problem, grid, r);
    let mut rep = BandReport {
        alpha,
        ..Default::default()
    };
    let limits = BnbLimits::default();
    if state.strategy == Strategy::FullConstraint {
        let mut p = problem.clone();
        p.dense_rows.push(build_full_band_constraint(&sets, alpha));
        let (a, _) = branch_and_bound(&p, limits)?;
        rep.plain = compute_io(problem, &sets, &a, alpha)?;
        rep.objective = apply_solution(&p, &a, particles)?;
    } else {
        let (b_star, _) = solve_flow(problem)?;
        let io = compute_io(problem, &sets, &b_star, alpha)?;
        rep.plain = io;
        rep.objective = apply_solution(problem, &b_star, particles)?;
        if !io.ok() {
            match state.strategy {
                Strategy::OneWay => {
                    let p = build_one_way(problem, &sets, &b_star, io, alpha)?;
                    let (a, _) = branch_and_bound(&p, limits)?;
                    rep.objective = apply_solution(&p, &a, particles)?;
                }
                Strategy::FlowPaths => {
                    let (dir, n_move) = if io.s_in < 0 {
                        (FlowDirection::Out, -io.s_in)
                    } else {
                        (FlowDirection::In, -io.s_out)
                    };
                    let mut ctx = PathContext::new(grid, particles, problem.mu, blocked_cells(grid, problem), solid)?;
                    rep.flow = correct_band_flow(&mut ctx, particles, r, dir, n_move as usize)?;
                    rep.objective = problem.objective(&assignment_from_positions(problem, particles)?)?;
                }
                Strategy::FullConstraint => unreachable!(),
            }
        }
    }
    rep.after = measure_io(grid, particles, r, alpha);
    if !rep.after.ok() {
        return integrity(format!("band slack negative after correction: {:?}", rep.after));
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Deletion and reseeding

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaintainReport {
    pub deleted: usize,
    pub inserted: usize,
    pub n_excess: i64,
    /// Particles above μ removed from former deep cells.
    pub trimmed: usize,
    /// Band cells left without particles that were turned back into air.
    pub emptied: usize,
}

fn deep_cells(grid: &CellGrid, r: i32) -> Vec<CellIndex> {
    (0..grid.len())
        .filter(|&c| grid.is_fluid(c) && grid.depth[c] < -r)
        .collect()
}

fn random_point_in<R: Rng>(grid: &CellGrid, c: CellIndex, rng: &mut R) -> Vec3 {
    let lo = grid.dims.coords(c);
    let mut p = [0.5; 3];
    for a in 0..grid.dims.d {
        p[a] = lo[a] as f64 + rng.gen_range(EPS..1.0 - EPS);
    }
    p
}

/// Deletes particles that went deep, then moves the deep surplus into the
/// band interface (spilling to shallower band levels if the interface is
/// full). Band cells that are fluid only through the deep mask and cannot be
/// refilled become empty. Markings and depth must be current on entry and
/// are current on exit.
pub fn maintain_band<R: Rng>(
    grid: &mut CellGrid,
    particles: &mut ParticleSet,
    state: &mut BandState,
    mac: &MacGrid,
    obstacle: &[bool],
    mu: u32,
    rng: &mut R,
) -> Result<MaintainReport> {
    let r = state.r;
    let mut rep = MaintainReport::default();
    for j in 0..particles.len() {
        if !particles.alive[j] {
            continue;
        }
        let Some(c) = grid.dims.cell_of(&particles.x[j]) else {
            continue;
        };
        if grid.is_fluid(c) && grid.depth[c] < -r {
            particles.alive[j] = false;
            state.n_deep += 1;
            rep.deleted += 1;
        }
    }
    if rep.deleted > 0 {
        grid.rebuild_gamma(particles)?;
    }
    // Deep cells are unconstrained; one that rose into the band this step
    // may hold more than μ. The overflow joins the deep count.
    for c in 0..grid.len() {
        let extra = grid.gamma[c].len().saturating_sub(mu as usize);
        if extra == 0 {
            continue;
        }
        for _ in 0..extra {
            let j = grid.gamma[c].pop().expect("counted");
            particles.alive[j] = false;
        }
        state.n_deep += extra as i64;
        rep.trimmed += extra;
    }
    let add = |grid: &mut CellGrid, particles: &mut ParticleSet, c: CellIndex, rng: &mut R| {
        let p = random_point_in(grid, c, rng);
        let v = mac.velocity(&p);
        let j = particles.push(p, v);
        grid.gamma[c].push(j);
    };

    let mut mask: Vec<bool> = (0..grid.len())
        .map(|c| grid.is_fluid(c) && grid.depth[c] < -r)
        .collect();
    loop {
        let deep = deep_cells(grid, r);
        let n_excess = state.n_deep - mu as i64 * deep.len() as i64;
        rep.n_excess = rep.n_excess.max(n_excess);
        if n_excess > 0 {
            let mut left = n_excess;
            for beta in -r..=0 {
                if left == 0 {
                    break;
                }
                let mut cells: Vec<CellIndex> = (0..grid.len())
                    .filter(|&c| grid.is_fluid(c) && grid.depth[c] == beta)
                    .collect();
                cells.shuffle(rng);
                for c in cells {
                    while left > 0 && (grid.gamma[c].len() as u32) < mu {
                        add(grid, particles, c, rng);
                        left -= 1;
                        state.n_deep -= 1;
                        rep.inserted += 1;
                    }
                }
            }
            if left > 0 {
                return integrity(format!("{left} deep particles have no room in the band"));
            }
        }
        let hollow: Vec<CellIndex> = (0..grid.len())
            .filter(|&c| grid.is_fluid(c) && grid.depth[c] >= -r && grid.gamma[c].is_empty())
            .collect();
        if hollow.is_empty() {
            break;
        }
        let mut emptied = false;
        for c in hollow {
            if state.n_deep > 0 {
                add(grid, particles, c, rng);
                state.n_deep -= 1;
                rep.inserted += 1;
            } else {
                mask[c] = false;
                rep.emptied += 1;
                emptied = true;
            }
        }
        if !emptied {
            break;
        }
        grid.classify(obstacle, Some(&mask))?;
        grid.assign_depth();
        mask = (0..grid.len())
            .map(|c| grid.is_fluid(c) && grid.depth[c] < -r)
            .collect();
    }
    state.deep_mask = (0..grid.len())
        .map(|c| grid.is_fluid(c) && grid.depth[c] < -r)
        .collect();
    Ok(rep)
}
