//! Small hand-built and random instances for oracle comparisons.

use rand::Rng;

use crate::band::{BandState, Strategy};
use crate::correction::{build_candidates, build_problem, direction_set, CorrectionProblem};
use crate::error::Result;
use crate::flip::clamp_to_moore;
use crate::grid::{CellGrid, Dims};
use crate::particles::ParticleSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToySpec {
    /// Interior extent; walls are added around it.
    pub nx: usize,
    pub ny: usize,
    pub n_max: usize,
    pub mu_max: u32,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            nx: 5,
            ny: 5,
            n_max: 12,
            mu_max: 3,
        }
    }
}

/// A classified tank whose previous-step snapshot matches the particles, so
/// the all-stay assignment is feasible. Ideal positions are random within
/// the Moore neighborhood.
pub fn random_scene<R: Rng>(rng: &mut R, toy: ToySpec) -> Result<(CellGrid, ParticleSet, u32)> {
    let dims = Dims::new2(toy.nx + 2, toy.ny + 2)?;
    let mut grid = CellGrid::tank(dims, 1.0);
    let mu = rng.gen_range(1..=toy.mu_max);
    let n = rng.gen_range(0..=toy.n_max.min(toy.nx * toy.ny * mu as usize));
    let mut counts = vec![0u32; dims.len()];
    let mut ps = ParticleSet::new();
    while ps.len() < n {
        let (x, y) = (rng.gen_range(1..=toy.nx), rng.gen_range(1..=toy.ny));
        let c = dims.index([x, y, 0]);
        if counts[c] >= mu {
            continue;
        }
        counts[c] += 1;
        ps.push(
            [
                x as f64 + rng.gen_range(0.02..0.98),
                y as f64 + rng.gen_range(0.02..0.98),
                0.5,
            ],
            [0.0; 3],
        );
    }
    grid.rebuild_gamma(&ps)?;
    grid.classify(&vec![false; dims.len()], None)?;
    grid.assign_depth();
    grid.snapshot();
    for j in 0..ps.len() {
        let from = ps.x_prev[j];
        let to = [
            from[0] + rng.gen_range(-1.2..1.2),
            from[1] + rng.gen_range(-1.2..1.2),
            0.5,
        ];
        ps.x_ideal[j] = clamp_to_moore(&grid, &from, to);
    }
    Ok((grid, ps, mu))
}

pub fn random_problem<R: Rng>(rng: &mut R, toy: ToySpec) -> Result<CorrectionProblem> {
    let (grid, ps, mu) = random_scene(rng, toy)?;
    let table = build_candidates(&ps, &grid, &direction_set(2)?)?;
    build_problem(&grid, table, mu, None, None)
}

/// Classifies a scene for the band method: particles below the interface
/// are deleted into `n_deep`, the deep cells stay fluid, and the result is
/// stored as the previous-step snapshot.
pub fn settle_band(grid: &mut CellGrid, ps: &mut ParticleSet, r: i32, strategy: Strategy) -> Result<BandState> {
    let mut state = BandState::new(r, strategy, grid.len())?;
    let no_obstacle = vec![false; grid.len()];
    grid.rebuild_gamma(ps)?;
    grid.classify(&no_obstacle, None)?;
    grid.assign_depth();
    for j in 0..ps.len() {
        let c = ps.cell_of(&grid.dims, j).expect("particle on grid");
        if grid.is_fluid(c) && grid.depth[c] < -r {
            ps.alive[j] = false;
            state.n_deep += 1;
        }
    }
    ps.compact();
    grid.rebuild_gamma(ps)?;
    state.deep_mask = (0..grid.len())
        .map(|c| grid.is_fluid(c) && grid.depth[c] < -r)
        .collect();
    grid.classify(&no_obstacle, Some(&state.deep_mask))?;
    grid.assign_depth();
    grid.snapshot();
    Ok(state)
}

/// Places `k` particles spread along x inside cell (x, y).
pub fn fill_cell(ps: &mut ParticleSet, x: usize, y: usize, k: u32) {
    for i in 0..k {
        let fx = (i as f64 + 0.5) / k as f64;
        ps.push([x as f64 + fx, y as f64 + 0.5, 0.5], [0.0; 3]);
    }
}

/// A full 1-ppc pool of interior width 5 with depths 0, −1, −2 (the band
/// interface for R = 2) above two deep rows, plus one particle resting on
/// the surface of column 3. Ideal positions move that particle and the
/// three below it one cell down; everyone else stays put.
pub fn column_push_scene() -> Result<(CellGrid, ParticleSet, BandState)> {
    let dims = Dims::new2(7, 9)?;
    let mut grid = CellGrid::tank(dims, 1.0);
    let mut ps = ParticleSet::new();
    for y in 1..=5 {
        for x in 1..=5 {
            fill_cell(&mut ps, x, y, 1);
        }
    }
    fill_cell(&mut ps, 3, 6, 1);
    let state = settle_band(&mut grid, &mut ps, 2, Strategy::FlowPaths)?;
    for j in 0..ps.len() {
        let p = ps.x[j];
        let (x, y) = (p[0] as usize, p[1] as usize);
        if x == 3 && (3..=6).contains(&y) {
            ps.x_ideal[j] = [p[0], p[1] - 1.0, p[2]];
        }
    }
    Ok((grid, ps, state))
}

/// A random pool of at most `n_max` band particles for R = 1: columns of
/// random height over deep fluid, optional bubbles and airborne particles,
/// and ideal positions biased downward so the band slacks are often
/// violated.
pub fn random_band_scene<R: Rng>(rng: &mut R, n_max: usize) -> Result<(CellGrid, ParticleSet, u32, BandState)> {
    loop {
        let mu = rng.gen_range(1..=2u32);
        let w = if mu == 1 { rng.gen_range(2..=4) } else { 2 };
        let heights: Vec<usize> = (0..w).map(|_| rng.gen_range(3..=4)).collect();
        let top = heights.iter().max().unwrap() + 3;
        let dims = Dims::new2(w + 2, top + 1)?;
        let mut grid = CellGrid::tank(dims, 1.0);
        let mut ps = ParticleSet::new();
        for (i, &h) in heights.iter().enumerate() {
            for y in 1..=h {
                let k = if y >= h - 1 && rng.gen_bool(0.2) { mu - 1 } else { mu };
                fill_cell(&mut ps, i + 1, y, k.max(if y == h { 1 } else { 0 }));
            }
            if rng.gen_bool(0.3) {
                fill_cell(&mut ps, i + 1, h + 2, 1);
            }
        }
        let state = settle_band(&mut grid, &mut ps, 1, Strategy::FlowPaths)?;
        if ps.is_empty() || ps.len() > n_max {
            continue;
        }
        for j in 0..ps.len() {
            let from = ps.x_prev[j];
            let to = [
                from[0] + rng.gen_range(-1.0..1.0),
                from[1] + rng.gen_range(-1.4..0.6),
                0.5,
            ];
            ps.x_ideal[j] = clamp_to_moore(&grid, &from, to);
        }
        return Ok((grid, ps, mu, state));
    }
}
