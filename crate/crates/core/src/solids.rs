//! One-way solid coupling for a single box obstacle snapped to grid cells.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{integrity, Result};
use crate::grid::{CellGrid, CellIndex, Dims};
use crate::particles::{sq_dist, ParticleSet, Vec3};

pub const DEFAULT_LAMBDA: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinematics {
    /// Constant prescribed velocity.
    Scripted,
    /// Velocity integrates gravity.
    FreeFall,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Obstacle {
    /// Box extent in cells.
    pub size: [usize; 3],
    /// Lower corner in cell units; occupancy rounds it to the nearest cell.
    pub pos: Vec3,
    pub vel: Vec3,
    pub kinematics: Kinematics,
    /// Obstacle faces impose zero normal velocity instead of the obstacle's.
    pub zero_bc: bool,
    /// Sorted occupied cells.
    pub occupied: Vec<CellIndex>,
    /// Substeps in which motion was held back by fluid.
    pub holds: usize,
    /// The last substep held the obstacle in place.
    pub held: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionProposal {
    pub pos: Vec3,
    pub vel: Vec3,
    pub cells: Vec<CellIndex>,
    /// Cells the obstacle would newly occupy (sorted).
    pub new_solid: Vec<CellIndex>,
}

impl Obstacle {
    pub fn new(dims: &Dims, size: [usize; 3], pos: Vec3, vel: Vec3, kinematics: Kinematics, zero_bc: bool) -> Self {
        let mut o = Self {
            size,
            pos,
            vel,
            kinematics,
            zero_bc,
            occupied: Vec::new(),
            holds: 0,
            held: false,
        };
        o.occupied = o.cells_at(dims, &pos);
        o
    }

    fn corner(&self, dims: &Dims, pos: &Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..dims.d {
            c[a] = pos[a].round().max(0.0) as usize;
        }
        c
    }

    pub fn cells_at(&self, dims: &Dims, pos: &Vec3) -> Vec<CellIndex> {
        let c = self.corner(dims, pos);
        let ext = |a: usize| if a < dims.d { self.size[a] } else { 1 };
        let mut out = Vec::new();
        for z in 0..ext(2) {
            for y in 0..ext(1) {
                for x in 0..ext(0) {
                    let p = [c[0] + x, c[1] + y, c[2] + z];
                    if (0..3).all(|a| p[a] < dims.n[a]) {
                        out.push(dims.index(p));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn mask(&self, len: usize) -> Vec<bool> {
        let mut m = vec![false; len];
        for &c in &self.occupied {
            m[c] = true;
        }
        m
    }

    pub fn speed(&self) -> f64 {
        self.vel.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Integrates free-fall velocity, capped at `max_speed`. A held obstacle
    /// keeps its velocity without gaining more.
    pub fn accelerate(&mut self, gravity: Vec3, dt: f64, max_speed: f64) {
        if self.kinematics != Kinematics::FreeFall || self.held {
            return;
        }
        for (v, g) in self.vel.iter_mut().zip(gravity) {
            *v += g * dt;
        }
        let s = self.speed();
        if s > max_speed {
            for v in self.vel.iter_mut() {
                *v *= max_speed / s;
            }
        }
    }

    /// Target occupancy after `dt`. The box is kept clear of static walls;
    /// an axis pressed against a wall loses its velocity component.
    pub fn propose_motion(&self, grid: &CellGrid, dt: f64) -> MotionProposal {
        let dims = grid.dims;
        let mut pos = self.pos;
        let mut vel = self.vel;
        for a in 0..dims.d {
            pos[a] += vel[a] * dt;
            let lo = 1.0;
            let hi = (dims.n[a] - 1 - self.size[a]) as f64;
            if pos[a] < lo || pos[a] > hi {
                pos[a] = pos[a].clamp(lo, hi);
                vel[a] = 0.0;
            }
        }
        let mut cells = self.cells_at(&dims, &pos);
        if cells.iter().any(|&c| grid.boundary[c]) {
            pos = self.pos;
            vel = [0.0; 3];
            cells = self.occupied.clone();
        }
        let new_solid = cells
            .iter()
            .copied()
            .filter(|c| self.occupied.binary_search(c).is_err())
            .collect();
        MotionProposal {
            pos,
            vel,
            cells,
            new_solid,
        }
    }

    /// Advances the obstacle unless a corrected particle lies in a cell it
    /// would newly occupy. Returns whether it moved.
    pub fn gate_motion(&mut self, dims: &Dims, particles: &ParticleSet, proposal: &MotionProposal) -> bool {
        let blocked = particles.x.iter().zip(&particles.alive).any(|(x, &alive)| {
            alive
                && dims
                    .cell_of(x)
                    .is_some_and(|c| proposal.new_solid.binary_search(&c).is_ok())
        });
        self.held = blocked;
        if blocked {
            self.holds += 1;
            return false;
        }
        self.pos = proposal.pos;
        self.vel = proposal.vel;
        self.occupied = proposal.cells.clone();
        true
    }

    /// Writes the obstacle's boundary velocity into a per-cell solid
    /// velocity field (zero elsewhere is assumed).
    pub fn solid_face_velocities(&self, out: &mut [Vec3]) {
        let v = if self.zero_bc { [0.0; 3] } else { self.vel };
        for &c in &self.occupied {
            out[c] = v;
        }
    }
}

/// Per-cell solid velocities for a set of obstacles; walls carry zero.
pub fn solid_velocity_field(len: usize, obstacles: &[Obstacle]) -> Vec<Vec3> {
    let mut out = vec![[0.0; 3]; len];
    for o in obstacles {
        o.solid_face_velocities(&mut out);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolidObjective {
    pub lambda: f64,
    pub new_solid: Vec<CellIndex>,
    pub cdist: BTreeMap<CellIndex, u32>,
}

impl SolidObjective {
    pub fn new(grid: &CellGrid, new_solid: &[CellIndex], lambda: f64) -> Self {
        let mut ns = new_solid.to_vec();
        ns.sort_unstable();
        ns.dedup();
        Self {
            lambda,
            cdist: grid.clearing_distance(&ns),
            new_solid: ns,
        }
    }

    /// `λ·cdist(cell)` for prospective solid cells, `None` elsewhere.
    pub fn penalty(&self, cell: CellIndex) -> Result<Option<f64>> {
        if self.new_solid.binary_search(&cell).is_err() {
            return Ok(None);
        }
        match self.cdist.get(&cell) {
            Some(&d) => Ok(Some(self.lambda * d as f64)),
            None => integrity(format!("prospective solid cell {cell} has no clearing distance")),
        }
    }
}

/// `λ·cdist(cell(q))` when `q` falls in a prospective solid cell, else `‖q−r‖²`.
pub fn sigma_solid_obj(dims: &Dims, q: &Vec3, r: &Vec3, so: &SolidObjective) -> Result<f64> {
    match dims.cell_of(q) {
        Some(c) => Ok(so.penalty(c)?.unwrap_or_else(|| sq_dist(q, r))),
        None => Ok(sq_dist(q, r)),
    }
}
