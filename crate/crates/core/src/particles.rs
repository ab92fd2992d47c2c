use crate::grid::Dims;

pub type Vec3 = [f64; 3];

/// Fluid particles. Positions are in cell units; in 2D the third component is
/// pinned to 0.5 (the center of the single layer).
///
/// `x_prev` holds the positions at the end of the previous step, `x_ideal` the
/// advected positions and `x` the corrected positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParticleSet {
    pub x_prev: Vec<Vec3>,
    pub x_ideal: Vec<Vec3>,
    pub x: Vec<Vec3>,
    pub vel: Vec<Vec3>,
    pub alive: Vec<bool>,
}

impl ParticleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn live_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    /// Adds a particle resting at `pos`; all three position slots start equal.
    pub fn push(&mut self, pos: Vec3, vel: Vec3) -> usize {
        self.x_prev.push(pos);
        self.x_ideal.push(pos);
        self.x.push(pos);
        self.vel.push(vel);
        self.alive.push(true);
        self.x.len() - 1
    }

    /// Drops dead particles, preserving the order of the survivors.
    pub fn compact(&mut self) {
        if self.alive.iter().all(|a| *a) {
            return;
        }
        let keep: Vec<bool> = self.alive.clone();
        let mut k = keep.iter();
        self.x_prev.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.x_ideal.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.x.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.vel.retain(|_| *k.next().unwrap());
        self.alive.retain(|a| *a);
    }

    /// Commits the corrected positions as the start of the next step.
    pub fn commit(&mut self) {
        self.x_prev.clone_from(&self.x);
        self.x_ideal.clone_from(&self.x);
    }

    pub fn cell_of(&self, dims: &Dims, j: usize) -> Option<usize> {
        dims.cell_of(&self.x[j])
    }
}

pub fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
