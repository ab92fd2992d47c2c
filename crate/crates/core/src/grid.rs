//! Regular cell grid: markings, neighborhoods, depth, clearing distance and
//! the discrete volume measure.
//!
//! Coordinates are in cell units. Cell `(i, j, k)` spans `[i, i+1)` on each
//! axis and has its center at `i + 0.5`. A 2D grid is stored as a single
//! layer with `nz = 1`.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{input, integrity, Result};
use crate::particles::{ParticleSet, Vec3};

pub type CellIndex = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub n: [usize; 3],
}

impl Dims {
    pub fn new(d: usize, n: [usize; 3]) -> Result<Self> {
        if d != 2 && d != 3 {
            return input(format!("dimension must be 2 or 3, got {d}"));
        }
        let n = if d == 2 { [n[0], n[1], 1] } else { n };
        if n[..d].iter().any(|&e| e < 3) {
            return input(format!("every axis needs at least 3 cells, got {n:?}"));
        }
        Ok(Self { d, n })
    }

    pub fn new2(nx: usize, ny: usize) -> Result<Self> {
        Self::new(2, [nx, ny, 1])
    }

    pub fn new3(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::new(3, [nx, ny, nz])
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, c: [usize; 3]) -> CellIndex {
        c[0] + self.n[0] * (c[1] + self.n[1] * c[2])
    }

    #[inline]
    pub fn coords(&self, i: CellIndex) -> [usize; 3] {
        let x = i % self.n[0];
        let r = i / self.n[0];
        [x, r % self.n[1], r / self.n[1]]
    }

    /// Cell containing `p`, or `None` outside the grid.
    #[inline]
    pub fn cell_of(&self, p: &Vec3) -> Option<CellIndex> {
        let mut c = [0usize; 3];
        for a in 0..self.d {
            let f = p[a].floor();
            if !(f >= 0.0 && (f as usize) < self.n[a]) {
                return None;
            }
            c[a] = f as usize;
        }
        Some(self.index(c))
    }

    pub fn center(&self, i: CellIndex) -> Vec3 {
        let c = self.coords(i);
        let mut p = [0.5; 3];
        for a in 0..self.d {
            p[a] = c[a] as f64 + 0.5;
        }
        p
    }

    /// Neighbor at an integer offset, if it lies inside the grid.
    #[inline]
    pub fn offset(&self, i: CellIndex, delta: [i32; 3]) -> Option<CellIndex> {
        let c = self.coords(i);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as i64 + delta[a] as i64;
            if v < 0 || v >= self.n[a] as i64 {
                return None;
            }
            out[a] = v as usize;
        }
        Some(self.index(out))
    }

    /// Axis unit offsets in the fixed order +x, +y, (+z), -x, -y, (-z).
    pub fn axis_offsets(&self) -> Vec<[i32; 3]> {
        let mut v = Vec::with_capacity(2 * self.d);
        for sign in [1, -1] {
            for a in 0..self.d {
                let mut o = [0; 3];
                o[a] = sign;
                v.push(o);
            }
        }
        v
    }

    /// All offsets at Chebyshev distance 1.
    pub fn moore_offsets(&self) -> Vec<[i32; 3]> {
        let zr: &[i32] = if self.d == 3 { &[-1, 0, 1] } else { &[0] };
        let mut v = Vec::new();
        for &dz in zr {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx != 0 || dy != 0 || dz != 0 {
                        v.push([dx, dy, dz]);
                    }
                }
            }
        }
        v
    }

    pub fn chebyshev(&self, a: CellIndex, b: CellIndex) -> usize {
        let (ca, cb) = (self.coords(a), self.coords(b));
        (0..3).map(|k| ca[k].abs_diff(cb[k])).max().unwrap()
    }

    pub fn manhattan(&self, a: CellIndex, b: CellIndex) -> usize {
        let (ca, cb) = (self.coords(a), self.coords(b));
        (0..3).map(|k| ca[k].abs_diff(cb[k])).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Marking {
    Empty,
    Solid,
    Surface,
    Inner,
}

impl Marking {
    pub fn is_fluid(self) -> bool {
        matches!(self, Marking::Surface | Marking::Inner)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborhoodKind {
    VonNeumann,
    Moore,
}

/// Markings, depths and counts from the end of the previous completed step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshot {
    pub marking: Vec<Marking>,
    pub depth: Vec<i32>,
    pub count: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeReport {
    pub v: f64,
    pub v_star: f64,
    pub percent: f64,
    /// Sum of `min(1, |gamma_c| / mu)` over all cells, with no depth credit.
    pub alt_v: f64,
    pub alt_percent: f64,
    pub per_cell: Option<Vec<f64>>,
}

/// Raster codes written to grid dumps.
pub mod code {
    pub const EMPTY: u8 = 0;
    pub const WALL: u8 = 1;
    pub const OBSTACLE: u8 = 2;
    pub const SURFACE: u8 = 3;
    pub const INNER: u8 = 4;
    pub const IN_BAND: u8 = 5;
    pub const BAND_INTERFACE: u8 = 6;
    pub const DEEP: u8 = 7;
}

#[derive(Clone, Debug)]
pub struct CellGrid {
    pub dims: Dims,
    /// World length of one cell; only used when writing world-space output.
    pub cell_width: f64,
    pub marking: Vec<Marking>,
    pub depth: Vec<i32>,
    pub gamma: Vec<Vec<usize>>,
    /// Static solid cells (tank walls and fixed scenery). These never make a
    /// neighboring fluid cell a surface cell.
    pub boundary: Vec<bool>,
    pub prev: Snapshot,
    pub warnings: Vec<String>,
}

impl CellGrid {
    /// A grid whose outermost layer along every active axis is a static wall.
    pub fn tank(dims: Dims, cell_width: f64) -> Self {
        let len = dims.len();
        let mut boundary = vec![false; len];
        for (i, b) in boundary.iter_mut().enumerate() {
            let c = dims.coords(i);
            *b = (0..dims.d).any(|a| c[a] == 0 || c[a] == dims.n[a] - 1);
        }
        let marking = boundary
            .iter()
            .map(|&b| if b { Marking::Solid } else { Marking::Empty })
            .collect::<Vec<_>>();
        let mut g = Self {
            dims,
            cell_width,
            depth: vec![1; len],
            gamma: vec![Vec::new(); len],
            marking,
            boundary,
            prev: Snapshot::default(),
            warnings: Vec::new(),
        };
        g.snapshot();
        g
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn count(&self, c: CellIndex) -> usize {
        self.gamma[c].len()
    }

    pub fn is_fluid(&self, c: CellIndex) -> bool {
        self.marking[c].is_fluid()
    }

    pub fn neighbors(&self, cell: CellIndex, kind: NeighborhoodKind) -> Result<Vec<CellIndex>> {
        if cell >= self.len() {
            return input(format!("cell {cell} outside grid of {} cells", self.len()));
        }
        let offs = match kind {
            NeighborhoodKind::VonNeumann => self.dims.axis_offsets(),
            NeighborhoodKind::Moore => self.dims.moore_offsets(),
        };
        Ok(offs.into_iter().filter_map(|o| self.dims.offset(cell, o)).collect())
    }

    /// Rebuilds `gamma` from the corrected positions of live particles.
    pub fn rebuild_gamma(&mut self, particles: &ParticleSet) -> Result<()> {
        for g in &mut self.gamma {
            g.clear();
        }
        for j in 0..particles.len() {
            if !particles.alive[j] {
                continue;
            }
            match self.dims.cell_of(&particles.x[j]) {
                Some(c) => self.gamma[c].push(j),
                None => return integrity(format!("particle {j} at {:?} left the grid", particles.x[j])),
            }
        }
        Ok(())
    }

    /// Recomputes markings from `gamma`. `obstacle` flags cells occupied by
    /// movable solids; `extra_fluid` flags particle-free cells that still hold
    /// fluid represented on the grid (deep band cells).
    pub fn classify(&mut self, obstacle: &[bool], extra_fluid: Option<&[bool]>) -> Result<()> {
        let n = self.len();
        for c in 0..n {
            let solid = self.boundary[c] || obstacle[c];
            self.marking[c] = if solid {
                if !self.gamma[c].is_empty() {
                    return integrity(format!(
                        "cell {:?} is solid but holds {} particle(s)",
                        self.dims.coords(c),
                        self.gamma[c].len()
                    ));
                }
                Marking::Solid
            } else if !self.gamma[c].is_empty() || extra_fluid.is_some_and(|e| e[c]) {
                Marking::Inner
            } else {
                Marking::Empty
            };
        }
        let moore = self.dims.moore_offsets();
        for c in 0..n {
            if self.marking[c] != Marking::Inner {
                continue;
            }
            let exposed = moore.iter().any(|&o| match self.dims.offset(c, o) {
                Some(nb) => !self.marking[nb].is_fluid() && !self.boundary[nb],
                None => false,
            });
            if exposed {
                self.marking[c] = Marking::Surface;
            }
        }
        Ok(())
    }

    /// Breadth-first depth from the surface over von Neumann fluid adjacency.
    pub fn assign_depth(&mut self) {
        let n = self.len();
        let mut depth = vec![i32::MIN; n];
        let mut queue = VecDeque::new();
        let mut any_fluid = false;
        for c in 0..n {
            match self.marking[c] {
                Marking::Surface => {
                    depth[c] = 0;
                    queue.push_back(c);
                    any_fluid = true;
                }
                Marking::Inner => any_fluid = true,
                _ => depth[c] = 1,
            }
        }
        if any_fluid && queue.is_empty() {
            self.warnings
                .push("no surface cell: every fluid cell treated as depth -1".to_string());
            for c in 0..n {
                if depth[c] == i32::MIN {
                    depth[c] = -1;
                }
            }
        }
        let offs = self.dims.axis_offsets();
        while let Some(c) = queue.pop_front() {
            for &o in &offs {
                if let Some(nb) = self.dims.offset(c, o) {
                    if depth[nb] == i32::MIN {
                        depth[nb] = depth[c] - 1;
                        queue.push_back(nb);
                    }
                }
            }
        }
        // Fluid pockets cut off from every surface cell.
        for d in depth.iter_mut() {
            if *d == i32::MIN {
                *d = -1;
            }
        }
        self.depth = depth;
    }

    /// Distance of each prospective solid cell from a cell it could shed
    /// particles into. Cells with no escape receive `unreachable_clear_dist`.
    pub fn clearing_distance(&self, new_solid: &[CellIndex]) -> BTreeMap<CellIndex, u32> {
        let mut dist = BTreeMap::new();
        if new_solid.is_empty() {
            return dist;
        }
        let mut member = vec![false; self.len()];
        for &c in new_solid {
            member[c] = true;
        }
        let offs = self.dims.axis_offsets();
        let mut queue = VecDeque::new();
        for &c in new_solid {
            let open = offs.iter().any(|&o| {
                self.dims
                    .offset(c, o)
                    .is_some_and(|nb| !member[nb] && self.marking[nb] != Marking::Solid)
            });
            if open && !dist.contains_key(&c) {
                dist.insert(c, 1);
                queue.push_back(c);
            }
        }
        while let Some(c) = queue.pop_front() {
            let dc = dist[&c];
            for &o in &offs {
                if let Some(nb) = self.dims.offset(c, o) {
                    if member[nb] && !dist.contains_key(&nb) {
                        dist.insert(nb, dc + 1);
                        queue.push_back(nb);
                    }
                }
            }
        }
        let sentinel = unreachable_clear_dist(new_solid.len());
        for &c in new_solid {
            dist.entry(c).or_insert(sentinel);
        }
        dist
    }

    pub fn cell_volume(&self, cell: CellIndex, mu: usize) -> f64 {
        if self.marking[cell] == Marking::Solid {
            return 0.0;
        }
        let b = self.depth[cell];
        if b > 0 {
            0.0
        } else if b >= -1 {
            (self.gamma[cell].len() as f64 / mu as f64).min(1.0)
        } else {
            1.0
        }
    }

    pub fn volume_report(&self, mu: usize, v_star: f64, per_cell: bool) -> Result<VolumeReport> {
        if !(v_star > 0.0) {
            return input(format!("expected volume must be positive, got {v_star}"));
        }
        if mu == 0 {
            return input("mu must be at least 1");
        }
        let cells: Vec<f64> = (0..self.len()).map(|c| self.cell_volume(c, mu)).collect();
        let v: f64 = cells.iter().sum();
        let alt_v: f64 = self.gamma.iter().map(|g| (g.len() as f64 / mu as f64).min(1.0)).sum();
        Ok(VolumeReport {
            v,
            v_star,
            percent: 100.0 * v / v_star,
            alt_v,
            alt_percent: 100.0 * alt_v / v_star,
            per_cell: per_cell.then_some(cells),
        })
    }

    /// Stores the current markings, depths and counts as the previous state.
    pub fn snapshot(&mut self) {
        self.prev = Snapshot {
            marking: self.marking.clone(),
            depth: self.depth.clone(),
            count: self.gamma.iter().map(|g| g.len()).collect(),
        };
    }

    /// One byte per cell, row-major with x fastest.
    pub fn raster_codes(&self, obstacle: &[bool], band_r: Option<i32>) -> Vec<u8> {
        (0..self.len())
            .map(|c| match self.marking[c] {
                Marking::Empty => code::EMPTY,
                Marking::Solid if obstacle[c] && !self.boundary[c] => code::OBSTACLE,
                Marking::Solid => code::WALL,
                Marking::Surface => code::SURFACE,
                Marking::Inner => match band_r {
                    Some(r) if self.depth[c] < -r => code::DEEP,
                    Some(r) if self.depth[c] == -r => code::BAND_INTERFACE,
                    Some(_) => code::IN_BAND,
                    None => code::INNER,
                },
            })
            .collect()
    }
}

/// Clearing distance assigned to prospective solid cells with no escape.
pub fn unreachable_clear_dist(new_solid_len: usize) -> u32 {
    new_solid_len as u32 + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(nx: usize, ny: usize, fluid: &[(usize, usize, usize)]) -> CellGrid {
        let dims = Dims::new2(nx, ny).unwrap();
        let mut g = CellGrid::tank(dims, 1.0);
        let mut ps = ParticleSet::new();
        for &(x, y, k) in fluid {
            for q in 0..k {
                let off = 0.1 + 0.8 * (q as f64 + 0.5) / k as f64;
                ps.push([x as f64 + off, y as f64 + 0.5, 0.5], [0.0; 3]);
            }
        }
        g.rebuild_gamma(&ps).unwrap();
        g.classify(&vec![false; g.len()], None).unwrap();
        g.assign_depth();
        g
    }

    #[test]
    fn neighborhood_sizes() {
        let g = CellGrid::tank(Dims::new2(6, 6).unwrap(), 1.0);
        let c = g.dims.index([2, 2, 0]);
        assert_eq!(g.neighbors(c, NeighborhoodKind::VonNeumann).unwrap().len(), 4);
        assert_eq!(g.neighbors(c, NeighborhoodKind::Moore).unwrap().len(), 8);
        assert_eq!(g.neighbors(0, NeighborhoodKind::Moore).unwrap().len(), 3);
        assert!(g.neighbors(36, NeighborhoodKind::Moore).is_err());
        let g3 = CellGrid::tank(Dims::new3(5, 5, 5).unwrap(), 1.0);
        let c3 = g3.dims.index([2, 2, 2]);
        assert_eq!(g3.neighbors(c3, NeighborhoodKind::VonNeumann).unwrap().len(), 6);
        assert_eq!(g3.neighbors(c3, NeighborhoodKind::Moore).unwrap().len(), 26);
    }

    #[test]
    fn empty_tank_classification() {
        let g = grid_with(6, 6, &[]);
        for c in 0..g.len() {
            let expect = if g.boundary[c] { Marking::Solid } else { Marking::Empty };
            assert_eq!(g.marking[c], expect);
        }
    }

    #[test]
    fn lone_particle_is_surface() {
        let g = grid_with(6, 6, &[(3, 3, 1)]);
        let c = g.dims.index([3, 3, 0]);
        assert_eq!(g.marking[c], Marking::Surface);
        assert_eq!(g.depth[c], 0);
        assert_eq!(g.depth[g.dims.index([2, 2, 0])], 1);
    }

    #[test]
    fn bottom_block_only_top_row_is_surface() {
        // 8x8 tank, interior 6x6; fluid fills interior rows y=1..=4.
        let mut cells = Vec::new();
        for x in 1..=6 {
            for y in 1..=4 {
                cells.push((x, y, 4));
            }
        }
        let g = grid_with(8, 8, &cells);
        for x in 1..=6 {
            for y in 1..=4 {
                let m = g.marking[g.dims.index([x, y, 0])];
                if y == 4 {
                    assert_eq!(m, Marking::Surface, "({x},{y})");
                } else {
                    assert_eq!(m, Marking::Inner, "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn depth_decreases_down_a_column() {
        // Interior 4 wide, rows 1..=4 fluid, row 5..6 empty.
        let mut cells = Vec::new();
        for x in 1..=4 {
            for y in 1..=4 {
                cells.push((x, y, 1));
            }
        }
        let g = grid_with(6, 8, &cells);
        for x in 1..=4 {
            let col: Vec<i32> = (1..=4).map(|y| g.depth[g.dims.index([x, y, 0])]).collect();
            assert_eq!(col, vec![-3, -2, -1, 0]);
        }
        assert_eq!(g.depth[g.dims.index([2, 5, 0])], 1);
    }

    #[test]
    fn sealed_tank_falls_back_to_inner_depth() {
        let mut cells = Vec::new();
        for x in 1..=3 {
            for y in 1..=3 {
                cells.push((x, y, 1));
            }
        }
        let g = grid_with(5, 5, &cells);
        assert!(g.warnings.iter().any(|w| w.contains("no surface")));
        assert!((1..=3).all(|y| g.depth[g.dims.index([2, y, 0])] == -1));
    }

    #[test]
    fn clearing_distance_cases() {
        let g = grid_with(8, 6, &[]);
        // Row above open floor cells: all reach a free cell directly below.
        let row: Vec<_> = (2..=4).map(|x| g.dims.index([x, 3, 0])).collect();
        let d = g.clearing_distance(&row);
        assert!(row.iter().all(|c| d[c] == 1));

        // Row pinned to the floor under an obstacle, open only at the right
        // end: mark the row above it solid so only the right side escapes.
        let dims = Dims::new2(6, 4).unwrap();
        let mut g2 = CellGrid::tank(dims, 1.0);
        let mut obst = vec![false; g2.len()];
        for x in 1..=3 {
            obst[dims.index([x, 2, 0])] = true;
        }
        g2.classify(&obst, None).unwrap();
        // The cell left of the row is a wall, the cell right of it is open.
        let row: Vec<_> = (1..=3).map(|x| dims.index([x, 1, 0])).collect();
        let d = g2.clearing_distance(&row);
        assert_eq!(row.iter().map(|c| d[c]).collect::<Vec<_>>(), vec![3, 2, 1]);

        assert!(g.clearing_distance(&[]).is_empty());
    }

    #[test]
    fn walled_in_cells_get_sentinel() {
        let dims = Dims::new2(5, 4).unwrap();
        let mut g = CellGrid::tank(dims, 1.0);
        let mut obst = vec![false; g.len()];
        for x in 1..=3 {
            obst[dims.index([x, 2, 0])] = true;
        }
        g.classify(&obst, None).unwrap();
        let row: Vec<_> = (1..=3).map(|x| dims.index([x, 1, 0])).collect();
        let d = g.clearing_distance(&row);
        assert!(row.iter().all(|c| d[c] == unreachable_clear_dist(3)));
    }

    #[test]
    fn cell_volume_cases() {
        // Fluid rows 1..=5 in a 8x9 tank: depths 0, -1, -2, -3, -4 from top.
        let mut cells = Vec::new();
        for x in 1..=6 {
            for y in 1..=5 {
                let k = if (x, y) == (3, 2) { 2 } else { 4 };
                cells.push((x, y, k));
            }
        }
        cells.push((1, 7, 0));
        let mut g = grid_with(8, 9, &cells);
        assert_eq!(g.cell_volume(g.dims.index([2, 7, 0]), 4), 0.0);
        // A surface cell with 2 of 4 particles.
        let top = g.dims.index([3, 5, 0]);
        g.gamma[top].truncate(2);
        assert_eq!(g.depth[top], 0);
        assert_eq!(g.cell_volume(top, 4), 0.5);
        let inner = g.dims.index([3, 2, 0]);
        assert_eq!(g.depth[inner], -3);
        assert_eq!(g.cell_volume(inner, 4), 1.0);
        assert_eq!(g.cell_volume(0, 4), 0.0);
    }

    #[test]
    fn volume_report_bubble_vs_alt_measure() {
        // 10x10 interior fluid in a 12x14 tank: 100 cells, one bubble at
        // depth -2 with 3 of 4 particles.
        let mut cells = Vec::new();
        for x in 1..=10 {
            for y in 1..=10 {
                let k = if (x, y) == (5, 8) { 3 } else { 4 };
                cells.push((x, y, k));
            }
        }
        let g = grid_with(12, 14, &cells);
        assert_eq!(g.depth[g.dims.index([5, 8, 0])], -2);
        let r = g.volume_report(4, 100.0, true).unwrap();
        assert_eq!(r.percent, 100.0);
        assert_eq!(r.alt_percent, 99.75);
        let sum: f64 = r.per_cell.as_ref().unwrap().iter().sum();
        assert!((sum - r.v).abs() < 1e-9);
        assert!(g.volume_report(4, 0.0, false).is_err());
    }

    #[test]
    fn particle_in_solid_lowers_volume() {
        let mut cells = Vec::new();
        for x in 1..=4 {
            cells.push((x, 1, 4));
        }
        let mut g = grid_with(6, 6, &cells);
        let full = g.volume_report(4, 4.0, false).unwrap();
        assert_eq!(full.percent, 100.0);
        g.marking[g.dims.index([2, 1, 0])] = Marking::Solid;
        let r = g.volume_report(4, 4.0, false).unwrap();
        assert!(r.percent < 100.0);
    }

    #[test]
    fn solid_with_particle_is_an_integrity_error() {
        let mut g = grid_with(6, 6, &[(2, 2, 1)]);
        let mut obst = vec![false; g.len()];
        obst[g.dims.index([2, 2, 0])] = true;
        assert!(matches!(g.classify(&obst, None), Err(crate::Error::Integrity(_))));
    }
}
