//! Standard FLIP/PIC machinery on a staggered (MAC) grid.

use crate::correction::{phi_close, EPS};
use crate::error::{Error, Result};
use crate::grid::{CellGrid, CellIndex, Dims, Marking};
use crate::particles::{ParticleSet, Vec3};

pub type FaceField = [Vec<f64>; 3];

#[derive(Clone, Debug)]
pub struct MacGrid {
    pub dims: Dims,
    /// `u[a]` holds the axis-`a` velocity component on the lower axis-`a`
    /// face of each cell, with one extra layer along `a`.
    pub u: FaceField,
    pub p: Vec<f64>,
    pub div: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PressureStats {
    pub iterations: usize,
    pub residual: f64,
    pub max_div_before: f64,
    pub max_div_after: f64,
}

pub fn face_dims(dims: &Dims, a: usize) -> [usize; 3] {
    let mut f = dims.n;
    f[a] += 1;
    f
}

#[inline]
fn fidx(fd: &[usize; 3], c: [usize; 3]) -> usize {
    c[0] + fd[0] * (c[1] + fd[1] * c[2])
}

#[inline]
fn fcoords(fd: &[usize; 3], i: usize) -> [usize; 3] {
    let x = i % fd[0];
    let r = i / fd[0];
    [x, r % fd[1], r / fd[1]]
}

/// Multilinear stencil for component `a` at `p`: up to 8 (index, weight) pairs.
fn stencil(dims: &Dims, a: usize, p: &Vec3) -> ([usize; 8], [f64; 8], usize) {
    let fd = face_dims(dims, a);
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for b in 0..dims.d {
        let s = if b == a { p[b] } else { p[b] - 0.5 };
        let hi = (fd[b] - 1) as f64;
        let s = s.clamp(0.0, hi);
        let i = (s.floor() as usize).min(fd[b].saturating_sub(2));
        base[b] = i;
        frac[b] = s - i as f64;
    }
    let corners = 1usize << dims.d;
    let mut idx = [0usize; 8];
    let mut w = [0.0f64; 8];
    for k in 0..corners {
        let mut c = base;
        let mut wk = 1.0;
        for b in 0..dims.d {
            if (k >> b) & 1 == 1 {
                c[b] += 1;
                wk *= frac[b];
            } else {
                wk *= 1.0 - frac[b];
            }
        }
        idx[k] = fidx(&fd, c);
        w[k] = wk;
    }
    (idx, w, corners)
}

pub fn sample_component(dims: &Dims, a: usize, field: &[f64], p: &Vec3) -> f64 {
    let (idx, w, k) = stencil(dims, a, p);
    (0..k).map(|q| field[idx[q]] * w[q]).sum()
}

pub fn sample_velocity(dims: &Dims, field: &FaceField, p: &Vec3) -> Vec3 {
    let mut v = [0.0; 3];
    for a in 0..dims.d {
        v[a] = sample_component(dims, a, &field[a], p);
    }
    v
}

fn clamp_norm(v: &mut Vec3, max: f64) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n > max && n > 0.0 {
        let s = max / n;
        for c in v.iter_mut() {
            *c *= s;
        }
    }
}

impl MacGrid {
    pub fn new(dims: Dims) -> Self {
        let mut u: FaceField = Default::default();
        for (a, ua) in u.iter_mut().enumerate().take(dims.d) {
            let fd = face_dims(&dims, a);
            *ua = vec![0.0; fd[0] * fd[1] * fd[2]];
        }
        Self {
            dims,
            u,
            p: vec![0.0; dims.len()],
            div: vec![0.0; dims.len()],
        }
    }

    /// The (lower, upper) cells sharing face `f` of axis `a`.
    pub fn face_cells(&self, a: usize, f: usize) -> (Option<CellIndex>, Option<CellIndex>) {
        let fd = face_dims(&self.dims, a);
        let c = fcoords(&fd, f);
        let upper = (c[a] < self.dims.n[a]).then(|| self.dims.index(c));
        let lower = (c[a] > 0).then(|| {
            let mut l = c;
            l[a] -= 1;
            self.dims.index(l)
        });
        (lower, upper)
    }

    /// World position of face `f` of axis `a`.
    pub fn face_pos(&self, a: usize, f: usize) -> Vec3 {
        let fd = face_dims(&self.dims, a);
        let c = fcoords(&fd, f);
        let mut p = [0.5; 3];
        for b in 0..self.dims.d {
            p[b] = c[b] as f64 + if b == a { 0.0 } else { 0.5 };
        }
        p
    }

    /// Index of the lower axis-`a` face of cell `c` (upper face when `upper`).
    pub fn cell_face(&self, a: usize, c: CellIndex, upper: bool) -> usize {
        let fd = face_dims(&self.dims, a);
        let mut cc = self.dims.coords(c);
        if upper {
            cc[a] += 1;
        }
        fidx(&fd, cc)
    }

    pub fn velocity(&self, p: &Vec3) -> Vec3 {
        sample_velocity(&self.dims, &self.u, p)
    }

    fn face_touches_fluid(&self, cells: &CellGrid, a: usize, f: usize) -> bool {
        let (l, u) = self.face_cells(a, f);
        l.is_some_and(|c| cells.is_fluid(c)) || u.is_some_and(|c| cells.is_fluid(c))
    }

    fn face_touches_solid(&self, cells: &CellGrid, a: usize, f: usize) -> Option<CellIndex> {
        let (l, u) = self.face_cells(a, f);
        [l, u]
            .into_iter()
            .flatten()
            .find(|&c| cells.marking[c] == Marking::Solid)
    }

    /// Particle-to-grid velocity transfer with a multilinear hat kernel.
    /// Faces with zero total weight keep their value. With `band_r`, faces
    /// next to band-interface or deep cells keep their value as well.
    pub fn transfer_p2g(&mut self, particles: &ParticleSet, cells: &CellGrid, band_r: Option<i32>) {
        let dims = self.dims;
        for a in 0..dims.d {
            let len = self.u[a].len();
            let mut num = vec![0.0; len];
            let mut den = vec![0.0; len];
            for j in 0..particles.len() {
                if !particles.alive[j] {
                    continue;
                }
                let (idx, w, k) = stencil(&dims, a, &particles.x[j]);
                for q in 0..k {
                    num[idx[q]] += w[q] * particles.vel[j][a];
                    den[idx[q]] += w[q];
                }
            }
            for f in 0..len {
                if den[f] <= 1e-12 {
                    continue;
                }
                if let Some(r) = band_r {
                    let (l, u) = self.face_cells(a, f);
                    let below_band = [l, u]
                        .into_iter()
                        .flatten()
                        .any(|c| cells.is_fluid(c) && cells.depth[c] <= -r);
                    if below_band {
                        continue;
                    }
                }
                self.u[a][f] = num[f] / den[f];
            }
        }
    }

    pub fn apply_forces(&mut self, cells: &CellGrid, gravity: Vec3, dt: f64) {
        for a in 0..self.dims.d {
            if gravity[a] == 0.0 {
                continue;
            }
            for f in 0..self.u[a].len() {
                if self.face_touches_fluid(cells, a, f) {
                    self.u[a][f] += gravity[a] * dt;
                }
            }
        }
    }

    /// Sets every face touching a solid cell to that solid's normal velocity.
    /// `solid_vel` is indexed by cell; walls carry zero.
    pub fn enforce_solid_faces(&mut self, cells: &CellGrid, solid_vel: &[Vec3]) {
        for a in 0..self.dims.d {
            for f in 0..self.u[a].len() {
                if let Some(s) = self.face_touches_solid(cells, a, f) {
                    self.u[a][f] = solid_vel[s][a];
                }
            }
        }
    }

    pub fn compute_divergence(&mut self, cells: &CellGrid) -> f64 {
        let mut max = 0.0f64;
        for c in 0..self.dims.len() {
            if !cells.is_fluid(c) {
                self.div[c] = 0.0;
                continue;
            }
            let mut s = 0.0;
            for a in 0..self.dims.d {
                s += self.u[a][self.cell_face(a, c, true)] - self.u[a][self.cell_face(a, c, false)];
            }
            self.div[c] = s;
            max = max.max(s.abs());
        }
        max
    }

    /// Pressure projection with free-surface (p = 0 in empty cells) and
    /// solid (prescribed normal velocity) boundary conditions, solved with
    /// Jacobi-preconditioned conjugate gradients.
    pub fn solve_pressure(
        &mut self,
        cells: &CellGrid,
        solid_vel: &[Vec3],
        dt: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<PressureStats> {
        self.enforce_solid_faces(cells, solid_vel);
        let max_div_before = self.compute_divergence(cells);
        let dims = self.dims;
        let offs = dims.axis_offsets();

        let mut slot = vec![usize::MAX; dims.len()];
        let fluid: Vec<CellIndex> = (0..dims.len()).filter(|&c| cells.is_fluid(c)).collect();
        for (k, &c) in fluid.iter().enumerate() {
            slot[c] = k;
        }
        let nf = fluid.len();
        let mut diag = vec![0.0; nf];
        let mut nbrs: Vec<[usize; 6]> = vec![[usize::MAX; 6]; nf];
        let mut dirichlet = vec![false; nf];
        for (k, &c) in fluid.iter().enumerate() {
            for (q, &o) in offs.iter().enumerate() {
                let Some(nb) = dims.offset(c, o) else { continue };
                match cells.marking[nb] {
                    Marking::Solid => {}
                    Marking::Empty => {
                        diag[k] += 1.0;
                        dirichlet[k] = true;
                    }
                    _ => {
                        diag[k] += 1.0;
                        nbrs[k][q] = slot[nb];
                    }
                }
            }
        }

        // Connected components that touch no empty cell have a constant null
        // space; their right-hand side and residual are kept mean-free.
        let mut comp = vec![usize::MAX; nf];
        let mut floating: Vec<Vec<usize>> = Vec::new();
        for s in 0..nf {
            if comp[s] != usize::MAX {
                continue;
            }
            let id = s;
            let mut members = vec![s];
            comp[s] = id;
            let mut head = 0;
            let mut open = dirichlet[s];
            while head < members.len() {
                let k = members[head];
                head += 1;
                for &nb in nbrs[k].iter().filter(|&&nb| nb != usize::MAX) {
                    if comp[nb] == usize::MAX {
                        comp[nb] = id;
                        open |= dirichlet[nb];
                        members.push(nb);
                    }
                }
            }
            if !open {
                floating.push(members);
            }
        }
        let demean = |v: &mut [f64]| {
            for m in &floating {
                let mean = m.iter().map(|&k| v[k]).sum::<f64>() / m.len() as f64;
                for &k in m {
                    v[k] -= mean;
                }
            }
        };

        let mut b: Vec<f64> = fluid.iter().map(|&c| -self.div[c]).collect();
        demean(&mut b);
        let apply = |x: &[f64], out: &mut [f64]| {
            for k in 0..nf {
                let mut s = diag[k] * x[k];
                for &nb in nbrs[k].iter().filter(|&&nb| nb != usize::MAX) {
                    s -= x[nb];
                }
                out[k] = s;
            }
        };
        let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut x = vec![0.0; nf];
        let mut iterations = 0;
        let mut residual = bnorm;
        if bnorm > 1e-14 && nf > 0 {
            let target = tol * bnorm;
            let inv_diag: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
            let mut r = b.clone();
            let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
            demean(&mut z);
            let mut s = z.clone();
            let mut q = vec![0.0; nf];
            let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            while iterations < max_iter {
                apply(&s, &mut q);
                let sq: f64 = s.iter().zip(&q).map(|(a, b)| a * b).sum();
                if sq.abs() < 1e-300 {
                    break;
                }
                let alpha = rz / sq;
                for k in 0..nf {
                    x[k] += alpha * s[k];
                    r[k] -= alpha * q[k];
                }
                demean(&mut r);
                iterations += 1;
                residual = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if residual <= target {
                    break;
                }
                for k in 0..nf {
                    z[k] = r[k] * inv_diag[k];
                }
                demean(&mut z);
                let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
                let beta = rz_new / rz;
                rz = rz_new;
                for k in 0..nf {
                    s[k] = z[k] + beta * s[k];
                }
            }
            if residual > target {
                return Err(Error::Solver { iterations, residual });
            }
        }

        self.p.iter_mut().for_each(|p| *p = 0.0);
        for (k, &c) in fluid.iter().enumerate() {
            self.p[c] = x[k] / dt;
        }
        for a in 0..dims.d {
            for f in 0..self.u[a].len() {
                let (l, u) = self.face_cells(a, f);
                let (Some(l), Some(u)) = (l, u) else { continue };
                let (ml, mu) = (cells.marking[l], cells.marking[u]);
                if ml == Marking::Solid || mu == Marking::Solid {
                    continue;
                }
                if !ml.is_fluid() && !mu.is_fluid() {
                    continue;
                }
                let pl = if slot[l] != usize::MAX { x[slot[l]] } else { 0.0 };
                let pu = if slot[u] != usize::MAX { x[slot[u]] } else { 0.0 };
                self.u[a][f] -= pu - pl;
            }
        }
        let max_div_after = self.compute_divergence(cells);
        Ok(PressureStats {
            iterations,
            residual,
            max_div_before,
            max_div_after,
        })
    }

    /// Fills faces that touch no fluid cell with the average of already known
    /// neighboring faces, `layers` rings deep.
    pub fn extrapolate(&mut self, cells: &CellGrid, layers: usize) {
        let dims = self.dims;
        let offs = dims.axis_offsets();
        for a in 0..dims.d {
            let fd = face_dims(&dims, a);
            let len = self.u[a].len();
            let mut known: Vec<bool> = (0..len).map(|f| self.face_touches_fluid(cells, a, f)).collect();
            let fixed: Vec<bool> = (0..len)
                .map(|f| self.face_touches_solid(cells, a, f).is_some())
                .collect();
            for _ in 0..layers {
                let mut next = known.clone();
                let mut vals = self.u[a].clone();
                for f in 0..len {
                    if known[f] || fixed[f] {
                        continue;
                    }
                    let c = fcoords(&fd, f);
                    let (mut s, mut n) = (0.0, 0);
                    for o in &offs {
                        let mut nc = [0usize; 3];
                        let mut ok = true;
                        for b in 0..3 {
                            let v = c[b] as i64 + o[b] as i64;
                            if v < 0 || v >= fd[b] as i64 {
                                ok = false;
                                break;
                            }
                            nc[b] = v as usize;
                        }
                        if ok {
                            let g = fidx(&fd, nc);
                            if known[g] {
                                s += self.u[a][g];
                                n += 1;
                            }
                        }
                    }
                    if n > 0 {
                        vals[f] = s / n as f64;
                        next[f] = true;
                    }
                }
                self.u[a] = vals;
                known = next;
            }
        }
    }

    /// Particle velocity update blending the FLIP increment with the PIC value.
    /// `before` is the grid velocity right after the particle-to-grid transfer.
    pub fn transfer_g2p(&self, before: &FaceField, particles: &mut ParticleSet, flip_ratio: f64, max_speed: f64) {
        let dims = self.dims;
        for j in 0..particles.len() {
            if !particles.alive[j] {
                continue;
            }
            let p = particles.x[j];
            let new = self.velocity(&p);
            let old = sample_velocity(&dims, before, &p);
            let mut v = [0.0; 3];
            for a in 0..dims.d {
                let flip = particles.vel[j][a] + new[a] - old[a];
                v[a] = flip_ratio * flip + (1.0 - flip_ratio) * new[a];
            }
            clamp_norm(&mut v, max_speed);
            particles.vel[j] = v;
        }
    }

    /// RK2 midpoint advection from `x_prev` into `x_ideal`, clamped so the
    /// ideal position stays in a non-wall cell within the Moore neighborhood
    /// of the previous cell.
    pub fn advect_particles(&self, cells: &CellGrid, particles: &mut ParticleSet, dt: f64, max_speed: f64) {
        let dims = self.dims;
        for j in 0..particles.len() {
            if !particles.alive[j] {
                continue;
            }
            let x0 = particles.x_prev[j];
            let mut v0 = self.velocity(&x0);
            clamp_norm(&mut v0, max_speed);
            let mut mid = x0;
            for a in 0..dims.d {
                mid[a] += 0.5 * dt * v0[a];
            }
            let mut v1 = self.velocity(&mid);
            clamp_norm(&mut v1, max_speed);
            let mut xh = x0;
            for a in 0..dims.d {
                xh[a] += dt * v1[a];
            }
            particles.x_ideal[j] = clamp_to_moore(cells, &x0, xh);
        }
    }

    /// Semi-Lagrangian advection of the face velocities next to
    /// band-interface and deep cells.
    pub fn advect_grid_velocity(&mut self, cells: &CellGrid, band_r: i32, dt: f64) {
        let old = self.u.clone();
        for a in 0..self.dims.d {
            for f in 0..self.u[a].len() {
                let (l, u) = self.face_cells(a, f);
                let outside_band = [l, u]
                    .into_iter()
                    .flatten()
                    .any(|c| cells.is_fluid(c) && cells.depth[c] <= -band_r);
                if !outside_band {
                    continue;
                }
                let p = self.face_pos(a, f);
                let v = sample_velocity(&self.dims, &old, &p);
                let mut back = p;
                for b in 0..self.dims.d {
                    back[b] -= dt * v[b];
                }
                self.u[a][f] = sample_component(&self.dims, a, &old[a], &back);
            }
        }
    }

    /// Largest axis speed over faces touching fluid, capped at `max_speed`.
    pub fn max_fluid_speed(&self, cells: &CellGrid, max_speed: f64) -> f64 {
        let mut m = 0.0f64;
        for a in 0..self.dims.d {
            for f in 0..self.u[a].len() {
                if self.face_touches_fluid(cells, a, f) {
                    m = m.max(self.u[a][f].abs());
                }
            }
        }
        m.min(max_speed)
    }
}

/// Largest step that moves neither fluid nor obstacle by more than one cell.
pub fn clamp_dt(fluid_speed: f64, obstacle_speed: f64, dt_request: f64) -> f64 {
    let s = fluid_speed.max(obstacle_speed);
    if s * dt_request <= 1.0 {
        dt_request
    } else {
        1.0 / s
    }
}

/// Clamps `to` into the Moore neighborhood of cell(`from`), away from walls.
pub fn clamp_to_moore(cells: &CellGrid, from: &Vec3, mut to: Vec3) -> Vec3 {
    let dims = &cells.dims;
    let Some(c0) = dims.cell_of(from) else { return *from };
    let cc = dims.coords(c0);
    for a in 0..dims.d {
        let lo = cc[a] as f64 - 1.0 + EPS;
        let hi = cc[a] as f64 + 2.0 - EPS;
        to[a] = to[a].clamp(lo, hi);
    }
    if let Some(c) = dims.cell_of(&to) {
        if !cells.boundary[c] {
            return to;
        }
    }
    let mut best = (f64::INFINITY, *from);
    let mut cands = vec![c0];
    cands.extend(dims.moore_offsets().into_iter().filter_map(|o| dims.offset(c0, o)));
    for c in cands {
        if cells.boundary[c] {
            continue;
        }
        let p = phi_close(dims, &to, c);
        let d = crate::particles::sq_dist(&p, &to);
        if d < best.0 {
            best = (d, p);
        }
    }
    best.1
}
