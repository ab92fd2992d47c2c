//! The simulation driver: one FLIP step with particle correction, or one
//! band-method step, repeated in substeps until a frame's time is used up.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::band::{correct_band, maintain_band, BandState};
use crate::correction::{
    apply_solution, build_candidates, build_problem, direction_set, CorrectionProblem, DirectionSet, EPS,
};
use crate::error::{integrity, Result};
use crate::flip::{clamp_dt, MacGrid};
use crate::grid::{CellGrid, CellIndex, Dims, Marking, VolumeReport};
use crate::particles::{ParticleSet, Vec3};
use crate::scene::{EmitterConfig, SceneConfig};
use crate::solids::{solid_velocity_field, MotionProposal, Obstacle, SolidObjective};
use crate::solvers::solve_flow;

/// Extrapolation depth of fluid velocities into air, in faces.
const EXTRAPOLATION_LAYERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Transfer,
    Forces,
    Pressure,
    GridToParticle,
    GridAdvect,
    Advect,
    Correct,
    Markings,
    BandMaintain,
    Emit,
}

/// Order of a FLIP step with correction.
pub const FLIP_STAGES: [Stage; 7] = [
    Stage::Transfer,
    Stage::Forces,
    Stage::Pressure,
    Stage::GridToParticle,
    Stage::Advect,
    Stage::Correct,
    Stage::Markings,
];

/// Order of a band-method step.
pub const BAND_STAGES: [Stage; 9] = [
    Stage::Transfer,
    Stage::Forces,
    Stage::Pressure,
    Stage::GridToParticle,
    Stage::GridAdvect,
    Stage::Advect,
    Stage::Correct,
    Stage::Markings,
    Stage::BandMaintain,
];

/// Invariant violations counted over a frame's substeps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepChecks {
    /// Non-solid cells above μ plus solid cells holding particles.
    pub capacity_violations: usize,
    /// Particles inside an obstacle.
    pub solid_overlaps: usize,
    /// Corrected cells farther than one von Neumann step from the previous cell.
    pub locality_violations: usize,
    /// Ideal cells farther than one Chebyshev step from the previous cell.
    pub ideal_locality_violations: usize,
    /// Fluid cells below depth −1 holding more than μ particles.
    pub inner_overfull: usize,
    /// Steps whose volume percent fell below 100 minus the surface slack.
    pub volume_floor_violations: usize,
    /// Largest |alt volume − V*| seen.
    pub alt_volume_error: f64,
    /// Band steps ending with a negative slack or negative n_deep.
    pub band_violations: usize,
    /// Changes of live + n_deep not explained by emission.
    pub conservation_violations: usize,
}

impl StepChecks {
    pub fn clean(&self) -> bool {
        self.capacity_violations == 0
            && self.solid_overlaps == 0
            && self.locality_violations == 0
            && self.ideal_locality_violations == 0
            && self.inner_overfull == 0
            && self.volume_floor_violations == 0
            && self.band_violations == 0
            && self.conservation_violations == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BandFrameStats {
    pub n_deep: i64,
    pub n_excess: i64,
    pub n_move: usize,
    pub paths: usize,
    pub find_calls: usize,
    pub min_s_in: i64,
    pub min_s_out: i64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverFrameStats {
    pub pressure_iterations: usize,
    pub pressure_residual: f64,
    pub flow_iterations: usize,
    pub objective: f64,
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub time: f64,
    pub substeps: usize,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub raster: Vec<u8>,
    pub volume: VolumeReport,
    pub band: Option<BandFrameStats>,
    pub solver: SolverFrameStats,
    pub checks: StepChecks,
    /// Lower corner of each obstacle.
    pub obstacles: Vec<Vec3>,
    pub emitted: u64,
}

#[derive(Clone, Debug)]
struct EmitterState {
    cfg: EmitterConfig,
    emitted: u64,
}

impl EmitterState {
    fn target(&self, t: f64) -> u64 {
        let total = self.cfg.total();
        if t < self.cfg.start {
            0
        } else if t >= self.cfg.start + self.cfg.duration {
            total
        } else {
            ((self.cfg.rate * (t - self.cfg.start) + 1e-9).floor() as u64).min(total)
        }
    }
}

pub struct Sim {
    pub config: SceneConfig,
    pub grid: CellGrid,
    pub mac: MacGrid,
    pub particles: ParticleSet,
    pub obstacles: Vec<Obstacle>,
    pub band: Option<BandState>,
    pub v_star: f64,
    pub time: f64,
    pub frame: usize,
    pub substeps: usize,
    pub emitted: u64,
    /// Stages executed by the last substep.
    pub trace: Vec<Stage>,
    /// Problem of the last correction, kept when `keep_problem` is set.
    pub last_problem: Option<CorrectionProblem>,
    pub keep_problem: bool,
    gravity: Vec3,
    dirs: DirectionSet,
    emitters: Vec<EmitterState>,
    rng: ChaCha8Rng,
}

fn vec3(v: &[f64]) -> Vec3 {
    let mut out = [0.0; 3];
    out[..v.len()].copy_from_slice(v);
    out
}

fn random_in_cell(dims: &Dims, c: CellIndex, rng: &mut ChaCha8Rng) -> Vec3 {
    let lo = dims.coords(c);
    let mut p = [0.5; 3];
    for a in 0..dims.d {
        p[a] = lo[a] as f64 + rng.gen_range(EPS..1.0 - EPS);
    }
    p
}

/// μ jittered positions per cell: stratified when μ is a perfect power of
/// the dimension, uniform otherwise.
fn seed_cell(dims: &Dims, c: CellIndex, mu: u32, rng: &mut ChaCha8Rng, out: &mut ParticleSet) {
    let d = dims.d as u32;
    let k = (mu as f64).powf(1.0 / d as f64).round() as u32;
    if k.pow(d) != mu {
        for _ in 0..mu {
            out.push(random_in_cell(dims, c, rng), [0.0; 3]);
        }
        return;
    }
    let lo = dims.coords(c);
    let h = 1.0 / k as f64;
    for s in 0..mu {
        let mut p = [0.5; 3];
        let mut r = s;
        for a in 0..dims.d {
            let i = r % k;
            r /= k;
            let j = rng.gen_range(-0.25..0.25) * h;
            p[a] = lo[a] as f64 + (i as f64 + 0.5) * h + j;
        }
        out.push(p, [0.0; 3]);
    }
}

impl Sim {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let keep_problem = config.output.problems;
        let d = config.d();
        let mut n = [1usize; 3];
        n[..d].copy_from_slice(&config.dims);
        let dims = Dims::new(d, n)?;
        let mut grid = CellGrid::tank(dims, 1.0);
        for w in &config.walls {
            for c in 0..dims.len() {
                if w.contains(dims.coords(c), d) {
                    grid.boundary[c] = true;
                    grid.marking[c] = Marking::Solid;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let obstacles: Vec<Obstacle> = config
            .obstacles
            .iter()
            .map(|o| {
                let mut size = [1usize; 3];
                size[..d].copy_from_slice(&o.size);
                Obstacle::new(&dims, size, vec3(&o.pos), vec3(&o.vel), o.kinematics, o.zero_bc)
            })
            .collect();
        let mut obstacle_mask = vec![false; dims.len()];
        for o in &obstacles {
            for &c in &o.occupied {
                if grid.boundary[c] {
                    return integrity(format!("obstacle overlaps static wall cell {:?}", dims.coords(c)));
                }
                obstacle_mask[c] = true;
            }
        }
        let mut particles = ParticleSet::new();
        for c in 0..dims.len() {
            if grid.boundary[c] || obstacle_mask[c] {
                continue;
            }
            if config.fluid.iter().any(|r| r.contains(dims.coords(c), d)) {
                seed_cell(&dims, c, config.mu, &mut rng, &mut particles);
            }
        }
        let v_star = particles.len() as f64 / config.mu as f64;
        grid.rebuild_gamma(&particles)?;
        grid.classify(&obstacle_mask, None)?;
        grid.assign_depth();
        let band = if config.band.enabled {
            let r = config.band.r;
            let mut st = BandState::new(r, config.band.strategy, dims.len())?;
            for j in 0..particles.len() {
                let c = particles.cell_of(&dims, j).expect("seeded inside the grid");
                if grid.is_fluid(c) && grid.depth[c] < -r {
                    particles.alive[j] = false;
                    st.n_deep += 1;
                }
            }
            particles.compact();
            grid.rebuild_gamma(&particles)?;
            st.deep_mask = (0..dims.len())
                .map(|c| grid.is_fluid(c) && grid.depth[c] < -r)
                .collect();
            grid.classify(&obstacle_mask, Some(&st.deep_mask))?;
            grid.assign_depth();
            Some(st)
        } else {
            None
        };
        grid.snapshot();
        let emitters = config
            .emitters
            .iter()
            .map(|e| EmitterState {
                cfg: e.clone(),
                emitted: 0,
            })
            .collect();
        Ok(Self {
            gravity: vec3(&config.gravity),
            dirs: direction_set(d)?,
            mac: MacGrid::new(dims),
            config,
            grid,
            particles,
            obstacles,
            band,
            v_star,
            time: 0.0,
            frame: 0,
            substeps: 0,
            emitted: 0,
            trace: Vec::new(),
            last_problem: None,
            keep_problem,
            emitters,
            rng,
        })
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims
    }

    pub fn obstacle_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.grid.len()];
        for o in &self.obstacles {
            for &c in &o.occupied {
                m[c] = true;
            }
        }
        m
    }

    pub fn total_particles(&self) -> i64 {
        self.particles.live_count() as i64 + self.band.as_ref().map_or(0, |b| b.n_deep)
    }

    fn gravity_norm(&self) -> f64 {
        self.gravity.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    fn substep_dt(&self, remaining: f64) -> f64 {
        let g = self.gravity_norm() * remaining;
        let max = self.config.max_speed;
        let mut fluid = 0.0f64;
        for j in 0..self.particles.len() {
            if self.particles.alive[j] {
                for v in &self.particles.vel[j] {
                    fluid = fluid.max(v.abs());
                }
            }
        }
        let fluid = (fluid + g).min(max);
        let obstacle = self
            .obstacles
            .iter()
            .map(|o| {
                let extra = if o.kinematics == crate::solids::Kinematics::FreeFall {
                    g
                } else {
                    0.0
                };
                (o.speed() + extra).min(max)
            })
            .fold(0.0, f64::max);
        clamp_dt(fluid, obstacle, remaining)
    }

    /// Advances one frame of `frame_dt`.
    pub fn step_frame(&mut self) -> Result<FrameRecord> {
        let started = Instant::now();
        let mut remaining = self.config.frame_dt;
        let mut checks = StepChecks::default();
        let mut solver = SolverFrameStats::default();
        let mut band_stats = self.band.as_ref().map(|b| BandFrameStats {
            n_deep: b.n_deep,
            min_s_in: i64::MAX,
            min_s_out: i64::MAX,
            ..Default::default()
        });
        let mut substeps = 0;
        while remaining > 1e-12 {
            let dt = self.substep_dt(remaining);
            // Guard against a sliver substep from floating-point leftovers.
            let dt = if remaining - dt < 1e-9 { remaining } else { dt };
            self.substep(dt, &mut checks, &mut solver, band_stats.as_mut())?;
            remaining -= dt;
            substeps += 1;
        }
        self.frame += 1;
        solver.wall_time = started.elapsed();
        Ok(self.record(substeps, checks, solver, band_stats))
    }

    /// Snapshot of the current state as a frame record.
    pub fn record(
        &self,
        substeps: usize,
        checks: StepChecks,
        solver: SolverFrameStats,
        band: Option<BandFrameStats>,
    ) -> FrameRecord {
        let live: Vec<usize> = (0..self.particles.len()).filter(|&j| self.particles.alive[j]).collect();
        FrameRecord {
            frame: self.frame,
            time: self.time,
            substeps,
            positions: live.iter().map(|&j| self.particles.x[j]).collect(),
            velocities: live.iter().map(|&j| self.particles.vel[j]).collect(),
            raster: self
                .grid
                .raster_codes(&self.obstacle_mask(), self.band.as_ref().map(|b| b.r)),
            volume: self.volume(),
            band: band.map(|mut b| {
                if let Some(st) = &self.band {
                    b.n_deep = st.n_deep;
                }
                if b.min_s_in == i64::MAX {
                    b.min_s_in = 0;
                    b.min_s_out = 0;
                }
                b
            }),
            solver,
            checks,
            obstacles: self.obstacles.iter().map(|o| o.pos).collect(),
            emitted: self.emitted,
        }
    }

    /// Volume report; in band mode the alternative measure also counts the
    /// imaginary deep particles.
    pub fn volume(&self) -> VolumeReport {
        let mu = self.config.mu as usize;
        let mut v = self
            .grid
            .volume_report(mu, self.v_star, false)
            .expect("validated mu and v_star");
        if let Some(b) = &self.band {
            v.alt_v += b.n_deep as f64 / mu as f64;
            v.alt_percent = 100.0 * v.alt_v / v.v_star;
        }
        v
    }

    fn substep(
        &mut self,
        dt: f64,
        checks: &mut StepChecks,
        solver: &mut SolverFrameStats,
        mut band_stats: Option<&mut BandFrameStats>,
    ) -> Result<()> {
        self.trace.clear();
        let band_r = self.band.as_ref().map(|b| b.r);
        let mu = self.config.mu;
        let total_before = self.total_particles();

        self.mac.transfer_p2g(&self.particles, &self.grid, band_r);
        let before = self.mac.u.clone();
        self.trace.push(Stage::Transfer);

        self.mac.apply_forces(&self.grid, self.gravity, dt);
        for o in &mut self.obstacles {
            o.accelerate(self.gravity, dt, self.config.max_speed);
        }
        self.trace.push(Stage::Forces);

        let solid_vel = solid_velocity_field(self.grid.len(), &self.obstacles);
        let ps = self
            .mac
            .solve_pressure(&self.grid, &solid_vel, dt, self.config.cg_tol, self.config.cg_max_iter)?;
        self.mac.extrapolate(&self.grid, EXTRAPOLATION_LAYERS);
        self.mac.enforce_solid_faces(&self.grid, &solid_vel);
        solver.pressure_iterations = solver.pressure_iterations.max(ps.iterations);
        solver.pressure_residual = solver.pressure_residual.max(ps.residual);
        self.trace.push(Stage::Pressure);

        self.mac.transfer_g2p(
            &before,
            &mut self.particles,
            self.config.flip_ratio,
            self.config.max_speed,
        );
        self.trace.push(Stage::GridToParticle);

        if let Some(r) = band_r {
            self.mac.advect_grid_velocity(&self.grid, r, dt);
            self.trace.push(Stage::GridAdvect);
        }

        self.mac
            .advect_particles(&self.grid, &mut self.particles, dt, self.config.max_speed);
        self.trace.push(Stage::Advect);

        // Correction, with the solid objective when an obstacle wants new cells.
        let proposals: Vec<MotionProposal> = self
            .obstacles
            .iter()
            .map(|o| o.propose_motion(&self.grid, dt))
            .collect();
        let mut new_solid: Vec<CellIndex> = proposals.iter().flat_map(|p| p.new_solid.iter().copied()).collect();
        new_solid.sort_unstable();
        new_solid.dedup();
        let lambda = self.config.obstacles.iter().map(|o| o.lambda).fold(0.0, f64::max);
        let solid = (!new_solid.is_empty()).then(|| SolidObjective::new(&self.grid, &new_solid, lambda));
        let table = build_candidates(&self.particles, &self.grid, &self.dirs)?;
        let problem = build_problem(&self.grid, table, mu, band_r, solid.as_ref())?;
        match self.band.as_mut() {
            Some(st) => {
                let rep = correct_band(&self.grid, &problem, &mut self.particles, st, solid.as_ref())?;
                solver.objective += rep.objective;
                if let Some(b) = band_stats.as_deref_mut() {
                    b.n_move += rep.flow.n_move;
                    b.paths += rep.flow.paths;
                    b.find_calls += rep.flow.find_calls;
                    b.min_s_in = b.min_s_in.min(rep.after.s_in);
                    b.min_s_out = b.min_s_out.min(rep.after.s_out);
                }
                if !rep.after.ok() {
                    checks.band_violations += 1;
                }
            }
            None => {
                let (a, stats) = solve_flow(&problem)?;
                solver.flow_iterations += stats.iterations;
                solver.objective += apply_solution(&problem, &a, &mut self.particles)?;
            }
        }
        if self.keep_problem {
            self.last_problem = Some(problem);
        }
        for (o, p) in self.obstacles.iter_mut().zip(&proposals) {
            o.gate_motion(&self.grid.dims, &self.particles, p);
        }
        self.trace.push(Stage::Correct);
        self.check_locality(checks);

        let obstacle_mask = self.obstacle_mask();
        self.grid.rebuild_gamma(&self.particles)?;
        let deep = self.band.as_ref().map(|b| b.deep_mask.clone());
        self.grid.classify(&obstacle_mask, deep.as_deref())?;
        self.grid.assign_depth();
        self.trace.push(Stage::Markings);

        if let Some(st) = self.band.as_mut() {
            let rep = maintain_band(
                &mut self.grid,
                &mut self.particles,
                st,
                &self.mac,
                &obstacle_mask,
                mu,
                &mut self.rng,
            )?;
            if let Some(b) = band_stats {
                b.n_excess = b.n_excess.max(rep.n_excess);
            }
            if st.n_deep < 0 {
                checks.band_violations += 1;
            }
            self.trace.push(Stage::BandMaintain);
        }
        if self.total_particles() != total_before {
            checks.conservation_violations += 1;
        }

        self.time += dt;
        if !self.emitters.is_empty() {
            let spawned = self.emit(&obstacle_mask)?;
            if spawned > 0 {
                self.grid.rebuild_gamma(&self.particles)?;
                let deep = self.band.as_ref().map(|b| b.deep_mask.clone());
                self.grid.classify(&obstacle_mask, deep.as_deref())?;
                self.grid.assign_depth();
            }
            self.trace.push(Stage::Emit);
        }

        self.particles.commit();
        if self.particles.alive.iter().any(|a| !a) {
            self.particles.compact();
            self.grid.rebuild_gamma(&self.particles)?;
        }
        self.check_cells(&obstacle_mask, checks);
        self.grid.snapshot();
        self.substeps += 1;
        Ok(())
    }

    fn check_locality(&self, checks: &mut StepChecks) {
        let dims = &self.grid.dims;
        for j in 0..self.particles.len() {
            if !self.particles.alive[j] {
                continue;
            }
            let (Some(a), Some(h), Some(x)) = (
                dims.cell_of(&self.particles.x_prev[j]),
                dims.cell_of(&self.particles.x_ideal[j]),
                dims.cell_of(&self.particles.x[j]),
            ) else {
                checks.locality_violations += 1;
                continue;
            };
            if dims.chebyshev(a, h) > 1 {
                checks.ideal_locality_violations += 1;
            }
            if dims.manhattan(a, x) > 1 {
                checks.locality_violations += 1;
            }
        }
    }

    fn check_cells(&self, obstacle: &[bool], checks: &mut StepChecks) {
        let g = &self.grid;
        let mu = self.config.mu as usize;
        let mut slack = 0.0;
        for c in 0..g.len() {
            let n = g.gamma[c].len();
            if g.marking[c] == Marking::Solid {
                if n > 0 {
                    checks.capacity_violations += 1;
                    if obstacle[c] {
                        checks.solid_overlaps += n;
                    }
                }
                continue;
            }
            if n > mu {
                checks.capacity_violations += 1;
            }
            if g.is_fluid(c) {
                if g.depth[c] < -1 && n > mu {
                    checks.inner_overfull += 1;
                }
                if g.depth[c] >= -1 {
                    slack += 1.0 - (n as f64 / mu as f64).min(1.0);
                }
            }
        }
        let v = self.volume();
        if v.percent < 100.0 * (1.0 - slack / v.v_star) - 1e-9 {
            checks.volume_floor_violations += 1;
        }
        checks.alt_volume_error = checks.alt_volume_error.max((v.alt_v - v.v_star).abs());
    }

    /// Spawns the particles emitters owe by now into cells with room;
    /// whatever does not fit waits for a later substep.
    fn emit(&mut self, obstacle: &[bool]) -> Result<u64> {
        let dims = self.grid.dims;
        let mu = self.config.mu as usize;
        let d = dims.d;
        let mut spawned = 0;
        for e in 0..self.emitters.len() {
            let owed = self.emitters[e]
                .target(self.time)
                .saturating_sub(self.emitters[e].emitted);
            if owed == 0 {
                continue;
            }
            let cells: Vec<CellIndex> = (0..dims.len())
                .filter(|&c| {
                    self.emitters[e].cfg.region.contains(dims.coords(c), d) && !obstacle[c] && !self.grid.boundary[c]
                })
                .collect();
            let mut room: Vec<usize> = cells
                .iter()
                .map(|&c| mu.saturating_sub(self.grid.gamma[c].len()))
                .collect();
            let vel = vec3(&self.emitters[e].cfg.velocity);
            for _ in 0..owed {
                let open: Vec<usize> = (0..cells.len()).filter(|&i| room[i] > 0).collect();
                if open.is_empty() {
                    break;
                }
                let i = open[self.rng.gen_range(0..open.len())];
                room[i] -= 1;
                let p = random_in_cell(&dims, cells[i], &mut self.rng);
                self.particles.push(p, vel);
                self.emitters[e].emitted += 1;
                spawned += 1;
            }
        }
        self.emitted += spawned;
        self.v_star += spawned as f64 / mu as f64;
        Ok(spawned)
    }

    /// Whether every emitter has delivered its total.
    pub fn emitters_done(&self) -> bool {
        self.emitters.iter().all(|e| e.emitted == e.cfg.total())
    }
}
