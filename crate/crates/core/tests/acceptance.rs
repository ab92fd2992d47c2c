//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The process exits 0 after printing every line so a known failure does not
//! mask the rest of the workspace tests. Set `ACCEPTANCE_STRICT=1` to exit
//! nonzero when any criterion fails.

use std::time::{Duration, Instant};

use cellflow::band::{build_one_way, compute_alphas, compute_io, correct_band, crossing_sets, BandState, Strategy};
use cellflow::correction::{build_candidates, build_problem, direction_set, CorrectionProblem};
use cellflow::grid::CellGrid;
use cellflow::instances::{column_push_scene, random_band_scene, random_problem, ToySpec};
use cellflow::output::encode_particles;
use cellflow::particles::ParticleSet;
use cellflow::scene::{load_scene, SceneConfig, BUILTIN_SCENES};
use cellflow::sim::{FrameRecord, Sim, StepChecks};
use cellflow::solvers::{branch_and_bound, brute_force_ilp, solve_flow, tu_sample_check, BnbLimits};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, id: u32, name: &'static str, pass: bool, detail: String) {
    println!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, name, pass, detail });
}

fn scene(name: &str) -> SceneConfig {
    load_scene(name).expect("builtin scene").0
}

#[derive(Default)]
struct Totals {
    frames: usize,
    capacity: usize,
    overlaps: usize,
    locality: usize,
    ideal_locality: usize,
    inner_overfull: usize,
    floor: usize,
    band: usize,
    conservation: usize,
    alt_error: f64,
    elapsed: Duration,
    error: Option<String>,
}

impl Totals {
    fn add(&mut self, c: &StepChecks) {
        self.frames += 1;
        self.capacity += c.capacity_violations;
        self.overlaps += c.solid_overlaps;
        self.locality += c.locality_violations;
        self.ideal_locality += c.ideal_locality_violations;
        self.inner_overfull += c.inner_overfull;
        self.floor += c.volume_floor_violations;
        self.band += c.band_violations;
        self.conservation += c.conservation_violations;
        self.alt_error = self.alt_error.max(c.alt_volume_error);
    }

    fn per_frame(&self) -> f64 {
        self.elapsed.as_secs_f64() / self.frames.max(1) as f64
    }
}

/// Runs a scene for its full step limit, calling `watch` after each frame.
fn run(cfg: SceneConfig, mut watch: impl FnMut(&Sim, &FrameRecord)) -> Totals {
    let mut t = Totals::default();
    let started = Instant::now();
    let frames = cfg.step_limit;
    let mut sim = match Sim::new(cfg) {
        Ok(s) => s,
        Err(e) => {
            t.error = Some(e.to_string());
            return t;
        }
    };
    for _ in 0..frames {
        match sim.step_frame() {
            Ok(f) => {
                t.add(&f.checks);
                watch(&sim, &f);
            }
            Err(e) => {
                t.error = Some(format!("frame {}: {e}", sim.frame + 1));
                break;
            }
        }
    }
    t.elapsed = started.elapsed();
    t
}

fn band_dam() -> SceneConfig {
    let mut cfg = scene("dam");
    cfg.band.enabled = true;
    cfg.band.r = 6;
    cfg.band.strategy = Strategy::FlowPaths;
    cfg
}

fn scene_criteria(out: &mut Vec<Outcome>) {
    let mut all: Vec<(String, Totals)> = Vec::new();

    // 1, 2: dam.
    let mut alt_worst = 0.0f64;
    let dam = run(scene("dam"), |_, f| {
        alt_worst = alt_worst.max((f.volume.alt_v - f.volume.v_star).abs());
    });
    report(
        out,
        1,
        "strict capacity on dam",
        dam.error.is_none() && dam.frames == 300 && dam.capacity == 0 && dam.per_frame() < 2.0,
        format!(
            "{} frames, {} capacity violations, {:.3} s/frame (target < 2){}",
            dam.frames,
            dam.capacity,
            dam.per_frame(),
            err_suffix(&dam)
        ),
    );
    report(
        out,
        2,
        "alternative volume equals V* on dam",
        dam.error.is_none() && dam.frames == 300 && alt_worst <= 1e-9,
        format!("max |alt V - V*| = {alt_worst:.3e} (tolerance 1e-9)"),
    );
    all.push(("dam".into(), dam));

    // 3: dam at 1 ppc.
    let mut inexact = 0;
    let mut lo = f64::INFINITY;
    let fine = run(scene("dam_1ppc"), |_, f| {
        if f.volume.v != f.volume.v_star {
            inexact += 1;
        }
        lo = lo.min(f.volume.percent);
    });
    report(
        out,
        3,
        "1-ppc volume is exact",
        fine.error.is_none() && fine.frames == 300 && inexact == 0,
        format!(
            "{} frames, {inexact} with V != V*, min percent {lo}{}",
            fine.frames,
            err_suffix(&fine)
        ),
    );
    all.push(("dam_1ppc".into(), fine));

    // 10: compression. The lid is at rest from the last frame its position
    // changed; from then on every fluid cell outside the surface slack must
    // hold exactly mu.
    let cfg = scene("compress");
    let mu = cfg.mu as usize;
    let limit = cfg.step_limit;
    let mut heights: Vec<f64> = Vec::new();
    let mut unfilled: Vec<usize> = Vec::new();
    let compress = run(cfg, |sim, f| {
        heights.push(f.obstacles[0][1]);
        let g = &sim.grid;
        // Surface slack: surface cells and the layer just below them.
        unfilled.push(
            (0..g.len())
                .filter(|&c| g.is_fluid(c) && g.depth[c] < -1 && g.gamma[c].len() != mu)
                .count(),
        );
    });
    let rise = heights.windows(2).filter(|w| w[1] > w[0]).count();
    let rest = heights.windows(2).rposition(|w| w[1] != w[0]).map_or(0, |i| i + 1);
    let unfilled_at_rest: usize = unfilled.get(rest..).map_or(0, |u| u.iter().sum());
    // At least one second of holding still.
    let held = heights.len() == limit && rest + 30 <= limit;
    report(
        out,
        10,
        "compression fills every inner cell and holds",
        compress.error.is_none()
            && held
            && rise == 0
            && unfilled_at_rest == 0
            && compress.overlaps == 0
            && compress.capacity == 0,
        format!(
            "lid at rest from frame {} (y = {:.4}), upward moves {rise}, cells below depth -1 != mu while at rest {unfilled_at_rest}, overlaps {}{}",
            rest + 1,
            heights.last().copied().unwrap_or(f64::NAN),
            compress.overlaps,
            err_suffix(&compress)
        ),
    );
    all.push(("compress".into(), compress));

    // 11: zero-BC falling obstacle.
    let mut floor_frame = None;
    let zero = run(scene("falling_obs_zero_bc"), |_, f| {
        if f.obstacles[0][1] <= 1.0 + 1e-9 {
            floor_frame.get_or_insert(f.frame);
        }
    });
    report(
        out,
        11,
        "zero-BC obstacle reaches the floor",
        zero.error.is_none() && floor_frame.is_some() && zero.overlaps == 0,
        format!(
            "floor reached at frame {floor_frame:?} of {}, {} particle-solid overlaps{}",
            zero.frames,
            zero.overlaps,
            err_suffix(&zero)
        ),
    );
    all.push(("falling_obs_zero_bc".into(), zero));

    // 7: band bookkeeping.
    let mut neg_slack = 0;
    let mut neg_deep = 0;
    let mut drift = 0;
    let cfg = band_dam();
    let total0: i64 = cfg
        .fluid
        .iter()
        .map(|r| ((r.max[0] - r.min[0]) * (r.max[1] - r.min[1])) as i64)
        .sum::<i64>()
        * cfg.mu as i64;
    let band = run(cfg, |sim, f| {
        let b = f.band.expect("band stats");
        if b.min_s_in < 0 || b.min_s_out < 0 {
            neg_slack += 1;
        }
        if b.n_deep < 0 {
            neg_deep += 1;
        }
        if sim.total_particles() != total0 {
            drift += 1;
        }
    });
    report(
        out,
        7,
        "band bookkeeping on dam, R = 6",
        band.error.is_none()
            && band.frames == 300
            && neg_slack == 0
            && neg_deep == 0
            && drift == 0
            && band.band == 0
            && band.conservation == 0,
        format!(
            "{} frames, negative slack {neg_slack}, negative n_deep {neg_deep}, live + n_deep drift {drift}, {:.3} s/frame{}",
            band.frames,
            band.per_frame(),
            err_suffix(&band)
        ),
    );
    all.push(("dam band R=6".into(), band));

    for name in BUILTIN_SCENES {
        if ["dam", "dam_1ppc", "compress", "falling_obs_zero_bc"].contains(&name) {
            continue;
        }
        all.push((name.to_string(), run(scene(name), |_, _| {})));
    }

    // 4, 12: every scene.
    let floor: Vec<String> = all
        .iter()
        .filter(|(_, t)| t.floor + t.inner_overfull > 0 || t.error.is_some())
        .map(|(n, t)| {
            format!(
                "{n} ({} floor, {} overfull{})",
                t.floor,
                t.inner_overfull,
                err_suffix(t)
            )
        })
        .collect();
    report(
        out,
        4,
        "volume floor from surface slack, no inner compression",
        floor.is_empty(),
        if floor.is_empty() {
            format!(
                "{} scenes, {} frames, no violations",
                all.len(),
                all.iter().map(|(_, t)| t.frames).sum::<usize>()
            )
        } else {
            floor.join("; ")
        },
    );
    let local: Vec<String> = all
        .iter()
        .filter(|(_, t)| t.locality + t.ideal_locality > 0 || t.error.is_some())
        .map(|(n, t)| {
            format!(
                "{n} ({} corrected, {} ideal{})",
                t.locality,
                t.ideal_locality,
                err_suffix(t)
            )
        })
        .collect();
    report(
        out,
        12,
        "Moore locality of moves",
        local.is_empty(),
        if local.is_empty() {
            format!("{} scenes, no violations", all.len())
        } else {
            local.join("; ")
        },
    );
    for (name, t) in &all {
        println!(
            "     {name}: {} frames in {:.1} s, capacity {} overlaps {}",
            t.frames,
            t.elapsed.as_secs_f64(),
            t.capacity,
            t.overlaps
        );
    }
}

fn err_suffix(t: &Totals) -> String {
    t.error.as_ref().map_or(String::new(), |e| format!(", stopped: {e}"))
}

fn lp_ilp(out: &mut Vec<Outcome>) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for i in 0..200 {
        let p = random_problem(&mut rng, ToySpec::default()).expect("toy problem");
        let (flow, _) = solve_flow(&p).expect("flow solve");
        let (exact, exact_obj) = brute_force_ilp(&p).expect("brute force");
        let f = p.check(&flow).expect("flow feasible");
        let e = p.check(&exact).expect("brute force feasible");
        let gap = (f - exact_obj).abs().max((e - exact_obj).abs());
        worst = worst.max(gap);
        if gap > 1e-9 {
            bad.push(i);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        out,
        5,
        "flow optimum equals the ILP optimum",
        bad.is_empty() && secs < 60.0,
        format!("200 instances, max gap {worst:.3e} (tolerance 1e-9), mismatches {bad:?}, {secs:.2} s (limit 60)"),
    );
}

fn tu(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut trials = 0;
    let mut failures = 0;
    let mut max_det = 0;
    let mut instances = 0;
    while instances < 10 {
        let p = random_problem(&mut rng, ToySpec::default()).expect("toy problem");
        if p.n() < 4 {
            continue;
        }
        let r = tu_sample_check(&p, 50, 7, instances).expect("tu sample");
        trials += r.trials;
        failures += r.failures;
        max_det = max_det.max(r.max_abs_det);
        instances += 1;
    }
    report(
        out,
        6,
        "sampled subdeterminants are 0 or ±1",
        trials == 500 && failures == 0,
        format!("{trials} submatrices (k ≤ 7) from 10 instances, {failures} failures, max |det| {max_det}"),
    );
}

fn problem_for(grid: &CellGrid, ps: &ParticleSet, mu: u32, r: i32) -> CorrectionProblem {
    let table = build_candidates(ps, grid, &direction_set(2).expect("2D")).expect("candidates");
    build_problem(grid, table, mu, Some(r), None).expect("problem")
}

fn alpha(grid: &CellGrid, p: &CorrectionProblem, st: &BandState) -> i64 {
    let (a, b) = compute_alphas(grid, st.r, p.mu, st.n_deep).expect("alphas");
    a + b
}

fn column_push(out: &mut Vec<Outcome>) {
    let (grid, mut ps, mut state) = column_push_scene().expect("scene");
    let p = problem_for(&grid, &ps, 1, state.r);
    let al = alpha(&grid, &p, &state);
    let sets = crossing_sets(&p, &grid, state.r);
    let (b, _) = solve_flow(&p).expect("flow");
    let plain = compute_io(&p, &sets, &b, al).expect("io");
    state.strategy = Strategy::FlowPaths;
    let rep = correct_band(&grid, &p, &mut ps, &mut state, None).expect("flow paths");
    report(
        out,
        8,
        "column push is fixed by one flow path",
        (plain.n_in, plain.n_out, plain.s_in, plain.s_out) == (1, 0, -1, 1)
            && rep.after.s_in == 0
            && rep.flow.paths == 1,
        format!(
            "plain n_in={} n_out={} s_in={} s_out={}; flow paths s_in={} with {} path(s)",
            plain.n_in, plain.n_out, plain.s_in, plain.s_out, rep.after.s_in, rep.flow.paths
        ),
    );
}

fn one_way_vs_paths(out: &mut Vec<Outcome>) {
    let (mut instances, mut above, mut infeasible) = (0, 0, 0);
    let mut worst = 0.0f64;
    let mut seed = 0;
    while instances < 50 || seed < 300 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seed += 1;
        let (grid, ps, mu, st) = random_band_scene(&mut rng, 10).expect("band scene");
        let p = problem_for(&grid, &ps, mu, st.r);
        let al = alpha(&grid, &p, &st);
        let sets = crossing_sets(&p, &grid, st.r);
        let (b, _) = solve_flow(&p).expect("flow");
        let io = compute_io(&p, &sets, &b, al).expect("io");
        if io.ok() {
            continue;
        }
        instances += 1;
        let q = build_one_way(&p, &sets, &b, io, al).expect("one-way problem");
        let (bb, stats) = branch_and_bound(&q, BnbLimits::default()).expect("branch and bound");
        let bb_io = compute_io(&p, &sets, &bb, al).expect("io");
        let (mut ps2, mut st2) = (ps.clone(), st.clone());
        st2.strategy = Strategy::FlowPaths;
        let rep = correct_band(&grid, &p, &mut ps2, &mut st2, None).expect("flow paths");
        if !bb_io.ok() || !rep.after.ok() {
            infeasible += 1;
        }
        if stats.objective > rep.objective + 1e-9 {
            above += 1;
            worst = worst.max(stats.objective - rep.objective);
        }
    }
    report(
        out,
        9,
        "one-way optimum no worse than flow paths",
        instances >= 50 && above == 0 && infeasible == 0,
        format!(
            "{instances} instances with violated slacks, one-way objective above flow paths in {above} (max excess {worst:.4}), negative slacks in {infeasible}"
        ),
    );
}

fn determinism(out: &mut Vec<Outcome>) {
    let dump = |cfg: SceneConfig| -> Vec<Vec<u8>> {
        let d = cfg.d();
        let mut sim = Sim::new(cfg).expect("scene");
        let mut frames = vec![encode_particles(
            &sim.record(0, Default::default(), Default::default(), None),
            d,
        )];
        for _ in 0..10 {
            frames.push(encode_particles(&sim.step_frame().expect("frame"), d));
        }
        frames
    };
    let mut differing = Vec::new();
    let mut configs: Vec<(String, SceneConfig)> = BUILTIN_SCENES.iter().map(|n| (n.to_string(), scene(n))).collect();
    configs.push(("dam band R=6".into(), band_dam()));
    for (name, cfg) in &configs {
        if dump(cfg.clone()) != dump(cfg.clone()) {
            differing.push(name.clone());
        }
    }
    report(
        out,
        13,
        "same seed gives byte-identical dumps",
        differing.is_empty(),
        format!("{} scenes × 10 frames, differing {differing:?}", configs.len()),
    );
}

fn main() {
    let started = Instant::now();
    let mut out = Vec::new();
    lp_ilp(&mut out);
    tu(&mut out);
    column_push(&mut out);
    one_way_vs_paths(&mut out);
    determinism(&mut out);
    scene_criteria(&mut out);
    out.sort_by_key(|o| o.id);
    let failed: Vec<&Outcome> = out.iter().filter(|o| !o.pass).collect();
    println!("\nsummary ({:.0} s):", started.elapsed().as_secs_f64());
    for o in &out {
        println!(
            "{} {:>2} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
    }
    println!("{} of {} criteria passed", out.len() - failed.len(), out.len());
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
