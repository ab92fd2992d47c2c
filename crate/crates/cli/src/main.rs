use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cellflow::band::Strategy;
use cellflow::output::{run_to_dir, summarize_volume_csv};
use cellflow::scene::load_scene;
use cellflow::solvers::bnb::{branch_and_bound, BnbLimits};
use cellflow::solvers::brute::{brute_force_ilp, BRUTE_FORCE_MAX_N};
use cellflow::solvers::solve_flow;
use cellflow::CorrectionProblem;

#[derive(Parser)]
#[command(name = "cellflow", version, about = "Cell-constrained particle fluid simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a builtin scene or a scene file and write frame outputs.
    Run(RunArgs),
    /// Re-solve a dumped correction problem with the flow solver and an
    /// exact oracle, and compare objectives.
    OracleCheck { dump: PathBuf },
    /// Print the range of volume percentages of a finished run.
    Volume { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Builtin scene name or path to a scene TOML file.
    scene: String,
    #[arg(long)]
    out: PathBuf,
    /// Frames to simulate; defaults to the scene's step_limit.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Enable the band method with this thickness.
    #[arg(long)]
    band: Option<i32>,
    /// Band correction strategy: flow, oneway or full.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Also write a PPM image per frame (2D only).
    #[arg(long)]
    render: bool,
    /// Also write the correction problem of each frame.
    #[arg(long)]
    problems: bool,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    Strategy::from_name(s).ok_or_else(|| format!("unknown strategy `{s}`, expected flow, oneway or full"))
}

fn run(args: RunArgs) -> Result<()> {
    let RunArgs {
        scene,
        out,
        frames,
        seed,
        band,
        strategy,
        render,
        problems,
    } = args;
    let (mut cfg, text) = load_scene(&scene).with_context(|| format!("loading scene `{scene}`"))?;
    if let Some(n) = frames {
        cfg.step_limit = n;
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    if let Some(r) = band {
        cfg.band.enabled = true;
        cfg.band.r = r;
    }
    if let Some(s) = strategy {
        cfg.band.strategy = s;
    }
    cfg.output.render |= render;
    cfg.output.problems |= problems;
    cfg.validate()?;
    let outcome = run_to_dir(cfg, &text, &out).with_context(|| format!("writing to {}", out.display()))?;
    println!("wrote {} frames to {}", outcome.frames_written, out.display());
    if let Some(e) = outcome.error {
        bail!("simulation stopped after frame {}: {e}", outcome.frames_written - 1);
    }
    Ok(())
}

fn oracle_check(dump: PathBuf) -> Result<bool> {
    let text = std::fs::read_to_string(&dump).with_context(|| format!("reading {}", dump.display()))?;
    let problem = CorrectionProblem::from_dump(&text)?;
    let n = problem.n();
    let (fast_name, fast) = if problem.dense_rows.is_empty() {
        ("flow", solve_flow(&problem)?.0)
    } else {
        ("branch-and-bound", branch_and_bound(&problem, BnbLimits::default())?.0)
    };
    let fast_obj = problem.check(&fast)?;
    println!("particles {n}, candidates {}", problem.table.cands.len());
    println!("{fast_name} objective {fast_obj:.12}");
    if n > BRUTE_FORCE_MAX_N {
        println!("brute force skipped: {n} particles exceeds {BRUTE_FORCE_MAX_N}");
        return Ok(true);
    }
    let (_, exact_obj) = brute_force_ilp(&problem)?;
    println!("brute-force objective {exact_obj:.12}");
    let ok = (exact_obj - fast_obj).abs() <= 1e-9;
    println!("{}", if ok { "match" } else { "MISMATCH" });
    Ok(ok)
}

fn volume(dir: PathBuf) -> Result<()> {
    let path = dir.join("volume.csv");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let s = summarize_volume_csv(&text)?;
    println!("frames {}", s.frames);
    println!("volume {:.2}% - {:.2}%", s.min_percent, s.max_percent);
    println!("alt volume {:.4}% - {:.4}%", s.min_alt_percent, s.max_alt_percent);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::OracleCheck { dump } => oracle_check(dump),
        Command::Volume { dir } => volume(dir).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
