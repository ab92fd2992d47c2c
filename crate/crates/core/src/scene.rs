//! Scene configuration: a versioned TOML document, plus the builtin scenes.
//!
//! Units are cells for length and seconds for time. Builtin scenes use
//! gravity −250 cells/s² and cap fluid speed at 60 cells/s.

use serde::{Deserialize, Serialize};

use crate::band::Strategy;
use crate::error::{Error, Result};
use crate::solids::{Kinematics, DEFAULT_LAMBDA};

pub const CONFIG_VERSION: u32 = 1;

pub const BUILTIN_SCENES: [&str; 9] = [
    "dam",
    "dam_emit",
    "dam_1ppc",
    "drop",
    "compress",
    "spiral",
    "falling_obs",
    "falling_obs_zero_bc",
    "large_falling_obs",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    Box,
    /// The ellipse (ellipsoid) inscribed in the box.
    Ball,
}

/// Cells `min ≤ c < max` per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub min: Vec<usize>,
    pub max: Vec<usize>,
    #[serde(default)]
    pub shape: Shape,
}

impl Region {
    /// Whether cell coordinates `c` lie in the region.
    pub fn contains(&self, c: [usize; 3], d: usize) -> bool {
        if !(0..d).all(|a| c[a] >= self.min[a] && c[a] < self.max[a]) {
            return false;
        }
        match self.shape {
            Shape::Box => true,
            Shape::Ball => {
                let mut s = 0.0;
                for a in 0..d {
                    let lo = self.min[a] as f64;
                    let half = (self.max[a] - self.min[a]) as f64 / 2.0;
                    let t = (c[a] as f64 + 0.5 - lo - half) / half;
                    s += t * t;
                }
                s <= 1.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_r")]
    pub r: i32,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
}

fn default_r() -> i32 {
    3
}
fn default_strategy() -> Strategy {
    Strategy::FlowPaths
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            r: default_r(),
            strategy: default_strategy(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    pub region: Region,
    /// Particles per second.
    pub rate: f64,
    pub start: f64,
    pub duration: f64,
    #[serde(default)]
    pub velocity: Vec<f64>,
}

impl EmitterConfig {
    /// Total particles the emitter delivers.
    pub fn total(&self) -> u64 {
        (self.rate * self.duration).round() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub size: Vec<usize>,
    pub pos: Vec<f64>,
    #[serde(default)]
    pub vel: Vec<f64>,
    pub kinematics: Kinematics,
    #[serde(default)]
    pub zero_bc: bool,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "yes")]
    pub particles: bool,
    #[serde(default = "yes")]
    pub grid: bool,
    #[serde(default)]
    pub render: bool,
    /// Pixels per cell in rendered frames.
    #[serde(default = "default_scale")]
    pub render_scale: usize,
    /// Write the correction problem of each frame's last substep.
    #[serde(default)]
    pub problems: bool,
}

fn yes() -> bool {
    true
}
fn default_scale() -> usize {
    6
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            particles: true,
            grid: true,
            render: false,
            render_scale: default_scale(),
            problems: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub version: u32,
    pub name: String,
    /// Grid size per axis including the one-cell wall layer.
    pub dims: Vec<usize>,
    pub mu: u32,
    #[serde(default = "default_flip")]
    pub flip_ratio: f64,
    pub gravity: Vec<f64>,
    #[serde(default = "default_frame_dt")]
    pub frame_dt: f64,
    pub max_speed: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Frames to simulate.
    pub step_limit: usize,
    #[serde(default = "default_tol")]
    pub cg_tol: f64,
    #[serde(default = "default_iter")]
    pub cg_max_iter: usize,
    #[serde(default)]
    pub band: BandConfig,
    #[serde(default)]
    pub fluid: Vec<Region>,
    /// Static solid scenery inside the tank.
    #[serde(default)]
    pub walls: Vec<Region>,
    #[serde(default)]
    pub emitters: Vec<EmitterConfig>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_flip() -> f64 {
    0.97
}
fn default_frame_dt() -> f64 {
    1.0 / 30.0
}
fn default_tol() -> f64 {
    1e-6
}
fn default_iter() -> usize {
    2000
}

fn bad<T>(key: impl Into<String>, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Input(format!("{}: {msg}", key.into())))
}

fn check_len<T>(key: &str, v: &[T], d: usize) -> Result<()> {
    if v.len() != d {
        return bad(key, format!("expected {d} components, got {}", v.len()));
    }
    Ok(())
}

impl SceneConfig {
    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            let key = text
                .lines()
                .nth(line.saturating_sub(1))
                .and_then(|l| l.split_once('='))
                .map(|(k, _)| k.trim())
                .filter(|k| !k.is_empty());
            let msg = match key {
                Some(k) => format!("key `{k}`: {}", e.message()),
                None => e.message().to_string(),
            };
            Error::Parse { line, msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return bad("version", format!("unsupported config version {}", self.version));
        }
        let d = self.d();
        if d != 2 && d != 3 {
            return bad("dims", "expected 2 or 3 axes");
        }
        if self.dims.iter().any(|&n| n < 3) {
            return bad("dims", "every axis needs at least 3 cells");
        }
        if d == 3 && self.dims.iter().any(|&n| n > 64) {
            return bad("dims", "3D grids are limited to 64 cells per axis");
        }
        if self.mu < 1 {
            return bad("mu", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.flip_ratio) {
            return bad("flip_ratio", "must lie in [0, 1]");
        }
        check_len("gravity", &self.gravity, d)?;
        if !(self.frame_dt > 0.0) {
            return bad("frame_dt", "must be positive");
        }
        if !(self.max_speed > 0.0) {
            return bad("max_speed", "must be positive");
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iter == 0 {
            return bad("cg_tol", "tolerance and iteration limit must be positive");
        }
        if self.band.enabled && self.band.r < 1 {
            return bad("band.r", "must be at least 1");
        }
        if self.output.render_scale == 0 {
            return bad("output.render_scale", "must be positive");
        }
        let inside = |key: String, r: &Region| -> Result<()> {
            check_len(&format!("{key}.min"), &r.min, d)?;
            check_len(&format!("{key}.max"), &r.max, d)?;
            for a in 0..d {
                if r.min[a] < 1 || r.max[a] > self.dims[a] - 1 || r.min[a] >= r.max[a] {
                    return bad(
                        key.to_string(),
                        format!(
                            "axis {a} range {}..{} is empty or touches the tank wall",
                            r.min[a], r.max[a]
                        ),
                    );
                }
            }
            Ok(())
        };
        for (i, r) in self.fluid.iter().enumerate() {
            inside(format!("fluid[{i}]"), r)?;
        }
        for (i, r) in self.walls.iter().enumerate() {
            inside(format!("walls[{i}]"), r)?;
        }
        for (i, e) in self.emitters.iter().enumerate() {
            let key = format!("emitters[{i}]");
            inside(format!("{key}.region"), &e.region)?;
            if !(e.rate >= 0.0) || !(e.duration >= 0.0) || !(e.start >= 0.0) {
                return bad(key, "rate, start and duration must be nonnegative");
            }
            if !e.velocity.is_empty() {
                check_len(&format!("{key}.velocity"), &e.velocity, d)?;
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let key = format!("obstacles[{i}]");
            check_len(&format!("{key}.size"), &o.size, d)?;
            check_len(&format!("{key}.pos"), &o.pos, d)?;
            if !o.vel.is_empty() {
                check_len(&format!("{key}.vel"), &o.vel, d)?;
            }
            for a in 0..d {
                let lo = o.pos[a].round();
                if o.size[a] == 0 || lo < 1.0 || lo as usize + o.size[a] > self.dims[a] - 1 {
                    return bad(
                        format!("{key}.pos"),
                        format!("box does not fit inside the tank on axis {a}"),
                    );
                }
            }
            if !(o.lambda > 0.0) {
                return bad(format!("{key}.lambda"), "must be positive");
            }
        }
        Ok(())
    }
}

/// A builtin scene name or a path to a TOML file. Returns the parsed config
/// and the exact source text.
pub fn load_scene(arg: &str) -> Result<(SceneConfig, String)> {
    let text = match builtin_toml(arg) {
        Some(t) => t,
        None => {
            let path = std::path::Path::new(arg);
            if !path.exists() {
                return Err(Error::Input(format!(
                    "'{arg}' is neither a builtin scene ({}) nor an existing file",
                    BUILTIN_SCENES.join(", ")
                )));
            }
            std::fs::read_to_string(path)?
        }
    };
    let cfg = SceneConfig::from_toml(&text)?;
    Ok((cfg, text))
}

fn header(name: &str, n: usize, mu: u32, step_limit: usize) -> String {
    format!(
        "version = 1\n\
         name = \"{name}\"\n\
         dims = [{n}, {n}]\n\
         mu = {mu}\n\
         flip_ratio = 0.97\n\
         gravity = [0.0, -250.0]\n\
         frame_dt = 0.03333333333333333\n\
         max_speed = 60.0\n\
         rng_seed = 1\n\
         step_limit = {step_limit}\n"
    )
}

/// TOML text of a builtin scene, or `None` for unknown names.
pub fn builtin_toml(name: &str) -> Option<String> {
    let s = match name {
        // Left half of a 48×48 interior, 40 cells high.
        "dam" => header(name, 50, 4, 300) + "\n[[fluid]]\nmin = [1, 1]\nmax = [25, 41]\n",
        // The emitter tops a smaller dam up to exactly half the interior:
        // 16×40 cells now, 2048 particles (512 cells) later, 1152 = 48·48/2.
        "dam_emit" => {
            header(name, 50, 4, 300)
                + "\n[[fluid]]\nmin = [1, 1]\nmax = [17, 41]\n\
                   \n[[emitters]]\nrate = 512.0\nstart = 2.0\nduration = 4.0\nvelocity = [-20.0, -10.0]\n\
                   region = { min = [36, 38], max = [39, 41] }\n"
        }
        // Same dam on a grid twice as fine per axis.
        "dam_1ppc" => header(name, 100, 1, 300) + "\n[[fluid]]\nmin = [1, 1]\nmax = [49, 81]\n",
        "drop" => {
            header(name, 50, 4, 150)
                + "\n[[fluid]]\nmin = [1, 1]\nmax = [49, 15]\n\
                   \n[[fluid]]\nmin = [19, 28]\nmax = [31, 40]\nshape = \"ball\"\n"
        }
        // A scripted lid spanning the tank presses a collapsing column.
        "compress" => {
            header(name, 40, 4, 300)
                + "\n[[fluid]]\nmin = [1, 1]\nmax = [15, 31]\n\
                   \n[[obstacles]]\nsize = [38, 3]\npos = [1.0, 36.0]\nvel = [0.0, -6.0]\nkinematics = \"scripted\"\n"
        }
        // A piston squeezes fluid from the left chamber through a winding
        // three-cell channel on the right.
        "spiral" => {
            header(name, 60, 4, 300)
                + "\n[[fluid]]\nmin = [1, 1]\nmax = [17, 31]\n\
                   \n[[obstacles]]\nsize = [16, 3]\npos = [1.0, 52.0]\nvel = [0.0, -8.0]\nkinematics = \"scripted\"\n\
                   \n[[walls]]\nmin = [17, 4]\nmax = [19, 59]\n\
                   \n[[walls]]\nmin = [19, 4]\nmax = [55, 6]\n\
                   \n[[walls]]\nmin = [22, 9]\nmax = [59, 11]\n\
                   \n[[walls]]\nmin = [19, 14]\nmax = [55, 16]\n\
                   \n[[walls]]\nmin = [22, 19]\nmax = [59, 21]\n\
                   \n[[walls]]\nmin = [19, 24]\nmax = [55, 26]\n"
        }
        "falling_obs" => falling(name, [8, 6], [21.0, 34.0], false),
        "falling_obs_zero_bc" => falling(name, [8, 6], [21.0, 34.0], true),
        // Leaves four-cell gaps along both side walls.
        "large_falling_obs" => falling(name, [40, 6], [5.0, 34.0], false),
        _ => return None,
    };
    Some(s)
}

fn falling(name: &str, size: [usize; 2], pos: [f64; 2], zero_bc: bool) -> String {
    header(name, 50, 4, 300)
        + &format!(
            "\n[[fluid]]\nmin = [1, 1]\nmax = [49, 21]\n\
             \n[[obstacles]]\nsize = [{}, {}]\npos = [{:?}, {:?}]\nkinematics = \"free_fall\"\nzero_bc = {zero_bc}\n",
            size[0], size[1], pos[0], pos[1]
        )
}
