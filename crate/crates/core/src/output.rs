//! On-disk artifacts of a run: binary particle and grid dumps, the volume
//! CSV, the run manifest, and portable-pixmap renders of 2D frames.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{code, Dims};
use crate::scene::{SceneConfig, CONFIG_VERSION};
use crate::sim::{BandFrameStats, FrameRecord, Sim};

pub const PARTICLE_MAGIC: &[u8; 4] = b"CPRT";
pub const GRID_MAGIC: &[u8; 4] = b"CGRD";
pub const DUMP_VERSION: u32 = 1;

fn parse_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line: 0,
        msg: msg.into(),
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return parse_err(format!("truncated dump at byte {}", self.at));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return parse_err(format!("bad magic, expected {}", String::from_utf8_lossy(magic)));
        }
        let v = self.u32()?;
        if v != DUMP_VERSION {
            return parse_err(format!("unsupported dump version {v}"));
        }
        Ok(())
    }
}

/// Particle state as stored on disk: flat `n·d` arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleDump {
    pub d: usize,
    pub positions: Vec<f32>,
    pub velocities: Vec<f32>,
}

impl ParticleDump {
    pub fn n(&self) -> usize {
        self.positions.len() / self.d
    }
}

/// Header `CPRT`, version, n, d (u32 LE), then positions, then velocities.
pub fn encode_particles(frame: &FrameRecord, d: usize) -> Vec<u8> {
    let n = frame.positions.len();
    let mut out = Vec::with_capacity(16 + 8 * n * d);
    out.extend_from_slice(PARTICLE_MAGIC);
    for v in [DUMP_VERSION, n as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for set in [&frame.positions, &frame.velocities] {
        for p in set.iter() {
            for &x in &p[..d] {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_particles(bytes: &[u8]) -> Result<ParticleDump> {
    let mut r = Reader { bytes, at: 0 };
    r.header(PARTICLE_MAGIC)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    if !(2..=3).contains(&d) {
        return parse_err(format!("dimension {d} is not 2 or 3"));
    }
    let read = |r: &mut Reader| (0..n * d).map(|_| r.f32()).collect::<Result<Vec<f32>>>();
    let positions = read(&mut r)?;
    let velocities = read(&mut r)?;
    if r.at != bytes.len() {
        return parse_err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok(ParticleDump {
        d,
        positions,
        velocities,
    })
}

/// Header `CGRD`, version, d, nx, ny, nz (u32 LE), then one code byte per
/// cell with x fastest.
pub fn encode_grid(dims: &Dims, raster: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + raster.len());
    out.extend_from_slice(GRID_MAGIC);
    for v in [
        DUMP_VERSION,
        dims.d as u32,
        dims.n[0] as u32,
        dims.n[1] as u32,
        dims.n[2] as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(raster);
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<(Dims, Vec<u8>)> {
    let mut r = Reader { bytes, at: 0 };
    r.header(GRID_MAGIC)?;
    let d = r.u32()? as usize;
    let n = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let dims = Dims::new(d, n).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let cells = r.take(dims.len())?.to_vec();
    if r.at != bytes.len() {
        return parse_err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok((dims, cells))
}

pub const VOLUME_CSV_HEADER: &str =
    "frame,time,substeps,particles,emitted,volume,v_star,percent,alt_volume,alt_percent,\
n_deep,n_excess,n_move,paths,min_s_in,min_s_out,pressure_iterations,objective,checks_clean";

pub fn volume_csv_row(f: &FrameRecord) -> String {
    let b = f.band.unwrap_or_default();
    let v = &f.volume;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        f.frame,
        f.time,
        f.substeps,
        f.positions.len(),
        f.emitted,
        v.v,
        v.v_star,
        v.percent,
        v.alt_v,
        v.alt_percent,
        b.n_deep,
        b.n_excess,
        b.n_move,
        b.paths,
        b.min_s_in,
        b.min_s_out,
        f.solver.pressure_iterations,
        f.solver.objective,
        f.checks.clean()
    )
}

/// Range of volume percentages over the frames of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeSummary {
    pub frames: usize,
    pub min_percent: f64,
    pub max_percent: f64,
    pub min_alt_percent: f64,
    pub max_alt_percent: f64,
}

pub fn summarize_volume_csv(text: &str) -> Result<VolumeSummary> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column {name}"),
        })
    };
    let (pc, ac) = (col("percent")?, col("alt_percent")?);
    let mut s = VolumeSummary {
        frames: 0,
        min_percent: f64::INFINITY,
        max_percent: f64::NEG_INFINITY,
        min_alt_percent: f64::INFINITY,
        max_alt_percent: f64::NEG_INFINITY,
    };
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let get = |c: usize| -> Result<f64> {
            fields.get(c).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse {
                line: i + 2,
                msg: format!("bad value in column {}", header[c]),
            })
        };
        let (p, a) = (get(pc)?, get(ac)?);
        s.frames += 1;
        s.min_percent = s.min_percent.min(p);
        s.max_percent = s.max_percent.max(p);
        s.min_alt_percent = s.min_alt_percent.min(a);
        s.max_alt_percent = s.max_alt_percent.max(a);
    }
    if s.frames == 0 {
        return parse_err("volume file has no frames");
    }
    Ok(s)
}

fn rgb(c: u8, band: bool) -> [u8; 3] {
    const WHITE: [u8; 3] = [255, 255, 255];
    match c {
        code::WALL => [80, 80, 80],
        code::OBSTACLE => [150, 100, 60],
        code::SURFACE if band => [150, 210, 140],
        code::IN_BAND => [190, 215, 245],
        code::BAND_INTERFACE => [240, 165, 70],
        code::DEEP => [45, 65, 140],
        _ => WHITE,
    }
}

const PARTICLE_RGB: [u8; 3] = [25, 70, 220];

/// Binary PPM of a 2D frame, `scale` pixels per cell, y up. Band frames
/// color deep, interface, in-band and surface cells; other frames draw
/// particles over white.
pub fn render_frame_2d(frame: &FrameRecord, dims: &Dims, scale: usize, band: bool) -> Result<Vec<u8>> {
    if dims.d != 2 {
        return Err(Error::Unsupported(
            "rendering is 2D only; 3D frames export particle dumps".into(),
        ));
    }
    if scale == 0 {
        return Err(Error::Input("render scale must be positive".into()));
    }
    if frame.raster.len() != dims.len() {
        return Err(Error::Input(format!(
            "raster has {} cells, grid has {}",
            frame.raster.len(),
            dims.len()
        )));
    }
    let (w, h) = (dims.n[0] * scale, dims.n[1] * scale);
    let mut px = vec![0u8; w * h * 3];
    let mut put = |x: usize, y: usize, c: [u8; 3]| {
        let at = ((h - 1 - y) * w + x) * 3;
        px[at..at + 3].copy_from_slice(&c);
    };
    for y in 0..h {
        for x in 0..w {
            let cell = dims.index([x / scale, y / scale, 0]);
            put(x, y, rgb(frame.raster[cell], band));
        }
    }
    let r = (scale as f64 / 4.0).max(0.5);
    for p in &frame.positions {
        let (cx, cy) = (p[0] * scale as f64, p[1] * scale as f64);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y0 = (cy - r).floor().max(0.0) as usize;
        for y in y0..((cy + r).ceil() as usize).min(h) {
            for x in x0..((cx + r).ceil() as usize).min(w) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    put(x, y, PARTICLE_RGB);
                }
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene: String,
    pub seed: u64,
    pub frames_requested: usize,
    pub frames_written: usize,
    pub status: String,
    pub cellflow_version: String,
    pub config_version: u32,
    pub dump_version: u32,
    pub band_enabled: bool,
    pub band_r: i32,
    pub band_strategy: String,
    /// The scene text exactly as loaded; seed and band fields above override it.
    pub config: String,
}

impl Manifest {
    pub fn new(config: &SceneConfig, source_text: &str) -> Self {
        Self {
            scene: config.name.clone(),
            seed: config.rng_seed,
            frames_requested: config.step_limit,
            frames_written: 0,
            status: "running".into(),
            cellflow_version: env!("CARGO_PKG_VERSION").into(),
            config_version: CONFIG_VERSION,
            dump_version: DUMP_VERSION,
            band_enabled: config.band.enabled,
            band_r: config.band.r,
            band_strategy: config.band.strategy.name().into(),
            config: source_text.to_string(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields are plain values")
    }
}

/// Paths of the per-frame files inside an output directory.
pub fn frame_path(out: &Path, kind: &str, frame: usize, ext: &str) -> PathBuf {
    out.join("frames").join(format!("{kind}_{frame:05}.{ext}"))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub frames_written: usize,
    /// Error that stopped the run early, after the last valid frame was flushed.
    pub error: Option<Error>,
}

struct Writer<'a> {
    out: &'a Path,
    config: &'a SceneConfig,
    csv: String,
}

impl Writer<'_> {
    fn frame(&mut self, sim: &Sim, f: &FrameRecord) -> Result<()> {
        let dims = sim.dims();
        let out = self.out;
        let o = &self.config.output;
        if o.particles {
            fs::write(
                frame_path(out, "particles", f.frame, "cprt"),
                encode_particles(f, dims.d),
            )?;
        }
        if o.grid {
            fs::write(frame_path(out, "grid", f.frame, "cgrd"), encode_grid(&dims, &f.raster))?;
        }
        if o.render && dims.d == 2 {
            let img = render_frame_2d(f, &dims, o.render_scale, sim.band.is_some())?;
            fs::write(frame_path(out, "frame", f.frame, "ppm"), img)?;
        }
        if o.problems {
            if let Some(p) = &sim.last_problem {
                fs::write(frame_path(out, "problem", f.frame, "txt"), p.to_dump())?;
            }
        }
        let _ = writeln!(self.csv, "{}", volume_csv_row(f));
        fs::write(out.join("volume.csv"), &self.csv)?;
        Ok(())
    }
}

/// Runs `config.step_limit` frames, writing frame 0 (the initial state) and
/// every completed frame. A simulation error stops the run; the frames
/// already written stay valid and the manifest records the error.
pub fn run_to_dir(config: SceneConfig, source_text: &str, out: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(out.join("frames"))?;
    let mut manifest = Manifest::new(&config, source_text);
    fs::write(out.join("manifest.toml"), manifest.to_toml())?;
    let mut sim = Sim::new(config.clone())?;
    let mut w = Writer {
        out,
        config: &config,
        csv: format!("{VOLUME_CSV_HEADER}\n"),
    };
    let band = sim.band.as_ref().map(|b| BandFrameStats {
        n_deep: b.n_deep,
        ..Default::default()
    });
    let first = sim.record(0, Default::default(), Default::default(), band);
    w.frame(&sim, &first)?;
    let mut written = 1;
    let mut error = None;
    for _ in 0..config.step_limit {
        match sim.step_frame() {
            Ok(f) => {
                w.frame(&sim, &f)?;
                written += 1;
                log::info!(
                    "frame {} V={:.3}% alt={:.3}%",
                    f.frame,
                    f.volume.percent,
                    f.volume.alt_percent
                );
            }
            Err(e) => {
                log::error!("frame {} failed: {e}", sim.frame + 1);
                error = Some(e);
                break;
            }
        }
    }
    manifest.frames_written = written;
    manifest.status = match &error {
        None => "complete".into(),
        Some(e) => format!("stopped after frame {}: {e}", written - 1),
    };
    fs::write(out.join("manifest.toml"), manifest.to_toml())?;
    Ok(RunOutcome {
        frames_written: written,
        error,
    })
}
