//! Deterministic phantom ensembles.
//!
//! A phantom run has a gas layer that accumulates under a horizontal caprock
//! until injection stops and then recedes, a set of vertical dissolved-CO2
//! fingers sinking below it, and optionally a secondary plume that appears in
//! Box B at a configured spill time. The fields are analytic shapes, not a
//! flow solution.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::{s, Array3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Region};
use crate::ingest::timeseries::{fill_series, TimeSeriesTable};
use crate::ingest::{Manifest, RunEntry, RunKind};
use crate::metrics::{segment, segmentation_channels};
use crate::patching::{downsample, PatchSpec};
use crate::projection::rng;
use crate::volume::{FillFlag, SegmentationVolume, SpaceTimeVolume};

/// Finger development over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pulse {
    /// Fingers grow while injecting, then stall.
    Initial,
    /// Fingers grow during the first half of every period.
    Recurring,
    /// Fingers grow throughout.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub seed: u64,
    pub n_fingers: usize,
    /// Meters.
    pub finger_width: f64,
    /// Meters per hour.
    pub growth_rate: f64,
    pub pulse: Pulse,
    /// Hours.
    pub pulse_period: f64,
    /// Hours.
    pub injection_stop: f64,
    /// Hours; `None` means gas never reaches Box B.
    pub spill_time: Option<f64>,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            seed: 1,
            n_fingers: 6,
            finger_width: 0.03,
            growth_rate: 0.015,
            pulse: Pulse::Continuous,
            pulse_period: 4.0,
            injection_stop: 5.0,
            spill_time: Some(250.0 / 60.0),
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.growth_rate >= 0.0) {
            return Err(Error::Config("growth rate must be >= 0".into()));
        }
        if !(self.finger_width > 0.0) && self.n_fingers > 0 {
            return Err(Error::Config("finger width must be positive".into()));
        }
        if self.pulse == Pulse::Recurring && !(self.pulse_period > 0.0) {
            return Err(Error::Config("recurring pulses need a positive period".into()));
        }
        if !(self.injection_stop > 0.0) {
            return Err(Error::Config("injection stop must be positive".into()));
        }
        Ok(())
    }

    /// Finger growth time elapsed by `hours`.
    fn growth_hours(&self, hours: f64) -> f64 {
        match self.pulse {
            Pulse::Continuous => hours,
            Pulse::Initial => hours.min(self.injection_stop),
            Pulse::Recurring => {
                let p = self.pulse_period;
                let half = p / 2.0;
                (hours / p).floor() * half + (hours % p).min(half)
            }
        }
    }
}

/// Phantom geometry in meters. The defaults fit the benchmark-sized domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomLayout {
    pub caprock_y: f64,
    pub injection_x: f64,
    pub max_gas_thickness: f64,
    pub max_gas_half_width: f64,
    pub spill_point: (f64, f64),
    /// Regions written to the manifest; Box B receives the spill plume.
    pub boxes: Vec<Region>,
}

impl Default for PhantomLayout {
    fn default() -> Self {
        PhantomLayout {
            caprock_y: 0.55,
            injection_x: 1.95,
            max_gas_thickness: 0.12,
            max_gas_half_width: 0.6,
            spill_point: (0.55, 0.85),
            boxes: vec![
                Region::new("A", 1.1, 2.8, 0.0, 0.6),
                Region::new("B", 0.0, 1.1, 0.6, 1.2),
                Region::new("C", 1.1, 2.6, 0.1, 0.4),
            ],
        }
    }
}

const GAS_SATURATION: f64 = 0.85;
const FINGER_CONCENTRATION: f64 = 1.6;
const SPILL_SATURATION: f32 = 0.5;
const SPILL_CONCENTRATION: f32 = 1.2;
/// Pore volume per unit area (porosity times depth), m.
const PORE_DEPTH: f64 = 0.44 * 0.019;
const GAS_DENSITY: f64 = 1.8;

struct Finger {
    x: f64,
    rate_factor: f64,
}

fn fingers(params: &PhantomParams, layout: &PhantomLayout) -> Vec<Finger> {
    let mut r = rng(params.seed);
    let lo = layout.injection_x - layout.max_gas_half_width;
    let span = 2.0 * layout.max_gas_half_width;
    (0..params.n_fingers)
        .map(|f| {
            let base = lo + span * (f as f64 + 0.5) / params.n_fingers as f64;
            let jitter = r.random_range(-0.5..0.5) * params.finger_width;
            Finger {
                x: base + jitter,
                rate_factor: r.random_range(0.8..1.2),
            }
        })
        .collect()
}

fn snap(v: f64, min: f64, step: f64, n: usize) -> f64 {
    let i = ((v - min) / step).round().clamp(0.0, (n - 1) as f64);
    min + i * step
}

/// Generate one phantom run on `grid`.
pub fn generate_run(
    run_id: &str,
    params: &PhantomParams,
    layout: &PhantomLayout,
    grid: &GridSpec,
) -> Result<(SpaceTimeVolume, TimeSeriesTable)> {
    params.validate()?;
    let mut volume = SpaceTimeVolume::zeros(run_id, *grid)?;
    volume.provenance.fill(FillFlag::Measured);
    let (nt, ny, nx) = grid.dims()?;
    let fingers = fingers(params, layout);
    let finger_top = layout.caprock_y - layout.max_gas_thickness;
    let max_len = (finger_top - grid.y_min).max(0.0);
    let spill_center = (
        snap(layout.spill_point.0, grid.x_min, grid.dx, nx),
        snap(layout.spill_point.1, grid.y_min, grid.dy, ny),
    );
    let stop = params.injection_stop;
    let end_h = grid.t_max / 3600.0;

    for k in 0..nt {
        let hours = grid.t_at(k) / 3600.0;
        // gas grows linearly to full size at injection stop, then recedes to 40 %
        let extent = if hours <= stop {
            hours / stop
        } else {
            let tail = (end_h - stop).max(f64::EPSILON);
            1.0 - 0.6 * ((hours - stop) / tail).min(1.0)
        };
        let thickness = layout.max_gas_thickness * extent;
        let half_width = 0.05 + (layout.max_gas_half_width - 0.05) * extent;
        let grown = params.growth_hours(hours);
        let spill_radius = params
            .spill_time
            .filter(|&s| grid.t_at(k) >= s * 3600.0 - 1e-6)
            .map(|s| (0.03 + 0.04 * (hours - s)).min(0.2));

        let mut sat = volume.saturation.slice_mut(s![k, .., ..]);
        for j in 0..ny {
            let y = grid.y_at(j);
            let depth = layout.caprock_y - y;
            if depth < 0.0 || depth > thickness || hours == 0.0 {
                continue;
            }
            for i in 0..nx {
                let x = grid.x_at(i);
                if (x - layout.injection_x).abs() <= half_width {
                    let v = GAS_SATURATION * (1.0 - 0.5 * depth / layout.max_gas_thickness);
                    sat[[j, i]] = v as f32;
                }
            }
        }

        let mut con = volume.concentration.slice_mut(s![k, .., ..]);
        for finger in &fingers {
            let len = (params.growth_rate * finger.rate_factor * grown).min(max_len);
            if len <= 0.0 {
                continue;
            }
            let half = params.finger_width / 2.0;
            for j in 0..ny {
                let depth = finger_top - grid.y_at(j);
                if depth < 0.0 || depth > len {
                    continue;
                }
                for i in 0..nx {
                    let dx = (grid.x_at(i) - finger.x).abs();
                    if dx > half {
                        continue;
                    }
                    let lateral = 1.0 - 0.5 * (dx / half).powi(2);
                    let along = 1.0 - 0.6 * depth / max_len.max(f64::EPSILON);
                    let v = (FINGER_CONCENTRATION * lateral * along) as f32;
                    if v > con[[j, i]] {
                        con[[j, i]] = v;
                    }
                }
            }
        }

        if let Some(radius) = spill_radius {
            for j in 0..ny {
                for i in 0..nx {
                    let d = ((grid.x_at(i) - spill_center.0).powi(2)
                        + (grid.y_at(j) - spill_center.1).powi(2))
                    .sqrt();
                    if d <= radius {
                        volume.saturation[[k, j, i]] = volume.saturation[[k, j, i]].max(SPILL_SATURATION);
                    }
                    if d <= 1.5 * radius {
                        volume.concentration[[k, j, i]] =
                            volume.concentration[[k, j, i]].max(SPILL_CONCENTRATION);
                    }
                }
            }
        }
    }

    let series = integrate_series(&volume, layout)?;
    Ok((volume, series))
}

/// Box integrals and global measurables of a generated volume.
fn integrate_series(volume: &SpaceTimeVolume, layout: &PhantomLayout) -> Result<TimeSeriesTable> {
    let grid = &volume.grid;
    let nt = volume.nt();
    let cell = grid.dx * grid.dy * PORE_DEPTH;
    let mut columns: IndexMap<String, Vec<Option<f64>>> = IndexMap::new();
    for b in &layout.boxes {
        let w = b.cells(grid)?;
        let mut mobile = Vec::with_capacity(nt);
        let mut dissolved = Vec::with_capacity(nt);
        for k in 0..nt {
            let sat = volume.saturation.slice(s![k, w.y0..w.y1, w.x0..w.x1]);
            let con = volume.concentration.slice(s![k, w.y0..w.y1, w.x0..w.x1]);
            mobile.push(Some(sat.iter().map(|&v| v as f64).sum::<f64>() * cell * GAS_DENSITY));
            dissolved.push(Some(con.iter().map(|&v| v as f64).sum::<f64>() * cell));
        }
        columns.insert(format!("mobile_{}", b.name), mobile);
        columns.insert(format!("dissolved_{}", b.name), dissolved);
    }
    let mut total = Vec::with_capacity(nt);
    let mut p1 = Vec::with_capacity(nt);
    let mut p2 = Vec::with_capacity(nt);
    for k in 0..nt {
        let gas: f64 = volume.saturation.slice(s![k, .., ..]).iter().map(|&v| v as f64).sum::<f64>()
            * cell
            * GAS_DENSITY;
        let dis: f64 = volume.concentration.slice(s![k, .., ..]).iter().map(|&v| v as f64).sum::<f64>() * cell;
        total.push(Some(gas + dis));
        p1.push(Some(1.1e5 + 2.0e5 * gas));
        p2.push(Some(1.05e5 + 1.5e5 * gas + 5.0e4 * dis));
    }
    columns.insert("pressure_1".into(), p1);
    columns.insert("pressure_2".into(), p2);
    columns.insert("total_mass".into(), total);
    if let Some(c) = layout.boxes.iter().find(|b| b.name == "C") {
        let w = c.cells(grid)?;
        let conv = (0..nt)
            .map(|k| {
                let con = volume.concentration.slice(s![k, w.y0..w.y1, w.x0..w.x1]);
                let mut acc = 0.0;
                for row in con.rows() {
                    for pair in row.as_slice().unwrap_or(&row.to_vec()).windows(2) {
                        acc += (pair[1] as f64 - pair[0] as f64).abs();
                    }
                }
                Some(acc * grid.dy)
            })
            .collect();
        columns.insert("convection".into(), conv);
    }
    Ok(TimeSeriesTable {
        run_id: volume.run_id.clone(),
        times: grid.times(),
        columns: columns.into_iter().map(|(k, v)| (k, fill_series(&v))).collect(),
    })
}

/// Number of stand-in features per patch; matches the embedding width
/// used by the whole-patch model.
pub const PHANTOM_EMBEDDING_DIM: usize = 64;
pub const PHANTOM_SUB_EMBEDDING_DIM: usize = 16;

/// Block means over a `by x bx` partition of each field, for the first and
/// last step of a patch, concatenated.
fn block_features(sat: &Array3<f64>, con: &Array3<f64>, by: usize, bx: usize) -> Vec<f64> {
    let (t, ny, nx) = sat.dim();
    let mut out = Vec::with_capacity(2 * 2 * by * bx);
    for field in [sat, con] {
        for step in [0, t - 1] {
            for a in 0..by {
                for b in 0..bx {
                    let ys = a * ny / by..((a + 1) * ny / by).max(a * ny / by + 1).min(ny);
                    let xs = b * nx / bx..((b + 1) * nx / bx).max(b * nx / bx + 1).min(nx);
                    let block = field.slice(s![step, ys, xs]);
                    out.push(block.iter().sum::<f64>() / block.len().max(1) as f64);
                }
            }
        }
    }
    out
}

/// `(patch, sub-patch, features)`.
pub type EmbeddingRow = (usize, Option<usize>, Vec<f64>);

/// Deterministic content-derived feature vectors standing in for a trained
/// patch encoder: rows of `(patch, sub, features)`.
pub fn phantom_embeddings(
    saturation: &Array3<f32>,
    concentration: &Array3<f32>,
    spec: &PatchSpec,
) -> Result<Vec<EmbeddingRow>> {
    spec.validate()?;
    let (nt, _, _) = saturation.dim();
    let n = spec.num_patches(nt);
    let used = n * spec.temporal_size;
    let sat = downsample(saturation.slice(s![..used, .., ..]), spec.spatial_downsample);
    let con = downsample(concentration.slice(s![..used, .., ..]), spec.spatial_downsample);
    let (_, dy, dx) = sat.dim();
    let subs = spec.sub_windows(dy, dx)?;
    let mut rows = Vec::new();
    for p in 0..n {
        let ts = p * spec.temporal_size..(p + 1) * spec.temporal_size;
        let ps = sat.slice(s![ts.clone(), .., ..]).to_owned();
        let pc = con.slice(s![ts, .., ..]).to_owned();
        if subs.is_empty() {
            rows.push((p, None, block_features(&ps, &pc, 4, 4)));
        } else {
            for (si, w) in subs.iter().enumerate() {
                let ss = ps.slice(s![.., w.y0..w.y1, w.x0..w.x1]).to_owned();
                let sc = pc.slice(s![.., w.y0..w.y1, w.x0..w.x1]).to_owned();
                rows.push((p, Some(si), block_features(&ss, &sc, 2, 2)));
            }
        }
    }
    Ok(rows)
}

/// One run of a generated ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunVariant {
    pub id: String,
    pub kind: RunKind,
    pub color: Option<String>,
    pub params: PhantomParams,
}

impl RunVariant {
    pub fn simulation(id: impl Into<String>, params: PhantomParams) -> Self {
        RunVariant {
            id: id.into(),
            kind: RunKind::Simulation,
            color: None,
            params,
        }
    }

    /// An experiment-like run: the phantom thresholded into segmentation maps.
    pub fn experiment(id: impl Into<String>, params: PhantomParams) -> Self {
        RunVariant {
            kind: RunKind::Experiment,
            ..Self::simulation(id, params)
        }
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Simulation variants with staggered growth, finger counts, pulse modes and
/// spill times, followed by `experiments` experiment-like runs.
pub fn standard_variants(simulations: usize, experiments: usize, seed: u64) -> Vec<RunVariant> {
    let pulses = [Pulse::Continuous, Pulse::Initial, Pulse::Recurring];
    let mut out = Vec::new();
    for i in 0..simulations {
        let params = PhantomParams {
            seed: seed.wrapping_add(i as u64),
            n_fingers: 4 + (i % 4),
            growth_rate: 0.010 + 0.003 * i as f64,
            pulse: pulses[i % 3],
            spill_time: Some((250.0 + 10.0 * i as f64) / 60.0),
            ..PhantomParams::default()
        };
        out.push(RunVariant::simulation(format!("sim{}", i + 1), params));
    }
    for e in 0..experiments {
        let params = PhantomParams {
            seed: seed.wrapping_add(1000 + e as u64),
            n_fingers: 5,
            growth_rate: 0.012,
            spill_time: Some((250.0 + 10.0 * e as f64) / 60.0),
            ..PhantomParams::default()
        };
        out.push(RunVariant::experiment(format!("exp{}", e + 1), params));
    }
    out
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn frame_name(grid: &GridSpec, k: usize) -> Result<String> {
    let t = grid.t_at(k);
    if t.fract() != 0.0 || t < 0.0 {
        return Err(Error::Config(format!(
            "frame time {t} s is not a whole number of seconds"
        )));
    }
    Ok(format!("frame_{:06}.csv", t as u64))
}

/// Write the measured steps of a volume as frame files under `dir`.
pub fn write_frames(volume: &SpaceTimeVolume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let grid = &volume.grid;
    let (nt, ny, nx) = grid.dims()?;
    let xs: Vec<String> = (0..nx).map(|i| grid.x_at(i).to_string()).collect();
    let ys: Vec<String> = (0..ny).map(|j| grid.y_at(j).to_string()).collect();
    (0..nt)
        .into_par_iter()
        .filter(|&k| volume.provenance[k] == FillFlag::Measured)
        .try_for_each(|k| -> Result<()> {
            let path = dir.join(frame_name(grid, k)?);
            let mut w = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
            writeln!(w, "x,y,saturation,concentration").map_err(io_err(&path))?;
            for (j, y) in ys.iter().enumerate() {
                for (i, x) in xs.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        x,
                        y,
                        volume.saturation[[k, j, i]],
                        volume.concentration[[k, j, i]]
                    )
                    .map_err(io_err(&path))?;
                }
            }
            w.flush().map_err(io_err(&path))
        })
}

/// Write the measured steps of a segmentation as `x,y,class` frame files.
pub fn write_class_frames(seg: &SegmentationVolume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let grid = &seg.grid;
    let (nt, ny, nx) = grid.dims()?;
    (0..nt)
        .into_par_iter()
        .filter(|&k| seg.provenance[k] == FillFlag::Measured)
        .try_for_each(|k| -> Result<()> {
            let path = dir.join(frame_name(grid, k)?);
            let mut w = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
            writeln!(w, "x,y,class").map_err(io_err(&path))?;
            for j in 0..ny {
                for i in 0..nx {
                    writeln!(w, "{},{},{}", grid.x_at(i), grid.y_at(j), seg.classes[[k, j, i]])
                        .map_err(io_err(&path))?;
                }
            }
            w.flush().map_err(io_err(&path))
        })
}

fn write_embeddings(path: &Path, run: &str, rows: &[EmbeddingRow]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let dim = rows.first().map(|r| r.2.len()).unwrap_or(0);
    let names: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    writeln!(w, "run,patch,sub,{}", names.join(",")).map_err(io_err(path))?;
    for (p, sub, v) in rows {
        let sub = sub.map(|s| s.to_string()).unwrap_or_default();
        let vals: Vec<String> = v.iter().map(f64::to_string).collect();
        writeln!(w, "{run},{p},{sub},{}", vals.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Everything written for one run, kept in memory for callers that want to
/// compare against what ingest reads back.
#[derive(Debug, Clone)]
pub struct GeneratedRun {
    pub entry: RunEntry,
    pub volume: SpaceTimeVolume,
    pub series: TimeSeriesTable,
    pub segmentation: Option<SegmentationVolume>,
}

/// Threshold used to turn experiment-like phantoms into segmentation maps.
pub const EXPERIMENT_THRESHOLD: f64 = 0.001;

/// Write an ensemble (frames, time series, stand-in embeddings and
/// `manifest.toml`) under `out_dir`.
pub fn generate_ensemble(
    variants: &[RunVariant],
    layout: &PhantomLayout,
    grid: &GridSpec,
    out_dir: &Path,
) -> Result<(Manifest, Vec<GeneratedRun>)> {
    grid.validate()?;
    for b in &layout.boxes {
        b.validate(grid)?;
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    // coarse grids may be smaller than one sub-patch tile
    let subdivided_fits = {
        let spec = PatchSpec::embedding_subdivided();
        let (dy, dx) = spec.downsampled_dims(grid.ny(), grid.nx());
        spec.sub_windows(dy, dx).is_ok_and(|w| !w.is_empty())
    };
    let runs: Vec<GeneratedRun> = variants
        .par_iter()
        .enumerate()
        .map(|(idx, v)| -> Result<GeneratedRun> {
            let (volume, series) = generate_run(&v.id, &v.params, layout, grid)?;
            let rel = PathBuf::from(&v.id);
            let run_dir = out_dir.join(&rel);
            fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
            let color = v
                .color
                .clone()
                .unwrap_or_else(|| PALETTE[idx % PALETTE.len()].to_string());
            let mut entry = RunEntry {
                id: v.id.clone(),
                color: Some(color),
                kind: v.kind,
                data: rel.join("frames"),
                timeseries: None,
                embeddings: Some(rel.join("embeddings.csv")),
                embeddings_subdivided: Some(rel.join("embeddings_sub.csv")),
            };
            let (sat, con, segmentation) = match v.kind {
                RunKind::Simulation => {
                    write_frames(&volume, &run_dir.join("frames"))?;
                    let ts = rel.join("timeseries.csv");
                    series.write_csv(&out_dir.join(&ts))?;
                    entry.timeseries = Some(ts);
                    (volume.saturation.clone(), volume.concentration.clone(), None)
                }
                RunKind::Experiment => {
                    let seg = segment(&volume, EXPERIMENT_THRESHOLD);
                    write_class_frames(&seg, &run_dir.join("frames"))?;
                    let ch = segmentation_channels(&seg);
                    (ch.gas_presence, ch.co2_presence, Some(seg))
                }
            };
            write_embeddings(
                &run_dir.join("embeddings.csv"),
                &v.id,
                &phantom_embeddings(&sat, &con, &PatchSpec::embedding())?,
            )?;
            if subdivided_fits {
                write_embeddings(
                    &run_dir.join("embeddings_sub.csv"),
                    &v.id,
                    &phantom_embeddings(&sat, &con, &PatchSpec::embedding_subdivided())?,
                )?;
            } else {
                entry.embeddings_subdivided = None;
            }
            Ok(GeneratedRun {
                entry,
                volume,
                series,
                segmentation,
            })
        })
        .collect::<Result<_>>()?;

    let mut manifest = Manifest::new(*grid);
    manifest.boxes = layout.boxes.clone();
    manifest.runs = runs.iter().map(|r| r.entry.clone()).collect();
    manifest.base_dir = out_dir.to_path_buf();
    manifest.save(&out_dir.join("manifest.toml"))?;
    Ok((manifest, runs))
}
