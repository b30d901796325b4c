//! Dice scoring, the end-to-end phantom pipeline and parameter sweeps.
//!
//! Every intermediate that the command-line tools pass through a file is
//! rounded the same way here (volumes and mesh vertices to `f32`), so a
//! pipeline run and the chained subcommands produce identical results.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{correct_outliers, estimate_boundary, BoundaryGrid};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::{save_volume, write_json};
use crate::phantom::{add_complex_gaussian_noise, generate_phantom, simulate_dwi};
use crate::scalar::Real;
use crate::surface::{export_ply, triangulate, voxelize, SurfaceMesh};
use crate::tensor::{DiffusionTensor, TensorFitter};
use crate::tracking::{extract_centerline, filter_by_rois, seed_points, track_seeds, Centerline, Fiber};
use crate::volume::{BinaryMask, DwiVolume, TensorVolume};

/// Build identifier recorded in every report.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// File names used for intermediate artifacts, by the pipeline and in the
/// documented subcommand chain.
pub mod artifacts {
    pub const PHANTOM_TENSORS: &str = "phantom_tensors.raw";
    pub const TRUTH_MASK: &str = "truth_mask.raw";
    pub const ANALYTIC_CENTERLINE: &str = "analytic_centerline.json";
    pub const DWI: &str = "dwi.raw";
    pub const DWI_NOISY: &str = "dwi_noisy.raw";
    pub const FIT_TENSORS: &str = "fit_tensors.raw";
    pub const FIBERS: &str = "fibers.json";
    pub const CENTERLINE: &str = "centerline.json";
    pub const BOUNDARY: &str = "boundary.json";
    pub const MESH: &str = "mesh.ply";
    pub const ESTIMATE_MASK: &str = "estimate_mask.raw";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub a: usize,
    pub b: usize,
    pub both: usize,
}

impl Overlap {
    /// `2|A∩B| / (|A|+|B|)`, 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        if self.a + self.b == 0 {
            1.0
        } else {
            2.0 * self.both as f64 / (self.a + self.b) as f64
        }
    }
}

pub fn overlap<T: Real>(a: &BinaryMask<T>, b: &BinaryMask<T>) -> Result<Overlap> {
    if a.geometry != b.geometry {
        return Err(Error::GeometryMismatch(format!(
            "dims {:?} vs {:?}, spacing {:?} vs {:?}, origin {:?} vs {:?}",
            a.geometry.dims,
            b.geometry.dims,
            a.geometry.spacing.to_array(),
            b.geometry.spacing.to_array(),
            a.geometry.origin.to_array(),
            b.geometry.origin.to_array()
        )));
    }
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        both += (x & y) as usize;
    }
    Ok(Overlap { a: na, b: nb, both })
}

/// Dice similarity coefficient of two masks on the same grid.
pub fn dice<T: Real>(a: &BinaryMask<T>, b: &BinaryMask<T>) -> Result<f64> {
    Ok(overlap(a, b)?.dice())
}

/// Fits a tensor in every voxel; also returns how many non-positive
/// signals were clamped.
pub fn fit_dwi<T: Real>(dwi: &DwiVolume<T>) -> Result<(TensorVolume<T>, usize)> {
    let fitter = TensorFitter::new(&dwi.acq)?;
    let fits: Vec<Result<_>> = (0..dwi.geometry.voxel_count())
        .into_par_iter()
        .map(|i| {
            let (s0, s) = dwi.voxel_signals(i);
            fitter.fit(&s, s0)
        })
        .collect();
    let mut tensors: Vec<DiffusionTensor<T>> = Vec::with_capacity(fits.len());
    let mut clamped = 0;
    for f in fits {
        let f = f?;
        clamped += f.clamped;
        tensors.push(f.tensor);
    }
    Ok((TensorVolume::from_tensors(dwi.geometry, &tensors)?, clamped))
}

/// Result of tracking between the configured ROIs.
#[derive(Debug, Clone)]
pub struct TrackedBundle {
    pub seeds: usize,
    pub tracked: usize,
    /// Fibers visiting both ROIs, cut and oriented from `roi_a` to `roi_b`.
    pub kept: Vec<Fiber<f64>>,
}

/// Seeds, tracks and ROI-filters fibers on `v` as configured.
pub fn track_bundle(v: &TensorVolume<f64>, cfg: &Config) -> Result<TrackedBundle> {
    let torus = cfg.phantom_spec()?.torus();
    let (a, b, seed_roi) = cfg.tracking.rois(&torus)?;
    let params = cfg.tracking.params();
    let seeds = seed_points(v, &seed_roi, params.fa_stop)?;
    let fibers = track_seeds(v, &seeds, &params)?;
    let kept = filter_by_rois(&fibers, &a, &b);
    if kept.is_empty() {
        return Err(Error::EmptyBundle);
    }
    Ok(TrackedBundle {
        seeds: seeds.len(),
        tracked: fibers.len(),
        kept,
    })
}

/// Bundle centerline with `cfg.ray.n` points.
pub fn bundle_centerline(kept: &[Fiber<f64>], cfg: &Config) -> Result<Centerline<f64>> {
    extract_centerline(kept, cfg.ray.n)
}

/// Resamples the centerline to `n` layers, casts rays and corrects
/// outliers. Returns the raw and the corrected lattice.
pub fn boundary_from_centerline(
    v: &TensorVolume<f64>,
    c: &Centerline<f64>,
    cfg: &Config,
) -> Result<(BoundaryGrid<f64>, BoundaryGrid<f64>)> {
    let c = c.resampled(cfg.ray.n)?;
    let raw = estimate_boundary(v, &c, &cfg.ray, &cfg.criteria)?;
    let corrected = correct_outliers(&raw, &cfg.outlier)?;
    Ok((raw, corrected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub truth_voxels: usize,
    pub estimated_voxels: usize,
    pub overlap_voxels: usize,
    pub clamped_signals: usize,
    /// Tracking counts; absent with the analytic centerline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fibers_tracked: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fibers_kept: Option<usize>,
    pub rays_corrected: usize,
    pub outlier_passes: usize,
    pub outlier_converged: bool,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

/// Outcome of one pipeline run. Without timings it is a pure function of
/// the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub noise_seed: u64,
    pub config: Config,
    pub dsc: f64,
    pub counts: RunCounts,
    /// Ray stop reasons before outlier correction.
    pub stop_reasons: BTreeMap<String, usize>,
    /// Mean boundary radius after correction, mm.
    pub mean_radius_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<Vec<StageTiming>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record wall-clock time per stage (makes reports non-reproducible).
    pub timings: bool,
}

struct Stages {
    enabled: bool,
    last: Instant,
    times: Vec<StageTiming>,
}

impl Stages {
    fn run<R>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let r = f().map_err(|e| e.in_stage(stage))?;
        if self.enabled {
            let now = Instant::now();
            self.times.push(StageTiming {
                stage: stage.into(),
                ms: (now - self.last).as_secs_f64() * 1e3,
            });
            self.last = now;
        }
        Ok(r)
    }
}

struct Artifacts(Option<PathBuf>);

impl Artifacts {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.0.as_ref().map(|d| d.join(name))
    }
}

/// A finished run with the products behind its report.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    /// Boundary lattice before outlier correction.
    pub raw_boundary: BoundaryGrid<f64>,
    pub boundary: BoundaryGrid<f64>,
    /// Mesh as voxelized, vertices rounded to `f32`.
    pub mesh: SurfaceMesh<f64>,
    pub truth: BinaryMask<f64>,
    pub estimate: BinaryMask<f64>,
}

pub fn run_pipeline(cfg: &Config) -> Result<RunReport> {
    run_pipeline_with(cfg, &RunOptions::default())
}

pub fn run_pipeline_with(cfg: &Config, opts: &RunOptions) -> Result<RunReport> {
    Ok(execute_pipeline(cfg, opts)?.report)
}

/// phantom → simulate → noise → fit → centerline → boundary → mesh →
/// voxelize → dice. Errors carry the failing stage.
pub fn execute_pipeline(cfg: &Config, opts: &RunOptions) -> Result<PipelineRun> {
    cfg.validate()?;
    let out = Artifacts(cfg.keep_intermediates.then(|| cfg.intermediates_dir.clone()));
    if let Some(dir) = &out.0 {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.as_path(), e))?;
    }
    let mut st = Stages {
        enabled: opts.timings,
        last: Instant::now(),
        times: Vec::new(),
    };
    let spec = cfg.phantom_spec()?;

    let phantom = st.run("phantom", || {
        let mut ph = generate_phantom(&spec)?;
        ph.tensors = ph.tensors.quantized();
        if let Some(p) = out.path(artifacts::PHANTOM_TENSORS) {
            save_volume(&ph.tensors.clone().into(), p)?;
        }
        if let Some(p) = out.path(artifacts::TRUTH_MASK) {
            save_volume(&ph.mask.clone().into(), p)?;
        }
        if let Some(p) = out.path(artifacts::ANALYTIC_CENTERLINE) {
            write_json(&ph.centerline, p)?;
        }
        Ok(ph)
    })?;

    let dwi = st.run("simulate", || {
        let d = simulate_dwi(&phantom.tensors, &spec.acq)?.quantized();
        if let Some(p) = out.path(artifacts::DWI) {
            save_volume(&d.clone().into(), p)?;
        }
        Ok(d)
    })?;

    let noisy = st.run("noise", || {
        let d = match cfg.phantom.snr {
            Some(snr) => add_complex_gaussian_noise(&dwi, snr, cfg.noise_seed())?.quantized(),
            None => dwi,
        };
        if let Some(p) = out.path(artifacts::DWI_NOISY) {
            save_volume(&d.clone().into(), p)?;
        }
        Ok(d)
    })?;

    let (fit, clamped) = st.run("fit", || {
        let (v, clamped) = fit_dwi(&noisy)?;
        let v = v.quantized();
        if let Some(p) = out.path(artifacts::FIT_TENSORS) {
            save_volume(&v.clone().into(), p)?;
        }
        Ok((v, clamped))
    })?;
    drop(noisy);

    let (centerline, bundle) = st.run("centerline", || {
        let (c, bundle) = if cfg.use_analytic_centerline {
            (phantom.centerline.clone(), None)
        } else {
            let b = track_bundle(&fit, cfg)?;
            if let Some(p) = out.path(artifacts::FIBERS) {
                write_json(&b.kept, p)?;
            }
            (bundle_centerline(&b.kept, cfg)?, Some(b))
        };
        if let Some(p) = out.path(artifacts::CENTERLINE) {
            write_json(&c, p)?;
        }
        Ok((c, bundle))
    })?;

    let (raw, grid) = st.run("boundary", || {
        let (raw, grid) = boundary_from_centerline(&fit, &centerline, cfg)?;
        if let Some(p) = out.path(artifacts::BOUNDARY) {
            write_json(&grid, p)?;
        }
        Ok((raw, grid))
    })?;

    let mesh = st.run("mesh", || {
        let m = triangulate(&grid)?;
        if let Some(p) = out.path(artifacts::MESH) {
            export_ply(&m, p)?;
        }
        Ok(m.quantized())
    })?;

    let estimate = st.run("voxelize", || {
        let e = voxelize(&mesh, &spec.grid)?;
        if let Some(p) = out.path(artifacts::ESTIMATE_MASK) {
            save_volume(&e.clone().into(), p)?;
        }
        Ok(e)
    })?;

    let ov = st.run("dice", || overlap(&phantom.mask, &estimate))?;

    let summary = grid.outlier.expect("correct_outliers records a summary");
    let mut stop_reasons = BTreeMap::new();
    for (reason, count) in raw.stop_counts() {
        let name = serde_json::to_value(reason)?
            .as_str()
            .map(str::to_owned)
            .unwrap_or_default();
        stop_reasons.insert(name, count);
    }
    let radii = grid.radii();
    let mean_radius_mm = radii.iter().sum::<f64>() / radii.len() as f64;

    let report = RunReport {
        version: VERSION.into(),
        seed: cfg.seed,
        noise_seed: cfg.noise_seed(),
        config: cfg.clone(),
        dsc: ov.dice(),
        counts: RunCounts {
            truth_voxels: ov.a,
            estimated_voxels: ov.b,
            overlap_voxels: ov.both,
            clamped_signals: clamped,
            seeds: bundle.as_ref().map(|b| b.seeds),
            fibers_tracked: bundle.as_ref().map(|b| b.tracked),
            fibers_kept: bundle.as_ref().map(|b| b.kept.len()),
            rays_corrected: summary.corrected_entries,
            outlier_passes: summary.passes,
            outlier_converged: summary.converged,
            mesh_vertices: mesh.vertices.len(),
            mesh_triangles: mesh.triangles.len(),
        },
        stop_reasons,
        mean_radius_mm,
        timings_ms: opts.timings.then_some(st.times),
    };
    Ok(PipelineRun {
        report,
        raw_boundary: raw,
        boundary: grid,
        mesh,
        truth: phantom.mask,
        estimate,
    })
}

/// One `(n, k, d, seed)` run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub n: usize,
    pub k: usize,
    pub d: f64,
    pub seed: u64,
    pub dsc: std::result::Result<f64, String>,
    pub runtime_ms: f64,
}

/// Seed average of one `(n, k, d)` cell; `None` if every seed failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMean {
    pub n: usize,
    pub k: usize,
    pub d: f64,
    pub dsc: Option<f64>,
    pub succeeded: usize,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// In `n`, `k`, `d`, seed order.
    pub cells: Vec<SweepCell>,
    /// In `n`, `k`, `d` order.
    pub means: Vec<SweepMean>,
}

impl SweepResult {
    pub fn mean(&self, n: usize, k: usize, d: f64) -> Option<f64> {
        self.means
            .iter()
            .find(|m| m.n == n && m.k == k && m.d == d)
            .and_then(|m| m.dsc)
    }

    /// CSV with header `n,k,d,seed,dsc,runtime_ms`: each group's seed rows
    /// followed by its `mean` row. Failed runs have `dsc = error:<message>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "k", "d", "seed", "dsc", "runtime_ms"])?;
        let per_group = self.cells.len() / self.means.len().max(1);
        for (g, m) in self.means.iter().enumerate() {
            for c in &self.cells[g * per_group..(g + 1) * per_group] {
                let dsc = match &c.dsc {
                    Ok(v) => v.to_string(),
                    Err(e) => format!("error:{e}"),
                };
                out.write_record([
                    c.n.to_string(),
                    c.k.to_string(),
                    c.d.to_string(),
                    c.seed.to_string(),
                    dsc,
                    format!("{:.3}", c.runtime_ms),
                ])?;
            }
            let dsc = match m.dsc {
                Some(v) => v.to_string(),
                None => "error:no successful seeds".into(),
            };
            out.write_record([
                m.n.to_string(),
                m.k.to_string(),
                m.d.to_string(),
                "mean".into(),
                dsc,
                format!("{:.3}", m.runtime_ms),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Configuration of one sweep cell: the base with `ray.n/k/d` and `seed`
/// replaced and intermediates disabled.
pub fn cell_config(base: &Config, n: usize, k: usize, d: f64, seed: u64) -> Config {
    let mut c = base.clone();
    c.ray.n = n;
    c.ray.k = k;
    c.ray.d = d;
    c.seed = seed;
    c.keep_intermediates = false;
    c
}

/// Runs every cell of `cfg.sweep` in parallel. Failing cells are recorded,
/// not propagated; output order is fixed by cell index.
pub fn sweep(cfg: &Config) -> Result<SweepResult> {
    cfg.validate()?;
    let s = &cfg.sweep;
    let mut grid = Vec::new();
    for &n in &s.n {
        for &k in &s.k {
            for &d in &s.d {
                for &seed in &s.seeds {
                    grid.push((n, k, d, seed));
                }
            }
        }
    }
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(n, k, d, seed)| {
            let start = Instant::now();
            let dsc = run_pipeline(&cell_config(cfg, n, k, d, seed))
                .map(|r| r.dsc)
                .map_err(|e| e.to_string());
            SweepCell {
                n,
                k,
                d,
                seed,
                dsc,
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
            }
        })
        .collect();
    let means = cells
        .chunks(s.seeds.len())
        .map(|group| {
            let ok: Vec<f64> = group.iter().filter_map(|c| c.dsc.as_ref().ok().copied()).collect();
            SweepMean {
                n: group[0].n,
                k: group[0].k,
                d: group[0].d,
                dsc: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                succeeded: ok.len(),
                runtime_ms: group.iter().map(|c| c.runtime_ms).sum::<f64>() / group.len() as f64,
            }
        })
        .collect();
    Ok(SweepResult { cells, means })
}

/// Mean DSC of `run_pipeline` over `seeds` for one configuration.
pub fn mean_dsc(cfg: &Config, seeds: &[u64]) -> Result<f64> {
    let runs: Vec<Result<f64>> = seeds
        .par_iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.seed = s;
            c.keep_intermediates = false;
            run_pipeline(&c).map(|r| r.dsc)
        })
        .collect();
    let dscs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(dscs.iter().sum::<f64>() / dscs.len().max(1) as f64)
}

/// Writes `report` as pretty JSON followed by a newline.
pub fn report_json(report: &RunReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridGeometry;

    fn mask(bits: &[u8]) -> BinaryMask<f64> {
        BinaryMask::new(GridGeometry::unit([bits.len(), 1, 1]).unwrap(), bits.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dice(&mask(&[0; 4]), &mask(&[0; 4])).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(&[1, 0, 1, 0])).unwrap(), 0.5);
    }

    #[test]
    fn dice_half_overlap_of_hundred() {
        let mut x = vec![0u8; 150];
        let mut y = vec![0u8; 150];
        x[..100].fill(1);
        y[50..].fill(1);
        assert_eq!(dice(&mask(&x), &mask(&y)).unwrap(), 0.5);
    }

    #[test]
    fn dice_rejects_geometry_mismatch() {
        let e = dice(&mask(&[1, 0]), &mask(&[1, 0, 0])).unwrap_err();
        assert!(matches!(e, Error::GeometryMismatch(_)));
    }

    #[test]
    fn pipeline_errors_carry_stage() {
        let mut c = Config::default();
        c.phantom.snr = None;
        c.use_analytic_centerline = false;
        c.tracking.seed_roi = Some(crate::tracking::Roi::new(crate::geometry::Vec3::new(-30.0, -30.0, 0.0), 1.0).unwrap());
        let e = run_pipeline(&c).unwrap_err();
        assert!(matches!(e, Error::Stage { stage: "centerline", .. }), "{e}");
    }

    #[test]
    fn sweep_rows_group_seeds_then_mean() {
        let r = SweepResult {
            cells: vec![
                SweepCell { n: 33, k: 16, d: 0.5, seed: 1, dsc: Ok(0.8), runtime_ms: 1.0 },
                SweepCell { n: 33, k: 16, d: 0.5, seed: 2, dsc: Err("boom, bad".into()), runtime_ms: 3.0 },
            ],
            means: vec![SweepMean { n: 33, k: 16, d: 0.5, dsc: Some(0.8), succeeded: 1, runtime_ms: 2.0 }],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,k,d,seed,dsc,runtime_ms");
        assert_eq!(lines[1], "33,16,0.5,1,0.8,1.000");
        assert_eq!(lines[2], "33,16,0.5,2,\"error:boom, bad\",3.000");
        assert_eq!(lines[3], "33,16,0.5,mean,0.8,2.000");
    }
}
