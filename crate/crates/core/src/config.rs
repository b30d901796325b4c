//! Run configuration: one JSON document covering the phantom, tracking,
//! ray casting, outlier correction and sweep axes, plus dotted-path
//! overrides.
//!
//! All randomness derives from `seed`. Stage `i` of the pipeline uses
//! `seed + i`; only the noise stage ([`NOISE_STAGE`]) draws random numbers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::boundary::{BoundaryCriteria, OutlierParams, RayCastParams};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::phantom::{PhantomSpec, TorusArc};
use crate::tensor::AcquisitionSpec;
use crate::tracking::{Roi, TrackParams};
use crate::volume::GridGeometry;

/// Stage index of the noise stage; its stream is seeded with `seed + 2`.
pub const NOISE_STAGE: u64 = 2;

/// Radius of the default end-of-arc ROIs, mm.
pub const DEFAULT_ROI_RADIUS: f64 = 3.0;
/// Radius of the default seed ROI at mid-arc, mm.
pub const DEFAULT_SEED_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub major_radius: f64,
    pub tube_radius: f64,
    pub arc_degrees: f64,
    pub inside_eigenvalues: [f64; 3],
    pub outside_diffusivity: f64,
    /// `null` selects the automatic 1 mm grid around the torus.
    pub grid: Option<GridGeometry<f64>>,
    pub bvalue_s_per_mm2: f64,
    pub s0: f64,
    /// Weighted gradient directions; `null` selects the six-direction scheme.
    pub gradients: Option<Vec<Vec3<f64>>>,
    /// `null` disables noise.
    pub snr: Option<f64>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let s = PhantomSpec::<f64>::default();
        Self {
            major_radius: s.major_radius,
            tube_radius: s.tube_radius,
            arc_degrees: s.arc_degrees,
            inside_eigenvalues: s.inside_eigenvalues,
            outside_diffusivity: s.outside_diffusivity,
            grid: None,
            bvalue_s_per_mm2: s.acq.bvalue,
            s0: s.acq.s0,
            gradients: None,
            snr: s.snr,
        }
    }
}

impl PhantomConfig {
    pub fn acquisition(&self) -> Result<AcquisitionSpec<f64>> {
        let gradients = self
            .gradients
            .clone()
            .unwrap_or_else(AcquisitionSpec::six_direction_gradients);
        AcquisitionSpec::new(self.bvalue_s_per_mm2, gradients, self.s0)
    }

    pub fn spec(&self, seed: u64) -> Result<PhantomSpec<f64>> {
        Ok(PhantomSpec {
            major_radius: self.major_radius,
            tube_radius: self.tube_radius,
            arc_degrees: self.arc_degrees,
            inside_eigenvalues: self.inside_eigenvalues,
            outside_diffusivity: self.outside_diffusivity,
            grid: self
                .grid
                .unwrap_or_else(|| PhantomSpec::auto_grid(self.major_radius, self.tube_radius)),
            acq: self.acquisition()?,
            snr: self.snr,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub step_mm: f64,
    pub fa_stop: f64,
    pub max_turn_deg: f64,
    pub max_steps: usize,
    /// `null` places a 3 mm sphere on the start of the arc.
    pub roi_a: Option<Roi<f64>>,
    /// `null` places a 3 mm sphere on the end of the arc.
    pub roi_b: Option<Roi<f64>>,
    /// `null` places a 2 mm sphere on the middle of the arc.
    pub seed_roi: Option<Roi<f64>>,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        let p = TrackParams::<f64>::default();
        Self {
            step_mm: p.step_mm,
            fa_stop: p.fa_stop,
            max_turn_deg: p.max_turn_deg,
            max_steps: p.max_steps,
            roi_a: None,
            roi_b: None,
            seed_roi: None,
        }
    }
}

impl TrackingConfig {
    pub fn params(&self) -> TrackParams<f64> {
        TrackParams {
            step_mm: self.step_mm,
            fa_stop: self.fa_stop,
            max_turn_deg: self.max_turn_deg,
            max_steps: self.max_steps,
        }
    }

    /// `(roi_a, roi_b, seed_roi)` with defaults filled in from the torus.
    pub fn rois(&self, torus: &TorusArc<f64>) -> Result<(Roi<f64>, Roi<f64>, Roi<f64>)> {
        let pick = |r: &Option<Roi<f64>>, angle: f64, radius: f64| match r {
            Some(r) => Roi::new(r.center_mm, r.radius_mm),
            None => Roi::new(torus.point_at(angle), radius),
        };
        let arc = torus.arc_degrees;
        Ok((
            pick(&self.roi_a, 0.0, DEFAULT_ROI_RADIUS)?,
            pick(&self.roi_b, arc, DEFAULT_ROI_RADIUS)?,
            pick(&self.seed_roi, 0.5 * arc, DEFAULT_SEED_RADIUS)?,
        ))
    }
}

/// Sweep axes; cells are the cross product `n × k × d`, each run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub d: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            n: vec![33, 49, 65],
            k: vec![4, 8, 16, 32],
            d: vec![0.25, 0.5, 0.75],
            seeds: (1..=5).collect(),
        }
    }
}

impl SweepAxes {
    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.k.is_empty() || self.d.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep axes and seeds must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub tracking: TrackingConfig,
    pub ray: RayCastParams<f64>,
    pub criteria: BoundaryCriteria<f64>,
    pub outlier: OutlierParams,
    pub sweep: SweepAxes,
    /// Anchor the rays on the analytic arc instead of a tracked centerline.
    pub use_analytic_centerline: bool,
    pub keep_intermediates: bool,
    pub intermediates_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            phantom: PhantomConfig::default(),
            tracking: TrackingConfig::default(),
            ray: RayCastParams::default(),
            criteria: BoundaryCriteria::default(),
            outlier: OutlierParams::default(),
            sweep: SweepAxes::default(),
            use_analytic_centerline: true,
            keep_intermediates: false,
            intermediates_dir: PathBuf::from("intermediates"),
        }
    }
}

impl Config {
    pub fn noise_seed(&self) -> u64 {
        self.seed.wrapping_add(NOISE_STAGE)
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec<f64>> {
        self.phantom.spec(self.noise_seed())
    }

    /// Checks every parameter group without doing any work.
    pub fn validate(&self) -> Result<()> {
        let spec = self.phantom_spec()?;
        spec.validate()?;
        self.tracking.params().validate()?;
        self.tracking.rois(&spec.torus())?;
        self.ray.validate()?;
        self.criteria.validate()?;
        if self.outlier.max_passes < 1 {
            return Err(Error::InvalidParameter("outlier.max_passes must be ≥ 1".into()));
        }
        self.sweep.validate()
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let c: Config = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        c.validate().map_err(|e| match e {
            Error::Config(_) => e,
            e => Error::Config(e.to_string()),
        })?;
        Ok(c)
    }

    /// Reads `path` (or the defaults), applies `key=value` overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(Config::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }
}

/// Sets a dotted path such as `ray.k=8` or `phantom.snr=null`. The value is
/// parsed as JSON and kept as a string when that fails.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?
            .entry(part.to_string())
            .or_insert(Value::Null);
    }
    if node.is_null() {
        *node = Value::Object(Default::default());
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not name an object field")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Field overview printed with usage errors.
pub const SCHEMA_HELP: &str = "\
config keys (JSON; every key optional, unknown keys rejected):
  seed                        u64; noise stream seed is seed + 2
  phantom.major_radius        mm (30)
  phantom.tube_radius         mm (5)
  phantom.arc_degrees         degrees in (0, 360] (90)
  phantom.inside_eigenvalues  [l1, l2, l3] mm^2/s ([1.7e-3, 0.3e-3, 0.3e-3])
  phantom.outside_diffusivity mm^2/s (0.8e-3)
  phantom.grid                null (auto) or {dims, spacing, origin}
  phantom.bvalue_s_per_mm2    (1000)
  phantom.s0                  (1000)
  phantom.gradients           null (six-direction scheme) or [[x,y,z], ...]
  phantom.snr                 S0 / sigma, null for noise-free (20)
  tracking.step_mm            (0.5)
  tracking.fa_stop            (0.2)
  tracking.max_turn_deg       (45)
  tracking.max_steps          per direction (1000)
  tracking.roi_a / roi_b      null (3 mm spheres at the arc ends) or {center_mm, radius_mm}
  tracking.seed_roi           null (2 mm sphere at mid-arc) or {center_mm, radius_mm}
  ray.n, ray.k, ray.m, ray.d  layers, rays per layer, samples per ray, spacing mm (49, 16, 20, 0.5)
  criteria.fa_min             (0.2)
  criteria.theta_neighbor_deg (30)
  criteria.theta_center_deg   (60)
  outlier.max_index_gap       (2)
  outlier.max_passes          (10)
  sweep.n, sweep.k, sweep.d   axis values
  sweep.seeds                 seeds averaged per cell ([1, 2, 3, 4, 5])
  use_analytic_centerline     bool (true)
  keep_intermediates          bool (false)
  intermediates_dir           path (\"intermediates\")
overrides: --set key=value, e.g. --set ray.k=8 --set phantom.snr=null";
