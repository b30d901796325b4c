//! Ray-cast boundary estimation.
//!
//! Every centerline sample gets a plane orthogonal to the local centerline
//! direction. A fan of `k` rays leaves the center in that plane and each ray
//! is walked in steps of `d` mm until a sample fails the FA threshold or one
//! of the two principal-direction angle tests. The resulting `n × k` lattice
//! of boundary indices is then made consistent between neighbouring layers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::tensor::{eigensystem, DiffusionTensor};
use crate::tracking::Centerline;
use crate::volume::TensorVolume;

/// Orthonormal right-handed frame `{t, u, v}` at one centerline sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LayerFrame<T> {
    pub center: Vec3<T>,
    pub tangent: Vec3<T>,
    pub u: Vec3<T>,
    pub v: Vec3<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct RayCastParams<T> {
    /// Layers (centerline samples).
    pub n: usize,
    /// Rays per layer.
    pub k: usize,
    /// Samples per ray.
    pub m: usize,
    /// Sample spacing along a ray, mm.
    pub d: T,
}

impl<T: Real> Default for RayCastParams<T> {
    fn default() -> Self {
        Self {
            n: 49,
            k: 16,
            m: 20,
            d: T::lit(0.5),
        }
    }
}

impl<T: Real> RayCastParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.k < 3 || self.m < 1 || !(self.d > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "ray parameters need n ≥ 2, k ≥ 3, m ≥ 1, d > 0; got n={}, k={}, m={}, d={}",
                self.n, self.k, self.m, self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct BoundaryCriteria<T> {
    pub fa_min: T,
    /// Largest acute angle between principal directions of consecutive samples on a ray.
    pub theta_neighbor_deg: T,
    /// Largest acute angle between a sample's principal direction and the layer center's.
    pub theta_center_deg: T,
}

impl<T: Real> Default for BoundaryCriteria<T> {
    fn default() -> Self {
        Self {
            fa_min: T::lit(0.2),
            theta_neighbor_deg: T::lit(30.0),
            theta_center_deg: T::lit(60.0),
        }
    }
}

impl<T: Real> BoundaryCriteria<T> {
    pub fn validate(&self) -> Result<()> {
        let ninety = T::lit(90.0);
        let angle_ok = |a: T| a > T::zero() && a <= ninety;
        if !(self.fa_min >= T::zero() && self.fa_min <= T::one()) {
            return Err(Error::InvalidParameter("fa_min must lie in [0, 1]".into()));
        }
        if !angle_ok(self.theta_neighbor_deg) || !angle_ok(self.theta_center_deg) {
            return Err(Error::InvalidParameter("angle thresholds must lie in (0°, 90°]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "FA")]
    Fa,
    AngleNeighbor,
    AngleCenter,
    OutsideVolume,
    MaxLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BoundaryEntry<T> {
    /// Last inside sample along the ray, in `[0, m]`.
    pub index: usize,
    pub point: Vec3<T>,
    pub reason: StopReason,
    #[serde(default)]
    pub corrected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierParams {
    /// Largest tolerated index difference between the same ray in adjacent layers.
    pub max_index_gap: usize,
    pub max_passes: usize,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self {
            max_index_gap: 2,
            max_passes: 10,
        }
    }
}

/// Summary of an outlier-correction run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSummary {
    pub params: OutlierParams,
    pub passes: usize,
    /// All adjacent-layer gaps are within `max_index_gap`.
    pub converged: bool,
    pub corrected_entries: usize,
}

/// The `n × k` boundary lattice together with everything needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BoundaryGrid<T> {
    pub params: RayCastParams<T>,
    pub criteria: BoundaryCriteria<T>,
    pub frames: Vec<LayerFrame<T>>,
    /// `entries[layer][ray]`.
    pub entries: Vec<Vec<BoundaryEntry<T>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier: Option<OutlierSummary>,
}

impl<T: Real> BoundaryGrid<T> {
    pub fn layers(&self) -> usize {
        self.entries.len()
    }

    pub fn rays(&self) -> usize {
        self.entries.first().map_or(0, |l| l.len())
    }

    pub fn point_for(&self, layer: usize, ray: usize, index: usize) -> Vec3<T> {
        let f = &self.frames[layer];
        f.center + ray_direction(f, ray, self.params.k) * (T::from_usize_lossy(index) * self.params.d)
    }

    /// Boundary radius `index · d` of every entry, layer-major.
    pub fn radii(&self) -> Vec<T> {
        self.entries
            .iter()
            .flatten()
            .map(|e| T::from_usize_lossy(e.index) * self.params.d)
            .collect()
    }

    /// Largest same-ray index difference between adjacent layers.
    pub fn max_adjacent_gap(&self) -> usize {
        self.entries
            .windows(2)
            .flat_map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| a.index.abs_diff(b.index)))
            .max()
            .unwrap_or(0)
    }

    pub fn stop_counts(&self) -> Vec<(StopReason, usize)> {
        use StopReason::*;
        [Fa, AngleNeighbor, AngleCenter, OutsideVolume, MaxLength]
            .into_iter()
            .map(|r| (r, self.entries.iter().flatten().filter(|e| e.reason == r).count()))
            .collect()
    }
}

/// Rotation-minimizing frames along the centerline.
///
/// `t_i` is the normalized forward difference (the last layer reuses the
/// final segment). `u_0 = t_0 × a` with `a` the world axis least aligned
/// with `t_0` (ties go to x, then y, then z); later `u_i` is `u_{i−1}` with
/// its `t_i` component removed, then normalized. `v_i = t_i × u_i`.
pub fn compute_frames<T: Real>(c: &Centerline<T>) -> Result<Vec<LayerFrame<T>>> {
    let pts = c.points();
    let n = pts.len();
    let tiny = T::lit(1e-9);
    let tangent = |i: usize| -> Result<Vec3<T>> {
        let (a, b) = if i + 1 < n { (pts[i], pts[i + 1]) } else { (pts[n - 2], pts[n - 1]) };
        (b - a)
            .try_normalize(tiny)
            .ok_or_else(|| Error::InvalidCenterline(format!("zero-length segment at point {i}")))
    };

    let t0 = tangent(0)?;
    let mut axis = 0;
    for a in 1..3 {
        if t0[a].abs() < t0[axis].abs() {
            axis = a;
        }
    }
    let mut u = t0
        .cross(&Vec3::axis(axis))
        .try_normalize(tiny)
        .ok_or(Error::DegenerateFrame { layer: 0 })?;
    let mut frames = Vec::with_capacity(n);
    frames.push(LayerFrame {
        center: pts[0],
        tangent: t0,
        u,
        v: t0.cross(&u),
    });
    let mut prev_t = t0;
    for (i, center) in pts.iter().enumerate().skip(1) {
        let t = tangent(i)?;
        if t != prev_t {
            u = (u - t * u.dot(&t))
                .try_normalize(tiny)
                .ok_or(Error::DegenerateFrame { layer: i })?;
        }
        frames.push(LayerFrame {
            center: *center,
            tangent: t,
            u,
            v: t.cross(&u),
        });
        prev_t = t;
    }
    Ok(frames)
}

/// `cos(2πj/k)·u + sin(2πj/k)·v`.
pub fn ray_direction<T: Real>(frame: &LayerFrame<T>, j: usize, k: usize) -> Vec3<T> {
    let angle = T::TAU() * T::from_usize_lossy(j) / T::from_usize_lossy(k);
    frame.u * angle.cos() + frame.v * angle.sin()
}

/// Outcome of testing one ray sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleClass<T> {
    Inside { principal: Vec3<T> },
    Stop(StopReason),
}

/// Tests FA, then the angle to the previous sample, then the angle to the
/// layer center; the first failing criterion is reported.
pub fn classify_sample<T: Real>(
    sample: &DiffusionTensor<T>,
    prev_e1: &Vec3<T>,
    center_e1: &Vec3<T>,
    crit: &BoundaryCriteria<T>,
) -> Result<SampleClass<T>> {
    let es = eigensystem(sample)?;
    if !(es.fa >= crit.fa_min) {
        return Ok(SampleClass::Stop(StopReason::Fa));
    }
    let e1 = es.principal();
    if e1.acute_angle_deg(prev_e1) > crit.theta_neighbor_deg {
        return Ok(SampleClass::Stop(StopReason::AngleNeighbor));
    }
    if e1.acute_angle_deg(center_e1) > crit.theta_center_deg {
        return Ok(SampleClass::Stop(StopReason::AngleCenter));
    }
    Ok(SampleClass::Inside { principal: e1 })
}

fn walk_ray<T: Real>(
    v: &TensorVolume<T>,
    frame: &LayerFrame<T>,
    dir: Vec3<T>,
    center_e1: Vec3<T>,
    p: &RayCastParams<T>,
    crit: &BoundaryCriteria<T>,
) -> Result<(usize, StopReason)> {
    let mut prev = center_e1;
    for s in 1..=p.m {
        let pos = frame.center + dir * (T::from_usize_lossy(s) * p.d);
        let Some(tensor) = v.sample_trilinear(&pos) else {
            return Ok((s - 1, StopReason::OutsideVolume));
        };
        match classify_sample(&tensor, &prev, &center_e1, crit)? {
            SampleClass::Inside { principal } => prev = principal,
            SampleClass::Stop(reason) => return Ok((s - 1, reason)),
        }
    }
    Ok((p.m, StopReason::MaxLength))
}

/// Casts the ray fans for every layer. The centerline must already have
/// exactly `p.n` points.
pub fn estimate_boundary<T: Real>(
    v: &TensorVolume<T>,
    c: &Centerline<T>,
    p: &RayCastParams<T>,
    crit: &BoundaryCriteria<T>,
) -> Result<BoundaryGrid<T>> {
    p.validate()?;
    crit.validate()?;
    if c.len() != p.n {
        return Err(Error::InvalidParameter(format!(
            "centerline has {} points but n = {}",
            c.len(),
            p.n
        )));
    }
    let frames = compute_frames(c)?;
    let entries = frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let center = v
                .sample_trilinear(&frame.center)
                .ok_or(Error::CenterlineOutside { layer: i })?;
            let center_e1 = eigensystem(&center)?.principal();
            (0..p.k)
                .map(|j| {
                    let dir = ray_direction(frame, j, p.k);
                    let (index, reason) = walk_ray(v, frame, dir, center_e1, p, crit)?;
                    Ok(BoundaryEntry {
                        index,
                        point: frame.center + dir * (T::from_usize_lossy(index) * p.d),
                        reason,
                        corrected: false,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundaryGrid {
        params: *p,
        criteria: *crit,
        frames,
        entries,
        outlier: None,
    })
}

/// One pass over a single ray's per-layer indices: forward over layers
/// `1..n`, then backward over `n−2..=0`, each compared with the layer just
/// visited. Returns whether anything changed.
pub fn correction_pass(indices: &mut [usize], corrected: &mut [bool], max_gap: usize) -> bool {
    let n = indices.len();
    let mut changed = false;
    let mut fix = |i: usize, prev: usize, idx: &mut [usize]| {
        let (cur, reference) = (idx[i], idx[prev]);
        if cur > reference + max_gap {
            idx[i] = reference + max_gap;
        } else if cur + max_gap < reference {
            idx[i] = reference - max_gap;
        } else {
            return;
        }
        corrected[i] = true;
        changed = true;
    };
    for i in 1..n {
        fix(i, i - 1, indices);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        fix(i, i + 1, indices);
    }
    changed
}

/// Pulls boundary indices toward the same ray in the adjacent layer until
/// no gap exceeds `max_index_gap` or `max_passes` passes have run. Points are
/// recomputed from the corrected indices; stop reasons are kept.
pub fn correct_outliers<T: Real>(g: &BoundaryGrid<T>, p: &OutlierParams) -> Result<BoundaryGrid<T>> {
    if p.max_passes < 1 {
        return Err(Error::InvalidParameter("max_passes must be ≥ 1".into()));
    }
    let (n, k) = (g.layers(), g.rays());
    let columns: Vec<(Vec<usize>, Vec<bool>, usize)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).map(|i| g.entries[i][j].index).collect();
            let mut flag: Vec<bool> = (0..n).map(|i| g.entries[i][j].corrected).collect();
            let mut passes = 0;
            while passes < p.max_passes {
                passes += 1;
                correction_pass(&mut idx, &mut flag, p.max_index_gap);
                if idx.windows(2).all(|w| w[0].abs_diff(w[1]) <= p.max_index_gap) {
                    break;
                }
            }
            (idx, flag, passes)
        })
        .collect();

    let mut out = g.clone();
    let mut corrected_entries = 0;
    for (j, (idx, flag, _)) in columns.iter().enumerate() {
        for i in 0..n {
            let e = &mut out.entries[i][j];
            if flag[i] && !e.corrected {
                corrected_entries += 1;
            }
            if idx[i] != e.index {
                e.index = idx[i];
            }
            e.corrected = flag[i];
        }
    }
    for i in 0..n {
        for j in 0..k {
            let point = out.point_for(i, j, out.entries[i][j].index);
            out.entries[i][j].point = point;
        }
    }
    let passes = columns.iter().map(|c| c.2).max().unwrap_or(1).max(1);
    out.outlier = Some(OutlierSummary {
        params: *p,
        passes,
        converged: out.max_adjacent_gap() <= p.max_index_gap,
        corrected_entries,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridGeometry;

    fn straight(n: usize) -> Centerline<f64> {
        Centerline::new((0..n).map(|i| Vec3::new(2.0 + i as f64, 5.0, 5.0)).collect()).unwrap()
    }

    fn assert_frame_ok(f: &LayerFrame<f64>) {
        for (a, b) in [(f.tangent, f.u), (f.tangent, f.v), (f.u, f.v)] {
            assert!(a.dot(&b).abs() < 1e-9);
        }
        for x in [f.tangent, f.u, f.v] {
            assert!((x.norm() - 1.0).abs() < 1e-9);
        }
        assert!((f.u.cross(&f.v) - f.tangent).norm() < 1e-9);
    }

    #[test]
    fn straight_centerline_frames_identical() {
        let frames = compute_frames(&straight(6)).unwrap();
        for f in &frames {
            assert_eq!(f.tangent, Vec3::x_axis());
            // y and z tie as least aligned; y wins, u = x̂ × ŷ
            assert_eq!(f.u, Vec3::z_axis());
            assert_eq!(f.v, -Vec3::y_axis());
            assert_frame_ok(f);
        }
    }

    #[test]
    fn ray_directions() {
        let frames = compute_frames(&straight(3)).unwrap();
        let f = &frames[0];
        assert_eq!(ray_direction(f, 0, 7), f.u);
        let four: Vec<_> = (0..4).map(|j| ray_direction(f, j, 4)).collect();
        for (got, want) in four.iter().zip([f.u, f.v, -f.u, -f.v]) {
            assert!((*got - want).norm() < 1e-15);
        }
        for j in 0..13 {
            assert!(ray_direction(f, j, 13).dot(&f.tangent).abs() < 1e-9);
        }
    }

    #[test]
    fn kinked_centerline_is_degenerate() {
        // u_0 = ẑ for a tangent along x; a segment along z leaves nothing to transport
        let c = Centerline::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 1.0),
        ])
        .unwrap();
        assert!(matches!(compute_frames(&c), Err(Error::DegenerateFrame { layer: 1 })));
    }

    fn crit() -> BoundaryCriteria<f64> {
        BoundaryCriteria::default()
    }

    #[test]
    fn classify_identical_to_center_is_inside() {
        let d = DiffusionTensor::diagonal(1.7e-3, 0.3e-3, 0.3e-3);
        let e1 = Vec3::x_axis();
        assert!(matches!(classify_sample(&d, &e1, &e1, &crit()).unwrap(), SampleClass::Inside { .. }));
    }

    #[test]
    fn classify_isotropic_stops_on_fa() {
        let d = DiffusionTensor::isotropic(0.8e-3);
        let e1 = Vec3::x_axis();
        assert_eq!(classify_sample(&d, &e1, &e1, &crit()).unwrap(), SampleClass::Stop(StopReason::Fa));
    }

    #[test]
    fn classify_perpendicular_reports_neighbor_first() {
        let d = DiffusionTensor::diagonal(0.3e-3, 1.7e-3, 0.3e-3);
        let e1 = Vec3::x_axis();
        assert_eq!(
            classify_sample(&d, &e1, &e1, &crit()).unwrap(),
            SampleClass::Stop(StopReason::AngleNeighbor)
        );
        // neighbor agrees, center does not
        let y = Vec3::y_axis();
        assert_eq!(
            classify_sample(&d, &y, &e1, &crit()).unwrap(),
            SampleClass::Stop(StopReason::AngleCenter)
        );
    }

    #[test]
    fn homogeneous_field_runs_to_max_length() {
        let g = GridGeometry::unit([12, 11, 11]).unwrap();
        let v = TensorVolume::filled(g, DiffusionTensor::diagonal(1.7e-3, 0.3e-3, 0.3e-3)).unwrap();
        let p = RayCastParams { n: 6, k: 8, m: 8, d: 0.5 };
        let grid = estimate_boundary(&v, &straight(6), &p, &crit()).unwrap();
        assert_eq!(grid.layers(), 6);
        assert_eq!(grid.rays(), 8);
        for (i, layer) in grid.entries.iter().enumerate() {
            for (j, e) in layer.iter().enumerate() {
                assert_eq!(e.index, 8);
                assert_eq!(e.reason, StopReason::MaxLength);
                assert!((e.point - grid.point_for(i, j, 8)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn rays_leaving_the_grid_stop_outside() {
        let g = GridGeometry::unit([12, 11, 11]).unwrap();
        let v = TensorVolume::filled(g, DiffusionTensor::diagonal(1.7e-3, 0.3e-3, 0.3e-3)).unwrap();
        let p = RayCastParams { n: 6, k: 4, m: 20, d: 0.5 };
        let grid = estimate_boundary(&v, &straight(6), &p, &crit()).unwrap();
        // center at y = z = 5, grid edge 5 mm away: index 10
        for e in grid.entries.iter().flatten() {
            assert_eq!(e.reason, StopReason::OutsideVolume);
            assert_eq!(e.index, 10);
        }
    }

    #[test]
    fn centerline_length_must_match_n() {
        let g = GridGeometry::unit([12, 11, 11]).unwrap();
        let v = TensorVolume::filled(g, DiffusionTensor::isotropic(1e-3)).unwrap();
        let p = RayCastParams { n: 5, ..RayCastParams::default() };
        assert!(estimate_boundary(&v, &straight(6), &p, &crit()).is_err());
    }

    #[test]
    fn centerline_outside_is_an_error() {
        let g = GridGeometry::unit([5, 11, 11]).unwrap();
        let v = TensorVolume::filled(g, DiffusionTensor::isotropic(1e-3)).unwrap();
        let p = RayCastParams { n: 6, ..RayCastParams::default() };
        let err = estimate_boundary(&v, &straight(6), &p, &crit()).unwrap_err();
        assert!(matches!(err, Error::CenterlineOutside { layer: 3 }), "{err}");
    }

    #[test]
    fn hand_traced_spike_is_pulled_inwards() {
        let mut idx = vec![5, 5, 9, 5, 5];
        let mut flags = vec![false; 5];
        assert!(correction_pass(&mut idx, &mut flags, 2));
        assert_eq!(idx, vec![5, 5, 7, 5, 5]);
        assert_eq!(flags, vec![false, false, true, false, false]);
        assert!(!correction_pass(&mut idx, &mut flags, 2));
    }

    #[test]
    fn hand_traced_dip_is_pushed_outwards() {
        let mut idx = vec![9, 0, 9];
        let mut flags = vec![false; 3];
        correction_pass(&mut idx, &mut flags, 2);
        assert_eq!(idx, vec![9, 7, 9]);

        let mut idx = vec![0, 9];
        let mut flags = vec![false; 2];
        correction_pass(&mut idx, &mut flags, 2);
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn inward_correction_clamps_at_zero() {
        let mut idx = vec![1, 9, 9];
        let mut flags = vec![false; 3];
        correction_pass(&mut idx, &mut flags, 0);
        assert_eq!(idx, vec![1, 1, 1]);
    }
}
