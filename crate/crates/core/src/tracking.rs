//! Principal-eigenvector streamline tracking, ROI filtering and centerline
//! extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::tensor::{eigensystem, EigenSystem};
use crate::volume::TensorVolume;

/// Spherical region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Roi<T> {
    pub center_mm: Vec3<T>,
    pub radius_mm: T,
}

impl<T: Real> Roi<T> {
    pub fn new(center_mm: Vec3<T>, radius_mm: T) -> Result<Self> {
        if !(radius_mm > T::zero()) {
            return Err(Error::InvalidParameter(format!("ROI radius must be positive, got {radius_mm}")));
        }
        Ok(Self { center_mm, radius_mm })
    }

    pub fn contains(&self, p: &Vec3<T>) -> bool {
        (*p - self.center_mm).norm_squared() <= self.radius_mm * self.radius_mm
    }
}

/// A tracked streamline: world points (mm) spaced by the tracking step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Real")]
pub struct Fiber<T> {
    pub points: Vec<Vec3<T>>,
}

impl<T: Real> Fiber<T> {
    pub fn length(&self) -> T {
        self.points.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }
}

/// Ordered polyline through the middle of a bundle; one point per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec3<T>>", into = "Vec<Vec3<T>>", bound = "T: Real")]
pub struct Centerline<T> {
    points: Vec<Vec3<T>>,
}

impl<T: Real> TryFrom<Vec<Vec3<T>>> for Centerline<T> {
    type Error = Error;
    fn try_from(points: Vec<Vec3<T>>) -> Result<Self> {
        Self::new(points)
    }
}

impl<T: Real> From<Centerline<T>> for Vec<Vec3<T>> {
    fn from(c: Centerline<T>) -> Self {
        c.points
    }
}

impl<T: Real> Centerline<T> {
    /// Requires at least two points with consecutive points more than 1e−9 mm apart.
    pub fn new(points: Vec<Vec3<T>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidCenterline(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidCenterline(format!("point {p} is not finite")));
        }
        let tiny = T::lit(1e-9);
        if let Some(i) = points.windows(2).position(|w| w[0].distance(&w[1]) <= tiny) {
            return Err(Error::InvalidCenterline(format!(
                "points {i} and {} coincide",
                i + 1
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cumulative arc length at every point, starting at 0.
    pub fn arc_lengths(&self) -> Vec<T> {
        cumulative_lengths(&self.points)
    }

    pub fn length(&self) -> T {
        *self.arc_lengths().last().expect("non-empty")
    }

    /// Resamples to `n` points at equal arc-length spacing; the endpoints are kept exactly.
    pub fn resampled(&self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("layer count must be ≥ 2, got {n}")));
        }
        Self::new(resample_polyline(&self.points, n).expect("centerline has positive length"))
    }
}

fn cumulative_lengths<T: Real>(points: &[Vec3<T>]) -> Vec<T> {
    let mut acc = T::zero();
    let mut out = Vec::with_capacity(points.len());
    out.push(T::zero());
    for w in points.windows(2) {
        acc += w[0].distance(&w[1]);
        out.push(acc);
    }
    out
}

/// `n` points at equal arc-length fractions along `points`, or `None` for
/// polylines of zero length.
pub fn resample_polyline<T: Real>(points: &[Vec3<T>], n: usize) -> Option<Vec<Vec3<T>>> {
    if points.len() < 2 || n < 2 {
        return None;
    }
    let cum = cumulative_lengths(points);
    let total = *cum.last()?;
    if !(total > T::zero()) {
        return None;
    }
    let last = points.len() - 1;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for j in 0..n {
        if j == 0 {
            out.push(points[0]);
            continue;
        }
        if j == n - 1 {
            out.push(points[last]);
            continue;
        }
        let s = total * T::from_usize_lossy(j) / T::from_usize_lossy(n - 1);
        while seg + 1 < last && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > T::zero() { (s - cum[seg]) / len } else { T::zero() };
        out.push(points[seg] + (points[seg + 1] - points[seg]) * f);
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct TrackParams<T> {
    pub step_mm: T,
    pub fa_stop: T,
    pub max_turn_deg: T,
    /// Upper bound on steps in each direction from the seed.
    pub max_steps: usize,
}

impl<T: Real> Default for TrackParams<T> {
    fn default() -> Self {
        Self {
            step_mm: T::lit(0.5),
            fa_stop: T::lit(0.2),
            max_turn_deg: T::lit(45.0),
            max_steps: 1000,
        }
    }
}

impl<T: Real> TrackParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_mm > T::zero()) {
            return Err(Error::InvalidParameter("step_mm must be positive".into()));
        }
        if !(self.fa_stop >= T::zero() && self.fa_stop <= T::one()) {
            return Err(Error::InvalidParameter("fa_stop must lie in [0, 1]".into()));
        }
        if !(self.max_turn_deg > T::zero() && self.max_turn_deg <= T::lit(90.0)) {
            return Err(Error::InvalidParameter("max_turn_deg must lie in (0, 90]".into()));
        }
        Ok(())
    }
}

fn half_track<T: Real>(
    v: &TensorVolume<T>,
    seed: Vec3<T>,
    seed_es: &EigenSystem<T>,
    initial: Vec3<T>,
    p: &TrackParams<T>,
) -> Result<Vec<Vec3<T>>> {
    let mut out = Vec::new();
    let mut pos = seed;
    let mut es = *seed_es;
    let mut prev: Option<Vec3<T>> = None;
    for _ in 0..p.max_steps {
        let dir = match prev {
            None => initial,
            Some(prev) => {
                let mut d = es.principal();
                if d.dot(&prev) < T::zero() {
                    d = -d;
                }
                let turn = d.dot(&prev).min(T::one()).acos().to_degrees();
                if turn > p.max_turn_deg {
                    break;
                }
                d
            }
        };
        let next = pos + dir * p.step_mm;
        let Some(tensor) = v.sample_trilinear(&next) else {
            break;
        };
        let next_es = eigensystem(&tensor)?;
        if next_es.fa < p.fa_stop {
            break;
        }
        out.push(next);
        pos = next;
        es = next_es;
        prev = Some(dir);
    }
    Ok(out)
}

/// Euler integration of `±e1` from `seed` in both directions.
///
/// Stops on leaving the grid, FA below `fa_stop`, a turn sharper than
/// `max_turn_deg`, or `max_steps`. A seed whose own FA is below the
/// threshold yields a single-point fiber.
pub fn track_streamline<T: Real>(v: &TensorVolume<T>, seed: Vec3<T>, p: &TrackParams<T>) -> Result<Fiber<T>> {
    p.validate()?;
    let tensor = v.sample_trilinear(&seed).ok_or(Error::SeedOutside {
        x: seed.x.as_f64(),
        y: seed.y.as_f64(),
        z: seed.z.as_f64(),
    })?;
    let es = eigensystem(&tensor)?;
    if es.fa < p.fa_stop {
        return Ok(Fiber { points: vec![seed] });
    }
    let e1 = es.principal();
    let forward = half_track(v, seed, &es, e1, p)?;
    let backward = half_track(v, seed, &es, -e1, p)?;
    let mut points: Vec<Vec3<T>> = backward.into_iter().rev().collect();
    points.push(seed);
    points.extend(forward);
    Ok(Fiber { points })
}

/// Voxel centers inside `roi` whose tensor FA is at least `fa_stop`, in
/// linear voxel order.
pub fn seed_points<T: Real>(v: &TensorVolume<T>, roi: &Roi<T>, fa_stop: T) -> Result<Vec<Vec3<T>>> {
    let g = &v.geometry;
    let mut seeds = Vec::new();
    for idx in 0..g.voxel_count() {
        let c = g.voxel_center(idx);
        if roi.contains(&c) && eigensystem(&v.get(idx))?.fa >= fa_stop {
            seeds.push(c);
        }
    }
    Ok(seeds)
}

/// Tracks every seed in parallel; output order follows seed order.
pub fn track_seeds<T: Real>(v: &TensorVolume<T>, seeds: &[Vec3<T>], p: &TrackParams<T>) -> Result<Vec<Fiber<T>>> {
    // collected before short-circuiting so the reported error does not depend on scheduling
    let all: Vec<Result<Fiber<T>>> = seeds.par_iter().map(|s| track_streamline(v, *s, p)).collect();
    all.into_iter().collect()
}

/// Keeps fibers that visit both ROIs, cut to the stretch between their first
/// points inside `a` and inside `b`, oriented from `a` to `b`. Stretches of
/// fewer than two points are dropped.
pub fn filter_by_rois<T: Real>(fibers: &[Fiber<T>], a: &Roi<T>, b: &Roi<T>) -> Vec<Fiber<T>> {
    fibers
        .iter()
        .filter_map(|f| {
            let ia = f.points.iter().position(|p| a.contains(p))?;
            let ib = f.points.iter().position(|p| b.contains(p))?;
            let points: Vec<_> = if ia <= ib {
                f.points[ia..=ib].to_vec()
            } else {
                f.points[ib..=ia].iter().rev().copied().collect()
            };
            (points.len() >= 2).then_some(Fiber { points })
        })
        .collect()
}

/// Resamples each fiber to `n` points at equal arc-length fractions and
/// averages them pointwise.
pub fn extract_centerline<T: Real>(fibers: &[Fiber<T>], n: usize) -> Result<Centerline<T>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("layer count must be ≥ 2, got {n}")));
    }
    let resampled: Vec<Vec<Vec3<T>>> = fibers
        .iter()
        .filter_map(|f| resample_polyline(&f.points, n))
        .collect();
    if resampled.is_empty() {
        return Err(Error::EmptyBundle);
    }
    let count = T::from_usize_lossy(resampled.len());
    let points = (0..n)
        .map(|j| {
            let mut acc = Vec3::zero();
            for r in &resampled {
                acc += r[j];
            }
            acc * (T::one() / count)
        })
        .collect();
    Centerline::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DiffusionTensor;
    use crate::volume::GridGeometry;

    fn uniform(d: DiffusionTensor<f64>) -> TensorVolume<f64> {
        TensorVolume::filled(GridGeometry::unit([20, 9, 9]).unwrap(), d).unwrap()
    }

    #[test]
    fn uniform_field_gives_straight_line_to_the_edge() {
        let v = uniform(DiffusionTensor::diagonal(1.7e-3, 0.3e-3, 0.3e-3));
        let seed = Vec3::new(10.0, 4.0, 4.0);
        let f = track_streamline(&v, seed, &TrackParams::default()).unwrap();
        // step 0.5 from x=10 reaches both x=0 and x=19 exactly
        assert_eq!(f.points.len(), 39);
        for p in &f.points {
            assert!((p.y - 4.0).abs() < 1e-12 && (p.z - 4.0).abs() < 1e-12);
        }
        let xs: Vec<f64> = f.points.iter().map(|p| p.x).collect();
        let (lo, hi) = (xs[0].min(xs[38]), xs[0].max(xs[38]));
        assert!((lo - 0.0).abs() < 1e-9 && (hi - 19.0).abs() < 1e-9, "{lo} {hi}");
        for w in f.points.windows(2) {
            assert!((w[0].distance(&w[1]) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn isotropic_seed_stops_immediately() {
        let v = uniform(DiffusionTensor::isotropic(0.8e-3));
        let f = track_streamline(&v, Vec3::new(5.0, 4.0, 4.0), &TrackParams::default()).unwrap();
        assert_eq!(f.points, vec![Vec3::new(5.0, 4.0, 4.0)]);
    }

    #[test]
    fn seed_outside_is_an_error() {
        let v = uniform(DiffusionTensor::isotropic(0.8e-3));
        let err = track_streamline(&v, Vec3::new(-1.0, 0.0, 0.0), &TrackParams::default()).unwrap_err();
        assert!(matches!(err, Error::SeedOutside { .. }));
    }

    #[test]
    fn max_steps_bounds_each_half() {
        let v = uniform(DiffusionTensor::diagonal(1.7e-3, 0.3e-3, 0.3e-3));
        let p = TrackParams { max_steps: 3, ..TrackParams::default() };
        let f = track_streamline(&v, Vec3::new(10.0, 4.0, 4.0), &p).unwrap();
        assert_eq!(f.points.len(), 7);
    }

    fn line(y: f64) -> Fiber<f64> {
        Fiber {
            points: (0..=20).map(|i| Vec3::new(i as f64, y, 0.0)).collect(),
        }
    }

    #[test]
    fn roi_filter_truncates_and_orients() {
        let a = Roi::new(Vec3::new(15.0, 0.0, 0.0), 1.5).unwrap();
        let b = Roi::new(Vec3::new(5.0, 0.0, 0.0), 1.5).unwrap();
        let kept = filter_by_rois(&[line(0.0)], &a, &b);
        assert_eq!(kept.len(), 1);
        let pts = &kept[0].points;
        // fiber runs +x, meets b first at x=4, a first at x=14; oriented a→b
        assert_eq!(pts.first().unwrap().x, 14.0);
        assert_eq!(pts.last().unwrap().x, 4.0);
        assert_eq!(pts.len(), 11);
    }

    #[test]
    fn roi_filter_drops_fibers_missing_a_roi() {
        let a = Roi::new(Vec3::new(5.0, 0.0, 0.0), 1.0).unwrap();
        let b = Roi::new(Vec3::new(15.0, 10.0, 0.0), 1.0).unwrap();
        assert!(filter_by_rois(&[line(0.0)], &a, &b).is_empty());
        assert!(filter_by_rois::<f64>(&[], &a, &b).is_empty());
    }

    #[test]
    fn single_fiber_centerline() {
        let f = Fiber { points: vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0)] };
        let c = extract_centerline(&[f], 3).unwrap();
        assert_eq!(c.points(), &[Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0)]);
    }

    #[test]
    fn parallel_fibers_average_to_midplane() {
        let c = extract_centerline(&[line(1.0), line(-1.0)], 7).unwrap();
        for p in c.points() {
            assert!(p.y.abs() < 1e-9);
        }
        assert_eq!(c.len(), 7);
    }

    #[test]
    fn empty_bundle_is_an_error() {
        assert!(matches!(extract_centerline::<f64>(&[], 5), Err(Error::EmptyBundle)));
    }

    #[test]
    fn centerline_rejects_repeated_points() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert!(Centerline::new(vec![p, p]).is_err());
        assert!(Centerline::new(vec![p]).is_err());
    }

    #[test]
    fn resampling_is_equal_arc_length() {
        let c = Centerline::<f64>::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0), Vec3::new(3.0, 3.0, 0.0)]).unwrap();
        let r = c.resampled(5).unwrap();
        let s = r.arc_lengths();
        for w in s.windows(2) {
            assert!((w[1] - w[0] - 1.5).abs() < 1e-12);
        }
        assert_eq!(r.points()[0], c.points()[0]);
        assert_eq!(r.points()[4], c.points()[2]);
    }

    #[test]
    fn centerline_json_is_point_array() {
        let c = Centerline::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.5, 0.0)]).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, "[[0.0,0.0,0.0],[1.0,0.5,0.0]]");
        assert!(serde_json::from_str::<Centerline<f64>>("[[0,0,0]]").is_err());
    }
}
