//! Torus-segment software phantom: ground-truth tensor field, mask and
//! centerline, Stejskal–Tanner signal simulation, and complex Gaussian
//! (Rician magnitude) noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::tensor::{AcquisitionSpec, DiffusionTensor};
use crate::tracking::Centerline;
use crate::volume::{BinaryMask, DwiVolume, GridGeometry, TensorVolume};

/// Slack on the inside test so lattice points exactly on the tube wall or
/// on an arc end plane count as inside regardless of rounding.
const INSIDE_EPS: f64 = 1e-9;

/// A segment of a torus whose centerline circle lies in the `z = center.z`
/// plane and sweeps angles `[0, arc_degrees]` counterclockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TorusArc<T> {
    pub center: Vec3<T>,
    pub major_radius: T,
    pub tube_radius: T,
    pub arc_degrees: T,
}

impl<T: Real> TorusArc<T> {
    /// Angular coordinate in degrees, in `[0, 360)`.
    pub fn angle_deg(&self, p: &Vec3<T>) -> T {
        let d = *p - self.center;
        let a = d.y.atan2(d.x).to_degrees();
        if a < T::zero() {
            a + T::lit(360.0)
        } else {
            a
        }
    }

    /// Distance from `p` to the full centerline circle.
    pub fn distance_to_circle(&self, p: &Vec3<T>) -> T {
        let d = *p - self.center;
        let rho = (d.x * d.x + d.y * d.y).sqrt();
        let dr = rho - self.major_radius;
        (dr * dr + d.z * d.z).sqrt()
    }

    pub fn contains(&self, p: &Vec3<T>) -> bool {
        let eps = T::lit(INSIDE_EPS);
        self.angle_deg(p) <= self.arc_degrees + eps && self.distance_to_circle(p) <= self.tube_radius + eps
    }

    pub fn point_at(&self, angle_deg: T) -> Vec3<T> {
        let a = angle_deg.to_radians();
        self.center + Vec3::new(a.cos(), a.sin(), T::zero()) * self.major_radius
    }

    /// Unit tangent of the circle through `p`'s angular coordinate.
    pub fn tangent_at(&self, p: &Vec3<T>) -> Vec3<T> {
        let d = *p - self.center;
        let a = d.y.atan2(d.x);
        Vec3::new(-a.sin(), a.cos(), T::zero())
    }

    pub fn arc_length(&self) -> T {
        self.major_radius * self.arc_degrees.to_radians()
    }

    /// Centerline sampled every 1 mm of arc length, ending exactly at the arc end.
    pub fn centerline(&self) -> Result<Centerline<T>> {
        let len = self.arc_length();
        let whole = len.floor().to_usize().unwrap_or(0);
        let mut pts: Vec<Vec3<T>> = (0..=whole)
            .map(|i| self.point_at((T::from_usize_lossy(i) / self.major_radius).to_degrees()))
            .collect();
        if len - T::from_usize_lossy(whole) > T::lit(1e-6) {
            pts.push(self.point_at(self.arc_degrees));
        } else if let Some(last) = pts.last_mut() {
            *last = self.point_at(self.arc_degrees);
        }
        Centerline::new(pts)
    }

    /// Axis-aligned bounds of the tube segment.
    pub fn bounds(&self) -> (Vec3<T>, Vec3<T>) {
        let steps = 3600usize;
        let mut lo = Vec3::new(T::infinity(), T::infinity(), T::infinity());
        let mut hi = -lo;
        for s in 0..=steps {
            let ang = self.arc_degrees * T::from_usize_lossy(s) / T::from_usize_lossy(steps);
            let a = ang.to_radians();
            let radial = Vec3::new(a.cos(), a.sin(), T::zero());
            for rho in [self.major_radius - self.tube_radius, self.major_radius + self.tube_radius] {
                let p = self.center + radial * rho;
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
        let dz = Vec3::new(T::zero(), T::zero(), self.tube_radius);
        (lo - dz, hi + dz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PhantomSpec<T> {
    pub major_radius: T,
    pub tube_radius: T,
    pub arc_degrees: T,
    pub inside_eigenvalues: [T; 3],
    pub outside_diffusivity: T,
    pub grid: GridGeometry<T>,
    pub acq: AcquisitionSpec<T>,
    /// Unweighted signal over noise standard deviation; `None` is noise-free.
    pub snr: Option<T>,
    pub seed: u64,
}

impl<T: Real> Default for PhantomSpec<T> {
    fn default() -> Self {
        let (major, tube) = (T::lit(30.0), T::lit(5.0));
        Self {
            major_radius: major,
            tube_radius: tube,
            arc_degrees: T::lit(90.0),
            inside_eigenvalues: [T::lit(1.7e-3), T::lit(0.3e-3), T::lit(0.3e-3)],
            outside_diffusivity: T::lit(0.8e-3),
            grid: Self::auto_grid(major, tube),
            acq: AcquisitionSpec::default_six(),
            snr: Some(T::lit(20.0)),
            seed: 0,
        }
    }
}

impl<T: Real> PhantomSpec<T> {
    /// 1 mm isotropic grid centered on the torus center, with margin around
    /// the full torus in-plane and around the tube out of plane.
    pub fn auto_grid(major_radius: T, tube_radius: T) -> GridGeometry<T> {
        let half_xy = (major_radius + tube_radius + T::lit(2.0)).ceil().to_usize().unwrap_or(1);
        let half_z = (tube_radius + T::lit(3.0)).ceil().to_usize().unwrap_or(1);
        let dims = [2 * half_xy + 1, 2 * half_xy + 1, 2 * half_z + 1];
        let origin = Vec3::new(
            -T::from_usize_lossy(half_xy),
            -T::from_usize_lossy(half_xy),
            -T::from_usize_lossy(half_z),
        );
        GridGeometry {
            dims,
            spacing: Vec3::new(T::one(), T::one(), T::one()),
            origin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.tube_radius > T::zero()) {
            return bad("tube_radius must be positive");
        }
        if !(self.arc_degrees > T::zero() && self.arc_degrees <= T::lit(360.0)) {
            return bad("arc_degrees must lie in (0, 360]");
        }
        if !(self.major_radius > self.tube_radius) {
            return bad("major_radius must exceed tube_radius");
        }
        if let Some(snr) = self.snr {
            if !(snr > T::zero()) {
                return bad("snr must be positive");
            }
        }
        self.grid.validate()?;
        self.acq.validate()
    }

    /// Center of the voxel-center hull, where the torus is placed.
    pub fn torus(&self) -> TorusArc<T> {
        let half = Vec3::new(
            T::from_usize_lossy(self.grid.dims[0] - 1),
            T::from_usize_lossy(self.grid.dims[1] - 1),
            T::from_usize_lossy(self.grid.dims[2] - 1),
        ) * T::lit(0.5);
        TorusArc {
            center: self.grid.voxel_to_world(&half),
            major_radius: self.major_radius,
            tube_radius: self.tube_radius,
            arc_degrees: self.arc_degrees,
        }
    }

    /// Ground-truth tensor for a world point.
    pub fn tensor_at(&self, torus: &TorusArc<T>, p: &Vec3<T>) -> DiffusionTensor<T> {
        if torus.contains(p) {
            let t = torus.tangent_at(p);
            let radial = Vec3::new(t.y, -t.x, T::zero());
            let [l1, l2, l3] = self.inside_eigenvalues;
            DiffusionTensor::from_eigen([l1, l2, l3], [t, radial, Vec3::z_axis()])
        } else {
            DiffusionTensor::isotropic(self.outside_diffusivity)
        }
    }
}

/// Generated ground truth.
#[derive(Debug, Clone)]
pub struct Phantom<T> {
    pub torus: TorusArc<T>,
    pub tensors: TensorVolume<T>,
    pub mask: BinaryMask<T>,
    pub centerline: Centerline<T>,
}

/// Builds the tensor field, voxel-center ground-truth mask and the analytic
/// centerline of the torus segment.
pub fn generate_phantom<T: Real>(spec: &PhantomSpec<T>) -> Result<Phantom<T>> {
    spec.validate()?;
    let torus = spec.torus();
    let g = spec.grid;
    let (lo, hi) = torus.bounds();
    let (glo, ghi) = (g.origin, g.max_corner());
    if (0..3).any(|a| lo[a] < glo[a] || hi[a] > ghi[a]) {
        return Err(Error::TubeDoesNotFit(format!(
            "tube spans [{:?}, {:?}] mm, grid centers span [{:?}, {:?}] mm",
            lo.to_array(),
            hi.to_array(),
            glo.to_array(),
            ghi.to_array()
        )));
    }
    let (tensors, inside): (Vec<_>, Vec<_>) = (0..g.voxel_count())
        .into_par_iter()
        .map(|i| {
            let c = g.voxel_center(i);
            (spec.tensor_at(&torus, &c), torus.contains(&c))
        })
        .unzip();
    Ok(Phantom {
        torus,
        tensors: TensorVolume::from_tensors(g, &tensors)?,
        mask: BinaryMask::from_bools(g, &inside)?,
        centerline: torus.centerline()?,
    })
}

/// Noise-free signals: the unweighted image holds `acq.s0`, weighted images
/// `S0 · exp(−b gᵀDg)`.
pub fn simulate_dwi<T: Real>(tensors: &TensorVolume<T>, acq: &AcquisitionSpec<T>) -> Result<DwiVolume<T>> {
    acq.validate()?;
    let g = tensors.geometry;
    let n = g.voxel_count();
    let images = 1 + acq.gradients.len();
    let per_voxel: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| acq.simulate(&tensors.get(i), acq.s0))
        .collect();
    let mut signals = vec![acq.s0; n * images];
    for (i, s) in per_voxel.iter().enumerate() {
        for (gi, v) in s.iter().enumerate() {
            signals[(gi + 1) * n + i] = *v;
        }
    }
    DwiVolume::new(g, acq.clone(), signals)
}

/// Replaces every signal `S` by `|(S + η_re) + i·η_im|` with independent
/// `η ~ N(0, σ²)`, `σ = S0 / snr`. Draws follow storage order (images in
/// gradient order, voxels x-fastest), real part before imaginary part, from
/// a ChaCha8 stream seeded with `seed`.
pub fn add_complex_gaussian_noise<T: Real>(dwi: &DwiVolume<T>, snr: T, seed: u64) -> Result<DwiVolume<T>> {
    if !(snr > T::zero()) {
        return Err(Error::InvalidParameter(format!("snr must be positive, got {snr}")));
    }
    let sigma = (dwi.acq.s0 / snr).as_f64();
    let mut out = dwi.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in out.signals_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *s = T::lit((s.as_f64() + sigma * re).hypot(sigma * im));
    }
    Ok(out)
}
