//! Symmetric diffusion tensors: eigenanalysis, fractional anisotropy and
//! log-linear least-squares estimation from diffusion-weighted signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;

/// Symmetric 3×3 tensor stored as `(Dxx, Dxy, Dxz, Dyy, Dyz, Dzz)`, mm²/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DiffusionTensor<T> {
    pub xx: T,
    pub xy: T,
    pub xz: T,
    pub yy: T,
    pub yz: T,
    pub zz: T,
}

impl<T: Real> DiffusionTensor<T> {
    pub fn from_components(c: [T; 6]) -> Self {
        Self {
            xx: c[0],
            xy: c[1],
            xz: c[2],
            yy: c[3],
            yz: c[4],
            zz: c[5],
        }
    }

    pub fn components(&self) -> [T; 6] {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn isotropic(d: T) -> Self {
        Self::diagonal(d, d, d)
    }

    pub fn diagonal(a: T, b: T, c: T) -> Self {
        let z = T::zero();
        Self::from_components([a, z, z, b, z, c])
    }

    /// `Σ λᵢ eᵢ eᵢᵀ`.
    pub fn from_eigen(values: [T; 3], vectors: [Vec3<T>; 3]) -> Self {
        let mut c = [T::zero(); 6];
        for (l, e) in values.iter().zip(vectors.iter()) {
            c[0] += *l * e.x * e.x;
            c[1] += *l * e.x * e.y;
            c[2] += *l * e.x * e.z;
            c[3] += *l * e.y * e.y;
            c[4] += *l * e.y * e.z;
            c[5] += *l * e.z * e.z;
        }
        Self::from_components(c)
    }

    pub fn to_matrix(&self) -> [[T; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    /// Symmetric part of `m`.
    pub fn from_matrix(m: &[[T; 3]; 3]) -> Self {
        let h = T::lit(0.5);
        Self::from_components([
            m[0][0],
            (m[0][1] + m[1][0]) * h,
            (m[0][2] + m[2][0]) * h,
            m[1][1],
            (m[1][2] + m[2][1]) * h,
            m[2][2],
        ])
    }

    /// `R · D · Rᵀ`.
    pub fn rotated(&self, r: &[[T; 3]; 3]) -> Self {
        let d = self.to_matrix();
        let mut rd = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rd[i][j] = (0..3).map(|k| r[i][k] * d[k][j]).sum();
            }
        }
        let mut out = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| rd[i][k] * r[j][k]).sum();
            }
        }
        Self::from_matrix(&out)
    }

    pub fn trace(&self) -> T {
        self.xx + self.yy + self.zz
    }

    pub fn frobenius_norm(&self) -> T {
        let two = T::lit(2.0);
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + two * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }

    /// `gᵀ D g`.
    pub fn quadratic_form(&self, g: &Vec3<T>) -> T {
        let two = T::lit(2.0);
        self.xx * g.x * g.x
            + self.yy * g.y * g.y
            + self.zz * g.z * g.z
            + two * (self.xy * g.x * g.y + self.xz * g.x * g.z + self.yz * g.y * g.z)
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|c| c.is_finite())
    }

    pub fn sub(&self, o: &Self) -> Self {
        let (a, b) = (self.components(), o.components());
        Self::from_components(std::array::from_fn(|i| a[i] - b[i]))
    }

    pub fn cast<U: Real>(&self) -> DiffusionTensor<U> {
        DiffusionTensor::from_components(self.components().map(|c| U::lit(c.as_f64())))
    }

    pub fn eigensystem(&self) -> Result<EigenSystem<T>> {
        eigensystem(self)
    }

    pub fn fa(&self) -> Result<T> {
        Ok(self.eigensystem()?.fa)
    }
}

/// Eigen-decomposition of a diffusion tensor.
///
/// `values` are sorted descending and `vectors[i]` belongs to `values[i]`.
/// Eigenvector signs carry no meaning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EigenSystem<T> {
    pub values: [T; 3],
    pub vectors: [Vec3<T>; 3],
    pub fa: T,
}

impl<T: Real> EigenSystem<T> {
    pub fn principal(&self) -> Vec3<T> {
        self.vectors[0]
    }

    pub fn reconstruct(&self) -> DiffusionTensor<T> {
        DiffusionTensor::from_eigen(self.values, self.vectors)
    }
}

const MAX_JACOBI_SWEEPS: usize = 64;

/// Cyclic Jacobi eigensolver for the symmetric 3×3 case.
///
/// Rotations keep the eigenvector matrix orthonormal to rounding, so
/// reconstruction error stays at machine precision even when eigenvalues
/// nearly coincide. Negative eigenvalues are kept as they are.
pub fn eigensystem<T: Real>(d: &DiffusionTensor<T>) -> Result<EigenSystem<T>> {
    if !d.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut a = d.to_matrix();
    let mut v = [[T::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }

    let scale = d.frobenius_norm();
    let tol = T::epsilon() * scale * T::lit(0.25);
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= tol || off == T::zero() {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for row in a.iter_mut() {
                let (akp, akq) = (row[p], row[q]);
                row[p] = c * akp - s * akq;
                row[q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            a[p][q] = T::zero();
            a[q][p] = T::zero();
            for row in v.iter_mut() {
                let (vkp, vkq) = (row[p], row[q]);
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.map(|i| a[i][i]);
    let col = |i: usize| Vec3::new(v[0][i], v[1][i], v[2][i]);
    let e1 = col(order[0]);
    let e2 = col(order[1]);
    // right-handed basis; e3 is ±col(order[2]) up to rounding
    let e3 = e1.cross(&e2);
    Ok(EigenSystem {
        values,
        vectors: [e1, e2, e3],
        fa: fractional_anisotropy(values[0], values[1], values[2]),
    })
}

/// `sqrt(3/2) · ‖λ − λ̄‖ / ‖λ‖`, clamped to `[0, 1]`.
///
/// Returns 0 when all three eigenvalues are zero.
pub fn fractional_anisotropy<T: Real>(l1: T, l2: T, l3: T) -> T {
    let norm2 = l1 * l1 + l2 * l2 + l3 * l3;
    if norm2 == T::zero() {
        return T::zero();
    }
    let mean = (l1 + l2 + l3) / T::lit(3.0);
    let dev2 = (l1 - mean).powi(2) + (l2 - mean).powi(2) + (l3 - mean).powi(2);
    (T::lit(1.5) * dev2 / norm2).sqrt().max(T::zero()).min(T::one())
}

/// Principal eigenvector (sign unspecified).
pub fn principal_direction<T: Real>(d: &DiffusionTensor<T>) -> Result<Vec3<T>> {
    Ok(eigensystem(d)?.principal())
}

/// Diffusion acquisition: b-value, weighted gradient directions and the
/// nominal unweighted signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AcquisitionSpec<T> {
    pub bvalue: T,
    /// Weighted directions only; the unweighted image is implicit.
    pub gradients: Vec<Vec3<T>>,
    pub s0: T,
}

impl<T: Real> AcquisitionSpec<T> {
    pub fn new(bvalue: T, gradients: Vec<Vec3<T>>, s0: T) -> Result<Self> {
        let acq = Self {
            bvalue,
            gradients,
            s0,
        };
        acq.validate()?;
        Ok(acq)
    }

    /// Six non-collinear directions `(1,±1,0), (1,0,±1), (0,1,±1)`, normalized.
    pub fn six_direction_gradients() -> Vec<Vec3<T>> {
        let (o, z) = (T::one(), T::zero());
        [
            Vec3::new(o, o, z),
            Vec3::new(o, -o, z),
            Vec3::new(o, z, o),
            Vec3::new(o, z, -o),
            Vec3::new(z, o, o),
            Vec3::new(z, o, -o),
        ]
        .iter()
        .map(|g| *g * (T::one() / T::lit(2.0).sqrt()))
        .collect()
    }

    /// b = 1000 s/mm², six directions, S0 = 1000.
    pub fn default_six() -> Self {
        Self {
            bvalue: T::lit(1000.0),
            gradients: Self::six_direction_gradients(),
            s0: T::lit(1000.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bvalue > T::zero()) {
            return Err(Error::InvalidAcquisition(format!(
                "b-value must be positive, got {}",
                self.bvalue
            )));
        }
        if !(self.s0 > T::zero()) {
            return Err(Error::InvalidAcquisition(format!(
                "S0 must be positive, got {}",
                self.s0
            )));
        }
        if self.gradients.len() < 6 {
            return Err(Error::InvalidAcquisition(format!(
                "at least 6 weighted gradients required, got {}",
                self.gradients.len()
            )));
        }
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0));
        for (i, g) in self.gradients.iter().enumerate() {
            if (g.norm() - T::one()).abs() > tol {
                return Err(Error::InvalidAcquisition(format!(
                    "gradient {i} is not unit length (|g| = {})",
                    g.norm()
                )));
            }
        }
        TensorFitter::new(self).map(|_| ())
    }

    /// Stejskal–Tanner signal `S0 · exp(−b gᵀDg)` for every weighted gradient.
    pub fn simulate(&self, d: &DiffusionTensor<T>, s0: T) -> Vec<T> {
        self.gradients
            .iter()
            .map(|g| s0 * (-self.bvalue * d.quadratic_form(g)).exp())
            .collect()
    }
}

/// Result of a single-voxel tensor fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorFit<T> {
    pub tensor: DiffusionTensor<T>,
    /// Signals that were ≤ 0 and clamped before taking the logarithm.
    pub clamped: usize,
}

/// Log-linear least-squares tensor estimator with a precomputed Householder
/// QR factorization of the gradient design matrix.
#[derive(Debug, Clone)]
pub struct TensorFitter<T> {
    /// Householder vectors below the diagonal, R on and above it; row-major rows×6.
    qr: Vec<[T; 6]>,
    rdiag: [T; 6],
}

impl<T: Real> TensorFitter<T> {
    pub fn new(acq: &AcquisitionSpec<T>) -> Result<Self> {
        let two = T::lit(2.0);
        let mut a: Vec<[T; 6]> = acq
            .gradients
            .iter()
            .map(|g| {
                [g.x * g.x, two * g.x * g.y, two * g.x * g.z, g.y * g.y, two * g.y * g.z, g.z * g.z]
                    .map(|c| -acq.bvalue * c)
            })
            .collect();
        let rows = a.len();
        if rows < 6 {
            return Err(Error::RankDeficient);
        }
        let mut rdiag = [T::zero(); 6];
        for k in 0..6 {
            let nrm = (k..rows).map(|i| a[i][k] * a[i][k]).sum::<T>().sqrt();
            if nrm == T::zero() {
                return Err(Error::RankDeficient);
            }
            let alpha = if a[k][k] > T::zero() { -nrm } else { nrm };
            // v = x - alpha e_k, stored in place
            a[k][k] -= alpha;
            let vnorm2: T = (k..rows).map(|i| a[i][k] * a[i][k]).sum();
            for j in (k + 1)..6 {
                let dot: T = (k..rows).map(|i| a[i][k] * a[i][j]).sum();
                let f = two * dot / vnorm2;
                for row in a.iter_mut().skip(k) {
                    let vk = row[k];
                    row[j] -= f * vk;
                }
            }
            rdiag[k] = alpha;
        }
        let rmax = rdiag.iter().fold(T::zero(), |m, r| m.max(r.abs()));
        let tol = rmax * T::epsilon() * T::lit(1e3);
        if rdiag.iter().any(|r| r.abs() <= tol) {
            return Err(Error::RankDeficient);
        }
        Ok(Self { qr: a, rdiag })
    }

    pub fn rows(&self) -> usize {
        self.qr.len()
    }

    /// Fits one voxel from weighted signals and its unweighted signal `s0`.
    pub fn fit(&self, signals: &[T], s0: T) -> Result<TensorFit<T>> {
        if signals.len() != self.rows() {
            return Err(Error::InvalidParameter(format!(
                "expected {} weighted signals, got {}",
                self.rows(),
                signals.len()
            )));
        }
        if !(s0 > T::zero()) || !s0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "unweighted signal must be positive, got {s0}"
            )));
        }
        let floor = T::lit(1e-6) * s0;
        let mut clamped = 0;
        let mut y: Vec<T> = signals
            .iter()
            .map(|&s| {
                let s = if s > T::zero() {
                    s
                } else {
                    clamped += 1;
                    floor
                };
                (s / s0).ln()
            })
            .collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let two = T::lit(2.0);
        for k in 0..6 {
            let vnorm2: T = (k..y.len()).map(|i| self.qr[i][k] * self.qr[i][k]).sum();
            let dot: T = (k..y.len()).map(|i| self.qr[i][k] * y[i]).sum();
            let f = two * dot / vnorm2;
            for (i, yi) in y.iter_mut().enumerate().skip(k) {
                *yi -= f * self.qr[i][k];
            }
        }
        let mut x = [T::zero(); 6];
        for k in (0..6).rev() {
            let mut s = y[k];
            for j in (k + 1)..6 {
                s -= self.qr[k][j] * x[j];
            }
            x[k] = s / self.rdiag[k];
        }
        Ok(TensorFit {
            tensor: DiffusionTensor::from_components(x),
            clamped,
        })
    }
}

/// Single-voxel least-squares fit of `ln(Sᵢ/S0) = −b gᵢᵀ D gᵢ`.
pub fn fit_tensor<T: Real>(signals: &[T], s0: T, acq: &AcquisitionSpec<T>) -> Result<TensorFit<T>> {
    TensorFitter::new(acq)?.fit(signals, s0)
}
