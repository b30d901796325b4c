//! Regular-grid volumes and world/voxel coordinate mapping.
//!
//! Samples live at voxel centers: voxel `(i, j, k)` sits at
//! `origin + (i, j, k) ⊙ spacing`. Data is stored x-fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::tensor::{AcquisitionSpec, DiffusionTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GridGeometry<T> {
    pub dims: [usize; 3],
    pub spacing: Vec3<T>,
    pub origin: Vec3<T>,
}

impl<T: Real> GridGeometry<T> {
    pub fn new(dims: [usize; 3], spacing: Vec3<T>, origin: Vec3<T>) -> Result<Self> {
        let g = Self {
            dims,
            spacing,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit spacing, origin at the world origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, Vec3::new(T::one(), T::one(), T::one()), Vec3::zero())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!(
                "all dims must be ≥ 1, got {:?}",
                self.dims
            )));
        }
        let s = self.spacing;
        if !(s.x > T::zero() && s.y > T::zero() && s.z > T::zero()) || !s.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive, got {:?}",
                s.to_array()
            )));
        }
        if !self.origin.is_finite() {
            return Err(Error::InvalidGeometry("origin is not finite".into()));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let r = index / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    /// Continuous voxel coordinates of a world point; may lie outside `[0, dims−1]`.
    #[inline]
    pub fn world_to_voxel(&self, p: &Vec3<T>) -> Vec3<T> {
        (*p - self.origin).component_div(&self.spacing)
    }

    #[inline]
    pub fn voxel_to_world(&self, v: &Vec3<T>) -> Vec3<T> {
        self.origin + v.component_mul(&self.spacing)
    }

    /// World position of the center of the voxel with linear index `index`.
    pub fn voxel_center(&self, index: usize) -> Vec3<T> {
        let [i, j, k] = self.ijk(index);
        self.voxel_to_world(&Vec3::new(
            T::from_usize_lossy(i),
            T::from_usize_lossy(j),
            T::from_usize_lossy(k),
        ))
    }

    /// World position of the last voxel center.
    pub fn max_corner(&self) -> Vec3<T> {
        self.voxel_center(self.voxel_count() - 1)
    }

    /// True when `p` lies within the hull of voxel centers, i.e. sampling
    /// there does not need any voxel outside the grid.
    pub fn contains_world(&self, p: &Vec3<T>) -> bool {
        let v = self.world_to_voxel(p);
        (0..3).all(|a| v[a] >= T::zero() && v[a] <= T::from_usize_lossy(self.dims[a] - 1))
    }

    pub fn cast<U: Real>(&self) -> GridGeometry<U> {
        GridGeometry {
            dims: self.dims,
            spacing: self.spacing.cast(),
            origin: self.origin.cast(),
        }
    }

    /// Corner indices and weights for trilinear interpolation at `p`, or
    /// `None` when the interpolation cube is not fully inside the grid.
    pub fn trilinear_stencil(&self, p: &Vec3<T>) -> Option<[(usize, T); 8]> {
        let v = self.world_to_voxel(p);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let c = v[a];
            let last = self.dims[a] - 1;
            if !(c >= T::zero() && c <= T::from_usize_lossy(last)) {
                return None;
            }
            let f = c.floor().to_usize()?.min(last.saturating_sub(1));
            lo[a] = f;
            hi[a] = (f + 1).min(last);
            frac[a] = c - T::from_usize_lossy(f);
        }
        let mut out = [(0usize, T::zero()); 8];
        for (n, slot) in out.iter_mut().enumerate() {
            let pick = |a: usize| (n >> a) & 1 == 1;
            let mut w = T::one();
            let mut idx = [0usize; 3];
            for a in 0..3 {
                if pick(a) {
                    w *= frac[a];
                    idx[a] = hi[a];
                } else {
                    w *= T::one() - frac[a];
                    idx[a] = lo[a];
                }
            }
            *slot = (self.linear_index(idx[0], idx[1], idx[2]), w);
        }
        Some(out)
    }
}

/// Free-function form of [`GridGeometry::world_to_voxel`].
pub fn world_to_voxel<T: Real>(p: &Vec3<T>, g: &GridGeometry<T>) -> Vec3<T> {
    g.world_to_voxel(p)
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DataLength { expected, actual });
    }
    Ok(())
}

/// Per-voxel symmetric tensors, 6 components each.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorVolume<T> {
    pub geometry: GridGeometry<T>,
    data: Vec<T>,
}

impl<T: Real> TensorVolume<T> {
    pub fn new(geometry: GridGeometry<T>, data: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        check_len(geometry.voxel_count() * 6, data.len())?;
        Ok(Self { geometry, data })
    }

    pub fn from_tensors(geometry: GridGeometry<T>, tensors: &[DiffusionTensor<T>]) -> Result<Self> {
        check_len(geometry.voxel_count(), tensors.len())?;
        let data = tensors.iter().flat_map(|t| t.components()).collect();
        Self::new(geometry, data)
    }

    pub fn filled(geometry: GridGeometry<T>, d: DiffusionTensor<T>) -> Result<Self> {
        let tensors = vec![d; geometry.voxel_count()];
        Self::from_tensors(geometry, &tensors)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, index: usize) -> DiffusionTensor<T> {
        let c = &self.data[index * 6..index * 6 + 6];
        DiffusionTensor::from_components([c[0], c[1], c[2], c[3], c[4], c[5]])
    }

    pub fn tensors(&self) -> impl Iterator<Item = DiffusionTensor<T>> + '_ {
        (0..self.geometry.voxel_count()).map(move |i| self.get(i))
    }

    /// Component-wise trilinear interpolation; `None` means the point is
    /// outside the grid.
    pub fn sample_trilinear(&self, p: &Vec3<T>) -> Option<DiffusionTensor<T>> {
        let stencil = self.geometry.trilinear_stencil(p)?;
        let mut c = [T::zero(); 6];
        for (idx, w) in stencil {
            if w == T::zero() {
                continue;
            }
            let src = &self.data[idx * 6..idx * 6 + 6];
            for (acc, s) in c.iter_mut().zip(src) {
                *acc += w * *s;
            }
        }
        Some(DiffusionTensor::from_components(c))
    }

    /// Rounds every component to single precision, matching what the
    /// on-disk format stores.
    pub fn quantized(&self) -> Self {
        Self {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| T::lit(v.to_f32().unwrap_or(f32::NAN) as f64)).collect(),
        }
    }
}

/// Free-function form of [`TensorVolume::sample_trilinear`].
pub fn sample_trilinear<T: Real>(v: &TensorVolume<T>, p: &Vec3<T>) -> Option<DiffusionTensor<T>> {
    v.sample_trilinear(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume<T> {
    pub geometry: GridGeometry<T>,
    data: Vec<T>,
}

impl<T: Real> ScalarVolume<T> {
    pub fn new(geometry: GridGeometry<T>, data: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        check_len(geometry.voxel_count(), data.len())?;
        Ok(Self { geometry, data })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn sample_trilinear(&self, p: &Vec3<T>) -> Option<T> {
        let stencil = self.geometry.trilinear_stencil(p)?;
        Some(stencil.iter().map(|&(i, w)| w * self.data[i]).sum())
    }
}

/// Per-voxel {0, 1} labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask<T> {
    pub geometry: GridGeometry<T>,
    data: Vec<u8>,
}

impl<T: Real> BinaryMask<T> {
    pub fn new(geometry: GridGeometry<T>, data: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        check_len(geometry.voxel_count(), data.len())?;
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidMaskValue { index, value });
        }
        Ok(Self { geometry, data })
    }

    pub fn from_bools(geometry: GridGeometry<T>, inside: &[bool]) -> Result<Self> {
        Self::new(geometry, inside.iter().map(|&b| b as u8).collect())
    }

    pub fn empty(geometry: GridGeometry<T>) -> Result<Self> {
        Self::new(geometry, vec![0; geometry.voxel_count()])
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, index: usize) -> bool {
        self.data[index] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

/// Unweighted plus gradient-weighted signal volumes, stored gradient-major:
/// the unweighted image first, then one full volume per weighted gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiVolume<T> {
    pub geometry: GridGeometry<T>,
    pub acq: AcquisitionSpec<T>,
    signals: Vec<T>,
}

impl<T: Real> DwiVolume<T> {
    pub fn new(geometry: GridGeometry<T>, acq: AcquisitionSpec<T>, signals: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        check_len(geometry.voxel_count() * (1 + acq.gradients.len()), signals.len())?;
        Ok(Self {
            geometry,
            acq,
            signals,
        })
    }

    /// Number of stored images (unweighted included).
    pub fn image_count(&self) -> usize {
        1 + self.acq.gradients.len()
    }

    pub fn signals(&self) -> &[T] {
        &self.signals
    }

    pub fn signals_mut(&mut self) -> &mut [T] {
        &mut self.signals
    }

    /// Image `g` (0 = unweighted).
    pub fn image(&self, g: usize) -> &[T] {
        let n = self.geometry.voxel_count();
        &self.signals[g * n..(g + 1) * n]
    }

    /// `(S0, weighted signals)` of one voxel.
    pub fn voxel_signals(&self, index: usize) -> (T, Vec<T>) {
        let n = self.geometry.voxel_count();
        let s0 = self.signals[index];
        let w = (1..self.image_count()).map(|g| self.signals[g * n + index]).collect();
        (s0, w)
    }

    /// Mean of the unweighted image, or 1 when that is not positive. This
    /// is the nominal `S0` recorded for volumes read from disk.
    pub fn unweighted_mean(&self) -> T {
        let n = self.geometry.voxel_count();
        let s0 = self.signals[..n].iter().copied().sum::<T>() / T::from_usize_lossy(n);
        if s0 > T::zero() {
            s0
        } else {
            T::one()
        }
    }

    /// Signals rounded to single precision and `acq.s0` set to the
    /// unweighted mean: exactly what a save/load round trip yields.
    pub fn quantized(&self) -> Self {
        let mut q = Self {
            geometry: self.geometry,
            acq: self.acq.clone(),
            signals: self.signals.iter().map(|&v| T::lit(v.to_f32().unwrap_or(f32::NAN) as f64)).collect(),
        };
        q.acq.s0 = q.unweighted_mean();
        q
    }
}
