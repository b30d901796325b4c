//! On-disk volume format: a raw little-endian payload plus a JSON sidecar
//! header stored next to it at `<payload>.json`.
//!
//! Payloads are `f32le` for scalar, tensor and DWI volumes and `u8` for
//! masks, all x-fastest. DWI volumes hold the images concatenated in
//! gradient order with the unweighted image first.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::tensor::AcquisitionSpec;
use crate::volume::{BinaryMask, DwiVolume, GridGeometry, ScalarVolume, TensorVolume};

pub const LAYOUT: &str = "x-fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Scalar,
    Mask,
    Tensor6,
    Dwi,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::Scalar => "scalar",
            VolumeKind::Mask => "mask",
            VolumeKind::Tensor6 => "tensor6",
            VolumeKind::Dwi => "dwi",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "scalar" => VolumeKind::Scalar,
            "mask" => VolumeKind::Mask,
            "tensor6" => VolumeKind::Tensor6,
            "dwi" => VolumeKind::Dwi,
            _ => return None,
        })
    }

    fn dtype(self) -> &'static str {
        match self {
            VolumeKind::Mask => "u8",
            _ => "f32le",
        }
    }
}

/// Sidecar header contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub kind: String,
    pub dtype: String,
    pub layout: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bvalue_s_per_mm2: Option<f64>,
    /// First entry `(0, 0, 0)` denotes the unweighted image.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradients: Option<Vec<[f64; 3]>>,
}

impl VolumeHeader {
    fn new<T: Real>(kind: VolumeKind, g: &GridGeometry<T>) -> Self {
        Self {
            dims: g.dims,
            spacing_mm: g.spacing.cast::<f64>().to_array(),
            origin_mm: g.origin.cast::<f64>().to_array(),
            kind: kind.as_str().to_string(),
            dtype: kind.dtype().to_string(),
            layout: LAYOUT.to_string(),
            bvalue_s_per_mm2: None,
            gradients: None,
        }
    }

    pub fn geometry<T: Real>(&self) -> Result<GridGeometry<T>> {
        GridGeometry::new(
            self.dims,
            Vec3::from(self.spacing_mm).cast(),
            Vec3::from(self.origin_mm).cast(),
        )
    }

    pub fn kind(&self) -> Option<VolumeKind> {
        VolumeKind::parse(&self.kind)
    }
}

/// A loaded volume of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume<T> {
    Scalar(ScalarVolume<T>),
    Mask(BinaryMask<T>),
    Tensor(TensorVolume<T>),
    Dwi(DwiVolume<T>),
}

impl<T: Real> Volume<T> {
    pub fn kind(&self) -> VolumeKind {
        match self {
            Volume::Scalar(_) => VolumeKind::Scalar,
            Volume::Mask(_) => VolumeKind::Mask,
            Volume::Tensor(_) => VolumeKind::Tensor6,
            Volume::Dwi(_) => VolumeKind::Dwi,
        }
    }

    pub fn geometry(&self) -> &GridGeometry<T> {
        match self {
            Volume::Scalar(v) => &v.geometry,
            Volume::Mask(v) => &v.geometry,
            Volume::Tensor(v) => &v.geometry,
            Volume::Dwi(v) => &v.geometry,
        }
    }
}

impl<T> From<ScalarVolume<T>> for Volume<T> {
    fn from(v: ScalarVolume<T>) -> Self {
        Volume::Scalar(v)
    }
}
impl<T> From<BinaryMask<T>> for Volume<T> {
    fn from(v: BinaryMask<T>) -> Self {
        Volume::Mask(v)
    }
}
impl<T> From<TensorVolume<T>> for Volume<T> {
    fn from(v: TensorVolume<T>) -> Self {
        Volume::Tensor(v)
    }
}
impl<T> From<DwiVolume<T>> for Volume<T> {
    fn from(v: DwiVolume<T>) -> Self {
        Volume::Dwi(v)
    }
}

/// Path of the JSON header belonging to payload `path`.
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn f32_bytes<T: Real>(values: &[T]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|v| v.to_f32().unwrap_or(f32::NAN).to_le_bytes())
        .collect()
}

/// Writes payload and header. Values are stored as `f32`, so a `f64`
/// volume round-trips exactly only when its values are `f32`-representable.
pub fn save_volume<T: Real>(volume: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut header = VolumeHeader::new(volume.kind(), volume.geometry());
    let payload = match volume {
        Volume::Scalar(v) => f32_bytes(v.data()),
        Volume::Tensor(v) => f32_bytes(v.data()),
        Volume::Mask(v) => v.data().to_vec(),
        Volume::Dwi(v) => {
            header.bvalue_s_per_mm2 = Some(v.acq.bvalue.as_f64());
            let mut g = vec![[0.0; 3]];
            g.extend(v.acq.gradients.iter().map(|d| d.cast::<f64>().to_array()));
            header.gradients = Some(g);
            f32_bytes(v.signals())
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let hp = header_path(path);
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))?;
    Ok(())
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads and validates a sidecar header.
pub fn read_header(path: impl AsRef<Path>) -> Result<VolumeHeader> {
    let hp = header_path(path.as_ref());
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    parse_header(&text, &hp)
}

fn parse_header(text: &str, hp: &Path) -> Result<VolumeHeader> {
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(hp, e.to_string()))?;
    let header: VolumeHeader =
        serde_json::from_value(value).map_err(|e| malformed(hp, e.to_string()))?;
    let kind = header
        .kind()
        .ok_or_else(|| malformed(hp, format!("unknown kind `{}`", header.kind)))?;
    if header.dtype != "f32le" && header.dtype != "u8" {
        return Err(Error::UnsupportedDtype {
            kind: header.kind.clone(),
            dtype: header.dtype.clone(),
        });
    }
    if header.dtype != kind.dtype() {
        return Err(Error::UnsupportedDtype {
            kind: header.kind.clone(),
            dtype: header.dtype.clone(),
        });
    }
    if header.layout != LAYOUT {
        return Err(malformed(hp, format!("unsupported layout `{}`", header.layout)));
    }
    header
        .geometry::<f64>()
        .map_err(|e| malformed(hp, e.to_string()))?;
    if kind == VolumeKind::Dwi {
        if header.bvalue_s_per_mm2.is_none() {
            return Err(malformed(hp, "dwi header lacks `bvalue_s_per_mm2`"));
        }
        match &header.gradients {
            Some(g) if g.first() == Some(&[0.0, 0.0, 0.0]) => {}
            Some(_) => return Err(malformed(hp, "first gradient must be (0,0,0)")),
            None => return Err(malformed(hp, "dwi header lacks `gradients`")),
        }
    }
    Ok(header)
}

fn read_f32<T: Real>(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<T>> {
    if !bytes.len().is_multiple_of(4) || bytes.len() / 4 != expected {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() / 4,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

pub fn load_volume<T: Real>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let kind = header.kind().expect("validated");
    let geometry: GridGeometry<T> = header.geometry()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = geometry.voxel_count();
    Ok(match kind {
        VolumeKind::Scalar => Volume::Scalar(ScalarVolume::new(geometry, read_f32(path, &bytes, n)?)?),
        VolumeKind::Tensor6 => {
            Volume::Tensor(TensorVolume::new(geometry, read_f32(path, &bytes, n * 6)?)?)
        }
        VolumeKind::Mask => {
            if bytes.len() != n {
                return Err(Error::PayloadSize {
                    path: path.to_path_buf(),
                    expected: n,
                    actual: bytes.len(),
                });
            }
            Volume::Mask(BinaryMask::new(geometry, bytes)?)
        }
        VolumeKind::Dwi => {
            let all = header.gradients.as_ref().expect("validated");
            let gradients = all[1..].iter().map(|g| Vec3::from(*g).cast()).collect();
            let bvalue = T::lit(header.bvalue_s_per_mm2.expect("validated"));
            let signals: Vec<T> = read_f32(path, &bytes, n * all.len())?;
            let acq = AcquisitionSpec {
                bvalue,
                gradients,
                s0: T::one(),
            };
            let mut dwi = DwiVolume::new(geometry, acq, signals)?;
            dwi.acq.s0 = dwi.unweighted_mean();
            Volume::Dwi(dwi)
        }
    })
}

fn wrong_kind<T: Real>(expected: VolumeKind, v: &Volume<T>) -> Error {
    Error::KindMismatch {
        expected: expected.as_str().into(),
        found: v.kind().as_str().into(),
    }
}

pub fn load_tensor_volume<T: Real>(path: impl AsRef<Path>) -> Result<TensorVolume<T>> {
    match load_volume(path)? {
        Volume::Tensor(v) => Ok(v),
        v => Err(wrong_kind(VolumeKind::Tensor6, &v)),
    }
}

pub fn load_mask<T: Real>(path: impl AsRef<Path>) -> Result<BinaryMask<T>> {
    match load_volume(path)? {
        Volume::Mask(v) => Ok(v),
        v => Err(wrong_kind(VolumeKind::Mask, &v)),
    }
}

pub fn load_dwi<T: Real>(path: impl AsRef<Path>) -> Result<DwiVolume<T>> {
    match load_volume(path)? {
        Volume::Dwi(v) => Ok(v),
        v => Err(wrong_kind(VolumeKind::Dwi, &v)),
    }
}

pub fn load_scalar<T: Real>(path: impl AsRef<Path>) -> Result<ScalarVolume<T>> {
    match load_volume(path)? {
        Volume::Scalar(v) => Ok(v),
        v => Err(wrong_kind(VolumeKind::Scalar, &v)),
    }
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<S: Serialize + ?Sized>(value: &S, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<S: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<S> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DiffusionTensor;

    fn geometry() -> GridGeometry<f32> {
        GridGeometry::new([2, 2, 2], Vec3::new(1.0, 1.5, 2.0), Vec3::new(-3.25, 0.5, 7.0)).unwrap()
    }

    #[test]
    fn tensor_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tensor6");
        let data: Vec<f32> = (0..48).map(|i| (i as f32).sin() * 1e-3).collect();
        let v = Volume::Tensor(TensorVolume::new(geometry(), data).unwrap());
        save_volume(&v, &p).unwrap();
        let back = load_volume::<f32>(&p).unwrap();
        match (&v, &back) {
            (Volume::Tensor(a), Volume::Tensor(b)) => {
                assert_eq!(a.geometry, b.geometry);
                let bits = |x: &[f32]| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a.data()), bits(b.data()));
            }
            _ => panic!("kind changed"),
        }
        let header = read_header(&p).unwrap();
        assert_eq!(header.kind, "tensor6");
        assert_eq!(header.dtype, "f32le");
        assert_eq!(header.layout, "x-fastest");
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mask");
        let v: Volume<f32> = BinaryMask::new(geometry(), vec![0, 1, 1, 0, 1, 0, 0, 1]).unwrap().into();
        save_volume(&v, &p).unwrap();
        assert_eq!(load_volume::<f32>(&p).unwrap(), v);
        assert_eq!(read_header(&p).unwrap().dtype, "u8");
    }

    #[test]
    fn scalar_and_dwi_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s: Volume<f64> = ScalarVolume::new(geometry().cast(), (0..8).map(|i| i as f64 * 0.125).collect())
            .unwrap()
            .into();
        save_volume(&s, dir.path().join("fa.scalar")).unwrap();
        assert_eq!(load_volume::<f64>(dir.path().join("fa.scalar")).unwrap(), s);

        let acq = AcquisitionSpec::<f32>::default_six();
        let sig: Vec<f32> = (0..56).map(|i| 1000.0 - i as f32).collect();
        let dwi = DwiVolume::new(geometry(), acq.clone(), sig.clone()).unwrap();
        let p = dir.path().join("d.dwi");
        save_volume(&dwi.clone().into(), &p).unwrap();
        let back = load_dwi::<f32>(&p).unwrap();
        assert_eq!(back.signals(), &sig[..]);
        assert_eq!(back.acq.gradients, acq.gradients);
        assert_eq!(back.acq.bvalue, 1000.0);
        let h = read_header(&p).unwrap();
        assert_eq!(h.gradients.unwrap()[0], [0.0; 3]);
    }

    #[test]
    fn short_payload_is_a_size_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tensor6");
        let v: Volume<f32> = TensorVolume::filled(geometry(), DiffusionTensor::isotropic(1.0)).unwrap().into();
        save_volume(&v, &p).unwrap();
        fs::write(&p, f32_bytes(&[0.0f32; 47])).unwrap();
        let err = load_volume::<f32>(&p).unwrap_err();
        assert!(matches!(err, Error::PayloadSize { expected: 48, actual: 47, .. }), "{err}");
    }

    #[test]
    fn header_errors_have_distinct_kinds() {
        let hp = Path::new("x.json");
        let base = r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"kind":"tensor6","dtype":"f32le","layout":"x-fastest"}"#;
        assert!(parse_header(base, hp).is_ok());
        let missing = r#"{"dims":[2,2,2],"origin_mm":[0,0,0],"kind":"tensor6","dtype":"f32le","layout":"x-fastest"}"#;
        assert!(matches!(parse_header(missing, hp), Err(Error::MalformedHeader { .. })));
        assert!(matches!(parse_header("{not json", hp), Err(Error::MalformedHeader { .. })));
        let f64le = base.replace("f32le", "f64le");
        assert!(matches!(parse_header(&f64le, hp), Err(Error::UnsupportedDtype { .. })));
        let u8_tensor = base.replace("f32le", "u8");
        assert!(matches!(parse_header(&u8_tensor, hp), Err(Error::UnsupportedDtype { .. })));
        let layout = base.replace("x-fastest", "z-fastest");
        assert!(matches!(parse_header(&layout, hp), Err(Error::MalformedHeader { .. })));
        let zero_dim = base.replace("[2,2,2]", "[2,0,2]");
        assert!(matches!(parse_header(&zero_dim, hp), Err(Error::MalformedHeader { .. })));
        let dwi = base.replace("tensor6", "dwi");
        assert!(matches!(parse_header(&dwi, hp), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn kind_mismatch_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mask");
        save_volume::<f32>(&BinaryMask::empty(geometry()).unwrap().into(), &p).unwrap();
        assert!(matches!(load_tensor_volume::<f32>(&p), Err(Error::KindMismatch { .. })));
    }
}
