//! Boundary estimation of tubular fiber bundles in diffusion tensor
//! volumes by radial ray casting along a centerline, with a torus phantom
//! and scoring harness for validation.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The aliases at
//! the crate root fix the scalar to `f64`, which the harness and the
//! command-line tool use throughout.

// `!(x >= t)` also rejects NaN, which is what the thresholds want.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boundary;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod phantom;
pub mod scalar;
pub mod surface;
pub mod tensor;
pub mod tracking;
pub mod volume;

pub use boundary::{
    compute_frames, correct_outliers, estimate_boundary, BoundaryCriteria, BoundaryEntry, BoundaryGrid,
    LayerFrame, OutlierParams, RayCastParams, StopReason,
};
pub use config::Config;
pub use error::{Error, Result};
pub use geometry::Vec3;
pub use harness::{dice, run_pipeline, sweep, RunReport};
pub use io::{load_volume, save_volume, Volume};
pub use phantom::{add_complex_gaussian_noise, generate_phantom, simulate_dwi, PhantomSpec, TorusArc};
pub use scalar::Real;
pub use surface::{triangulate, voxelize, SurfaceMesh};
pub use tensor::{eigensystem, fit_tensor, fractional_anisotropy, AcquisitionSpec, DiffusionTensor, EigenSystem};
pub use tracking::{extract_centerline, track_streamline, Centerline, Fiber, Roi, TrackParams};
pub use volume::{BinaryMask, DwiVolume, GridGeometry, ScalarVolume, TensorVolume};

pub type Point = Vec3<f64>;
pub type Tensor = DiffusionTensor<f64>;
pub type Eigen = EigenSystem<f64>;
pub type Acquisition = AcquisitionSpec<f64>;
pub type Grid = GridGeometry<f64>;
pub type Tensors = TensorVolume<f64>;
pub type Scalars = ScalarVolume<f64>;
pub type Mask = BinaryMask<f64>;
pub type Dwi = DwiVolume<f64>;
pub type Phantom = phantom::Phantom<f64>;
pub type Torus = TorusArc<f64>;
pub type Streamline = Fiber<f64>;
pub type Path3 = Centerline<f64>;
pub type Boundary = BoundaryGrid<f64>;
pub type Mesh = SurfaceMesh<f64>;
