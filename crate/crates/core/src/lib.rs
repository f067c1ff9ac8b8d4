//! Learnable image-adaptive 3D lookup tables.
//!
//! A small convolutional weight predictor looks at a downsampled copy of an
//! image and produces one weight per basis LUT. The basis LUTs are fused into
//! a single image-specific LUT which is then applied to every pixel with
//! trilinear interpolation. Everything needed to train that model on paired
//! data lives here: handwritten backward passes, the smoothness and
//! monotonicity regularizers, Adam, quality metrics and file formats.
//!
//! Numerical code is generic over [`Real`] so the same kernels can be run on
//! `f64` copies for gradient checking; the stored model, checkpoints and the
//! production paths use `f32`.

pub mod cli;
pub mod error;
pub mod image;
pub mod io;
pub mod lut;
pub mod metrics;
pub mod predictor;
pub mod regularizers;
pub mod scalar;
pub mod trainer;

pub use crate::error::{Error, Result};
pub use crate::image::ImageBuffer;
pub use crate::lut::{CellLocation, FusionWeights, Lut3D, DEFAULT_LATTICE};
pub use crate::predictor::{Mode, PredictorParams};
pub use crate::scalar::Real;
pub use crate::trainer::{AdaptiveModel, AdamState, LossBreakdown, SamplePair, TrainConfig};
