//! MR-to-CT spine translation pipeline.
//!
//! The crate bundles everything the pipeline needs short of a trained
//! network: NIfTI-1 I/O, volume preprocessing and augmentation, a synthetic
//! spine phantom, landmark-based rigid registration, a denoising-diffusion
//! sampling engine with pluggable denoisers, a threshold CT segmenter, and
//! the evaluation stack (image quality metrics, Dice, paired t-tests).

pub mod augment;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod landmarks;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod preprocess;
pub mod report;
pub mod segment;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{Geometry, Grid, RigidTransform};
pub use volume::{IntensitySpace, LabelVolume, Volume};
