//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad NIfTI magic at offset 344: expected \"n+1\\0\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("bad NIfTI header size at offset 0: expected 348, found {found}")]
    BadHeaderSize { found: i32 },

    #[error("unsupported NIfTI datatype code {code} at offset 70 (supported: uint8=2, int16=4, float32=16)")]
    UnsupportedDatatype { code: i16 },

    #[error("NIfTI dim[0]={dim0} at offset 40 outside [1,7] in both byte orders")]
    BadDimCount { dim0: i16 },

    #[error("truncated NIfTI payload: need {needed} bytes from offset {offset}, file has {available}")]
    TruncatedPayload {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("header/volume dim mismatch: header says {header:?}, volume is {volume:?}")]
    DimMismatch {
        header: [usize; 3],
        volume: [usize; 3],
    },

    #[error("label volume holds negative value {value}; labels must be nonnegative")]
    NegativeLabel { value: i64 },

    #[error("cannot read labels from a float32 payload in {path}")]
    FloatLabels { path: PathBuf },

    #[error("{op}: expected intensity space {expected}, volume is {actual}")]
    WrongIntensitySpace {
        op: &'static str,
        expected: &'static str,
        actual: String,
    },

    #[error("volume is all zero; MR normalization needs a positive maximum")]
    AllZeroVolume,

    #[error("MR normalization needs nonnegative input, found minimum {min}")]
    NegativeMrIntensity { min: f32 },

    #[error("degenerate target spacing {spacing:?}; spacing must be positive on every axis")]
    DegenerateSpacing { spacing: [f64; 3] },

    #[error("geometry mismatch between inputs: {detail}")]
    GeometryMismatch { detail: String },

    #[error("shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: Vec<usize>, b: Vec<usize> },

    #[error("window {window:?} does not fit inside dims {dims:?}")]
    WindowOutOfBounds {
        window: [(usize, usize); 2],
        dims: [usize; 2],
    },

    #[error("patch {patch:?} larger than volume {dims:?}")]
    PatchTooLarge { patch: [usize; 3], dims: [usize; 3] },

    #[error("invalid phantom config: {detail}")]
    InvalidPhantomConfig { detail: String },

    #[error("label volume is empty; cannot extract centroids")]
    EmptyLabels,

    #[error("rigid fit needs at least 3 matched points, got {got}")]
    TooFewPoints { got: usize },

    #[error("two-point registration needs spinous landmarks on both sides for vertebra {id}")]
    MissingSpinous { id: u16 },

    #[error("invalid rigid transform: {detail}")]
    InvalidTransform { detail: String },

    #[error("malformed landmark line {line}: {detail}")]
    BadLandmarkLine { line: usize, detail: String },

    #[error("invalid deformation spec: {detail}")]
    InvalidDeformSpec { detail: String },

    #[error("invalid diffusion schedule: {detail}")]
    InvalidSchedule { detail: String },

    #[error("invalid sampler config: {detail}")]
    InvalidSamplerConfig { detail: String },

    #[error("timestep {step} outside schedule range [1, {t_max}]")]
    StepOutOfRange { step: usize, t_max: usize },

    #[error("denoiser does not support unconditioned calls but guidance w={w} needs them")]
    UnconditionedUnsupported { w: f64 },

    #[error("no prediction file for timestep {step} under {dir}")]
    MissingPrediction { step: usize, dir: PathBuf },

    #[error("bone mask is empty at threshold {threshold}")]
    EmptyBoneMask { threshold: f32 },

    #[error("image {dims:?} too small for {what}")]
    ImageTooSmall { dims: [usize; 2], what: &'static str },

    #[error("paired samples differ in length: {a} vs {b}")]
    SampleLengthMismatch { a: usize, b: usize },

    #[error("need at least 2 paired samples, got {got}")]
    TooFewSamples { got: usize },

    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    #[error("unsupported: {what}")]
    Unsupported { what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
