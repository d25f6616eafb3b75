//! Tangent-kernel laboratory.
//!
//! Trains small differentiable models (GELU MLPs, 1-D parity conv stacks,
//! linear regressors) by plain full-batch gradient descent while recording the
//! learning path, then checks the kernel-machine view of that path: the final
//! network output equals the initial prediction minus an eta-weighted sum of
//! per-step loss derivatives times tangent-kernel values, up to a remainder
//! that shrinks with the step size.
//!
//! The crate is organized around that pipeline:
//!
//! - [`model`] — model specs, flat parameter vectors, exact forward evaluation
//!   and exact reverse-mode parameter gradients/Jacobians.
//! - [`data`] — dataset generators for the toy tasks (ball vs sphere,
//!   halfspace, prefix parity, two peaks) and the hand-built parity network.
//! - [`train`] — full-batch gradient descent, learning-path recording, loss
//!   functions shared with the decomposition verifier.
//! - [`kernel`] — tangent/path kernels, the discrete decomposition and its
//!   multi-output analogue, residual diagnostics, streaming accumulation.
//! - [`analysis`] — kernel-neighbor ranking, feature-space linear probes, the
//!   embedded last-layer regressor, PCA projection of feature vectors.
//! - [`experiment`] — the deterministic experiment runner behind the `tkl`
//!   binary; emits JSON/CSV reports.
//!
//! All arithmetic is `f64`; every operation is deterministic given its seed.

pub mod activation;
pub mod analysis;
pub mod data;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod path_io;
pub mod train;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("operation requires a scalar-output model (q = 1), got q = {0}")]
    NotScalarOutput(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("learning path is empty")]
    EmptyPath,

    #[error("learning path has stride {0}, need stride 1")]
    StrideNotOne(usize),

    #[error("snapshot k = {0} not present in learning path")]
    MissingSnapshot(usize),

    #[error("dataset does not match path/model: {0}")]
    DatasetMismatch(String),

    #[error("self-kernel is zero at a query; normalized similarity undefined")]
    ZeroSelfKernel,

    #[error("streaming update out of order: got k = {got} after k = {prev}")]
    NonMonotonicUpdate { got: usize, prev: usize },

    #[error("non-binary entry {value} at position {index}")]
    NonBinaryInput { index: usize, value: f64 },

    #[error("requested {requested} samples but population has only {available}")]
    PopulationExhausted { requested: u128, available: u128 },

    #[error("probe training needs both classes, got a single class")]
    SingleClass,

    #[error("invalid path file: {0}")]
    BadPathFile(String),

    #[error("path file truncated in snapshot {snapshot}")]
    TruncatedPathFile { snapshot: usize },

    #[error("unsupported path file version {0}")]
    PathVersion(u32),

    #[error("invalid experiment config: {0}")]
    BadExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
