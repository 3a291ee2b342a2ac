//! Spatial calibration of transformer attention maps for weakly supervised
//! object localization.
//!
//! The crate covers the whole forward path: rebuilding the attention map and
//! semantic map from exported transformer internals, the stacked activation
//! diffusion blocks (semantic similarity, semantics-coupled Laplacian,
//! truncated Newton-Schulz inversion, tanh-shrink filtering), box prediction
//! and the usual localization metrics. Independent oracles (exact dense
//! solves, a flow ODE integrator, forward-mode derivatives) live next to the
//! engine so every numeric claim can be checked at small scale.

pub mod adb;
pub mod backbone_adapter;
pub mod error;
pub mod flow_oracle;
pub mod linalg;
pub mod maps;
pub mod metrics;
pub mod patch_graph;
pub mod scalar;
pub mod sensitivity;
pub mod tensor_store;

pub use adb::{DiffusionParams, FilterInput, LaplacianSign};
pub use error::{Result, ScmError};
pub use linalg::DenseMatrix;
pub use maps::{ScoreMap, SemanticMap};
pub use metrics::{BBox, EvalReport};
pub use patch_graph::PatchGraph;
pub use scalar::Real;
pub use sensitivity::DualReal;
pub use tensor_store::{Annotation, Tensor};
