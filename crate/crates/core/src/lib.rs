//! Desk-scale toolkit for binary suturing-skill scoring from short video
//! clips: hand-written CPU tensor kernels with reverse-mode autodiff, a
//! three-block 3D-CNN and a small multiscale vision transformer, per-domain
//! model routing, deterministic training, and ROC-AUC evaluation with
//! bootstrap confidence intervals. A procedural clip generator stands in for
//! clinical data so the whole pipeline is testable end to end.

pub mod augment;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod models;
pub mod ops;
pub mod router;
pub mod tensor;

pub use autodiff::{Tape, VarId};
pub use error::{Error, Result};
pub use tensor::{Dtype, Scalar, Tensor};
