//! Desk-scale numerical lab for how vision-language models see.
//!
//! The crate covers rotary position embeddings in one and two dimensions
//! (with frequency rescaling), an idealized two-object attention model and
//! the geometry of its direction vectors, logit-lens token maps with
//! keyword segmentation, run-length token compression, and a distilled
//! linear visual decoder. Every numeric module is generic over [`Scalar`]
//! (`f32` or `f64`); the `*F64` aliases below are what the CLI uses.

pub mod cli;
pub mod compress;
pub mod distill;
pub mod dualsim;
mod error;
pub mod geometry;
pub mod numerics;
pub mod rope;
mod scalar;
pub mod tokenmap;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MatrixF64 = numerics::Matrix<f64>;
pub type MatrixF32 = numerics::Matrix<f32>;
pub type FrequencyScheduleF64 = rope::FrequencySchedule<f64>;
pub type RopeF64 = rope::Rope<f64>;
pub type TwoObjectSceneF64 = dualsim::TwoObjectScene<f64>;
pub type DirectionDecompositionF64 = geometry::DirectionDecomposition<f64>;
pub type VisualDecoderF64 = distill::VisualDecoder<f64>;
pub type VisualDecoderF32 = distill::VisualDecoder<f32>;
