//! Dense linear-algebra substrate shared by every other module.

mod format;
mod matrix;
mod pca;
mod random;
pub mod vlmg;

pub use format::{format_float, round_sig};
pub use matrix::{dot, mean_pool, norm, softmax_in_place, softmax_rows, Matrix};
pub use pca::{pca_project, Pca};
pub use random::RandomSource;
