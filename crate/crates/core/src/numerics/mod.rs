//! Dense linear algebra, random streams, PCA and the Adam optimizer.

pub mod adam;
pub mod eig;
pub mod matrix;
pub mod pca;
pub mod rng;
pub mod stats;

pub use adam::AdamState;
pub use eig::{eigenvalues, symmetric_eigen};
pub use matrix::{dot, norm, solve, sq_dist, Matrix};
pub use pca::{pca_fit, PcaBasis};
pub use rng::{DrawKind, RngStream, StreamCursor};
