//! Dense linear algebra, assignment, eigen decomposition and seeded randomness.

mod eigen;
mod hungarian;
mod matrix;
mod rng;

pub use eigen::{sym_eigen, SymEigen};
pub use hungarian::{hungarian_max, Assignment};
pub use matrix::DenseMatrix;
pub use rng::RngStream;
