//! Linear algebra, random streams, the Adam optimizer and gradient checking.

mod adam;
mod gradcheck;
mod matrix;
mod rng;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{central_differences, finite_diff_check};
pub use matrix::{axpy, dot, ComplexMatrix, Matrix, RealMatrix, Scalar};
pub use rng::{sample_standard_normal, Rng};

/// Lower bound applied wherever a variance or power is inverted.
pub const VARIANCE_FLOOR: f64 = 1e-10;
