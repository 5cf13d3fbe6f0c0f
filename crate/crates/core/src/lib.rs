//! Damping, linear shrinkage and curvature noise in second-order and
//! adaptive optimizers.
//!
//! - [`model`]: losses with exact gradients and Hessian-vector products.
//! - [`lanczos`]: Ritz pairs of matrix-free curvature operators.
//! - [`optim`]: SGD, Adam and a damped Lanczos optimizer, schedules, and
//!   stability tools.
//! - [`shrinkage`]: damping as shrinkage, the optimal damping, the batch
//!   Hessian variance estimator and the auto-damping controller.
//! - [`rmt`]: spiked Wigner ensembles and the semicircle law.
//! - [`harness`]: configs, experiment grids, CSV and gnuplot output.
//!
//! ```
//! use spectral_damp::shrinkage::optimal_damping;
//!
//! let (beta, delta) = optimal_damping(0.5)?;
//! assert!((beta - 1.0 / 1.5).abs() < 1e-15);
//! assert_eq!(delta, 0.5);
//! # Ok::<(), spectral_damp::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod harness;
pub mod lanczos;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod random;
pub mod rmt;
pub mod shrinkage;

pub use error::{Error, Result};
