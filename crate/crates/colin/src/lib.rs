//! Composite linear (CoLin) adapters: shared-factor low-rank projections,
//! orthogonality regularization, SVD initialization, inference-time fusion,
//! plus the experiment drivers (low-rank factorization simulations, update
//! prediction analysis, gradient checking, and a toy frozen-backbone
//! trainer).

pub mod adapter;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod sim;
pub mod toy;

pub use adapter::{ColinAdapter, FusedAdapter};
pub use error::{ColinError, Result};
pub use linalg::{Matrix, Rng};
