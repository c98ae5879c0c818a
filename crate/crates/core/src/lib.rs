//! Kolmogorov-Arnold networks with Shapley-value node attribution.
//!
//! The crate covers the whole desk-scale pipeline: B-spline edge functions
//! ([`spline`], [`network`]), training with sparsity penalties
//! ([`training`]), node importance by exact and sampled Shapley values or
//! the magnitude baseline ([`attribution`]), bottom-up structural pruning
//! ([`pruning`]), symbolic snapping of the pruned network ([`symbolic`]),
//! and the synthetic benchmark tasks ([`datasets`], [`bench`]).

pub mod attribution;
pub mod bench;
pub mod datasets;
pub mod error;
pub mod network;
pub mod pruning;
pub mod rng;
pub mod spline;
pub mod symbolic;
pub mod training;

pub use error::{KanError, Result};
pub use network::{ActivationCache, CoalitionMask, EdgeFunction, KanLayer, KanNetwork};
pub use spline::{make_grid, SplineGrid};
