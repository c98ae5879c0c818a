//! Closed-form recovery: per-edge fits `c g(a x + b) + d` over a primitive
//! library, composed into one expression per network output.

mod bessel;
mod expr;
mod fit;
mod primitives;
mod snap;

pub use bessel::bessel_j0;
pub use expr::Expr;
pub use fit::{fit_edge, SymbolicFit, MIN_FIT_SAMPLES};
pub use primitives::{Primitive, PrimitiveLibrary, INV_FLOOR, LOG_EPS};
pub use snap::{snap_network, AutoChooser, EdgeFitRecord, EdgeRef, FitChooser, SymbolicModel, LOW_R2, MAX_SNAP_WIDTH};
