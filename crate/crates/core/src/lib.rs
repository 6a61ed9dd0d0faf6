//! Boundary-integral simulation of rigid bodies moving in a bounded
//! two-dimensional ideal fluid, of the point-vortex limit system obtained when
//! some of the bodies shrink to points, and a laboratory that measures how the
//! first converges to the second.

pub mod error;
pub mod geometry;
pub mod laplace;
pub mod reflections;
pub mod potentials;
pub mod dynamics;
pub mod limitsys;
pub mod scenario;
pub mod output;
pub mod harness;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Maximum that propagates NaN, so a failed evaluation cannot hide inside a
/// sup norm.
pub fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}
