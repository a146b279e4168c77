//! Small numerical toolkit shared by the comixify models.
//!
//! The crate provides a tape-based reverse-mode autodiff ([`Tape`]) over
//! `ndarray` tensors, the handful of convolutional kernels the models need,
//! named parameter storage with deterministic initialisation, an Adam
//! optimiser and the on-disk weight manifest format.
//!
//! Everything is generic over [`Float`] so models can run in `f32` for speed
//! and in `f64` for gradient checking.

pub mod init;
pub mod kernels;
pub mod manifest;
pub mod optim;
pub mod params;
pub mod tape;

pub use manifest::{Manifest, ManifestError, TensorEntry};
pub use optim::{Adam, AdamConfig};
pub use params::{BoundParams, ParamStore};
pub use tape::{Gradients, Tape, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Scalar type usable in tensors.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn c(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("representable constant")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Float for f32 {}
impl Float for f64 {}
