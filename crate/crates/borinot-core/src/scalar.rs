//! Scalar abstraction for the manifold math core.
//!
//! The Lie-group types are generic over [`Real`] so the same code serves
//! `f32` and `f64`. Everything above the manifold layer (dynamics, solver,
//! simulation) is pinned to `f64` through the aliases at the crate root.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real: nalgebra::RealField + Copy + FromPrimitive + ToPrimitive {
    /// Convert an `f64` constant into this scalar type.
    #[inline]
    fn scalar(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant")
    }

    /// Widen to `f64` (lossless for both supported types).
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
