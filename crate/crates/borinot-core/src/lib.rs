//! Whole-body torque-level optimal control for a hexarotor loco-manipulator.
//!
//! The crate covers the full control stack of the Borinot research platform
//! and a deterministic simulator to exercise it:
//!
//! - [`lie`]: SO(3)/SE(3) manifold arithmetic (generic over the scalar type),
//! - [`model`]: robot description, validation and thrust allocation,
//! - [`dynamics`]: floating-base articulated forward dynamics and integrator,
//! - [`cost`]: residual cost terms with Gauss-Newton derivatives,
//! - [`solver`]: feasibility-driven DDP with squashed control limits,
//! - [`mission`]: mission specification, offline trajectory (rail) and MPC,
//! - [`tracking`]: feed-forward plus PD whole-body tracking layer,
//! - [`thrust_map`]: motor bench identification and power accounting,
//! - [`sim`]: multi-rate closed-loop and jump experiments.

pub mod cost;
pub mod dynamics;
pub mod lie;
pub mod mission;
pub mod model;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod scalar;
pub mod solver;

pub use scalar::Real;

/// Concrete scalar used by everything above the manifold math core.
pub type Scalar = f64;

pub type Rotation = lie::Rotation<Scalar>;
pub type Pose = lie::Pose<Scalar>;
pub type Tangent6 = lie::Tangent6<Scalar>;
