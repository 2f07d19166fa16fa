//! Rotation-equivariant pick-and-place models over the cyclic groups `C_n`.

pub mod error;
pub mod export;
pub mod field;
pub mod group;
pub mod kernels;
pub mod nn;
pub mod ravens;
pub mod real;
pub mod rng;
pub mod train;
pub mod transporter;
pub mod verify;

pub use error::{Error, Result};
pub use field::{FeatureField, FieldType, Kernel, LiftedStack};
pub use group::{GroupElement, RepKind, Representation};
pub use real::Real;
pub use rng::CounterRng;
