//! Minimal reverse-mode autodiff and the policy/value networks built on
//! top of it.
//!
//! Everything here is dependency-light on purpose: a flat tape over
//! `ndarray` matrices, a parameter registry with Adam, masked factored
//! categoricals, three observation encoders, and a binary checkpoint
//! format.

pub mod checkpoint;
pub mod dist;
pub mod net;
pub mod params;
pub mod tape;

pub use dist::MaskedCategoricalSet;
pub use net::{EncoderKind, Observation, ObsBatch, Policy};
pub use params::{Adam, Params};
pub use tape::{Tape, Var, MASKED_LOGP};
