//! Output-bound verification of feed-forward networks with sparse
//! Positivstellensatz certificates.

#[cfg(feature = "interior-point")]
extern crate openblas_src;

pub mod constraints;
pub mod error;
pub mod model;
pub mod parallel;
pub mod poly;
pub mod prop;
pub mod rng;
pub mod sdp;
pub mod sos;
pub mod sparsity;
pub mod verify;

pub use error::{Error, Result};
pub use model::{Activation, IntervalBox, Layer, NetworkModel, PolytopeSpec};
