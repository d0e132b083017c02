//! Moment propagation theory for self-normalizing networks: the SELU moment
//! map, its Jacobian, grid verification of the contraction and variance
//! bounds, network primitives, and Monte-Carlo and training harnesses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod jacobian;
pub mod moments;
pub mod primitives;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use moments::{map_moments, MapResult, MomentPair, SeluParams, WeightMoments};
