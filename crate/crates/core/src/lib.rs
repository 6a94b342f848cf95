//! Unrolled primal-dual networks for linear inverse problems in imaging.
//!
//! The crate models the restoration problem
//! `min_x 1/2 ||A x - z||^2 + ||L x||_1`, solves it with the Condat–Vũ
//! primal-dual iteration ([`pdhg`]), and unrolls a fixed number of those
//! iterations into a network whose step sizes and analysis operators are
//! learned from data ([`network`], [`backprop`], [`train`]).

pub mod backprop;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod operators;
pub mod pdhg;
pub mod prox;
pub mod rng;
pub mod train;

pub use data::Pair;
pub use error::{Error, Result};
pub use image::{Image, Measurement};
pub use network::{LearningMode, NetworkParams};
pub use operators::{AnalysisOperator, DegradationKind, DegradationOperator, LinearMap};
