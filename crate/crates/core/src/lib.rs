//! Separability certification for multipartite mixed states.
//!
//! A state is encoded as a Hermitian tensor and matched against the moments
//! of a measure supported on products of unit spheres. Each relaxation level
//! is a semidefinite program over those moments. An infeasible level proves
//! the state entangled; a flat optimal moment sequence yields an explicit
//! decomposition into product states.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod dense;
pub mod extract;
pub mod io;
pub mod catalog;
pub mod certify;
pub mod error;
pub mod moments;
pub mod poly;
pub mod sdp;
pub mod tensor;

pub use error::{Error, Result};
