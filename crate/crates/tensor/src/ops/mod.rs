//! Differentiable operations, implemented as methods on [`crate::Tensor`].

pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod norm;
pub mod reduce;
pub mod shape;
