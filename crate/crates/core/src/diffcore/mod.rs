//! Reverse-mode differentiation over a closed set of tensor primitives.
//!
//! Primitives: matmul, broadcasting add and multiply, sigmoid, tanh, relu,
//! softmax, concatenate, slice, reshape, mean/max/product reductions, scalar
//! scale, a fused batch-norm and a fused binary cross-entropy.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{compare_with_finite_differences, grad_check, relative_error, GradCheckReport};
pub use graph::{BatchMoments, Graph, NodeId, Primitive, ReduceKind};
pub use tensor::{Scalar, Tensor, MAX_RANK};
