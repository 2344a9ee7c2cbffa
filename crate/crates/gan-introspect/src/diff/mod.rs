//! Minimal reverse-mode differentiable tensor primitives.
//!
//! Just enough machinery to build the gated 2-1-2D generator and the
//! projection discriminator: strided (transposed) convolutions, GLU,
//! (conditional) instance normalization, pooling, affine maps, reshape
//! glue, and scalar reductions for losses. Everything runs in f64 and every
//! primitive carries an analytic adjoint checked against finite differences.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, NodeId, ParamGrads, ParamId, ParamStore};
pub use kernels::{conv_out_len, convt_out_len};
pub use tensor::Tensor;
