//! Dense `f64` tensors and a tape-based reverse-mode autodiff graph.
//!
//! Everything the transformer needs is expressed as a [`Graph`] op with a
//! hand-written backward rule. Tensors are row-major; rank-2 tensors are
//! `rows × cols` and higher ranks are viewed as `(product of leading dims) ×
//! last dim` by the row-wise ops.

mod graph;
mod kernels;
mod ops;
mod tensor;

pub use graph::{Graph, Var};
pub use ops::{
    add, causal_mask, cross_entropy, gelu, layer_norm, log_softmax_row, matmul, matmul_nt,
    softmax_rows, transpose,
};
pub use tensor::Tensor;
