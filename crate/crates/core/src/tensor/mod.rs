//! Minimal dense linear algebra with allocation tracking.

pub mod index;
pub mod matrix;
pub mod memory;
pub mod ops;
pub mod probe;
mod scalar;

pub use index::{IndexMatrix, PAD_INDEX};
pub use matrix::{MatMut, MatRef, Matrix};
pub use memory::{BudgetExceeded, MemoryScope, ShapeWatch};
pub use ops::{
    gather_rows, gemm, matmul, matmul_tn, relu, row_softmax, row_topk, scatter_rows, selected_dots,
};
pub use probe::{MatmulCall, MatmulProbe};
pub use scalar::{DType, Scalar};
