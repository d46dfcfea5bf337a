//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! The tape records a closed set of primitives (add, sub, elementwise and
//! scalar products, affine maps, tanh, scaled sums). Input derivatives up to
//! second order in `z` come from forward-propagated [`Jet`]s whose arithmetic
//! is itself recorded, so parameter gradients of losses that contain
//! `dp/dt` and `d2p/dz2` need only one backward sweep.

mod jet;
mod matrix;
mod tape;

pub use jet::{input_derivatives, DerivativeBundle, Jet};
pub use matrix::{gemm, matmul, Matrix, Trans};
pub use tape::{Gradients, Primitive, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("unsupported operation `{0}`")]
    UnsupportedOperation(String),
    #[error("`{op:?}` expects {expected} operands, got {got}")]
    Arity { op: Primitive, expected: usize, got: usize },
    #[error("variable belongs to a different tape")]
    ForeignVariable,
    #[error("no differentiable inputs registered on this tape")]
    UnregisteredInput,
    #[error("derivative bundles need a single-column output, got {cols} columns")]
    NotScalarOutput { cols: usize },
}
