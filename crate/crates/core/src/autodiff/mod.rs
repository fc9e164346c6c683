//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor) values.
//!
//! A [`Tape`] records every operation as a node appended after its parents, so
//! node order is already a topological order and the backward sweep is a single
//! reverse pass over the node list.

mod cost;
mod ops;
mod tape;

pub use tape::{CustomBackward, Tape, Var};

/// Scalar helpers shared with the routing module.
pub(crate) mod ops_support {
    pub(crate) use super::ops::{budget_normalize_rows, sigmoid};
}
