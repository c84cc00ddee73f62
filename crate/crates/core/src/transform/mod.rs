//! Semantics-preserving rewrites of forelem programs and the materialized
//! storage plans they produce.

mod passes;
mod pipeline;
mod storage;

pub use passes::{apply_pass, candidates, Pass, Path, TransformError};
pub use pipeline::*;
pub use storage::*;
