//! Execution: kernel operands, the reference interpreter, the executor for
//! concretized variants and the dense reference oracle.

mod interp;
mod operands;
mod run;

use thiserror::Error;

pub use interp::{build_groups, interpret, InterpOptions, InterpResult, InterpStats};
pub use operands::{bind_kernel, check_diagonal, Bindings, DenseOperand, SparseOperand};
pub use run::{
    build_time, checksum, execute_variant, max_rel_err, prepare, reference_oracle, run_variant,
    PreparedRun, RunResult, ORACLE_MAX_ORDER,
};

use crate::ir::IrError;
use crate::transform::StorageError;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("index {index} out of bounds for `{array}` of length {len}")]
    OutOfBounds {
        array: String,
        index: i64,
        len: usize,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("bad operand: {0}")]
    Operand(String),
    #[error("diagonal entry ({0}, {0}) is missing or zero")]
    MissingDiagonal(usize),
    #[error("matrix of order {0} is too large for the dense oracle")]
    TooLarge(usize),
}
