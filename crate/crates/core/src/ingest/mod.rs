//! Matrix inputs: Matrix Market files, synthetic generators and the
//! triangular helpers used to derive solver inputs.

mod mm;
mod synth;

use thiserror::Error;

pub use mm::{
    format_matrix_market, parse_matrix_market, read_matrix_market, write_matrix_market, MmField,
    MmHeader, MmSymmetry, ReadOptions,
};
pub use synth::{synth_matrix, Distribution, SynthSpec};

use crate::exec::SparseOperand;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read or write {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad Matrix Market header: {0}")]
    Header(String),
    #[error("unsupported Matrix Market qualifier `{0}`")]
    Unsupported(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: entry ({row}, {col}) outside the declared {n_rows}x{n_cols} extents")]
    OutOfBounds {
        line: usize,
        row: i64,
        col: i64,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("duplicate entry ({row}, {col}) (1-based); pass --sum-duplicates to add them")]
    Duplicate { row: usize, col: usize },
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    NotSymmetric(String),
}

/// Which part of a square matrix to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

/// Keeps the entries on or below (`Lower`) or on or above (`Upper`) the
/// diagonal.
pub fn triangle(m: &SparseOperand, which: Triangle) -> SparseOperand {
    let entries = m
        .entries()
        .iter()
        .copied()
        .filter(|&(r, c, _)| match which {
            Triangle::Lower => c <= r,
            Triangle::Upper => c >= r,
        })
        .collect();
    SparseOperand::new(m.n_rows, m.n_cols, entries).expect("subset of a valid matrix")
}

/// Sets every diagonal entry of the leading square to 1, adding missing ones.
pub fn unit_diagonal(m: &SparseOperand) -> SparseOperand {
    let n = m.n_rows.min(m.n_cols);
    let mut entries: Vec<_> = m.entries().iter().copied().filter(|&(r, c, _)| r != c).collect();
    entries.extend((0..n).map(|i| (i, i, 1.0)));
    SparseOperand::new(m.n_rows, m.n_cols, entries).expect("diagonal added once")
}

pub fn transpose(m: &SparseOperand) -> SparseOperand {
    let entries = m.entries().iter().map(|&(r, c, v)| (c, r, v)).collect();
    SparseOperand::new(m.n_cols, m.n_rows, entries).expect("transpose of a valid matrix")
}
