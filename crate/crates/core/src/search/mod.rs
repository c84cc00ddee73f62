//! Variant enumeration, benchmarking, and the coverage metrics used to
//! pick routines that do well across many matrices.

mod bench;
mod coverage;
mod enumerate;

use thiserror::Error;

pub use bench::{bench, bench_input, results_csv, timing_table, BenchMatrix, BenchRecord, RESULTS_HEADER};
pub use coverage::{
    coverage, coverage_csv, coverage_curve, curve_csv, select_kernel, top_group, CoverageReport,
    CurvePoint, Selection, TimingTable,
};
pub use enumerate::{enumerate_variants, pass_menu, EnumerateOptions, TreeNode, VariantTree};

use crate::exec::ExecError;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("timing table: {0}")]
    Table(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}
