use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{SearchError, TimingTable};
use crate::concretize::ConcreteVariant;
use crate::exec::{build_time, max_rel_err, reference_oracle, run_variant, DenseOperand, SparseOperand};
use crate::ir::{KernelKind, KernelSpec};

#[derive(Clone, Debug)]
pub struct BenchMatrix {
    pub name: String,
    pub matrix: SparseOperand,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub matrix: String,
    pub kernel: String,
    pub variant_id: String,
    pub format: String,
    pub repeats: usize,
    pub median_seconds: f64,
    pub build_seconds: f64,
    pub max_rel_err: f64,
}

pub const RESULTS_HEADER: [&str; 8] = [
    "matrix",
    "kernel",
    "variant_id",
    "format",
    "repeats",
    "median_seconds",
    "build_seconds",
    "max_rel_err",
];

/// Deterministic dense input for `kind` on `matrix`: small nonzero integers.
pub fn bench_input(kind: KernelKind, matrix: &SparseOperand, seed: u64) -> DenseOperand {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v = rng.gen_range(1..=9) as f64;
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect()
    };
    match kind {
        KernelKind::SpMV => DenseOperand::vector(draw(matrix.n_cols)),
        KernelKind::SpMM(k) => DenseOperand {
            dims: vec![matrix.n_cols, k],
            values: draw(matrix.n_cols * k),
        },
        KernelKind::TrSv => DenseOperand::vector(draw(matrix.n_rows)),
    }
}

/// Times every variant on every matrix, serially, and checks each output
/// against the dense oracle.
pub fn bench(
    spec: &KernelSpec,
    variants: &[ConcreteVariant],
    matrices: &[BenchMatrix],
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>, SearchError> {
    let mut out = Vec::with_capacity(variants.len() * matrices.len());
    for m in matrices {
        let input = bench_input(spec.kind, &m.matrix, seed);
        let want = reference_oracle(spec.kind, &m.matrix, std::slice::from_ref(&input))?;
        for v in variants {
            let run = run_variant(spec, v, &m.matrix, std::slice::from_ref(&input), repeats)?;
            let build = build_time(spec, v, &m.matrix, std::slice::from_ref(&input))?;
            let got = &run.outputs[&spec.outputs[0]];
            out.push(BenchRecord {
                matrix: m.name.clone(),
                kernel: spec.kind.to_string(),
                variant_id: v.id.clone(),
                format: v.format.to_string(),
                repeats: run.repeats,
                median_seconds: run.wall_time,
                build_seconds: build,
                max_rel_err: max_rel_err(&got.values, &want.values),
            });
        }
    }
    Ok(out)
}

pub fn results_csv(records: &[BenchRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.matrix.clone(),
            r.kernel.clone(),
            r.variant_id.clone(),
            r.format.clone(),
            r.repeats.to_string(),
            format!("{:e}", r.median_seconds),
            format!("{:e}", r.build_seconds),
            format!("{:e}", r.max_rel_err),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Kernel times as a coverage table, routines named by variant id.
pub fn timing_table(records: &[BenchRecord]) -> Result<TimingTable, SearchError> {
    TimingTable::from_triples(
        records
            .iter()
            .map(|r| (r.variant_id.as_str(), r.matrix.as_str(), r.median_seconds)),
    )
}
