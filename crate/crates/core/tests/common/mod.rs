#![allow(dead_code)]

use forelem::exec::{bind_kernel, interpret, DenseOperand, InterpOptions, SparseOperand};
use forelem::ir::{KernelKind, KernelSpec, Program};
use forelem::search::bench_input;
use rand::Rng;

/// Random matrix with small nonzero integer values, so sums are exact.
pub fn random_matrix(rng: &mut impl Rng, max_n: usize, max_nnz: usize) -> SparseOperand {
    let n_rows = rng.gen_range(1..=max_n);
    let n_cols = rng.gen_range(1..=max_n);
    let nnz = rng.gen_range(0..=max_nnz.min(n_rows * n_cols));
    let mut entries = Vec::new();
    let mut taken = std::collections::BTreeSet::new();
    while entries.len() < nnz {
        let (r, c) = (rng.gen_range(0..n_rows), rng.gen_range(0..n_cols));
        if taken.insert((r, c)) {
            entries.push((r, c, small_value(rng)));
        }
    }
    SparseOperand::new(n_rows, n_cols, entries).unwrap()
}

/// Random square matrix with a full nonzero diagonal of powers of two.
pub fn random_solvable(rng: &mut impl Rng, max_n: usize, max_nnz: usize) -> SparseOperand {
    let n = rng.gen_range(1..=max_n);
    let mut entries: Vec<_> = (0..n)
        .map(|i| {
            let d = [1.0, 2.0, 4.0][rng.gen_range(0..3)];
            (i, i, if rng.gen_bool(0.5) { d } else { -d })
        })
        .collect();
    let extra = rng.gen_range(0..=max_nnz.saturating_sub(n).min(n * n - n));
    let mut taken: std::collections::BTreeSet<_> = (0..n).map(|i| (i, i)).collect();
    let mut added = 0;
    while added < extra {
        let (r, c) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if taken.insert((r, c)) {
            entries.push((r, c, small_value(rng)));
            added += 1;
        }
    }
    SparseOperand::new(n, n, entries).unwrap()
}

pub fn small_value(rng: &mut impl Rng) -> f64 {
    let v = rng.gen_range(1..=9) as f64;
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

pub fn matrix_for(kind: KernelKind, rng: &mut impl Rng, max_n: usize, max_nnz: usize) -> SparseOperand {
    match kind {
        KernelKind::TrSv => random_solvable(rng, max_n, max_nnz),
        _ => random_matrix(rng, max_n, max_nnz),
    }
}

pub fn tolerance(kind: KernelKind) -> f64 {
    match kind {
        KernelKind::TrSv => 1e-8,
        _ => 1e-10,
    }
}

/// Output of `program` interpreted on the kernel's operands.
pub fn interpret_output(spec: &KernelSpec, program: &Program, matrix: &SparseOperand, input: &DenseOperand) -> Vec<f64> {
    let bindings = bind_kernel(spec, matrix, std::slice::from_ref(input)).unwrap();
    let out = interpret(program, &bindings, &InterpOptions::default()).unwrap();
    out.dense[&spec.outputs[0]].values.clone()
}

pub fn input_for(kind: KernelKind, matrix: &SparseOperand, seed: u64) -> DenseOperand {
    bench_input(kind, matrix, seed)
}

/// The M3 matrix with `x = [1, 2, 3]`.
pub fn m3() -> SparseOperand {
    SparseOperand::m3()
}
