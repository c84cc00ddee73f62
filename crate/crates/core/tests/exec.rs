mod common;

use forelem::concretize::derive_variant;
use forelem::exec::*;
use forelem::ir::*;
use forelem::search::{enumerate_variants, EnumerateOptions};
use forelem::transform::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// CSR for the products; the column-grouped storage for the solve.
fn csr(kind: KernelKind) -> forelem::concretize::ConcreteVariant {
    let text = match kind {
        KernelKind::TrSv => "matdep,matdep,split,split,nstar(compact),nstar(compact),dimreduce,dimreduce",
        _ => CSR_PIPELINE,
    };
    derive_variant(&builtin_kernel(kind).program, &text.parse().unwrap()).unwrap()
}

#[test]
fn oracle_examples() {
    let m = SparseOperand::m3();
    let y = reference_oracle(KernelKind::SpMV, &m, &[DenseOperand::vector(vec![1.0, 2.0, 3.0])]).unwrap();
    assert_eq!(y.values, vec![7.0, 10.0, 11.0]);

    let u = SparseOperand::new(2, 2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 1, 2.0)]).unwrap();
    let x = reference_oracle(KernelKind::TrSv, &u, &[DenseOperand::vector(vec![3.0, 2.0])]).unwrap();
    assert_eq!(x.values, vec![1.0, 1.0]);
}

#[test]
fn spmm_columns_are_spmv_calls() {
    let m = SparseOperand::m3();
    let b = DenseOperand::new(vec![3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
    let c = reference_oracle(KernelKind::SpMM(2), &m, &[b]).unwrap();
    let y0 = reference_oracle(KernelKind::SpMV, &m, &[DenseOperand::vector(vec![1.0, 2.0, 3.0])]).unwrap();
    let y1 = reference_oracle(KernelKind::SpMV, &m, &[DenseOperand::vector(vec![4.0, 5.0, 6.0])]).unwrap();
    let cols: Vec<f64> = (0..3).flat_map(|i| [y0.values[i], y1.values[i]]).collect();
    assert_eq!(c.values, cols);
}

#[test]
fn run_examples() {
    let m = SparseOperand::m3();
    let spec = builtin_kernel(KernelKind::SpMV);
    let r = run_variant(&spec, &csr(KernelKind::SpMV), &m, &[DenseOperand::vector(vec![1.0; 3])], 3).unwrap();
    assert_eq!(r.outputs["C"].values, vec![5.0, 5.0, 5.0]);
    assert_eq!(r.repeats, 3);
    assert!(r.wall_time > 0.0);
    assert_eq!(r.checksum, 15.0);

    let spmm = builtin_kernel(KernelKind::SpMM(4));
    let zero = DenseOperand::zeros(vec![3, 4]);
    let r = run_variant(&spmm, &csr(KernelKind::SpMM(4)), &m, &[zero], 1).unwrap();
    assert!(r.outputs["C"].values.iter().all(|&v| v == 0.0));

    let trsv = builtin_kernel(KernelKind::TrSv);
    let eye = SparseOperand::new(4, 4, (0..4).map(|i| (i, i, 1.0)).collect()).unwrap();
    let b = DenseOperand::vector(vec![3.0, -1.0, 7.5, 2.0]);
    let r = run_variant(&trsv, &csr(KernelKind::TrSv), &eye, std::slice::from_ref(&b), 0).unwrap();
    assert_eq!(r.outputs["x"].values, b.values);
    assert_eq!(r.repeats, 1);
}

#[test]
fn operand_errors() {
    let spmv = builtin_kernel(KernelKind::SpMV);
    let m = SparseOperand::m3();
    assert!(run_variant(&spmv, &csr(KernelKind::SpMV), &m, &[DenseOperand::vector(vec![1.0; 2])], 1).is_err());
    assert!(run_variant(&spmv, &csr(KernelKind::SpMV), &m, &[], 1).is_err());

    let trsv = builtin_kernel(KernelKind::TrSv);
    let no_diag = SparseOperand::new(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
    let b = DenseOperand::vector(vec![1.0; 2]);
    assert!(run_variant(&trsv, &csr(KernelKind::TrSv), &no_diag, std::slice::from_ref(&b), 1).is_err());
    assert!(reference_oracle(KernelKind::TrSv, &no_diag, std::slice::from_ref(&b)).is_err());
    let rect = SparseOperand::new(2, 3, vec![(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
    assert!(run_variant(&trsv, &csr(KernelKind::TrSv), &rect, &[b], 1).is_err());

    assert!(SparseOperand::new(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
    assert!(SparseOperand::new(2, 2, vec![(2, 0, 1.0)]).is_err());
    assert!(DenseOperand::new(vec![2, 2], vec![1.0; 3]).is_err());
}

#[test]
fn oracle_refuses_huge_orders() {
    let big = SparseOperand::new(ORACLE_MAX_ORDER + 1, 1, vec![]).unwrap();
    let x = DenseOperand::vector(vec![0.0]);
    assert!(matches!(reference_oracle(KernelKind::SpMV, &big, &[x]), Err(ExecError::TooLarge(_))));
}

#[test]
fn relative_error_definition() {
    assert_eq!(max_rel_err(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert_eq!(max_rel_err(&[1.0, 3.0], &[1.0, 2.0]), 0.5);
    assert_eq!(max_rel_err(&[0.5], &[0.0]), 0.5);
    assert_eq!(max_rel_err(&[1.0], &[1.0, 2.0]), f64::INFINITY);
    assert_eq!(max_rel_err(&[f64::NAN], &[1.0]), f64::INFINITY);
}

#[test]
fn build_time_is_positive() {
    let spec = builtin_kernel(KernelKind::SpMV);
    let m = SparseOperand::m3();
    for (_, text) in canonical_pipelines() {
        let v = derive_variant(&spec.program, &text.parse().unwrap()).unwrap();
        assert!(build_time(&spec, &v, &m, &[DenseOperand::vector(vec![1.0; 3])]).unwrap() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn variants_agree_with_oracle_and_each_other(seed in any::<u64>(), k in 0usize..3) {
        let kind = [KernelKind::SpMV, KernelKind::SpMM(2), KernelKind::TrSv][k];
        let spec = builtin_kernel(kind);
        let tree = enumerate_variants(&spec, &EnumerateOptions { depth: 6, block_sizes: vec![2] });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::matrix_for(kind, &mut rng, 24, 120);
        let x = common::input_for(kind, &m, seed);
        let want = reference_oracle(kind, &m, std::slice::from_ref(&x)).unwrap();
        let mut sums = Vec::new();
        for v in &tree.variants {
            let a = run_variant(&spec, v, &m, std::slice::from_ref(&x), 1).unwrap();
            let b = run_variant(&spec, v, &m, std::slice::from_ref(&x), 2).unwrap();
            prop_assert_eq!(&a.outputs, &b.outputs, "not deterministic: {}", v.pipeline);
            prop_assert!(a.wall_time > 0.0);
            let err = max_rel_err(&a.outputs[&spec.outputs[0]].values, &want.values);
            prop_assert!(err <= common::tolerance(kind), "{} {}: {err}", kind, v.pipeline);
            sums.push(a.checksum);
        }
        let scale = want.values.iter().fold(1.0f64, |m, v| m.max(v.abs())) * want.values.len().max(1) as f64;
        for s in &sums {
            if kind == KernelKind::TrSv {
                prop_assert!((s - sums[0]).abs() <= common::tolerance(kind) * scale);
            } else {
                // Small integer data: every summation order is exact.
                prop_assert_eq!(*s, sums[0]);
            }
        }
    }
}
