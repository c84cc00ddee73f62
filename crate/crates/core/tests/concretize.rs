mod common;

use forelem::concretize::*;
use forelem::exec::{bind_kernel, execute_variant, DenseOperand, SparseOperand};
use forelem::ir::*;
use forelem::search::{enumerate_variants, EnumerateOptions};
use forelem::transform::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn variant(kind: KernelKind, pipeline: &str) -> ConcreteVariant {
    derive_variant(&builtin_kernel(kind).program, &pipeline.parse().unwrap()).unwrap()
}

fn instance(kind: KernelKind, v: &ConcreteVariant, m: &SparseOperand) -> VariantInstance {
    let spec = builtin_kernel(kind);
    let b = bind_kernel(&spec, m, &[common::input_for(kind, m, 1)]).unwrap();
    build_variant(v, &b).unwrap()
}

fn ints<'a>(inst: &'a VariantInstance, name: &str) -> &'a [i64] {
    inst.arrays[name].ints().unwrap_or_else(|| panic!("{name} is not an int array"))
}

fn reals<'a>(inst: &'a VariantInstance, name: &str) -> &'a [f64] {
    inst.arrays[name].reals().unwrap_or_else(|| panic!("{name} is not a real array"))
}

#[test]
fn canonical_pipelines_are_recognized() {
    let want = [
        FormatName::Coo,
        FormatName::Csr,
        FormatName::Ccs,
        FormatName::EllpackItpack,
        FormatName::Jds,
    ];
    for ((_, text), f) in canonical_pipelines().into_iter().zip(want) {
        for kind in [KernelKind::SpMV, KernelKind::SpMM(2)] {
            let v = variant(kind, text);
            assert_eq!(v.format, f, "{text}");
            assert_eq!(recognize_format(&v.descriptor), f);
        }
    }
}

#[test]
fn m3_goldens() {
    let m = SparseOperand::m3();
    let csr = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, CSR_PIPELINE), &m);
    assert_eq!(ints(&csr, "PA_ptr"), [0, 2, 3, 5]);
    assert_eq!(ints(&csr, "PA_col"), [0, 2, 1, 0, 2]);
    assert_eq!(reals(&csr, "PA_value"), [4.0, 1.0, 5.0, 2.0, 3.0]);

    let ccs = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, CCS_PIPELINE), &m);
    assert_eq!(ints(&ccs, "PA_ptr"), [0, 2, 3, 5]);
    assert_eq!(ints(&ccs, "PA_row"), [0, 2, 1, 0, 2]);
    assert_eq!(reals(&ccs, "PA_value"), [4.0, 2.0, 5.0, 1.0, 3.0]);

    // Column-major [[4,1],[5,pad],[2,3]].
    let ell = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, ITPACK_PIPELINE), &m);
    assert_eq!(reals(&ell, "PA_value"), [4.0, 5.0, 2.0, 1.0, 0.0, 3.0]);
    assert_eq!(ints(&ell, "PA_col"), [0, 1, 0, 2, 0, 2]);
    assert_eq!(ell.params["PA_W"], 2);

    let jds = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, JDS_PIPELINE), &m);
    assert_eq!(ints(&jds, "PA_perm"), [0, 2, 1]);
    assert_eq!(reals(&jds, "PA_value"), [4.0, 2.0, 5.0, 1.0, 3.0]);
    assert_eq!(ints(&jds, "PA_ptr"), [0, 3, 5]);

    let coo = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, COO_PIPELINE), &m);
    assert_eq!(ints(&coo, "PA_row"), [0, 0, 1, 2, 2]);
    assert_eq!(ints(&coo, "PA_col"), [0, 2, 1, 0, 2]);
}

#[test]
fn lowered_csr_uses_offset_loop() {
    let text = variant(KernelKind::SpMV, CSR_PIPELINE).lowered.to_string();
    assert!(text.contains("for (k = PA_ptr[i]; k < PA_ptr[i + 1]; k++)"), "{text}");
    assert!(!text.contains("forelem"), "{text}");
}

#[test]
fn lowered_flat_storage_is_one_loop() {
    let text = variant(KernelKind::SpMV, COO_PIPELINE).lowered.to_string();
    assert_eq!(text.matches("for (").count(), 1, "{text}");
}

#[test]
fn unmaterialized_programs_do_not_concretize() {
    let root = builtin_kernel(KernelKind::SpMV).program;
    assert!(matches!(
        concretize(&root, &Pipeline::default()),
        Err(ConcretizeError::ResidualReservoir(_))
    ));
    let symbolic: Pipeline = "orth(row),encap,matdep".parse().unwrap();
    assert!(derive_variant(&root, &symbolic).is_err());
}

#[test]
fn descriptor_json_has_stable_field_order() {
    let json = variant(KernelKind::SpMV, CSR_PIPELINE).descriptor_json();
    let keys = ["\"id\"", "\"pipeline\"", "\"format\"", "\"components\"", "\"block_geometry\""];
    let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
    assert!(json.contains("\"format\": \"CSR\""));
    assert!(json.contains("\"kind\": \"offset\""));
}

#[test]
fn variant_ids_are_short_and_stable() {
    let a = variant(KernelKind::SpMV, CSR_PIPELINE);
    let b = variant(KernelKind::SpMM(2), CSR_PIPELINE);
    assert_eq!(a.id.len(), 12);
    assert!(a.id.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(a.id, variant_id(CSR_PIPELINE));
    assert_eq!(a.id, b.id);
    assert_ne!(a.id, variant(KernelKind::SpMV, CCS_PIPELINE).id);
}

#[test]
fn empty_and_degenerate_matrices_build_every_format() {
    let cases = [
        SparseOperand::new(3, 3, vec![]).unwrap(),
        SparseOperand::new(3, 3, vec![(0, 0, 1.0), (2, 2, 2.0)]).unwrap(),
        SparseOperand::new(1, 4, vec![(0, 0, 1.0), (0, 1, 2.0), (0, 3, 3.0)]).unwrap(),
    ];
    let spec = builtin_kernel(KernelKind::SpMV);
    for m in &cases {
        let x = common::input_for(KernelKind::SpMV, m, 3);
        let want = forelem::exec::reference_oracle(KernelKind::SpMV, m, std::slice::from_ref(&x)).unwrap();
        for (_, text) in canonical_pipelines() {
            let v = variant(KernelKind::SpMV, text);
            instance(KernelKind::SpMV, &v, m);
            let got = execute_variant(&spec, &v, m, std::slice::from_ref(&x)).unwrap();
            assert_eq!(got["C"].values, want.values, "{text}");
        }
    }
    let gap = SparseOperand::new(3, 3, vec![(0, 0, 1.0), (2, 1, 1.0)]).unwrap();
    let csr = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, CSR_PIPELINE), &gap);
    assert_eq!(ints(&csr, "PA_ptr"), [0, 1, 1, 2]);
    let single = SparseOperand::new(1, 4, vec![(0, 0, 1.0), (0, 1, 2.0), (0, 3, 3.0)]).unwrap();
    let csr = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, CSR_PIPELINE), &single);
    assert_eq!(ints(&csr, "PA_ptr"), [0, 3]);
    let empty = SparseOperand::new(3, 3, vec![]).unwrap();
    let ell = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, ITPACK_PIPELINE), &empty);
    assert_eq!(ell.params["PA_W"], 0);
    assert!(reals(&ell, "PA_value").is_empty());
}

fn pipelines(texts: &[&str]) -> Vec<Pipeline> {
    texts.iter().map(|t| t.parse().unwrap()).collect()
}

#[test]
fn two_by_two_hybrid_of_m3() {
    let spec = builtin_kernel(KernelKind::SpMV);
    let v = blocked_concretize(&spec, BlockGeometry { x: 2, y: Some(2) }, &pipelines(&[CSR_PIPELINE])).unwrap();
    assert_eq!(v.format, FormatName::BlockedHybrid);
    let m = SparseOperand::m3();
    let inst = instance(KernelKind::SpMV, &v, &m);
    let keys: Vec<(usize, usize)> = inst.blocks.iter().map(|b| (b.ii, b.jj)).collect();
    assert_eq!(keys, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    let nnz: Vec<usize> = inst
        .blocks
        .iter()
        .map(|b| b.instance.arrays["PA_value"].len())
        .collect();
    assert_eq!(nnz, vec![2, 1, 1, 1]);
    let x = DenseOperand::vector(vec![1.0, 2.0, 3.0]);
    let y = execute_variant(&spec, &v, &m, &[x]).unwrap();
    assert_eq!(y["C"].values, vec![7.0, 10.0, 11.0]);
}

#[test]
fn hybrid_with_one_block_equals_plain_variant() {
    let spec = builtin_kernel(KernelKind::SpMV);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = common::random_matrix(&mut rng, 12, 40);
    let x = common::input_for(KernelKind::SpMV, &m, 2);
    let plain = execute_variant(&spec, &variant(KernelKind::SpMV, CSR_PIPELINE), &m, std::slice::from_ref(&x)).unwrap();
    let geometry = BlockGeometry { x: m.n_rows as u32, y: None };
    let hybrid = blocked_concretize(&spec, geometry, &pipelines(&[CSR_PIPELINE])).unwrap();
    let got = execute_variant(&spec, &hybrid, &m, &[x]).unwrap();
    assert_eq!(got, plain);
}

#[test]
fn mixed_hybrid_is_named_and_alternates_parts() {
    let spec = builtin_kernel(KernelKind::SpMM(2));
    let v = blocked_concretize(&spec, BlockGeometry { x: 2, y: None }, &pipelines(&[CSR_PIPELINE, ITPACK_PIPELINE])).unwrap();
    assert_eq!(v.format, FormatName::BlockedHybrid);
    assert_eq!(v.descriptor.blocks.len(), 2);
    assert_eq!(v.descriptor.blocks[1].format, FormatName::EllpackItpack);
    let m = common::random_matrix(&mut ChaCha8Rng::seed_from_u64(5), 9, 30);
    let inst = instance(KernelKind::SpMM(2), &v, &m);
    assert!(inst.blocks.iter().enumerate().all(|(n, b)| b.part == n % 2));
}

#[test]
fn hybrid_refuses_triangular_solve_and_zero_blocks() {
    let trsv = builtin_kernel(KernelKind::TrSv);
    assert!(blocked_concretize(&trsv, BlockGeometry { x: 2, y: None }, &pipelines(&[CSR_PIPELINE])).is_err());
    let spmv = builtin_kernel(KernelKind::SpMV);
    assert!(blocked_concretize(&spmv, BlockGeometry { x: 0, y: None }, &pipelines(&[CSR_PIPELINE])).is_err());
    assert!(blocked_concretize(&spmv, BlockGeometry { x: 2, y: None }, &[]).is_err());
}

#[test]
fn trsv_storages_solve() {
    let spec = builtin_kernel(KernelKind::TrSv);
    let m = SparseOperand::new(2, 2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 1, 2.0)]).unwrap();
    let b = DenseOperand::vector(vec![3.0, 2.0]);
    let tree = enumerate_variants(&spec, &EnumerateOptions { depth: 5, block_sizes: vec![2] });
    assert!(!tree.variants.is_empty());
    for v in &tree.variants {
        let x = execute_variant(&spec, v, &m, std::slice::from_ref(&b)).unwrap();
        assert_eq!(x["x"].values, vec![1.0, 1.0], "{}", v.pipeline);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn offset_laws_hold_on_physical_storage(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::random_matrix(&mut rng, 16, 64);
        let rows = m.row_lengths();
        let mut cols = vec![0usize; m.n_cols];
        for &(_, c, _) in m.entries() {
            cols[c] += 1;
        }
        for (text, lens) in [(CSR_PIPELINE, &rows), (CCS_PIPELINE, &cols)] {
            let inst = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, text), &m);
            let ptr = ints(&inst, "PA_ptr");
            prop_assert_eq!(ptr[0], 0);
            prop_assert_eq!(*ptr.last().unwrap(), m.nnz() as i64);
            let diffs: Vec<usize> = ptr.windows(2).map(|w| (w[1] - w[0]) as usize).collect();
            prop_assert_eq!(&diffs[..], &lens[..diffs.len()]);
            prop_assert!(lens[diffs.len()..].iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn jds_storage_laws(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::random_matrix(&mut rng, 16, 64);
        let inst = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, JDS_PIPELINE), &m);
        let perm = ints(&inst, "PA_perm");
        let mut sorted: Vec<i64> = perm.to_vec();
        sorted.sort();
        prop_assert_eq!(sorted, (0..perm.len() as i64).collect::<Vec<_>>());
        let rows = m.row_lengths();
        let lens: Vec<usize> = perm.iter().map(|&r| rows[r as usize]).collect();
        prop_assert!(lens.windows(2).all(|w| w[0] >= w[1]));
        let ptr = ints(&inst, "PA_ptr");
        prop_assert_eq!(ptr[0], 0);
        prop_assert_eq!(*ptr.last().unwrap(), m.nnz() as i64);
        for (k, w) in ptr.windows(2).enumerate() {
            let longer = lens.iter().filter(|&&l| l > k).count() as i64;
            prop_assert_eq!(w[1] - w[0], longer);
        }
    }

    #[test]
    fn ellpack_width_is_longest_row(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::random_matrix(&mut rng, 16, 64);
        let inst = instance(KernelKind::SpMV, &variant(KernelKind::SpMV, ITPACK_PIPELINE), &m);
        let width = *m.row_lengths().iter().max().unwrap_or(&0) as i64;
        prop_assert_eq!(inst.params["PA_W"], width);
        prop_assert_eq!(inst.arrays["PA_value"].len() as i64, width * inst.params["PA_G"]);
    }

    #[test]
    fn physical_execution_matches_interpreter(seed in any::<u64>(), k in 0usize..3) {
        let kind = [KernelKind::SpMV, KernelKind::SpMM(3), KernelKind::TrSv][k];
        let spec = builtin_kernel(kind);
        let tree = enumerate_variants(&spec, &EnumerateOptions { depth: 6, block_sizes: vec![2, 4] });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::matrix_for(kind, &mut rng, 16, 64);
        let x = common::input_for(kind, &m, seed);
        for v in &tree.variants {
            let want = common::interpret_output(&spec, &v.program, &m, &x);
            let got = execute_variant(&spec, v, &m, std::slice::from_ref(&x)).unwrap();
            let err = forelem::exec::max_rel_err(&got[&spec.outputs[0]].values, &want);
            prop_assert!(err <= 1e-10, "{} {}: {err}", kind, v.pipeline);
        }
    }

    #[test]
    fn recognition_is_a_function_of_shape(seed in 0usize..10_000) {
        let tree = enumerate_variants(&builtin_kernel(KernelKind::SpMV), &EnumerateOptions { depth: 6, block_sizes: vec![2] });
        let v = &tree.variants[seed % tree.variants.len()];
        let mut d = v.descriptor.clone();
        d.id = "x".into();
        d.pipeline = "y".into();
        prop_assert_eq!(recognize_format(&d), v.format);
    }
}
