mod common;

use std::collections::BTreeMap;

use forelem::exec::{bind_kernel, build_groups, interpret, Bindings, DenseOperand, InterpOptions, SparseOperand};
use forelem::ir::*;
use forelem::search::{enumerate_variants, pass_menu, EnumerateOptions, VariantTree};
use forelem::transform::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pl(s: &str) -> Pipeline {
    s.parse().unwrap()
}

fn spmv() -> KernelSpec {
    builtin_kernel(KernelKind::SpMV)
}

fn apply(p: &Program, s: &str) -> Program {
    apply_pipeline(p, &pl(s)).unwrap()
}

fn groups_of(spec: &KernelSpec, program: &Program, m: &SparseOperand) -> BTreeMap<String, Grouped> {
    let input = common::input_for(spec.kind, m, 0);
    let b = bind_kernel(spec, m, &[input]).unwrap();
    let resolved = resolve_reservoirs(program, &b.reservoirs).unwrap();
    build_groups(program, &b.params, &resolved).unwrap()
}

fn only_storage(groups: &BTreeMap<String, Grouped>) -> &Grouped {
    assert_eq!(groups.len(), 1);
    groups.values().next().unwrap()
}

fn run_spmv(program: &Program, m: &SparseOperand, x: Vec<f64>) -> (Vec<f64>, forelem::exec::InterpStats) {
    let spec = spmv();
    let b = bind_kernel(&spec, m, &[DenseOperand::vector(x)]).unwrap();
    let r = interpret(program, &b, &InterpOptions::default()).unwrap();
    (r.dense["C"].values.clone(), r.stats)
}

fn row_matrix(rows: &[usize], n: usize) -> SparseOperand {
    SparseOperand::new(n, 1, rows.iter().map(|&r| (r, 0, 1.0)).collect()).unwrap()
}

#[test]
fn orthogonalize_adds_field_loop() {
    let src = "reservoir T(field1, field2);\ndata A(T);\ndense C[N];\nforelem (t; t in T) { C[t.field2] += A[t]; }\n";
    let p = parse_program(src).unwrap();
    let q = apply_pass(&p, &Pass::Orthogonalize(vec![FieldName::new("field1")]), 0).unwrap();
    let Stmt::Forelem { var, domain, body } = &q.body[0] else { panic!() };
    assert_eq!(
        domain,
        &Domain::FieldValues {
            reservoir: "T".into(),
            field: FieldName::new("field1")
        }
    );
    let Stmt::Forelem { domain: inner, .. } = &body[0] else { panic!() };
    assert_eq!(
        inner,
        &Domain::Reservoir {
            name: "T".into(),
            cond: Some(Condition::single("field1", Expr::var(var.clone())))
        }
    );
}

#[test]
fn orthogonalize_on_two_fields_builds_triple_nest() {
    let p = apply(&spmv().program, "orth(row,col)");
    let text = print_program(&p);
    assert!(text.contains("forelem (i; i in T.row)"), "{text}");
    assert!(text.contains("forelem (j; j in T.col)"), "{text}");
    assert!(text.contains("T.(row, col)[(i, j)]"), "{text}");
}

#[test]
fn orthogonalize_refuses_unknown_and_bound_fields() {
    let p = spmv().program;
    assert!(apply_pass(&p, &Pass::Orthogonalize(vec![FieldName::new("nope")]), 0).is_err());
    let q = apply(&p, "orth(row)");
    let inner = candidates(&q, &Pass::Orthogonalize(vec![FieldName::new("row")])).len();
    for n in 0..inner {
        assert!(apply_pass(&q, &Pass::Orthogonalize(vec![FieldName::new("row")]), n).is_err());
    }
}

#[test]
fn orthogonalize_single_value_field() {
    let m = SparseOperand::new(4, 4, vec![(2, 0, 1.0), (2, 3, 2.0)]).unwrap();
    let p = apply(&spmv().program, "orth(row)");
    let (y, _) = run_spmv(&p, &m, vec![1.0, 1.0, 1.0, 1.0]);
    assert_eq!(y, vec![0.0, 0.0, 3.0, 0.0]);
}

#[test]
fn encapsulate_counts_empty_inner_loops() {
    let p = apply(&spmv().program, "orth(row),encap");
    let (_, stats) = run_spmv(&p, &row_matrix(&[5], 6), vec![1.0]);
    assert_eq!(stats.empty_loops, 5);

    let (y, stats) = run_spmv(&p, &row_matrix(&[0, 1, 2], 3), vec![1.0]);
    assert_eq!(stats.empty_loops, 0);
    assert_eq!(y, vec![1.0; 3]);

    // {1,2,6,7,8,10} becomes [0, 11) with 0, 3, 4, 5, 9 empty.
    let (_, stats) = run_spmv(&p, &row_matrix(&[1, 2, 6, 7, 8, 10], 11), vec![1.0]);
    assert_eq!(stats.empty_loops, 5);
}

#[test]
fn encapsulate_needs_a_field_loop() {
    assert!(apply_pipeline(&spmv().program, &pl("encap")).is_err());
}

#[test]
fn materialize_independent_is_flat() {
    let p = apply(&spmv().program, "matind");
    assert_eq!(p.storages.len(), 1);
    assert!(p.storages[0].levels.is_empty());
    let g = groups_of(&spmv(), &p, &SparseOperand::m3());
    let g = only_storage(&g);
    assert_eq!(g.lens(), vec![5]);
}

#[test]
fn materialize_independent_with_constant_condition() {
    let src = "reservoir T(row, col);\ndata A(T);\ndense C[N];\ndense B[M];\nforelem (t; t in T.row[2]) { C[t.row] += B[t.col] * A[t]; }\n";
    let p = parse_program(src).unwrap();
    let q = apply_pass(&p, &Pass::MaterializeIndependent, 0).unwrap();
    let spec = KernelSpec {
        program: q.clone(),
        ..spmv()
    };
    let g = groups_of(&spec, &q, &SparseOperand::m3());
    let g = only_storage(&g);
    assert_eq!(g.leaf_count(), 2);
    let (y, _) = run_spmv(&q, &SparseOperand::m3(), vec![1.0, 2.0, 3.0]);
    assert_eq!(y, vec![0.0, 0.0, 11.0]);
}

#[test]
fn materialize_empty_reservoir() {
    let empty = SparseOperand::new(3, 3, vec![]).unwrap();
    let p = apply(&spmv().program, "matind");
    let g = groups_of(&spmv(), &p, &empty);
    assert_eq!(only_storage(&g).leaf_count(), 0);
    let (y, stats) = run_spmv(&p, &empty, vec![1.0; 3]);
    assert_eq!(y, vec![0.0; 3]);
    assert_eq!(stats.assignments, 0);
}

#[test]
fn materialize_dependent_row_lengths() {
    let p = apply(&spmv().program, "orth(row),encap,matdep");
    let g = groups_of(&spmv(), &p, &SparseOperand::m3());
    assert_eq!(only_storage(&g).lens(), vec![2, 1, 2]);

    let gap = SparseOperand::new(3, 3, vec![(0, 0, 1.0), (2, 1, 1.0)]).unwrap();
    let g = groups_of(&spmv(), &p, &gap);
    assert_eq!(only_storage(&g).lens(), vec![1, 0, 1]);
}

#[test]
fn materialize_dependent_needs_encapsulation() {
    let err = apply_pipeline(&spmv().program, &pl("matdep")).unwrap_err();
    assert_eq!(err.index, 0);
    assert!(apply_pipeline(&spmv().program, &pl("orth(row),matdep")).is_err());
}

#[test]
fn horizontal_reduce_keeps_used_fields() {
    let src = "reservoir T(field1, field2, field3, field4);\ndata A(T);\ndense C[N];\nforelem (t; t in T) { C[t.field1] += A[t] * t.field2; }\n";
    let p = parse_program(src).unwrap();
    let q = apply_pass(&p, &Pass::HorizontalReduce, 0).unwrap();
    let reduced = q.reservoirs.last().unwrap();
    assert_eq!(reduced.fields, vec![FieldName::new("field1"), FieldName::new("field2")]);
    assert_eq!(reduced.origin, ReservoirOrigin::Projection { source: "T".into() });

    // All fields of SpMV are used.
    assert!(apply_pass(&spmv().program, &Pass::HorizontalReduce, 0).is_err());
}

#[test]
fn horizontal_reduce_refuses_collapsing_tuples() {
    let src = "reservoir T(field1, field2, field3);\ndata A(T);\ndense C[N];\nforelem (t; t in T) { C[t.field1] += A[t] * t.field2; }\n";
    let p = parse_program(src).unwrap();
    let q = apply_pass(&p, &Pass::HorizontalReduce, 0).unwrap();
    let t = TupleReservoir::build(
        ["field1", "field2", "field3"].map(FieldName::new).to_vec(),
        &["A"],
        [(vec![1, 2, 0], vec![1.0]), (vec![1, 2, 1], vec![2.0])],
    )
    .unwrap();
    let bindings = Bindings {
        params: BTreeMap::from([("N".to_string(), 2)]),
        reservoirs: BTreeMap::from([("T".to_string(), t.clone())]),
        dense: BTreeMap::from([("C".to_string(), DenseOperand::zeros(vec![2]))]),
    };
    assert!(interpret(&p, &bindings, &InterpOptions::default()).is_ok());
    assert!(interpret(&q, &bindings, &InterpOptions::default()).is_err());
}

#[test]
fn structure_split_rewrites_leaf_reads() {
    let before = print_program(&apply(&spmv().program, "orth(row),encap,matdep"));
    assert!(before.contains("PA[i][k].value"), "{before}");
    let after = print_program(&apply(&spmv().program, "orth(row),encap,matdep,split"));
    assert!(after.contains("PA.value[i][k]"), "{after}");
    assert!(after.contains("PA.col[i][k]"), "{after}");
    assert!(apply_pipeline(&spmv().program, &pl("orth(row),encap,matdep,split,split")).is_err());
}

#[test]
fn nstar_padded_and_compact() {
    let compact = apply(&spmv().program, "orth(row),encap,matdep,split,nstar(compact)");
    let padded = apply(&spmv().program, "orth(row),encap,matdep,split,nstar(padded)");
    assert_eq!(compact.storages[0].len, Some(LenMode::Compact));
    assert_eq!(padded.storages[0].len, Some(LenMode::Padded));
    let g = groups_of(&spmv(), &padded, &SparseOperand::m3());
    let g = only_storage(&g);
    assert_eq!(g.lens(), vec![2, 1, 2]);
    assert_eq!(g.width, 2);
    let pads: usize = g.lens().iter().map(|l| g.width - l).sum();
    assert_eq!(pads, 1);
    assert!(apply_pipeline(&spmv().program, &pl("orth(row),encap,matdep,nstar(compact),nstar(padded)")).is_err());
}

#[test]
fn nstar_equal_rows_need_no_padding() {
    let m = SparseOperand::new(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0), (1, 1, 4.0)]).unwrap();
    let padded = apply(&spmv().program, "orth(row),encap,matdep,nstar(padded)");
    let compact = apply(&spmv().program, "orth(row),encap,matdep,nstar(compact)");
    let (a, sa) = run_spmv(&padded, &m, vec![1.0, 1.0]);
    let (b, sb) = run_spmv(&compact, &m, vec![1.0, 1.0]);
    assert_eq!(a, b);
    assert_eq!(sa.pad_assignments, 0);
    assert_eq!(sa.assignments, sb.assignments);
}

#[test]
fn nstar_sort_permutation_examples() {
    assert_eq!(sort_permutation(&[2, 1, 2]), vec![0, 2, 1]);
    assert_eq!(sort_permutation(&[1, 3, 2]), vec![1, 2, 0]);
    assert_eq!(sort_permutation(&[3, 3, 3]), vec![0, 1, 2]);

    let p = apply(&spmv().program, "orth(row),encap,matdep,split,sort");
    let g = groups_of(&spmv(), &p, &SparseOperand::m3());
    assert_eq!(only_storage(&g).order, vec![0, 2, 1]);
}

#[test]
fn dim_reduce_refuses_padding() {
    assert!(apply_pipeline(&spmv().program, &pl("orth(row),encap,matdep,nstar(padded),dimreduce")).is_err());
    assert!(apply_pipeline(&spmv().program, &pl("orth(row),encap,matdep,dimreduce")).is_err());
}

fn join_program() -> Program {
    let src = "reservoir T(a);\nreservoir R(b);\ndata V(R);\ndense C[N];\nforelem (t; t in T) { forelem (r; r in R.b[t.a]) { C[t.a] += V[r]; } }\n";
    parse_program(src).unwrap()
}

fn join_bindings(t: &[i64], r: &[(i64, f64)]) -> Bindings {
    let t = TupleReservoir::new(vec![FieldName::new("a")], t.iter().map(|&a| vec![a]).collect()).unwrap();
    let r = TupleReservoir::build(vec![FieldName::new("b")], &["V"], r.iter().map(|&(b, v)| (vec![b], vec![v]))).unwrap();
    Bindings {
        params: BTreeMap::from([("N".to_string(), 4)]),
        reservoirs: BTreeMap::from([("T".to_string(), t), ("R".to_string(), r)]),
        dense: BTreeMap::from([("C".to_string(), DenseOperand::zeros(vec![4]))]),
    }
}

#[test]
fn loop_collapse_joins_reservoirs() {
    let p = join_program();
    let q = apply_pass(&p, &Pass::LoopCollapse, 0).unwrap();
    assert!(print_program(&q).contains("join(T, R, a, b)"));
    let b = join_bindings(&[1, 2], &[(2, 7.0)]);
    let before = interpret(&p, &b, &InterpOptions::default()).unwrap();
    let after = interpret(&q, &b, &InterpOptions::default()).unwrap();
    assert_eq!(after.stats.assignments, 1);
    assert_eq!(after.dense["C"].values, vec![0.0, 0.0, 7.0, 0.0]);
    assert_eq!(before.dense, after.dense);

    let empty = join_bindings(&[1, 2], &[]);
    let out = interpret(&q, &empty, &InterpOptions::default()).unwrap();
    assert_eq!(out.stats.assignments, 0);
}

#[test]
fn loop_collapse_needs_equi_join() {
    assert!(apply_pass(&spmv().program, &Pass::LoopCollapse, 0).is_err());
}

#[test]
fn interchange_swaps_field_loops() {
    let p = apply(&spmv().program, "orth(row,col)");
    let q = apply(&p, "interchange");
    let Stmt::Forelem { var, .. } = &q.body[0] else { panic!() };
    assert_eq!(var, "j");
    assert_eq!(apply(&q, "interchange"), p);
}

#[test]
fn interchange_refuses_trsv_outer_loop() {
    let p = builtin_kernel(KernelKind::TrSv).program;
    let pass = Pass::LoopInterchange(None);
    for n in 0..candidates(&p, &pass).len() {
        assert!(apply_pass(&p, &pass, n).is_err());
    }
}

#[test]
fn interchange_of_materialized_rows_is_position_major() {
    let p = apply(&spmv().program, "orth(row),encap,matdep,split,sort,interchange");
    assert!(p.storages[0].position_major);
}

/// SpMV with `C[row] += ii`, so each row records its block number.
fn block_numbers(n: usize, size: u32) -> Vec<f64> {
    let src = "reservoir T(row, col);\ndense C[N];\ndense B[M];\nforelem (t; t in T) { C[t.row] += 1; }\n";
    let p = parse_program(src).unwrap();
    let mut q = apply(&p, &format!("orth(row),encap,block({size})"));
    let Stmt::Forelem { var: outer, .. } = &q.body[0] else { panic!() };
    let outer = outer.clone();
    for s in &mut q.body {
        s.rewrite_exprs(&mut |e| match e {
            Expr::Int(1) => Expr::var(outer.clone()),
            e => e,
        });
    }
    let rows: Vec<usize> = (0..n).collect();
    let m = row_matrix(&rows, n);
    let b = bind_kernel(&spmv(), &m, &[DenseOperand::vector(vec![0.0])]).unwrap();
    interpret(&q, &b, &InterpOptions::default()).unwrap().dense["C"].values.clone()
}

#[test]
fn loop_block_partitions_range() {
    assert_eq!(block_numbers(6, 2), vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
    assert_eq!(block_numbers(5, 2), vec![0.0, 0.0, 1.0, 1.0, 2.0]);
    assert_eq!(block_numbers(3, 8), vec![0.0; 3]);
}

#[test]
fn loop_block_two_dimensional_nest() {
    let p = apply(&spmv().program, "orth(row,col),encap,encap,block(2),block(2)");
    let text = print_program(&p);
    let depth = text.lines().filter(|l| l.trim_start().starts_with("forelem")).count();
    assert_eq!(depth, 5, "{text}");
}

#[test]
fn loop_block_refuses_zero_and_unencapsulated() {
    let p = apply(&spmv().program, "orth(row),encap");
    assert!(apply_pass(&p, &Pass::LoopBlock { var: None, size: 0 }, 0).is_err());
    assert!(apply_pipeline(&spmv().program, &pl("orth(row),block(2)")).is_err());
}

#[test]
fn pipeline_examples() {
    let root = spmv().program;
    assert_eq!(apply_pipeline(&root, &Pipeline::default()).unwrap(), root);
    let csr = apply(&root, CSR_PIPELINE);
    assert!(csr.storages[0].offsets);
    let err = apply_pipeline(&root, &pl("orth(row),encap,dimreduce")).unwrap_err();
    assert_eq!(err.index, 2);
    assert_eq!(err.pass, "dimreduce");
}

#[test]
fn pipeline_text_round_trips() {
    for (_, text) in canonical_pipelines() {
        assert_eq!(pl(text).to_string(), text);
    }
    assert_eq!(pl("block(4)@1").to_string(), "block(4)@1");
    assert!("bogus".parse::<Pipeline>().is_err());
    assert!("nstar(sideways)".parse::<Pipeline>().is_err());
}

#[test]
fn every_menu_pass_refuses_or_validates() {
    let tree = tree_for(KernelKind::SpMV, 5);
    for node in &tree.nodes {
        for pass in pass_menu(&node.program, &[2]) {
            for n in 0..candidates(&node.program, &pass).len() + 1 {
                if let Ok(q) = apply_pass(&node.program, &pass, n) {
                    validate(&q).unwrap();
                }
            }
        }
    }
}

fn tree_for(kind: KernelKind, depth: usize) -> VariantTree {
    enumerate_variants(
        &builtin_kernel(kind),
        &EnumerateOptions {
            depth,
            block_sizes: vec![2, 4],
        },
    )
}

fn sorted_visits(program: &Program, b: &Bindings) -> Vec<Vec<TupleId>> {
    let opts = InterpOptions {
        shuffle: None,
        record_visits: true,
    };
    let mut v = interpret(program, b, &opts).unwrap().visits;
    v.sort();
    v
}

const KINDS: [KernelKind; 3] = [KernelKind::SpMV, KernelKind::SpMM(3), KernelKind::TrSv];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn passes_preserve_outputs_and_visits(seed in any::<u64>(), k in 0usize..3) {
        let kind = KINDS[k];
        let spec = builtin_kernel(kind);
        let tree = tree_for(kind, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::matrix_for(kind, &mut rng, 16, 64);
        let x = common::input_for(kind, &m, seed);
        let b = bind_kernel(&spec, &m, std::slice::from_ref(&x)).unwrap();
        let want = common::interpret_output(&spec, &spec.program, &m, &x);
        let visits = sorted_visits(&spec.program, &b);
        for node in &tree.nodes[1..] {
            let got = common::interpret_output(&spec, &node.program, &m, &x);
            let err = forelem::exec::max_rel_err(&got, &want);
            prop_assert!(err <= common::tolerance(kind), "{} after {}: {err}", kind, node.pipeline);
            prop_assert_eq!(&sorted_visits(&node.program, &b), &visits, "{}", node.pipeline);
        }
    }

    #[test]
    fn visit_order_does_not_matter(seed in any::<u64>(), shuffle in any::<u64>(), k in 0usize..3) {
        let kind = KINDS[k];
        let spec = builtin_kernel(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::matrix_for(kind, &mut rng, 16, 64);
        let x = common::input_for(kind, &m, seed);
        let b = bind_kernel(&spec, &m, std::slice::from_ref(&x)).unwrap();
        for text in [CSR_PIPELINE, COO_PIPELINE, "orth(col),encap,matdep"] {
            let Ok(p) = apply_pipeline(&spec.program, &pl(text)) else { continue };
            let plain = interpret(&p, &b, &InterpOptions::default()).unwrap();
            let shuffled = interpret(&p, &b, &InterpOptions { shuffle: Some(shuffle), record_visits: false }).unwrap();
            let out = &spec.outputs[0];
            let err = forelem::exec::max_rel_err(&shuffled.dense[out].values, &plain.dense[out].values);
            prop_assert!(err <= common::tolerance(kind));
        }
    }

    #[test]
    fn interchange_is_an_involution(seed in 0usize..1000) {
        let tree = tree_for(KernelKind::SpMM(2), 4);
        let node = &tree.nodes[seed % tree.nodes.len()];
        let pass = Pass::LoopInterchange(None);
        for n in 0..candidates(&node.program, &pass).len() {
            if let Ok(q) = apply_pass(&node.program, &pass, n) {
                let back = (0..candidates(&q, &pass).len())
                    .filter_map(|m| apply_pass(&q, &pass, m).ok())
                    .any(|r| r == node.program);
                prop_assert!(back, "interchange@{n} after {}", node.pipeline);
            }
        }
    }

    #[test]
    fn blocks_partition_the_range(n in 1usize..40, size in 1u32..10) {
        let got = block_numbers(n, size);
        prop_assert_eq!(got.len(), n);
        for (i, b) in got.iter().enumerate() {
            prop_assert_eq!(*b, (i / size as usize) as f64);
        }
    }

    #[test]
    fn sort_gives_nonincreasing_stable_order(lens in proptest::collection::vec(0usize..6, 0..20)) {
        let perm = sort_permutation(&lens);
        let mut seen = perm.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..lens.len()).collect::<Vec<_>>());
        for w in perm.windows(2) {
            prop_assert!(lens[w[0]] > lens[w[1]] || (lens[w[0]] == lens[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn sorted_storage_orders_groups_by_length(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::random_matrix(&mut rng, 16, 64);
        let p = apply(&spmv().program, "orth(row),encap,matdep,split,sort");
        let g = groups_of(&spmv(), &p, &m);
        let g = only_storage(&g);
        prop_assert_eq!(&g.order, &sort_permutation(&g.lens()));
    }
}
