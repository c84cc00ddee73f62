mod common;

use std::collections::BTreeSet;

use forelem::concretize::FormatName;
use forelem::exec::SparseOperand;
use forelem::ir::{builtin_kernel, KernelKind};
use forelem::search::*;
use proptest::prelude::*;

fn table(rows: &[(&str, &[f64])]) -> TimingTable {
    let mut triples = Vec::new();
    for (r, times) in rows {
        for (m, &s) in times.iter().enumerate() {
            triples.push((r.to_string(), format!("m{m}"), s));
        }
    }
    TimingTable::from_triples(triples.iter().map(|(r, m, s)| (r.as_str(), m.as_str(), *s))).unwrap()
}

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn top_group_examples() {
    let t = table(&[("r1", &[1.0]), ("r2", &[1.3])]);
    assert_eq!(top_group(&t, "m0", 10.0).unwrap(), set(&["r1"]));
    assert_eq!(top_group(&t, "m0", 30.0).unwrap(), set(&["r1", "r2"]));
    assert_eq!(top_group(&t, "m0", 0.0).unwrap(), set(&["r1"]));
    let tie = table(&[("a", &[2.0]), ("b", &[2.0]), ("c", &[3.0])]);
    assert_eq!(top_group(&tie, "m0", 0.0).unwrap(), set(&["a", "b"]));
    assert!(top_group(&t, "nope", 0.0).is_err());
}

#[test]
fn coverage_examples() {
    let t = table(&[("r1", &[1.0, 1.5]), ("r2", &[1.3, 1.0])]);
    let at10 = coverage(&t, 10.0);
    assert_eq!(at10.coverage, 1);
    assert_eq!(at10.best, vec!["r1".to_string(), "r2".to_string()]);
    let at50 = coverage(&t, 50.0);
    assert_eq!(at50.coverage, 2);
    assert_eq!(at50.argmax, vec!["r1".to_string(), "r2".to_string()]);
    let at40 = coverage(&t, 40.0);
    assert_eq!((at40.coverage, at40.argmax.clone()), (2, vec!["r2".to_string()]));

    let lone = table(&[("only", &[3.0, 1.0, 7.0])]);
    assert_eq!(coverage(&lone, 0.0).coverage, 3);
}

#[test]
fn curve_examples() {
    let t = table(&[("r1", &[1.0, 1.5]), ("r2", &[1.3, 1.0])]);
    let curve = coverage_curve(&t, &[10.0, 50.0]).unwrap();
    assert_eq!(curve.iter().map(|p| p.coverage).collect::<Vec<_>>(), vec![1, 2]);
    assert!(coverage_curve(&t, &[50.0, 10.0]).is_err());

    let flat = table(&[("a", &[1.0, 1.0]), ("b", &[1.0, 1.0])]);
    let curve = coverage_curve(&flat, &[0.0, 5.0, 100.0]).unwrap();
    assert!(curve.iter().all(|p| p.coverage == 2 && p.argmax.len() == 2));

    let text = curve_csv(&coverage_curve(&t, &[10.0, 50.0]).unwrap());
    assert_eq!(text, "t_percent,coverage,argmax_routines\n10,1,r1;r2\n50,2,r1;r2\n");
    let report = coverage_csv(&coverage(&t, 40.0));
    assert_eq!(report, "t_percent,routine,weight,argmax\n40,r1,1,false\n40,r2,2,true\n");
}

#[test]
fn select_kernel_examples() {
    let t = table(&[("a", &[1.0, 9.0, 2.0]), ("b", &[2.0, 1.0, 1.0]), ("c", &[9.0, 9.0, 9.0])]);
    let all = select_kernel(&t, 3, 1e6, 0).unwrap();
    assert_eq!(all.routines, vec!["a", "b", "c"]);
    assert_eq!(all.sample.iter().cloned().collect::<BTreeSet<_>>(), set(&["m0", "m1", "m2"]));
    assert!(select_kernel(&t, 0, 1.0, 0).is_err());
    assert!(select_kernel(&t, 4, 1.0, 0).is_err());
    assert_eq!(select_kernel(&t, 2, 5.0, 11).unwrap(), select_kernel(&t, 2, 5.0, 11).unwrap());
}

#[test]
fn timing_table_csv() {
    let t = table(&[("a", &[1.0, 0.5]), ("b", &[2.0, 0.25])]);
    assert_eq!(TimingTable::from_csv(&t.to_csv()).unwrap(), t);
    let ok = "routine, matrix, seconds\nx,m,1e-3\n";
    assert_eq!(TimingTable::from_csv(ok).unwrap().seconds, vec![vec![1e-3]]);
    for bad in [
        "r,m,s\nx,m,1\n",
        "routine,matrix,seconds\nx,m,0\n",
        "routine,matrix,seconds\nx,m,-1\n",
        "routine,matrix,seconds\nx,m,abc\n",
        "routine,matrix,seconds\nx,m,1\nx,m,2\n",
        "routine,matrix,seconds\nx,m,1\ny,n,2\n",
        "routine,matrix,seconds\n",
    ] {
        assert!(TimingTable::from_csv(bad).is_err(), "{bad}");
    }
}

#[test]
fn shallow_trees() {
    let spec = builtin_kernel(KernelKind::SpMV);
    let root = enumerate_variants(&spec, &EnumerateOptions { depth: 0, block_sizes: vec![] });
    assert_eq!(root.nodes.len(), 1);
    assert!(!root.nodes[0].executable());
    assert!(root.variants.is_empty());
    let one = enumerate_variants(&spec, &EnumerateOptions { depth: 1, block_sizes: vec![] });
    assert!(one.nodes.len() > 1);
    assert!(one.nodes.iter().all(|n| n.depth <= 1));
    assert!(one.nodes.iter().skip(1).all(|n| n.parent == Some(0)));
}

#[test]
fn depth_eight_spmv_tree() {
    let spec = builtin_kernel(KernelKind::SpMV);
    let tree = enumerate_variants(&spec, &EnumerateOptions { depth: 8, block_sizes: vec![2, 4] });
    assert_eq!((tree.nodes.len(), tree.variants.len()), (471, 212));
    assert!(tree.shape_count() >= 10);
    let formats = tree.formats();
    for f in [FormatName::Coo, FormatName::Csr, FormatName::Ccs, FormatName::EllpackItpack, FormatName::Jds] {
        assert!(formats.contains(&f), "{f} missing");
    }
    let ids: BTreeSet<_> = tree.variants.iter().map(|v| v.id.clone()).collect();
    assert_eq!(ids.len(), tree.variants.len());
    for v in &tree.variants {
        assert_eq!(tree.variant(&v.id).unwrap().id, v.id);
    }

    let csv = tree.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "node,parent,depth,pipeline,executable,variant_id,format");
    assert_eq!(csv.lines().count(), tree.nodes.len() + 1);
    let json: serde_json::Value = serde_json::from_str(&tree.to_json()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), tree.nodes.len());
    let dump = tree.dump();
    assert_eq!(dump.lines().count(), tree.nodes.len());
    assert!(dump.starts_with("tmp spmv"));
    assert_eq!(dump.lines().filter(|l| !l.trim_start().starts_with("tmp ")).count(), tree.variants.len());

    let again = enumerate_variants(&spec, &EnumerateOptions { depth: 8, block_sizes: vec![2, 4] });
    assert_eq!(again.to_csv(), csv);
}

#[test]
fn bench_csv_schema() {
    let spec = builtin_kernel(KernelKind::SpMV);
    let tree = enumerate_variants(&spec, &EnumerateOptions { depth: 5, block_sizes: vec![] });
    let matrices = vec![
        BenchMatrix { name: "m3".into(), matrix: SparseOperand::m3() },
        BenchMatrix {
            name: "eye".into(),
            matrix: SparseOperand::new(3, 3, (0..3).map(|i| (i, i, 1.0)).collect()).unwrap(),
        },
    ];
    let records = bench(&spec, &tree.variants, &matrices, 2, 0).unwrap();
    assert_eq!(records.len(), tree.variants.len() * 2);
    assert!(records.iter().all(|r| r.median_seconds > 0.0 && r.build_seconds > 0.0 && r.max_rel_err == 0.0));
    let text = results_csv(&records);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), RESULTS_HEADER.join(","));
    assert!(lines.all(|l| l.split(',').count() == RESULTS_HEADER.len()));
    let t = timing_table(&records).unwrap();
    assert_eq!((t.routines.len(), t.matrices.len()), (tree.variants.len(), 2));
}

/// Integer timings, so top groups can be checked without rounding.
fn int_table() -> impl Strategy<Value = Vec<Vec<u32>>> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(r, m)| proptest::collection::vec(proptest::collection::vec(1u32..40, m), r))
}

fn to_table(times: &[Vec<u32>]) -> TimingTable {
    let rows: Vec<(String, Vec<f64>)> = times
        .iter()
        .enumerate()
        .map(|(r, row)| (format!("r{r}"), row.iter().map(|&s| s as f64).collect()))
        .collect();
    let refs: Vec<(&str, &[f64])> = rows.iter().map(|(r, v)| (r.as_str(), v.as_slice())).collect();
    table(&refs)
}

fn brute_force(times: &[Vec<u32>], t: u32) -> usize {
    let n_m = times[0].len();
    (0..times.len())
        .map(|r| {
            (0..n_m)
                .filter(|&m| {
                    let best = times.iter().map(|row| row[m]).min().unwrap() as u64;
                    times[r][m] as u64 * 100 <= best * (100 + t as u64)
                })
                .count()
        })
        .max()
        .unwrap()
}

proptest! {
    #[test]
    fn coverage_matches_brute_force(times in int_table(), t in 0u32..150) {
        let tab = to_table(&times);
        let report = coverage(&tab, t as f64);
        prop_assert_eq!(report.coverage, brute_force(&times, t));
        for (m, group) in report.top_groups.iter().enumerate() {
            prop_assert!(group.contains(&report.best[m]));
        }
        for r in &report.argmax {
            prop_assert_eq!(report.weights[r], report.coverage);
        }
    }

    #[test]
    fn coverage_is_monotone_in_t(times in int_table(), a in 0u32..150, b in 0u32..150) {
        let tab = to_table(&times);
        let (lo, hi) = (a.min(b) as f64, a.max(b) as f64);
        prop_assert!(coverage(&tab, lo).coverage <= coverage(&tab, hi).coverage);
        let curve = coverage_curve(&tab, &[lo, hi]).unwrap();
        prop_assert!(curve[0].coverage <= curve[1].coverage);
    }

    #[test]
    fn coverage_is_scale_invariant(times in int_table(), t in 0u32..150, exps in proptest::collection::vec(-20i32..20, 8)) {
        let tab = to_table(&times);
        let mut scaled = tab.clone();
        for row in &mut scaled.seconds {
            for (m, s) in row.iter_mut().enumerate() {
                *s *= 2f64.powi(exps[m]);
            }
        }
        let (a, b) = (coverage(&tab, t as f64), coverage(&scaled, t as f64));
        prop_assert_eq!(a.top_groups, b.top_groups);
        prop_assert_eq!(a.coverage, b.coverage);
    }

    #[test]
    fn selection_is_within_every_sampled_group(times in int_table(), t in 0u32..60, seed in any::<u64>()) {
        let tab = to_table(&times);
        let k = 1 + (seed as usize % tab.matrices.len());
        let sel = select_kernel(&tab, k, t as f64, seed).unwrap();
        prop_assert_eq!(sel.sample.len(), k);
        for r in &sel.routines {
            for m in &sel.sample {
                prop_assert!(top_group(&tab, m, t as f64).unwrap().contains(r));
            }
        }
    }
}
