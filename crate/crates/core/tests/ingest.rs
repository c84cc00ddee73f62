mod common;

use forelem::exec::SparseOperand;
use forelem::ingest::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const M3_TEXT: &str = "%%MatrixMarket matrix coordinate real general\n% M3\n3 3 5\n1 1 4\n1 3 1\n2 2 5\n3 1 2\n3 3 3\n";

fn parse(text: &str) -> Result<SparseOperand, IngestError> {
    parse_matrix_market(text, &ReadOptions::default()).map(|(m, _)| m)
}

#[test]
fn reads_m3() {
    assert_eq!(parse(M3_TEXT).unwrap(), SparseOperand::m3());
}

#[test]
fn symmetric_entries_expand_once() {
    let text = "%%MatrixMarket matrix coordinate real symmetric\n3 3 3\n1 1 1.5\n2 1 7\n3 3 2\n";
    let m = parse(text).unwrap();
    assert_eq!(m.entries(), &[(0, 0, 1.5), (0, 1, 7.0), (1, 0, 7.0), (2, 2, 2.0)]);
}

#[test]
fn pattern_entries_are_ones() {
    let text = "%%MatrixMarket matrix coordinate pattern general\n2 3 2\n1 3\n2 1\n";
    let (m, h) = parse_matrix_market(text, &ReadOptions::default()).unwrap();
    assert_eq!(h.field, MmField::Pattern);
    assert_eq!((m.n_rows, m.n_cols), (2, 3));
    assert_eq!(m.entries(), &[(0, 2, 1.0), (1, 0, 1.0)]);
}

#[test]
fn duplicates_need_opt_in() {
    let text = "%%MatrixMarket matrix coordinate integer general\n2 2 3\n1 1 2\n2 2 1\n1 1 3\n";
    let err = parse(text).unwrap_err();
    assert!(matches!(err, IngestError::Duplicate { row: 1, col: 1 }));
    assert!(err.to_string().contains("--sum-duplicates"));
    let (m, _) = parse_matrix_market(text, &ReadOptions { sum_duplicates: true }).unwrap();
    assert_eq!(m.entries(), &[(0, 0, 5.0), (1, 1, 1.0)]);
}

#[test]
fn malformed_inputs_are_rejected() {
    let bad = [
        ("", "empty"),
        ("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n", "array"),
        ("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n", "complex"),
        ("%%MatrixMarket matrix coordinate real hermitian\n1 1 1\n1 1 1\n", "hermitian"),
        ("%%MatrixMarket matrix coordinate real skew-symmetric\n1 1 0\n", "skew"),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n", "out of range"),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n0 1 1\n", "zero index"),
        ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n", "short"),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1\n2 2 2\n", "long"),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 x\n", "value"),
        ("%%MatrixMarket matrix coordinate real symmetric\n2 3 0\n", "non-square symmetric"),
    ];
    for (text, what) in bad {
        assert!(parse(text).is_err(), "{what}");
    }
    assert!(matches!(
        parse("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n"),
        Err(IngestError::OutOfBounds { line: 3, .. })
    ));
    assert!(matches!(
        parse("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n"),
        Err(IngestError::Unsupported(_))
    ));
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m3.mtx");
    write_matrix_market(&path, &SparseOperand::m3(), MmHeader::GENERAL_REAL).unwrap();
    assert_eq!(read_matrix_market(&path, &ReadOptions::default()).unwrap(), SparseOperand::m3());
    assert!(matches!(
        read_matrix_market(&dir.path().join("missing.mtx"), &ReadOptions::default()),
        Err(IngestError::Io { .. })
    ));
}

#[test]
fn asymmetric_matrix_cannot_be_written_symmetric() {
    let header = MmHeader {
        field: MmField::Real,
        symmetry: MmSymmetry::Symmetric,
    };
    assert!(format_matrix_market(&SparseOperand::m3(), header).is_err());
    let header = MmHeader {
        field: MmField::Integer,
        symmetry: MmSymmetry::General,
    };
    let half = SparseOperand::new(1, 1, vec![(0, 0, 0.5)]).unwrap();
    assert!(format_matrix_market(&half, header).is_err());
}

#[test]
fn synth_examples() {
    let full = synth_matrix(&SynthSpec {
        n: 4,
        nnz: 16,
        distribution: Distribution::Uniform,
        seed: 9,
    })
    .unwrap();
    assert_eq!(full.nnz(), 16);

    let diag = synth_matrix(&SynthSpec {
        n: 6,
        nnz: 6,
        distribution: Distribution::Banded(0),
        seed: 1,
    })
    .unwrap();
    assert!(diag.entries().iter().all(|&(r, c, _)| r == c));
    assert!(synth_matrix(&SynthSpec {
        n: 6,
        nnz: 7,
        distribution: Distribution::Banded(0),
        seed: 1,
    })
    .is_err());

    let skewed = synth_matrix(&SynthSpec {
        n: 64,
        nnz: 256,
        distribution: Distribution::SkewedRows(1.2),
        seed: 7,
    })
    .unwrap();
    let rows = skewed.row_lengths();
    let max = *rows.iter().max().unwrap();
    let min = *rows.iter().min().unwrap();
    assert!(max >= 2 * min.max(1), "max {max} min {min}");
    assert_eq!(skewed.nnz(), 256);

    assert!(synth_matrix(&SynthSpec {
        n: 3,
        nnz: 10,
        distribution: Distribution::Uniform,
        seed: 0,
    })
    .is_err());
}

#[test]
fn triangle_helpers() {
    let m = SparseOperand::m3();
    let lower = triangle(&m, Triangle::Lower);
    assert_eq!(lower.entries(), &[(0, 0, 4.0), (1, 1, 5.0), (2, 0, 2.0), (2, 2, 3.0)]);
    let upper = triangle(&m, Triangle::Upper);
    assert_eq!(upper.entries(), &[(0, 0, 4.0), (0, 2, 1.0), (1, 1, 5.0), (2, 2, 3.0)]);
    let unit = unit_diagonal(&SparseOperand::new(2, 2, vec![(0, 1, 3.0)]).unwrap());
    assert_eq!(unit.entries(), &[(0, 0, 1.0), (0, 1, 3.0), (1, 1, 1.0)]);
    assert_eq!(transpose(&transpose(&m)), m);
}

fn symmetric_matrix(rng: &mut ChaCha8Rng) -> SparseOperand {
    let m = common::random_matrix(rng, 12, 40);
    let n = m.n_rows.min(m.n_cols);
    let mut map = std::collections::BTreeMap::new();
    for &(r, c, v) in m.entries() {
        if r < n && c < n {
            map.insert((r.max(c), r.min(c)), v);
        }
    }
    let entries = map
        .into_iter()
        .flat_map(|((r, c), v)| if r == c { vec![(r, c, v)] } else { vec![(r, c, v), (c, r, v)] })
        .collect();
    SparseOperand::new(n, n, entries).unwrap()
}

proptest! {
    #[test]
    fn general_round_trip_is_exact(seed in any::<u64>(), scale in -300i32..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::random_matrix(&mut rng, 16, 64);
        let f = 10f64.powi(scale) / 3.0;
        let m = SparseOperand::new(m.n_rows, m.n_cols, m.entries().iter().map(|&(r, c, v)| (r, c, v * f)).collect()).unwrap();
        let text = format_matrix_market(&m, MmHeader::GENERAL_REAL).unwrap();
        prop_assert_eq!(parse(&text).unwrap(), m);
    }

    #[test]
    fn symmetric_round_trip_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = symmetric_matrix(&mut rng);
        let header = MmHeader { field: MmField::Real, symmetry: MmSymmetry::Symmetric };
        let text = format_matrix_market(&m, header).unwrap();
        let stored = m.entries().iter().filter(|e| e.1 <= e.0).count();
        let suffix = format!(" {}", stored);
        prop_assert!(text.lines().nth(1).unwrap().ends_with(&suffix));
        let (back, h) = parse_matrix_market(&text, &ReadOptions::default()).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn pattern_round_trip_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = common::random_matrix(&mut rng, 16, 64);
        let ones = SparseOperand::new(m.n_rows, m.n_cols, m.entries().iter().map(|&(r, c, _)| (r, c, 1.0)).collect()).unwrap();
        let header = MmHeader { field: MmField::Pattern, symmetry: MmSymmetry::General };
        prop_assert_eq!(parse(&format_matrix_market(&m, header).unwrap()).unwrap(), ones);
    }

    #[test]
    fn synth_is_deterministic_and_exact(n in 1usize..20, fill in 0.0f64..1.0, seed in any::<u64>(), d in 0usize..3) {
        let distribution = [Distribution::Uniform, Distribution::Banded(2), Distribution::SkewedRows(1.1)][d];
        let cap = match distribution {
            Distribution::Banded(w) => (0..n).map(|r| (r + w + 1).min(n) - r.saturating_sub(w)).sum(),
            _ => n * n,
        };
        let nnz = (fill * cap as f64) as usize;
        let spec = SynthSpec { n, nnz, distribution, seed };
        let a = synth_matrix(&spec).unwrap();
        prop_assert_eq!(a.nnz(), nnz);
        prop_assert_eq!(&a, &synth_matrix(&spec).unwrap());
        prop_assert!(a.entries().iter().all(|e| e.2 != 0.0));
    }
}
