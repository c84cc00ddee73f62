//! Built-in encodings of the sparse kernels.

use std::fmt;
use std::str::FromStr;

use super::ast::Program;
use super::parse::parse_program;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    SpMV,
    /// Sparse matrix times a dense matrix with the given number of columns.
    SpMM(usize),
    TrSv,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::SpMV => f.write_str("spmv"),
            KernelKind::SpMM(k) => write!(f, "spmm({k})"),
            KernelKind::TrSv => f.write_str("trsv"),
        }
    }
}

impl FromStr for KernelKind {
    type Err = String;

    /// Accepts `spmv`, `trsv` and `spmm(K)` with K >= 1.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "spmv" => return Ok(KernelKind::SpMV),
            "trsv" => return Ok(KernelKind::TrSv),
            _ => {}
        }
        let k = s
            .strip_prefix("spmm(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .ok_or_else(|| format!("unknown kernel `{s}` (expected spmv, spmm(K) or trsv)"))?;
        Ok(KernelKind::SpMM(k))
    }
}

/// A kernel program plus the roles of its operands.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub program: Program,
    /// Reservoir holding the matrix coordinates, schema `(row, col)`.
    pub matrix: String,
    /// Address function holding the matrix values.
    pub binding: String,
    /// Dense operands read by the kernel.
    pub inputs: Vec<String>,
    /// Dense operands written by the kernel, zero-initialized before a run.
    pub outputs: Vec<String>,
}

pub const SPMV_SOURCE: &str = "\
reservoir T(row, col);
data A(T);
dense C[N];
dense B[M];
forelem (t; t in T) {
  C[t.row] += B[t.col] * A[t];
}
";

pub const SPMM_SOURCE: &str = "\
reservoir T(row, col);
data A(T);
dense C[N, K];
dense B[M, K];
forelem (t; t in T) {
  for (j = 1 .. K) {
    C[t.row, j] += A[t] * B[t.col, j];
  }
}
";

/// Column-oriented back substitution; `b` is consumed as a work array.
pub const TRSV_SOURCE: &str = "\
reservoir T(row, col);
data A(T);
dense x[N];
dense b[N];
for (i = N downto 1) {
  forelem (t; t in T.(col,row)[(i, i)]) {
    x[i] = b[i] / A[t];
  }
  forelem (t; t in T.col[i]) {
    b[t.row] -= A[t] * x[i];
  }
}
";

/// Row-wise matrix-vector product with a scalar accumulator.
pub const SPMV_ROW_SUM_SOURCE: &str = "\
reservoir T(row, col);
data A(T);
dense C[N];
dense B[M];
for (i = 1; i <= N; i++)
{
  int sum = 0;
  forelem (t; t ∈ T.row[i])
    sum += B[t.col] * A[t];
  C[i] = sum;
}
";

/// Triangular solve with the update written against `b[i]`.
pub const TRSV_LITERAL_SOURCE: &str = "\
reservoir T(row, col);
data A(T);
dense x[N];
dense b[N];
for (i = N; i >= 1; i--)
{
  forelem (t; t ∈ T.(col,row)[(i, i)])
    x[i] = b[i] / A[t];
  forelem (t; t ∈ T.col[i])
    b[i] = b[t.row] - A[t] * x[i];
}
";

/// LU factorization with fill-in; expressible but never transformed.
pub const LU_SOURCE: &str = "\
reservoir T(row, col);
data A(T);
dense d[N];
for (i = 1; i <= N; i++)
{
  p = diag(i);
  forelem (t; t ∈ T.(col,row)[(i, (i, ∞))])
  {
    A[t] = A[t] / p;
    forelem (l; l ∈ T.(row,col)[(i, (i, ∞))])
    {
      fillin = True;
      forelem (k; k ∈ T.(col,row)[(l.col, t.row)])
      {
        A[k] = A[k] - A[t] * A[l];
        fillin = False;
      }
      if (fillin)
      {
        T = T ∪ (t.row, l.col);
        A[t] = -A[t] * A[l];
      }
    }
  }
}
";

/// The untransformed program of a kernel, the root of its transformation tree.
///
/// `SpMM(0)` is treated as `SpMM(1)`.
pub fn builtin_kernel(kind: KernelKind) -> KernelSpec {
    let (src, inputs, outputs) = match kind {
        KernelKind::SpMV => (SPMV_SOURCE, vec!["B"], vec!["C"]),
        KernelKind::SpMM(_) => (SPMM_SOURCE, vec!["B"], vec!["C"]),
        KernelKind::TrSv => (TRSV_SOURCE, vec!["b"], vec!["x"]),
    };
    let kind = match kind {
        KernelKind::SpMM(0) => KernelKind::SpMM(1),
        k => k,
    };
    KernelSpec {
        kind,
        program: parse_program(src).expect("built-in kernel source parses"),
        matrix: "T".into(),
        binding: "A".into(),
        inputs: inputs.into_iter().map(String::from).collect(),
        outputs: outputs.into_iter().map(String::from).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::ast::*;
    use super::*;

    #[test]
    fn row_sum_form_has_ordered_outer_loop() {
        let p = parse_program(SPMV_ROW_SUM_SOURCE).unwrap();
        let Stmt::For {
            var,
            body,
            descending,
            ..
        } = &p.body[0]
        else {
            panic!("expected for")
        };
        assert_eq!(var, "i");
        assert!(!descending);
        let Stmt::Forelem {
            domain: Domain::Reservoir { cond: Some(c), .. },
            ..
        } = &body[1]
        else {
            panic!("expected forelem")
        };
        assert_eq!(c, &Condition::single("row", Expr::var("i")));
    }

    #[test]
    fn trsv_outer_loop_descends() {
        for src in [TRSV_SOURCE, TRSV_LITERAL_SOURCE] {
            let p = parse_program(src).unwrap();
            assert!(matches!(
                &p.body[0],
                Stmt::For {
                    descending: true,
                    ..
                }
            ));
        }
        let k = builtin_kernel(KernelKind::TrSv);
        let Stmt::For { body, .. } = &k.program.body[0] else {
            panic!()
        };
        let Stmt::Forelem {
            domain: Domain::Reservoir { cond: Some(c), .. },
            ..
        } = &body[0]
        else {
            panic!()
        };
        assert_eq!(c.fields, vec![FieldName::new("col"), FieldName::new("row")]);
    }

    #[test]
    fn lu_parses_but_is_flagged_as_mutating() {
        let p = parse_program(LU_SOURCE).unwrap();
        assert!(p.has_mutation());
        assert!(!builtin_kernel(KernelKind::SpMV).program.has_mutation());
    }

    #[test]
    fn kernel_names_round_trip() {
        for k in [KernelKind::SpMV, KernelKind::SpMM(3), KernelKind::TrSv] {
            assert_eq!(k.to_string().parse::<KernelKind>(), Ok(k));
        }
        assert!("spmm(0)".parse::<KernelKind>().is_err());
    }
}
