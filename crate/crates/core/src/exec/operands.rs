use std::collections::BTreeMap;

use serde::Serialize;

use super::ExecError;
use crate::ir::{FieldName, KernelKind, KernelSpec, TupleReservoir};

/// A sparse matrix as a set of `(row, col, value)` entries, sorted by
/// position.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparseOperand {
    pub n_rows: usize,
    pub n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseOperand {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self, ExecError> {
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(ExecError::Operand(format!(
                "entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
            )));
        }
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(ExecError::Operand(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(SparseOperand {
            n_rows,
            n_cols,
            entries,
        })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// The `(row, col)` reservoir with the values bound as `binding`.
    pub fn reservoir(&self, binding: &str) -> TupleReservoir {
        TupleReservoir::build(
            vec![FieldName::new("row"), FieldName::new("col")],
            &[binding],
            self.entries
                .iter()
                .map(|&(r, c, v)| (vec![r as i64, c as i64], vec![v])),
        )
        .expect("entries are distinct")
    }

    /// Row-major dense expansion.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows * self.n_cols];
        for &(r, c, v) in &self.entries {
            d[r * self.n_cols + c] = v;
        }
        d
    }

    pub fn row_lengths(&self) -> Vec<usize> {
        let mut lens = vec![0; self.n_rows];
        for &(r, _, _) in &self.entries {
            lens[r] += 1;
        }
        lens
    }

    /// The 3x3 matrix used throughout the format goldens.
    pub fn m3() -> Self {
        SparseOperand::new(
            3,
            3,
            vec![
                (0, 0, 4.0),
                (0, 2, 1.0),
                (1, 1, 5.0),
                (2, 0, 2.0),
                (2, 2, 3.0),
            ],
        )
        .expect("valid")
    }
}

/// Row-major dense vector or matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenseOperand {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl DenseOperand {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self, ExecError> {
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(ExecError::Operand(format!(
                "dense operand with extents {dims:?} has {} values",
                values.len()
            )));
        }
        Ok(DenseOperand { dims, values })
    }

    pub fn vector(values: Vec<f64>) -> Self {
        DenseOperand {
            dims: vec![values.len()],
            values,
        }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        DenseOperand {
            dims,
            values: vec![0.0; n],
        }
    }
}

/// Everything a kernel program needs to run: size parameters, input
/// reservoirs and dense operands (outputs zeroed).
#[derive(Clone, Debug)]
pub struct Bindings {
    pub params: BTreeMap<String, i64>,
    pub reservoirs: BTreeMap<String, TupleReservoir>,
    pub dense: BTreeMap<String, DenseOperand>,
}

/// Checks operand extents against the kernel and binds them by role.
pub fn bind_kernel(
    spec: &KernelSpec,
    matrix: &SparseOperand,
    inputs: &[DenseOperand],
) -> Result<Bindings, ExecError> {
    let (n, m) = (matrix.n_rows, matrix.n_cols);
    let mut params = BTreeMap::new();
    let (input_dims, output_dims) = match spec.kind {
        KernelKind::SpMV => {
            params.insert("N".to_string(), n as i64);
            params.insert("M".to_string(), m as i64);
            (vec![m], vec![n])
        }
        KernelKind::SpMM(k) => {
            let k = k.max(1);
            params.insert("N".to_string(), n as i64);
            params.insert("M".to_string(), m as i64);
            params.insert("K".to_string(), k as i64);
            (vec![m, k], vec![n, k])
        }
        KernelKind::TrSv => {
            if n != m {
                return Err(ExecError::Operand(format!(
                    "triangular solve needs a square matrix, got {n}x{m}"
                )));
            }
            check_diagonal(matrix)?;
            params.insert("N".to_string(), n as i64);
            (vec![n], vec![n])
        }
    };
    let [input] = inputs else {
        return Err(ExecError::Operand(format!(
            "{} takes one dense input, got {}",
            spec.kind,
            inputs.len()
        )));
    };
    if input.dims != input_dims {
        return Err(ExecError::Operand(format!(
            "dense input has extents {:?}, {} expects {input_dims:?}",
            input.dims, spec.kind
        )));
    }
    let mut dense = BTreeMap::new();
    dense.insert(spec.inputs[0].clone(), input.clone());
    dense.insert(spec.outputs[0].clone(), DenseOperand::zeros(output_dims));
    let mut reservoirs = BTreeMap::new();
    reservoirs.insert(spec.matrix.clone(), matrix.reservoir(&spec.binding));
    Ok(Bindings {
        params,
        reservoirs,
        dense,
    })
}

/// Every diagonal entry must be present and nonzero.
pub fn check_diagonal(matrix: &SparseOperand) -> Result<(), ExecError> {
    let mut seen = vec![false; matrix.n_rows];
    for &(r, c, v) in matrix.entries() {
        if r == c && v != 0.0 {
            seen[r] = true;
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(ExecError::MissingDiagonal(i)),
        None => Ok(()),
    }
}
