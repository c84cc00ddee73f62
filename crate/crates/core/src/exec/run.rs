//! Executor for lowered loop nests over physical storage, plus timing and
//! the dense reference oracle.

use std::collections::BTreeMap;
use std::time::Instant;

use super::{bind_kernel, check_diagonal, Bindings, DenseOperand, ExecError, SparseOperand};
use crate::concretize::{
    build_variant, ArrayData, ConcreteVariant, IExpr, LStmt, LTarget, LoweredProgram, RExpr,
    VariantInstance,
};
use crate::ir::{AssignOp, BinOp, KernelKind, KernelSpec};

/// Array reference: integer or real table, by slot.
#[derive(Clone, Copy, Debug)]
enum Arr {
    Int(usize),
    Real(usize),
}

#[derive(Debug)]
enum CI {
    Const(i64),
    Var(usize),
    Load(Arr, Box<CI>),
    Bin(BinOp, Box<CI>, Box<CI>),
}

#[derive(Debug)]
enum CR {
    Const(f64),
    Scalar(usize),
    Load(Arr, CI),
    FromInt(CI),
    Neg(Box<CR>),
    Bin(BinOp, Box<CR>, Box<CR>),
}

#[derive(Debug)]
enum CS {
    Loop {
        var: usize,
        lo: CI,
        hi: CI,
        descending: bool,
        body: Vec<CS>,
    },
    Let(usize, CI),
    StoreScalar(usize, AssignOp, CR),
    Store(usize, CI, AssignOp, CR),
}

/// Integer and real tables a compiled nest reads and writes.
#[derive(Clone, Debug, Default)]
struct Tables {
    int_names: Vec<String>,
    ints: Vec<Vec<i64>>,
    real_names: Vec<String>,
    reals: Vec<Vec<f64>>,
}

impl Tables {
    fn lookup(&self, name: &str) -> Option<Arr> {
        if let Some(i) = self.int_names.iter().position(|n| n == name) {
            return Some(Arr::Int(i));
        }
        self.real_names.iter().position(|n| n == name).map(Arr::Real)
    }
}

struct Compiler<'a> {
    params: &'a BTreeMap<String, i64>,
    tables: &'a Tables,
    ivars: Vec<String>,
    scalars: &'a [String],
}

impl Compiler<'_> {
    fn slot(&mut self, var: &str) -> usize {
        match self.ivars.iter().position(|v| v == var) {
            Some(i) => i,
            None => {
                self.ivars.push(var.to_string());
                self.ivars.len() - 1
            }
        }
    }

    fn array(&self, name: &str) -> Result<Arr, ExecError> {
        self.tables
            .lookup(name)
            .ok_or_else(|| ExecError::Unbound(name.to_string()))
    }

    fn int(&self, e: &IExpr) -> Result<CI, ExecError> {
        Ok(match e {
            IExpr::Const(v) => CI::Const(*v),
            IExpr::Var(v) => match self.ivars.iter().position(|x| x == v) {
                Some(i) => CI::Var(i),
                None => CI::Const(
                    *self
                        .params
                        .get(v)
                        .ok_or_else(|| ExecError::Unbound(v.clone()))?,
                ),
            },
            IExpr::Load { array, index } => CI::Load(self.array(array)?, Box::new(self.int(index)?)),
            IExpr::Bin { op, lhs, rhs } => {
                CI::Bin(*op, Box::new(self.int(lhs)?), Box::new(self.int(rhs)?))
            }
        })
    }

    fn real(&self, e: &RExpr) -> Result<CR, ExecError> {
        Ok(match e {
            RExpr::Const(v) => CR::Const(*v),
            RExpr::Scalar(s) => CR::Scalar(self.scalar(s)?),
            RExpr::Load { array, index } => CR::Load(self.array(array)?, self.int(index)?),
            RExpr::FromInt(i) => CR::FromInt(self.int(i)?),
            RExpr::Neg(x) => CR::Neg(Box::new(self.real(x)?)),
            RExpr::Bin { op, lhs, rhs } => {
                CR::Bin(*op, Box::new(self.real(lhs)?), Box::new(self.real(rhs)?))
            }
        })
    }

    fn scalar(&self, s: &str) -> Result<usize, ExecError> {
        self.scalars
            .iter()
            .position(|x| x == s)
            .ok_or_else(|| ExecError::Unbound(s.to_string()))
    }

    fn stmts(&mut self, body: &[LStmt]) -> Result<Vec<CS>, ExecError> {
        body.iter().map(|s| self.stmt(s)).collect()
    }

    fn stmt(&mut self, s: &LStmt) -> Result<CS, ExecError> {
        Ok(match s {
            LStmt::Loop {
                var,
                lo,
                hi,
                descending,
                body,
            } => {
                let (lo, hi) = (self.int(lo)?, self.int(hi)?);
                let var = self.slot(var);
                CS::Loop {
                    var,
                    lo,
                    hi,
                    descending: *descending,
                    body: self.stmts(body)?,
                }
            }
            LStmt::Let { var, value } => {
                let value = self.int(value)?;
                CS::Let(self.slot(var), value)
            }
            LStmt::Store { target, op, value } => {
                let value = self.real(value)?;
                match target {
                    LTarget::Scalar(s) => CS::StoreScalar(self.scalar(s)?, *op, value),
                    LTarget::Array { array, index } => match self.array(array)? {
                        Arr::Real(a) => CS::Store(a, self.int(index)?, *op, value),
                        Arr::Int(_) => {
                            return Err(ExecError::Unsupported(format!(
                                "store into index array `{array}`"
                            )))
                        }
                    },
                }
            }
        })
    }
}

struct Machine<'a> {
    tables: &'a mut Tables,
    ivars: Vec<i64>,
    scalars: Vec<f64>,
}

fn arith_i(op: BinOp, a: i64, b: i64) -> i64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div if b == 0 => 0,
        BinOp::Div => a.div_euclid(b),
        BinOp::Min => a.min(b),
    }
}

fn arith_r(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Min => a.min(b),
    }
}

impl Machine<'_> {
    fn oob(&self, arr: Arr, index: i64) -> ExecError {
        let (array, len) = match arr {
            Arr::Int(a) => (self.tables.int_names[a].clone(), self.tables.ints[a].len()),
            Arr::Real(a) => (self.tables.real_names[a].clone(), self.tables.reals[a].len()),
        };
        ExecError::OutOfBounds { array, index, len }
    }

    fn load_i(&self, arr: Arr, i: i64) -> Result<i64, ExecError> {
        let v = match arr {
            Arr::Int(a) => usize::try_from(i).ok().and_then(|i| self.tables.ints[a].get(i).copied()),
            Arr::Real(a) => usize::try_from(i)
                .ok()
                .and_then(|i| self.tables.reals[a].get(i).map(|&x| x as i64)),
        };
        v.ok_or_else(|| self.oob(arr, i))
    }

    fn load_r(&self, arr: Arr, i: i64) -> Result<f64, ExecError> {
        let v = match arr {
            Arr::Int(a) => usize::try_from(i)
                .ok()
                .and_then(|i| self.tables.ints[a].get(i).map(|&x| x as f64)),
            Arr::Real(a) => usize::try_from(i).ok().and_then(|i| self.tables.reals[a].get(i).copied()),
        };
        v.ok_or_else(|| self.oob(arr, i))
    }

    fn int(&self, e: &CI) -> Result<i64, ExecError> {
        Ok(match e {
            CI::Const(v) => *v,
            CI::Var(s) => self.ivars[*s],
            CI::Load(a, i) => self.load_i(*a, self.int(i)?)?,
            CI::Bin(op, l, r) => arith_i(*op, self.int(l)?, self.int(r)?),
        })
    }

    fn real(&self, e: &CR) -> Result<f64, ExecError> {
        Ok(match e {
            CR::Const(v) => *v,
            CR::Scalar(s) => self.scalars[*s],
            CR::Load(a, i) => self.load_r(*a, self.int(i)?)?,
            CR::FromInt(i) => self.int(i)? as f64,
            CR::Neg(x) => -self.real(x)?,
            CR::Bin(op, l, r) => arith_r(*op, self.real(l)?, self.real(r)?),
        })
    }

    fn run(&mut self, body: &[CS]) -> Result<(), ExecError> {
        for s in body {
            match s {
                CS::Loop {
                    var,
                    lo,
                    hi,
                    descending,
                    body,
                } => {
                    let (lo, hi) = (self.int(lo)?, self.int(hi)?);
                    if *descending {
                        for i in (lo..hi).rev() {
                            self.ivars[*var] = i;
                            self.run(body)?;
                        }
                    } else {
                        for i in lo..hi {
                            self.ivars[*var] = i;
                            self.run(body)?;
                        }
                    }
                }
                CS::Let(var, value) => self.ivars[*var] = self.int(value)?,
                CS::StoreScalar(s, op, value) => {
                    let v = self.real(value)?;
                    self.scalars[*s] = combine(*op, self.scalars[*s], v);
                }
                CS::Store(a, index, op, value) => {
                    let v = self.real(value)?;
                    let i = self.int(index)?;
                    let slot = usize::try_from(i)
                        .ok()
                        .filter(|&i| i < self.tables.reals[*a].len())
                        .ok_or_else(|| self.oob(Arr::Real(*a), i))?;
                    let cell = &mut self.tables.reals[*a][slot];
                    *cell = combine(*op, *cell, v);
                }
            }
        }
        Ok(())
    }
}

fn combine(op: AssignOp, old: f64, v: f64) -> f64 {
    match op {
        AssignOp::Set => v,
        AssignOp::Add => old + v,
        AssignOp::Sub => old - v,
    }
}

/// One lowered nest compiled against a fixed storage instance.
#[derive(Debug)]
struct CompiledNest {
    body: Vec<CS>,
    ivars: usize,
    scalars: usize,
    /// Instance arrays, kept apart from the shared dense operands.
    local: Tables,
}

/// A variant compiled against one set of operands, ready to run repeatedly.
#[derive(Debug)]
pub struct PreparedRun {
    nests: Vec<CompiledNest>,
    dense_names: Vec<String>,
    dense_init: Vec<DenseOperand>,
    outputs: Vec<String>,
}

fn compile_nest(
    lowered: &LoweredProgram,
    inst: &VariantInstance,
    dense_names: &[String],
) -> Result<CompiledNest, ExecError> {
    let mut local = Tables::default();
    for (name, data) in &inst.arrays {
        match data {
            ArrayData::Int(v) => {
                local.int_names.push(name.clone());
                local.ints.push(v.clone());
            }
            ArrayData::Real(v) => {
                local.real_names.push(name.clone());
                local.reals.push(v.clone());
            }
        }
    }
    // Dense operands follow the instance's real arrays; their contents are
    // swapped in at run time.
    let mut view = local.clone();
    for d in dense_names {
        view.real_names.push(d.clone());
        view.reals.push(Vec::new());
    }
    let mut c = Compiler {
        params: &inst.params,
        tables: &view,
        ivars: Vec::new(),
        scalars: &lowered.scalars,
    };
    let body = c.stmts(&lowered.body)?;
    Ok(CompiledNest {
        body,
        ivars: c.ivars.len(),
        scalars: lowered.scalars.len(),
        local,
    })
}

fn check_dense(lowered: &LoweredProgram, inst: &VariantInstance, b: &Bindings) -> Result<(), ExecError> {
    for d in &lowered.dense {
        let op = b
            .dense
            .get(&d.name)
            .ok_or_else(|| ExecError::Unbound(d.name.clone()))?;
        let c = Compiler {
            params: &inst.params,
            tables: &Tables::default(),
            ivars: Vec::new(),
            scalars: &[],
        };
        let m = Machine {
            tables: &mut Tables::default(),
            ivars: Vec::new(),
            scalars: Vec::new(),
        };
        let dims = d
            .dims
            .iter()
            .map(|e| c.int(e).and_then(|e| m.int(&e)))
            .collect::<Result<Vec<_>, _>>()?;
        let want: Vec<usize> = dims.iter().map(|&x| x.max(0) as usize).collect();
        if want != op.dims {
            return Err(ExecError::Operand(format!(
                "`{}` has extents {:?}, the variant expects {want:?}",
                d.name, op.dims
            )));
        }
    }
    Ok(())
}

/// Compiles `variant` against a built storage instance.
pub fn prepare(
    variant: &ConcreteVariant,
    instance: &VariantInstance,
    bindings: &Bindings,
    outputs: &[String],
) -> Result<PreparedRun, ExecError> {
    let dense_names: Vec<String> = bindings.dense.keys().cloned().collect();
    let dense_init: Vec<DenseOperand> = bindings.dense.values().cloned().collect();
    let mut nests = Vec::new();
    match &variant.hybrid {
        None => {
            check_dense(&variant.lowered, instance, bindings)?;
            nests.push(compile_nest(&variant.lowered, instance, &dense_names)?);
        }
        Some(h) => {
            for b in &instance.blocks {
                let part = &h.parts[b.part];
                nests.push(compile_nest(&part.lowered, &b.instance, &dense_names)?);
            }
        }
    }
    Ok(PreparedRun {
        nests,
        dense_names,
        dense_init,
        outputs: outputs.to_vec(),
    })
}

impl PreparedRun {
    /// Runs every nest once from fresh operands and returns the outputs.
    pub fn execute(&mut self) -> Result<BTreeMap<String, DenseOperand>, ExecError> {
        let mut dense: Vec<Vec<f64>> = self.dense_init.iter().map(|d| d.values.clone()).collect();
        for nest in &mut self.nests {
            let base = nest.local.reals.len();
            nest.local.real_names.extend(self.dense_names.iter().cloned());
            nest.local.reals.append(&mut dense);
            let mut m = Machine {
                tables: &mut nest.local,
                ivars: vec![0; nest.ivars],
                scalars: vec![0.0; nest.scalars],
            };
            let r = m.run(&nest.body);
            dense = nest.local.reals.split_off(base);
            nest.local.real_names.truncate(base);
            r?;
        }
        Ok(self
            .dense_names
            .iter()
            .zip(dense)
            .zip(&self.dense_init)
            .filter(|((n, _), _)| self.outputs.contains(n))
            .map(|((n, values), init)| {
                (
                    n.clone(),
                    DenseOperand {
                        dims: init.dims.clone(),
                        values,
                    },
                )
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub outputs: BTreeMap<String, DenseOperand>,
    /// Median kernel time in seconds, storage build excluded.
    pub wall_time: f64,
    pub repeats: usize,
    pub checksum: f64,
}

/// Runs `variant` on the operands: builds its storage, does one warmup and
/// `repeats` timed runs, and reports the median.
pub fn run_variant(
    spec: &KernelSpec,
    variant: &ConcreteVariant,
    matrix: &SparseOperand,
    inputs: &[DenseOperand],
    repeats: usize,
) -> Result<RunResult, ExecError> {
    let bindings = bind_kernel(spec, matrix, inputs)?;
    let instance = build_variant(variant, &bindings).map_err(|e| ExecError::Unsupported(e.to_string()))?;
    let mut prepared = prepare(variant, &instance, &bindings, &spec.outputs)?;
    let mut outputs = prepared.execute()?;
    let repeats = repeats.max(1);
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        outputs = prepared.execute()?;
        times.push(start.elapsed().as_secs_f64());
    }
    let checksum = checksum(&outputs);
    Ok(RunResult {
        outputs,
        wall_time: median(&mut times).max(1e-9),
        repeats,
        checksum,
    })
}

/// Output values of one execution, without timing.
pub fn execute_variant(
    spec: &KernelSpec,
    variant: &ConcreteVariant,
    matrix: &SparseOperand,
    inputs: &[DenseOperand],
) -> Result<BTreeMap<String, DenseOperand>, ExecError> {
    let bindings = bind_kernel(spec, matrix, inputs)?;
    let instance = build_variant(variant, &bindings).map_err(|e| ExecError::Unsupported(e.to_string()))?;
    prepare(variant, &instance, &bindings, &spec.outputs)?.execute()
}

/// Wall time of building the variant's physical storage.
pub fn build_time(
    spec: &KernelSpec,
    variant: &ConcreteVariant,
    matrix: &SparseOperand,
    inputs: &[DenseOperand],
) -> Result<f64, ExecError> {
    let bindings = bind_kernel(spec, matrix, inputs)?;
    let start = Instant::now();
    build_variant(variant, &bindings).map_err(|e| ExecError::Unsupported(e.to_string()))?;
    Ok(start.elapsed().as_secs_f64().max(1e-9))
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Order-independent summary of the outputs: the sum of all values.
pub fn checksum(outputs: &BTreeMap<String, DenseOperand>) -> f64 {
    let mut all: Vec<f64> = outputs.values().flat_map(|d| d.values.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.iter().sum()
}

/// Largest dense order the oracle expands.
pub const ORACLE_MAX_ORDER: usize = 4096;

/// Expands the matrix densely and runs the textbook kernel. A triangular
/// solve uses the upper triangle and back substitution.
pub fn reference_oracle(
    kind: KernelKind,
    matrix: &SparseOperand,
    inputs: &[DenseOperand],
) -> Result<DenseOperand, ExecError> {
    let (n, m) = (matrix.n_rows, matrix.n_cols);
    if n.max(m) > ORACLE_MAX_ORDER {
        return Err(ExecError::TooLarge(n.max(m)));
    }
    let a = matrix.to_dense();
    let [input] = inputs else {
        return Err(ExecError::Operand(format!("expected one dense input, got {}", inputs.len())));
    };
    match kind {
        KernelKind::SpMV => {
            if input.dims != [m] {
                return Err(ExecError::Operand(format!("vector of length {m} expected")));
            }
            let y = (0..n)
                .map(|i| (0..m).map(|j| a[i * m + j] * input.values[j]).sum())
                .collect();
            Ok(DenseOperand::vector(y))
        }
        KernelKind::SpMM(k) => {
            if input.dims != [m, k] {
                return Err(ExecError::Operand(format!("{m}x{k} matrix expected")));
            }
            let mut c = vec![0.0; n * k];
            for i in 0..n {
                for j in 0..m {
                    for l in 0..k {
                        c[i * k + l] += a[i * m + j] * input.values[j * k + l];
                    }
                }
            }
            DenseOperand::new(vec![n, k], c)
        }
        KernelKind::TrSv => {
            if n != m {
                return Err(ExecError::Operand("square matrix expected".into()));
            }
            if input.dims != [n] {
                return Err(ExecError::Operand(format!("vector of length {n} expected")));
            }
            check_diagonal(matrix)?;
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
                x[i] = (input.values[i] - s) / a[i * n + i];
            }
            Ok(DenseOperand::vector(x))
        }
    }
}

/// `max |got - want| / max |want|`, or the absolute error when `want` is
/// all zeros.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    if got.len() != want.len() {
        return f64::INFINITY;
    }
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (g, w)| if (g - w).is_nan() { f64::INFINITY } else { m.max((g - w).abs()) });
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}
