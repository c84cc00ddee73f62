//! Reference interpreter for forelem programs at any stage of
//! transformation. Materialized storages are interpreted through their
//! grouping, independent of the physical layout chosen by concretization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Bindings, DenseOperand, ExecError};
use crate::ir::*;
use crate::transform::{Grouped, MaterializedStorage, RecordSource, StorageError};

#[derive(Clone, Debug, Default)]
pub struct InterpOptions {
    /// Visit unordered loops in a random order drawn from this seed.
    pub shuffle: Option<u64>,
    /// Record the lineage of every assignment.
    pub record_visits: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InterpStats {
    pub assignments: u64,
    /// Executions of a forelem loop that iterated nothing.
    pub empty_loops: u64,
    /// Assignments that touched only pad leaves.
    pub pad_assignments: u64,
}

#[derive(Clone, Debug)]
pub struct InterpResult {
    pub dense: BTreeMap<String, DenseOperand>,
    /// Sorted input tuples read by each assignment, in execution order.
    pub visits: Vec<Vec<TupleId>>,
    pub stats: InterpStats,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Val {
    Int(i64),
    Real(f64),
    /// Tuple `index` of the reservoir at slot `reservoir`.
    Tuple { reservoir: usize, index: usize },
}

impl Val {
    fn real(self) -> f64 {
        match self {
            Val::Int(v) => v as f64,
            Val::Real(v) => v,
            Val::Tuple { .. } => f64::NAN,
        }
    }
}

struct Interp<'a> {
    program: &'a Program,
    params: &'a BTreeMap<String, i64>,
    reservoir_names: Vec<String>,
    reservoirs: Vec<TupleReservoir>,
    groups: BTreeMap<String, Grouped>,
    dense: BTreeMap<String, DenseOperand>,
    scope: Vec<(String, Val)>,
    scalars: BTreeMap<String, Val>,
    lineage: Vec<TupleId>,
    touched_pad: bool,
    rng: Option<ChaCha8Rng>,
    opts: &'a InterpOptions,
    visits: Vec<Vec<TupleId>>,
    stats: InterpStats,
}

/// Builds the grouping of every storage of `program`.
pub fn build_groups(
    program: &Program,
    params: &BTreeMap<String, i64>,
    reservoirs: &BTreeMap<String, TupleReservoir>,
) -> Result<BTreeMap<String, Grouped>, ExecError> {
    let env = StaticEnv { params, reservoirs };
    let mut out = BTreeMap::new();
    for st in &program.storages {
        let source = reservoirs
            .get(&st.source)
            .ok_or_else(|| IrError::UnknownReservoir(st.source.clone()))?;
        let g = Grouped::build(st, source, &|e| {
            env.eval(e).map_err(|err| StorageError::Eval(err.to_string()))
        })?;
        out.insert(st.name.clone(), g);
    }
    Ok(out)
}

/// Runs `program` on `bindings`.
pub fn interpret(
    program: &Program,
    bindings: &Bindings,
    opts: &InterpOptions,
) -> Result<InterpResult, ExecError> {
    if program.has_mutation() {
        return Err(ExecError::Unsupported(
            "programs that mutate reservoirs are not executed".into(),
        ));
    }
    let resolved = resolve_reservoirs(program, &bindings.reservoirs)?;
    let groups = build_groups(program, &bindings.params, &resolved)?;
    let (reservoir_names, reservoirs): (Vec<String>, Vec<TupleReservoir>) =
        resolved.into_iter().unzip();
    let mut it = Interp {
        program,
        params: &bindings.params,
        reservoir_names,
        reservoirs,
        groups,
        dense: bindings.dense.clone(),
        scope: Vec::new(),
        scalars: BTreeMap::new(),
        lineage: Vec::new(),
        touched_pad: false,
        rng: opts.shuffle.map(ChaCha8Rng::seed_from_u64),
        opts,
        visits: Vec::new(),
        stats: InterpStats::default(),
    };
    it.stmts(&program.body)?;
    Ok(InterpResult {
        dense: it.dense,
        visits: it.visits,
        stats: it.stats,
    })
}

fn unsupported<T>(msg: impl Into<String>) -> Result<T, ExecError> {
    Err(ExecError::Unsupported(msg.into()))
}

impl Interp<'_> {
    fn lookup(&self, name: &str) -> Result<Val, ExecError> {
        if let Some((_, v)) = self.scope.iter().rev().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        if let Some(v) = self.scalars.get(name) {
            return Ok(*v);
        }
        self.params
            .get(name)
            .map(|&v| Val::Int(v))
            .ok_or_else(|| ExecError::Unbound(name.to_string()))
    }

    fn int(&mut self, e: &Expr) -> Result<i64, ExecError> {
        match self.eval(e)? {
            Val::Int(v) => Ok(v),
            Val::Real(v) if v.fract() == 0.0 => Ok(v as i64),
            other => unsupported(format!(
                "`{}` is not an integer ({other:?})",
                print_expr(e)
            )),
        }
    }

    fn tuple(&self, var: &str) -> Result<(usize, usize), ExecError> {
        match self.lookup(var)? {
            Val::Tuple { reservoir, index } => Ok((reservoir, index)),
            _ => unsupported(format!("`{var}` is not a tuple variable")),
        }
    }

    fn reservoir_slot(&self, name: &str) -> Result<usize, ExecError> {
        self.reservoir_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| IrError::UnknownReservoir(name.to_string()).into())
    }

    fn storage(&self, name: &str) -> Result<(&MaterializedStorage, &Grouped), ExecError> {
        match (self.program.storage(name), self.groups.get(name)) {
            (Some(s), Some(g)) => Ok((s, g)),
            _ => Err(ExecError::Unbound(name.to_string())),
        }
    }

    fn dense_index(&mut self, array: &str, indices: &[Expr]) -> Result<usize, ExecError> {
        let idx = indices
            .iter()
            .map(|i| self.int(i))
            .collect::<Result<Vec<_>, _>>()?;
        let d = self
            .dense
            .get(array)
            .ok_or_else(|| ExecError::Unbound(array.to_string()))?;
        if idx.len() != d.dims.len() {
            return unsupported(format!("`{array}` indexed with {} subscripts", idx.len()));
        }
        let mut flat = 0usize;
        for (&i, &n) in idx.iter().zip(&d.dims) {
            if i < 0 || i as usize >= n {
                return Err(ExecError::OutOfBounds {
                    array: array.to_string(),
                    index: i,
                    len: n,
                });
            }
            flat = flat * n + i as usize;
        }
        Ok(flat)
    }

    fn eval(&mut self, e: &Expr) -> Result<Val, ExecError> {
        Ok(match e {
            Expr::Int(v) => Val::Int(*v),
            Expr::Real(v) => Val::Real(*v),
            Expr::Var(v) => self.lookup(v)?,
            Expr::Field { var, field } => {
                let (r, i) = self.tuple(var)?;
                let res = &self.reservoirs[r];
                let f = res
                    .field_index(field)
                    .ok_or_else(|| ReservoirError::UnknownField(field.clone()))
                    .map_err(IrError::from)?;
                self.lineage.extend_from_slice(res.lineage(i));
                Val::Int(res.tuples()[i][f])
            }
            Expr::Data { binding, tuple } => {
                let (r, i) = self.tuple(tuple)?;
                let res = &self.reservoirs[r];
                let col = res
                    .binding(binding)
                    .ok_or_else(|| ExecError::Unbound(binding.clone()))?;
                let v = col[i];
                self.lineage.extend_from_slice(res.lineage(i));
                Val::Real(v)
            }
            Expr::Index { array, indices } => {
                let flat = self.dense_index(array, indices)?;
                Val::Real(self.dense[array].values[flat])
            }
            Expr::Leaf {
                storage,
                path,
                field,
            } => {
                let vals = path
                    .iter()
                    .map(|p| match self.lookup(p)? {
                        Val::Int(v) => Ok(v),
                        _ => unsupported(format!("`{p}` is not an index")),
                    })
                    .collect::<Result<Vec<i64>, ExecError>>()?;
                let (st, g) = self.storage(storage)?;
                let fi = st
                    .record_index(field)
                    .ok_or_else(|| ExecError::Unbound(format!("{storage}.{field}")))?;
                let is_int = matches!(st.record[fi].source, RecordSource::Field(_));
                let (key, k) = vals.split_at(vals.len() - 1);
                let leaf = g
                    .group_index(key)
                    .and_then(|gi| g.groups[gi].get(usize::try_from(k[0]).ok()?))
                    .map(|rec| (rec.values[fi], rec.lineage.clone()));
                let (padded, width) = (st.padded(), g.width);
                match leaf {
                    Some((v, lineage)) => {
                        self.lineage.extend(lineage);
                        if is_int {
                            Val::Int(v as i64)
                        } else {
                            Val::Real(v)
                        }
                    }
                    None if padded => {
                        self.touched_pad = true;
                        if is_int {
                            Val::Int(0)
                        } else {
                            Val::Real(0.0)
                        }
                    }
                    None => {
                        return Err(ExecError::OutOfBounds {
                            array: storage.clone(),
                            index: k[0],
                            len: width,
                        })
                    }
                }
            }
            Expr::FieldExtent { reservoir, field } => {
                let r = self.reservoir_slot(reservoir)?;
                Val::Int(field_extent(&self.reservoirs[r], field).map_err(|reason| {
                    IrError::Eval {
                        expr: print_expr(e),
                        reason,
                    }
                })?)
            }
            Expr::NonEmpty { storage } => Val::Int(self.storage(storage)?.1.nonempty.len() as i64),
            Expr::Call { func, .. } => return unsupported(format!("call to `{func}`")),
            Expr::Neg(x) => match self.eval(x)? {
                Val::Int(v) => Val::Int(-v),
                other => Val::Real(-other.real()),
            },
            Expr::Binary { op, lhs, rhs } => {
                let (a, b) = (self.eval(lhs)?, self.eval(rhs)?);
                match (a, b) {
                    (Val::Int(a), Val::Int(b)) => Val::Int(match op {
                        BinOp::Add => a + b,
                        BinOp::Sub => a - b,
                        BinOp::Mul => a * b,
                        BinOp::Div if b == 0 => {
                            return unsupported("integer division by zero")
                        }
                        BinOp::Div => a.div_euclid(b),
                        BinOp::Min => a.min(b),
                    }),
                    (a, b) => {
                        let (a, b) = (a.real(), b.real());
                        Val::Real(match op {
                            BinOp::Add => a + b,
                            BinOp::Sub => a - b,
                            BinOp::Mul => a * b,
                            BinOp::Div => a / b,
                            BinOp::Min => a.min(b),
                        })
                    }
                }
            }
        })
    }

    /// Values bound by one execution of a loop domain, in visiting order.
    fn domain_values(&mut self, d: &Domain) -> Result<Vec<Val>, ExecError> {
        let ints = |v: Vec<i64>| v.into_iter().map(Val::Int).collect();
        Ok(match d {
            Domain::Reservoir { name, cond } => {
                let slot = self.reservoir_slot(name)?;
                let mut checks = Vec::new();
                if let Some(c) = cond {
                    for (f, v) in c.fields.iter().zip(&c.values) {
                        let fi = self.reservoirs[slot]
                            .field_index(f)
                            .ok_or_else(|| ReservoirError::UnknownField(f.clone()))
                            .map_err(IrError::from)?;
                        let (lo, hi) = match v {
                            CondValue::Expr(e) => {
                                let x = self.int(e)?;
                                (Some(x - 1), Some(x + 1))
                            }
                            CondValue::Interval { lo, hi } => {
                                let lo = self.int(lo)?;
                                let hi = match hi {
                                    Some(h) => Some(self.int(h)?),
                                    None => None,
                                };
                                (Some(lo), hi)
                            }
                        };
                        checks.push((fi, lo, hi));
                    }
                }
                self.reservoirs[slot]
                    .tuples()
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| {
                        checks.iter().all(|&(fi, lo, hi)| {
                            lo.is_none_or(|lo| t[fi] > lo) && hi.is_none_or(|hi| t[fi] < hi)
                        })
                    })
                    .map(|(index, _)| Val::Tuple {
                        reservoir: slot,
                        index,
                    })
                    .collect()
            }
            Domain::FieldValues { reservoir, field } => {
                let slot = self.reservoir_slot(reservoir)?;
                ints(
                    self.reservoirs[slot]
                        .field_values(field)
                        .map_err(IrError::from)?,
                )
            }
            Domain::Range { extent } => ints((0..self.int(extent)?).collect()),
            Domain::Span { lo, hi } => ints((self.int(lo)?..self.int(hi)?).collect()),
            Domain::Blocks { extent, size } => {
                let e = self.int(extent)?;
                ints((0..(e + *size as i64 - 1).div_euclid(*size as i64)).collect())
            }
            Domain::Block {
                outer,
                extent,
                size,
                compressed,
            } => {
                let b = self.int(&Expr::var(outer))?;
                let e = self.int(extent)?;
                let x = *size as i64;
                let range = b * x..e.min((b + 1) * x);
                match compressed {
                    None => ints(range.collect()),
                    Some(s) => {
                        let nz = &self.storage(s)?.1.nonempty;
                        ints(range.map(|p| nz[p as usize]).collect())
                    }
                }
            }
            Domain::Group { storage, key } => {
                let key = key
                    .iter()
                    .map(|k| self.int(&Expr::var(k)))
                    .collect::<Result<Vec<_>, _>>()?;
                let (st, g) = self.storage(storage)?;
                let n = match g.group_index(&key) {
                    None => 0,
                    Some(_) if st.padded() => g.width,
                    Some(gi) => g.groups[gi].len(),
                };
                ints((0..n as i64).collect())
            }
            Domain::Permuted { storage, .. } => {
                let g = self.storage(storage)?.1;
                let lo = g.levels.first().map_or(0, |l| l.0);
                ints(g.order.iter().map(|&q| lo + q as i64).collect())
            }
            Domain::Positions { storage } => {
                let w = self.storage(storage)?.1.width;
                ints((0..w as i64).collect())
            }
            Domain::GroupsAt {
                storage,
                position,
                base,
            } => {
                let k = self.int(&Expr::var(position))?;
                let base = self.domain_values(base)?;
                let (st, g) = self.storage(storage)?;
                let padded = st.padded();
                base.into_iter()
                    .filter(|v| {
                        let Val::Int(i) = v else { return false };
                        g.group_index(&[*i])
                            .is_some_and(|gi| padded || g.groups[gi].len() as i64 > k)
                    })
                    .collect()
            }
        })
    }

    fn stmts(&mut self, body: &[Stmt]) -> Result<(), ExecError> {
        body.iter().try_for_each(|s| self.stmt(s))
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), ExecError> {
        match s {
            Stmt::For {
                var,
                lo,
                hi,
                descending,
                body,
            } => {
                let (lo, hi) = (self.int(lo)?, self.int(hi)?);
                let mut values: Vec<i64> = (lo..hi).collect();
                if *descending {
                    values.reverse();
                }
                for v in values {
                    self.scope.push((var.clone(), Val::Int(v)));
                    let r = self.stmts(body);
                    self.scope.pop();
                    r?;
                }
                Ok(())
            }
            Stmt::Forelem { var, domain, body } => {
                let mut values = self.domain_values(domain)?;
                if values.is_empty() {
                    self.stats.empty_loops += 1;
                }
                if let Some(rng) = &mut self.rng {
                    values.shuffle(rng);
                }
                for v in values {
                    self.scope.push((var.clone(), v));
                    let r = self.stmts(body);
                    self.scope.pop();
                    r?;
                }
                Ok(())
            }
            Stmt::Assign { target, op, value } => {
                self.lineage.clear();
                self.touched_pad = false;
                let v = self.eval(value)?;
                match target {
                    Expr::Var(name) => {
                        let old = self.scalars.get(name).copied();
                        let new = combine(*op, old, v);
                        self.scalars.insert(name.clone(), new);
                    }
                    Expr::Index { array, indices } => {
                        let flat = self.dense_index(array, indices)?;
                        let d = self.dense.get_mut(array).expect("indexed above");
                        let old = Some(Val::Real(d.values[flat]));
                        d.values[flat] = combine(*op, old, v).real();
                    }
                    other => {
                        return unsupported(format!("assignment to `{}`", print_expr(other)))
                    }
                }
                self.stats.assignments += 1;
                if self.lineage.is_empty() {
                    if self.touched_pad {
                        self.stats.pad_assignments += 1;
                    }
                } else if self.opts.record_visits {
                    let mut l = std::mem::take(&mut self.lineage);
                    l.sort_unstable();
                    l.dedup();
                    self.visits.push(l);
                }
                Ok(())
            }
            Stmt::If { .. } | Stmt::Insert { .. } => {
                unsupported("conditionals and reservoir mutation are parse-only")
            }
        }
    }
}

fn combine(op: AssignOp, old: Option<Val>, v: Val) -> Val {
    let sign = match op {
        AssignOp::Set => return v,
        AssignOp::Add => 1,
        AssignOp::Sub => -1,
    };
    match (old.unwrap_or(Val::Int(0)), v) {
        (Val::Int(a), Val::Int(b)) => Val::Int(a + sign * b),
        (a, b) => Val::Real(a.real() + sign as f64 * b.real()),
    }
}
