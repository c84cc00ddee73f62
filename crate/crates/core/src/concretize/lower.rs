//! Lowering of a fully materialized program to ordered loops over the
//! physical arrays laid out by [`super::layout`].

use std::collections::HashMap;

use super::layout::needs_index;
use super::lowered::*;
use super::ConcretizeError;
use crate::ir::*;
use crate::transform::{MaterializedStorage, RecordSource};

struct Lowerer<'a> {
    program: &'a Program,
    scalars: Vec<String>,
    extents: Vec<ExtentParam>,
    /// (storage, key iterator) -> traversal position of that group.
    positions: HashMap<(String, String), IExpr>,
    /// (storage, innermost iterator) -> physical leaf slot.
    leaves: HashMap<(String, String), IExpr>,
}

fn residual<T>(msg: impl Into<String>) -> Result<T, ConcretizeError> {
    Err(ConcretizeError::ResidualSymbolic(msg.into()))
}

pub fn lower(program: &Program) -> Result<LoweredProgram, ConcretizeError> {
    let mut scalars = Vec::new();
    collect_scalars(&program.body, &mut scalars);
    let mut l = Lowerer {
        program,
        scalars,
        extents: Vec::new(),
        positions: HashMap::new(),
        leaves: HashMap::new(),
    };
    let body = l.stmts(&program.body)?;
    let dense = program
        .dense
        .iter()
        .map(|d| {
            Ok(LDense {
                name: d.name.clone(),
                dims: d.dims.iter().map(|e| l.int(e)).collect::<Result<_, _>>()?,
            })
        })
        .collect::<Result<_, ConcretizeError>>()?;
    Ok(LoweredProgram {
        dense,
        extents: l.extents,
        scalars: l.scalars,
        body,
    })
}

fn collect_scalars(body: &[Stmt], out: &mut Vec<String>) {
    for s in body {
        if let Stmt::Assign {
            target: Expr::Var(v),
            ..
        } = s
        {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        if let Some(b) = s.body() {
            collect_scalars(b, out);
        }
    }
}

fn p(storage: &str, what: &str) -> IExpr {
    IExpr::Var(format!("{storage}_{what}"))
}

fn loop_(var: &str, lo: IExpr, hi: IExpr, body: Vec<LStmt>) -> LStmt {
    LStmt::Loop {
        var: var.to_string(),
        lo,
        hi,
        descending: false,
        body,
    }
}

impl Lowerer<'_> {
    fn storage(&self, name: &str) -> Result<&MaterializedStorage, ConcretizeError> {
        self.program
            .storage(name)
            .ok_or_else(|| ConcretizeError::Invalid(format!("unknown storage `{name}`")))
    }

    fn extent_param(&mut self, reservoir: &str, field: &FieldName) -> IExpr {
        let name = format!("{reservoir}_{field}_extent");
        if !self.extents.iter().any(|e| e.name == name) {
            self.extents.push(ExtentParam {
                name: name.clone(),
                reservoir: reservoir.to_string(),
                field: field.to_string(),
            });
        }
        IExpr::Var(name)
    }

    /// Group position of `key` in the traversal order of `st`.
    fn group_position(&mut self, st: &MaterializedStorage, key: &[String]) -> Result<IExpr, ConcretizeError> {
        if let [k] = key {
            if let Some(q) = self.positions.get(&(st.name.clone(), k.clone())) {
                return Ok(q.clone());
            }
        }
        if st.perm {
            return residual(format!(
                "permuted groups of `{}` are reached outside their permuted loop",
                st.name
            ));
        }
        let mut q = IExpr::Const(0);
        for (l, (level, k)) in st.levels.iter().zip(key).enumerate() {
            let off = IExpr::sub(IExpr::var(k), self.int(&level.lo)?);
            q = if l == 0 {
                off
            } else {
                IExpr::add(IExpr::mul(q, p(&st.name, &format!("C{l}"))), off)
            };
        }
        Ok(q)
    }

    fn stmts(&mut self, body: &[Stmt]) -> Result<Vec<LStmt>, ConcretizeError> {
        let mut out = Vec::new();
        for s in body {
            out.extend(self.stmt(s)?);
        }
        Ok(out)
    }

    fn stmt(&mut self, s: &Stmt) -> Result<Vec<LStmt>, ConcretizeError> {
        match s {
            Stmt::For {
                var,
                lo,
                hi,
                descending,
                body,
            } => Ok(vec![LStmt::Loop {
                var: var.clone(),
                lo: self.int(lo)?,
                hi: self.int(hi)?,
                descending: *descending,
                body: self.stmts(body)?,
            }]),
            Stmt::Forelem { var, domain, body } => self.forelem(var, domain, body),
            Stmt::Assign { target, op, value } => {
                let target = match target {
                    Expr::Var(v) => LTarget::Scalar(v.clone()),
                    Expr::Index { array, indices } => LTarget::Array {
                        array: array.clone(),
                        index: self.dense_index(array, indices)?,
                    },
                    other => {
                        return Err(ConcretizeError::Invalid(format!(
                            "cannot store to `{}`",
                            print_expr(other)
                        )))
                    }
                };
                Ok(vec![LStmt::Store {
                    target,
                    op: *op,
                    value: self.real(value)?,
                }])
            }
            Stmt::If { .. } | Stmt::Insert { .. } => Err(ConcretizeError::Invalid(
                "conditionals and reservoir mutation cannot be concretized".into(),
            )),
        }
    }

    fn forelem(&mut self, var: &str, domain: &Domain, body: &[Stmt]) -> Result<Vec<LStmt>, ConcretizeError> {
        match domain {
            Domain::Reservoir { name, .. } => Err(ConcretizeError::ResidualReservoir(format!(
                "loop over `{name}` is not materialized"
            ))),
            Domain::FieldValues { reservoir, field } => {
                residual(format!("value set `{reservoir}.{field}` is not encapsulated"))
            }
            Domain::Range { extent } => {
                let hi = self.int(extent)?;
                Ok(vec![loop_(var, IExpr::Const(0), hi, self.stmts(body)?)])
            }
            Domain::Span { lo, hi } => {
                let (lo, hi) = (self.int(lo)?, self.int(hi)?);
                Ok(vec![loop_(var, lo, hi, self.stmts(body)?)])
            }
            Domain::Blocks { extent, size } => {
                let x = *size as i64;
                let e = self.int(extent)?;
                let hi = IExpr::bin(
                    BinOp::Div,
                    IExpr::add(e, IExpr::Const(x - 1)),
                    IExpr::Const(x),
                );
                Ok(vec![loop_(var, IExpr::Const(0), hi, self.stmts(body)?)])
            }
            Domain::Block {
                outer,
                extent,
                size,
                compressed,
            } => {
                let x = IExpr::Const(*size as i64);
                let e = self.int(extent)?;
                let lo = IExpr::mul(IExpr::var(outer), x.clone());
                let hi = IExpr::bin(
                    BinOp::Min,
                    IExpr::mul(IExpr::add(IExpr::var(outer), IExpr::Const(1)), x),
                    e,
                );
                match compressed {
                    None => Ok(vec![loop_(var, lo, hi, self.stmts(body)?)]),
                    Some(s) => {
                        let pos = format!("{var}#b");
                        let mut inner = vec![LStmt::Let {
                            var: var.to_string(),
                            value: IExpr::load(format!("{s}_nz"), IExpr::var(&pos)),
                        }];
                        inner.extend(self.stmts(body)?);
                        Ok(vec![loop_(&pos, lo, hi, inner)])
                    }
                }
            }
            Domain::Permuted { storage, .. } => {
                let st = self.storage(storage)?.clone();
                let lo = self.int(&st.levels[0].lo)?;
                let q = format!("{var}#q");
                self.positions
                    .insert((st.name.clone(), var.to_string()), IExpr::var(&q));
                let mut inner = vec![LStmt::Let {
                    var: var.to_string(),
                    value: IExpr::add(IExpr::load(format!("{storage}_perm"), IExpr::var(&q)), lo),
                }];
                inner.extend(self.stmts(body)?);
                self.positions.remove(&(st.name.clone(), var.to_string()));
                Ok(vec![loop_(&q, IExpr::Const(0), p(storage, "G"), inner)])
            }
            Domain::Group { storage, key } => {
                let st = self.storage(storage)?.clone();
                if st.position_major {
                    return Err(ConcretizeError::Invalid(format!(
                        "`{storage}` is position-major but traversed by group"
                    )));
                }
                let q = if st.is_flat() {
                    IExpr::Const(0)
                } else {
                    self.group_position(&st, key)?
                };
                let k = IExpr::var(var);
                let (lo, hi, slot) = if st.offsets {
                    (
                        IExpr::load(format!("{storage}_ptr"), q.clone()),
                        IExpr::load(format!("{storage}_ptr"), IExpr::add(q, IExpr::Const(1))),
                        k,
                    )
                } else if st.padded() {
                    (
                        IExpr::Const(0),
                        p(storage, "W"),
                        IExpr::add(IExpr::mul(k, p(storage, "G")), q),
                    )
                } else if st.len.is_some() {
                    (
                        IExpr::Const(0),
                        IExpr::load(format!("{storage}_len"), q.clone()),
                        IExpr::add(IExpr::mul(q, p(storage, "W")), k),
                    )
                } else {
                    return residual(format!("group lengths of `{storage}` are not materialized"));
                };
                let body = self.with_leaf(storage, var, slot, body)?;
                Ok(vec![loop_(var, lo, hi, body)])
            }
            Domain::Positions { storage } => {
                let st = self.storage(storage)?;
                if !st.position_major {
                    return Err(ConcretizeError::Invalid(format!(
                        "`{storage}` is traversed by position but laid out by group"
                    )));
                }
                if !st.offsets && st.len.is_none() {
                    return residual(format!("group lengths of `{storage}` are not materialized"));
                }
                Ok(vec![loop_(var, IExpr::Const(0), p(storage, "W"), self.stmts(body)?)])
            }
            Domain::GroupsAt {
                storage, position, ..
            } => {
                let st = self.storage(storage)?.clone();
                let lo = self.int(&st.levels[0].lo)?;
                let k = IExpr::var(position);
                let counter = format!("{var}#p");
                let c = IExpr::var(&counter);
                let (start, end, rel, slot) = if st.offsets {
                    let ptr = |e| IExpr::load(format!("{storage}_ptr"), e);
                    let start = ptr(k.clone());
                    (
                        start.clone(),
                        ptr(IExpr::add(k, IExpr::Const(1))),
                        IExpr::sub(c.clone(), start),
                        c.clone(),
                    )
                } else if st.padded() {
                    (
                        IExpr::Const(0),
                        p(storage, "G"),
                        c.clone(),
                        IExpr::add(IExpr::mul(k, p(storage, "G")), c.clone()),
                    )
                } else {
                    (
                        IExpr::Const(0),
                        IExpr::load(format!("{storage}_len"), k.clone()),
                        c.clone(),
                        IExpr::add(IExpr::mul(k, p(storage, "G")), c.clone()),
                    )
                };
                let key = if st.perm {
                    IExpr::add(IExpr::load(format!("{storage}_perm"), rel), lo)
                } else if needs_index(&st) {
                    IExpr::load(format!("{storage}_idx"), slot.clone())
                } else {
                    IExpr::add(rel, lo)
                };
                let mut inner = vec![LStmt::Let {
                    var: var.to_string(),
                    value: key,
                }];
                inner.extend(self.with_leaf(storage, position, slot, body)?);
                Ok(vec![loop_(&counter, start, end, inner)])
            }
        }
    }

    /// Lowers `body` with leaves of `storage` at iterator `var` mapped to
    /// `slot`, binding the slot to a temporary when it is not `var` itself.
    fn with_leaf(
        &mut self,
        storage: &str,
        var: &str,
        slot: IExpr,
        body: &[Stmt],
    ) -> Result<Vec<LStmt>, ConcretizeError> {
        let key = (storage.to_string(), var.to_string());
        let mut out = Vec::new();
        let slot = if slot == IExpr::var(var) {
            slot
        } else {
            let name = format!("{var}#s");
            out.push(LStmt::Let {
                var: name.clone(),
                value: slot,
            });
            IExpr::Var(name)
        };
        let prev = self.leaves.insert(key.clone(), slot);
        let body = self.stmts(body);
        match prev {
            Some(p) => self.leaves.insert(key, p),
            None => self.leaves.remove(&key),
        };
        out.extend(body?);
        Ok(out)
    }

    /// Array and element index of a leaf field.
    fn leaf(&self, storage: &str, path: &[String], field: &str) -> Result<(String, IExpr, bool), ConcretizeError> {
        let st = self.storage(storage)?;
        let last = path.last().expect("leaf path is nonempty");
        let slot = self
            .leaves
            .get(&(storage.to_string(), last.clone()))
            .cloned()
            .ok_or_else(|| {
                ConcretizeError::Invalid(format!("leaf of `{storage}` read outside its loop"))
            })?;
        let f = st
            .record_index(field)
            .ok_or_else(|| ConcretizeError::Invalid(format!("`{storage}` has no field `{field}`")))?;
        let is_int = matches!(st.record[f].source, RecordSource::Field(_));
        if st.split {
            Ok((format!("{storage}_{field}"), slot, is_int))
        } else {
            let r = st.record.len() as i64;
            Ok((
                storage.to_string(),
                IExpr::add(IExpr::mul(slot, IExpr::Const(r)), IExpr::Const(f as i64)),
                is_int,
            ))
        }
    }

    fn dense_index(&mut self, array: &str, indices: &[Expr]) -> Result<IExpr, ConcretizeError> {
        let decl = self
            .program
            .dense_decl(array)
            .ok_or_else(|| ConcretizeError::Invalid(format!("unknown dense operand `{array}`")))?
            .clone();
        let mut flat = IExpr::Const(0);
        for (n, (i, dim)) in indices.iter().zip(&decl.dims).enumerate() {
            let i = self.int(i)?;
            flat = if n == 0 {
                i
            } else {
                IExpr::add(IExpr::mul(flat, self.int(dim)?), i)
            };
        }
        Ok(flat)
    }

    fn int(&mut self, e: &Expr) -> Result<IExpr, ConcretizeError> {
        Ok(match e {
            Expr::Int(v) => IExpr::Const(*v),
            Expr::Var(v) if self.scalars.contains(v) => {
                return Err(ConcretizeError::Invalid(format!(
                    "scalar `{v}` used as an index"
                )))
            }
            Expr::Var(v) => IExpr::var(v),
            Expr::Leaf {
                storage,
                path,
                field,
            } => {
                let (array, index, _) = self.leaf(storage, path, field)?;
                IExpr::load(array, index)
            }
            Expr::FieldExtent { reservoir, field } => self.extent_param(reservoir, field),
            Expr::NonEmpty { storage } => p(storage, "NZG"),
            Expr::Neg(x) => IExpr::sub(IExpr::Const(0), self.int(x)?),
            Expr::Binary { op, lhs, rhs } => IExpr::bin(*op, self.int(lhs)?, self.int(rhs)?),
            Expr::Field { .. } | Expr::Data { .. } => {
                return Err(ConcretizeError::ResidualReservoir(format!(
                    "`{}` reads a tuple directly",
                    print_expr(e)
                )))
            }
            other => {
                return Err(ConcretizeError::Invalid(format!(
                    "`{}` is not an integer expression",
                    print_expr(other)
                )))
            }
        })
    }

    fn real(&mut self, e: &Expr) -> Result<RExpr, ConcretizeError> {
        Ok(match e {
            Expr::Int(v) => RExpr::Const(*v as f64),
            Expr::Real(v) => RExpr::Const(*v),
            Expr::Var(v) if self.scalars.contains(v) => RExpr::Scalar(v.clone()),
            Expr::Index { array, indices } => RExpr::Load {
                array: array.clone(),
                index: self.dense_index(array, indices)?,
            },
            Expr::Leaf {
                storage,
                path,
                field,
            } => {
                let (array, index, is_int) = self.leaf(storage, path, field)?;
                if is_int {
                    RExpr::FromInt(IExpr::load(array, index))
                } else {
                    RExpr::Load { array, index }
                }
            }
            Expr::Neg(x) => RExpr::Neg(Box::new(self.real(x)?)),
            Expr::Binary { op, lhs, rhs } => RExpr::Bin {
                op: *op,
                lhs: Box::new(self.real(lhs)?),
                rhs: Box::new(self.real(rhs)?),
            },
            Expr::Call { func, .. } => {
                return Err(ConcretizeError::Invalid(format!("call to `{func}`")))
            }
            other => RExpr::FromInt(self.int(other)?),
        })
    }
}
