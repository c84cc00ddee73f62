//! Scope validator, run after every pass.

use std::collections::HashMap;

use thiserror::Error;

use super::ast::*;
use super::print::print_expr;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid program: {0}")]
pub struct ValidateError(pub String);

#[derive(Clone)]
enum Kind {
    Index,
    Tuple(String),
}

struct Checker<'a> {
    p: &'a Program,
    globals: Vec<String>,
    scope: Vec<(String, Kind)>,
}

/// Checks that every iterator, tuple variable, field, operand and storage
/// referenced by the program is declared and in scope.
pub fn validate(p: &Program) -> Result<(), ValidateError> {
    let mut globals = p.size_params();
    globals.extend(p.params.iter().cloned());
    collect_scalars(&p.body, &mut globals);
    let mut c = Checker {
        p,
        globals,
        scope: Vec::new(),
    };
    c.decls()?;
    c.stmts(&p.body)
}

fn collect_scalars(stmts: &[Stmt], out: &mut Vec<String>) {
    for s in stmts {
        if let Stmt::Assign {
            target: Expr::Var(v),
            ..
        } = s
        {
            out.push(v.clone());
        }
        if let Some(b) = s.body() {
            collect_scalars(b, out);
        }
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ValidateError> {
    Err(ValidateError(msg.into()))
}

impl Checker<'_> {
    fn decls(&self) -> Result<(), ValidateError> {
        let p = self.p;
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for r in &p.reservoirs {
            if seen.insert(&r.name, ()).is_some() {
                return err(format!("reservoir `{}` declared twice", r.name));
            }
            match &r.origin {
                ReservoirOrigin::Input => {}
                ReservoirOrigin::Projection { source } => {
                    let Some(s) = p.reservoir(source) else {
                        return err(format!("projection source `{source}` undeclared"));
                    };
                    if let Some(f) = r.fields.iter().find(|f| !s.fields.contains(f)) {
                        return err(format!("projection field `{f}` not in `{source}`"));
                    }
                }
                ReservoirOrigin::Join {
                    left,
                    right,
                    left_field,
                    right_field,
                } => {
                    let (Some(l), Some(rr)) = (p.reservoir(left), p.reservoir(right)) else {
                        return err(format!("join of undeclared reservoirs `{left}`, `{right}`"));
                    };
                    if !l.fields.contains(left_field) || !rr.fields.contains(right_field) {
                        return err(format!(
                            "join fields `{left_field}`, `{right_field}` not in schemas"
                        ));
                    }
                }
            }
        }
        for d in &p.data {
            if p.reservoir(&d.reservoir).is_none() {
                return err(format!(
                    "data `{}` over undeclared reservoir `{}`",
                    d.name, d.reservoir
                ));
            }
        }
        for s in &p.storages {
            if p.reservoir(&s.source).is_none() {
                return err(format!("storage `{}` reads undeclared `{}`", s.name, s.source));
            }
        }
        Ok(())
    }

    fn lookup(&self, v: &str) -> Option<&Kind> {
        self.scope.iter().rev().find(|(n, _)| n == v).map(|(_, k)| k)
    }

    fn index_var(&self, v: &str) -> Result<(), ValidateError> {
        match self.lookup(v) {
            Some(Kind::Index) => Ok(()),
            Some(Kind::Tuple(_)) => err(format!("tuple variable `{v}` used as an index")),
            None if self.globals.iter().any(|g| g == v) => Ok(()),
            None => err(format!("unbound identifier `{v}`")),
        }
    }

    fn stmts(&mut self, body: &[Stmt]) -> Result<(), ValidateError> {
        for s in body {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), ValidateError> {
        match s {
            Stmt::For {
                var, lo, hi, body, ..
            } => {
                self.expr(lo)?;
                self.expr(hi)?;
                self.scope.push((var.clone(), Kind::Index));
                let r = self.stmts(body);
                self.scope.pop();
                r
            }
            Stmt::Forelem { var, domain, body } => {
                self.domain(domain)?;
                let kind = match domain {
                    Domain::Reservoir { name, .. } => Kind::Tuple(name.clone()),
                    _ => Kind::Index,
                };
                self.scope.push((var.clone(), kind));
                let r = self.stmts(body);
                self.scope.pop();
                r
            }
            Stmt::Assign { target, value, .. } => {
                match target {
                    Expr::Var(_) | Expr::Index { .. } | Expr::Data { .. } => {}
                    other => return err(format!("cannot assign to `{}`", print_expr(other))),
                }
                self.expr(target)?;
                self.expr(value)
            }
            Stmt::If { cond, body } => {
                self.expr(cond)?;
                self.stmts(body)
            }
            Stmt::Insert { reservoir, values } => {
                let Some(r) = self.p.reservoir(reservoir) else {
                    return err(format!("unknown reservoir `{reservoir}`"));
                };
                if r.fields.len() != values.len() {
                    return err(format!("insert into `{reservoir}` has wrong arity"));
                }
                values.iter().try_for_each(|v| self.expr(v))
            }
        }
    }

    fn storage(&self, name: &str) -> Result<&crate::transform::MaterializedStorage, ValidateError> {
        self.p
            .storage(name)
            .ok_or_else(|| ValidateError(format!("unknown storage `{name}`")))
    }

    fn domain(&mut self, d: &Domain) -> Result<(), ValidateError> {
        match d {
            Domain::Reservoir { name, cond } => {
                let Some(r) = self.p.reservoir(name) else {
                    return err(format!("unknown reservoir `{name}`"));
                };
                if let Some(c) = cond {
                    if c.fields.len() != c.values.len() {
                        return err(format!("condition on `{name}` has mismatched arity"));
                    }
                    if let Some(f) = c.fields.iter().find(|f| !r.fields.contains(f)) {
                        return err(format!("unknown field `{name}.{f}`"));
                    }
                    for v in &c.values {
                        match v {
                            CondValue::Expr(e) => self.expr(e)?,
                            CondValue::Interval { lo, hi } => {
                                self.expr(lo)?;
                                if let Some(h) = hi {
                                    self.expr(h)?;
                                }
                            }
                        }
                    }
                }
                Ok(())
            }
            Domain::FieldValues { reservoir, field } => match self.p.reservoir(reservoir) {
                Some(r) if r.fields.contains(field) => Ok(()),
                _ => err(format!("unknown field set `{reservoir}.{field}`")),
            },
            Domain::Range { extent } | Domain::Blocks { extent, .. } => self.expr(extent),
            Domain::Span { lo, hi } => {
                self.expr(lo)?;
                self.expr(hi)
            }
            Domain::Block {
                outer,
                extent,
                compressed,
                ..
            } => {
                self.index_var(outer)?;
                if let Some(s) = compressed {
                    self.storage(s)?;
                }
                self.expr(extent)
            }
            Domain::Group { storage, key } => {
                let st = self.storage(storage)?;
                if st.levels.len() != key.len() {
                    return err(format!(
                        "group of `{storage}` keyed by {} iterators, storage has {} levels",
                        key.len(),
                        st.levels.len()
                    ));
                }
                key.iter().try_for_each(|k| self.index_var(k))
            }
            Domain::Permuted { storage, extent } => {
                self.storage(storage)?;
                self.expr(extent)
            }
            Domain::Positions { storage } => self.storage(storage).map(|_| ()),
            Domain::GroupsAt {
                storage,
                position,
                base,
            } => {
                self.storage(storage)?;
                self.index_var(position)?;
                self.domain(base)
            }
        }
    }

    fn expr(&self, e: &Expr) -> Result<(), ValidateError> {
        match e {
            Expr::Int(_) | Expr::Real(_) => Ok(()),
            Expr::Var(v) => self.index_var(v),
            Expr::Field { var, field } => match self.lookup(var) {
                Some(Kind::Tuple(r)) => {
                    let decl = self.p.reservoir(r).expect("checked reservoir");
                    if decl.fields.contains(field) {
                        Ok(())
                    } else {
                        err(format!("unknown field `{var}.{field}`"))
                    }
                }
                Some(Kind::Index) => err(format!("`{var}` is not a tuple variable")),
                None => err(format!("unbound identifier `{var}`")),
            },
            Expr::Data { binding, tuple } => {
                let Some(d) = self.p.data_decl(binding) else {
                    return err(format!("unknown address function `{binding}`"));
                };
                match self.lookup(tuple) {
                    Some(Kind::Tuple(r)) => {
                        let roots = self.p.root_reservoirs(r);
                        if roots.contains(&d.reservoir) || *r == d.reservoir {
                            Ok(())
                        } else {
                            err(format!(
                                "`{binding}` is defined over `{}`, not over `{r}`",
                                d.reservoir
                            ))
                        }
                    }
                    Some(Kind::Index) => err(format!("`{tuple}` is not a tuple variable")),
                    None => err(format!("unbound identifier `{tuple}`")),
                }
            }
            Expr::Index { array, indices } => {
                let Some(d) = self.p.dense_decl(array) else {
                    return err(format!("unknown dense operand `{array}`"));
                };
                if d.dims.len() != indices.len() {
                    return err(format!(
                        "`{array}` has {} dimension(s), indexed with {}",
                        d.dims.len(),
                        indices.len()
                    ));
                }
                indices.iter().try_for_each(|i| self.expr(i))
            }
            Expr::Leaf {
                storage,
                path,
                field,
            } => {
                let st = self.storage(storage)?;
                if st.record_index(field).is_none() {
                    return err(format!("storage `{storage}` has no field `{field}`"));
                }
                if path.len() != st.levels.len() + 1 {
                    return err(format!("leaf of `{storage}` has path of wrong depth"));
                }
                path.iter().try_for_each(|k| self.index_var(k))
            }
            Expr::FieldExtent { reservoir, field } => match self.p.reservoir(reservoir) {
                Some(r) if r.fields.contains(field) => Ok(()),
                _ => err(format!("unknown field `{reservoir}.{field}`")),
            },
            Expr::NonEmpty { storage } => self.storage(storage).map(|_| ()),
            Expr::Call { args, .. } => args.iter().try_for_each(|a| self.expr(a)),
            Expr::Neg(x) => self.expr(x),
            Expr::Binary { lhs, rhs, .. } => {
                self.expr(lhs)?;
                self.expr(rhs)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{builtin_kernel, KernelKind};
    use super::*;

    #[test]
    fn builtins_validate() {
        for k in [KernelKind::SpMV, KernelKind::SpMM(3), KernelKind::TrSv] {
            validate(&builtin_kernel(k).program).unwrap();
        }
    }

    #[test]
    fn detects_unbound_iterator() {
        let mut p = builtin_kernel(KernelKind::SpMV).program;
        let Stmt::Forelem { body, .. } = &mut p.body[0] else {
            panic!()
        };
        body.push(Stmt::Assign {
            target: Expr::Index {
                array: "C".into(),
                indices: vec![Expr::var("zz")],
            },
            op: AssignOp::Set,
            value: Expr::Int(0),
        });
        assert!(validate(&p).unwrap_err().0.contains("zz"));
    }
}
