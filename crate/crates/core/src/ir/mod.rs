//! Forelem intermediate representation: AST, tuple reservoirs, DSL parser
//! and printer, scope validator and the built-in kernel encodings.

mod ast;
mod kernels;
mod parse;
mod print;
mod reservoir;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use ast::*;
pub use kernels::*;
pub use parse::{parse_program, ParseError, ParseErrorKind};
pub use print::{describe_storage, print_expr, print_program};
pub use reservoir::*;
pub use validate::{validate, ValidateError};

#[derive(Debug, Error, PartialEq)]
pub enum IrError {
    #[error("unknown reservoir `{0}`")]
    UnknownReservoir(String),
    #[error("missing input reservoir `{0}`")]
    MissingInput(String),
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
    #[error("cannot evaluate `{expr}`: {reason}")]
    Eval { expr: String, reason: String },
}

/// Fields of `reservoir` read anywhere in the program: conditions, loop
/// bodies, extents and storage plans.
pub fn free_fields(program: &Program, reservoir: &str) -> Result<BTreeSet<FieldName>, IrError> {
    let decl = program
        .reservoir(reservoir)
        .ok_or_else(|| IrError::UnknownReservoir(reservoir.to_string()))?;
    let mut out = BTreeSet::new();
    let mut note_expr = |e: &Expr, tuple_vars: &[String], out: &mut BTreeSet<FieldName>| {
        e.walk(&mut |x| match x {
            Expr::Field { var, field } if tuple_vars.contains(var) => {
                out.insert(field.clone());
            }
            Expr::FieldExtent { reservoir: r, field } if r == reservoir => {
                out.insert(field.clone());
            }
            _ => {}
        });
    };

    fn scan(
        stmts: &[Stmt],
        reservoir: &str,
        vars: &mut Vec<String>,
        out: &mut BTreeSet<FieldName>,
        note: &mut dyn FnMut(&Expr, &[String], &mut BTreeSet<FieldName>),
    ) {
        for s in stmts {
            let mut pushed = false;
            if let Stmt::Forelem { var, domain, .. } = s {
                match domain {
                    Domain::Reservoir { name, cond } if name == reservoir => {
                        if let Some(c) = cond {
                            out.extend(c.fields.iter().cloned());
                        }
                        vars.push(var.clone());
                        pushed = true;
                    }
                    Domain::FieldValues {
                        reservoir: r,
                        field,
                    } if r == reservoir => {
                        out.insert(field.clone());
                    }
                    _ => {}
                }
            }
            // this statement's own expressions; bodies are scanned recursively
            match s {
                Stmt::For { lo, hi, .. } => {
                    note(lo, vars, out);
                    note(hi, vars, out);
                }
                Stmt::Assign { target, value, .. } => {
                    note(target, vars, out);
                    note(value, vars, out);
                }
                Stmt::If { cond, .. } => note(cond, vars, out),
                Stmt::Insert { values, .. } => values.iter().for_each(|v| note(v, vars, out)),
                Stmt::Forelem { domain, .. } => {
                    let probe = Stmt::Forelem {
                        var: String::new(),
                        domain: domain.clone(),
                        body: Vec::new(),
                    };
                    probe.visit_exprs(&mut |e| note(e, vars, out));
                }
            }
            if let Some(b) = s.body() {
                scan(b, reservoir, vars, out, note);
            }
            if pushed {
                vars.pop();
            }
        }
    }
    scan(&program.body, reservoir, &mut Vec::new(), &mut out, &mut note_expr);

    for st in program.storages.iter().filter(|s| s.source == decl.name) {
        out.extend(st.filter.iter().map(|(f, _)| f.clone()));
        for l in &st.levels {
            out.extend(l.fields.iter().cloned());
        }
        for r in &st.record {
            if let crate::transform::RecordSource::Field(f) = &r.source {
                out.insert(f.clone());
            }
        }
    }
    Ok(out)
}

/// Computes every declared reservoir from the input reservoirs, deriving
/// projections and joins. Each input is tagged with its own lineage source.
pub fn resolve_reservoirs(
    program: &Program,
    inputs: &BTreeMap<String, TupleReservoir>,
) -> Result<BTreeMap<String, TupleReservoir>, IrError> {
    let mut out: BTreeMap<String, TupleReservoir> = BTreeMap::new();
    let mut source_id = 0u32;
    for decl in &program.reservoirs {
        let r = match &decl.origin {
            ReservoirOrigin::Input => {
                let r = inputs
                    .get(&decl.name)
                    .ok_or_else(|| IrError::MissingInput(decl.name.clone()))?;
                if r.schema() != decl.fields.as_slice() {
                    return Err(IrError::Eval {
                        expr: decl.name.clone(),
                        reason: format!(
                            "input schema {:?} does not match declaration {:?}",
                            r.schema(),
                            decl.fields
                        ),
                    });
                }
                let tagged = r.clone().with_source_id(source_id);
                source_id += 1;
                tagged
            }
            ReservoirOrigin::Projection { source } => out
                .get(source)
                .ok_or_else(|| IrError::UnknownReservoir(source.clone()))?
                .project(&decl.fields, source)?,
            ReservoirOrigin::Join {
                left,
                right,
                left_field,
                right_field,
            } => {
                let l = out
                    .get(left)
                    .ok_or_else(|| IrError::UnknownReservoir(left.clone()))?;
                let r = out
                    .get(right)
                    .ok_or_else(|| IrError::UnknownReservoir(right.clone()))?;
                l.join(r, right, left_field, right_field)?
            }
        };
        out.insert(decl.name.clone(), r);
    }
    Ok(out)
}

/// Evaluates loop-invariant integer expressions: constants, parameters and
/// field extents.
pub struct StaticEnv<'a> {
    pub params: &'a BTreeMap<String, i64>,
    pub reservoirs: &'a BTreeMap<String, TupleReservoir>,
}

impl StaticEnv<'_> {
    pub fn eval(&self, e: &Expr) -> Result<i64, IrError> {
        let fail = |reason: String| IrError::Eval {
            expr: print_expr(e),
            reason,
        };
        Ok(match e {
            Expr::Int(v) => *v,
            Expr::Var(v) => *self
                .params
                .get(v)
                .ok_or_else(|| fail(format!("`{v}` has no value")))?,
            Expr::FieldExtent { reservoir, field } => {
                let r = self
                    .reservoirs
                    .get(reservoir)
                    .ok_or_else(|| IrError::UnknownReservoir(reservoir.clone()))?;
                field_extent(r, field).map_err(fail)?
            }
            Expr::Neg(x) => -self.eval(x)?,
            Expr::Binary { op, lhs, rhs } => {
                let (a, b) = (self.eval(lhs)?, self.eval(rhs)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div if b == 0 => return Err(fail("division by zero".into())),
                    BinOp::Div => a.div_euclid(b),
                    BinOp::Min => a.min(b),
                }
            }
            _ => return Err(fail("not a loop-invariant integer expression".into())),
        })
    }
}

/// `max(field) + 1`, or 0 for an empty reservoir. Negative values cannot be
/// embedded in a natural-number range.
pub fn field_extent(r: &TupleReservoir, field: &FieldName) -> Result<i64, String> {
    let values = r.field_values(field).map_err(|e| e.to_string())?;
    match (values.first(), values.last()) {
        (Some(&lo), _) if lo < 0 => Err(format!(
            "field `{field}` has negative value {lo}; encapsulation needs values in N"
        )),
        (_, Some(&hi)) => Ok(hi + 1),
        _ => Ok(0),
    }
}
