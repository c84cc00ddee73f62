//! The rewrite passes. Each pass picks its target by candidate index: the
//! n-th loop (pre-order) or storage on which the pass is structurally
//! possible. Preconditions beyond that shape are checked in `apply` and
//! reported as refusals.

use std::fmt;

use thiserror::Error;

use super::storage::{Level, LenMode, MaterializedStorage, RecordField, RecordSource};
use crate::ir::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("no candidate #{index} for {pass}")]
    NoCandidate { pass: String, index: usize },
    #[error("pass produced an invalid program: {0}")]
    Invalid(#[from] ValidateError),
}

fn refuse<T>(msg: impl Into<String>) -> Result<T, TransformError> {
    Err(TransformError::NotApplicable(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Pass {
    Orthogonalize(Vec<FieldName>),
    Encapsulate,
    UndoOrthogonalize(FieldName),
    MaterializeIndependent,
    MaterializeDependent,
    HorizontalReduce,
    StructureSplit,
    NStarMaterialize(LenMode),
    NStarSort,
    DimReduce,
    LoopCollapse,
    /// Optionally names the outer and inner iterator.
    LoopInterchange(Option<(String, String)>),
    /// Optionally names the iterator to block.
    LoopBlock { var: Option<String>, size: u32 },
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pass::Orthogonalize(fields) => {
                let names: Vec<&str> = fields.iter().map(FieldName::as_str).collect();
                write!(f, "orth({})", names.join(","))
            }
            Pass::Encapsulate => f.write_str("encap"),
            Pass::UndoOrthogonalize(field) => write!(f, "unorth({field})"),
            Pass::MaterializeIndependent => f.write_str("matind"),
            Pass::MaterializeDependent => f.write_str("matdep"),
            Pass::HorizontalReduce => f.write_str("hreduce"),
            Pass::StructureSplit => f.write_str("split"),
            Pass::NStarMaterialize(LenMode::Padded) => f.write_str("nstar(padded)"),
            Pass::NStarMaterialize(LenMode::Compact) => f.write_str("nstar(compact)"),
            Pass::NStarSort => f.write_str("sort"),
            Pass::DimReduce => f.write_str("dimreduce"),
            Pass::LoopCollapse => f.write_str("collapse"),
            Pass::LoopInterchange(None) => f.write_str("interchange"),
            Pass::LoopInterchange(Some((i, j))) => write!(f, "interchange({i},{j})"),
            Pass::LoopBlock { var: None, size } => write!(f, "block({size})"),
            Pass::LoopBlock {
                var: Some(v),
                size,
            } => write!(f, "block({v},{size})"),
        }
    }
}

/// Position of a statement in the nested body lists.
pub type Path = Vec<usize>;

/// A loop and the loops enclosing it.
struct LoopSite {
    path: Path,
    ancestors: Vec<Path>,
}

fn collect_loops(body: &[Stmt]) -> Vec<LoopSite> {
    fn go(body: &[Stmt], prefix: &mut Path, anc: &mut Vec<Path>, out: &mut Vec<LoopSite>) {
        for (n, s) in body.iter().enumerate() {
            prefix.push(n);
            if s.loop_var().is_some() {
                out.push(LoopSite {
                    path: prefix.clone(),
                    ancestors: anc.clone(),
                });
            }
            if let Some(b) = s.body() {
                let is_loop = s.loop_var().is_some();
                if is_loop {
                    anc.push(prefix.clone());
                }
                go(b, prefix, anc, out);
                if is_loop {
                    anc.pop();
                }
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(body, &mut Vec::new(), &mut Vec::new(), &mut out);
    out
}

pub(crate) fn stmt_at<'a>(body: &'a [Stmt], path: &[usize]) -> &'a Stmt {
    let s = &body[path[0]];
    if path.len() == 1 {
        s
    } else {
        stmt_at(s.body().expect("path through a loop"), &path[1..])
    }
}

pub(crate) fn stmt_at_mut<'a>(body: &'a mut [Stmt], path: &[usize]) -> &'a mut Stmt {
    let s = &mut body[path[0]];
    if path.len() == 1 {
        s
    } else {
        stmt_at_mut(s.body_mut().expect("path through a loop"), &path[1..])
    }
}

fn take_stmt(body: &mut [Stmt], path: &[usize]) -> Stmt {
    std::mem::replace(
        stmt_at_mut(body, path),
        Stmt::Assign {
            target: Expr::Int(0),
            op: AssignOp::Set,
            value: Expr::Int(0),
        },
    )
}

fn rename_in_body(body: &mut [Stmt], f: &mut dyn FnMut(Expr) -> Expr) {
    for s in body {
        s.rewrite_exprs(f);
    }
}

/// Preferred iterator names for a loop over `field`.
fn iterator_names(field: &str) -> &'static [&'static str] {
    match field {
        "row" => &["i", "j", "l", "m"],
        "col" => &["j", "i", "l", "m"],
        _ => &["l", "m", "i", "j"],
    }
}

/// The statement-level targets of a pass, in pre-order.
pub fn candidates(program: &Program, pass: &Pass) -> Vec<Path> {
    let loops = collect_loops(&program.body);
    let stmt = |p: &Path| stmt_at(&program.body, p);
    let over_reservoir = |p: &Path| {
        matches!(
            stmt(p),
            Stmt::Forelem {
                domain: Domain::Reservoir { .. },
                ..
            }
        )
    };
    let storage_paths = |keep: &dyn Fn(&MaterializedStorage) -> bool| -> Vec<Path> {
        program
            .storages
            .iter()
            .enumerate()
            .filter(|(_, s)| keep(s))
            .map(|(n, _)| vec![n])
            .collect()
    };
    match pass {
        Pass::Orthogonalize(_) | Pass::MaterializeIndependent | Pass::LoopCollapse => loops
            .into_iter()
            .map(|l| l.path)
            .filter(|p| over_reservoir(p))
            .collect(),
        Pass::MaterializeDependent => loops
            .into_iter()
            .filter(|l| {
                let Stmt::Forelem {
                    domain: Domain::Reservoir { cond: Some(c), .. },
                    ..
                } = stmt(&l.path)
                else {
                    return false;
                };
                l.ancestors.iter().any(|a| {
                    let v = stmt(a).loop_var().unwrap_or_default();
                    c.values.iter().any(|val| val.mentions(v))
                })
            })
            .map(|l| l.path)
            .collect(),
        Pass::Encapsulate => loops
            .into_iter()
            .map(|l| l.path)
            .filter(|p| {
                matches!(
                    stmt(p),
                    Stmt::Forelem {
                        domain: Domain::FieldValues { .. },
                        ..
                    }
                )
            })
            .collect(),
        Pass::UndoOrthogonalize(_) => loops
            .into_iter()
            .map(|l| l.path)
            .filter(|p| {
                let s = stmt(p);
                matches!(
                    s,
                    Stmt::Forelem {
                        domain: Domain::FieldValues { .. } | Domain::Range { .. } | Domain::Span { .. },
                        ..
                    }
                ) && s.body().is_some_and(|b| b.len() == 1 && {
                    let mut inner = p.clone();
                    inner.push(0);
                    over_reservoir(&inner)
                })
            })
            .collect(),
        Pass::LoopInterchange(names) => loops
            .into_iter()
            .map(|l| l.path)
            .filter(|p| {
                let s = stmt(p);
                let Some(b) = s.body() else { return false };
                if b.len() != 1 || b[0].loop_var().is_none() {
                    return false;
                }
                match names {
                    Some((i, j)) => s.loop_var() == Some(i) && b[0].loop_var() == Some(j),
                    None => true,
                }
            })
            .collect(),
        Pass::LoopBlock { var, .. } => loops
            .into_iter()
            .map(|l| l.path)
            .filter(|p| match stmt(p) {
                Stmt::Forelem {
                    var: v,
                    domain: Domain::Range { .. },
                    ..
                } => var.as_ref().is_none_or(|want| want == v),
                _ => false,
            })
            .collect(),
        Pass::HorizontalReduce => program
            .reservoirs
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                program.body.iter().any(|s| iterates(s, &r.name))
            })
            .map(|(n, _)| vec![n])
            .collect(),
        Pass::StructureSplit => storage_paths(&|s| !s.split),
        Pass::NStarMaterialize(_) => storage_paths(&|s| s.len.is_none() && !s.offsets),
        Pass::NStarSort => storage_paths(&|s| {
            s.levels.len() == 1 && !s.perm && !s.position_major && s.levels[0].block.is_none()
        }),
        Pass::DimReduce => storage_paths(&|s| s.len.is_some() && !s.offsets),
    }
}

fn iterates(s: &Stmt, reservoir: &str) -> bool {
    let here = matches!(s, Stmt::Forelem { domain: Domain::Reservoir { name, .. }, .. } if name == reservoir);
    here || s
        .body()
        .is_some_and(|b| b.iter().any(|c| iterates(c, reservoir)))
}

/// Applies `pass` to its `index`-th candidate and validates the result.
pub fn apply_pass(program: &Program, pass: &Pass, index: usize) -> Result<Program, TransformError> {
    if program.has_mutation() {
        return refuse("program mutates a reservoir; such programs are not transformed");
    }
    let cands = candidates(program, pass);
    let Some(target) = cands.get(index) else {
        return Err(TransformError::NoCandidate {
            pass: pass.to_string(),
            index,
        });
    };
    let mut p = program.clone();
    match pass {
        Pass::Orthogonalize(fields) => orthogonalize(&mut p, target, fields)?,
        Pass::Encapsulate => encapsulate(&mut p, target)?,
        Pass::UndoOrthogonalize(f) => undo_orthogonalize(&mut p, target, f)?,
        Pass::MaterializeIndependent => materialize(&mut p, target, false)?,
        Pass::MaterializeDependent => materialize(&mut p, target, true)?,
        Pass::HorizontalReduce => horizontal_reduce(&mut p, target[0])?,
        Pass::StructureSplit => p.storages[target[0]].split = true,
        Pass::NStarMaterialize(mode) => p.storages[target[0]].len = Some(*mode),
        Pass::NStarSort => nstar_sort(&mut p, target[0])?,
        Pass::DimReduce => dim_reduce(&mut p, target[0])?,
        Pass::LoopCollapse => loop_collapse(&mut p, target)?,
        Pass::LoopInterchange(_) => loop_interchange(&mut p, target)?,
        Pass::LoopBlock { size, .. } => loop_block(&mut p, target, *size)?,
    }
    validate(&p)?;
    Ok(p)
}

fn orthogonalize(p: &mut Program, path: &Path, fields: &[FieldName]) -> Result<(), TransformError> {
    if fields.is_empty() {
        return refuse("orthogonalization needs at least one field");
    }
    let mut taken = p.used_names();
    let Stmt::Forelem {
        var,
        domain: Domain::Reservoir { name, cond },
        body,
    } = take_stmt(&mut p.body, path)
    else {
        unreachable!("candidate is a reservoir loop")
    };
    let decl = p.reservoir(&name).expect("validated reservoir").clone();
    for (n, f) in fields.iter().enumerate() {
        if !decl.fields.contains(f) {
            return refuse(format!("field `{f}` is not in the schema of `{name}`"));
        }
        if cond.as_ref().is_some_and(|c| c.binds(f)) || fields[..n].contains(f) {
            return refuse(format!("loop is already conditioned on `{f}`"));
        }
    }
    let mut iters = Vec::new();
    for f in fields {
        let used = &mut taken;
        let candidates = iterator_names(f.as_str());
        let fresh = candidates
            .iter()
            .find(|c| !used.iter().any(|u| u == *c))
            .map(|c| c.to_string())
            .unwrap_or_else(|| {
                (1..)
                    .map(|n| format!("{}{n}", candidates[0]))
                    .find(|c| !used.contains(c))
                    .expect("name supply")
            });
        used.push(fresh.clone());
        iters.push(fresh);
    }
    let mut cond = cond.unwrap_or(Condition {
        fields: Vec::new(),
        values: Vec::new(),
    });
    for (f, v) in fields.iter().zip(&iters) {
        cond.fields.push(f.clone());
        cond.values.push(CondValue::Expr(Expr::var(v)));
    }
    let mut body = body;
    rename_in_body(&mut body, &mut |e| match e {
        Expr::Field { var: ref tv, ref field } if *tv == var => {
            match fields.iter().position(|f| f == field) {
                Some(n) => Expr::var(&iters[n]),
                None => e,
            }
        }
        other => other,
    });
    let mut stmt = Stmt::Forelem {
        var,
        domain: Domain::Reservoir {
            name: name.clone(),
            cond: Some(cond),
        },
        body,
    };
    for (f, v) in fields.iter().zip(&iters).rev() {
        stmt = Stmt::Forelem {
            var: v.clone(),
            domain: Domain::FieldValues {
                reservoir: name.clone(),
                field: f.clone(),
            },
            body: vec![stmt],
        };
    }
    *stmt_at_mut(&mut p.body, path) = stmt;
    Ok(())
}

fn encapsulate(p: &mut Program, path: &Path) -> Result<(), TransformError> {
    let Stmt::Forelem { domain, .. } = stmt_at_mut(&mut p.body, path) else {
        unreachable!()
    };
    let Domain::FieldValues { reservoir, field } = domain.clone() else {
        unreachable!()
    };
    *domain = Domain::Range {
        extent: Expr::FieldExtent { reservoir, field },
    };
    Ok(())
}

fn undo_orthogonalize(p: &mut Program, path: &Path, field: &FieldName) -> Result<(), TransformError> {
    let Stmt::Forelem {
        var: outer,
        domain,
        mut body,
    } = take_stmt(&mut p.body, path)
    else {
        unreachable!()
    };
    let Stmt::Forelem {
        var: t,
        domain: Domain::Reservoir { name, cond },
        body: inner_body,
    } = body.remove(0)
    else {
        unreachable!()
    };
    let Some(mut cond) = cond else {
        return refuse("inner loop has no condition to undo");
    };
    let Some(pos) = cond
        .fields
        .iter()
        .zip(&cond.values)
        .position(|(f, v)| f == field && *v == CondValue::Expr(Expr::var(&outer)))
    else {
        return refuse(format!("inner loop does not bind `{field}` to `{outer}`"));
    };
    cond.fields.remove(pos);
    cond.values.remove(pos);
    if cond.values.iter().any(|v| v.mentions(&outer)) {
        return refuse(format!("`{outer}` is used by another condition value"));
    }
    let replacement = match domain {
        Domain::FieldValues {
            reservoir,
            field: f,
        } if reservoir == name && f == *field => None,
        Domain::FieldValues { .. } => {
            return refuse("outer field set does not match the inner reservoir")
        }
        Domain::Range {
            extent: Expr::FieldExtent { reservoir, field: f },
        } if reservoir == name && f == *field => None,
        Domain::Range { extent } => Some(CondValue::Interval {
            lo: Expr::Int(-1),
            hi: Some(extent),
        }),
        Domain::Span { lo, hi } => Some(CondValue::Interval {
            lo: lo.decrement(),
            hi: Some(hi),
        }),
        _ => unreachable!(),
    };
    if let Some(v) = replacement {
        cond.fields.push(field.clone());
        cond.values.push(v);
    }
    let mut inner_body = inner_body;
    rename_in_body(&mut inner_body, &mut |e| match e {
        Expr::Var(v) if v == outer => Expr::Field {
            var: t.clone(),
            field: field.clone(),
        },
        other => other,
    });
    *stmt_at_mut(&mut p.body, path) = Stmt::Forelem {
        var: t,
        domain: Domain::Reservoir {
            name,
            cond: (!cond.fields.is_empty()).then_some(cond),
        },
        body: inner_body,
    };
    Ok(())
}

/// Loop bounds of an enclosing iterator that may key a storage level.
fn level_bounds(s: &Stmt) -> Result<(Expr, Expr, Option<u32>), String> {
    match s {
        Stmt::For { lo, hi, .. } => Ok((lo.clone(), hi.clone(), None)),
        Stmt::Forelem { domain, var, .. } => match domain {
            Domain::Range { extent } => Ok((Expr::Int(0), extent.clone(), None)),
            Domain::Span { lo, hi } => Ok((lo.clone(), hi.clone(), None)),
            Domain::Block {
                extent,
                size,
                compressed: None,
                ..
            } => Ok((Expr::Int(0), extent.clone(), Some(*size))),
            Domain::FieldValues { .. } => {
                Err(format!("dependent iterator `{var}` is not encapsulated"))
            }
            _ => Err(format!("iterator `{var}` cannot key a materialized level")),
        },
        _ => unreachable!(),
    }
}

fn materialize(p: &mut Program, path: &Path, dependent: bool) -> Result<(), TransformError> {
    let site = collect_loops(&p.body)
        .into_iter()
        .find(|l| &l.path == path)
        .expect("candidate loop");
    let ancestors: Vec<Stmt> = site
        .ancestors
        .iter()
        .map(|a| stmt_at(&p.body, a).clone())
        .collect();
    let Stmt::Forelem {
        var: t,
        domain: Domain::Reservoir { name, cond },
        body,
    } = stmt_at(&p.body, path).clone()
    else {
        unreachable!()
    };

    let mut filter = Vec::new();
    let mut levels: Vec<(usize, Level)> = Vec::new();
    if let Some(c) = &cond {
        for (f, v) in c.fields.iter().zip(&c.values) {
            let dep = ancestors
                .iter()
                .position(|a| v.mentions(a.loop_var().unwrap_or_default()));
            match (dep, v) {
                (None, _) => filter.push((f.clone(), v.clone())),
                (Some(depth), CondValue::Expr(Expr::Var(it))) if it == ancestors[depth].loop_var().unwrap_or_default() => {
                    if let Some((_, l)) = levels.iter_mut().find(|(_, l)| &l.iterator == it) {
                        l.fields.push(f.clone());
                        continue;
                    }
                    let (lo, hi, block) = level_bounds(&ancestors[depth])
                        .or_else(refuse)?;
                    levels.push((
                        depth,
                        Level {
                            iterator: it.clone(),
                            fields: vec![f.clone()],
                            lo,
                            hi,
                            block,
                            compressed: false,
                        },
                    ));
                }
                (Some(_), _) => {
                    return refuse(format!(
                        "condition on `{f}` depends on an iterator in a non-trivial way"
                    ))
                }
            }
        }
    }
    if !dependent && !levels.is_empty() {
        return refuse("loop-dependent condition present; use matdep");
    }
    if dependent && levels.is_empty() {
        return refuse("no loop-dependent condition");
    }
    levels.sort_by_key(|(d, _)| *d);
    let levels: Vec<Level> = levels.into_iter().map(|(_, l)| l).collect();

    let decl = p.reservoir(&name).expect("declared").clone();
    // fields and bindings the body reads through the tuple variable
    let mut used_fields = Vec::new();
    let mut used_bindings = Vec::new();
    for s in &body {
        s.visit_exprs(&mut |e| match e {
            Expr::Field { var, field } if *var == t => {
                if !levels.iter().any(|l| l.fields.contains(field)) && !used_fields.contains(field) {
                    used_fields.push(field.clone());
                }
            }
            Expr::Data { binding, tuple } if *tuple == t && !used_bindings.contains(binding) => {
                used_bindings.push(binding.clone())
            }
            _ => {}
        });
    }
    used_fields.sort_by_key(|f| decl.fields.iter().position(|d| d == f));
    let mut record: Vec<RecordField> = used_fields
        .iter()
        .map(|f| RecordField {
            name: f.to_string(),
            source: RecordSource::Field(f.clone()),
        })
        .collect();
    let single_value = used_bindings.len() == 1 && !used_fields.iter().any(|f| f.as_str() == "value");
    for b in &used_bindings {
        record.push(RecordField {
            name: if single_value { "value".into() } else { b.to_lowercase() },
            source: RecordSource::Data(b.clone()),
        });
    }

    let storage_name = p.fresh_name(&["PA", "PB", "PC", "PD", "PE", "PF"]);
    let mut used = p.used_names();
    used.push(storage_name.clone());
    let k = ["k", "p", "q", "r", "s"]
        .iter()
        .find(|c| !used.iter().any(|u| u == *c))
        .map(|c| c.to_string())
        .unwrap_or_else(|| p.fresh_name(&["k"]));
    let key: Vec<String> = levels.iter().map(|l| l.iterator.clone()).collect();
    let mut leaf_path = key.clone();
    leaf_path.push(k.clone());

    let mut body = body;
    let rec = record.clone();
    rename_in_body(&mut body, &mut |e| match e {
        Expr::Field { ref var, ref field } if *var == t => {
            if let Some(l) = levels.iter().find(|l| l.fields.contains(field)) {
                return Expr::var(&l.iterator);
            }
            let r = rec
                .iter()
                .find(|r| r.source == RecordSource::Field(field.clone()))
                .expect("recorded field");
            Expr::Leaf {
                storage: storage_name.clone(),
                path: leaf_path.clone(),
                field: r.name.clone(),
            }
        }
        Expr::Data { ref binding, ref tuple } if *tuple == t => {
            let r = rec
                .iter()
                .find(|r| r.source == RecordSource::Data(binding.clone()))
                .expect("recorded binding");
            Expr::Leaf {
                storage: storage_name.clone(),
                path: leaf_path.clone(),
                field: r.name.clone(),
            }
        }
        other => other,
    });
    let mut leftover = false;
    for s in &body {
        s.visit_exprs(&mut |e| {
            leftover |= matches!(e, Expr::Var(v) if *v == t);
        });
    }
    if leftover {
        return refuse(format!("tuple variable `{t}` is used outside field and data reads"));
    }
    p.storages.push(MaterializedStorage {
        name: storage_name.clone(),
        source: name,
        filter,
        levels,
        record,
        len: None,
        offsets: false,
        perm: false,
        position_major: false,
        split: false,
    });
    *stmt_at_mut(&mut p.body, path) = Stmt::Forelem {
        var: k,
        domain: Domain::Group {
            storage: storage_name,
            key,
        },
        body,
    };
    Ok(())
}

fn horizontal_reduce(p: &mut Program, index: usize) -> Result<(), TransformError> {
    let decl = p.reservoirs[index].clone();
    let used = free_fields(p, &decl.name).map_err(|e| TransformError::NotApplicable(e.to_string()))?;
    if used.len() == decl.fields.len() {
        return refuse(format!("every field of `{}` is used", decl.name));
    }
    let fields: Vec<FieldName> = decl
        .fields
        .iter()
        .filter(|f| used.contains(*f))
        .cloned()
        .collect();
    let new_name = p.fresh_name(&[&format!("{}_h", decl.name), &format!("{}h", decl.name)]);
    let retarget = |n: &mut String| {
        if *n == decl.name {
            *n = new_name.clone();
        }
    };
    fn walk(stmts: &mut [Stmt], f: &dyn Fn(&mut String)) {
        for s in stmts {
            if let Stmt::Forelem { domain, .. } = s {
                match domain {
                    Domain::Reservoir { name, .. } => f(name),
                    Domain::FieldValues { reservoir, .. } => f(reservoir),
                    _ => {}
                }
            }
            if let Some(b) = s.body_mut() {
                walk(b, f);
            }
        }
    }
    walk(&mut p.body, &retarget);
    for s in &mut p.body {
        s.rewrite_exprs(&mut |e| match e {
            Expr::FieldExtent { reservoir, field } if reservoir == decl.name => Expr::FieldExtent {
                reservoir: new_name.clone(),
                field,
            },
            other => other,
        });
    }
    for st in &mut p.storages {
        retarget(&mut st.source);
    }
    p.reservoirs.push(ReservoirDecl {
        name: new_name.clone(),
        fields,
        origin: ReservoirOrigin::Projection { source: decl.name },
    });
    Ok(())
}

/// Finds the loop (path) whose iterator is `var`.
fn loop_of(p: &Program, var: &str) -> Option<Path> {
    collect_loops(&p.body)
        .into_iter()
        .map(|l| l.path)
        .find(|path| stmt_at(&p.body, path).loop_var() == Some(var))
}

fn nstar_sort(p: &mut Program, index: usize) -> Result<(), TransformError> {
    let st = p.storages[index].clone();
    let level = &st.levels[0];
    let Some(path) = loop_of(p, &level.iterator) else {
        return refuse("level iterator has no loop");
    };
    let Stmt::Forelem { domain, .. } = stmt_at_mut(&mut p.body, &path) else {
        return refuse(format!("`{}` is an ordered loop; its order cannot be permuted", level.iterator));
    };
    let Domain::Range { extent } = domain.clone() else {
        return refuse(format!("loop over `{}` is not an encapsulated range", level.iterator));
    };
    if level.lo != Expr::Int(0) || level.hi != extent {
        return refuse("storage level does not span the loop range");
    }
    *domain = Domain::Permuted {
        storage: st.name.clone(),
        extent,
    };
    p.storages[index].perm = true;
    Ok(())
}

fn dim_reduce(p: &mut Program, index: usize) -> Result<(), TransformError> {
    let st = &mut p.storages[index];
    if st.padded() {
        return refuse("padded storage cannot be stored back-to-back");
    }
    st.len = None;
    st.offsets = true;
    Ok(())
}

fn loop_collapse(p: &mut Program, path: &Path) -> Result<(), TransformError> {
    let Stmt::Forelem {
        var: t,
        domain: Domain::Reservoir { name: left, cond },
        body,
    } = stmt_at(&p.body, path).clone()
    else {
        unreachable!()
    };
    let shape_err = || refuse("inner loop is not an equi-join on an outer tuple field");
    if body.len() != 1 {
        return shape_err();
    }
    let Stmt::Forelem {
        var: r,
        domain:
            Domain::Reservoir {
                name: right,
                cond: Some(rc),
            },
        body: inner,
    } = body[0].clone()
    else {
        return shape_err();
    };
    let (right_field, left_field) = match (rc.fields.as_slice(), rc.values.as_slice()) {
        ([rf], [CondValue::Expr(Expr::Field { var, field })]) if *var == t => {
            (rf.clone(), field.clone())
        }
        _ => return shape_err(),
    };
    let ldecl = p.reservoir(&left).expect("declared").clone();
    let rdecl = p.reservoir(&right).expect("declared").clone();
    let schema = joined_schema(&ldecl.fields, &rdecl.fields, &right);
    let rename: Vec<(FieldName, FieldName)> = rdecl
        .fields
        .iter()
        .cloned()
        .zip(schema[ldecl.fields.len()..].iter().cloned())
        .collect();
    let joined = p.fresh_name(&[&format!("{left}x{right}")]);
    let mut inner = inner;
    rename_in_body(&mut inner, &mut |e| match e {
        Expr::Field { var, field } if var == r => Expr::Field {
            var: t.clone(),
            field: rename
                .iter()
                .find(|(a, _)| *a == field)
                .map(|(_, b)| b.clone())
                .expect("right field"),
        },
        Expr::Data { binding, tuple } if tuple == r => Expr::Data {
            binding,
            tuple: t.clone(),
        },
        other => other,
    });
    let mut leftover = false;
    for s in &inner {
        s.visit_exprs(&mut |e| leftover |= e.mentions(&r));
    }
    if leftover {
        return refuse(format!("`{r}` is used outside field and data reads"));
    }
    p.reservoirs.push(ReservoirDecl {
        name: joined.clone(),
        fields: schema,
        origin: ReservoirOrigin::Join {
            left,
            right,
            left_field,
            right_field,
        },
    });
    *stmt_at_mut(&mut p.body, path) = Stmt::Forelem {
        var: t,
        domain: Domain::Reservoir { name: joined, cond },
        body: inner,
    };
    Ok(())
}

/// Dense arrays written with an index mentioning `var` that are also read at
/// a different index: a possible loop-carried dependence.
fn carried_dependence(body: &[Stmt], var: &str) -> bool {
    let mut writes: Vec<(String, Vec<Expr>)> = Vec::new();
    let mut reads: Vec<(String, Vec<Expr>)> = Vec::new();
    fn scan(stmts: &[Stmt], writes: &mut Vec<(String, Vec<Expr>)>, reads: &mut Vec<(String, Vec<Expr>)>) {
        for s in stmts {
            match s {
                Stmt::Assign { target, value, .. } => {
                    if let Expr::Index { array, indices } = target {
                        writes.push((array.clone(), indices.clone()));
                        for i in indices {
                            i.walk(&mut |e| {
                                if let Expr::Index { array, indices } = e {
                                    reads.push((array.clone(), indices.clone()));
                                }
                            });
                        }
                    }
                    value.walk(&mut |e| {
                        if let Expr::Index { array, indices } = e {
                            reads.push((array.clone(), indices.clone()));
                        }
                    });
                }
                other => {
                    if let Some(b) = other.body() {
                        scan(b, writes, reads);
                    }
                }
            }
        }
    }
    scan(body, &mut writes, &mut reads);
    writes.iter().any(|(a, idx)| {
        idx.iter().any(|e| e.mentions(var))
            && reads.iter().any(|(ra, ridx)| ra == a && ridx != idx)
    })
}

fn loop_interchange(p: &mut Program, path: &Path) -> Result<(), TransformError> {
    let outer = stmt_at(&p.body, path).clone();
    let inner = outer.body().expect("loop")[0].clone();
    let outer_var = outer.loop_var().expect("loop").to_string();
    let inner_var = inner.loop_var().expect("loop").to_string();

    // materialized group loop nested in its key loop: position-major traversal
    if let (
        Stmt::Forelem {
            domain: od @ (Domain::Range { .. } | Domain::Permuted { .. }),
            ..
        },
        Stmt::Forelem {
            domain: Domain::Group { storage, key },
            body,
            ..
        },
    ) = (&outer, &inner)
    {
        if key.as_slice() == [outer_var.clone()] {
            let st = p.storage(storage).expect("validated").clone();
            if st.len.is_some() || st.offsets {
                return refuse("group lengths already made explicit; interchange first");
            }
            if st.levels[0].block.is_some() {
                return refuse("blocked level cannot be traversed position-major");
            }
            if let Domain::Range { extent } = od {
                if st.levels[0].lo != Expr::Int(0) || st.levels[0].hi != *extent {
                    return refuse("storage level does not span the loop range");
                }
            }
            p.storage_mut(storage).expect("storage").position_major = true;
            *stmt_at_mut(&mut p.body, path) = Stmt::Forelem {
                var: inner_var.clone(),
                domain: Domain::Positions {
                    storage: storage.clone(),
                },
                body: vec![Stmt::Forelem {
                    var: outer_var,
                    domain: Domain::GroupsAt {
                        storage: storage.clone(),
                        position: inner_var,
                        base: Box::new(od.clone()),
                    },
                    body: body.clone(),
                }],
            };
            return Ok(());
        }
    }
    // and back
    if let (
        Stmt::Forelem {
            domain: Domain::Positions { storage },
            ..
        },
        Stmt::Forelem {
            domain: Domain::GroupsAt { base, .. },
            body,
            ..
        },
    ) = (&outer, &inner)
    {
        let st = p.storage(storage).expect("validated").clone();
        if st.len.is_some() || st.offsets {
            return refuse("group lengths already made explicit");
        }
        p.storage_mut(storage).expect("storage").position_major = false;
        *stmt_at_mut(&mut p.body, path) = Stmt::Forelem {
            var: inner_var.clone(),
            domain: (**base).clone(),
            body: vec![Stmt::Forelem {
                var: outer_var,
                domain: Domain::Group {
                    storage: storage.clone(),
                    key: vec![inner_var],
                },
                body: body.clone(),
            }],
        };
        return Ok(());
    }

    let depends = match &inner {
        Stmt::For { lo, hi, .. } => lo.mentions(&outer_var) || hi.mentions(&outer_var),
        Stmt::Forelem { domain, .. } => domain.mentions(&outer_var),
        _ => unreachable!(),
    };
    if depends {
        return refuse(format!("bounds of `{inner_var}` depend on `{outer_var}`"));
    }
    for s in [&outer, &inner] {
        if let Stmt::Forelem {
            domain: Domain::Positions { .. } | Domain::GroupsAt { .. },
            ..
        } = s
        {
            return refuse("position-major loops only interchange as a pair");
        }
    }
    let body = inner.body().expect("loop");
    for (s, v) in [(&outer, &outer_var), (&inner, &inner_var)] {
        if matches!(s, Stmt::For { .. }) && carried_dependence(body, v) {
            return refuse(format!("ordered loop `{v}` carries a dependence"));
        }
    }
    let mut new_inner = outer.clone();
    *new_inner.body_mut().expect("loop") = body.clone();
    let mut new_outer = inner.clone();
    *new_outer.body_mut().expect("loop") = vec![new_inner];
    *stmt_at_mut(&mut p.body, path) = new_outer;
    Ok(())
}

fn loop_block(p: &mut Program, path: &Path, size: u32) -> Result<(), TransformError> {
    if size == 0 {
        return refuse("block size must be at least 1");
    }
    let Stmt::Forelem {
        var,
        domain: Domain::Range { extent },
        body,
    } = stmt_at(&p.body, path).clone()
    else {
        unreachable!()
    };
    let outer = p.fresh_name(&[&format!("{var}{var}"), &format!("{var}b")]);
    let keyed: Vec<usize> = p
        .storages
        .iter()
        .enumerate()
        .filter(|(_, s)| s.levels.iter().any(|l| l.iterator == var))
        .map(|(n, _)| n)
        .collect();
    let perfect_group = match body.as_slice() {
        [Stmt::Forelem {
            domain: Domain::Group { storage, key },
            ..
        }] if key.as_slice() == [var.clone()] => p
            .storage(storage)
            .filter(|s| !s.position_major && !s.perm && s.levels.len() == 1)
            .map(|s| s.name.clone()),
        _ => None,
    };
    let (blocks_extent, compressed) = match &perfect_group {
        Some(s) if keyed.len() == 1 => (
            Expr::NonEmpty { storage: s.clone() },
            Some(s.clone()),
        ),
        _ => (extent.clone(), None),
    };
    for n in keyed {
        for l in &mut p.storages[n].levels {
            if l.iterator == var {
                if l.block.is_some() {
                    return refuse(format!("`{var}` is already blocked"));
                }
                l.block = Some(size);
                l.compressed = compressed.is_some();
            }
        }
    }
    *stmt_at_mut(&mut p.body, path) = Stmt::Forelem {
        var: outer.clone(),
        domain: Domain::Blocks {
            extent: blocks_extent.clone(),
            size,
        },
        body: vec![Stmt::Forelem {
            var,
            domain: Domain::Block {
                outer,
                extent: blocks_extent,
                size,
                compressed,
            },
            body,
        }],
    };
    Ok(())
}
