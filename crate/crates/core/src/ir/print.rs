//! Pretty printer. Programs built from DSL text print back to text that
//! reparses to the same AST; materialized forms print in a readable
//! pseudo-syntax.

use std::fmt::{self, Write};

use super::ast::*;
use crate::transform::{LenMode, MaterializedStorage, RecordSource};

pub fn print_program(p: &Program) -> String {
    let mut pr = Printer {
        program: Some(p),
        out: String::new(),
    };
    pr.program(p);
    pr.out
}

/// Prints an expression without storage context.
pub fn print_expr(e: &Expr) -> String {
    let mut pr = Printer {
        program: None,
        out: String::new(),
    };
    pr.expr(e);
    pr.out
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_program(self))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expr(self))
    }
}

struct Printer<'a> {
    program: Option<&'a Program>,
    out: String,
}

impl Printer<'_> {
    fn storage(&self, name: &str) -> Option<&MaterializedStorage> {
        self.program.and_then(|p| p.storage(name))
    }

    fn program(&mut self, p: &Program) {
        for r in &p.reservoirs {
            let fields = join(r.fields.iter().map(|f| f.to_string()));
            let _ = match &r.origin {
                ReservoirOrigin::Input => writeln!(self.out, "reservoir {}({fields});", r.name),
                ReservoirOrigin::Projection { source } => {
                    writeln!(self.out, "reservoir {}({fields}) = project({source});", r.name)
                }
                ReservoirOrigin::Join {
                    left,
                    right,
                    left_field,
                    right_field,
                } => writeln!(
                    self.out,
                    "reservoir {}({fields}) = join({left}, {right}, {left_field}, {right_field});",
                    r.name
                ),
            };
        }
        for d in &p.data {
            let _ = writeln!(self.out, "data {}({});", d.name, d.reservoir);
        }
        for d in &p.dense {
            let dims = join(d.dims.iter().map(print_expr));
            let _ = writeln!(self.out, "dense {}[{dims}];", d.name);
        }
        for v in &p.params {
            let _ = writeln!(self.out, "param {v};");
        }
        for s in &p.storages {
            let _ = writeln!(self.out, "# {}", describe_storage(s));
        }
        for s in &p.body {
            self.stmt(s, 0);
        }
    }

    fn indent(&mut self, depth: usize) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
    }

    fn block(&mut self, body: &[Stmt], depth: usize) {
        self.out.push_str(" {\n");
        for s in body {
            self.stmt(s, depth + 1);
        }
        self.indent(depth);
        self.out.push_str("}\n");
    }

    fn stmt(&mut self, s: &Stmt, depth: usize) {
        self.indent(depth);
        match s {
            Stmt::For {
                var,
                lo,
                hi,
                descending,
                body,
            } => {
                let first = lo.clone().increment();
                if *descending {
                    let _ = write!(self.out, "for ({var} = ");
                    self.expr(hi);
                    self.out.push_str(" downto ");
                    self.expr(&first);
                } else {
                    let _ = write!(self.out, "for ({var} = ");
                    self.expr(&first);
                    self.out.push_str(" .. ");
                    self.expr(hi);
                }
                self.out.push(')');
                self.block(body, depth);
            }
            Stmt::Forelem { var, domain, body } => {
                let _ = write!(self.out, "forelem ({var}; {var} in ");
                self.domain(domain);
                self.out.push(')');
                self.block(body, depth);
            }
            Stmt::Assign { target, op, value } => {
                self.expr(target);
                let _ = write!(self.out, " {} ", op.symbol());
                self.expr(value);
                self.out.push_str(";\n");
            }
            Stmt::If { cond, body } => {
                self.out.push_str("if (");
                self.expr(cond);
                self.out.push(')');
                self.block(body, depth);
            }
            Stmt::Insert { reservoir, values } => {
                let _ = write!(self.out, "{reservoir} = {reservoir} ∪ (");
                self.list(values);
                self.out.push_str(");\n");
            }
        }
    }

    fn list(&mut self, items: &[Expr]) {
        for (n, e) in items.iter().enumerate() {
            if n > 0 {
                self.out.push_str(", ");
            }
            self.expr(e);
        }
    }

    fn cond_value(&mut self, v: &CondValue) {
        match v {
            CondValue::Expr(e) => self.expr(e),
            CondValue::Interval { lo, hi } => {
                self.out.push('(');
                self.expr(lo);
                self.out.push_str(", ");
                match hi {
                    Some(h) => self.expr(h),
                    None => self.out.push_str("inf"),
                }
                self.out.push(')');
            }
        }
    }

    fn domain(&mut self, d: &Domain) {
        match d {
            Domain::Reservoir { name, cond: None } => self.out.push_str(name),
            Domain::Reservoir {
                name,
                cond: Some(c),
            } => {
                self.out.push_str(name);
                self.out.push('.');
                if c.fields.len() == 1 {
                    self.out.push_str(c.fields[0].as_str());
                    self.out.push('[');
                    self.cond_value(&c.values[0]);
                    self.out.push(']');
                } else {
                    let _ = write!(
                        self.out,
                        "({})[(",
                        join(c.fields.iter().map(|f| f.to_string()))
                    );
                    for (n, v) in c.values.iter().enumerate() {
                        if n > 0 {
                            self.out.push_str(", ");
                        }
                        self.cond_value(v);
                    }
                    self.out.push_str(")]");
                }
            }
            Domain::FieldValues { reservoir, field } => {
                let _ = write!(self.out, "{reservoir}.{field}");
            }
            Domain::Range { extent } => {
                self.out.push_str("nat(");
                self.expr(extent);
                self.out.push(')');
            }
            Domain::Span { lo, hi } => {
                self.out.push_str("span(");
                self.expr(lo);
                self.out.push_str(", ");
                self.expr(hi);
                self.out.push(')');
            }
            Domain::Blocks { extent, size } => {
                self.out.push_str("blocks(");
                self.expr(extent);
                let _ = write!(self.out, ", {size})");
            }
            Domain::Block {
                outer,
                extent,
                size,
                compressed,
            } => {
                let _ = write!(self.out, "block({outer}, ");
                self.expr(extent);
                let _ = write!(self.out, ", {size})");
                if let Some(s) = compressed {
                    let _ = write!(self.out, " of {s}_nz");
                }
            }
            Domain::Group { storage, key } => self.group(storage, key),
            Domain::Permuted { storage, extent } => {
                let _ = write!(self.out, "{storage}_perm(nat(");
                self.expr(extent);
                self.out.push_str("))");
            }
            Domain::Positions { storage } => {
                let _ = write!(self.out, "positions({storage})");
            }
            Domain::GroupsAt {
                storage,
                position,
                base,
            } => {
                let _ = write!(self.out, "groups_at({storage}, {position}, ");
                self.domain(base);
                self.out.push(')');
            }
        }
    }

    fn group(&mut self, storage: &str, key: &[String]) {
        let sub: String = key.iter().map(|k| format!("[{k}]")).collect();
        let Some(st) = self.storage(storage) else {
            let _ = write!(self.out, "N*({storage}{sub})");
            return;
        };
        if st.offsets {
            let q = key.last().cloned().unwrap_or_else(|| "0".into());
            let next = if key.is_empty() {
                "1".to_string()
            } else {
                format!("{q} + 1")
            };
            let _ = write!(self.out, "span({storage}_ptr[{q}], {storage}_ptr[{next}])");
            return;
        }
        match st.len {
            None => {
                let _ = write!(self.out, "N*({storage}{sub})");
            }
            Some(LenMode::Padded) => {
                let _ = write!(self.out, "nat({storage}_W)");
            }
            Some(LenMode::Compact) => {
                let _ = write!(self.out, "nat({storage}_len{sub})");
            }
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Int(v) => {
                let _ = write!(self.out, "{v}");
            }
            Expr::Real(v) => {
                let _ = write!(self.out, "{v:?}");
            }
            Expr::Var(v) => self.out.push_str(v),
            Expr::Field { var, field } => {
                let _ = write!(self.out, "{var}.{field}");
            }
            Expr::Data { binding, tuple } => {
                let _ = write!(self.out, "{binding}[{tuple}]");
            }
            Expr::Index { array, indices } => {
                self.out.push_str(array);
                self.out.push('[');
                self.list(indices);
                self.out.push(']');
            }
            Expr::Leaf {
                storage,
                path,
                field,
            } => {
                let (split, reduced) = self
                    .storage(storage)
                    .map(|s| (s.split, s.offsets))
                    .unwrap_or((false, false));
                let shown: &[String] = if reduced && !path.is_empty() {
                    &path[path.len() - 1..]
                } else {
                    path
                };
                let sub: String = shown.iter().map(|k| format!("[{k}]")).collect();
                if split {
                    let _ = write!(self.out, "{storage}.{field}{sub}");
                } else {
                    let _ = write!(self.out, "{storage}{sub}.{field}");
                }
            }
            Expr::FieldExtent { reservoir, field } => {
                let _ = write!(self.out, "extent({reservoir}.{field})");
            }
            Expr::NonEmpty { storage } => {
                let _ = write!(self.out, "nonempty({storage})");
            }
            Expr::Call { func, args } => {
                let _ = write!(self.out, "{func}(");
                self.list(args);
                self.out.push(')');
            }
            Expr::Neg(x) => {
                self.out.push('-');
                let wrap = matches!(
                    **x,
                    Expr::Int(_) | Expr::Real(_) | Expr::Neg(_)
                ) || matches!(**x, Expr::Binary { op, .. } if op != BinOp::Min);
                self.maybe_paren(x, wrap);
            }
            Expr::Binary {
                op: BinOp::Min,
                lhs,
                rhs,
            } => {
                self.out.push_str("min(");
                self.expr(lhs);
                self.out.push_str(", ");
                self.expr(rhs);
                self.out.push(')');
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                let lp = binary_precedence(lhs).is_some_and(|lp| lp < p);
                self.maybe_paren(lhs, lp);
                let _ = write!(self.out, " {} ", op.symbol());
                let rp = binary_precedence(rhs).is_some_and(|rp| rp <= p);
                self.maybe_paren(rhs, rp);
            }
        }
    }

    fn maybe_paren(&mut self, e: &Expr, wrap: bool) {
        if wrap {
            self.out.push('(');
        }
        self.expr(e);
        if wrap {
            self.out.push(')');
        }
    }
}

fn binary_precedence(e: &Expr) -> Option<u8> {
    match e {
        Expr::Binary { op, .. } if *op != BinOp::Min => Some(op.precedence()),
        _ => None,
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(", ")
}

/// One-line summary of a storage plan, used in program dumps.
pub fn describe_storage(s: &MaterializedStorage) -> String {
    let mut out = format!("storage {} from {}", s.name, s.source);
    if !s.filter.is_empty() {
        let f: Vec<String> = s
            .filter
            .iter()
            .map(|(f, v)| match v {
                CondValue::Expr(e) => format!("{f}={}", print_expr(e)),
                CondValue::Interval { lo, hi } => format!(
                    "{f} in ({}, {})",
                    print_expr(lo),
                    hi.as_ref().map(print_expr).unwrap_or_else(|| "inf".into())
                ),
            })
            .collect();
        let _ = write!(out, " where {}", f.join(", "));
    }
    let levels: Vec<String> = s
        .levels
        .iter()
        .map(|l| {
            let mut t = format!(
                "{}: {} in [{}, {})",
                l.iterator,
                join(l.fields.iter().map(|f| f.to_string())),
                print_expr(&l.lo),
                print_expr(&l.hi)
            );
            if let Some(b) = l.block {
                let _ = write!(t, " blocked {b}");
                if l.compressed {
                    t.push_str(" compressed");
                }
            }
            t
        })
        .collect();
    let record: Vec<String> = s
        .record
        .iter()
        .map(|r| match &r.source {
            RecordSource::Field(f) if f.as_str() == r.name => r.name.clone(),
            RecordSource::Field(f) => format!("{}={f}", r.name),
            RecordSource::Data(b) => format!("{}={b}", r.name),
        })
        .collect();
    let _ = write!(
        out,
        "; levels [{}]; record ({})",
        levels.join("; "),
        record.join(", ")
    );
    let flags: Vec<&str> = [
        (s.split, "split"),
        (s.len == Some(LenMode::Padded), "padded"),
        (s.len == Some(LenMode::Compact), "compact"),
        (s.offsets, "offsets"),
        (s.perm, "perm"),
        (s.position_major, "position-major"),
    ]
    .iter()
    .filter(|(on, _)| *on)
    .map(|(_, n)| *n)
    .collect();
    if !flags.is_empty() {
        let _ = write!(out, "; {}", flags.join(", "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    #[test]
    fn expression_parentheses_follow_structure() {
        let e = Expr::sub(
            Expr::var("a"),
            Expr::sub(Expr::var("b"), Expr::var("c")),
        );
        assert_eq!(print_expr(&e), "a - (b - c)");
        let e = Expr::mul(Expr::add(Expr::var("a"), Expr::Int(1)), Expr::var("b"));
        assert_eq!(print_expr(&e), "(a + 1) * b");
        assert_eq!(print_expr(&Expr::Neg(Box::new(Expr::Int(2)))), "-(2)");
    }

    #[test]
    fn loops_print_one_based() {
        let src = "dense x[N];\nfor (i = N downto 1) {\n  x[i] = 1;\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(print_program(&p), src);
    }
}
