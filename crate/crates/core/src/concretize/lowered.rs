//! Lowered loop nests: ordered loops over physical arrays only.

use std::fmt::{self, Write};

use crate::ir::{AssignOp, BinOp};

/// Integer expression: loop counters, parameters and index-array loads.
#[derive(Clone, Debug, PartialEq)]
pub enum IExpr {
    Const(i64),
    Var(String),
    Load { array: String, index: Box<IExpr> },
    Bin { op: BinOp, lhs: Box<IExpr>, rhs: Box<IExpr> },
}

impl IExpr {
    pub fn var(name: impl Into<String>) -> IExpr {
        IExpr::Var(name.into())
    }

    pub fn load(array: impl Into<String>, index: IExpr) -> IExpr {
        IExpr::Load {
            array: array.into(),
            index: Box::new(index),
        }
    }

    pub fn bin(op: BinOp, lhs: IExpr, rhs: IExpr) -> IExpr {
        match (op, &lhs, &rhs) {
            (BinOp::Add, IExpr::Const(0), _) => rhs,
            (BinOp::Add | BinOp::Sub, _, IExpr::Const(0)) => lhs,
            (BinOp::Mul, IExpr::Const(1), _) => rhs,
            (BinOp::Mul, _, IExpr::Const(1)) => lhs,
            (BinOp::Mul, IExpr::Const(0), _) | (BinOp::Mul, _, IExpr::Const(0)) => IExpr::Const(0),
            (_, IExpr::Const(a), IExpr::Const(b)) => IExpr::Const(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div if *b != 0 => a.div_euclid(*b),
                BinOp::Min => *a.min(b),
                BinOp::Div => {
                    return IExpr::Bin {
                        op,
                        lhs: Box::new(lhs),
                        rhs: Box::new(rhs),
                    }
                }
            }),
            _ => IExpr::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            },
        }
    }

    pub fn add(a: IExpr, b: IExpr) -> IExpr {
        IExpr::bin(BinOp::Add, a, b)
    }

    pub fn sub(a: IExpr, b: IExpr) -> IExpr {
        IExpr::bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: IExpr, b: IExpr) -> IExpr {
        IExpr::bin(BinOp::Mul, a, b)
    }
}

/// Floating-point expression.
#[derive(Clone, Debug, PartialEq)]
pub enum RExpr {
    Const(f64),
    Scalar(String),
    Load { array: String, index: IExpr },
    FromInt(IExpr),
    Neg(Box<RExpr>),
    Bin { op: BinOp, lhs: Box<RExpr>, rhs: Box<RExpr> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum LTarget {
    Scalar(String),
    Array { array: String, index: IExpr },
}

#[derive(Clone, Debug, PartialEq)]
pub enum LStmt {
    /// `for var in [lo, hi)`, ascending unless `descending`.
    Loop {
        var: String,
        lo: IExpr,
        hi: IExpr,
        descending: bool,
        body: Vec<LStmt>,
    },
    Let { var: String, value: IExpr },
    Store { target: LTarget, op: AssignOp, value: RExpr },
}

/// A dense operand of the lowered program, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LDense {
    pub name: String,
    pub dims: Vec<IExpr>,
}

/// Parameter bound to `max(reservoir.field) + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtentParam {
    pub name: String,
    pub reservoir: String,
    pub field: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LoweredProgram {
    pub dense: Vec<LDense>,
    pub extents: Vec<ExtentParam>,
    pub scalars: Vec<String>,
    pub body: Vec<LStmt>,
}

fn prec(op: BinOp) -> u8 {
    op.precedence()
}

fn write_i(out: &mut String, e: &IExpr, parent: u8) {
    match e {
        IExpr::Const(v) => {
            let _ = write!(out, "{v}");
        }
        IExpr::Var(v) => out.push_str(v),
        IExpr::Load { array, index } => {
            let _ = write!(out, "{array}[");
            write_i(out, index, 0);
            out.push(']');
        }
        IExpr::Bin {
            op: BinOp::Min,
            lhs,
            rhs,
        } => {
            out.push_str("min(");
            write_i(out, lhs, 0);
            out.push_str(", ");
            write_i(out, rhs, 0);
            out.push(')');
        }
        IExpr::Bin { op, lhs, rhs } => {
            let p = prec(*op);
            if p < parent {
                out.push('(');
            }
            write_i(out, lhs, p);
            let _ = write!(out, " {} ", op.symbol());
            write_i(out, rhs, p + 1);
            if p < parent {
                out.push(')');
            }
        }
    }
}

fn write_r(out: &mut String, e: &RExpr, parent: u8) {
    match e {
        RExpr::Const(v) => {
            let _ = write!(out, "{v:?}");
        }
        RExpr::Scalar(v) => out.push_str(v),
        RExpr::Load { array, index } => {
            let _ = write!(out, "{array}[");
            write_i(out, index, 0);
            out.push(']');
        }
        RExpr::FromInt(i) => write_i(out, i, parent),
        RExpr::Neg(x) => {
            out.push('-');
            write_r(out, x, 4);
        }
        RExpr::Bin {
            op: BinOp::Min,
            lhs,
            rhs,
        } => {
            out.push_str("min(");
            write_r(out, lhs, 0);
            out.push_str(", ");
            write_r(out, rhs, 0);
            out.push(')');
        }
        RExpr::Bin { op, lhs, rhs } => {
            let p = prec(*op);
            if p < parent {
                out.push('(');
            }
            write_r(out, lhs, p);
            let _ = write!(out, " {} ", op.symbol());
            write_r(out, rhs, p + 1);
            if p < parent {
                out.push(')');
            }
        }
    }
}

pub fn print_iexpr(e: &IExpr) -> String {
    let mut s = String::new();
    write_i(&mut s, e, 0);
    s
}

fn write_stmts(out: &mut String, body: &[LStmt], depth: usize) {
    for s in body {
        let pad = "  ".repeat(depth);
        match s {
            LStmt::Loop {
                var,
                lo,
                hi,
                descending,
                body,
            } => {
                let (lo, hi) = (print_iexpr(lo), print_iexpr(hi));
                if *descending {
                    let _ = writeln!(out, "{pad}for ({var} = {hi} - 1; {var} >= {lo}; {var}--) {{");
                } else {
                    let _ = writeln!(out, "{pad}for ({var} = {lo}; {var} < {hi}; {var}++) {{");
                }
                write_stmts(out, body, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
            LStmt::Let { var, value } => {
                let _ = writeln!(out, "{pad}{var} = {};", print_iexpr(value));
            }
            LStmt::Store { target, op, value } => {
                out.push_str(&pad);
                match target {
                    LTarget::Scalar(v) => out.push_str(v),
                    LTarget::Array { array, index } => {
                        let _ = write!(out, "{array}[{}]", print_iexpr(index));
                    }
                }
                let _ = write!(out, " {} ", op.symbol());
                write_r(out, value, 0);
                out.push_str(";\n");
            }
        }
    }
}

impl fmt::Display for LoweredProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_stmts(&mut out, &self.body, 0);
        f.write_str(&out)
    }
}
