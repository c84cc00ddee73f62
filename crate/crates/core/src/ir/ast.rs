//! Abstract syntax of forelem programs.
//!
//! A [`Program`] is the unit every transformation rewrites. It holds the
//! declarations (tuple reservoirs, address functions, dense operands), an
//! ordered statement list and the storage plans attached by materialization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::transform::MaterializedStorage;

/// Name of an integer field of a tuple reservoir.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldName(String);

impl FieldName {
    pub fn new(name: impl Into<String>) -> Self {
        FieldName(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FieldName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FieldName {
    fn from(s: &str) -> Self {
        FieldName(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Min => "min",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Min => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Int(i64),
    Real(f64),
    /// Loop iterator, scalar temporary, size parameter or block parameter.
    Var(String),
    /// `t.field` on a tuple variable.
    Field { var: String, field: FieldName },
    /// `A[t]`: address function applied to a tuple variable.
    Data { binding: String, tuple: String },
    /// Dense operand subscript, `C[i]` or `B[t.col, j]`.
    Index { array: String, indices: Vec<Expr> },
    /// Field of a materialized leaf record, `PA[i][k].value`.
    Leaf {
        storage: String,
        path: Vec<String>,
        field: String,
    },
    /// `max(T.field) + 1`, the bound produced by encapsulation.
    FieldExtent { reservoir: String, field: FieldName },
    /// Number of nonempty groups of a materialized storage.
    NonEmpty { storage: String },
    /// Opaque call; accepted by the parser, never executed.
    Call { func: String, args: Vec<Expr> },
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn field(var: impl Into<String>, field: &str) -> Expr {
        Expr::Field {
            var: var.into(),
            field: FieldName::new(field),
        }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn add(lhs: Expr, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Add, lhs, rhs)
    }

    pub fn sub(lhs: Expr, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Sub, lhs, rhs)
    }

    pub fn mul(lhs: Expr, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Mul, lhs, rhs)
    }

    pub fn min(lhs: Expr, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Min, lhs, rhs)
    }

    /// `self - 1`, folding constants and undoing a trailing `+ 1`.
    pub fn decrement(self) -> Expr {
        match self {
            Expr::Int(v) => Expr::Int(v - 1),
            Expr::Binary {
                op: BinOp::Add,
                lhs,
                rhs,
            } if *rhs == Expr::Int(1) => *lhs,
            other => Expr::sub(other, Expr::Int(1)),
        }
    }

    /// `self + 1`, folding constants and undoing a trailing `- 1`.
    pub fn increment(self) -> Expr {
        match self {
            Expr::Int(v) => Expr::Int(v + 1),
            Expr::Binary {
                op: BinOp::Sub,
                lhs,
                rhs,
            } if *rhs == Expr::Int(1) => *lhs,
            other => Expr::add(other, Expr::Int(1)),
        }
    }

    /// Visits this expression and every subexpression, pre-order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Index { indices, .. } => indices.iter().for_each(|e| e.walk(f)),
            Expr::Call { args, .. } => args.iter().for_each(|e| e.walk(f)),
            Expr::Neg(e) => e.walk(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            _ => {}
        }
    }

    /// Rebuilds the expression bottom-up, giving `f` the chance to replace
    /// each node after its children were rewritten.
    pub fn rewrite(self, f: &mut dyn FnMut(Expr) -> Expr) -> Expr {
        let rebuilt = match self {
            Expr::Index { array, indices } => Expr::Index {
                array,
                indices: indices.into_iter().map(|e| e.rewrite(f)).collect(),
            },
            Expr::Call { func, args } => Expr::Call {
                func,
                args: args.into_iter().map(|e| e.rewrite(f)).collect(),
            },
            Expr::Neg(e) => Expr::Neg(Box::new(e.rewrite(f))),
            Expr::Binary { op, lhs, rhs } => Expr::Binary {
                op,
                lhs: Box::new(lhs.rewrite(f)),
                rhs: Box::new(rhs.rewrite(f)),
            },
            other => other,
        };
        f(rebuilt)
    }

    /// True when `var` occurs free in the expression in any role.
    pub fn mentions(&self, var: &str) -> bool {
        let mut found = false;
        self.walk(&mut |e| match e {
            Expr::Var(v) if v == var => found = true,
            Expr::Field { var: v, .. } if v == var => found = true,
            Expr::Data { tuple, .. } if tuple == var => found = true,
            Expr::Leaf { path, .. } if path.iter().any(|p| p == var) => found = true,
            _ => {}
        });
        found
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Set => "=",
            AssignOp::Add => "+=",
            AssignOp::Sub => "-=",
        }
    }
}

/// Right-hand side of one `field = value` pair of a reservoir condition.
#[derive(Clone, Debug, PartialEq)]
pub enum CondValue {
    Expr(Expr),
    /// Open interval `(lo, hi)`; `hi == None` is `(lo, inf)`.
    Interval { lo: Expr, hi: Option<Expr> },
}

impl CondValue {
    pub fn mentions(&self, var: &str) -> bool {
        match self {
            CondValue::Expr(e) => e.mentions(var),
            CondValue::Interval { lo, hi } => {
                lo.mentions(var) || hi.as_ref().is_some_and(|h| h.mentions(var))
            }
        }
    }
}

/// `T.(f1, f2)[(v1, v2)]`: selects tuples whose fields equal the values.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub fields: Vec<FieldName>,
    pub values: Vec<CondValue>,
}

impl Condition {
    pub fn single(field: &str, value: Expr) -> Self {
        Condition {
            fields: vec![FieldName::new(field)],
            values: vec![CondValue::Expr(value)],
        }
    }

    pub fn binds(&self, field: &FieldName) -> bool {
        self.fields.contains(field)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// A (subset of a) tuple reservoir.
    Reservoir {
        name: String,
        cond: Option<Condition>,
    },
    /// All values of one field of a reservoir, `T.field1`.
    FieldValues { reservoir: String, field: FieldName },
    /// Encapsulated `[0, extent)`.
    Range { extent: Expr },
    /// Half-open `[lo, hi)`, the domain of one block of a hybrid layout.
    Span { lo: Expr, hi: Expr },
    /// Block counter `[0, ceil(extent / size))`.
    Blocks { extent: Expr, size: u32 },
    /// Members of block `outer`: `[outer*size, min((outer+1)*size, extent))`.
    /// With `compressed`, the members are positions in the list of nonempty
    /// groups of that storage and the iterator takes the group key.
    Block {
        outer: String,
        extent: Expr,
        size: u32,
        compressed: Option<String>,
    },
    /// Positions of one materialized group, `PA[key...]`.
    Group { storage: String, key: Vec<String> },
    /// `perm(N_m)`: group keys in nonincreasing length order.
    Permuted { storage: String, extent: Expr },
    /// Leaf positions, outer loop of a position-major traversal.
    Positions { storage: String },
    /// Group keys of `base` that have a leaf at `position`.
    GroupsAt {
        storage: String,
        position: String,
        base: Box<Domain>,
    },
}

impl Domain {
    /// True when the domain refers to the iterator `var`.
    pub fn mentions(&self, var: &str) -> bool {
        match self {
            Domain::Reservoir { cond, .. } => cond
                .as_ref()
                .is_some_and(|c| c.values.iter().any(|v| v.mentions(var))),
            Domain::FieldValues { .. } | Domain::Positions { .. } => false,
            Domain::Range { extent } | Domain::Blocks { extent, .. } => extent.mentions(var),
            Domain::Permuted { extent, .. } => extent.mentions(var),
            Domain::Span { lo, hi } => lo.mentions(var) || hi.mentions(var),
            Domain::Block { outer, extent, .. } => outer == var || extent.mentions(var),
            Domain::Group { key, .. } => key.iter().any(|k| k == var),
            Domain::GroupsAt { position, base, .. } => position == var || base.mentions(var),
        }
    }

    pub fn storage(&self) -> Option<&str> {
        match self {
            Domain::Group { storage, .. }
            | Domain::Permuted { storage, .. }
            | Domain::Positions { storage }
            | Domain::GroupsAt { storage, .. } => Some(storage),
            Domain::Block {
                compressed: Some(s),
                ..
            } => Some(s),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    /// Ordered loop over `[lo, hi)`, optionally descending.
    For {
        var: String,
        lo: Expr,
        hi: Expr,
        descending: bool,
        body: Vec<Stmt>,
    },
    /// Unordered loop.
    Forelem {
        var: String,
        domain: Domain,
        body: Vec<Stmt>,
    },
    Assign {
        target: Expr,
        op: AssignOp,
        value: Expr,
    },
    /// Parse-only.
    If { cond: Expr, body: Vec<Stmt> },
    /// Reservoir mutation `T = T ∪ (...)`; parse-only.
    Insert { reservoir: String, values: Vec<Expr> },
}

impl Stmt {
    pub fn body(&self) -> Option<&Vec<Stmt>> {
        match self {
            Stmt::For { body, .. } | Stmt::Forelem { body, .. } | Stmt::If { body, .. } => {
                Some(body)
            }
            _ => None,
        }
    }

    pub fn body_mut(&mut self) -> Option<&mut Vec<Stmt>> {
        match self {
            Stmt::For { body, .. } | Stmt::Forelem { body, .. } | Stmt::If { body, .. } => {
                Some(body)
            }
            _ => None,
        }
    }

    pub fn loop_var(&self) -> Option<&str> {
        match self {
            Stmt::For { var, .. } | Stmt::Forelem { var, .. } => Some(var),
            _ => None,
        }
    }

    /// Applies `f` to every expression of this statement and its body.
    pub fn rewrite_exprs(&mut self, f: &mut dyn FnMut(Expr) -> Expr) {
        fn take(e: &mut Expr, f: &mut dyn FnMut(Expr) -> Expr) {
            let old = std::mem::replace(e, Expr::Int(0));
            *e = old.rewrite(f);
        }
        match self {
            Stmt::For { lo, hi, body, .. } => {
                take(lo, f);
                take(hi, f);
                body.iter_mut().for_each(|s| s.rewrite_exprs(f));
            }
            Stmt::Forelem { domain, body, .. } => {
                rewrite_domain(domain, f);
                body.iter_mut().for_each(|s| s.rewrite_exprs(f));
            }
            Stmt::Assign { target, value, .. } => {
                take(target, f);
                take(value, f);
            }
            Stmt::If { cond, body } => {
                take(cond, f);
                body.iter_mut().for_each(|s| s.rewrite_exprs(f));
            }
            Stmt::Insert { values, .. } => values.iter_mut().for_each(|v| take(v, f)),
        }

        fn rewrite_domain(d: &mut Domain, f: &mut dyn FnMut(Expr) -> Expr) {
            match d {
                Domain::Reservoir { cond: Some(c), .. } => {
                    for v in &mut c.values {
                        match v {
                            CondValue::Expr(e) => take(e, f),
                            CondValue::Interval { lo, hi } => {
                                take(lo, f);
                                if let Some(h) = hi {
                                    take(h, f);
                                }
                            }
                        }
                    }
                }
                Domain::Range { extent }
                | Domain::Blocks { extent, .. }
                | Domain::Block { extent, .. }
                | Domain::Permuted { extent, .. } => take(extent, f),
                Domain::Span { lo, hi } => {
                    take(lo, f);
                    take(hi, f);
                }
                Domain::GroupsAt { base, .. } => rewrite_domain(base, f),
                _ => {}
            }
        }
    }

    /// Visits every expression of this statement and its body.
    pub fn visit_exprs<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        match self {
            Stmt::For { lo, hi, body, .. } => {
                lo.walk(f);
                hi.walk(f);
                body.iter().for_each(|s| s.visit_exprs(f));
            }
            Stmt::Forelem { domain, body, .. } => {
                visit_domain(domain, f);
                body.iter().for_each(|s| s.visit_exprs(f));
            }
            Stmt::Assign { target, value, .. } => {
                target.walk(f);
                value.walk(f);
            }
            Stmt::If { cond, body } => {
                cond.walk(f);
                body.iter().for_each(|s| s.visit_exprs(f));
            }
            Stmt::Insert { values, .. } => values.iter().for_each(|v| v.walk(f)),
        }

        fn visit_domain<'a>(d: &'a Domain, f: &mut dyn FnMut(&'a Expr)) {
            match d {
                Domain::Reservoir { cond: Some(c), .. } => {
                    for v in &c.values {
                        match v {
                            CondValue::Expr(e) => e.walk(f),
                            CondValue::Interval { lo, hi } => {
                                lo.walk(f);
                                if let Some(h) = hi {
                                    h.walk(f);
                                }
                            }
                        }
                    }
                }
                Domain::Range { extent }
                | Domain::Blocks { extent, .. }
                | Domain::Block { extent, .. }
                | Domain::Permuted { extent, .. } => extent.walk(f),
                Domain::Span { lo, hi } => {
                    lo.walk(f);
                    hi.walk(f);
                }
                Domain::GroupsAt { base, .. } => visit_domain(base, f),
                _ => {}
            }
        }
    }
}

/// How a reservoir declared in a program obtains its tuples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReservoirOrigin {
    /// Supplied by the caller.
    Input,
    /// Projection of `source` onto the declared fields.
    Projection { source: String },
    /// Equi-join `left.left_field == right.right_field`. The joined schema is
    /// the left schema followed by the right schema, where right fields that
    /// collide with a left field are renamed `<right>_<field>`.
    Join {
        left: String,
        right: String,
        left_field: FieldName,
        right_field: FieldName,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReservoirDecl {
    pub name: String,
    pub fields: Vec<FieldName>,
    pub origin: ReservoirOrigin,
}

/// Address function over the tuples of a reservoir.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataDecl {
    pub name: String,
    pub reservoir: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseDecl {
    pub name: String,
    pub dims: Vec<Expr>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Program {
    pub reservoirs: Vec<ReservoirDecl>,
    pub data: Vec<DataDecl>,
    pub dense: Vec<DenseDecl>,
    /// Scalars bound by the caller, such as block coordinates.
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    pub storages: Vec<MaterializedStorage>,
}

impl Program {
    pub fn reservoir(&self, name: &str) -> Option<&ReservoirDecl> {
        self.reservoirs.iter().find(|r| r.name == name)
    }

    pub fn data_decl(&self, name: &str) -> Option<&DataDecl> {
        self.data.iter().find(|d| d.name == name)
    }

    pub fn dense_decl(&self, name: &str) -> Option<&DenseDecl> {
        self.dense.iter().find(|d| d.name == name)
    }

    pub fn storage(&self, name: &str) -> Option<&MaterializedStorage> {
        self.storages.iter().find(|s| s.name == name)
    }

    pub fn storage_mut(&mut self, name: &str) -> Option<&mut MaterializedStorage> {
        self.storages.iter_mut().find(|s| s.name == name)
    }

    /// Size parameters: every name used in a dense extent.
    pub fn size_params(&self) -> Vec<String> {
        let mut out = Vec::new();
        for d in &self.dense {
            for dim in &d.dims {
                dim.walk(&mut |e| {
                    if let Expr::Var(v) = e {
                        if !out.contains(v) {
                            out.push(v.clone());
                        }
                    }
                });
            }
        }
        out
    }

    /// The input reservoir a (possibly derived) reservoir draws its tuples from.
    pub fn root_reservoirs(&self, name: &str) -> Vec<String> {
        match self.reservoir(name).map(|r| &r.origin) {
            Some(ReservoirOrigin::Projection { source }) => self.root_reservoirs(source),
            Some(ReservoirOrigin::Join { left, right, .. }) => {
                let mut v = self.root_reservoirs(left);
                v.extend(self.root_reservoirs(right));
                v
            }
            _ => vec![name.to_string()],
        }
    }

    /// True when the program contains parse-only constructs.
    pub fn has_mutation(&self) -> bool {
        fn scan(stmts: &[Stmt]) -> bool {
            stmts.iter().any(|s| match s {
                Stmt::Insert { .. } | Stmt::If { .. } => true,
                Stmt::Assign { value, .. } => {
                    let mut call = false;
                    value.walk(&mut |e| call |= matches!(e, Expr::Call { .. }));
                    call
                }
                other => other.body().is_some_and(|b| scan(b)),
            })
        }
        scan(&self.body)
    }

    /// A name not yet used by any declaration, parameter or variable.
    pub fn fresh_name(&self, preferred: &[&str]) -> String {
        let used = self.used_names();
        for p in preferred {
            if !used.iter().any(|u| u == p) {
                return p.to_string();
            }
        }
        let stem = preferred.first().copied().unwrap_or("v");
        (1..)
            .map(|n| format!("{stem}{n}"))
            .find(|c| !used.contains(c))
            .expect("unbounded name supply")
    }

    pub fn used_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .reservoirs
            .iter()
            .map(|r| r.name.clone())
            .chain(self.data.iter().map(|d| d.name.clone()))
            .chain(self.dense.iter().map(|d| d.name.clone()))
            .chain(self.params.iter().cloned())
            .chain(self.size_params())
            .chain(self.storages.iter().map(|s| s.name.clone()))
            .collect();
        fn scan(stmts: &[Stmt], names: &mut Vec<String>) {
            for s in stmts {
                if let Some(v) = s.loop_var() {
                    names.push(v.to_string());
                }
                if let Stmt::Assign {
                    target: Expr::Var(v),
                    ..
                } = s
                {
                    names.push(v.clone());
                }
                if let Some(b) = s.body() {
                    scan(b, names);
                }
            }
        }
        scan(&self.body, &mut names);
        names
    }
}
