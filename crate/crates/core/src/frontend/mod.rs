//! Frontend: the textual recurrence language, schedules and storage
//! descriptions, parsed and validated into a [`ProgramSpec`].

mod bounds;
mod parse;
mod print;
#[cfg(test)]
mod tests;
mod validate;

pub use bounds::ConstraintSystem;
pub use parse::{parse_program, ParseError};
pub use validate::{validate, ValidateError};

use std::collections::BTreeMap;
use std::fmt;

/// A single index variable plus an optional integer constant, or a bare
/// constant. This is the only indexing expression the language allows,
/// which keeps order comparisons between accesses decidable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexExpr {
    pub var: Option<String>,
    pub offset: i64,
}

impl IndexExpr {
    pub fn var(name: impl Into<String>) -> Self {
        IndexExpr { var: Some(name.into()), offset: 0 }
    }

    pub fn var_off(name: impl Into<String>, offset: i64) -> Self {
        IndexExpr { var: Some(name.into()), offset }
    }

    pub fn constant(c: i64) -> Self {
        IndexExpr { var: None, offset: c }
    }

    pub fn shifted(&self, delta: i64) -> Self {
        IndexExpr { var: self.var.clone(), offset: self.offset + delta }
    }

    /// Replaces the variable `from` with the expression `to` (folding offsets).
    pub fn substitute(&self, from: &str, to: &IndexExpr) -> Self {
        match &self.var {
            Some(v) if v == from => IndexExpr { var: to.var.clone(), offset: to.offset + self.offset },
            _ => self.clone(),
        }
    }
}

impl fmt::Display for IndexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.var {
            None => write!(f, "{}", self.offset),
            Some(v) => {
                if self.offset == 0 {
                    write!(f, "{v}")
                } else if self.offset > 0 {
                    write!(f, "{v}+{}", self.offset)
                } else {
                    write!(f, "{v}-{}", -self.offset)
                }
            }
        }
    }
}

/// One element of a tensor, e.g. `L(i,j)` or `F(i-1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorAccess {
    pub tensor: String,
    pub indices: Vec<IndexExpr>,
}

impl TensorAccess {
    pub fn new(tensor: impl Into<String>, indices: Vec<IndexExpr>) -> Self {
        TensorAccess { tensor: tensor.into(), indices }
    }

    pub fn substitute(&self, from: &str, to: &IndexExpr) -> Self {
        TensorAccess {
            tensor: self.tensor.clone(),
            indices: self.indices.iter().map(|e| e.substitute(from, to)).collect(),
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.indices.iter().filter_map(|e| e.var.as_deref())
    }
}

impl fmt::Display for TensorAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.tensor)?;
        for (k, e) in self.indices.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sqrt,
    Neg,
}

/// Reduction operators are the commutative, associative subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Add,
    Min,
    Max,
}

impl ReduceOp {
    /// Identity element of the reduction. Infinities are represented by a
    /// large finite sentinel so min-plus arithmetic stays NaN-free.
    pub fn identity(self) -> f64 {
        match self {
            ReduceOp::Add => 0.0,
            ReduceOp::Min => crate::runtime::INF_SENTINEL,
            ReduceOp::Max => -crate::runtime::INF_SENTINEL,
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ReduceOp::Add => crate::runtime::saturating_add(a, b),
            ReduceOp::Min => a.min(b),
            ReduceOp::Max => a.max(b),
        }
    }
}

/// Right-hand side expression tree of a recurrence.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarExpr {
    Constant(f64),
    Access(TensorAccess),
    Unary {
        op: UnaryOp,
        child: Box<ScalarExpr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<ScalarExpr>,
        right: Box<ScalarExpr>,
    },
    Reduction {
        var: String,
        lower: IndexExpr,
        /// Exclusive upper bound.
        upper: IndexExpr,
        op: ReduceOp,
        body: Box<ScalarExpr>,
    },
}

impl ScalarExpr {
    pub fn access(t: impl Into<String>, indices: Vec<IndexExpr>) -> Self {
        ScalarExpr::Access(TensorAccess::new(t, indices))
    }

    pub fn binary(op: BinaryOp, l: ScalarExpr, r: ScalarExpr) -> Self {
        ScalarExpr::Binary { op, left: Box::new(l), right: Box::new(r) }
    }

    /// All tensor accesses in the tree, left to right.
    pub fn accesses(&self) -> Vec<&TensorAccess> {
        let mut out = Vec::new();
        self.walk_accesses(&mut |a| out.push(a));
        out
    }

    fn walk_accesses<'a>(&'a self, f: &mut impl FnMut(&'a TensorAccess)) {
        match self {
            ScalarExpr::Constant(_) => {}
            ScalarExpr::Access(a) => f(a),
            ScalarExpr::Unary { child, .. } => child.walk_accesses(f),
            ScalarExpr::Binary { left, right, .. } => {
                left.walk_accesses(f);
                right.walk_accesses(f);
            }
            ScalarExpr::Reduction { body, .. } => body.walk_accesses(f),
        }
    }

    /// Index variables appearing anywhere in the tree, including reduction
    /// variables and bounds.
    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            ScalarExpr::Constant(_) => {}
            ScalarExpr::Access(a) => out.extend(a.vars().map(String::from)),
            ScalarExpr::Unary { child, .. } => child.collect_vars(out),
            ScalarExpr::Binary { left, right, .. } => {
                left.collect_vars(out);
                right.collect_vars(out);
            }
            ScalarExpr::Reduction { var, lower, upper, body, .. } => {
                out.push(var.clone());
                out.extend(lower.var.clone());
                out.extend(upper.var.clone());
                body.collect_vars(out);
            }
        }
    }

    /// Renames index variable `from` to expression `to` everywhere. Reduction
    /// variables shadow nothing here because validation rejects shadowing.
    pub fn substitute(&self, from: &str, to: &IndexExpr) -> ScalarExpr {
        match self {
            ScalarExpr::Constant(c) => ScalarExpr::Constant(*c),
            ScalarExpr::Access(a) => ScalarExpr::Access(a.substitute(from, to)),
            ScalarExpr::Unary { op, child } => ScalarExpr::Unary { op: *op, child: Box::new(child.substitute(from, to)) },
            ScalarExpr::Binary { op, left, right } => ScalarExpr::Binary {
                op: *op,
                left: Box::new(left.substitute(from, to)),
                right: Box::new(right.substitute(from, to)),
            },
            ScalarExpr::Reduction { var, lower, upper, op, body } => ScalarExpr::Reduction {
                var: var.clone(),
                lower: lower.substitute(from, to),
                upper: upper.substitute(from, to),
                op: *op,
                body: Box::new(body.substitute(from, to)),
            },
        }
    }
}

/// Comparison relations in canonical constraints. `Gt`/`Ge` only survive
/// canonicalization when the lower bound is a bare constant (`2<=i`); between
/// two variables everything is rewritten into `<`/`<=`/`=` with the earlier
/// side as subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rel {
    Lt,
    Le,
    Eq,
    Gt,
    Ge,
}

/// A bound on one index variable in terms of another index expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Constraint {
    pub var: String,
    pub rel: Rel,
    pub bound: IndexExpr,
}

impl Constraint {
    pub fn new(var: impl Into<String>, rel: Rel, bound: IndexExpr) -> Self {
        Constraint { var: var.into(), rel, bound }
    }

    pub fn lt(var: impl Into<String>, bound: IndexExpr) -> Self {
        Constraint::new(var, Rel::Lt, bound)
    }

    pub fn substitute(&self, from: &str, to: &IndexExpr) -> Constraint {
        let bound = self.bound.substitute(from, to);
        if self.var == from {
            match &to.var {
                // var+c REL bound  becomes  var REL bound-c
                Some(v) => Constraint { var: v.clone(), rel: self.rel, bound: bound.shifted(-to.offset) },
                // Constant subject: flip into a bound on the other side when
                // possible, otherwise keep a degenerate constant relation.
                None => match &bound.var {
                    Some(bv) => {
                        let rel = match self.rel {
                            Rel::Lt => Rel::Gt,
                            Rel::Le => Rel::Ge,
                            Rel::Eq => Rel::Eq,
                            Rel::Gt => Rel::Lt,
                            Rel::Ge => Rel::Le,
                        };
                        Constraint {
                            var: bv.clone(),
                            rel,
                            bound: IndexExpr::constant(to.offset - bound.offset),
                        }
                    }
                    None => Constraint { var: from.to_string(), rel: self.rel, bound },
                },
            }
        } else {
            Constraint { var: self.var.clone(), rel: self.rel, bound }
        }
    }

    pub fn vars(&self) -> Vec<&str> {
        let mut v = vec![self.var.as_str()];
        if let Some(b) = self.bound.var.as_deref() {
            v.push(b);
        }
        v
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = match self.rel {
            Rel::Lt => "<",
            Rel::Le => "<=",
            Rel::Eq => "=",
            Rel::Gt => ">",
            Rel::Ge => ">=",
        };
        write!(f, "{}{}{}", self.var, rel, self.bound)
    }
}

/// One recurrence equation with its constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedRecurrence {
    pub lhs: TensorAccess,
    pub rhs: ScalarExpr,
    pub constraints: Vec<Constraint>,
}

impl ConstrainedRecurrence {
    /// Variables of the lhs access.
    pub fn lhs_vars(&self) -> Vec<String> {
        let mut v: Vec<String> = self.lhs.vars().map(String::from).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Loop ordering plus the optional optimization directives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub ordering: Vec<String>,
    pub parallel_vars: Vec<String>,
    pub timestep: Option<(String, String)>,
}

impl Schedule {
    pub fn position(&self, var: &str) -> Option<usize> {
        self.ordering.iter().position(|v| v == var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LevelFormat {
    Dense,
    Compressed,
}

/// Per-tensor storage: an ordered list of (dimension, format) levels plus
/// optional sparsity masks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StorageSpec {
    pub levels: Vec<(usize, LevelFormat)>,
    pub masks: Vec<StorageSpec>,
}

impl StorageSpec {
    pub fn dense(rank: usize) -> Self {
        StorageSpec { levels: (0..rank).map(|d| (d, LevelFormat::Dense)).collect(), masks: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.levels.len()
    }

    /// Level position of dimension `d`.
    pub fn level_of_dim(&self, d: usize) -> Option<usize> {
        self.levels.iter().position(|(dim, _)| *dim == d)
    }

    pub fn compressed_levels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.levels
            .iter()
            .enumerate()
            .filter(|(_, (_, f))| *f == LevelFormat::Compressed)
            .map(|(lvl, (dim, _))| (lvl, *dim))
    }

    pub fn is_all_dense(&self) -> bool {
        self.levels.iter().all(|(_, f)| *f == LevelFormat::Dense)
    }
}

/// The compiler's whole input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProgramSpec {
    pub recurrences: Vec<ConstrainedRecurrence>,
    pub schedule: Schedule,
    pub storage: BTreeMap<String, StorageSpec>,
    pub extents: BTreeMap<String, i64>,
    pub initial_values: BTreeMap<(String, Vec<i64>), f64>,
}

impl ProgramSpec {
    /// Names of tensors written by some recurrence, in first-write order.
    pub fn output_tensors(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.recurrences {
            if !out.contains(&r.lhs.tensor) {
                out.push(r.lhs.tensor.clone());
            }
        }
        out
    }

    /// Names of tensors only ever read.
    pub fn input_tensors(&self) -> Vec<String> {
        let outputs = self.output_tensors();
        let mut ins = Vec::new();
        for r in &self.recurrences {
            for a in r.rhs.accesses() {
                if !outputs.contains(&a.tensor) && !ins.contains(&a.tensor) {
                    ins.push(a.tensor.clone());
                }
            }
        }
        ins
    }

    /// Declared rank of a tensor, from any access to it.
    pub fn tensor_rank(&self, tensor: &str) -> Option<usize> {
        for r in &self.recurrences {
            if r.lhs.tensor == tensor {
                return Some(r.lhs.indices.len());
            }
            for a in r.rhs.accesses() {
                if a.tensor == tensor {
                    return Some(a.indices.len());
                }
            }
        }
        None
    }

    pub fn storage_of(&self, tensor: &str) -> StorageSpec {
        match self.storage.get(tensor) {
            Some(s) => s.clone(),
            None => StorageSpec::dense(self.tensor_rank(tensor).unwrap_or(0)),
        }
    }
}
