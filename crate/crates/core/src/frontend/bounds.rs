//! Difference-bound reasoning over canonical constraints.
//!
//! Every constraint in the language relates two `var + offset` expressions,
//! so the set of facts derivable from a constraint list is exactly a system
//! of integer difference constraints. Closing that system with all-pairs
//! shortest paths makes questions like "does `k < j` follow from the
//! constraints" decidable, including transitive chains.

use super::{Constraint, IndexExpr, Rel};
use std::collections::BTreeMap;

const UNBOUNDED: i64 = i64::MAX / 4;

/// Closed difference-bound matrix over index variables, extent symbols and a
/// synthetic zero node. `dist[a][b] = c` encodes the proven fact `a - b <= c`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    index: BTreeMap<String, usize>,
    dist: Vec<Vec<i64>>,
    feasible: bool,
}

impl ConstraintSystem {
    /// Builds the closure of `constraints`, with every index variable known
    /// to be non-negative and every extent symbol pinned to its value.
    pub fn new(constraints: &[Constraint], extents: &BTreeMap<String, i64>) -> Self {
        Self::build(constraints, extents, true)
    }

    /// As [`ConstraintSystem::new`] but extent symbols stay symbolic (only
    /// their positivity is known). Placement reasoning uses this form so
    /// compilation results do not depend on extent values.
    pub fn new_symbolic(constraints: &[Constraint], extents: &BTreeMap<String, i64>) -> Self {
        Self::build(constraints, extents, false)
    }

    fn build(constraints: &[Constraint], extents: &BTreeMap<String, i64>, pin_values: bool) -> Self {
        let mut names: Vec<String> = vec!["#0".to_string()];
        let mut index = BTreeMap::new();
        index.insert("#0".to_string(), 0usize);
        let intern = |n: &str, names: &mut Vec<String>, index: &mut BTreeMap<String, usize>| -> usize {
            if let Some(&i) = index.get(n) {
                return i;
            }
            names.push(n.to_string());
            index.insert(n.to_string(), names.len() - 1);
            names.len() - 1
        };

        for c in constraints {
            intern(&c.var, &mut names, &mut index);
            if let Some(b) = c.bound.var.as_deref() {
                intern(b, &mut names, &mut index);
            }
        }
        for e in extents.keys() {
            intern(e, &mut names, &mut index);
        }

        let n = names.len();
        let mut dist = vec![vec![UNBOUNDED; n]; n];
        for (i, row) in dist.iter_mut().enumerate() {
            row[i] = 0;
        }
        let edge = |a: usize, b: usize, c: i64, dist: &mut Vec<Vec<i64>>| {
            if c < dist[a][b] {
                dist[a][b] = c;
            }
        };

        // All index variables are non-negative: 0 - v <= 0.
        for i in 1..n {
            edge(0, i, 0, &mut dist);
        }
        // Extent symbols: pinned to their value, or merely positive.
        for (e, val) in extents {
            let i = index[e];
            if pin_values {
                edge(i, 0, *val, &mut dist);
                edge(0, i, -*val, &mut dist);
            } else {
                edge(0, i, -1, &mut dist);
            }
        }

        for c in constraints {
            let v = index[&c.var];
            let (b, boff) = match c.bound.var.as_deref() {
                Some(bv) => (index[bv], c.bound.offset),
                None => (0, c.bound.offset),
            };
            match c.rel {
                // v < b + boff  =>  v - b <= boff - 1
                Rel::Lt => edge(v, b, boff - 1, &mut dist),
                Rel::Le => edge(v, b, boff, &mut dist),
                Rel::Eq => {
                    edge(v, b, boff, &mut dist);
                    edge(b, v, -boff, &mut dist);
                }
                // v > b + boff  =>  b - v <= -boff - 1
                Rel::Gt => edge(b, v, -boff - 1, &mut dist),
                Rel::Ge => edge(b, v, -boff, &mut dist),
            }
        }

        // Floyd-Warshall closure.
        for k in 0..n {
            for i in 0..n {
                if dist[i][k] >= UNBOUNDED {
                    continue;
                }
                for j in 0..n {
                    if dist[k][j] >= UNBOUNDED {
                        continue;
                    }
                    let via = dist[i][k] + dist[k][j];
                    if via < dist[i][j] {
                        dist[i][j] = via;
                    }
                }
            }
        }
        let feasible = (0..n).all(|i| dist[i][i] >= 0);

        ConstraintSystem { index, dist, feasible }
    }

    /// False when the constraint set admits no assignment (e.g. `i<j, j<i`).
    pub fn is_feasible(&self) -> bool {
        self.feasible
    }

    fn node(&self, e: &IndexExpr) -> Option<(usize, i64)> {
        match e.var.as_deref() {
            None => Some((0, e.offset)),
            Some(v) => self.index.get(v).map(|&i| (i, e.offset)),
        }
    }

    /// Tightest proven value of `a - b`, if any.
    fn diff_bound(&self, a: &IndexExpr, b: &IndexExpr) -> Option<i64> {
        if a.var == b.var {
            // Same variable (or two constants): the difference is exact even
            // when the variable never appears in a constraint.
            return Some(a.offset - b.offset);
        }
        let (na, ca) = self.node(a)?;
        let (nb, cb) = self.node(b)?;
        let d = self.dist[na][nb];
        if d >= UNBOUNDED {
            None
        } else {
            Some(d + ca - cb)
        }
    }

    /// Do the constraints prove `a < b` for every valid assignment?
    pub fn implies_lt(&self, a: &IndexExpr, b: &IndexExpr) -> bool {
        !self.feasible || self.diff_bound(a, b).is_some_and(|d| d <= -1)
    }

    /// Do the constraints prove `a <= b` for every valid assignment?
    pub fn implies_le(&self, a: &IndexExpr, b: &IndexExpr) -> bool {
        !self.feasible || self.diff_bound(a, b).is_some_and(|d| d <= 0)
    }

    pub fn implies_eq(&self, a: &IndexExpr, b: &IndexExpr) -> bool {
        self.implies_le(a, b) && self.implies_le(b, a)
    }

    /// Proven inclusive numeric maximum of an expression, when one exists.
    pub fn numeric_max(&self, e: &IndexExpr) -> Option<i64> {
        let zero = IndexExpr::constant(0);
        self.diff_bound(e, &zero)
    }

    /// Proven inclusive numeric minimum of an expression.
    pub fn numeric_min(&self, e: &IndexExpr) -> Option<i64> {
        let zero = IndexExpr::constant(0);
        self.diff_bound(&zero, e).map(|d| -d)
    }
}
