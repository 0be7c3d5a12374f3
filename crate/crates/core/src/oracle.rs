//! Schedule-independent reference semantics: every output cell is computed
//! by memoized recursion over the declarative recurrences, making the
//! result canonical regardless of evaluation order.

use crate::frontend::{
    BinaryOp, Constraint, ConstraintSystem, IndexExpr, ProgramSpec, Rel, ScalarExpr, StorageSpec, UnaryOp,
};
use crate::runtime::{saturating_add, TensorData};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("cyclic dependency: {0}")]
    Cycle(String),
    #[error("coordinate {coords:?} of `{tensor}` matched by multiple recurrences")]
    MultipleMatches { tensor: String, coords: Vec<i64> },
    #[error("missing input tensor `{0}`")]
    MissingInput(String),
    #[error("input `{tensor}` read out of range at {coords:?}")]
    InputOutOfRange { tensor: String, coords: Vec<i64> },
    #[error("division by zero evaluating `{0}`")]
    DivisionByZero(String),
    #[error("sqrt of negative value evaluating `{0}`")]
    NegativeSqrt(String),
    #[error("variable `{0}` has no numeric range")]
    NoRange(String),
}

#[derive(Clone, Copy, PartialEq)]
enum CellState {
    InProgress,
    Done(f64),
}

pub struct Oracle<'a> {
    spec: &'a ProgramSpec,
    inputs: &'a BTreeMap<String, TensorData>,
    memo: BTreeMap<(String, Vec<i64>), CellState>,
    outputs: Vec<String>,
}

/// Evaluates every output cell of the spec; ground truth for all kernels.
pub fn evaluate(
    spec: &ProgramSpec,
    inputs: &BTreeMap<String, TensorData>,
) -> Result<BTreeMap<String, TensorData>, OracleError> {
    let mut oracle = Oracle { spec, inputs, memo: BTreeMap::new(), outputs: spec.output_tensors() };
    let extents = derive_output_extents(spec, inputs)?;

    let mut results: BTreeMap<String, TensorData> = BTreeMap::new();
    for t in &oracle.outputs {
        let dims = extents.get(t).cloned().unwrap_or_default();
        results.insert(t.clone(), TensorData::zeros(StorageSpec::dense(dims.len()), dims));
    }
    // Initial values seed cells that no recurrence region covers.
    for ((tensor, coords), v) in &spec.initial_values {
        if let Some(out) = results.get_mut(tensor) {
            out.set(coords, *v);
        }
    }

    for (ri, rec) in spec.recurrences.iter().enumerate() {
        let sys = region_system(ri, spec);
        let vars: Vec<String> = rec.lhs_vars();
        let mut ranges = Vec::new();
        for v in &vars {
            let lo = sys.numeric_min(&IndexExpr::var(v.clone())).ok_or_else(|| OracleError::NoRange(v.clone()))?;
            let hi = sys.numeric_max(&IndexExpr::var(v.clone())).ok_or_else(|| OracleError::NoRange(v.clone()))?;
            ranges.push((lo, hi));
        }
        let mut binding: BTreeMap<String, i64> = BTreeMap::new();
        enumerate_region(&vars, &ranges, 0, &mut binding, &mut |b| {
            if !constraints_hold(&rec.constraints, b, &spec.extents, true) {
                return Ok(());
            }
            let coords: Vec<i64> = rec.lhs.indices.iter().map(|e| resolve(e, b)).collect();
            if spec.initial_values.contains_key(&(rec.lhs.tensor.clone(), coords.clone())) {
                return Ok(());
            }
            let v = oracle.cell(&rec.lhs.tensor, &coords, &mut Vec::new())?;
            results.get_mut(&rec.lhs.tensor).unwrap().set(&coords, v);
            Ok(())
        })?;
    }
    Ok(results)
}

fn enumerate_region(
    vars: &[String],
    ranges: &[(i64, i64)],
    depth: usize,
    binding: &mut BTreeMap<String, i64>,
    f: &mut impl FnMut(&BTreeMap<String, i64>) -> Result<(), OracleError>,
) -> Result<(), OracleError> {
    if depth == vars.len() {
        return f(binding);
    }
    let (lo, hi) = ranges[depth];
    for v in lo..=hi {
        binding.insert(vars[depth].clone(), v);
        enumerate_region(vars, ranges, depth + 1, binding, f)?;
    }
    binding.remove(&vars[depth]);
    Ok(())
}

/// Grounded system over all of the recurrence's variables; used for
/// deriving extents of every access.
fn full_system(rec_index: usize, spec: &ProgramSpec) -> ConstraintSystem {
    let rec = &spec.recurrences[rec_index];
    let mut vars: std::collections::BTreeSet<String> = rec.lhs_vars().into_iter().collect();
    vars.extend(rec.rhs.vars());
    crate::fragments::grounded_system(&rec.constraints, &vars, &spec.extents)
}

/// Grounded system over the lhs variables only: constraints that mention
/// reduction variables do not narrow the output region (a cell with an
/// empty reduction range is still computed).
fn region_system(rec_index: usize, spec: &ProgramSpec) -> ConstraintSystem {
    let rec = &spec.recurrences[rec_index];
    let lhs_vars: std::collections::BTreeSet<String> = rec.lhs_vars().into_iter().collect();
    let restricted: Vec<Constraint> = rec
        .constraints
        .iter()
        .filter(|c| {
            c.vars()
                .iter()
                .all(|v| lhs_vars.contains(*v) || spec.extents.contains_key(*v))
        })
        .cloned()
        .collect();
    crate::fragments::grounded_system(&restricted, &lhs_vars, &spec.extents)
}

fn resolve(e: &IndexExpr, binding: &BTreeMap<String, i64>) -> i64 {
    match e.var.as_deref() {
        None => e.offset,
        Some(v) => binding.get(v).copied().unwrap_or(i64::MIN) + e.offset,
    }
}

fn resolve_with_extents(e: &IndexExpr, binding: &BTreeMap<String, i64>, extents: &BTreeMap<String, i64>) -> i64 {
    match e.var.as_deref() {
        None => e.offset,
        Some(v) => match binding.get(v) {
            Some(val) => val + e.offset,
            None => extents.get(v).copied().unwrap_or(i64::MIN) + e.offset,
        },
    }
}

/// Checks constraints whose variables are all bound (or resolvable through
/// extents); others are reduction-range constraints handled during rhs
/// evaluation.
fn constraints_hold(
    constraints: &[Constraint],
    binding: &BTreeMap<String, i64>,
    extents: &BTreeMap<String, i64>,
    skip_unbound: bool,
) -> bool {
    for c in constraints {
        let lhs_bound = binding.contains_key(&c.var) || extents.contains_key(&c.var);
        let rhs_bound = match c.bound.var.as_deref() {
            None => true,
            Some(v) => binding.contains_key(v) || extents.contains_key(v),
        };
        if !lhs_bound || !rhs_bound {
            if skip_unbound {
                continue;
            }
            return false;
        }
        let l = resolve_with_extents(&IndexExpr::var(c.var.clone()), binding, extents);
        let r = resolve_with_extents(&c.bound, binding, extents);
        let ok = match c.rel {
            Rel::Lt => l < r,
            Rel::Le => l <= r,
            Rel::Eq => l == r,
            Rel::Gt => l > r,
            Rel::Ge => l >= r,
        };
        if !ok {
            return false;
        }
    }
    true
}

impl<'a> Oracle<'a> {
    fn cell(&mut self, tensor: &str, coords: &[i64], path: &mut Vec<String>) -> Result<f64, OracleError> {
        if !self.outputs.contains(&tensor.to_string()) {
            let data = self
                .inputs
                .get(tensor)
                .ok_or_else(|| OracleError::MissingInput(tensor.to_string()))?;
            if coords.len() != data.rank()
                || coords.iter().zip(&data.extents).any(|(c, e)| *c < 0 || c >= e)
            {
                return Err(OracleError::InputOutOfRange { tensor: tensor.to_string(), coords: coords.to_vec() });
            }
            return Ok(data.get(coords));
        }
        if let Some(v) = self.spec.initial_values.get(&(tensor.to_string(), coords.to_vec())) {
            return Ok(*v);
        }
        let key = (tensor.to_string(), coords.to_vec());
        match self.memo.get(&key) {
            Some(CellState::Done(v)) => return Ok(*v),
            Some(CellState::InProgress) => {
                let mut cycle = path.clone();
                cycle.push(format!("{tensor}{coords:?}"));
                return Err(OracleError::Cycle(cycle.join(" -> ")));
            }
            None => {}
        }

        // Select the unique recurrence whose constraints admit this cell.
        let mut matched: Option<(usize, BTreeMap<String, i64>)> = None;
        for (ri, rec) in self.spec.recurrences.iter().enumerate() {
            if rec.lhs.tensor != tensor {
                continue;
            }
            let Some(binding) = unify(&rec.lhs.indices, coords) else { continue };
            if !constraints_hold(&rec.constraints, &binding, &self.spec.extents, true) {
                continue;
            }
            if matched.is_some() {
                return Err(OracleError::MultipleMatches { tensor: tensor.to_string(), coords: coords.to_vec() });
            }
            matched = Some((ri, binding));
        }
        let Some((ri, binding)) = matched else {
            // Never written: dense default.
            return Ok(0.0);
        };

        self.memo.insert(key.clone(), CellState::InProgress);
        path.push(format!("{tensor}{coords:?}"));
        let rhs = self.spec.recurrences[ri].rhs.clone();
        let v = self.eval(&rhs, &binding, path)?;
        path.pop();
        self.memo.insert(key, CellState::Done(v));
        Ok(v)
    }

    fn eval(
        &mut self,
        expr: &ScalarExpr,
        binding: &BTreeMap<String, i64>,
        path: &mut Vec<String>,
    ) -> Result<f64, OracleError> {
        match expr {
            ScalarExpr::Constant(c) => Ok(*c),
            ScalarExpr::Access(a) => {
                let coords: Vec<i64> = a.indices.iter().map(|e| resolve(e, binding)).collect();
                self.cell(&a.tensor, &coords, path)
            }
            ScalarExpr::Unary { op, child } => {
                let v = self.eval(child, binding, path)?;
                match op {
                    UnaryOp::Neg => Ok(-v),
                    UnaryOp::Sqrt => {
                        if v < 0.0 {
                            Err(OracleError::NegativeSqrt(format!("{expr}")))
                        } else {
                            Ok(v.sqrt())
                        }
                    }
                }
            }
            ScalarExpr::Binary { op, left, right } => {
                let l = self.eval(left, binding, path)?;
                let r = self.eval(right, binding, path)?;
                match op {
                    BinaryOp::Add => Ok(saturating_add(l, r)),
                    BinaryOp::Sub => Ok(l - r),
                    BinaryOp::Mul => Ok(l * r),
                    BinaryOp::Div => {
                        if r == 0.0 {
                            Err(OracleError::DivisionByZero(format!("{expr}")))
                        } else {
                            Ok(l / r)
                        }
                    }
                    BinaryOp::Min => Ok(l.min(r)),
                    BinaryOp::Max => Ok(l.max(r)),
                }
            }
            ScalarExpr::Reduction { var, lower, upper, op, body } => {
                let lo = resolve_with_extents(lower, binding, &self.spec.extents);
                let hi = resolve_with_extents(upper, binding, &self.spec.extents);
                let mut acc = op.identity();
                let mut b = binding.clone();
                for k in lo..hi {
                    b.insert(var.clone(), k);
                    let term = self.eval(body, &b, path)?;
                    acc = op.apply(acc, term);
                }
                Ok(acc)
            }
        }
    }
}

fn unify(indices: &[IndexExpr], coords: &[i64]) -> Option<BTreeMap<String, i64>> {
    if indices.len() != coords.len() {
        return None;
    }
    let mut binding = BTreeMap::new();
    for (e, &c) in indices.iter().zip(coords) {
        match e.var.as_deref() {
            None => {
                if e.offset != c {
                    return None;
                }
            }
            Some(v) => {
                let val = c - e.offset;
                match binding.get(v) {
                    Some(&prev) if prev != val => return None,
                    _ => {
                        binding.insert(v.to_string(), val);
                    }
                }
            }
        }
    }
    Some(binding)
}

/// Numeric per-dimension sizes for every output tensor, derived from the
/// constraint systems (and initial values).
pub fn derive_output_extents(
    spec: &ProgramSpec,
    _inputs: &BTreeMap<String, TensorData>,
) -> Result<BTreeMap<String, Vec<i64>>, OracleError> {
    let mut out: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for (ri, rec) in spec.recurrences.iter().enumerate() {
        let sys = full_system(ri, spec);
        let bump = |tensor: &str, dim: usize, size: i64, out: &mut BTreeMap<String, Vec<i64>>| {
            let e = out.entry(tensor.to_string()).or_default();
            if e.len() <= dim {
                e.resize(dim + 1, 0);
            }
            e[dim] = e[dim].max(size);
        };
        let visit = |a: &crate::frontend::TensorAccess, out: &mut BTreeMap<String, Vec<i64>>| {
            for (d, e) in a.indices.iter().enumerate() {
                if let Some(hi) = sys.numeric_max(e) {
                    bump(&a.tensor, d, hi + 1, out);
                }
            }
        };
        visit(&rec.lhs, &mut out);
        for a in rec.rhs.accesses() {
            visit(a, &mut out);
        }
    }
    for ((tensor, coords), _) in &spec.initial_values {
        let e = out.entry(tensor.clone()).or_default();
        for (d, &c) in coords.iter().enumerate() {
            if e.len() <= d {
                e.resize(d + 1, 0);
            }
            e[d] = e[d].max(c + 1);
        }
    }
    // Inputs keep their own extents; only outputs (and aliases) matter here.
    let outputs = spec.output_tensors();
    out.retain(|t, _| outputs.contains(t));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_program, validate};

    fn spec_of(text: &str) -> ProgramSpec {
        validate(parse_program(text).unwrap()).unwrap()
    }

    #[test]
    fn fibonacci() {
        let spec = spec_of(
            "\
rec: F(i) = F(i-1) + F(i-2) : [2<=i, i<N]
order: i
extent: N = 11
init: F(0) = 0
init: F(1) = 1
",
        );
        let out = evaluate(&spec, &BTreeMap::new()).unwrap();
        let f = &out["F"];
        // Iterative check.
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..9 {
            let c = a + b;
            a = b;
            b = c;
        }
        assert_eq!(f.get(&[10]), b);
        assert_eq!(f.get(&[10]), 55.0);
    }

    #[test]
    fn floyd_warshall_three_nodes() {
        // 3D form with explicit timestep dimension; T = N+1 steps, slice 0
        // holds the direct edges.
        let spec = spec_of(
            "\
rec: SP(i,j,k) = min(SP(i,j,k-1), SP(i,k-1,k-1) + SP(k-1,j,k-1)) : [i<N, j<N, 1<=k, k<T]
order: k i j
extent: N = 3
extent: T = 4
",
        );
        // Edges 0->1: 1, 1->2: 1, 0->2: 5; diagonal 0; INF elsewhere.
        let mut spec = spec;
        let inf = crate::runtime::INF_SENTINEL;
        for i in 0..3i64 {
            for j in 0..3i64 {
                let w = match (i, j) {
                    _ if i == j => 0.0,
                    (0, 1) => 1.0,
                    (1, 2) => 1.0,
                    (0, 2) => 5.0,
                    _ => inf,
                };
                spec.initial_values.insert(("SP".into(), vec![i, j, 0]), w);
            }
        }
        let out = evaluate(&spec, &BTreeMap::new()).unwrap();
        let sp = &out["SP"];
        // All paths from 0 to 2: direct (5) or through 1 (2).
        assert_eq!(sp.get(&[0, 2, 3]), 2.0);
        assert_eq!(sp.get(&[0, 1, 3]), 1.0);
    }

    #[test]
    fn cholesky_4x4_spd() {
        let spec = spec_of(
            "\
rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]
rec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]
order: i j k
extent: N = 4
",
        );
        // Random-ish SPD: A = M*M^T + 4I.
        let m = [[1.0, 2.0, 0.5, 1.0], [0.0, 1.0, 2.0, 0.25], [1.5, 0.0, 1.0, 1.0], [0.5, 1.0, 0.0, 2.0]];
        let n = 4usize;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    a[i][j] += m[i][k] * m[j][k];
                }
                if i == j {
                    a[i][j] += 4.0;
                }
            }
        }
        let mut triples = Vec::new();
        for i in 0..n {
            for j in 0..n {
                triples.push((vec![i as i64, j as i64], a[i][j]));
            }
        }
        let data = crate::runtime::build_from_coo(&triples, &crate::frontend::StorageSpec::dense(2), &[4, 4]).unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("A".to_string(), data);
        let out = evaluate(&spec, &inputs).unwrap();
        let l = &out["L"];
        // ||L L^T - A||_inf <= 1e-10.
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += l.get(&[i as i64, k as i64]) * l.get(&[j as i64, k as i64]);
                }
                worst = worst.max((s - a[i][j]).abs());
            }
        }
        assert!(worst <= 1e-10, "reconstruction error {worst}");
    }

    #[test]
    fn cyclic_rejected() {
        let spec = spec_of(
            "\
rec: X(i) = Y(i) : [i<N]
rec: Y(i) = X(i) : [i<N]
order: i
extent: N = 3
",
        );
        assert!(matches!(evaluate(&spec, &BTreeMap::new()), Err(OracleError::Cycle(_))));
    }
}
