//! Direct execution of RIN on dense logical storage, with dynamic
//! readiness checking: at every marker instance, each covered cell that the
//! whole run ever writes must already have been written.

use super::{ExecutionTrace, TensorData};
use crate::fragments::FragmentMode;
use crate::frontend::{BinaryOp, IndexExpr, ProgramSpec, ScalarExpr, StorageSpec, UnaryOp};
use crate::oracle;
use crate::rin::{LoopKind, RegionIndex, RinLoop, RinProgram, RinStmt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RinInterpError {
    #[error("readiness marker `{marker}` claims unwritten cell {tensor}{coords:?}")]
    ReadinessViolation { marker: String, tensor: String, coords: Vec<i64> },
    #[error("missing input tensor `{0}`")]
    MissingInput(String),
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("sqrt of negative in `{0}`")]
    NegativeSqrt(String),
    #[error("cannot size `{0}`")]
    NoExtent(String),
}

struct State<'a> {
    spec: &'a ProgramSpec,
    tensors: BTreeMap<String, TensorData>,
    written: BTreeMap<String, BTreeSet<Vec<i64>>>,
    ever_written: Option<BTreeMap<String, BTreeSet<Vec<i64>>>>,
    vars: BTreeMap<String, i64>,
    rng: Option<ChaCha8Rng>,
    trace: ExecutionTrace,
}

/// Interprets the RIN directly (all tensors dense). With `check_markers`,
/// runs twice: the first pass records which cells get written at all, the
/// second asserts every marker against that set.
pub fn interpret_rin(
    prog: &RinProgram,
    spec: &ProgramSpec,
    inputs: &BTreeMap<String, TensorData>,
    check_markers: bool,
    permute_seed: Option<u64>,
) -> Result<(BTreeMap<String, TensorData>, ExecutionTrace), RinInterpError> {
    let mut first = run(prog, spec, inputs, None, permute_seed)?;
    if check_markers {
        let ever = std::mem::take(&mut first.written);
        let second = run(prog, spec, inputs, Some(ever), permute_seed)?;
        return Ok((collect_outputs(second, spec), Default::default()));
    }
    let trace = first.trace.clone();
    Ok((collect_outputs(first, spec), trace))
}

fn collect_outputs(state: State<'_>, spec: &ProgramSpec) -> BTreeMap<String, TensorData> {
    let outputs = spec.output_tensors();
    state
        .tensors
        .into_iter()
        .filter(|(t, _)| outputs.contains(t))
        .collect()
}

fn run<'a>(
    prog: &RinProgram,
    spec: &'a ProgramSpec,
    inputs: &BTreeMap<String, TensorData>,
    ever_written: Option<BTreeMap<String, BTreeSet<Vec<i64>>>>,
    permute_seed: Option<u64>,
) -> Result<State<'a>, RinInterpError> {
    let mut tensors: BTreeMap<String, TensorData> = BTreeMap::new();
    for (t, data) in inputs {
        tensors.insert(t.clone(), data.to_dense());
    }
    // Outputs and aliases, dense, identity-initialized for accumulators.
    let extents =
        oracle::derive_output_extents(spec, inputs).map_err(|e| RinInterpError::NoExtent(e.to_string()))?;
    let frags: Vec<_> = prog.assignments().iter().map(|(f, _)| (*f).clone()).collect();
    let mut alias_dims: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for f in &frags {
        let sys = frag_system(f, spec);
        let entry = alias_dims.entry(f.lhs.tensor.clone()).or_default();
        if entry.len() < f.lhs.indices.len() {
            entry.resize(f.lhs.indices.len(), 0);
        }
        for (d, e) in f.lhs.indices.iter().enumerate() {
            if let Some(hi) = sys.numeric_max(e) {
                entry[d] = entry[d].max(hi + 1);
            }
        }
    }
    for f in &frags {
        let t = &f.lhs.tensor;
        if tensors.contains_key(t) {
            continue;
        }
        let dims = extents.get(t).cloned().unwrap_or_else(|| alias_dims.get(t).cloned().unwrap_or_default());
        let init = match f.mode {
            FragmentMode::Reduce(op) => op.identity(),
            FragmentMode::Assign => 0.0,
        };
        let mut data = TensorData::filled(StorageSpec::dense(dims.len()), dims, init);
        for ((name, coords), v) in &spec.initial_values {
            if name == t {
                data.set(coords, *v);
            }
        }
        tensors.insert(t.clone(), data);
    }
    let mut written: BTreeMap<String, BTreeSet<Vec<i64>>> = BTreeMap::new();
    for ((name, coords), _) in &spec.initial_values {
        written.entry(name.clone()).or_default().insert(coords.clone());
    }

    let mut state = State {
        spec,
        tensors,
        written,
        ever_written,
        vars: BTreeMap::new(),
        rng: permute_seed.map(ChaCha8Rng::seed_from_u64),
        trace: ExecutionTrace { seed: permute_seed, ..Default::default() },
    };
    exec_body(&prog.body, &mut state)?;
    Ok(state)
}

fn frag_system(f: &crate::fragments::MinimalFragment, spec: &ProgramSpec) -> crate::frontend::ConstraintSystem {
    crate::fragments::grounded_system(&f.constraints, &f.used_vars(), &spec.extents)
}

fn resolve(e: &IndexExpr, state: &State) -> i64 {
    match e.var.as_deref() {
        None => e.offset,
        Some(v) => {
            state
                .vars
                .get(v)
                .copied()
                .or_else(|| state.spec.extents.get(v).copied())
                .unwrap_or(0)
                + e.offset
        }
    }
}

fn exec_body(body: &[RinStmt], state: &mut State) -> Result<(), RinInterpError> {
    for s in body {
        match s {
            RinStmt::Loop(l) => exec_loop(l, state)?,
            RinStmt::Assign(f) => exec_assign(f, state)?,
            RinStmt::Readiness(m) => check_marker(m, state)?,
        }
    }
    Ok(())
}

fn exec_loop(l: &RinLoop, state: &mut State) -> Result<(), RinInterpError> {
    let (lo, hi) = l.space.canonical();
    let lo = resolve(&lo, state);
    let hi = resolve(&hi, state);
    let mut order: Vec<i64> = (lo..hi).collect();
    if l.kind == LoopKind::Forall {
        if let Some(rng) = &mut state.rng {
            order.shuffle(rng);
        }
    }
    for v in order {
        state.vars.insert(l.var.clone(), v);
        exec_body(&l.body, state)?;
    }
    state.vars.remove(&l.var);
    Ok(())
}

fn exec_assign(f: &crate::fragments::MinimalFragment, state: &mut State) -> Result<(), RinInterpError> {
    let value = eval(&f.rhs, state)?;
    let coords: Vec<i64> = f.lhs.indices.iter().map(|e| resolve(e, state)).collect();
    let tensor = f.lhs.tensor.clone();
    let new = match f.mode {
        FragmentMode::Assign => value,
        FragmentMode::Reduce(op) => {
            let old = state.tensors[&tensor].get(&coords);
            op.apply(old, value)
        }
    };
    state.tensors.get_mut(&tensor).unwrap().set(&coords, new);
    *state.trace.stores.entry(tensor.clone()).or_insert(0) += 1;
    state.written.entry(tensor).or_default().insert(coords);
    Ok(())
}

fn eval(e: &ScalarExpr, state: &mut State) -> Result<f64, RinInterpError> {
    Ok(match e {
        ScalarExpr::Constant(c) => *c,
        ScalarExpr::Access(a) => {
            let coords: Vec<i64> = a.indices.iter().map(|x| resolve(x, state)).collect();
            let data = state
                .tensors
                .get(&a.tensor)
                .ok_or_else(|| RinInterpError::MissingInput(a.tensor.clone()))?;
            *state.trace.loads.entry(a.tensor.clone()).or_insert(0) += 1;
            data.get(&coords)
        }
        ScalarExpr::Unary { op, child } => {
            let v = eval(child, state)?;
            match op {
                UnaryOp::Neg => -v,
                UnaryOp::Sqrt => {
                    if v < 0.0 {
                        return Err(RinInterpError::NegativeSqrt(format!("{e}")));
                    }
                    v.sqrt()
                }
            }
        }
        ScalarExpr::Binary { op, left, right } => {
            let l = eval(left, state)?;
            let r = eval(right, state)?;
            match op {
                BinaryOp::Add => super::saturating_add(l, r),
                BinaryOp::Sub => l - r,
                BinaryOp::Mul => l * r,
                BinaryOp::Div => {
                    if r == 0.0 {
                        return Err(RinInterpError::DivisionByZero(format!("{e}")));
                    }
                    l / r
                }
                BinaryOp::Min => l.min(r),
                BinaryOp::Max => l.max(r),
            }
        }
        ScalarExpr::Reduction { .. } => unreachable!("RIN assignments are reduction-free"),
    })
}

/// Every cell the marker covers that the whole run writes must be written
/// by now.
fn check_marker(m: &crate::rin::ReadinessMarker, state: &State) -> Result<(), RinInterpError> {
    let Some(ever) = &state.ever_written else { return Ok(()) };
    let Some(ever_cells) = ever.get(&m.tensor) else { return Ok(()) };
    let Some(data) = state.tensors.get(&m.tensor) else { return Ok(()) };
    let written = state.written.get(&m.tensor);
    let mut ranges: Vec<(i64, i64)> = Vec::new();
    for (d, r) in m.region.iter().enumerate() {
        let extent = data.extents[d];
        let range = match r {
            RegionIndex::Exact(e) => {
                let v = resolve(e, state);
                (v, v + 1)
            }
            RegionIndex::All => (0, extent),
            RegionIndex::Prefix(e) => (0, resolve(e, state).min(extent)),
        };
        ranges.push(range);
    }
    let mut coords = vec![0i64; ranges.len()];
    check_region(m, &ranges, 0, &mut coords, ever_cells, written)
}

fn check_region(
    m: &crate::rin::ReadinessMarker,
    ranges: &[(i64, i64)],
    depth: usize,
    coords: &mut Vec<i64>,
    ever: &BTreeSet<Vec<i64>>,
    written: Option<&BTreeSet<Vec<i64>>>,
) -> Result<(), RinInterpError> {
    if depth == ranges.len() {
        if ever.contains(coords) && written.map_or(true, |w| !w.contains(coords)) {
            return Err(RinInterpError::ReadinessViolation {
                marker: m.to_string(),
                tensor: m.tensor.clone(),
                coords: coords.clone(),
            });
        }
        return Ok(());
    }
    for v in ranges[depth].0..ranges[depth].1 {
        coords[depth] = v;
        check_region(m, ranges, depth + 1, coords, ever, written)?;
    }
    Ok(())
}
