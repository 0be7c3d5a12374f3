//! Executable semantics for kernels: runs the storage-aware statements,
//! counts loads/stores/searches, and can permute forall iteration order to
//! exercise the for/forall contract dynamically.
//!
//! Under permutation, additive reductions buffer their terms keyed by the
//! sequential loop-index order and fold in that canonical order, so outputs
//! are bit-identical across permutation seeds.

use super::{ExecutionTrace, Storage, TensorData};
use crate::codegen::{KExpr, KLoopKind, Kernel, KernelStmt, Resolved};
use crate::fragments::FragmentMode;
use crate::frontend::{BinaryOp, IndexExpr, ReduceOp, StorageSpec, UnaryOp};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("missing input tensor `{0}`")]
    MissingInput(String),
    #[error("input `{tensor}` does not match the kernel's storage or extents (expected {expected:?})")]
    InputMismatch { tensor: String, expected: Vec<i64> },
    #[error("read of uninitialized workspace slot {slot} of `{ws}`")]
    UninitializedWorkspace { ws: String, slot: i64 },
    #[error("read of incomplete slice {segment} of output `{tensor}`")]
    IncompleteSlice { tensor: String, segment: i64 },
    #[error("division by zero computing `{0}`")]
    DivisionByZero(String),
    #[error("sqrt of negative value computing `{0}`")]
    NegativeSqrt(String),
    #[error("non-finite value computing `{0}`")]
    NonFinite(String),
    #[error("stored slice {segment} of `{tensor}` does not hold coordinate {expected} at its {side} edge")]
    EdgeMismatch { tensor: String, segment: i64, expected: i64, side: &'static str },
    #[error("structural violation in `{tensor}`: {message}")]
    Structure { tensor: String, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct InterpretOptions {
    /// Shuffle every forall's iteration order with this seed.
    pub permute_foralls: Option<u64>,
    /// Diagnostic: shuffle `for` loops too (must break order-dependent
    /// kernels).
    pub permute_fors: bool,
}

struct WorkspaceState {
    vals: Vec<f64>,
    set: Vec<bool>,
    /// Slice loads mark every slot readable (absent entries are zeros).
    all_valid: bool,
}

#[derive(Default)]
struct SliceBuilder {
    segments: BTreeMap<i64, Vec<(i64, f64)>>,
    complete: std::collections::BTreeSet<i64>,
}

#[derive(Clone, Copy)]
enum SeqVal {
    Value(f64),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
enum CellKey {
    Dense(String, i64),
    Workspace(String, i64),
}

struct Pending {
    op: ReduceOp,
    terms: Vec<(Vec<i64>, f64)>,
}

pub struct Env<'k> {
    kernel: &'k Kernel,
    dims: BTreeMap<String, Vec<i64>>,
    tensors: BTreeMap<String, TensorData>,
    builders: BTreeMap<String, SliceBuilder>,
    workspaces: BTreeMap<String, WorkspaceState>,
    vars: BTreeMap<String, i64>,
    seq: BTreeMap<String, Vec<SeqVal>>,
    locals: BTreeMap<usize, f64>,
    loop_stack: Vec<i64>,
    pending: BTreeMap<CellKey, Pending>,
    trace: ExecutionTrace,
    rng: Option<ChaCha8Rng>,
    permute_fors: bool,
}

/// Runs a kernel over the inputs; outputs are allocated per the kernel's
/// dimension table, seeded with the initial values.
pub fn interpret(
    kernel: &Kernel,
    inputs: &BTreeMap<String, TensorData>,
    initial_values: &BTreeMap<(String, Vec<i64>), f64>,
    options: &InterpretOptions,
) -> Result<(BTreeMap<String, TensorData>, ExecutionTrace), RuntimeError> {
    let mut dims: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for (t, exprs) in &kernel.dims {
        let sizes: Vec<i64> = exprs
            .iter()
            .map(|e| match e.var.as_deref() {
                None => e.offset,
                Some(v) => kernel.extents.get(v).copied().unwrap_or(0) + e.offset,
            })
            .collect();
        dims.insert(t.clone(), sizes);
    }

    let mut env = Env {
        kernel,
        dims,
        tensors: BTreeMap::new(),
        builders: BTreeMap::new(),
        workspaces: BTreeMap::new(),
        vars: BTreeMap::new(),
        seq: BTreeMap::new(),
        locals: BTreeMap::new(),
        loop_stack: Vec::new(),
        pending: BTreeMap::new(),
        trace: ExecutionTrace { seed: options.permute_foralls, ..Default::default() },
        rng: options.permute_foralls.map(ChaCha8Rng::seed_from_u64),
        permute_fors: options.permute_fors,
    };

    for p in &kernel.params {
        if p.output {
            if p.storage.is_all_dense() {
                let sizes = env.dims.get(&p.tensor).cloned().unwrap_or_default();
                let init = kernel.output_inits.get(&p.tensor).copied().unwrap_or(0.0);
                let mut t = if init == 0.0 {
                    TensorData::zeros(StorageSpec::dense(sizes.len()), sizes)
                } else {
                    TensorData::filled(StorageSpec::dense(sizes.len()), sizes, init)
                };
                for ((name, coords), v) in initial_values {
                    if name == &p.tensor {
                        t.set(coords, *v);
                    }
                }
                env.tensors.insert(p.tensor.clone(), t);
            } else {
                env.builders.insert(p.tensor.clone(), SliceBuilder::default());
            }
        } else {
            let data = inputs
                .get(&p.tensor)
                .ok_or_else(|| RuntimeError::MissingInput(p.tensor.clone()))?;
            data.check_structure().map_err(|e| RuntimeError::Structure {
                tensor: p.tensor.clone(),
                message: e.to_string(),
            })?;
            if data.spec.levels != p.storage.levels {
                return Err(RuntimeError::InputMismatch {
                    tensor: p.tensor.clone(),
                    expected: env.dims.get(&p.tensor).cloned().unwrap_or_default(),
                });
            }
            env.tensors.insert(p.tensor.clone(), data.clone());
        }
    }
    for t in &kernel.temps {
        let sizes = env.dims.get(&t.tensor).cloned().unwrap_or_default();
        let data = TensorData::filled(StorageSpec::dense(sizes.len()), sizes, t.init);
        env.tensors.insert(t.tensor.clone(), data);
    }

    env.run_body(&kernel.body)?;
    env.flush_all_pending();

    // Finalize outputs.
    let mut outputs = BTreeMap::new();
    for p in &kernel.params {
        if !p.output {
            continue;
        }
        if p.storage.is_all_dense() {
            outputs.insert(p.tensor.clone(), env.tensors.remove(&p.tensor).unwrap());
        } else {
            let b = env.builders.remove(&p.tensor).unwrap();
            let sizes = env.dims.get(&p.tensor).cloned().unwrap_or_default();
            let segments: usize = p.storage.levels[..p.storage.levels.len() - 1]
                .iter()
                .map(|(d, _)| sizes[*d].max(0) as usize)
                .product();
            let mut pos = vec![0i64; segments + 1];
            let mut crd = Vec::new();
            let mut vals = Vec::new();
            for s in 0..segments {
                if let Some(entries) = b.segments.get(&(s as i64)) {
                    for (c, v) in entries {
                        crd.push(*c);
                        vals.push(*v);
                    }
                }
                pos[s + 1] = crd.len() as i64;
            }
            let data = TensorData {
                spec: p.storage.clone(),
                extents: sizes,
                storage: Storage::Compressed { pos, crd, vals },
            };
            data.check_structure().map_err(|e| RuntimeError::Structure {
                tensor: p.tensor.clone(),
                message: e.to_string(),
            })?;
            outputs.insert(p.tensor.clone(), data);
        }
    }
    Ok((outputs, env.trace))
}

impl<'k> Env<'k> {
    fn resolve_index(&self, e: &IndexExpr) -> i64 {
        match e.var.as_deref() {
            None => e.offset,
            Some(v) => {
                let base = self
                    .vars
                    .get(v)
                    .copied()
                    .or_else(|| self.kernel.extents.get(v).copied())
                    .unwrap_or(0);
                base + e.offset
            }
        }
    }

    fn dim_of(&self, tensor: &str, d: usize) -> i64 {
        self.dims.get(tensor).and_then(|v| v.get(d)).copied().unwrap_or(0)
    }

    fn run_body(&mut self, body: &[KernelStmt]) -> Result<(), RuntimeError> {
        for s in body {
            self.run_stmt(s)?;
        }
        Ok(())
    }

    fn run_stmt(&mut self, s: &KernelStmt) -> Result<(), RuntimeError> {
        match s {
            KernelStmt::DenseLoop { var, lower, upper, kind, body, .. } => {
                let lo = self.resolve_index(lower);
                let hi = self.resolve_index(upper);
                let mut order: Vec<i64> = (lo..hi).collect();
                self.maybe_permute(*kind, &mut order);
                for v in order {
                    self.vars.insert(var.clone(), v);
                    self.loop_stack.push(v);
                    self.run_body(body)?;
                    self.loop_stack.pop();
                }
                self.vars.remove(var);
                Ok(())
            }
            KernelStmt::CompressedLoop { var, tensor, over_mask, segment, lower, upper, kind, body, .. } => {
                let seg: Vec<i64> = segment.iter().map(|e| self.resolve_index(e)).collect();
                let mut entries = self.slice_entries(tensor, &seg)?;
                if let Some(lo) = lower {
                    let lo = self.resolve_index(lo);
                    entries.retain(|(c, _)| *c >= lo);
                }
                if let Some(hi) = upper {
                    let hi = self.resolve_index(hi);
                    entries.retain(|(c, _)| *c < hi);
                }
                self.maybe_permute(*kind, &mut entries);
                for (c, v) in entries {
                    self.vars.insert(var.clone(), c);
                    self.loop_stack.push(c);
                    if !over_mask {
                        self.seq.entry(tensor.clone()).or_default().push(SeqVal::Value(v));
                    }
                    self.run_body(body)?;
                    if !over_mask {
                        self.seq.get_mut(tensor).unwrap().pop();
                    }
                    self.loop_stack.pop();
                }
                self.vars.remove(var);
                Ok(())
            }
            KernelStmt::CoIterLoop { var, union, left, right, lower, upper, body } => {
                let lseg: Vec<i64> = left.1.iter().map(|e| self.resolve_index(e)).collect();
                let rseg: Vec<i64> = right.1.iter().map(|e| self.resolve_index(e)).collect();
                let le = self.slice_entries(&left.0, &lseg)?;
                let re = self.slice_entries(&right.0, &rseg)?;
                let lo = lower.as_ref().map(|e| self.resolve_index(e));
                let hi = upper.as_ref().map(|e| self.resolve_index(e));
                let (mut i, mut j) = (0usize, 0usize);
                loop {
                    let lc = le.get(i).map(|(c, _)| *c);
                    let rc = re.get(j).map(|(c, _)| *c);
                    let c = match (lc, rc, *union) {
                        (None, None, _) => break,
                        (Some(a), Some(b), false) => {
                            if a < b {
                                i += 1;
                                continue;
                            }
                            if b < a {
                                j += 1;
                                continue;
                            }
                            a
                        }
                        (Some(a), Some(b), true) => a.min(b),
                        (Some(a), None, true) => a,
                        (None, Some(b), true) => b,
                        _ => break,
                    };
                    let lv = if lc == Some(c) { le[i].1 } else { 0.0 };
                    let rv = if rc == Some(c) { re[j].1 } else { 0.0 };
                    let in_bounds = lo.map_or(true, |l| c >= l) && hi.map_or(true, |h| c < h);
                    if in_bounds {
                        self.vars.insert(var.clone(), c);
                        self.loop_stack.push(c);
                        self.seq.entry(left.0.clone()).or_default().push(SeqVal::Value(lv));
                        self.seq.entry(right.0.clone()).or_default().push(SeqVal::Value(rv));
                        self.run_body(body)?;
                        self.seq.get_mut(&right.0).unwrap().pop();
                        self.seq.get_mut(&left.0).unwrap().pop();
                        self.loop_stack.pop();
                    }
                    if lc == Some(c) {
                        i += 1;
                    }
                    if rc == Some(c) {
                        j += 1;
                    }
                }
                self.vars.remove(var);
                Ok(())
            }
            KernelStmt::WorkspaceInit { ws, size_of, init } => {
                let n = self.dim_of(&size_of.0, size_of.1).max(0) as usize;
                self.workspaces.insert(
                    ws.clone(),
                    WorkspaceState { vals: vec![*init; n], set: vec![false; n], all_valid: false },
                );
                Ok(())
            }
            KernelStmt::WorkspaceLoadSlice { ws, tensor, segment } => {
                let seg: Vec<i64> = segment.iter().map(|e| self.resolve_index(e)).collect();
                let entries = self.slice_entries(tensor, &seg)?;
                let (t, d) = self
                    .kernel
                    .workspaces
                    .iter()
                    .find(|w| w.ws == *ws)
                    .map(|w| w.size_of.clone())
                    .expect("workspace declared");
                let n = self.dim_of(&t, d).max(0) as usize;
                let mut state = WorkspaceState { vals: vec![0.0; n], set: vec![false; n], all_valid: true };
                let mut count = 0;
                for (c, v) in entries {
                    state.vals[c as usize] = v;
                    count += 1;
                }
                *self.trace.loads.entry(tensor.clone()).or_insert(0) += count;
                self.workspaces.insert(ws.clone(), state);
                Ok(())
            }
            KernelStmt::WorkspaceCompress { ws, tensor, segment } => {
                let seg: Vec<i64> = segment.iter().map(|e| self.resolve_index(e)).collect();
                let seg_index = self.fold_segment(tensor, &seg);
                let state = self.workspaces.get(ws).expect("workspace initialized");
                let mut entries = Vec::new();
                for (i, set) in state.set.iter().enumerate() {
                    if *set {
                        entries.push((i as i64, state.vals[i]));
                    }
                }
                *self.trace.stores.entry(tensor.clone()).or_insert(0) += entries.len() as u64;
                let b = self.builders.get_mut(tensor).expect("builder for compressed output");
                b.segments.insert(seg_index, entries);
                b.complete.insert(seg_index);
                Ok(())
            }
            KernelStmt::Bind { local, access } => {
                let v = self.load(access)?;
                self.locals.insert(*local, v);
                Ok(())
            }
            KernelStmt::Compute { lhs, mode, rhs } => {
                let value = self.eval(rhs, lhs)?;
                match mode {
                    FragmentMode::Assign => {
                        let key = self.cell_key(lhs)?;
                        self.flush_cell(&key);
                        self.store(lhs, value)?;
                    }
                    FragmentMode::Reduce(op) => {
                        let key = self.cell_key(lhs)?;
                        if self.rng.is_some() {
                            let path = self.loop_stack.clone();
                            self.pending
                                .entry(key)
                                .or_insert_with(|| Pending { op: *op, terms: Vec::new() })
                                .terms
                                .push((path, value));
                            // Count the read-modify-write now so traces stay
                            // permutation-independent.
                            self.count_load(lhs);
                            self.count_store(lhs);
                        } else {
                            let old = self.load_for_accumulate(lhs)?;
                            self.store(lhs, op.apply(old, value))?;
                        }
                    }
                }
                Ok(())
            }
        }
    }

    fn maybe_permute<T>(&mut self, kind: KLoopKind, items: &mut [T]) {
        let permute = match kind {
            KLoopKind::Forall => self.rng.is_some(),
            KLoopKind::For => self.permute_fors && self.rng.is_some(),
        };
        if permute {
            if let Some(rng) = &mut self.rng {
                items.shuffle(rng);
            }
        }
    }

    fn fold_segment(&self, tensor: &str, seg: &[i64]) -> i64 {
        let spec = self
            .tensors
            .get(tensor)
            .map(|t| t.spec.clone())
            .or_else(|| {
                self.kernel
                    .params
                    .iter()
                    .find(|p| p.tensor == tensor)
                    .map(|p| p.storage.clone())
            })
            .expect("known tensor");
        let mut off = 0i64;
        for (k, (d, _)) in spec.levels[..spec.levels.len() - 1].iter().enumerate() {
            off = off * self.dim_of(tensor, *d) + seg[k];
        }
        off
    }

    /// Stored (coordinate, value) entries of one slice of a compressed
    /// tensor, mask pattern, or partially-built output.
    fn slice_entries(&mut self, tensor: &str, seg: &[i64]) -> Result<Vec<(i64, f64)>, RuntimeError> {
        let seg_index = self.fold_segment(tensor, seg);
        if let Some(b) = self.builders.get(tensor) {
            if !b.complete.contains(&seg_index) {
                return Err(RuntimeError::IncompleteSlice { tensor: tensor.to_string(), segment: seg_index });
            }
            return Ok(b.segments.get(&seg_index).cloned().unwrap_or_default());
        }
        let data = self
            .tensors
            .get(tensor)
            .ok_or_else(|| RuntimeError::MissingInput(tensor.to_string()))?;
        match &data.storage {
            Storage::Compressed { pos, crd, vals } => {
                let (lo, hi) = (pos[seg_index as usize] as usize, pos[seg_index as usize + 1] as usize);
                Ok(crd[lo..hi].iter().copied().zip(vals[lo..hi].iter().copied()).collect())
            }
            Storage::Dense(_) => {
                // Dense tensors can still be walked as if compressed.
                let cdim = *data.spec.levels.last().map(|(d, _)| d).unwrap_or(&0);
                let n = data.extents[cdim];
                let mut coords: Vec<i64> = vec![0; data.rank()];
                for (k, (d, _)) in data.spec.levels[..data.spec.levels.len() - 1].iter().enumerate() {
                    coords[*d] = seg[k];
                }
                let mut out = Vec::new();
                for c in 0..n {
                    coords[cdim] = c;
                    out.push((c, data.get(&coords)));
                }
                Ok(out)
            }
        }
    }

    fn cell_key(&self, r: &Resolved) -> Result<CellKey, RuntimeError> {
        Ok(match r {
            Resolved::Dense { tensor, indices } => {
                let coords: Vec<i64> = indices.iter().map(|e| self.resolve_index(e)).collect();
                let data = self.tensors.get(tensor).expect("dense tensor present");
                CellKey::Dense(tensor.clone(), data.dense_offset(&coords) as i64)
            }
            Resolved::Workspace { ws, index } => CellKey::Workspace(ws.clone(), self.resolve_index(index)),
            _ => unreachable!("computes write dense cells or workspace slots"),
        })
    }

    fn flush_cell(&mut self, key: &CellKey) {
        if let Some(p) = self.pending.remove(key) {
            let mut terms = p.terms;
            terms.sort_by(|a, b| a.0.cmp(&b.0));
            let (mut acc, loaded) = match key {
                CellKey::Dense(t, off) => {
                    let data = self.tensors.get(t).expect("tensor");
                    match &data.storage {
                        Storage::Dense(v) => (v[*off as usize], true),
                        _ => (p.op.identity(), false),
                    }
                }
                CellKey::Workspace(ws, slot) => {
                    let state = self.workspaces.get(ws).expect("workspace");
                    if state.set[*slot as usize] || state.all_valid {
                        (state.vals[*slot as usize], true)
                    } else {
                        (p.op.identity(), false)
                    }
                }
            };
            if !loaded {
                acc = p.op.identity();
            }
            for (_, v) in terms {
                acc = p.op.apply(acc, v);
            }
            match key {
                CellKey::Dense(t, off) => {
                    if let Some(data) = self.tensors.get_mut(t) {
                        if let Storage::Dense(v) = &mut data.storage {
                            v[*off as usize] = acc;
                        }
                    }
                }
                CellKey::Workspace(ws, slot) => {
                    if let Some(state) = self.workspaces.get_mut(ws) {
                        state.vals[*slot as usize] = acc;
                        state.set[*slot as usize] = true;
                    }
                }
            }
        }
    }

    fn flush_all_pending(&mut self) {
        let keys: Vec<CellKey> = self.pending.keys().cloned().collect();
        for k in keys {
            self.flush_cell(&k);
        }
    }

    fn count_load(&mut self, r: &Resolved) {
        *self.trace.loads.entry(r.tensor_name().to_string()).or_insert(0) += 1;
    }

    fn count_store(&mut self, r: &Resolved) {
        *self.trace.stores.entry(r.tensor_name().to_string()).or_insert(0) += 1;
    }

    /// Accumulation reads its own target; unset workspace slots yield their
    /// initialization value rather than an error.
    fn load_for_accumulate(&mut self, r: &Resolved) -> Result<f64, RuntimeError> {
        if let Resolved::Workspace { ws, index } = r {
            let slot = self.resolve_index(index) as usize;
            let v = self.workspaces.get(ws).expect("workspace active").vals[slot];
            self.count_load(r);
            return Ok(v);
        }
        self.load(r)
    }

    fn load(&mut self, r: &Resolved) -> Result<f64, RuntimeError> {
        // Reads must observe any buffered reduction terms.
        if matches!(r, Resolved::Dense { .. } | Resolved::Workspace { .. }) {
            let key = self.cell_key(r)?;
            self.flush_cell(&key);
        }
        self.count_load(r);
        match r {
            Resolved::Dense { tensor, indices } => {
                let coords: Vec<i64> = indices.iter().map(|e| self.resolve_index(e)).collect();
                let data = self.tensors.get(tensor).expect("dense tensor present");
                Ok(data.get(&coords))
            }
            Resolved::SequentialPos { tensor } => {
                let stack = self.seq.get(tensor).expect("sequential driver bound");
                let SeqVal::Value(v) = *stack.last().expect("driver value");
                Ok(v)
            }
            Resolved::Workspace { ws, index } => {
                let slot = self.resolve_index(index);
                let state = self.workspaces.get(ws).expect("workspace active");
                let i = slot as usize;
                if !state.all_valid && !state.set[i] {
                    return Err(RuntimeError::UninitializedWorkspace { ws: ws.clone(), slot });
                }
                Ok(state.vals[i])
            }
            Resolved::EdgeOfSlice { tensor, segment, expect, last } => {
                let seg: Vec<i64> = segment.iter().map(|e| self.resolve_index(e)).collect();
                let entries = self.slice_entries(tensor, &seg)?;
                let expected = self.resolve_index(expect);
                let side = if *last { "last" } else { "first" };
                let edge = if *last { entries.last() } else { entries.first() };
                match edge {
                    Some((c, v)) if *c == expected => Ok(*v),
                    _ => Err(RuntimeError::EdgeMismatch {
                        tensor: tensor.clone(),
                        segment: self.fold_segment(tensor, &seg),
                        expected,
                        side,
                    }),
                }
            }
            Resolved::Search { tensor, segment, coord } => {
                self.trace.searches += 1;
                let seg: Vec<i64> = segment.iter().map(|e| self.resolve_index(e)).collect();
                let entries = self.slice_entries(tensor, &seg)?;
                let key = self.resolve_index(coord);
                Ok(match entries.binary_search_by_key(&key, |(c, _)| *c) {
                    Ok(i) => entries[i].1,
                    Err(_) => 0.0,
                })
            }
        }
    }

    fn store(&mut self, r: &Resolved, value: f64) -> Result<(), RuntimeError> {
        self.count_store(r);
        match r {
            Resolved::Dense { tensor, indices } => {
                let coords: Vec<i64> = indices.iter().map(|e| self.resolve_index(e)).collect();
                let data = self.tensors.get_mut(tensor).expect("dense tensor present");
                data.set(&coords, value);
                Ok(())
            }
            Resolved::Workspace { ws, index } => {
                let slot = self.resolve_index(index) as usize;
                let state = self.workspaces.get_mut(ws).expect("workspace active");
                state.vals[slot] = value;
                state.set[slot] = true;
                Ok(())
            }
            _ => unreachable!("writes resolve to dense or workspace"),
        }
    }

    fn eval(&mut self, e: &KExpr, stmt: &Resolved) -> Result<f64, RuntimeError> {
        Ok(match e {
            KExpr::Const(c) => *c,
            KExpr::Local(id) => *self.locals.get(id).expect("local bound"),
            KExpr::Unary(UnaryOp::Neg, c) => -self.eval(c, stmt)?,
            KExpr::Unary(UnaryOp::Sqrt, c) => {
                let v = self.eval(c, stmt)?;
                if v < 0.0 {
                    return Err(RuntimeError::NegativeSqrt(describe(stmt)));
                }
                v.sqrt()
            }
            KExpr::Binary(op, l, r) => {
                let l = self.eval(l, stmt)?;
                let r = self.eval(r, stmt)?;
                let v = match op {
                    BinaryOp::Add => super::saturating_add(l, r),
                    BinaryOp::Sub => l - r,
                    BinaryOp::Mul => l * r,
                    BinaryOp::Div => {
                        if r == 0.0 {
                            return Err(RuntimeError::DivisionByZero(describe(stmt)));
                        }
                        l / r
                    }
                    BinaryOp::Min => l.min(r),
                    BinaryOp::Max => l.max(r),
                };
                if v.is_nan() {
                    return Err(RuntimeError::NonFinite(describe(stmt)));
                }
                v
            }
        })
    }
}

fn describe(r: &Resolved) -> String {
    format!("{r:?}")
}
