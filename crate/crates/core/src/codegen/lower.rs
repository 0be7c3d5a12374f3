//! Lowering RIN to storage-aware kernels.
//!
//! Loop by loop: a compressed read whose coordinate is the loop variable
//! and whose slice is fixed by outer loops may drive the loop; writes that
//! scatter along the loop variable force dense (or mask-driven) iteration.
//! Compressed outputs are assembled through a dense per-slice workspace;
//! compressed inputs read against the storage order are either hoisted
//! into row workspaces or resolved by binary search, the latter with a
//! performance warning.

use super::{
    KExpr, KLoopKind, Kernel, KernelStmt, Resolved, TempTensor, TensorParam, Workspace,
};
use crate::fragments::{FragmentMode, MinimalFragment};
use crate::frontend::{
    BinaryOp, ConstraintSystem, IndexExpr, ProgramSpec, ReduceOp, ScalarExpr, StorageSpec, TensorAccess,
};
use crate::rin::{LoopKind, RinLoop, RinProgram, RinStmt};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("compressed output `{0}` is written in an order that cannot be slice-buffered")]
    UnsupportedScatter(String),
    #[error("cannot size dimension {dim} of `{tensor}`")]
    NoExtent { tensor: String, dim: usize },
    #[error("alias `{0}` mixes reduction operators")]
    MixedReduction(String),
    #[error("initial values into compressed output `{0}` are not supported")]
    CompressedInit(String),
}

#[derive(Debug, Clone, Default)]
struct Scope {
    enclosing: Vec<String>,
    /// Tensor accesses currently driven sequentially by a compressed loop.
    drivers: Vec<TensorAccess>,
    /// (tensor, segment exprs, workspace) of loaded input slices.
    loaded: Vec<(String, Vec<IndexExpr>, String)>,
    /// (tensor, slice exprs, workspace) of active output assemblies.
    assembling: Vec<(String, Vec<IndexExpr>, String)>,
}

struct Assembly {
    tensor: String,
    ws: String,
    /// Lhs expressions of the prefix (dense) dimensions, level order.
    prefix: Vec<IndexExpr>,
    /// Loop that owns one slice per iteration.
    loop_id: usize,
    compressed_dim: usize,
}

struct Lowerer<'a> {
    spec: &'a ProgramSpec,
    prog: &'a RinProgram,
    storage: BTreeMap<String, StorageSpec>,
    aliases: BTreeSet<String>,
    produced: BTreeSet<String>,
    dims: BTreeMap<String, Vec<IndexExpr>>,
    assemblies: Vec<Assembly>,
    warnings: Vec<String>,
    workspaces: Vec<Workspace>,
    next_local: usize,
    /// Per-tensor diagonal orientation: accesses' coordinate vs segment.
    diag_side: BTreeMap<String, DiagSide>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DiagSide {
    CoordAtMostSegment,
    CoordAtLeastSegment,
    Mixed,
}

pub fn lower_to_kernel(prog: &RinProgram, spec: &ProgramSpec, name: &str) -> Result<Kernel, CodegenError> {
    let frags: Vec<MinimalFragment> = prog.assignments().iter().map(|(f, _)| (*f).clone()).collect();
    let outputs = spec.output_tensors();
    let inputs = spec.input_tensors();
    let produced: BTreeSet<String> = frags.iter().map(|f| f.lhs.tensor.clone()).collect();
    let aliases: BTreeSet<String> = produced.iter().filter(|t| !outputs.contains(t)).cloned().collect();

    let mut storage: BTreeMap<String, StorageSpec> = BTreeMap::new();
    for f in &frags {
        let t = &f.lhs.tensor;
        let s = if aliases.contains(t) {
            StorageSpec::dense(f.lhs.indices.len())
        } else {
            spec.storage_of(t)
        };
        storage.insert(t.clone(), s);
        for a in f.rhs.accesses() {
            storage
                .entry(a.tensor.clone())
                .or_insert_with(|| spec.storage_of(&a.tensor));
        }
    }

    let dims = derive_dims(spec, &frags)?;
    let diag_side = diag_sides(spec, &frags, &storage);

    let mut lw = Lowerer {
        spec,
        prog,
        storage,
        aliases,
        produced,
        dims,
        assemblies: Vec::new(),
        warnings: Vec::new(),
        workspaces: Vec::new(),
        next_local: 0,
        diag_side,
    };
    lw.find_assemblies()?;

    let mut scope = Scope::default();
    let body = lw.lower_body(&prog.body, &mut scope)?;

    // Parameters: outputs in first-write order, then inputs, then masks.
    let mut params = Vec::new();
    for t in &outputs {
        params.push(TensorParam {
            tensor: t.clone(),
            storage: lw.storage[t].clone(),
            rank: spec.tensor_rank(t).unwrap_or(0),
            output: true,
            pattern_only: false,
        });
    }
    for t in &inputs {
        params.push(TensorParam {
            tensor: t.clone(),
            storage: spec.storage_of(t),
            rank: spec.tensor_rank(t).unwrap_or(0),
            output: false,
            pattern_only: false,
        });
    }
    // Only masks the kernel actually iterates become parameters.
    let mut used_masks: BTreeSet<String> = BTreeSet::new();
    collect_mask_uses(&body, &mut used_masks);
    for (t, s) in &spec.storage {
        for (mi, m) in s.masks.iter().enumerate() {
            let name = mask_name(t, mi);
            if used_masks.contains(&name) {
                params.push(TensorParam {
                    tensor: name,
                    storage: m.clone(),
                    rank: m.levels.len(),
                    output: false,
                    pattern_only: true,
                });
            }
        }
    }

    // Alias temporaries carry their reduction identity.
    let mut temps = Vec::new();
    for t in &lw.aliases {
        let mut init: Option<f64> = None;
        for f in frags.iter().filter(|f| f.lhs.tensor == *t) {
            let id = match f.mode {
                FragmentMode::Reduce(op) => op.identity(),
                FragmentMode::Assign => 0.0,
            };
            match init {
                None => init = Some(id),
                Some(prev) if prev != id => return Err(CodegenError::MixedReduction(t.clone())),
                _ => {}
            }
        }
        temps.push(TempTensor { tensor: t.clone(), init: init.unwrap_or(0.0) });
    }

    // Bare-reduction outputs start at the reduction identity.
    let mut output_inits = BTreeMap::new();
    for f in &frags {
        if let FragmentMode::Reduce(op) = f.mode {
            if outputs.contains(&f.lhs.tensor) && op.identity() != 0.0 {
                output_inits.insert(f.lhs.tensor.clone(), op.identity());
            }
        }
    }
    for t in &outputs {
        let compressed = !lw.storage[t].is_all_dense();
        if compressed && spec.initial_values.keys().any(|(n, _)| n == t) {
            return Err(CodegenError::CompressedInit(t.clone()));
        }
    }

    Ok(Kernel {
        name: name.to_string(),
        params,
        temps,
        workspaces: lw.workspaces.clone(),
        body,
        warnings: lw.warnings.clone(),
        extents: spec.extents.clone(),
        dims: lw.dims.clone(),
        output_inits,
    })
}

pub(crate) fn mask_name(tensor: &str, idx: usize) -> String {
    format!("{tensor}_mask{idx}")
}

fn collect_mask_uses(body: &[KernelStmt], out: &mut BTreeSet<String>) {
    for s in body {
        match s {
            KernelStmt::CompressedLoop { tensor, over_mask, body, .. } => {
                if *over_mask {
                    out.insert(tensor.clone());
                }
                collect_mask_uses(body, out);
            }
            KernelStmt::DenseLoop { body, .. } | KernelStmt::CoIterLoop { body, .. } => {
                collect_mask_uses(body, out)
            }
            _ => {}
        }
    }
}

/// Symbolic dimension sizes per tensor: the largest access upper bound,
/// chained until an extent symbol. The numeric values agree with the
/// oracle's extent derivation by construction (same constraint systems).
fn derive_dims(spec: &ProgramSpec, frags: &[MinimalFragment]) -> Result<BTreeMap<String, Vec<IndexExpr>>, CodegenError> {
    let mut dims: BTreeMap<String, Vec<(IndexExpr, i64)>> = BTreeMap::new();
    for f in frags {
        let sys = augmented(f, spec);
        let visit = |a: &TensorAccess, dims: &mut BTreeMap<String, Vec<(IndexExpr, i64)>>| {
            let entry = dims.entry(a.tensor.clone()).or_default();
            if entry.len() < a.indices.len() {
                entry.resize(a.indices.len(), (IndexExpr::constant(0), -1));
            }
            for (d, e) in a.indices.iter().enumerate() {
                let Some(n) = sys.numeric_max(e) else { continue };
                let size = n + 1;
                if size > entry[d].1 {
                    let sym = symbolic_upper(e, f, spec).unwrap_or(IndexExpr::constant(size));
                    entry[d] = (sym, size);
                }
            }
        };
        visit(&f.lhs, &mut dims);
        for a in f.rhs.accesses() {
            visit(a, &mut dims);
        }
    }
    // Initial values can extend output dimensions beyond the access ranges.
    for (t, coords) in spec.initial_values.keys() {
        let entry = dims.entry(t.clone()).or_default();
        if entry.len() < coords.len() {
            entry.resize(coords.len(), (IndexExpr::constant(0), -1));
        }
        for (d, &c) in coords.iter().enumerate() {
            if c + 1 > entry[d].1 {
                entry[d] = (IndexExpr::constant(c + 1), c + 1);
            }
        }
    }
    let mut out = BTreeMap::new();
    for (t, sizes) in dims {
        let mut v = Vec::new();
        for (d, (sym, n)) in sizes.iter().enumerate() {
            if *n < 0 {
                return Err(CodegenError::NoExtent { tensor: t.clone(), dim: d });
            }
            v.push(sym.clone());
        }
        out.insert(t, v);
    }
    Ok(out)
}

/// Exclusive upper bound of an access expression, chained through variable
/// bounds (`k < j < i < N` gives `N-2` for `k`) until an extent symbol or
/// constant.
fn symbolic_upper(e: &IndexExpr, f: &MinimalFragment, spec: &ProgramSpec) -> Option<IndexExpr> {
    let v = e.var.as_deref()?;
    if spec.extents.contains_key(v) {
        return Some(e.shifted(1));
    }
    let space = crate::fragments::iteration_space(v, &f.constraints, &spec.extents).ok()?;
    let (_, hi) = space.canonical();
    let mut upper = hi.shifted(e.offset);
    for _ in 0..8 {
        match upper.var.as_deref() {
            None => return Some(upper),
            Some(u) if spec.extents.contains_key(u) => return Some(upper),
            Some(u) => {
                let space = crate::fragments::iteration_space(u, &f.constraints, &spec.extents).ok()?;
                let (_, h) = space.canonical();
                // dim < u+c and u < h imply dim < h+c-1.
                upper = h.shifted(upper.offset - 1);
            }
        }
    }
    None
}

fn augmented(f: &MinimalFragment, spec: &ProgramSpec) -> ConstraintSystem {
    crate::fragments::grounded_system(&f.constraints, &f.used_vars(), &spec.extents)
}

/// Orientation of every access to a compressed tensor: does the coordinate
/// (compressed-dim) expression stay on one side of the segment expression?
fn diag_sides(
    spec: &ProgramSpec,
    frags: &[MinimalFragment],
    storage: &BTreeMap<String, StorageSpec>,
) -> BTreeMap<String, DiagSide> {
    let mut out = BTreeMap::new();
    for (t, s) in storage {
        if s.is_all_dense() || s.levels.len() != 2 {
            continue;
        }
        let cdim = s.levels.last().unwrap().0;
        let sdim = s.levels[0].0;
        let mut at_most = true;
        let mut at_least = true;
        for f in frags {
            let sys = augmented(f, spec);
            let mut visit = |a: &TensorAccess| {
                if a.tensor != *t {
                    return;
                }
                let coord = &a.indices[cdim];
                let seg = &a.indices[sdim];
                if !sys.implies_le(coord, seg) {
                    at_most = false;
                }
                if !sys.implies_le(seg, coord) {
                    at_least = false;
                }
            };
            visit(&f.lhs);
            for a in f.rhs.accesses() {
                visit(a);
            }
        }
        let side = match (at_most, at_least) {
            (true, _) => DiagSide::CoordAtMostSegment,
            (_, true) => DiagSide::CoordAtLeastSegment,
            _ => DiagSide::Mixed,
        };
        out.insert(t.clone(), side);
    }
    out
}

impl<'a> Lowerer<'a> {
    fn find_assemblies(&mut self) -> Result<(), CodegenError> {
        let outputs = self.spec.output_tensors();
        for t in &outputs {
            let s = &self.storage[t];
            if s.is_all_dense() {
                continue;
            }
            let cdim = s.levels.last().unwrap().0;
            let prefix_dims: Vec<usize> = s.levels[..s.levels.len() - 1].iter().map(|(d, _)| *d).collect();
            let writers: Vec<(&MinimalFragment, Vec<&RinLoop>)> = self
                .prog
                .assignments()
                .into_iter()
                .filter(|(f, _)| f.lhs.tensor == *t)
                .collect();
            if writers.is_empty() {
                continue;
            }
            // All writers must agree on bare slice variables per prefix dim.
            let mut prefix: Vec<IndexExpr> = Vec::new();
            for &d in &prefix_dims {
                let e = writers[0].0.lhs.indices[d].clone();
                if e.var.is_none() || e.offset != 0 {
                    return Err(CodegenError::UnsupportedScatter(t.clone()));
                }
                if writers.iter().any(|(f, _)| f.lhs.indices[d] != e) {
                    return Err(CodegenError::UnsupportedScatter(t.clone()));
                }
                prefix.push(e);
            }
            // The slice loop: the unique loop over the innermost prefix
            // variable enclosing every writer.
            let slice_var = prefix.last().unwrap().var.clone().unwrap();
            let mut loop_id: Option<usize> = None;
            for (_, loops) in &writers {
                let Some(l) = loops.iter().rev().find(|l| l.var == slice_var) else {
                    return Err(CodegenError::UnsupportedScatter(t.clone()));
                };
                match loop_id {
                    None => loop_id = Some(l.id),
                    Some(id) if id != l.id => return Err(CodegenError::UnsupportedScatter(t.clone())),
                    _ => {}
                }
            }
            let ws = format!("ws_{t}");
            self.workspaces.push(Workspace { ws: ws.clone(), size_of: (t.clone(), cdim) });
            self.assemblies.push(Assembly {
                tensor: t.clone(),
                ws,
                prefix,
                loop_id: loop_id.unwrap(),
                compressed_dim: cdim,
            });
        }
        Ok(())
    }

    fn lower_body(&mut self, body: &[RinStmt], scope: &mut Scope) -> Result<Vec<KernelStmt>, CodegenError> {
        let loaded_mark = scope.loaded.len();
        let mut out = Vec::new();
        let mut cse: Vec<(Resolved, usize)> = Vec::new();
        for stmt in body {
            match stmt {
                RinStmt::Readiness(_) => {}
                RinStmt::Assign(frag) => {
                    self.emit_compute(frag, scope, &mut out, &mut cse)?;
                }
                RinStmt::Loop(l) => {
                    // Hoist loadable input slices used under this loop.
                    self.emit_hoists(l, scope, &mut out);
                    cse.clear();
                    let stmt = self.lower_loop(l, scope)?;
                    out.push(stmt);
                }
            }
        }
        scope.loaded.truncate(loaded_mark);
        Ok(out)
    }

    /// Loads input slices read under `l` whose segment is fixed by the
    /// current scope and whose coordinate varies with `l.var`.
    fn emit_hoists(&mut self, l: &RinLoop, scope: &mut Scope, out: &mut Vec<KernelStmt>) {
        let mut reads: Vec<TensorAccess> = Vec::new();
        collect_reads(&l.body, &mut reads);
        for a in reads {
            if self.produced.contains(&a.tensor) {
                continue;
            }
            let s = &self.storage[&a.tensor];
            if s.is_all_dense() {
                continue;
            }
            let cdim = s.levels.last().unwrap().0;
            if a.indices[cdim].var.as_deref() != Some(l.var.as_str()) {
                continue;
            }
            let segment: Vec<IndexExpr> = s.levels[..s.levels.len() - 1]
                .iter()
                .map(|(d, _)| a.indices[*d].clone())
                .collect();
            let bound = segment.iter().all(|e| match e.var.as_deref() {
                None => true,
                Some(v) => scope.enclosing.iter().any(|w| w == v),
            });
            if !bound {
                continue;
            }
            // Skip when this access will drive the loop itself.
            if self.pick_driver(l, scope).as_ref() == Some(&a) {
                continue;
            }
            self.ensure_loaded(&a.tensor, &segment, scope, out);
        }
    }

    fn ensure_loaded(
        &mut self,
        tensor: &str,
        segment: &[IndexExpr],
        scope: &mut Scope,
        out: &mut Vec<KernelStmt>,
    ) -> String {
        if let Some((_, _, ws)) = scope
            .loaded
            .iter()
            .find(|(t, seg, _)| t == tensor && seg == segment)
        {
            return ws.clone();
        }
        let ws = format!("in_{}_{}", tensor, self.workspaces.len());
        let cdim = self.storage[tensor].levels.last().unwrap().0;
        self.workspaces.push(Workspace { ws: ws.clone(), size_of: (tensor.to_string(), cdim) });
        out.push(KernelStmt::WorkspaceLoadSlice {
            ws: ws.clone(),
            tensor: tensor.to_string(),
            segment: segment.to_vec(),
        });
        scope.loaded.push((tensor.to_string(), segment.to_vec(), ws.clone()));
        ws
    }

    /// The compressed read access that can drive this loop sequentially,
    /// if any.
    fn pick_driver(&self, l: &RinLoop, scope: &Scope) -> Option<TensorAccess> {
        // Writes scattering along the loop variable force full iteration.
        let assigns = assigns_in(&l.body);
        for f in &assigns {
            if f.lhs.vars().any(|v| v == l.var) {
                return None;
            }
        }
        let mut candidates: Vec<TensorAccess> = Vec::new();
        let mut reads = Vec::new();
        collect_reads(&l.body, &mut reads);
        for a in reads {
            let s = &self.storage[&a.tensor];
            if s.is_all_dense() {
                continue;
            }
            let cdim = s.levels.last().unwrap().0;
            let e = &a.indices[cdim];
            if e.var.as_deref() != Some(l.var.as_str()) || e.offset != 0 {
                continue;
            }
            // Segment must be fixed by outer scope.
            let seg_ok = s.levels[..s.levels.len() - 1].iter().all(|(d, _)| {
                match a.indices[*d].var.as_deref() {
                    None => true,
                    Some(v) => scope.enclosing.iter().any(|w| w == v),
                }
            });
            if !seg_ok {
                continue;
            }
            // Reads of the slice being assembled resolve to the workspace.
            if scope
                .assembling
                .iter()
                .any(|(t, slice, _)| *t == a.tensor && segment_of(&a, s) == *slice)
            {
                continue;
            }
            if !candidates.contains(&a) {
                candidates.push(a);
            }
        }
        if candidates.is_empty() {
            return None;
        }
        // Zero-annihilation: skipping absent entries must be sound for
        // every statement in the loop.
        let safe_for = |c: &TensorAccess| {
            assigns.iter().all(|f| match f.mode {
                FragmentMode::Reduce(ReduceOp::Add) | FragmentMode::Assign => {
                    is_multiplicative_factor(&f.rhs, c)
                }
                _ => false,
            })
        };
        candidates.retain(|c| safe_for(c));
        candidates.first().cloned()
    }

    /// Intersection / union co-iteration over exactly two candidates.
    fn pick_coiteration(&self, l: &RinLoop, scope: &Scope) -> Option<(TensorAccess, TensorAccess, bool)> {
        let assigns = assigns_in(&l.body);
        for f in &assigns {
            if f.lhs.vars().any(|v| v == l.var) {
                return None;
            }
        }
        let mut reads = Vec::new();
        collect_reads(&l.body, &mut reads);
        let mut candidates: Vec<TensorAccess> = Vec::new();
        for a in reads {
            let s = &self.storage[&a.tensor];
            if s.is_all_dense() {
                continue;
            }
            let cdim = s.levels.last().unwrap().0;
            if a.indices[cdim].var.as_deref() != Some(l.var.as_str()) || a.indices[cdim].offset != 0 {
                continue;
            }
            let seg_ok = s.levels[..s.levels.len() - 1].iter().all(|(d, _)| {
                match a.indices[*d].var.as_deref() {
                    None => true,
                    Some(v) => scope.enclosing.iter().any(|w| w == v),
                }
            });
            if seg_ok && !candidates.contains(&a) {
                candidates.push(a);
            }
        }
        if candidates.len() != 2 {
            return None;
        }
        let (c1, c2) = (candidates[0].clone(), candidates[1].clone());
        let all_mult_both = assigns.iter().all(|f| {
            matches!(f.mode, FragmentMode::Reduce(ReduceOp::Add))
                && is_multiplicative_factor(&f.rhs, &c1)
                && is_multiplicative_factor(&f.rhs, &c2)
        });
        if all_mult_both {
            return Some((c1, c2, false));
        }
        let all_additive = assigns.iter().all(|f| {
            matches!(f.mode, FragmentMode::Reduce(ReduceOp::Add))
                && match &f.rhs {
                    ScalarExpr::Binary { op: BinaryOp::Add, left, right } => {
                        (is_multiplicative_factor(left, &c1) && is_multiplicative_factor(right, &c2))
                            || (is_multiplicative_factor(left, &c2) && is_multiplicative_factor(right, &c1))
                    }
                    _ => false,
                }
        });
        if all_additive {
            return Some((c1, c2, true));
        }
        None
    }

    fn lower_loop(&mut self, l: &RinLoop, scope: &mut Scope) -> Result<KernelStmt, CodegenError> {
        let mut inner = scope.clone();
        inner.enclosing.push(l.var.clone());

        // Output assembly activation.
        let mut header = Vec::new();
        let mut footer = Vec::new();
        for ai in 0..self.assemblies.len() {
            if self.assemblies[ai].loop_id != l.id {
                continue;
            }
            let a = &self.assemblies[ai];
            header.push(KernelStmt::WorkspaceInit {
                ws: a.ws.clone(),
                size_of: (a.tensor.clone(), a.compressed_dim),
                init: 0.0,
            });
            footer.push(KernelStmt::WorkspaceCompress {
                ws: a.ws.clone(),
                tensor: a.tensor.clone(),
                segment: a.prefix.clone(),
            });
            inner
                .assembling
                .push((a.tensor.clone(), a.prefix.clone(), a.ws.clone()));
        }

        let (lo, hi) = l.space.canonical();
        let kind = match l.kind {
            LoopKind::For => KLoopKind::For,
            LoopKind::Forall => KLoopKind::Forall,
        };

        // Mask-driven write iteration.
        if let Some((tensor, mask_idx, segment)) = self.masked_write(l, scope) {
            let mut body = header;
            body.extend(self.lower_body(&l.body, &mut inner)?);
            body.extend(footer);
            return Ok(KernelStmt::CompressedLoop {
                var: l.var.clone(),
                tensor: mask_name(&tensor, mask_idx),
                over_mask: true,
                segment,
                lower: self.trim_lower(&lo),
                upper: Some(hi),
                kind,
                parallel: l.parallel,
                body,
            });
        }

        // Single-driver compressed iteration.
        if let Some(driver) = self.pick_driver(l, scope) {
            inner.drivers.push(driver.clone());
            let s = &self.storage[&driver.tensor];
            let cdim = s.levels.last().unwrap().0;
            let segment = segment_of(&driver, s);
            let full = self.dims[&driver.tensor].get(cdim) == Some(&hi);
            let mut body = header;
            body.extend(self.lower_body(&l.body, &mut inner)?);
            body.extend(footer);
            return Ok(KernelStmt::CompressedLoop {
                var: l.var.clone(),
                tensor: driver.tensor.clone(),
                over_mask: false,
                segment,
                lower: self.trim_lower(&lo),
                upper: if full { None } else { Some(hi) },
                kind,
                parallel: l.parallel,
                body,
            });
        }

        // Two-operand co-iteration.
        if let Some((c1, c2, union)) = self.pick_coiteration(l, scope) {
            inner.drivers.push(c1.clone());
            inner.drivers.push(c2.clone());
            let s1 = &self.storage[&c1.tensor];
            let s2 = &self.storage[&c2.tensor];
            let seg1 = segment_of(&c1, s1);
            let seg2 = segment_of(&c2, s2);
            let mut body = header;
            body.extend(self.lower_body(&l.body, &mut inner)?);
            body.extend(footer);
            return Ok(KernelStmt::CoIterLoop {
                var: l.var.clone(),
                union,
                left: (c1.tensor.clone(), seg1),
                right: (c2.tensor.clone(), seg2),
                lower: self.trim_lower(&lo),
                upper: Some(hi),
                body,
            });
        }

        let mut body = header;
        body.extend(self.lower_body(&l.body, &mut inner)?);
        body.extend(footer);
        Ok(KernelStmt::DenseLoop {
            var: l.var.clone(),
            lower: lo,
            upper: hi,
            kind,
            parallel: l.parallel,
            body,
        })
    }

    fn trim_lower(&self, lo: &IndexExpr) -> Option<IndexExpr> {
        if lo.var.is_none() && lo.offset == 0 {
            None
        } else {
            Some(lo.clone())
        }
    }

    /// A write inside `l` scattering along the loop variable into a masked
    /// dimension of the output, with the mask's slice fixed by outer loops.
    fn masked_write(&self, l: &RinLoop, scope: &Scope) -> Option<(String, usize, Vec<IndexExpr>)> {
        for f in assigns_in(&l.body) {
            let t = &f.lhs.tensor;
            let Some(user_storage) = self.spec.storage.get(t) else { continue };
            for (mi, m) in user_storage.masks.iter().enumerate() {
                let (mdim, _) = *m.levels.last().unwrap();
                if f.lhs.indices.get(mdim).map(|e| (e.var.as_deref(), e.offset))
                    != Some((Some(l.var.as_str()), 0))
                {
                    continue;
                }
                let segment: Vec<IndexExpr> = m.levels[..m.levels.len() - 1]
                    .iter()
                    .map(|(d, _)| f.lhs.indices[*d].clone())
                    .collect();
                let bound = segment.iter().all(|e| match e.var.as_deref() {
                    None => true,
                    Some(v) => scope.enclosing.iter().any(|w| w == v),
                });
                if bound {
                    return Some((t.clone(), mi, segment));
                }
            }
        }
        None
    }

    fn emit_compute(
        &mut self,
        frag: &MinimalFragment,
        scope: &mut Scope,
        out: &mut Vec<KernelStmt>,
        cse: &mut Vec<(Resolved, usize)>,
    ) -> Result<(), CodegenError> {
        let rhs = self.lower_expr(&frag.rhs, scope, out, cse)?;
        let lhs = self.resolve_write(&frag.lhs, scope)?;
        // Writes invalidate loads of the same backing store.
        cse.retain(|(r, _)| r.tensor_name() != lhs.tensor_name());
        out.push(KernelStmt::Compute { lhs, mode: frag.mode, rhs });
        Ok(())
    }

    fn lower_expr(
        &mut self,
        expr: &ScalarExpr,
        scope: &mut Scope,
        out: &mut Vec<KernelStmt>,
        cse: &mut Vec<(Resolved, usize)>,
    ) -> Result<KExpr, CodegenError> {
        Ok(match expr {
            ScalarExpr::Constant(c) => KExpr::Const(*c),
            ScalarExpr::Access(a) => {
                let r = self.resolve_read(a, scope, out);
                if let Some((_, local)) = cse.iter().find(|(res, _)| *res == r) {
                    KExpr::Local(*local)
                } else {
                    let local = self.next_local;
                    self.next_local += 1;
                    out.push(KernelStmt::Bind { local, access: r.clone() });
                    cse.push((r, local));
                    KExpr::Local(local)
                }
            }
            ScalarExpr::Unary { op, child } => {
                KExpr::Unary(*op, Box::new(self.lower_expr(child, scope, out, cse)?))
            }
            ScalarExpr::Binary { op, left, right } => KExpr::Binary(
                *op,
                Box::new(self.lower_expr(left, scope, out, cse)?),
                Box::new(self.lower_expr(right, scope, out, cse)?),
            ),
            ScalarExpr::Reduction { .. } => unreachable!("fragments are reduction-free"),
        })
    }

    fn resolve_write(&mut self, lhs: &TensorAccess, scope: &Scope) -> Result<Resolved, CodegenError> {
        let s = &self.storage[&lhs.tensor];
        if s.is_all_dense() {
            return Ok(Resolved::Dense { tensor: lhs.tensor.clone(), indices: lhs.indices.clone() });
        }
        let cdim = s.levels.last().unwrap().0;
        for (t, slice, ws) in &scope.assembling {
            if *t == lhs.tensor && segment_of(lhs, s) == *slice {
                return Ok(Resolved::Workspace { ws: ws.clone(), index: lhs.indices[cdim].clone() });
            }
        }
        Err(CodegenError::UnsupportedScatter(lhs.tensor.clone()))
    }

    fn resolve_read(&mut self, a: &TensorAccess, scope: &mut Scope, out: &mut Vec<KernelStmt>) -> Resolved {
        let s = self.storage[&a.tensor].clone();
        if s.is_all_dense() {
            return Resolved::Dense { tensor: a.tensor.clone(), indices: a.indices.clone() };
        }
        let cdim = s.levels.last().unwrap().0;
        let segment = segment_of(a, &s);
        // Slice of the output currently under assembly.
        for (t, slice, ws) in &scope.assembling {
            if *t == a.tensor && segment == *slice {
                return Resolved::Workspace { ws: ws.clone(), index: a.indices[cdim].clone() };
            }
        }
        // The driving access of an enclosing compressed loop.
        if scope.drivers.iter().any(|d| d == a) {
            return Resolved::SequentialPos { tensor: a.tensor.clone() };
        }
        // A loaded input slice.
        for (t, seg, ws) in &scope.loaded {
            if *t == a.tensor && *seg == segment {
                return Resolved::Workspace { ws: ws.clone(), index: a.indices[cdim].clone() };
            }
        }
        // Loadable here: scatter the slice into a workspace on the spot.
        let seg_bound = segment.iter().all(|e| match e.var.as_deref() {
            None => true,
            Some(v) => scope.enclosing.iter().any(|w| w == v),
        });
        let coord_invariant = match a.indices[cdim].var.as_deref() {
            None => true,
            Some(v) => scope.enclosing.iter().any(|w| w == v),
        };
        if seg_bound && !self.produced.contains(&a.tensor) && !coord_invariant {
            let ws = self.ensure_loaded(&a.tensor, &segment, scope, out);
            return Resolved::Workspace { ws, index: a.indices[cdim].clone() };
        }
        // Diagonal convenience: first/last stored entry of the slice.
        if s.levels.len() == 2 && seg_bound && coord_invariant {
            let coord = &a.indices[cdim];
            if segment.len() == 1 && segment[0] == *coord {
                match self.diag_side.get(&a.tensor) {
                    Some(DiagSide::CoordAtMostSegment) => {
                        return Resolved::EdgeOfSlice {
                            tensor: a.tensor.clone(),
                            segment,
                            expect: coord.clone(),
                            last: true,
                        }
                    }
                    Some(DiagSide::CoordAtLeastSegment) => {
                        return Resolved::EdgeOfSlice {
                            tensor: a.tensor.clone(),
                            segment,
                            expect: coord.clone(),
                            last: false,
                        }
                    }
                    _ => {}
                }
            }
        }
        // Binary search, with a performance warning.
        let w = format!(
            "access {a} to `{}` runs against its storage order; emitting an O(log n) binary search",
            a.tensor
        );
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
        Resolved::Search { tensor: a.tensor.clone(), segment, coord: a.indices[cdim].clone() }
    }
}

fn segment_of(a: &TensorAccess, s: &StorageSpec) -> Vec<IndexExpr> {
    s.levels[..s.levels.len() - 1]
        .iter()
        .map(|(d, _)| a.indices[*d].clone())
        .collect()
}

fn assigns_in(body: &[RinStmt]) -> Vec<MinimalFragment> {
    let mut out = Vec::new();
    for s in body {
        match s {
            RinStmt::Assign(f) => out.push(f.clone()),
            RinStmt::Loop(l) => out.extend(assigns_in(&l.body)),
            RinStmt::Readiness(_) => {}
        }
    }
    out
}

fn collect_reads(body: &[RinStmt], out: &mut Vec<TensorAccess>) {
    for s in body {
        match s {
            RinStmt::Assign(f) => {
                for a in f.rhs.accesses() {
                    if !out.contains(a) {
                        out.push(a.clone());
                    }
                }
            }
            RinStmt::Loop(l) => collect_reads(&l.body, out),
            RinStmt::Readiness(_) => {}
        }
    }
}

/// Is the access a multiplicative factor of the expression, so a zero entry
/// annihilates the whole term?
fn is_multiplicative_factor(expr: &ScalarExpr, access: &TensorAccess) -> bool {
    match expr {
        ScalarExpr::Access(a) => a == access,
        ScalarExpr::Binary { op: BinaryOp::Mul, left, right } => {
            is_multiplicative_factor(left, access) || is_multiplicative_factor(right, access)
        }
        ScalarExpr::Binary { op: BinaryOp::Div, left, .. } => is_multiplicative_factor(left, access),
        ScalarExpr::Unary { op: crate::frontend::UnaryOp::Neg, child } => is_multiplicative_factor(child, access),
        _ => false,
    }
}
