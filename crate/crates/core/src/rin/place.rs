//! Greedy fragment placement with inductive assumptions.
//!
//! Fragments are placed in topological order, each into the first program
//! location (by in-order traversal) where its variables are in scope, every
//! enclosing loop's bounds agree with the fragment's constraint-derived
//! spaces, and all of its dependencies are covered by visible readiness
//! markers. When no location qualifies the engine first tries hoisting
//! completion markers of already-placed producers out of closed loops, then
//! makes the next inductive assumption in schedule order. A fragment that
//! still cannot be placed makes the requested loop ordering impossible.

use super::{LoopKind, Location, ReadinessMarker, RegionIndex, RinLoop, RinProgram, RinStmt};
use crate::depgraph;
use crate::fragments::{self, IterationSpace, MinimalFragment};
use crate::frontend::{Constraint, ConstraintSystem, IndexExpr, ProgramSpec, Rel, TensorAccess};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error(transparent)]
    Fragment(#[from] fragments::FragmentError),
    #[error(transparent)]
    DepGraph(#[from] depgraph::DepGraphError),
    #[error("loop ordering impossible: cannot place `{fragment}`; unsatisfied dependencies: {deps}")]
    OrderingImpossible { fragment: String, deps: String },
}

/// Lowers a validated spec to RIN: fragments, DAG order, skeleton, then
/// greedy placement with assumptions.
pub fn lower(spec: &ProgramSpec) -> Result<RinProgram, PlacementError> {
    lower_full(spec).map(|(prog, _, _)| prog)
}

/// As [`lower`], also returning the fragment set and dependency graph the
/// successful placement used. Substitution variants are tried in order;
/// the first that places every fragment wins.
pub fn lower_full(
    spec: &ProgramSpec,
) -> Result<(RinProgram, Vec<MinimalFragment>, depgraph::DependencyGraph), PlacementError> {
    let variants = fragments::generate_and_normalize_variants(spec)?;
    let mut last_err = None;
    for frags in variants {
        let dag = depgraph::build_dag(&frags)?;
        let order = depgraph::topological_order(&dag)?;
        let mut engine = PlacementEngine::new(spec, frags.clone())?;
        match engine.run(order) {
            Ok(()) => return Ok((engine.finish(), frags, dag)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one variant"))
}

#[derive(Debug, Clone)]
struct Claim {
    tensor: String,
    region: Vec<RegionIndex>,
    /// Loop id once the claim's marker is materialized.
    bound: Option<usize>,
}

#[derive(Debug, Clone)]
struct Assumption {
    var: String,
    claims: Vec<Claim>,
}

/// A candidate body list, identified by the loop ids leading to it.
#[derive(Debug, Clone)]
struct ListRef {
    loop_ids: Vec<usize>,
    end_rank: usize,
}

#[derive(Debug, Clone)]
struct Candidate {
    list: ListRef,
    /// Loops to open at the end of the list, outermost first.
    fresh: Vec<(String, IterationSpace)>,
    /// (assumption index, claim index, loop id or fresh index) bindings the
    /// placement relies on.
    bindings: Vec<(usize, usize, LoopSlot)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LoopSlot {
    Existing(usize),
    Fresh(usize),
}

pub struct PlacementEngine<'a> {
    spec: &'a ProgramSpec,
    frags_all: Vec<MinimalFragment>,
    outputs: Vec<String>,
    produced: BTreeSet<String>,
    /// Lhs accesses that appear exactly in some other fragment's rhs.
    consumed: BTreeSet<TensorAccess>,
    prog: RinProgram,
    assumptions: Vec<Assumption>,
    max_assumptions: usize,
}

impl<'a> PlacementEngine<'a> {
    pub fn new(spec: &'a ProgramSpec, frags: Vec<MinimalFragment>) -> Result<Self, PlacementError> {
        let outputs = spec.output_tensors();
        let produced: BTreeSet<String> = frags.iter().map(|f| f.lhs.tensor.clone()).collect();
        let mut consumed = BTreeSet::new();
        for f in &frags {
            for a in f.rhs.accesses() {
                if frags.iter().any(|g| g.lhs == *a && g.lhs != f.lhs) {
                    consumed.insert(a.clone());
                }
            }
        }
        let max_assumptions = frags.iter().map(|f| f.lhs.indices.len()).max().unwrap_or(0);

        let mut prog = RinProgram::default();
        build_skeleton_into(&mut prog, spec, &frags)?;
        Ok(PlacementEngine {
            spec,
            frags_all: frags,
            outputs,
            produced,
            consumed,
            prog,
            assumptions: Vec::new(),
            max_assumptions,
        })
    }

    pub fn program(&self) -> &RinProgram {
        &self.prog
    }

    pub fn finish(mut self) -> RinProgram {
        self.prog.prune_empty_loops();
        let mut map: BTreeMap<String, Vec<ReadinessMarker>> = BTreeMap::new();
        for a in &self.assumptions {
            let entry = map.entry(a.var.clone()).or_default();
            for c in &a.claims {
                if c.bound.is_some() {
                    entry.push(ReadinessMarker { tensor: c.tensor.clone(), region: c.region.clone() });
                }
            }
        }
        self.prog.assumptions = map;
        self.prog
    }

    /// Places every fragment, making assumptions as needed.
    pub fn run(&mut self, order: Vec<MinimalFragment>) -> Result<(), PlacementError> {
        let mut pending = order;
        while !pending.is_empty() {
            if let Some(pos) = (0..pending.len()).find(|&i| self.try_place(&pending[i])) {
                pending.remove(pos);
                continue;
            }
            if self.try_hoists(&pending) {
                continue;
            }
            if self.assumptions.len() < self.max_assumptions
                && self
                    .prog
                    .first_loop_over(&self.spec.schedule.ordering[self.assumptions.len()])
                    .is_some()
            {
                let needed = self.dep_tensors(&pending[0]);
                self.make_assumption(&needed);
                continue;
            }
            if self.refresh_shifted_claims(&pending) {
                continue;
            }
            let frag = &pending[0];
            let deps: Vec<String> = self.deps_of(frag).iter().map(|a| a.to_string()).collect();
            return Err(PlacementError::OrderingImpossible {
                fragment: frag.to_string(),
                deps: deps.join(", "),
            });
        }
        Ok(())
    }

    /// Dependencies: rhs accesses to produced tensors, minus the
    /// fragment's own lhs cell (accumulation or in-place read).
    fn deps_of(&self, frag: &MinimalFragment) -> Vec<TensorAccess> {
        let mut deps = Vec::new();
        for a in frag.rhs.accesses() {
            if self.produced.contains(&a.tensor) && *a != frag.lhs && !deps.contains(a) {
                deps.push(a.clone());
            }
        }
        deps
    }

    fn dep_tensors(&self, frag: &MinimalFragment) -> BTreeSet<String> {
        self.deps_of(frag).into_iter().map(|a| a.tensor).collect()
    }

    /// Non-committing probe for the earliest feasible location.
    pub fn placement_location(&self, frag: &MinimalFragment) -> Option<Location> {
        let cand = self.find_candidate(frag)?;
        let path = self.path_of_list(&cand.list)?;
        let body = self.prog.body_at_path(&path)?;
        Some(Location { path, index: body.len() })
    }

    fn path_of_list(&self, list: &ListRef) -> Option<Vec<usize>> {
        let mut path = Vec::new();
        let mut body = &self.prog.body;
        for id in &list.loop_ids {
            let idx = body.iter().position(|s| matches!(s, RinStmt::Loop(l) if l.id == *id))?;
            path.push(idx);
            body = match &body[idx] {
                RinStmt::Loop(l) => &l.body,
                _ => return None,
            };
        }
        Some(path)
    }

    fn try_place(&mut self, frag: &MinimalFragment) -> bool {
        let Some(cand) = self.find_candidate(frag) else { return false };
        self.commit(frag, cand);
        true
    }

    /// Test hook: place one fragment, committing markers and bindings.
    pub fn try_place_public(&mut self, frag: &MinimalFragment) -> bool {
        self.try_place(frag)
    }

    /// Scans candidate body lists in program order and returns the first
    /// feasible one.
    fn find_candidate(&self, frag: &MinimalFragment) -> Option<Candidate> {
        let used = frag.used_vars();
        let ordering = &self.spec.schedule.ordering;
        let lists = self.enumerate_lists();
        for list in lists {
            let loops = self.loops_of(&list);
            let evars: Vec<String> = loops.iter().map(|l| l.var.clone()).collect();
            if evars.iter().any(|v| !used.contains(v)) {
                continue;
            }
            // Missing variables must be openable as fresh nested loops in
            // schedule order below the innermost existing loop.
            let mut missing: Vec<String> = used.iter().filter(|v| !evars.contains(v)).cloned().collect();
            missing.sort_by_key(|v| self.spec.schedule.position(v).unwrap_or(usize::MAX));
            if let (Some(last), Some(first)) = (evars.last(), missing.first()) {
                let (Some(pl), Some(pf)) = (self.spec.schedule.position(last), self.spec.schedule.position(first))
                else {
                    continue;
                };
                if pf < pl {
                    continue;
                }
            }
            // Loop nesting must stay a subsequence of the schedule ordering.
            let nested: Vec<usize> = evars
                .iter()
                .chain(missing.iter())
                .filter_map(|v| self.spec.schedule.position(v))
                .collect();
            if nested.windows(2).any(|w| w[0] >= w[1]) {
                continue;
            }

            // Fresh loops take the fragment's own (scope-filtered) spaces.
            let mut scope: BTreeSet<String> = loops.iter().map(|l| l.var.clone()).collect();
            let mut fresh: Vec<(String, IterationSpace)> = Vec::new();
            let mut fresh_ok = true;
            for m in &missing {
                match fragments::iteration_space_scoped(m, &frag.constraints, &self.spec.extents, Some(&scope)) {
                    Ok(sp) => {
                        fresh.push((m.clone(), sp));
                        scope.insert(m.clone());
                    }
                    Err(_) => {
                        fresh_ok = false;
                        break;
                    }
                }
            }
            if !fresh_ok {
                continue;
            }
            let _ = ordering;

            // The loop nest must carve exactly the fragment's region: every
            // fragment constraint follows from the loop bounds, and every
            // loop bound follows from the (grounded) fragment region.
            let mut loop_cs: Vec<Constraint> = Vec::new();
            for l in &loops {
                let (lo, hi) = l.space.canonical();
                loop_cs.push(Constraint::new(l.var.clone(), Rel::Ge, lo));
                loop_cs.push(Constraint::new(l.var.clone(), Rel::Lt, hi));
            }
            for (v, sp) in &fresh {
                let (lo, hi) = sp.canonical();
                loop_cs.push(Constraint::new(v.clone(), Rel::Ge, lo));
                loop_cs.push(Constraint::new(v.clone(), Rel::Lt, hi));
            }
            let loops_sys = ConstraintSystem::new_symbolic(&loop_cs, &self.spec.extents);
            if !frag.constraints.iter().all(|c| implied(&loops_sys, c)) {
                continue;
            }
            let frag_sys = fragments::grounded_system_symbolic(&frag.constraints, &used, &self.spec.extents);
            let bounds_ok = loop_cs.iter().all(|c| implied(&frag_sys, c));
            if !bounds_ok {
                continue;
            }

            // Restrictions: a write whose cells some iteration of an
            // assumption claim covers must stay inside the claimed loop.
            let enclosing_ids: Vec<usize> = loops.iter().map(|l| l.id).collect();
            let mut restricted_ok = true;
            for a in &self.assumptions {
                for c in &a.claims {
                    if c.tensor != frag.lhs.tensor {
                        continue;
                    }
                    if let Some(bound) = c.bound {
                        let space = self.prog.find_loop(bound).map(|l| l.space.clone());
                        let Some(space) = space else { continue };
                        if claim_restricts(frag, &c.region, &a.var, &space, &self.spec.extents)
                            && !enclosing_ids.contains(&bound)
                        {
                            restricted_ok = false;
                        }
                    } else {
                        // Must be able to bind: an enclosing or fresh loop
                        // over the assumption variable whose space shows
                        // the claim covers this writer at all.
                        match self.slot_for_var(&a.var, &loops, &fresh) {
                            Some(_) => {}
                            None => {
                                // No such loop: only a problem when the
                                // claim could cover this writer's cells for
                                // some loop extent; test with the ambient
                                // space of the assumption variable.
                                if let Some(l) = self.prog.first_loop_over(&a.var) {
                                    if claim_restricts(frag, &c.region, &a.var, &l.space, &self.spec.extents) {
                                        restricted_ok = false;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if !restricted_ok {
                continue;
            }

            // Dependency coverage at the end of the list.
            let sys = self.context_system(frag, &loops, &fresh);
            let visible = self.visible_markers(&list);
            let mut bindings: Vec<(usize, usize, LoopSlot)> = Vec::new();
            let mut all_covered = true;
            for dep in self.deps_of(frag) {
                let mut covered = visible.iter().any(|m| covers(m, &dep, &sys));
                if !covered {
                    'claims: for (ai, a) in self.assumptions.iter().enumerate() {
                        for (ci, c) in a.claims.iter().enumerate() {
                            if c.bound.is_some() || c.tensor != dep.tensor {
                                continue;
                            }
                            let marker = ReadinessMarker { tensor: c.tensor.clone(), region: c.region.clone() };
                            if !covers(&marker, &dep, &sys) {
                                continue;
                            }
                            if let Some(slot) = self.slot_for_var(&a.var, &loops, &fresh) {
                                if self.binding_ok(&a.var, &c.tensor, slot, &loops, &fresh) {
                                    bindings.push((ai, ci, slot));
                                    covered = true;
                                    break 'claims;
                                }
                            }
                        }
                    }
                }
                if !covered {
                    all_covered = false;
                    break;
                }
            }
            if !all_covered {
                continue;
            }

            // Writing a claimed tensor binds its still-virtual claims,
            // unless the claim can never cover this writer's cells.
            let mut write_ok = true;
            for (ai, a) in self.assumptions.iter().enumerate() {
                for (ci, c) in a.claims.iter().enumerate() {
                    if c.tensor != frag.lhs.tensor || c.bound.is_some() {
                        continue;
                    }
                    match self.slot_for_var(&a.var, &loops, &fresh) {
                        Some(slot) => {
                            let space = self.slot_space(slot, &loops, &fresh);
                            if !claim_restricts(frag, &c.region, &a.var, &space, &self.spec.extents) {
                                continue;
                            }
                            if self.binding_ok(&a.var, &c.tensor, slot, &loops, &fresh) {
                                if !bindings.iter().any(|(x, y, _)| (*x, *y) == (ai, ci)) {
                                    bindings.push((ai, ci, slot));
                                }
                            } else {
                                write_ok = false;
                            }
                        }
                        None => {
                            if let Some(l) = self.prog.first_loop_over(&a.var) {
                                if claim_restricts(frag, &c.region, &a.var, &l.space, &self.spec.extents) {
                                    write_ok = false;
                                }
                            }
                        }
                    }
                }
            }
            if !write_ok {
                continue;
            }

            return Some(Candidate { list, fresh, bindings });
        }
        None
    }

    fn slot_space(&self, slot: LoopSlot, loops: &[&RinLoop], fresh: &[(String, IterationSpace)]) -> IterationSpace {
        match slot {
            LoopSlot::Existing(id) => loops.iter().find(|l| l.id == id).unwrap().space.clone(),
            LoopSlot::Fresh(i) => fresh[i].1.clone(),
        }
    }

    fn slot_for_var(&self, var: &str, loops: &[&RinLoop], fresh: &[(String, IterationSpace)]) -> Option<LoopSlot> {
        if let Some(l) = loops.iter().find(|l| l.var == var) {
            return Some(LoopSlot::Existing(l.id));
        }
        fresh.iter().position(|(v, _)| v == var).map(LoopSlot::Fresh)
    }

    /// A claim may bind to a loop only when every writer of the tensor that
    /// uses the assumption variable iterates exactly this loop's space, and
    /// earlier bound claims on the tensor already enclose it.
    fn binding_ok(
        &self,
        var: &str,
        tensor: &str,
        slot: LoopSlot,
        loops: &[&RinLoop],
        fresh: &[(String, IterationSpace)],
    ) -> bool {
        let (space, outer_vars) = match slot {
            LoopSlot::Existing(id) => {
                let pos = loops.iter().position(|l| l.id == id).unwrap();
                (loops[pos].space.clone(), loops[..pos].iter().map(|l| l.var.clone()).collect::<BTreeSet<_>>())
            }
            LoopSlot::Fresh(i) => {
                let mut outer: BTreeSet<String> = loops.iter().map(|l| l.var.clone()).collect();
                for (v, _) in &fresh[..i] {
                    outer.insert(v.clone());
                }
                (fresh[i].1.clone(), outer)
            }
        };
        let region = self
            .assumptions
            .iter()
            .find(|a| a.var == var)
            .and_then(|a| a.claims.iter().find(|c| c.tensor == tensor))
            .map(|c| c.region.clone());
        for g in &self.frags_all {
            if g.lhs.tensor != tensor || !g.used_vars().contains(var) {
                continue;
            }
            if let Some(region) = &region {
                if !claim_restricts(g, region, var, &space, &self.spec.extents) {
                    continue;
                }
            }
            // The loop must run every iteration the writer's region needs.
            let writer_sys = fragments::grounded_system_symbolic(&g.constraints, &g.used_vars(), &self.spec.extents);
            let (lo, hi) = space.canonical();
            let v = IndexExpr::var(var.to_string());
            if !(writer_sys.implies_le(&lo, &v) && writer_sys.implies_lt(&v, &hi)) {
                return false;
            }
            let _ = &outer_vars;
        }
        // Earlier bound claims on the same tensor must enclose this loop.
        let enclosing_ids: BTreeSet<usize> = loops.iter().map(|l| l.id).collect();
        for a in &self.assumptions {
            for c in &a.claims {
                if c.tensor == tensor {
                    if let Some(bound) = c.bound {
                        let same = matches!(slot, LoopSlot::Existing(id) if id == bound);
                        if !same && !enclosing_ids.contains(&bound) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Constraint system for coverage checks: fragment constraints plus the
    /// bounds of every enclosing (and about-to-open) loop.
    fn context_system(
        &self,
        frag: &MinimalFragment,
        loops: &[&RinLoop],
        fresh: &[(String, IterationSpace)],
    ) -> ConstraintSystem {
        let mut cs = frag.constraints.clone();
        let add = |var: &str, space: &IterationSpace, cs: &mut Vec<Constraint>| {
            let (lo, hi) = space.canonical();
            cs.push(Constraint::new(var, Rel::Ge, lo));
            cs.push(Constraint::new(var, Rel::Lt, hi));
        };
        for l in loops {
            add(&l.var, &l.space, &mut cs);
        }
        for (v, sp) in fresh {
            add(v, sp, &mut cs);
        }
        ConstraintSystem::new_symbolic(&cs, &self.spec.extents)
    }

    /// Body lists in in-order traversal sequence of their end slots.
    fn enumerate_lists(&self) -> Vec<ListRef> {
        fn walk(body: &[RinStmt], ids: &mut Vec<usize>, counter: &mut usize, out: &mut Vec<ListRef>) {
            for stmt in body {
                *counter += 1;
                if let RinStmt::Loop(l) = stmt {
                    ids.push(l.id);
                    walk(&l.body, ids, counter, out);
                    ids.pop();
                }
            }
            *counter += 1;
            out.push(ListRef { loop_ids: ids.clone(), end_rank: *counter });
        }
        let mut out = Vec::new();
        let mut counter = 0;
        walk(&self.prog.body, &mut Vec::new(), &mut counter, &mut out);
        out.sort_by_key(|l| l.end_rank);
        out
    }

    fn loops_of(&self, list: &ListRef) -> Vec<&RinLoop> {
        list.loop_ids.iter().filter_map(|id| self.prog.find_loop(*id)).collect()
    }

    /// Markers visible at the end of a body list: everything earlier in the
    /// list itself and in ancestor lists before the branch.
    fn visible_markers(&self, list: &ListRef) -> Vec<ReadinessMarker> {
        let mut out = Vec::new();
        let mut body = &self.prog.body;
        for id in &list.loop_ids {
            for s in body.iter() {
                match s {
                    RinStmt::Readiness(m) => out.push(m.clone()),
                    RinStmt::Loop(l) if l.id == *id => break,
                    _ => {}
                }
            }
            let idx = body
                .iter()
                .position(|s| matches!(s, RinStmt::Loop(l) if l.id == *id))
                .expect("list path resolves");
            body = match &body[idx] {
                RinStmt::Loop(l) => &l.body,
                _ => unreachable!(),
            };
        }
        for s in body.iter() {
            if let RinStmt::Readiness(m) = s {
                out.push(m.clone());
            }
        }
        out
    }

    fn commit(&mut self, frag: &MinimalFragment, cand: Candidate) {
        // Insert fresh loops and the statement.
        let fresh_ids: Vec<usize> = {
            let fresh = cand.fresh.clone();
            let path = self.path_of_list(&cand.list).expect("candidate list resolves");
            let mut ids = Vec::new();
            for _ in &fresh {
                ids.push(self.prog.fresh_loop_id());
            }
            let body = self.prog.body_at_path_mut(&path).expect("list body resolves");
            let mut target = body;
            for ((var, space), id) in fresh.iter().zip(&ids) {
                target.push(RinStmt::Loop(RinLoop {
                    id: *id,
                    var: var.clone(),
                    space: space.clone(),
                    kind: LoopKind::Forall,
                    parallel: false,
                    serialized: false,
                    body: Vec::new(),
                }));
                let last = target.len() - 1;
                target = match &mut target[last] {
                    RinStmt::Loop(l) => &mut l.body,
                    _ => unreachable!(),
                };
            }
            target.push(RinStmt::Assign(frag.clone()));
            ids
        };

        // Bind relied-upon claims: markers at loop tops, loops become
        // `for`, restrictions activate.

        // Materialize markers in claim declaration order (outputs before
        // shifted alias claims), regardless of which dependency found them.
        let mut bindings = cand.bindings.clone();
        bindings.sort_by_key(|(ai, ci, _)| (*ai, *ci));
        for (ai, ci, slot) in &bindings {
            let loop_id = match slot {
                LoopSlot::Existing(id) => *id,
                LoopSlot::Fresh(i) => fresh_ids[*i],
            };
            if self.assumptions[*ai].claims[*ci].bound.is_some() {
                continue;
            }
            self.assumptions[*ai].claims[*ci].bound = Some(loop_id);
            let marker = ReadinessMarker {
                tensor: self.assumptions[*ai].claims[*ci].tensor.clone(),
                region: self.assumptions[*ai].claims[*ci].region.clone(),
            };
            let l = self.prog.find_loop_mut(loop_id).expect("bound loop exists");
            l.kind = LoopKind::For;
            let at = l.body.iter().take_while(|s| matches!(s, RinStmt::Readiness(_))).count();
            l.body.insert(at, RinStmt::Readiness(marker));
        }

        // Completion marker, when some other fragment consumes the lhs
        // exactly.
        if self.consumed.contains(&frag.lhs) {
            self.insert_completion_marker(frag, &cand, &fresh_ids);
        }
    }

    fn insert_completion_marker(&mut self, frag: &MinimalFragment, cand: &Candidate, fresh_ids: &[usize]) {
        let mut all_ids = cand.list.loop_ids.clone();
        all_ids.extend(fresh_ids.iter().copied());

        let (marker_list_ids, after_loop): (Vec<usize>, Option<usize>) = match &frag.reduce_var {
            None => (all_ids.clone(), None),
            Some(rv) => {
                // After the close of the innermost loop over the reduction
                // variable.
                let pos = all_ids
                    .iter()
                    .rposition(|id| self.prog.find_loop(*id).is_some_and(|l| l.var == *rv))
                    .expect("reduce var loop encloses the statement");
                (all_ids[..pos].to_vec(), Some(all_ids[pos]))
            }
        };

        // Genericize region: variables out of scope at the marker list
        // (exhausted by closed loops) become `:`.
        let scope: BTreeSet<String> = marker_list_ids
            .iter()
            .filter_map(|id| self.prog.find_loop(*id))
            .map(|l| l.var.clone())
            .collect();
        let region: Vec<RegionIndex> = frag
            .lhs
            .indices
            .iter()
            .map(|e| match e.var.as_deref() {
                None => RegionIndex::Exact(e.clone()),
                Some(v) if scope.contains(v) => RegionIndex::Exact(e.clone()),
                Some(_) => RegionIndex::All,
            })
            .collect();
        let marker = ReadinessMarker { tensor: frag.lhs.tensor.clone(), region };

        // Resolve the marker body and insertion point.
        let path = {
            let mut p = Vec::new();
            let mut body = &self.prog.body;
            for id in &marker_list_ids {
                let idx = body
                    .iter()
                    .position(|s| matches!(s, RinStmt::Loop(l) if l.id == *id))
                    .expect("marker list resolves");
                p.push(idx);
                body = match &body[idx] {
                    RinStmt::Loop(l) => &l.body,
                    _ => unreachable!(),
                };
            }
            p
        };
        let body = self.prog.body_at_path_mut(&path).expect("marker body resolves");
        let mut at = match after_loop {
            None => body.len(),
            Some(id) => {
                body.iter()
                    .position(|s| matches!(s, RinStmt::Loop(l) if l.id == id))
                    .expect("reduction loop present")
                    + 1
            }
        };
        while at < body.len() && matches!(body[at], RinStmt::Readiness(_)) {
            at += 1;
        }
        if !body.iter().any(|s| matches!(s, RinStmt::Readiness(m) if *m == marker)) {
            body.insert(at, RinStmt::Readiness(marker));
        }
    }

    /// Emits at most one hoisted completion marker that covers an uncovered
    /// dependency of some stuck fragment. Returns true when progress was
    /// made.
    fn try_hoists(&mut self, pending: &[MinimalFragment]) -> bool {
        let placed: Vec<MinimalFragment> = self
            .prog
            .assignments()
            .iter()
            .map(|(f, _)| (*f).clone())
            .collect();
        for frag in pending {
            for dep in self.deps_of(frag) {
                let sys = ConstraintSystem::new_symbolic(&frag.constraints, &self.spec.extents);
                for g in &placed {
                    if g.lhs.tensor != dep.tensor {
                        continue;
                    }
                    if self.emit_hoist(g, &dep, &sys) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Hoists `g`'s completion out of closed loops: at each ancestor level
    /// the exhausted variables genericize to `:`. Emits the deepest hoist
    /// that covers `dep`.
    fn emit_hoist(&mut self, g: &MinimalFragment, dep: &TensorAccess, sys: &ConstraintSystem) -> bool {
        // Locate g's statement.
        let mut stmt_ids: Option<Vec<usize>> = None;
        {
            fn walk(body: &[RinStmt], g: &MinimalFragment, ids: &mut Vec<usize>, found: &mut Option<Vec<usize>>) {
                for s in body {
                    match s {
                        RinStmt::Assign(f) if f == g && found.is_none() => *found = Some(ids.clone()),
                        RinStmt::Loop(l) => {
                            ids.push(l.id);
                            walk(&l.body, g, ids, found);
                            ids.pop();
                        }
                        _ => {}
                    }
                }
            }
            let mut ids = Vec::new();
            walk(&self.prog.body, g, &mut ids, &mut stmt_ids);
        }
        let Some(stmt_ids) = stmt_ids else { return false };

        // The base position: after the reduction loop for reduce fragments.
        let base_depth = match &g.reduce_var {
            None => stmt_ids.len(),
            Some(rv) => stmt_ids
                .iter()
                .rposition(|id| self.prog.find_loop(*id).is_some_and(|l| l.var == *rv))
                .map(|p| p)
                .unwrap_or(stmt_ids.len()),
        };

        // Try depths from deepest hoist (just outside the base) outward.
        for depth in (0..base_depth).rev() {
            let scope: BTreeSet<String> = stmt_ids[..depth]
                .iter()
                .filter_map(|id| self.prog.find_loop(*id))
                .map(|l| l.var.clone())
                .collect();
            let region: Vec<RegionIndex> = g
                .lhs
                .indices
                .iter()
                .map(|e| match e.var.as_deref() {
                    None => RegionIndex::Exact(e.clone()),
                    Some(v) if scope.contains(v) => RegionIndex::Exact(e.clone()),
                    Some(_) => RegionIndex::All,
                })
                .collect();
            let marker = ReadinessMarker { tensor: g.lhs.tensor.clone(), region };
            if !covers(&marker, dep, sys) {
                continue;
            }
            // Insert after the depth-level child loop in its parent list.
            let child_id = stmt_ids[depth];
            let mut path = Vec::new();
            let mut body = &self.prog.body;
            for id in &stmt_ids[..depth] {
                let idx = body
                    .iter()
                    .position(|s| matches!(s, RinStmt::Loop(l) if l.id == *id))
                    .expect("hoist path resolves");
                path.push(idx);
                body = match &body[idx] {
                    RinStmt::Loop(l) => &l.body,
                    _ => unreachable!(),
                };
            }
            let body = self.prog.body_at_path_mut(&path).expect("hoist body resolves");
            let mut at = body
                .iter()
                .position(|s| matches!(s, RinStmt::Loop(l) if l.id == child_id))
                .expect("hoisted loop present")
                + 1;
            while at < body.len() && matches!(body[at], RinStmt::Readiness(_)) {
                at += 1;
            }
            if body.iter().any(|s| matches!(s, RinStmt::Readiness(m) if *m == marker)) {
                return false;
            }
            body.insert(at, RinStmt::Readiness(marker));
            return true;
        }
        false
    }

    /// Makes the next inductive assumption in schedule order: claims for
    /// every output tensor whose fragment lhs mentions the variable, plus
    /// shifted claims for reduction targets the stuck fragment needs.
    pub fn make_assumption(&mut self, needed: &BTreeSet<String>) {
        let var = self.spec.schedule.ordering[self.assumptions.len()].clone();
        let mut claims = Vec::new();
        for tensor in self.outputs.clone() {
            if let Some(region) = self.rule1_region(&tensor, &var) {
                claims.push(Claim { tensor, region, bound: None });
            }
        }
        let mut assumption = Assumption { var: var.clone(), claims };
        for tensor in needed {
            if assumption.claims.iter().any(|c| c.tensor == *tensor) {
                continue;
            }
            if let Some(region) = self.shifted_region(tensor, &var) {
                assumption.claims.push(Claim { tensor: tensor.clone(), region, bound: None });
            }
        }
        self.assumptions.push(assumption);
    }

    /// `J` for the standard inductive assumption: `:v` where the lhs uses
    /// the assumed variable, the exact index under an earlier assumption,
    /// `:` otherwise.
    fn rule1_region(&self, tensor: &str, var: &str) -> Option<Vec<RegionIndex>> {
        let lhs = self
            .frags_all
            .iter()
            .filter(|f| f.lhs.tensor == tensor && f.lhs.vars().any(|v| v == var))
            .min_by_key(|f| (f.origin, f.creation))
            .map(|f| f.lhs.clone())?;
        let assumed: BTreeSet<&str> = self.assumptions.iter().map(|a| a.var.as_str()).collect();
        Some(
            lhs.indices
                .iter()
                .map(|e| match e.var.as_deref() {
                    Some(v) if v == var => RegionIndex::Prefix(e.clone()),
                    Some(v) if assumed.contains(v) => RegionIndex::Exact(e.clone()),
                    Some(_) => RegionIndex::All,
                    None => RegionIndex::Exact(e.clone()),
                })
                .collect(),
        )
    }

    /// Shifted claim for a reduction target whose accumulation variable is
    /// the assumed loop variable: at the top of iteration `v`, cells whose
    /// accumulation range ends at or before `v` are complete.
    fn shifted_region(&self, tensor: &str, var: &str) -> Option<Vec<RegionIndex>> {
        let g = self
            .frags_all
            .iter()
            .filter(|f| f.lhs.tensor == tensor && f.reduce_var.as_deref() == Some(var))
            .min_by_key(|f| (f.origin, f.creation))?;
        let space = fragments::iteration_space(var, &g.constraints, &self.spec.extents).ok()?;
        let (_, hi) = space.canonical();
        let hi_var = hi.var.clone()?;
        let assumed: BTreeSet<&str> = self.assumptions.iter().map(|a| a.var.as_str()).collect();
        Some(
            g.lhs
                .indices
                .iter()
                .map(|e| match e.var.as_deref() {
                    Some(v) if v == hi_var => {
                        // dim value u+doff complete iff u <= var - c, i.e.
                        // u+doff < var + 1 - c + doff.
                        RegionIndex::Prefix(IndexExpr::var_off(var, 1 - hi.offset + e.offset))
                    }
                    Some(v) if assumed.contains(v) => RegionIndex::Exact(e.clone()),
                    Some(_) => RegionIndex::All,
                    None => RegionIndex::Exact(e.clone()),
                })
                .collect(),
        )
    }

    /// Adds missing shifted claims for existing assumptions against the
    /// pending fragments' dependencies; a last resort once the assumption
    /// budget is spent.
    fn refresh_shifted_claims(&mut self, pending: &[MinimalFragment]) -> bool {
        let mut changed = false;
        let needed: BTreeSet<String> = pending.iter().flat_map(|f| self.dep_tensors(f)).collect();
        for ai in 0..self.assumptions.len() {
            let var = self.assumptions[ai].var.clone();
            for tensor in &needed {
                if self.assumptions[ai].claims.iter().any(|c| c.tensor == *tensor) {
                    continue;
                }
                if let Some(region) = self.shifted_region(tensor, &var) {
                    self.assumptions[ai].claims.push(Claim {
                        tensor: tensor.clone(),
                        region,
                        bound: None,
                    });
                    changed = true;
                }
            }
        }
        changed
    }
}

/// Does the system prove the constraint for every assignment?
fn implied(sys: &ConstraintSystem, c: &Constraint) -> bool {
    let v = IndexExpr::var(c.var.clone());
    match c.rel {
        Rel::Lt => sys.implies_lt(&v, &c.bound),
        Rel::Le => sys.implies_le(&v, &c.bound),
        Rel::Eq => sys.implies_eq(&v, &c.bound),
        Rel::Gt => sys.implies_lt(&c.bound, &v),
        Rel::Ge => sys.implies_le(&c.bound, &v),
    }
}

/// Can the writer's cells fall inside the claim's region for some
/// iteration of the assumed loop? Unsatisfiable means the claim never
/// constrains this writer.
pub(super) fn claim_restricts(
    writer: &MinimalFragment,
    region: &[RegionIndex],
    var: &str,
    loop_space: &IterationSpace,
    extents: &std::collections::BTreeMap<String, i64>,
) -> bool {
    if region.len() != writer.lhs.indices.len() {
        return false;
    }
    // The claim's iteration of the assumed loop is independent of the
    // writer's variables; rename it apart.
    let fresh_var = format!("{var}~claim");
    let fresh = IndexExpr::var(fresh_var.clone());
    let mut cs = writer.constraints.clone();
    let (lo, hi) = loop_space.canonical();
    cs.push(Constraint::new(fresh_var.clone(), Rel::Ge, lo));
    cs.push(Constraint::new(fresh_var.clone(), Rel::Lt, hi));
    for (w, r) in writer.lhs.indices.iter().zip(region) {
        let sub = |e: &IndexExpr| e.substitute(var, &fresh);
        match r {
            RegionIndex::All => {}
            RegionIndex::Exact(e) => {
                let e = sub(e);
                match (&w.var, &e.var) {
                    (Some(wv), _) => cs.push(Constraint::new(wv.clone(), Rel::Eq, e.shifted(-w.offset))),
                    (None, Some(ev)) => {
                        cs.push(Constraint::new(ev.clone(), Rel::Eq, IndexExpr::constant(w.offset - e.offset)))
                    }
                    (None, None) => {
                        if w.offset != e.offset {
                            return false;
                        }
                    }
                }
            }
            RegionIndex::Prefix(p) => {
                let p = sub(p);
                match (&w.var, &p.var) {
                    (Some(wv), _) => cs.push(Constraint::new(wv.clone(), Rel::Lt, p.shifted(-w.offset))),
                    (None, Some(pv)) => {
                        cs.push(Constraint::new(pv.clone(), Rel::Gt, IndexExpr::constant(w.offset - p.offset)))
                    }
                    (None, None) => {
                        if w.offset >= p.offset {
                            return false;
                        }
                    }
                }
            }
        }
    }
    ConstraintSystem::new_symbolic(&cs, extents).is_feasible()
}

/// Does the marker's region include the access for every valid assignment?
pub fn covers(marker: &ReadinessMarker, access: &TensorAccess, sys: &ConstraintSystem) -> bool {
    if marker.tensor != access.tensor || marker.region.len() != access.indices.len() {
        return false;
    }
    marker.region.iter().zip(&access.indices).all(|(r, e)| match r {
        RegionIndex::All => true,
        RegionIndex::Exact(m) => m == e,
        RegionIndex::Prefix(p) => sys.implies_lt(e, p),
    })
}

/// Builds the empty skeleton: one forall nest in schedule order, loop
/// bounds filtered to in-scope variables.
fn build_skeleton_into(
    prog: &mut RinProgram,
    spec: &ProgramSpec,
    frags: &[MinimalFragment],
) -> Result<(), fragments::FragmentError> {
    let mut target = &mut prog.body;
    let mut next_id = 0;
    for var in &spec.schedule.ordering {
        let space = fragments::skeleton_space(var, frags, &spec.schedule, &spec.extents)?;
        target.push(RinStmt::Loop(RinLoop {
            id: next_id,
            var: var.clone(),
            space,
            kind: LoopKind::Forall,
            parallel: false,
            serialized: false,
            body: Vec::new(),
        }));
        next_id += 1;
        let last = target.len() - 1;
        target = match &mut target[last] {
            RinStmt::Loop(l) => &mut l.body,
            _ => unreachable!(),
        };
    }
    prog.next_loop_id = next_id;
    Ok(())
}

/// Public skeleton builder for inspection and tests.
pub fn build_skeleton(spec: &ProgramSpec, frags: &[MinimalFragment]) -> Result<RinProgram, fragments::FragmentError> {
    let mut prog = RinProgram::default();
    build_skeleton_into(&mut prog, spec, frags)?;
    Ok(prog)
}
