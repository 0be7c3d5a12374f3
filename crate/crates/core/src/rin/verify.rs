//! Independent re-check of a lowered program: dependency coverage at each
//! statement, forall safety, and assumption-restriction discipline.

use super::place::covers;
use super::{LoopKind, Location, ReadinessMarker, RegionIndex, RinLoop, RinProgram, RinStmt};
use crate::fragments::MinimalFragment;
use crate::frontend::{Constraint, ConstraintSystem, IndexExpr, ProgramSpec, Rel, TensorAccess};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RinViolation {
    #[error("dependency `{dep}` of `{stmt}` is not covered at its location")]
    UncoveredDependency { stmt: String, dep: String },
    #[error("forall loop over `{var}` carries a write-write dependency through `{stmt}`")]
    ForallWaw { var: String, stmt: String },
    #[error("forall loop over `{var}` carries a dependency: `{writer}` vs read `{read}`")]
    ForallRaw { var: String, writer: String, read: String },
    #[error("write to `{tensor}` by `{stmt}` escapes its assumed loop")]
    RestrictionViolated { tensor: String, stmt: String },
}

pub fn verify_rin(prog: &RinProgram, spec: &ProgramSpec) -> Result<(), RinViolation> {
    let produced: BTreeSet<String> = prog
        .assignments()
        .iter()
        .map(|(f, _)| f.lhs.tensor.clone())
        .collect();
    check_coverage(prog, spec, &produced)?;
    check_foralls(prog, spec)?;
    check_restrictions(prog, spec)?;
    Ok(())
}

fn check_coverage(prog: &RinProgram, spec: &ProgramSpec, produced: &BTreeSet<String>) -> Result<(), RinViolation> {
    // Walk every assign with its location, rebuilding visibility from
    // scratch.
    fn walk(
        prog: &RinProgram,
        spec: &ProgramSpec,
        produced: &BTreeSet<String>,
        body: &[RinStmt],
        path: &mut Vec<usize>,
        loops: &mut Vec<Constraint>,
    ) -> Result<(), RinViolation> {
        for (i, stmt) in body.iter().enumerate() {
            match stmt {
                RinStmt::Assign(f) => {
                    let loc = Location { path: path.clone(), index: i };
                    let visible: Vec<&ReadinessMarker> = prog.ready_at_location(&loc);
                    let mut cs = f.constraints.clone();
                    cs.extend(loops.iter().cloned());
                    let sys = ConstraintSystem::new_symbolic(&cs, &spec.extents);
                    for a in f.rhs.accesses() {
                        if !produced.contains(&a.tensor) || *a == f.lhs {
                            continue;
                        }
                        if !visible.iter().any(|m| covers(m, a, &sys)) {
                            return Err(RinViolation::UncoveredDependency {
                                stmt: f.to_string(),
                                dep: a.to_string(),
                            });
                        }
                    }
                }
                RinStmt::Loop(l) => {
                    let (lo, hi) = l.space.canonical();
                    path.push(i);
                    loops.push(Constraint::new(l.var.clone(), Rel::Ge, lo));
                    loops.push(Constraint::new(l.var.clone(), Rel::Lt, hi));
                    walk(prog, spec, produced, &l.body, path, loops)?;
                    loops.pop();
                    loops.pop();
                    path.pop();
                }
                RinStmt::Readiness(_) => {}
            }
        }
        Ok(())
    }
    walk(prog, spec, produced, &prog.body, &mut Vec::new(), &mut Vec::new())
}

fn check_foralls(prog: &RinProgram, spec: &ProgramSpec) -> Result<(), RinViolation> {
    for l in prog.loops() {
        if l.kind != LoopKind::Forall {
            continue;
        }
        let inside = collect_assigns(&l.body);
        // Write-write: every write must distinguish iterations through the
        // loop variable, or accumulate over it.
        for f in &inside {
            let writes_with_u = f.lhs.vars().any(|v| v == l.var);
            let reduces_over_u = f.reduce_var.as_deref() == Some(l.var.as_str());
            if !writes_with_u && !reduces_over_u {
                return Err(RinViolation::ForallWaw { var: l.var.clone(), stmt: f.to_string() });
            }
        }
        // Read-write: a read may not alias another iteration's write.
        let outer_vars = outer_vars_of(prog, l.id);
        for writer in &inside {
            for reader in &inside {
                for access in reader.rhs.accesses() {
                    if access.tensor != writer.lhs.tensor {
                        continue;
                    }
                    if *access == reader.lhs {
                        continue; // in-place read of the cell being written
                    }
                    if !raw_disjoint(writer, access, reader, l, &outer_vars, spec) {
                        return Err(RinViolation::ForallRaw {
                            var: l.var.clone(),
                            writer: writer.lhs.to_string(),
                            read: access.to_string(),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

fn collect_assigns(body: &[RinStmt]) -> Vec<MinimalFragment> {
    let mut out = Vec::new();
    for s in body {
        match s {
            RinStmt::Assign(f) => out.push(f.clone()),
            RinStmt::Loop(l) => out.extend(collect_assigns(&l.body)),
            RinStmt::Readiness(_) => {}
        }
    }
    out
}

fn outer_vars_of(prog: &RinProgram, loop_id: usize) -> BTreeSet<String> {
    match prog.path_of_loop(loop_id) {
        Some(path) => {
            let loops = prog.loops_along(&path);
            loops
                .iter()
                .take_while(|l| l.id != loop_id)
                .map(|l| l.var.clone())
                .collect()
        }
        None => BTreeSet::new(),
    }
}

/// Can `access` (read by `reader`) ever name a cell written by `writer` in
/// a different iteration of forall loop `u`? Disjointness holds when some
/// dimension separates them for every valid assignment.
fn raw_disjoint(
    writer: &MinimalFragment,
    access: &TensorAccess,
    reader: &MinimalFragment,
    u: &RinLoop,
    outer_vars: &BTreeSet<String>,
    spec: &ProgramSpec,
) -> bool {
    let mut cs = writer.constraints.clone();
    cs.extend(reader.constraints.clone());
    let (lo, hi) = u.space.canonical();
    cs.push(Constraint::new(u.var.clone(), Rel::Ge, lo.clone()));
    cs.push(Constraint::new(u.var.clone(), Rel::Lt, hi.clone()));
    let sys = ConstraintSystem::new_symbolic(&cs, &spec.extents);

    for (w, r) in writer.lhs.indices.iter().zip(&access.indices) {
        let w_has_u = w.var.as_deref() == Some(u.var.as_str());
        let r_has_u = r.var.as_deref() == Some(u.var.as_str());
        match (w_has_u, r_has_u) {
            (true, true) => {
                // u+c vs u+c' with the same offset names different cells in
                // different iterations.
                if w.offset == r.offset {
                    return true;
                }
            }
            (false, false) => {
                // Comparable only when both sides are iteration-invariant:
                // bound by outer loops or constants.
                let invariant = |e: &IndexExpr| match e.var.as_deref() {
                    None => true,
                    Some(v) => outer_vars.contains(v),
                };
                if invariant(w) && invariant(r) && (sys.implies_lt(w, r) || sys.implies_lt(r, w)) {
                    return true;
                }
            }
            (true, false) => {
                // Write at u+c, read at invariant e: disjoint when e-c is
                // provably outside the loop space.
                if r.var.as_deref().map_or(true, |v| outer_vars.contains(v)) {
                    let e = r.shifted(-w.offset);
                    if sys.implies_lt(&e, &lo) || sys.implies_le(&hi, &e) {
                        return true;
                    }
                }
            }
            (false, true) => {
                if w.var.as_deref().map_or(true, |v| outer_vars.contains(v)) {
                    let e = w.shifted(-r.offset);
                    if sys.implies_lt(&e, &lo) || sys.implies_le(&hi, &e) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Assumption markers lead a loop body; every write of cells their region
/// can cover (for some iteration of the loop) must be nested inside it.
fn check_restrictions(prog: &RinProgram, spec: &ProgramSpec) -> Result<(), RinViolation> {
    struct Binding {
        loop_id: usize,
        tensor: String,
        region: Vec<RegionIndex>,
        var: String,
    }
    let mut bindings = Vec::new();
    for l in prog.loops() {
        for s in &l.body {
            match s {
                RinStmt::Readiness(m) => {
                    let inductive = m
                        .region
                        .iter()
                        .any(|r| matches!(r, RegionIndex::Prefix(e) if e.var.as_deref() == Some(l.var.as_str())));
                    if inductive {
                        bindings.push(Binding {
                            loop_id: l.id,
                            tensor: m.tensor.clone(),
                            region: m.region.clone(),
                            var: l.var.clone(),
                        });
                    }
                }
                _ => break,
            }
        }
    }
    for b in &bindings {
        let bound_loop = prog.find_loop(b.loop_id).expect("binding loop exists");
        let inside: BTreeSet<String> = collect_assigns(&bound_loop.body)
            .iter()
            .map(|f| f.to_string())
            .collect();
        for (f, _) in prog.assignments() {
            if f.lhs.tensor != b.tensor || inside.contains(&f.to_string()) {
                continue;
            }
            if super::place::claim_restricts(f, &b.region, &b.var, &bound_loop.space, &spec.extents) {
                return Err(RinViolation::RestrictionViolated {
                    tensor: b.tensor.clone(),
                    stmt: f.to_string(),
                });
            }
        }
    }
    Ok(())
}
