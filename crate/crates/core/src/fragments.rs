//! Minimal fragment generation and schedule-directed normalization.
//!
//! Each reduction in a recurrence is split into its own accumulation
//! fragment writing a numbered alias of the output tensor; the residual
//! expression becomes an assignment fragment. Normalization then renames
//! index variables that are isomorphic to earlier schedule variables so
//! fragments can share loops.

use crate::frontend::{
    Constraint, ConstrainedRecurrence, ConstraintSystem, IndexExpr, ProgramSpec, ReduceOp, Rel, ScalarExpr, Schedule,
    TensorAccess,
};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FragmentError {
    #[error("index variable `{0}` has no derivable upper bound")]
    Unbounded(String),
    #[error("nested reductions share the variable `{0}`")]
    ReductionShadowing(String),
    #[error("alias tensor name `{0}` collides with a user tensor")]
    AliasCollision(String),
}

/// Half-open or closed interval over index expressions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationSpace {
    pub lower: IndexExpr,
    pub lower_inclusive: bool,
    pub upper: IndexExpr,
    pub upper_inclusive: bool,
}

impl IterationSpace {
    /// Normalized (inclusive lower, exclusive upper) pair.
    pub fn canonical(&self) -> (IndexExpr, IndexExpr) {
        let lo = if self.lower_inclusive { self.lower.clone() } else { self.lower.shifted(1) };
        let hi = if self.upper_inclusive { self.upper.shifted(1) } else { self.upper.clone() };
        (lo, hi)
    }

    pub fn same_bounds(&self, other: &IterationSpace) -> bool {
        self.canonical() == other.canonical()
    }

    pub fn substitute(&self, from: &str, to: &IndexExpr) -> IterationSpace {
        IterationSpace {
            lower: self.lower.substitute(from, to),
            lower_inclusive: self.lower_inclusive,
            upper: self.upper.substitute(from, to),
            upper_inclusive: self.upper_inclusive,
        }
    }
}

impl fmt::Display for IterationSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lo = if self.lower_inclusive { "[" } else { "(" };
        let hi = if self.upper_inclusive { "]" } else { ")" };
        write!(f, "{}{}, {}{}", lo, self.lower, self.upper, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FragmentMode {
    Assign,
    Reduce(ReduceOp),
}

/// One assignment statement: a reduction accumulation or a pointwise
/// assignment, with a reduction-free right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalFragment {
    pub lhs: TensorAccess,
    pub mode: FragmentMode,
    /// The accumulation variable, for reduce-mode fragments.
    pub reduce_var: Option<String>,
    pub rhs: ScalarExpr,
    pub constraints: Vec<Constraint>,
    /// Index of the source recurrence.
    pub origin: usize,
    /// Creation index within the source recurrence.
    pub creation: usize,
}

impl MinimalFragment {
    /// Variables appearing in the lhs or rhs accesses.
    pub fn used_vars(&self) -> BTreeSet<String> {
        let mut vars: BTreeSet<String> = self.lhs.vars().map(String::from).collect();
        for a in self.rhs.accesses() {
            vars.extend(a.vars().map(String::from));
        }
        vars
    }

    /// Variables appearing anywhere, including constraint bounds.
    pub fn all_vars(&self) -> BTreeSet<String> {
        let mut vars = self.used_vars();
        for c in &self.constraints {
            vars.insert(c.var.clone());
            if let Some(b) = c.bound.var.as_deref() {
                vars.insert(b.to_string());
            }
        }
        vars
    }

    pub fn substitute(&self, from: &str, to: &IndexExpr) -> MinimalFragment {
        MinimalFragment {
            lhs: self.lhs.substitute(from, to),
            mode: self.mode,
            reduce_var: self.reduce_var.clone().map(|v| {
                if v == from {
                    to.var.clone().unwrap_or(v)
                } else {
                    v
                }
            }),
            rhs: self.rhs.substitute(from, to),
            constraints: self.constraints.iter().map(|c| c.substitute(from, to)).collect(),
            origin: self.origin,
            creation: self.creation,
        }
    }

    pub fn is_reduce(&self) -> bool {
        matches!(self.mode, FragmentMode::Reduce(_))
    }
}

impl fmt::Display for MinimalFragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.mode {
            FragmentMode::Assign => "=",
            FragmentMode::Reduce(ReduceOp::Add) => "+=",
            FragmentMode::Reduce(ReduceOp::Min) => "min=",
            FragmentMode::Reduce(ReduceOp::Max) => "max=",
        };
        write!(f, "{} {} {}", self.lhs, op, self.rhs)?;
        if !self.constraints.is_empty() {
            write!(f, " : [")?;
            for (k, c) in self.constraints.iter().enumerate() {
                if k > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{c}")?;
            }
            write!(f, "]")?;
        }
        Ok(())
    }
}

/// Tightest loop bounds for `var` derivable from the constraints; defaults
/// to `[0, extent)` when nothing else bounds it and a unique extent exists.
pub fn iteration_space(
    var: &str,
    constraints: &[Constraint],
    extents: &BTreeMap<String, i64>,
) -> Result<IterationSpace, FragmentError> {
    iteration_space_scoped(var, constraints, extents, None)
}

/// As [`iteration_space`], but bound candidates may only mention variables
/// in `scope` (extent symbols and constants always qualify).
pub fn iteration_space_scoped(
    var: &str,
    constraints: &[Constraint],
    extents: &BTreeMap<String, i64>,
    scope: Option<&BTreeSet<String>>,
) -> Result<IterationSpace, FragmentError> {
    let admissible = |e: &IndexExpr| match e.var.as_deref() {
        None => true,
        Some(v) => extents.contains_key(v) || scope.map_or(true, |s| s.contains(v)),
    };

    // (expr, inclusive)
    let mut uppers: Vec<(IndexExpr, bool)> = Vec::new();
    let mut lowers: Vec<(IndexExpr, bool)> = Vec::new();
    for c in constraints {
        if c.var == var {
            match c.rel {
                Rel::Lt => uppers.push((c.bound.clone(), false)),
                Rel::Le => uppers.push((c.bound.clone(), true)),
                Rel::Eq => {
                    uppers.push((c.bound.clone(), true));
                    lowers.push((c.bound.clone(), true));
                }
                Rel::Gt => lowers.push((c.bound.clone(), false)),
                Rel::Ge => lowers.push((c.bound.clone(), true)),
            }
        } else if c.bound.var.as_deref() == Some(var) {
            // u REL var+off constrains var from the other side.
            let u = IndexExpr { var: Some(c.var.clone()), offset: -c.bound.offset };
            match c.rel {
                Rel::Lt => lowers.push((u, false)),
                Rel::Le => lowers.push((u, true)),
                Rel::Eq => {
                    lowers.push((u.clone(), true));
                    uppers.push((u, true));
                }
                Rel::Gt => uppers.push((u, false)),
                Rel::Ge => uppers.push((u, true)),
            }
        }
    }
    uppers.retain(|(e, _)| admissible(e));
    lowers.retain(|(e, _)| admissible(e));

    let sys = ConstraintSystem::new_symbolic(constraints, extents);
    let excl = |(e, incl): &(IndexExpr, bool)| if *incl { e.shifted(1) } else { e.clone() };
    let incl_lo = |(e, incl): &(IndexExpr, bool)| if *incl { e.clone() } else { e.shifted(1) };

    let upper = match uppers.first() {
        None => {
            if extents.len() == 1 {
                let name = extents.keys().next().unwrap();
                (IndexExpr::var(name.clone()), false)
            } else {
                return Err(FragmentError::Unbounded(var.to_string()));
            }
        }
        Some(first) => {
            let mut best = first.clone();
            for cand in &uppers[1..] {
                if excl(cand) != excl(&best) && sys.implies_le(&excl(cand), &excl(&best)) {
                    best = cand.clone();
                }
            }
            best
        }
    };

    let mut best_lo = (IndexExpr::constant(0), true);
    for cand in &lowers {
        if incl_lo(cand) != incl_lo(&best_lo) && sys.implies_le(&incl_lo(&best_lo), &incl_lo(cand)) {
            best_lo = cand.clone();
        }
    }

    Ok(IterationSpace {
        lower: best_lo.0,
        lower_inclusive: best_lo.1,
        upper: upper.0,
        upper_inclusive: upper.1,
    })
}

/// Constraint system with every variable's iteration space materialized
/// and, when derivation cycles (equalities) keep a variable away from a
/// numeric bound, the ambient extent added, so numeric ranges exist.
pub fn grounded_system(
    base: &[Constraint],
    vars: &BTreeSet<String>,
    extents: &BTreeMap<String, i64>,
) -> ConstraintSystem {
    ConstraintSystem::new(&grounded_constraints(base, vars, extents), extents)
}

/// Grounded constraints with extent symbols left symbolic; the form used by
/// placement so results do not depend on extent values.
pub fn grounded_system_symbolic(
    base: &[Constraint],
    vars: &BTreeSet<String>,
    extents: &BTreeMap<String, i64>,
) -> ConstraintSystem {
    ConstraintSystem::new_symbolic(&grounded_constraints(base, vars, extents), extents)
}

fn grounded_constraints(
    base: &[Constraint],
    vars: &BTreeSet<String>,
    extents: &BTreeMap<String, i64>,
) -> Vec<Constraint> {
    let mut cs = base.to_vec();
    for v in vars {
        if extents.contains_key(v) {
            continue;
        }
        if let Ok(space) = iteration_space(v, base, extents) {
            let (lo, hi) = space.canonical();
            cs.push(Constraint::new(v.clone(), Rel::Ge, lo));
            cs.push(Constraint::new(v.clone(), Rel::Lt, hi));
        }
    }
    let sys = ConstraintSystem::new(&cs, extents);
    if extents.len() == 1 {
        let ambient = extents.keys().next().unwrap().clone();
        for v in vars {
            if extents.contains_key(v) {
                continue;
            }
            if sys.numeric_max(&IndexExpr::var(v.clone())).is_none() {
                cs.push(Constraint::lt(v.clone(), IndexExpr::var(ambient.clone())));
            }
        }
    }
    cs
}

/// Splits a recurrence into minimal fragments, bottom-up: one reduce
/// fragment per reduction node plus at most one residual assignment.
pub fn generate_fragments(rec: &ConstrainedRecurrence, origin: usize, spec: &ProgramSpec) -> Result<Vec<MinimalFragment>, FragmentError> {
    let user_tensors: BTreeSet<String> = spec
        .output_tensors()
        .into_iter()
        .chain(spec.input_tensors())
        .collect();

    let mut frags = Vec::new();
    let mut alias_counter = 0usize;
    let lhs_vars: Vec<String> = rec.lhs.vars().map(String::from).collect();
    let mut seen_reduce_vars: Vec<String> = Vec::new();

    let residual = extract(
        &rec.rhs,
        rec,
        origin,
        &lhs_vars,
        &user_tensors,
        &mut alias_counter,
        &mut seen_reduce_vars,
        &mut frags,
    )?;

    // A residual that is exactly the last alias access collapses: the
    // reduction writes the output directly.
    let trivial = match (&residual, frags.last()) {
        (ScalarExpr::Access(a), Some(last)) => *a == last.lhs,
        _ => false,
    };
    if trivial {
        let mut only = frags.pop().unwrap();
        only.lhs = rec.lhs.clone();
        frags.push(only);
    } else {
        let assign_constraints = non_reduction_constraints(&rec.constraints, &seen_reduce_vars);
        frags.push(MinimalFragment {
            lhs: rec.lhs.clone(),
            mode: FragmentMode::Assign,
            reduce_var: None,
            rhs: residual,
            constraints: assign_constraints,
            origin,
            creation: frags.len(),
        });
    }
    Ok(frags)
}

fn non_reduction_constraints(constraints: &[Constraint], reduce_vars: &[String]) -> Vec<Constraint> {
    constraints
        .iter()
        .filter(|c| c.vars().iter().all(|v| !reduce_vars.iter().any(|r| r == v)))
        .cloned()
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn extract(
    expr: &ScalarExpr,
    rec: &ConstrainedRecurrence,
    origin: usize,
    lhs_vars: &[String],
    user_tensors: &BTreeSet<String>,
    alias_counter: &mut usize,
    seen_reduce_vars: &mut Vec<String>,
    frags: &mut Vec<MinimalFragment>,
) -> Result<ScalarExpr, FragmentError> {
    match expr {
        ScalarExpr::Constant(_) | ScalarExpr::Access(_) => Ok(expr.clone()),
        ScalarExpr::Unary { op, child } => {
            let c = extract(child, rec, origin, lhs_vars, user_tensors, alias_counter, seen_reduce_vars, frags)?;
            Ok(ScalarExpr::Unary { op: *op, child: Box::new(c) })
        }
        ScalarExpr::Binary { op, left, right } => {
            let l = extract(left, rec, origin, lhs_vars, user_tensors, alias_counter, seen_reduce_vars, frags)?;
            let r = extract(right, rec, origin, lhs_vars, user_tensors, alias_counter, seen_reduce_vars, frags)?;
            Ok(ScalarExpr::Binary { op: *op, left: Box::new(l), right: Box::new(r) })
        }
        ScalarExpr::Reduction { var, lower, upper, op, body } => {
            if seen_reduce_vars.contains(var) || lhs_vars.contains(var) {
                return Err(FragmentError::ReductionShadowing(var.clone()));
            }
            let body = extract(body, rec, origin, lhs_vars, user_tensors, alias_counter, seen_reduce_vars, frags)?;
            seen_reduce_vars.push(var.clone());

            *alias_counter += 1;
            let alias = format!("{}{}", rec.lhs.tensor, alias_counter);
            if user_tensors.contains(&alias) {
                return Err(FragmentError::AliasCollision(alias));
            }

            // Alias indices: the output's indices plus any free variable of
            // the body that is neither an lhs variable nor the reduction var.
            let mut indices = rec.lhs.indices.clone();
            let mut extra: Vec<String> = Vec::new();
            for v in body.vars() {
                if v != *var && !lhs_vars.contains(&v) && !extra.contains(&v) && !seen_reduce_vars.contains(&v) {
                    extra.push(v);
                }
            }
            indices.extend(extra.into_iter().map(IndexExpr::var));

            // The reduce fragment keeps constraints relevant to its own
            // reduction variable; sibling reduction variables drop out.
            let others: Vec<String> = seen_reduce_vars.iter().filter(|v| *v != var).cloned().collect();
            let mut constraints = non_reduction_constraints(&rec.constraints, &others);
            let bound_up = Constraint::lt(var.clone(), upper.clone());
            if !constraints.contains(&bound_up) && !implied_by(&constraints, &bound_up, rec) {
                constraints.push(bound_up);
            }
            if !(lower.var.is_none() && lower.offset == 0) {
                let bound_lo = Constraint::new(var.clone(), Rel::Ge, lower.clone());
                if !constraints.contains(&bound_lo) {
                    constraints.push(bound_lo);
                }
            }

            let lhs = TensorAccess { tensor: alias.clone(), indices };
            frags.push(MinimalFragment {
                lhs: lhs.clone(),
                mode: FragmentMode::Reduce(*op),
                reduce_var: Some(var.clone()),
                rhs: body,
                constraints,
                origin,
                creation: frags.len(),
            });
            Ok(ScalarExpr::Access(lhs))
        }
    }
}

fn implied_by(constraints: &[Constraint], c: &Constraint, _rec: &ConstrainedRecurrence) -> bool {
    let sys = ConstraintSystem::new(constraints, &BTreeMap::new());
    match c.rel {
        Rel::Lt => sys.implies_lt(&IndexExpr::var(c.var.clone()), &c.bound),
        Rel::Le => sys.implies_le(&IndexExpr::var(c.var.clone()), &c.bound),
        _ => false,
    }
}

/// Renames `u` to `v` throughout the fragment when their iteration spaces
/// coincide: `u`'s space in the fragment (bounds filtered to variables in
/// scope at `v`'s nesting depth) against `v`'s scope space.
pub fn substitute_if_isomorphic(
    frag: &MinimalFragment,
    u: &str,
    v: &str,
    scope_space: &IterationSpace,
    schedule: &Schedule,
    extents: &BTreeMap<String, i64>,
) -> MinimalFragment {
    let (Some(pu), Some(pv)) = (schedule.position(u), schedule.position(v)) else {
        return frag.clone();
    };
    if pv >= pu || frag.all_vars().contains(v) || !frag.used_vars().contains(u) {
        return frag.clone();
    }
    let in_scope: BTreeSet<String> = schedule.ordering[..=pv].iter().cloned().collect();
    let Ok(su) = iteration_space_scoped(u, &frag.constraints, extents, Some(&in_scope)) else {
        return frag.clone();
    };
    if su.same_bounds(scope_space) {
        frag.substitute(u, &IndexExpr::var(v))
    } else {
        frag.clone()
    }
}

/// Loop-header space each schedule variable will get in the skeleton: the
/// fragments' unanimous space, or the ambient `[0, extent)` default when
/// they disagree.
pub fn skeleton_space(
    var: &str,
    frags: &[MinimalFragment],
    schedule: &Schedule,
    extents: &BTreeMap<String, i64>,
) -> Result<IterationSpace, FragmentError> {
    let pos = schedule.position(var).unwrap_or(0);
    let scope: BTreeSet<String> = schedule.ordering[..pos].iter().cloned().collect();
    // The pooled constraint set gives the tightest common header; when the
    // recurrences' regions are mutually inconsistent, fall back to the
    // fragments' unanimous space or the ambient default.
    if let Some(pooled) = pooled_constraints(frags, extents) {
        if let Ok(s) = iteration_space_scoped(var, &pooled, extents, Some(&scope)) {
            return Ok(s);
        }
    }
    let mut spaces: Vec<IterationSpace> = Vec::new();
    for f in frags {
        if f.used_vars().contains(var) {
            if let Ok(s) = iteration_space_scoped(var, &f.constraints, extents, Some(&scope)) {
                spaces.push(s);
            }
        }
    }
    match spaces.first() {
        Some(first) if spaces.iter().all(|s| s.same_bounds(first)) => Ok(first.clone()),
        _ => {
            if extents.len() == 1 {
                let name = extents.keys().next().unwrap();
                Ok(IterationSpace {
                    lower: IndexExpr::constant(0),
                    lower_inclusive: true,
                    upper: IndexExpr::var(name.clone()),
                    upper_inclusive: false,
                })
            } else if let Some(first) = spaces.first() {
                Ok(first.clone())
            } else {
                Err(FragmentError::Unbounded(var.to_string()))
            }
        }
    }
}

/// Union of every fragment's constraints, when jointly satisfiable.
pub fn pooled_constraints(
    frags: &[MinimalFragment],
    extents: &BTreeMap<String, i64>,
) -> Option<Vec<Constraint>> {
    let mut pooled: Vec<Constraint> = Vec::new();
    for f in frags {
        for c in &f.constraints {
            if !pooled.contains(c) {
                pooled.push(c.clone());
            }
        }
    }
    if ConstraintSystem::new_symbolic(&pooled, extents).is_feasible() {
        Some(pooled)
    } else {
        None
    }
}

/// Generates fragments for every recurrence and normalizes them against the
/// schedule: equality constraints eliminate the later variable, then
/// isomorphic variables are renamed to the earliest candidate, to fixpoint.
pub fn generate_and_normalize(spec: &ProgramSpec) -> Result<Vec<MinimalFragment>, FragmentError> {
    let mut variants = generate_and_normalize_variants(spec)?;
    Ok(variants.remove(0))
}

/// Candidate substitution orders. Which variable to rename when several are
/// isomorphic depends on what later placement needs, so the placement
/// driver tries each variant in turn: first the plain schedule-ascending
/// scan, then a scan that prefers variables linked to reduction upper
/// bounds (the substitution pattern of accumulations that finish one slice
/// per outer iteration).
pub fn generate_and_normalize_variants(spec: &ProgramSpec) -> Result<Vec<Vec<MinimalFragment>>, FragmentError> {
    let mut base = Vec::new();
    for (idx, rec) in spec.recurrences.iter().enumerate() {
        base.extend(generate_fragments(rec, idx, spec)?);
    }
    eliminate_equalities(&mut base, &spec.schedule);
    let mut variants = Vec::new();
    for order in [ScanOrder::Ascending, ScanOrder::ShiftLinkedFirst] {
        let mut frags = base.clone();
        normalize(&mut frags, &spec.schedule, &spec.extents, order);
        if !variants.contains(&frags) {
            variants.push(frags);
        }
    }
    Ok(variants)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScanOrder {
    Ascending,
    ShiftLinkedFirst,
}

/// Variables of `frag` that stand where a consumed reduction's upper bound
/// sits: renaming them first lets the fragment ride the accumulation's
/// slice-completion pattern. Only reductions that can actually write the
/// accessed cells count.
fn shift_linked_vars(frag: &MinimalFragment, frags: &[MinimalFragment], extents: &BTreeMap<String, i64>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for a in frag.rhs.accesses() {
        for g in frags {
            if g.lhs.tensor != a.tensor || !g.is_reduce() || g.lhs.indices.len() != a.indices.len() {
                continue;
            }
            // The access pattern must be satisfiable against g's lhs.
            let mut cs = frag.constraints.clone();
            let mut compatible = true;
            for (ae, ge) in a.indices.iter().zip(&g.lhs.indices) {
                match (&ae.var, &ge.var) {
                    (Some(av), _) => cs.push(Constraint::new(av.clone(), Rel::Eq, ge.shifted(-ae.offset))),
                    (None, Some(gv)) => {
                        cs.push(Constraint::new(gv.clone(), Rel::Eq, IndexExpr::constant(ae.offset - ge.offset)))
                    }
                    (None, None) => compatible &= ae.offset == ge.offset,
                }
            }
            if !compatible || !ConstraintSystem::new_symbolic(&cs, extents).is_feasible() {
                continue;
            }
            let Some(rv) = g.reduce_var.as_deref() else { continue };
            let Ok(space) = iteration_space(rv, &g.constraints, extents) else { continue };
            let (_, hi) = space.canonical();
            let Some(upper_var) = hi.var else { continue };
            for (d, ge) in g.lhs.indices.iter().enumerate() {
                if ge.var.as_deref() == Some(upper_var.as_str()) {
                    if let Some(u) = a.indices[d].var.clone() {
                        out.insert(u);
                    }
                }
            }
        }
    }
    out
}

/// Rewrites `u = v + c` constraints by substituting away whichever variable
/// comes later in the schedule ordering.
fn eliminate_equalities(frags: &mut [MinimalFragment], schedule: &Schedule) {
    for f in frags.iter_mut() {
        loop {
            let mut subst: Option<(String, IndexExpr)> = None;
            for (ci, c) in f.constraints.iter().enumerate() {
                if c.rel != Rel::Eq {
                    continue;
                }
                let Some(bv) = c.bound.var.as_deref() else { continue };
                let (Some(pu), Some(pb)) = (schedule.position(&c.var), schedule.position(bv)) else {
                    continue;
                };
                if c.var == bv {
                    continue;
                }
                if pu > pb {
                    // u = v+c, u later: u := v+c
                    subst = Some((c.var.clone(), c.bound.clone()));
                } else {
                    // v later: v := u-c
                    subst = Some((bv.to_string(), IndexExpr::var_off(c.var.clone(), -c.bound.offset)));
                }
                f.constraints.remove(ci);
                break;
            }
            match subst {
                Some((from, to)) => {
                    *f = f.substitute(&from, &to);
                    // Substitution can leave degenerate `v = v` constraints.
                    f.constraints.retain(|c| {
                        !(c.rel == Rel::Eq && c.bound.var.as_deref() == Some(c.var.as_str()) && c.bound.offset == 0)
                    });
                }
                None => break,
            }
        }
    }
}

fn normalize(frags: &mut Vec<MinimalFragment>, schedule: &Schedule, extents: &BTreeMap<String, i64>, order: ScanOrder) {
    loop {
        let mut changed = false;
        for i in 0..frags.len() {
            'frag: loop {
                let used = frags[i].used_vars();
                let linked = match order {
                    ScanOrder::Ascending => BTreeSet::new(),
                    ScanOrder::ShiftLinkedFirst => shift_linked_vars(&frags[i], frags, extents),
                };
                let mut by_pos: Vec<&String> = used.iter().filter(|v| schedule.position(v).is_some()).collect();
                by_pos.sort_by_key(|v| (!linked.contains(v.as_str()), schedule.position(v).unwrap()));
                for u in by_pos {
                    let pu = schedule.position(u).unwrap();
                    for v in &schedule.ordering[..pu] {
                        let Ok(scope_space) = skeleton_space(v, frags, schedule, extents) else {
                            continue;
                        };
                        let replaced =
                            substitute_if_isomorphic(&frags[i], u, v, &scope_space, schedule, extents);
                        if replaced != frags[i] {
                            frags[i] = replaced;
                            changed = true;
                            continue 'frag;
                        }
                    }
                }
                break;
            }
        }
        if !changed {
            break;
        }
    }
}
