//! Structural validation of a parsed [`ProgramSpec`].

use super::{Constraint, ConstraintSystem, IndexExpr, LevelFormat, ProgramSpec, Rel, ScalarExpr};
use crate::fragments;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("tensor `{tensor}` used with rank {got} but previously rank {expected}")]
    RankMismatch { tensor: String, expected: usize, got: usize },
    #[error("loop ordering is missing index variable `{0}`")]
    OrderingMissing(String),
    #[error("loop ordering mentions unknown index variable `{0}`")]
    OrderingUnknown(String),
    #[error("loop ordering lists `{0}` more than once")]
    OrderingDuplicate(String),
    #[error("recurrences {0} and {1} write overlapping regions of `{2}`")]
    OverlappingRegions(usize, usize, String),
    #[error("variable `{var}` in recurrence {rec} is unbounded: no constraint and no unique extent")]
    Unbounded { rec: usize, var: String },
    #[error("constraints of recurrence {0} are unsatisfiable")]
    UnsatisfiableConstraints(usize),
    #[error("storage declared for unknown tensor `{0}`")]
    UnknownStorageTensor(String),
    #[error("storage for `{tensor}` must list each dimension 0..{rank} exactly once")]
    BadStorageLevels { tensor: String, rank: usize },
    #[error("storage for `{0}` uses more than one Compressed level, which is not supported")]
    TooManyCompressedLevels(String),
    #[error("mask for `{0}` must have exactly one Compressed level")]
    BadMask(String),
    #[error("left-hand side of recurrence {0} uses a constant index")]
    ConstantLhsIndex(usize),
    #[error("reduction variable `{var}` shadows an outer use in recurrence {rec}")]
    ReductionShadowing { rec: usize, var: String },
    #[error("reduction variable `{var}` appears in its own bounds in recurrence {rec}")]
    ReductionVarInBounds { rec: usize, var: String },
    #[error("initial value for unknown tensor `{0}`")]
    UnknownInitTensor(String),
    #[error("initial value for `{tensor}` has {got} coordinates, expected {expected}")]
    InitRankMismatch { tensor: String, expected: usize, got: usize },
    #[error("parallel directive names unknown variable `{0}`")]
    UnknownParallelVar(String),
    #[error("timestep directive names unknown tensor `{0}`")]
    UnknownTimestepTensor(String),
}

pub fn validate(spec: ProgramSpec) -> Result<ProgramSpec, ValidateError> {
    check_ranks(&spec)?;
    check_ordering(&spec)?;
    check_recurrences(&spec)?;
    check_disjointness(&spec)?;
    check_storage(&spec)?;
    check_inits(&spec)?;
    check_schedule_refs(&spec)?;
    Ok(spec)
}

fn check_ranks(spec: &ProgramSpec) -> Result<(), ValidateError> {
    let mut ranks: std::collections::BTreeMap<&str, usize> = Default::default();
    let check = |tensor: &str, rank: usize, ranks: &mut std::collections::BTreeMap<&str, usize>| {
        match ranks.get(tensor) {
            Some(&expected) if expected != rank => Err(ValidateError::RankMismatch {
                tensor: tensor.to_string(),
                expected,
                got: rank,
            }),
            _ => Ok(()),
        }
    };
    for r in &spec.recurrences {
        check(&r.lhs.tensor, r.lhs.indices.len(), &mut ranks)?;
        ranks.entry(&r.lhs.tensor).or_insert(r.lhs.indices.len());
        for a in r.rhs.accesses() {
            check(&a.tensor, a.indices.len(), &mut ranks)?;
            ranks.entry(&a.tensor).or_insert(a.indices.len());
        }
    }
    Ok(())
}

fn program_vars(spec: &ProgramSpec) -> BTreeSet<String> {
    let mut vars = BTreeSet::new();
    for r in &spec.recurrences {
        vars.extend(r.lhs.vars().map(String::from));
        vars.extend(r.rhs.vars());
        for c in &r.constraints {
            vars.insert(c.var.clone());
            if let Some(b) = c.bound.var.as_deref() {
                if !spec.extents.contains_key(b) {
                    vars.insert(b.to_string());
                }
            }
        }
    }
    // Extent symbols are sizes, not loop variables.
    for e in spec.extents.keys() {
        vars.remove(e);
    }
    vars
}

fn check_ordering(spec: &ProgramSpec) -> Result<(), ValidateError> {
    let vars = program_vars(spec);
    let mut seen = BTreeSet::new();
    for v in &spec.schedule.ordering {
        if !seen.insert(v.clone()) {
            return Err(ValidateError::OrderingDuplicate(v.clone()));
        }
        if !vars.contains(v) {
            return Err(ValidateError::OrderingUnknown(v.clone()));
        }
    }
    for v in vars {
        if !seen.contains(&v) {
            return Err(ValidateError::OrderingMissing(v));
        }
    }
    Ok(())
}

fn check_recurrences(spec: &ProgramSpec) -> Result<(), ValidateError> {
    for (idx, r) in spec.recurrences.iter().enumerate() {
        if r.lhs.indices.iter().any(|e| e.var.is_none()) {
            return Err(ValidateError::ConstantLhsIndex(idx));
        }
        let sys = ConstraintSystem::new(&r.constraints, &spec.extents);
        if !sys.is_feasible() {
            return Err(ValidateError::UnsatisfiableConstraints(idx));
        }
        check_reductions(&r.rhs, idx, &mut Vec::new())?;
        // Every variable of the recurrence must have a derivable upper bound.
        let mut vars: BTreeSet<String> = r.lhs.vars().map(String::from).collect();
        vars.extend(r.rhs.vars());
        for v in vars {
            if spec.extents.contains_key(&v) {
                continue;
            }
            fragments::iteration_space(&v, &r.constraints, &spec.extents)
                .map_err(|_| ValidateError::Unbounded { rec: idx, var: v.clone() })?;
        }
    }
    Ok(())
}

fn check_reductions(expr: &ScalarExpr, rec: usize, stack: &mut Vec<String>) -> Result<(), ValidateError> {
    match expr {
        ScalarExpr::Constant(_) | ScalarExpr::Access(_) => Ok(()),
        ScalarExpr::Unary { child, .. } => check_reductions(child, rec, stack),
        ScalarExpr::Binary { left, right, .. } => {
            check_reductions(left, rec, stack)?;
            check_reductions(right, rec, stack)
        }
        ScalarExpr::Reduction { var, lower, upper, body, .. } => {
            if stack.contains(var) {
                return Err(ValidateError::ReductionShadowing { rec, var: var.clone() });
            }
            if lower.var.as_deref() == Some(var) || upper.var.as_deref() == Some(var) {
                return Err(ValidateError::ReductionVarInBounds { rec, var: var.clone() });
            }
            stack.push(var.clone());
            let r = check_reductions(body, rec, stack);
            stack.pop();
            r
        }
    }
}

/// Two recurrences writing the same tensor must have provably disjoint
/// regions. The check joins both constraint systems (with the second
/// recurrence's variables renamed apart), equates the lhs coordinates
/// dimension by dimension, and asks whether the result is satisfiable.
fn check_disjointness(spec: &ProgramSpec) -> Result<(), ValidateError> {
    for i in 0..spec.recurrences.len() {
        for j in i + 1..spec.recurrences.len() {
            let a = &spec.recurrences[i];
            let b = &spec.recurrences[j];
            if a.lhs.tensor != b.lhs.tensor {
                continue;
            }
            let rename = |name: &str| format!("{name}~b");
            let mut combined: Vec<Constraint> = a.constraints.clone();
            for c in &b.constraints {
                let bound = IndexExpr {
                    var: c.bound.var.as_deref().map(|v| {
                        if spec.extents.contains_key(v) { v.to_string() } else { rename(v) }
                    }),
                    offset: c.bound.offset,
                };
                combined.push(Constraint { var: rename(&c.var), rel: c.rel, bound });
            }
            let mut provably_disjoint = false;
            for (ea, eb) in a.lhs.indices.iter().zip(&b.lhs.indices) {
                let eb = IndexExpr { var: eb.var.as_deref().map(rename), offset: eb.offset };
                match (&ea.var, &eb.var) {
                    (Some(va), _) => combined.push(Constraint::new(va.clone(), Rel::Eq, eb.shifted(-ea.offset))),
                    (None, Some(vb)) => {
                        combined.push(Constraint::new(vb.clone(), Rel::Eq, IndexExpr::constant(ea.offset - eb.offset)))
                    }
                    (None, None) => {
                        if ea.offset != eb.offset {
                            provably_disjoint = true;
                        }
                    }
                }
            }
            if provably_disjoint {
                continue;
            }
            let sys = ConstraintSystem::new(&combined, &spec.extents);
            if sys.is_feasible() {
                return Err(ValidateError::OverlappingRegions(i, j, a.lhs.tensor.clone()));
            }
        }
    }
    Ok(())
}

fn check_storage(spec: &ProgramSpec) -> Result<(), ValidateError> {
    for (tensor, s) in &spec.storage {
        let rank = spec
            .tensor_rank(tensor)
            .ok_or_else(|| ValidateError::UnknownStorageTensor(tensor.clone()))?;
        if !s.levels.is_empty() {
            let mut dims: Vec<usize> = s.levels.iter().map(|(d, _)| *d).collect();
            dims.sort_unstable();
            if dims != (0..rank).collect::<Vec<_>>() {
                return Err(ValidateError::BadStorageLevels { tensor: tensor.clone(), rank });
            }
            let compressed = s.levels.iter().filter(|(_, f)| *f == LevelFormat::Compressed).count();
            if compressed > 1 {
                return Err(ValidateError::TooManyCompressedLevels(tensor.clone()));
            }
        }
        for m in &s.masks {
            let mut dims: Vec<usize> = m.levels.iter().map(|(d, _)| *d).collect();
            dims.sort_unstable();
            let compressed = m.levels.iter().filter(|(_, f)| *f == LevelFormat::Compressed).count();
            if dims != (0..rank).collect::<Vec<_>>() || compressed != 1 {
                return Err(ValidateError::BadMask(tensor.clone()));
            }
        }
    }
    Ok(())
}

fn check_inits(spec: &ProgramSpec) -> Result<(), ValidateError> {
    for (tensor, coords) in spec.initial_values.keys() {
        let rank = spec
            .tensor_rank(tensor)
            .ok_or_else(|| ValidateError::UnknownInitTensor(tensor.clone()))?;
        if coords.len() != rank {
            return Err(ValidateError::InitRankMismatch {
                tensor: tensor.clone(),
                expected: rank,
                got: coords.len(),
            });
        }
    }
    Ok(())
}

fn check_schedule_refs(spec: &ProgramSpec) -> Result<(), ValidateError> {
    for v in &spec.schedule.parallel_vars {
        if !spec.schedule.ordering.contains(v) {
            return Err(ValidateError::UnknownParallelVar(v.clone()));
        }
    }
    if let Some((tensor, _)) = &spec.schedule.timestep {
        if spec.tensor_rank(tensor).is_none() {
            return Err(ValidateError::UnknownTimestepTensor(tensor.clone()));
        }
    }
    Ok(())
}
