//! Post-placement schedule transformations: timestep-dimension removal,
//! parallel-loop marking, and mask attachment.

use crate::frontend::{LevelFormat, ProgramSpec, StorageSpec, TensorAccess};
use crate::rin::{LoopKind, RinProgram, RinStmt};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("timestep variable `{var}` does not index exactly one dimension of `{tensor}` in every access")]
    TimestepDimAmbiguous { tensor: String, var: String },
    #[error("access `{access}` carries a non-timestep index in the timestep dimension")]
    TimestepDirtyAccess { access: String },
    #[error("no loop over `{0}`")]
    NoLoop(String),
    #[error("loop over `{0}` carries a dependency - cannot parallelize")]
    LoopCarried(String),
    #[error("loop over `{0}` was serialized by timestep removal - cannot parallelize")]
    Serialized(String),
    #[error("sparse scatter under parallel loop unsupported (tensor `{0}`)")]
    SparseScatter(String),
    #[error("mask for `{0}` has mismatched rank")]
    MaskRank(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimestepSpec {
    pub tensor: String,
    pub var: String,
}

/// Deletes the timestep dimension of the tensor from every access, its
/// storage, and the initial values; the timestep loop becomes `for` and all
/// loops inside it that write the tensor lose parallelizability.
pub fn remove_timestep_dim(
    prog: &RinProgram,
    ts: &TimestepSpec,
    spec: &ProgramSpec,
) -> Result<(RinProgram, ProgramSpec), TransformError> {
    // The removed dimension: in every access, exactly one dimension indexed
    // by the timestep variable (with only pure time offsets `var-c`).
    let mut accesses: Vec<TensorAccess> = Vec::new();
    for (f, _) in prog.assignments() {
        if f.lhs.tensor == ts.tensor {
            accesses.push(f.lhs.clone());
        }
        for a in f.rhs.accesses() {
            if a.tensor == ts.tensor {
                accesses.push(a.clone());
            }
        }
    }
    // The timestep dimension is the one the variable indexes in every
    // access (other dimensions may use the variable incidentally, like the
    // intermediate-node index of all-pairs shortest paths).
    let rank = accesses.first().map(|a| a.indices.len()).unwrap_or(0);
    let candidates: Vec<usize> = (0..rank)
        .filter(|&d| {
            accesses
                .iter()
                .all(|a| a.indices[d].var.as_deref() == Some(ts.var.as_str()))
        })
        .collect();
    if candidates.len() != 1 {
        return Err(TransformError::TimestepDimAmbiguous { tensor: ts.tensor.clone(), var: ts.var.clone() });
    }
    let dim = candidates[0];
    for a in &accesses {
        if a.indices[dim].offset > 0 {
            return Err(TransformError::TimestepDirtyAccess { access: a.to_string() });
        }
    }

    let mut out = prog.clone();
    rewrite_body(&mut out.body, &ts.tensor, dim, &ts.var, false);

    let mut new_spec = spec.clone();
    // Storage loses the dimension; later dimensions shift down.
    let storage = new_spec.storage.entry(ts.tensor.clone()).or_insert_with(|| {
        StorageSpec::dense(spec.tensor_rank(&ts.tensor).unwrap_or(0))
    });
    if storage.levels.is_empty() {
        *storage = StorageSpec::dense(spec.tensor_rank(&ts.tensor).unwrap_or(0));
    }
    storage.levels.retain(|(d, _)| *d != dim);
    for (d, _) in storage.levels.iter_mut() {
        if *d > dim {
            *d -= 1;
        }
    }
    // Initial values drop the removed coordinate (seeds live at offset 0).
    let mut inits = std::collections::BTreeMap::new();
    for ((t, coords), v) in &new_spec.initial_values {
        if t == &ts.tensor {
            let mut c = coords.clone();
            c.remove(dim);
            inits.insert((t.clone(), c), *v);
        } else {
            inits.insert((t.clone(), coords.clone()), *v);
        }
    }
    new_spec.initial_values = inits;
    Ok((out, new_spec))
}

fn rewrite_body(body: &mut [RinStmt], tensor: &str, dim: usize, var: &str, inside_ts_loop: bool) {
    for s in body {
        match s {
            RinStmt::Loop(l) => {
                let is_ts_loop = l.var == var;
                if is_ts_loop {
                    l.kind = LoopKind::For;
                }
                let writes_tensor = writes_tensor_in(&l.body, tensor);
                if inside_ts_loop && writes_tensor {
                    l.serialized = true;
                    l.parallel = false;
                }
                rewrite_body(&mut l.body, tensor, dim, var, inside_ts_loop || is_ts_loop);
            }
            RinStmt::Assign(f) => {
                if f.lhs.tensor == tensor {
                    f.lhs.indices.remove(dim);
                }
                f.rhs = drop_dim_expr(&f.rhs, tensor, dim);
            }
            RinStmt::Readiness(m) => {
                if m.tensor == tensor && m.region.len() > dim {
                    m.region.remove(dim);
                }
            }
        }
    }
}

fn writes_tensor_in(body: &[RinStmt], tensor: &str) -> bool {
    body.iter().any(|s| match s {
        RinStmt::Assign(f) => f.lhs.tensor == tensor,
        RinStmt::Loop(l) => writes_tensor_in(&l.body, tensor),
        RinStmt::Readiness(_) => false,
    })
}

fn drop_dim_expr(e: &crate::frontend::ScalarExpr, tensor: &str, dim: usize) -> crate::frontend::ScalarExpr {
    use crate::frontend::ScalarExpr as E;
    match e {
        E::Constant(c) => E::Constant(*c),
        E::Access(a) => {
            let mut a = a.clone();
            if a.tensor == tensor {
                a.indices.remove(dim);
            }
            E::Access(a)
        }
        E::Unary { op, child } => E::Unary { op: *op, child: Box::new(drop_dim_expr(child, tensor, dim)) },
        E::Binary { op, left, right } => E::Binary {
            op: *op,
            left: Box::new(drop_dim_expr(left, tensor, dim)),
            right: Box::new(drop_dim_expr(right, tensor, dim)),
        },
        E::Reduction { var, lower, upper, op, body } => E::Reduction {
            var: var.clone(),
            lower: lower.clone(),
            upper: upper.clone(),
            op: *op,
            body: Box::new(drop_dim_expr(body, tensor, dim)),
        },
    }
}

/// Flags a forall loop for parallel emission; errors on loop-carried
/// dependencies and on sparse scatter.
pub fn mark_parallel(prog: &mut RinProgram, var: &str, spec: &ProgramSpec) -> Result<(), TransformError> {
    // Locate the first loop over var.
    let Some(found) = prog.loops().iter().find(|l| l.var == var).map(|l| l.id) else {
        return Err(TransformError::NoLoop(var.to_string()));
    };
    {
        let l = prog.find_loop(found).unwrap();
        if l.kind == LoopKind::For {
            return Err(TransformError::LoopCarried(var.to_string()));
        }
        if l.serialized {
            return Err(TransformError::Serialized(var.to_string()));
        }
        // Scattered writes must land in dense storage.
        for f in assigns_in(&l.body) {
            let storage = spec.storage_of(&f.lhs.tensor);
            let is_output = spec.output_tensors().contains(&f.lhs.tensor);
            if !is_output {
                continue; // aliases are dense temporaries
            }
            if !storage.is_all_dense() {
                return Err(TransformError::SparseScatter(f.lhs.tensor.clone()));
            }
        }
    }
    prog.find_loop_mut(found).unwrap().parallel = true;
    Ok(())
}

fn assigns_in(body: &[RinStmt]) -> Vec<crate::fragments::MinimalFragment> {
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

/// Validates and records mask metadata on the storage map; codegen consults
/// it when choosing write-iteration domains.
pub fn attach_masks(spec: &mut ProgramSpec) -> Result<(), TransformError> {
    for (tensor, s) in &spec.storage {
        for m in &s.masks {
            let rank = s.levels.len().max(
                spec.recurrences
                    .iter()
                    .find(|r| r.lhs.tensor == *tensor)
                    .map(|r| r.lhs.indices.len())
                    .unwrap_or(0),
            );
            if m.levels.len() != rank {
                return Err(TransformError::MaskRank(tensor.clone()));
            }
            let compressed = m.levels.iter().filter(|(_, f)| *f == LevelFormat::Compressed).count();
            if compressed != 1 {
                return Err(TransformError::MaskRank(tensor.clone()));
            }
        }
    }
    Ok(())
}

