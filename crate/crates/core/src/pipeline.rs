//! End-to-end driver: parse, validate, fragment, place, transform, lower,
//! plus the oracle-vs-kernel check used by tests and the CLI.

use crate::codegen::{self, Kernel};
use crate::depgraph::{self, DependencyGraph};
use crate::fragments::{self, MinimalFragment};
use crate::frontend::{self, ProgramSpec};
use crate::oracle;
use crate::rin::{self, RinProgram};
use crate::runtime::{self, ExecutionTrace, InterpretOptions, TensorData};
use crate::transforms::{self, TimestepSpec};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("parse error: {0}")]
    Parse(#[from] frontend::ParseError),
    #[error("validation error: {0}")]
    Validate(#[from] frontend::ValidateError),
    #[error("fragment error: {0}")]
    Fragment(#[from] fragments::FragmentError),
    #[error("dependency error: {0}")]
    DepGraph(#[from] depgraph::DepGraphError),
    #[error("{0}")]
    Placement(#[from] rin::PlacementError),
    #[error("verification failed: {0}")]
    Verify(#[from] rin::RinViolation),
    #[error("transform error: {0}")]
    Transform(#[from] transforms::TransformError),
    #[error("codegen error: {0}")]
    Codegen(#[from] codegen::CodegenError),
}

pub struct Compiled {
    pub spec: ProgramSpec,
    /// Spec after timestep removal (storage and initial values rewritten).
    pub effective_spec: ProgramSpec,
    pub fragments: Vec<MinimalFragment>,
    pub dag: DependencyGraph,
    /// Verified placement result, before schedule transformations.
    pub rin: RinProgram,
    /// After timestep removal and parallel marking.
    pub transformed: RinProgram,
    pub kernel: Kernel,
}

impl Compiled {
    pub fn warnings(&self) -> &[String] {
        &self.kernel.warnings
    }
}

pub fn compile_text(text: &str, name: &str) -> Result<Compiled, CompileError> {
    let spec = frontend::validate(frontend::parse_program(text)?)?;
    compile_spec(spec, name)
}

pub fn compile_spec(spec: ProgramSpec, name: &str) -> Result<Compiled, CompileError> {
    let (rin_prog, frags, dag) = rin::lower_full(&spec)?;
    rin::verify_rin(&rin_prog, &spec)?;

    transforms::attach_masks(&mut spec.clone())?;
    let (mut transformed, effective_spec) = match &spec.schedule.timestep {
        Some((tensor, var)) => {
            let ts = TimestepSpec { tensor: tensor.clone(), var: var.clone() };
            transforms::remove_timestep_dim(&rin_prog, &ts, &spec)?
        }
        None => (rin_prog.clone(), spec.clone()),
    };
    for v in spec.schedule.parallel_vars.clone() {
        transforms::mark_parallel(&mut transformed, &v, &effective_spec)?;
    }

    let kernel = codegen::lower_to_kernel(&transformed, &effective_spec, name)?;
    Ok(Compiled {
        spec,
        effective_spec,
        fragments: frags,
        dag,
        rin: rin_prog,
        transformed,
        kernel,
    })
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("oracle error: {0}")]
    Oracle(#[from] oracle::OracleError),
    #[error("runtime error: {0}")]
    Runtime(#[from] runtime::RuntimeError),
    #[error("outputs differ: {0}")]
    Mismatch(String),
}

pub struct CheckReport {
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub trace: ExecutionTrace,
    pub outputs: BTreeMap<String, TensorData>,
}

/// Runs the kernel and the oracle on the same inputs and compares every
/// output cell.
pub fn check_against_oracle(
    compiled: &Compiled,
    inputs: &BTreeMap<String, TensorData>,
    tolerance_rel: f64,
    options: &InterpretOptions,
) -> Result<CheckReport, CheckError> {
    let (outputs, trace) = runtime::interpret(
        &compiled.kernel,
        inputs,
        &compiled.effective_spec.initial_values,
        options,
    )?;
    // The oracle always evaluates the original (untransformed) system.
    let reference = oracle::evaluate(&compiled.spec, inputs)?;

    let removed_dim = compiled.spec.schedule.timestep.as_ref().map(|(tensor, var)| {
        // Final slice of the removed dimension is the comparison target.
        let rank = compiled.spec.tensor_rank(tensor).unwrap_or(0);
        let dim = compiled
            .spec
            .recurrences
            .iter()
            .find(|r| r.lhs.tensor == *tensor)
            .and_then(|r| {
                r.lhs
                    .indices
                    .iter()
                    .position(|e| e.var.as_deref() == Some(var.as_str()))
            })
            .unwrap_or(rank - 1);
        (tensor.clone(), dim)
    });

    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for (t, kernel_out) in &outputs {
        let Some(oracle_out) = reference.get(t) else { continue };
        let kernel_dense = kernel_out.to_dense();
        match &removed_dim {
            Some((tensor, dim)) if tensor == t => {
                // Compare the 2D result against the final slice of the
                // oracle's full-dimension run.
                let last = oracle_out.extents[*dim] - 1;
                for (coords, v) in kernel_dense.entries() {
                    let mut full = coords.clone();
                    full.insert(*dim, last);
                    let r = oracle_out.get(&full);
                    track(&mut max_abs, &mut max_rel, v, r);
                }
            }
            _ => {
                if kernel_dense.extents != oracle_out.extents {
                    return Err(CheckError::Mismatch(format!(
                        "extents of `{t}` differ: kernel {:?} vs oracle {:?}",
                        kernel_dense.extents, oracle_out.extents
                    )));
                }
                for (coords, v) in kernel_dense.entries() {
                    let r = oracle_out.get(&coords);
                    track(&mut max_abs, &mut max_rel, v, r);
                }
            }
        }
    }
    if max_rel > tolerance_rel {
        return Err(CheckError::Mismatch(format!(
            "max relative difference {max_rel:.3e} exceeds tolerance {tolerance_rel:.1e}"
        )));
    }
    Ok(CheckReport { max_abs_diff: max_abs, max_rel_diff: max_rel, trace, outputs })
}

fn track(max_abs: &mut f64, max_rel: &mut f64, got: f64, want: f64) {
    let abs = (got - want).abs();
    let rel = if want.abs() > 1e-30 { abs / want.abs() } else { abs };
    if abs > *max_abs {
        *max_abs = abs;
    }
    if rel > *max_rel {
        *max_rel = rel;
    }
}
