//! A compiler for systems of constrained recurrence equations.
//!
//! Declarative recurrences plus a schedule (loop ordering, parallel and
//! timestep directives) and per-tensor storage formats are lowered in
//! stages: minimal fragments, a dependency DAG, greedy placement into
//! recurrence index notation (an abstract loop nest with readiness
//! markers), schedule transformations, and finally storage-aware kernels
//! that an in-process interpreter executes and a backend emits as C.

pub mod codegen;
pub mod depgraph;
pub mod fragments;
pub mod frontend;
pub mod oracle;
pub mod pipeline;
pub mod rin;
pub mod runtime;
pub mod transforms;
