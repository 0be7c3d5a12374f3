//! Storage-aware kernels: concrete loops over dense extents or compressed
//! pos/crd arrays, with workspaces for compressed outputs and binary-search
//! fallbacks for mismatched access patterns.

mod emit;
mod lower;

pub use emit::emit_c;
pub use lower::{lower_to_kernel, CodegenError};

use crate::fragments::FragmentMode;
use crate::frontend::{BinaryOp, IndexExpr, StorageSpec, UnaryOp};
use std::collections::BTreeMap;

/// How one tensor access is performed at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    /// Direct offset into dense (or alias) storage.
    Dense { tensor: String, indices: Vec<IndexExpr> },
    /// Value at the current position of the compressed loop driving the
    /// tensor.
    SequentialPos { tensor: String },
    /// Slot of an active workspace.
    Workspace { ws: String, index: IndexExpr },
    /// First or last stored entry of a slice; the coordinate is checked at
    /// runtime against `expect`.
    EdgeOfSlice { tensor: String, segment: Vec<IndexExpr>, expect: IndexExpr, last: bool },
    /// Binary search over a slice's coordinates; absent entries read zero.
    Search { tensor: String, segment: Vec<IndexExpr>, coord: IndexExpr },
}

impl Resolved {
    pub fn tensor_name(&self) -> &str {
        match self {
            Resolved::Dense { tensor, .. }
            | Resolved::SequentialPos { tensor }
            | Resolved::EdgeOfSlice { tensor, .. }
            | Resolved::Search { tensor, .. } => tensor,
            Resolved::Workspace { ws, .. } => ws,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KExpr {
    Const(f64),
    /// A bound load (see [`KernelStmt::Bind`]).
    Local(usize),
    Unary(UnaryOp, Box<KExpr>),
    Binary(BinaryOp, Box<KExpr>, Box<KExpr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KLoopKind {
    /// Iterations carry no dependency; may be permuted or parallelized.
    Forall,
    /// Sequential ascending.
    For,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelStmt {
    DenseLoop {
        var: String,
        lower: IndexExpr,
        /// Exclusive.
        upper: IndexExpr,
        kind: KLoopKind,
        parallel: bool,
        body: Vec<KernelStmt>,
    },
    /// Iterates stored entries of one tensor's compressed level inside the
    /// segment selected by `segment`, binding `var` to the coordinate.
    /// Coordinate bounds trim the walk to `[lower, upper)`.
    CompressedLoop {
        var: String,
        tensor: String,
        /// Iterate the tensor's mask pattern instead of its own.
        over_mask: bool,
        segment: Vec<IndexExpr>,
        lower: Option<IndexExpr>,
        upper: Option<IndexExpr>,
        kind: KLoopKind,
        parallel: bool,
        body: Vec<KernelStmt>,
    },
    /// Two-pointer co-iteration over the intersection (`union: false`) or
    /// union (`union: true`) of two compressed operands' coordinates.
    CoIterLoop {
        var: String,
        union: bool,
        left: (String, Vec<IndexExpr>),
        right: (String, Vec<IndexExpr>),
        lower: Option<IndexExpr>,
        upper: Option<IndexExpr>,
        body: Vec<KernelStmt>,
    },
    /// Clears a workspace (values to `init`, validity to false).
    WorkspaceInit { ws: String, size_of: (String, usize), init: f64 },
    /// Scatters the stored entries of an input tensor's slice into a
    /// workspace, marking every slot valid (absent entries are zeros).
    WorkspaceLoadSlice { ws: String, tensor: String, segment: Vec<IndexExpr> },
    /// Appends the valid workspace slots as the next slice of a compressed
    /// output.
    WorkspaceCompress { ws: String, tensor: String, segment: Vec<IndexExpr> },
    /// Binds a load so identical accesses in one body share it.
    Bind { local: usize, access: Resolved },
    Compute { lhs: Resolved, mode: FragmentMode, rhs: KExpr },
}

/// Parameter descriptor: extents, pos/crd arrays per compressed level, and
/// the value array.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorParam {
    pub tensor: String,
    pub storage: StorageSpec,
    pub rank: usize,
    pub output: bool,
    /// Sparsity-pattern parameter (mask): pos/crd only, no values.
    pub pattern_only: bool,
}

/// Internal dense temporary (alias tensors), initialized to the reduction
/// identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TempTensor {
    pub tensor: String,
    pub init: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub ws: String,
    /// Tensor and dimension whose extent sizes the workspace.
    pub size_of: (String, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub name: String,
    pub params: Vec<TensorParam>,
    pub temps: Vec<TempTensor>,
    pub workspaces: Vec<Workspace>,
    pub body: Vec<KernelStmt>,
    pub warnings: Vec<String>,
    /// Numeric values of extent symbols at compile time.
    pub extents: BTreeMap<String, i64>,
    /// Dimension sizes per tensor as extent expressions.
    pub dims: BTreeMap<String, Vec<IndexExpr>>,
    /// Outputs whose bare-reduction cells start at a non-zero identity.
    pub output_inits: BTreeMap<String, f64>,
}

impl Kernel {
    pub fn walk_stmts(&self, f: &mut impl FnMut(&KernelStmt)) {
        fn walk(body: &[KernelStmt], f: &mut impl FnMut(&KernelStmt)) {
            for s in body {
                f(s);
                match s {
                    KernelStmt::DenseLoop { body, .. }
                    | KernelStmt::CompressedLoop { body, .. }
                    | KernelStmt::CoIterLoop { body, .. } => walk(body, f),
                    _ => {}
                }
            }
        }
        walk(&self.body, f);
    }

    pub fn has_searches(&self) -> bool {
        let mut found = false;
        self.walk_stmts(&mut |s| {
            let check = |r: &Resolved| matches!(r, Resolved::Search { .. });
            match s {
                KernelStmt::Bind { access, .. } => found |= check(access),
                KernelStmt::Compute { lhs, .. } => found |= check(lhs),
                _ => {}
            }
        });
        found
    }
}
