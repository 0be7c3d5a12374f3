//! Recurrence Index Notation: the storage-agnostic imperative IR.
//!
//! A program is a nest of `for`/`forall` loops containing assignment
//! statements and readiness markers. All accesses are logical; storage is
//! irrelevant until kernel lowering. A `for` loop carries a dependency
//! across iterations, a `forall`'s iterations commute.

mod place;
mod print;
#[cfg(test)]
mod tests;
mod verify;

pub use place::{build_skeleton, covers, lower, lower_full, PlacementEngine, PlacementError};
pub use verify::{verify_rin, RinViolation};

use crate::fragments::{IterationSpace, MinimalFragment};
use crate::frontend::{IndexExpr, TensorAccess};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopKind {
    For,
    Forall,
}

/// One dimension of a readiness region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionIndex {
    /// Exactly this index.
    Exact(IndexExpr),
    /// Every index of the dimension.
    All,
    /// Every index strictly below the expression.
    Prefix(IndexExpr),
}

impl RegionIndex {
    pub fn substitute(&self, from: &str, to: &IndexExpr) -> RegionIndex {
        match self {
            RegionIndex::Exact(e) => RegionIndex::Exact(e.substitute(from, to)),
            RegionIndex::All => RegionIndex::All,
            RegionIndex::Prefix(e) => RegionIndex::Prefix(e.substitute(from, to)),
        }
    }
}

/// Declares that a region of a tensor is fully computed at and after the
/// marker's location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadinessMarker {
    pub tensor: String,
    pub region: Vec<RegionIndex>,
}

impl std::fmt::Display for ReadinessMarker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "//{}(", self.tensor)?;
        for (k, r) in self.region.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            match r {
                RegionIndex::Exact(e) => write!(f, "{e}")?,
                RegionIndex::All => write!(f, ":")?,
                RegionIndex::Prefix(e) => write!(f, ":{e}")?,
            }
        }
        write!(f, ") ready")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RinLoop {
    pub id: usize,
    pub var: String,
    pub space: IterationSpace,
    pub kind: LoopKind,
    /// Requested for OpenMP emission by `mark_parallel`.
    pub parallel: bool,
    /// Forced sequential by timestep-dimension removal.
    pub serialized: bool,
    pub body: Vec<RinStmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RinStmt {
    Loop(RinLoop),
    /// An assignment statement; the fragment carries lhs, mode and rhs.
    Assign(MinimalFragment),
    Readiness(ReadinessMarker),
}

impl RinStmt {
    pub fn as_loop(&self) -> Option<&RinLoop> {
        match self {
            RinStmt::Loop(l) => Some(l),
            _ => None,
        }
    }
}

/// A slot in the program: the path of loop-statement indices from the root
/// to a body list, plus an insertion index within that list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub path: Vec<usize>,
    pub index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RinProgram {
    pub body: Vec<RinStmt>,
    /// Inductive-assumption markers per assumed variable, in assumption
    /// order.
    pub assumptions: BTreeMap<String, Vec<ReadinessMarker>>,
    next_loop_id: usize,
}

impl RinProgram {
    pub fn fresh_loop_id(&mut self) -> usize {
        self.next_loop_id += 1;
        self.next_loop_id - 1
    }

    pub fn body_at_path(&self, path: &[usize]) -> Option<&Vec<RinStmt>> {
        let mut body = &self.body;
        for &idx in path {
            match body.get(idx) {
                Some(RinStmt::Loop(l)) => body = &l.body,
                _ => return None,
            }
        }
        Some(body)
    }

    pub fn body_at_path_mut(&mut self, path: &[usize]) -> Option<&mut Vec<RinStmt>> {
        let mut body = &mut self.body;
        for &idx in path {
            match body.get_mut(idx) {
                Some(RinStmt::Loop(l)) => body = &mut l.body,
                _ => return None,
            }
        }
        Some(body)
    }

    /// Loop nodes along a path, outermost first.
    pub fn loops_along(&self, path: &[usize]) -> Vec<&RinLoop> {
        let mut out = Vec::new();
        let mut body = &self.body;
        for &idx in path {
            match &body[idx] {
                RinStmt::Loop(l) => {
                    out.push(l);
                    body = &l.body;
                }
                _ => break,
            }
        }
        out
    }

    pub fn find_loop(&self, id: usize) -> Option<&RinLoop> {
        fn walk(body: &[RinStmt], id: usize) -> Option<&RinLoop> {
            for s in body {
                if let RinStmt::Loop(l) = s {
                    if l.id == id {
                        return Some(l);
                    }
                    if let Some(found) = walk(&l.body, id) {
                        return Some(found);
                    }
                }
            }
            None
        }
        walk(&self.body, id)
    }

    pub fn find_loop_mut(&mut self, id: usize) -> Option<&mut RinLoop> {
        fn walk(body: &mut [RinStmt], id: usize) -> Option<&mut RinLoop> {
            for s in body {
                if let RinStmt::Loop(l) = s {
                    if l.id == id {
                        return Some(l);
                    }
                    if let Some(found) = walk(&mut l.body, id) {
                        return Some(found);
                    }
                }
            }
            None
        }
        walk(&mut self.body, id)
    }

    /// Path to the loop with this id, if present.
    pub fn path_of_loop(&self, id: usize) -> Option<Vec<usize>> {
        fn walk(body: &[RinStmt], id: usize, path: &mut Vec<usize>) -> bool {
            for (i, s) in body.iter().enumerate() {
                if let RinStmt::Loop(l) = s {
                    path.push(i);
                    if l.id == id || walk(&l.body, id, path) {
                        return true;
                    }
                    path.pop();
                }
            }
            false
        }
        let mut path = Vec::new();
        if walk(&self.body, id, &mut path) {
            Some(path)
        } else {
            None
        }
    }

    /// All assignment statements with the loop variables enclosing them.
    pub fn assignments(&self) -> Vec<(&MinimalFragment, Vec<&RinLoop>)> {
        fn walk<'a>(
            body: &'a [RinStmt],
            stack: &mut Vec<&'a RinLoop>,
            out: &mut Vec<(&'a MinimalFragment, Vec<&'a RinLoop>)>,
        ) {
            for s in body {
                match s {
                    RinStmt::Assign(f) => out.push((f, stack.clone())),
                    RinStmt::Loop(l) => {
                        stack.push(l);
                        walk(&l.body, stack, out);
                        stack.pop();
                    }
                    RinStmt::Readiness(_) => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut Vec::new(), &mut out);
        out
    }

    pub fn loops(&self) -> Vec<&RinLoop> {
        fn walk<'a>(body: &'a [RinStmt], out: &mut Vec<&'a RinLoop>) {
            for s in body {
                if let RinStmt::Loop(l) = s {
                    out.push(l);
                    walk(&l.body, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }

    /// First (outermost, in program order) loop over `var`.
    pub fn first_loop_over(&self, var: &str) -> Option<&RinLoop> {
        self.loops().into_iter().find(|l| l.var == var)
    }

    /// Drops loops that contain no assignment statement.
    pub fn prune_empty_loops(&mut self) {
        fn has_assign(body: &[RinStmt]) -> bool {
            body.iter().any(|s| match s {
                RinStmt::Assign(_) => true,
                RinStmt::Loop(l) => has_assign(&l.body),
                RinStmt::Readiness(_) => false,
            })
        }
        fn prune(body: &mut Vec<RinStmt>) {
            body.retain(|s| match s {
                RinStmt::Loop(l) => has_assign(&l.body),
                _ => true,
            });
            for s in body {
                if let RinStmt::Loop(l) = s {
                    prune(&mut l.body);
                }
            }
        }
        prune(&mut self.body);
    }

    /// Markers visible at a location: those earlier in the same list and in
    /// ancestor lists before the branch point (lexical scope).
    pub fn ready_at_location(&self, loc: &Location) -> Vec<&ReadinessMarker> {
        let mut out = Vec::new();
        let mut body = &self.body;
        for depth in 0..=loc.path.len() {
            let limit = if depth == loc.path.len() { loc.index } else { loc.path[depth] };
            for s in body.iter().take(limit.min(body.len())) {
                if let RinStmt::Readiness(m) = s {
                    out.push(m);
                }
            }
            if depth < loc.path.len() {
                match &body[loc.path[depth]] {
                    RinStmt::Loop(l) => body = &l.body,
                    _ => break,
                }
            }
        }
        out
    }
}

/// Resolved access strategies need the lhs region of a marker; build the
/// exact-region marker for a computed access.
pub fn exact_marker(access: &TensorAccess) -> ReadinessMarker {
    ReadinessMarker {
        tensor: access.tensor.clone(),
        region: access.indices.iter().map(|e| RegionIndex::Exact(e.clone())).collect(),
    }
}
