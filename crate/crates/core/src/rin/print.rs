//! Textual rendering of RIN programs; the golden-snapshot format.

use super::{LoopKind, RinLoop, RinProgram, RinStmt};
use crate::fragments::FragmentMode;
use crate::frontend::ReduceOp;
use std::fmt;

impl fmt::Display for RinProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_body(&self.body, f, 0)
    }
}

fn write_body(body: &[RinStmt], f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
    for stmt in body {
        for _ in 0..depth {
            write!(f, "  ")?;
        }
        match stmt {
            RinStmt::Loop(l) => {
                writeln!(f, "{}", loop_header(l))?;
                write_body(&l.body, f, depth + 1)?;
            }
            RinStmt::Assign(frag) => {
                let op = match frag.mode {
                    FragmentMode::Assign => "=",
                    FragmentMode::Reduce(ReduceOp::Add) => "+=",
                    FragmentMode::Reduce(ReduceOp::Min) => "min=",
                    FragmentMode::Reduce(ReduceOp::Max) => "max=",
                };
                writeln!(f, "{} {} {}", frag.lhs, op, frag.rhs)?;
            }
            RinStmt::Readiness(m) => writeln!(f, "{m}")?,
        }
    }
    Ok(())
}

fn loop_header(l: &RinLoop) -> String {
    let kind = match l.kind {
        LoopKind::For => "for",
        LoopKind::Forall => "forall",
    };
    let parallel = if l.parallel { " parallel" } else { "" };
    let (lo, hi) = l.space.canonical();
    let zero_lower = lo.var.is_none() && lo.offset == 0;
    let bounds = if zero_lower {
        format!("{}<{}", l.var, hi)
    } else if l.space.lower_inclusive {
        format!("{}<={}<{}", l.space.lower, l.var, hi)
    } else {
        format!("{}<{}<{}", l.space.lower, l.var, hi)
    };
    format!("{kind}{parallel} {bounds}:")
}
