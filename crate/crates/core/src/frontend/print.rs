//! Surface-syntax printing. `parse(print(spec))` round-trips structurally.

use super::{BinaryOp, ConstrainedRecurrence, ProgramSpec, ReduceOp, ScalarExpr, UnaryOp};
use std::fmt;

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f, 0)
    }
}

fn precedence(e: &ScalarExpr) -> u8 {
    match e {
        ScalarExpr::Binary { op: BinaryOp::Add | BinaryOp::Sub, .. } => 1,
        ScalarExpr::Binary { op: BinaryOp::Mul | BinaryOp::Div, .. } => 2,
        _ => 3,
    }
}

fn write_expr(e: &ScalarExpr, f: &mut fmt::Formatter<'_>, parent_prec: u8) -> fmt::Result {
    let prec = precedence(e);
    let parens = prec < parent_prec;
    if parens {
        write!(f, "(")?;
    }
    match e {
        ScalarExpr::Constant(c) => {
            if c.fract() == 0.0 {
                write!(f, "{c:.1}")?;
            } else {
                write!(f, "{c}")?;
            }
        }
        ScalarExpr::Access(a) => write!(f, "{a}")?,
        ScalarExpr::Unary { op, child } => match op {
            UnaryOp::Sqrt => {
                write!(f, "sqrt(")?;
                write_expr(child, f, 0)?;
                write!(f, ")")?;
            }
            UnaryOp::Neg => {
                write!(f, "-")?;
                write_expr(child, f, 3)?;
            }
        },
        ScalarExpr::Binary { op, left, right } => match op {
            BinaryOp::Min | BinaryOp::Max => {
                write!(f, "{}(", if *op == BinaryOp::Min { "min" } else { "max" })?;
                write_expr(left, f, 0)?;
                write!(f, ", ")?;
                write_expr(right, f, 0)?;
                write!(f, ")")?;
            }
            _ => {
                let sym = match op {
                    BinaryOp::Add => " + ",
                    BinaryOp::Sub => " - ",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    _ => unreachable!(),
                };
                write_expr(left, f, prec)?;
                write!(f, "{sym}")?;
                // Right operand needs a strictly higher binding to preserve
                // left-associativity of `-` and `/` through a round-trip.
                write_expr(right, f, prec + 1)?;
            }
        },
        ScalarExpr::Reduction { var, lower, upper, op, body } => {
            let name = match op {
                ReduceOp::Add => "Sum",
                ReduceOp::Min => "Min",
                ReduceOp::Max => "Max",
            };
            write!(f, "{name}{{{var}={lower}:{upper}}}(")?;
            write_expr(body, f, 0)?;
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for ConstrainedRecurrence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.lhs, self.rhs)?;
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

impl fmt::Display for ProgramSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.recurrences {
            writeln!(f, "rec: {r}")?;
        }
        if !self.schedule.ordering.is_empty() {
            writeln!(f, "order: {}", self.schedule.ordering.join(" "))?;
        }
        for v in &self.schedule.parallel_vars {
            writeln!(f, "parallel: {v}")?;
        }
        if let Some((t, v)) = &self.schedule.timestep {
            writeln!(f, "timestep: {t} {v}")?;
        }
        for (tensor, s) in &self.storage {
            if !s.levels.is_empty() {
                write!(f, "storage: {tensor} =")?;
                for (dim, fmt_) in &s.levels {
                    let name = match fmt_ {
                        super::LevelFormat::Dense => "Dense",
                        super::LevelFormat::Compressed => "Compressed",
                    };
                    write!(f, " {name}({dim})")?;
                }
                writeln!(f)?;
            }
            for m in &s.masks {
                write!(f, "mask: {tensor} =")?;
                for (dim, fmt_) in &m.levels {
                    let name = match fmt_ {
                        super::LevelFormat::Dense => "Dense",
                        super::LevelFormat::Compressed => "Compressed",
                    };
                    write!(f, " {name}({dim})")?;
                }
                writeln!(f)?;
            }
        }
        for (name, v) in &self.extents {
            writeln!(f, "extent: {name} = {v}")?;
        }
        for ((tensor, coords), v) in &self.initial_values {
            let cs: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
            writeln!(f, "init: {tensor}({}) = {v}", cs.join(","))?;
        }
        Ok(())
    }
}
