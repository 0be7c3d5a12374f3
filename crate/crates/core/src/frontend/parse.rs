//! Parser for the textual program format: one `rec:` line per recurrence,
//! plus `order:`, `storage:`, `extent:`, `init:`, `parallel:`, `timestep:`
//! and `mask:` stanzas. Lines starting with `#` are comments.

use super::{
    BinaryOp, Constraint, ConstrainedRecurrence, IndexExpr, LevelFormat, ProgramSpec, ReduceOp, Rel, ScalarExpr, StorageSpec, TensorAccess, UnaryOp,
};
use crate::fragments;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}, col {col}: expected {expected}, found {found}")]
    UnexpectedToken { line: usize, col: usize, expected: String, found: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: unknown stanza `{stanza}`")]
    UnknownStanza { line: usize, stanza: String },
    #[error("reduction variable `{0}` is unbounded: no constraint and no unique extent")]
    UnboundedReduction(String),
}

pub fn parse_program(text: &str) -> Result<ProgramSpec, ParseError> {
    let mut spec = ProgramSpec::default();
    let mut rec_lines: Vec<(usize, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (stanza, rest) = line
            .split_once(':')
            .ok_or_else(|| ParseError::Invalid { line: lineno, message: "expected `<stanza>: ...`".into() })?;
        let rest = rest.trim();
        match stanza.trim() {
            "rec" => rec_lines.push((lineno, rest.to_string())),
            "order" => {
                spec.schedule.ordering = rest.split_whitespace().map(String::from).collect();
            }
            "parallel" => {
                spec.schedule.parallel_vars.extend(rest.split_whitespace().map(String::from));
            }
            "timestep" => {
                let mut it = rest.split_whitespace();
                let tensor = it.next().ok_or_else(|| ParseError::Invalid {
                    line: lineno,
                    message: "timestep needs `<tensor> <var>`".into(),
                })?;
                let var = it.next().ok_or_else(|| ParseError::Invalid {
                    line: lineno,
                    message: "timestep needs `<tensor> <var>`".into(),
                })?;
                spec.schedule.timestep = Some((tensor.to_string(), var.to_string()));
            }
            "storage" | "mask" => {
                let (tensor, levels) = rest.split_once('=').ok_or_else(|| ParseError::Invalid {
                    line: lineno,
                    message: format!("{stanza} needs `<tensor> = <levels>`"),
                })?;
                let tensor = tensor.trim().to_string();
                let parsed = parse_levels(levels.trim(), lineno)?;
                if stanza.trim() == "storage" {
                    let entry = spec.storage.entry(tensor).or_default();
                    entry.levels = parsed;
                } else {
                    let entry = spec.storage.entry(tensor).or_default();
                    entry.masks.push(StorageSpec { levels: parsed, masks: Vec::new() });
                }
            }
            "extent" => {
                let (name, value) = rest.split_once('=').ok_or_else(|| ParseError::Invalid {
                    line: lineno,
                    message: "extent needs `<name> = <int>`".into(),
                })?;
                let value: i64 = value.trim().parse().map_err(|_| ParseError::Invalid {
                    line: lineno,
                    message: format!("bad extent value `{}`", value.trim()),
                })?;
                if value <= 0 {
                    return Err(ParseError::Invalid { line: lineno, message: "extent must be positive".into() });
                }
                spec.extents.insert(name.trim().to_string(), value);
            }
            "init" => {
                let (cell, value) = rest.split_once('=').ok_or_else(|| ParseError::Invalid {
                    line: lineno,
                    message: "init needs `T(c0,..) = <value>`".into(),
                })?;
                let mut p = Parser::new(cell.trim(), lineno);
                let access = p.tensor_access()?;
                p.expect_end()?;
                let coords: Result<Vec<i64>, _> = access
                    .indices
                    .iter()
                    .map(|e| match e.var {
                        None => Ok(e.offset),
                        Some(_) => Err(ParseError::Invalid {
                            line: lineno,
                            message: "init coordinates must be integer constants".into(),
                        }),
                    })
                    .collect();
                let value: f64 = value.trim().parse().map_err(|_| ParseError::Invalid {
                    line: lineno,
                    message: format!("bad init value `{}`", value.trim()),
                })?;
                spec.initial_values.insert((access.tensor, coords?), value);
            }
            other => return Err(ParseError::UnknownStanza { line: lineno, stanza: other.to_string() }),
        }
    }

    for (lineno, text) in rec_lines {
        let mut p = Parser::new(&text, lineno);
        let rec = p.constrained_recurrence()?;
        p.expect_end()?;
        spec.recurrences.push(rec);
    }

    resolve_reduction_bounds(&mut spec)?;
    Ok(spec)
}

fn parse_levels(text: &str, lineno: usize) -> Result<Vec<(usize, LevelFormat)>, ParseError> {
    let mut levels = Vec::new();
    let mut p = Parser::new(text, lineno);
    loop {
        match p.peek().clone() {
            Tok::Ident(name) => {
                p.bump();
                let fmt = match name.as_str() {
                    "Dense" => LevelFormat::Dense,
                    "Compressed" => LevelFormat::Compressed,
                    other => {
                        return Err(ParseError::Invalid {
                            line: lineno,
                            message: format!("unknown level format `{other}`"),
                        })
                    }
                };
                p.expect(&Tok::LParen)?;
                let dim = match p.peek().clone() {
                    Tok::Int(v) => {
                        p.bump();
                        v as usize
                    }
                    other => return Err(p.unexpected("dimension number", &other)),
                };
                p.expect(&Tok::RParen)?;
                levels.push((dim, fmt));
            }
            Tok::End => break,
            other => return Err(p.unexpected("level format", &other)),
        }
    }
    Ok(levels)
}

/// Fills in bounds for reductions written without explicit ones, and
/// materializes each reduction's bounds into the constraint list.
fn resolve_reduction_bounds(spec: &mut ProgramSpec) -> Result<(), ParseError> {
    let extents = spec.extents.clone();
    for rec in &mut spec.recurrences {
        let mut constraints = rec.constraints.clone();
        resolve_in_expr(&mut rec.rhs, &mut constraints, &extents)?;
        rec.constraints = constraints;
    }
    Ok(())
}

fn resolve_in_expr(
    expr: &mut ScalarExpr,
    constraints: &mut Vec<Constraint>,
    extents: &BTreeMap<String, i64>,
) -> Result<(), ParseError> {
    match expr {
        ScalarExpr::Constant(_) | ScalarExpr::Access(_) => Ok(()),
        ScalarExpr::Unary { child, .. } => resolve_in_expr(child, constraints, extents),
        ScalarExpr::Binary { left, right, .. } => {
            resolve_in_expr(left, constraints, extents)?;
            resolve_in_expr(right, constraints, extents)
        }
        ScalarExpr::Reduction { var, lower, upper, body, .. } => {
            resolve_in_expr(body, constraints, extents)?;
            let placeholder = upper.var.is_none() && upper.offset == i64::MIN;
            if placeholder {
                // `Sum{k}(..)`: bounds come from the constraint list, so an
                // equivalent constraint already exists.
                let space = fragments::iteration_space(var, constraints, extents)
                    .map_err(|_| ParseError::UnboundedReduction(var.clone()))?;
                let (lo, hi) = space.canonical();
                *lower = lo;
                *upper = hi;
            } else {
                // Explicit bounds: materialize them unless already derivable.
                let derived = fragments::iteration_space(var, constraints, extents).ok().map(|s| s.canonical());
                if derived.as_ref().map(|(_, hi)| hi) != Some(upper) {
                    constraints.push(Constraint::lt(var.clone(), upper.clone()));
                }
                let zero_lower = lower.var.is_none() && lower.offset == 0;
                if !zero_lower && derived.as_ref().map(|(lo, _)| lo) != Some(lower) {
                    constraints.push(Constraint::new(var.clone(), Rel::Ge, lower.clone()));
                }
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Assign,
    Lt,
    Le,
    Gt,
    Ge,
    End,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Float(v) => write!(f, "`{v}`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::Assign => write!(f, "`=`"),
            Tok::Lt => write!(f, "`<`"),
            Tok::Le => write!(f, "`<=`"),
            Tok::Gt => write!(f, "`>`"),
            Tok::Ge => write!(f, "`>=`"),
            Tok::End => write!(f, "end of line"),
        }
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
}

impl Parser {
    fn new(text: &str, line: usize) -> Self {
        Parser { toks: lex(text), pos: 0, line }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn col(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str, found: &Tok) -> ParseError {
        ParseError::UnexpectedToken {
            line: self.line,
            col: self.col(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    fn expect(&mut self, t: &Tok) -> Result<(), ParseError> {
        if self.peek() == t {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&t.to_string(), &self.peek().clone()))
        }
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::End => Ok(()),
            other => Err(self.unexpected("end of line", &other.clone())),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.unexpected("identifier", &other)),
        }
    }

    fn constrained_recurrence(&mut self) -> Result<ConstrainedRecurrence, ParseError> {
        let lhs = self.tensor_access()?;
        self.expect(&Tok::Assign)?;
        let rhs = self.expr()?;
        let mut constraints = Vec::new();
        if *self.peek() == Tok::Colon {
            self.bump();
            self.expect(&Tok::LBracket)?;
            loop {
                constraints.push(self.constraint()?);
                match self.bump() {
                    Tok::Comma => continue,
                    Tok::RBracket => break,
                    other => return Err(self.unexpected("`,` or `]`", &other)),
                }
            }
        }
        Ok(ConstrainedRecurrence { lhs, rhs, constraints })
    }

    fn tensor_access(&mut self) -> Result<TensorAccess, ParseError> {
        let tensor = self.ident()?;
        self.expect(&Tok::LParen)?;
        let mut indices = Vec::new();
        loop {
            indices.push(self.index_expr()?);
            match self.bump() {
                Tok::Comma => continue,
                Tok::RParen => break,
                other => return Err(self.unexpected("`,` or `)`", &other)),
            }
        }
        Ok(TensorAccess { tensor, indices })
    }

    fn index_expr(&mut self) -> Result<IndexExpr, ParseError> {
        match self.bump() {
            Tok::Ident(v) => match self.peek() {
                Tok::Plus => {
                    self.bump();
                    let off = self.int()?;
                    Ok(IndexExpr::var_off(v, off))
                }
                Tok::Minus => {
                    self.bump();
                    let off = self.int()?;
                    Ok(IndexExpr::var_off(v, -off))
                }
                _ => Ok(IndexExpr::var(v)),
            },
            Tok::Int(c) => Ok(IndexExpr::constant(c)),
            Tok::Minus => {
                let c = self.int()?;
                Ok(IndexExpr::constant(-c))
            }
            other => Err(self.unexpected("index expression", &other)),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.bump() {
            Tok::Int(v) => Ok(v),
            other => Err(self.unexpected("integer", &other)),
        }
    }

    fn constraint(&mut self) -> Result<Constraint, ParseError> {
        let left = self.index_expr()?;
        let rel = match self.bump() {
            Tok::Lt => Rel::Lt,
            Tok::Le => Rel::Le,
            Tok::Assign => Rel::Eq,
            Tok::Gt => Rel::Gt,
            Tok::Ge => Rel::Ge,
            other => return Err(self.unexpected("comparison", &other)),
        };
        let right = self.index_expr()?;
        canonicalize_constraint(left, rel, right)
            .ok_or_else(|| ParseError::Invalid { line: self.line, message: "constraint relates two constants".into() })
    }

    fn expr(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = ScalarExpr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = ScalarExpr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<ScalarExpr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            // Negative literals fold; everything else becomes a Neg node.
            if let Tok::Float(v) = self.peek().clone() {
                self.bump();
                return Ok(ScalarExpr::Constant(-v));
            }
            if let Tok::Int(v) = self.peek().clone() {
                self.bump();
                return Ok(ScalarExpr::Constant(-(v as f64)));
            }
            let child = self.unary()?;
            return Ok(ScalarExpr::Unary { op: UnaryOp::Neg, child: Box::new(child) });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<ScalarExpr, ParseError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(ScalarExpr::Constant(v as f64))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(ScalarExpr::Constant(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                match name.as_str() {
                    "sqrt" => {
                        self.bump();
                        self.expect(&Tok::LParen)?;
                        let child = self.expr()?;
                        self.expect(&Tok::RParen)?;
                        return Ok(ScalarExpr::Unary { op: UnaryOp::Sqrt, child: Box::new(child) });
                    }
                    "min" | "max" => {
                        self.bump();
                        let op = if name == "min" { BinaryOp::Min } else { BinaryOp::Max };
                        self.expect(&Tok::LParen)?;
                        let mut e = self.expr()?;
                        self.expect(&Tok::Comma)?;
                        loop {
                            let rhs = self.expr()?;
                            e = ScalarExpr::binary(op, e, rhs);
                            match self.bump() {
                                Tok::Comma => continue,
                                Tok::RParen => break,
                                other => return Err(self.unexpected("`,` or `)`", &other)),
                            }
                        }
                        return Ok(e);
                    }
                    "Sum" | "Min" | "Max" if *self.peek_ahead(1) == Tok::LBrace => {
                        self.bump();
                        let op = match name.as_str() {
                            "Sum" => ReduceOp::Add,
                            "Min" => ReduceOp::Min,
                            _ => ReduceOp::Max,
                        };
                        return self.reduction(op);
                    }
                    _ => {}
                }
                self.tensor_access().map(ScalarExpr::Access)
            }
            other => Err(self.unexpected("expression", &other)),
        }
    }

    fn peek_ahead(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn reduction(&mut self, op: ReduceOp) -> Result<ScalarExpr, ParseError> {
        self.expect(&Tok::LBrace)?;
        let var = self.ident()?;
        let (lower, upper) = if *self.peek() == Tok::Assign {
            self.bump();
            let lo = self.index_expr()?;
            self.expect(&Tok::Colon)?;
            let hi = self.index_expr()?;
            (lo, hi)
        } else {
            // Placeholder; bounds resolved from constraints after parse.
            (IndexExpr::constant(0), IndexExpr { var: None, offset: i64::MIN })
        };
        self.expect(&Tok::RBrace)?;
        self.expect(&Tok::LParen)?;
        let body = self.expr()?;
        self.expect(&Tok::RParen)?;
        Ok(ScalarExpr::Reduction { var, lower, upper, op, body: Box::new(body) })
    }
}

/// Normalizes `left REL right` so the subject is a variable; `j>i` becomes
/// `i<j`. Returns None when both sides are constants.
fn canonicalize_constraint(left: IndexExpr, rel: Rel, right: IndexExpr) -> Option<Constraint> {
    match (&left.var, &right.var) {
        (Some(lv), _) => {
            // u+a REL e  =>  u REL e-a
            let bound = right.shifted(-left.offset);
            let c = Constraint { var: lv.clone(), rel, bound };
            Some(flip_var_lower(c))
        }
        (None, Some(rv)) => {
            // c REL v+b  =>  v REL' c-b
            let rel = match rel {
                Rel::Lt => Rel::Gt,
                Rel::Le => Rel::Ge,
                Rel::Eq => Rel::Eq,
                Rel::Gt => Rel::Lt,
                Rel::Ge => Rel::Le,
            };
            Some(Constraint { var: rv.clone(), rel, bound: IndexExpr::constant(left.offset - right.offset) })
        }
        (None, None) => None,
    }
}

/// Rewrites `u > v+c` into `v < u-c` so the `<` direction is canonical
/// whenever both sides are variables.
fn flip_var_lower(c: Constraint) -> Constraint {
    match (c.rel, &c.bound.var) {
        (Rel::Gt, Some(bv)) => Constraint {
            var: bv.clone(),
            rel: Rel::Lt,
            bound: IndexExpr::var_off(c.var, -c.bound.offset),
        },
        (Rel::Ge, Some(bv)) => Constraint {
            var: bv.clone(),
            rel: Rel::Le,
            bound: IndexExpr::var_off(c.var, -c.bound.offset),
        },
        _ => c,
    }
}

fn lex(text: &str) -> Vec<(Tok, usize)> {
    let mut toks = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let col = i + 1;
        let c = chars[i];
        match c {
            ' ' | '\t' => {
                i += 1;
                continue;
            }
            '+' => toks.push((Tok::Plus, col)),
            '-' => toks.push((Tok::Minus, col)),
            '*' => toks.push((Tok::Star, col)),
            '/' => toks.push((Tok::Slash, col)),
            '(' => toks.push((Tok::LParen, col)),
            ')' => toks.push((Tok::RParen, col)),
            '{' => toks.push((Tok::LBrace, col)),
            '}' => toks.push((Tok::RBrace, col)),
            '[' => toks.push((Tok::LBracket, col)),
            ']' => toks.push((Tok::RBracket, col)),
            ',' => toks.push((Tok::Comma, col)),
            ':' => toks.push((Tok::Colon, col)),
            '=' => toks.push((Tok::Assign, col)),
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push((Tok::Le, col));
                    i += 1;
                } else {
                    toks.push((Tok::Lt, col));
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push((Tok::Ge, col));
                    i += 1;
                } else {
                    toks.push((Tok::Gt, col));
                }
            }
            _ if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let is_float = i < chars.len()
                    && chars[i] == '.'
                    && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
                if is_float {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    let s: String = chars[start..i].iter().collect();
                    toks.push((Tok::Float(s.parse().unwrap()), start + 1));
                } else {
                    let s: String = chars[start..i].iter().collect();
                    toks.push((Tok::Int(s.parse().unwrap()), start + 1));
                }
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                toks.push((Tok::Ident(s), start + 1));
                continue;
            }
            _ => {
                // Unknown character: surface as an identifier-shaped token so
                // the parser reports it with position.
                toks.push((Tok::Ident(c.to_string()), col));
            }
        }
        i += 1;
    }
    toks.push((Tok::End, chars.len() + 1));
    toks
}
