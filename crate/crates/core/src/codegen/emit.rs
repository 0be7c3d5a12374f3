//! C99 source emission: one self-contained function per kernel, pos/crd
//! walks for compressed levels, OpenMP pragmas on parallel loops, and a
//! binary-search helper when any access needs one.

use super::{KExpr, Kernel, KernelStmt, Resolved};
use crate::fragments::FragmentMode;
use crate::frontend::{BinaryOp, IndexExpr, LevelFormat, ReduceOp, UnaryOp};
use std::fmt::Write;

pub fn emit_c(kernel: &Kernel, name: &str) -> String {
    let mut e = Emitter { kernel, out: String::new(), indent: 1 };
    let mut src = String::new();
    src.push_str("#include <stdint.h>\n#include <stdlib.h>\n#include <math.h>\n\n");
    if kernel.has_searches() {
        src.push_str(
            "static double read_or_zero(const int64_t* crd, const double* vals, int64_t lo, int64_t hi, int64_t key) {\n\
             \tint64_t end = hi;\n\
             \twhile (lo < hi) {\n\
             \t\tint64_t mid = lo + (hi - lo) / 2;\n\
             \t\tif (crd[mid] < key) lo = mid + 1; else hi = mid;\n\
             \t}\n\
             \tif (lo < end && crd[lo] == key) return vals[lo];\n\
             \treturn 0.0;\n}\n\n",
        );
    }

    // Signature: tensors in declaration order, each as extents, pos/crd per
    // compressed level (outputs also take a nonzero counter), then values.
    let mut params: Vec<String> = Vec::new();
    for p in &kernel.params {
        for d in 0..p.rank {
            params.push(format!("int64_t {}_d{}", p.tensor, d));
        }
        let compressed = !p.storage.is_all_dense();
        if compressed {
            let konst = if p.output { "" } else { "const " };
            params.push(format!("{}int64_t* {}_pos", konst, p.tensor));
            params.push(format!("{}int64_t* {}_crd", konst, p.tensor));
            if p.output {
                params.push(format!("int64_t* {}_nnz", p.tensor));
            }
        }
        if !p.pattern_only {
            if p.output {
                params.push(format!("double* {}_vals", p.tensor));
            } else {
                params.push(format!("const double* {}_vals", p.tensor));
            }
        }
    }

    let _ = writeln!(src, "void {}(", name);
    let _ = writeln!(src, "\t{}", params.join(",\n\t"));
    src.push_str(") {\n");

    // Temporaries: alias tensors and workspaces.
    for t in &kernel.temps {
        let dims = &kernel.dims[&t.tensor];
        let size = dims
            .iter()
            .map(|d| format!("({})", e.index(d)))
            .collect::<Vec<_>>()
            .join("*");
        let _ = writeln!(src, "\tdouble* {}_vals = (double*)malloc(sizeof(double)*{});", t.tensor, size);
        let _ = writeln!(
            src,
            "\tfor (int64_t x = 0; x < {size}; x++) {}_vals[x] = {};",
            t.tensor,
            fmt_const(t.init)
        );
    }
    for w in &kernel.workspaces {
        let (t, d) = &w.size_of;
        let size = e.index(&kernel.dims[t][*d]);
        let _ = writeln!(src, "\tdouble* {} = (double*)malloc(sizeof(double)*({size}));", w.ws);
        let _ = writeln!(src, "\tuint8_t* {}_set = (uint8_t*)malloc({size});", w.ws);
    }
    // Compressed outputs append from zero.
    for p in &kernel.params {
        if p.output && !p.storage.is_all_dense() {
            let _ = writeln!(src, "\t*{0}_nnz = 0;\n\t{0}_pos[0] = 0;", p.tensor);
        }
    }

    e.body(&kernel.body);
    src.push_str(&e.out);

    for t in &kernel.temps {
        let _ = writeln!(src, "\tfree({}_vals);", t.tensor);
    }
    for w in &kernel.workspaces {
        let _ = writeln!(src, "\tfree({});\n\tfree({}_set);", w.ws, w.ws);
    }
    src.push_str("}\n");
    src
}

fn fmt_const(v: f64) -> String {
    if v == f64::trunc(v) && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v:e}")
    }
}

struct Emitter<'a> {
    kernel: &'a Kernel,
    out: String,
    indent: usize,
}

impl<'a> Emitter<'a> {
    fn line(&mut self, s: &str) {
        for _ in 0..self.indent {
            self.out.push('\t');
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    /// Renders an index expression; extent symbols become the first tensor
    /// dimension parameter of that size.
    fn index(&self, e: &IndexExpr) -> String {
        let base = match e.var.as_deref() {
            None => return format!("{}", e.offset),
            Some(v) => {
                if self.kernel.extents.contains_key(v) {
                    self.extent_param(v)
                } else {
                    v.to_string()
                }
            }
        };
        if e.offset == 0 {
            base
        } else if e.offset > 0 {
            format!("{} + {}", base, e.offset)
        } else {
            format!("{} - {}", base, -e.offset)
        }
    }

    fn extent_param(&self, symbol: &str) -> String {
        for p in &self.kernel.params {
            if let Some(dims) = self.kernel.dims.get(&p.tensor) {
                for (d, expr) in dims.iter().enumerate().take(p.rank) {
                    if expr.var.as_deref() == Some(symbol) && expr.offset == 0 {
                        return format!("{}_d{}", p.tensor, d);
                    }
                }
            }
        }
        // No dimension carries the bare symbol; fall back to its value.
        self.kernel
            .extents
            .get(symbol)
            .map(|v| v.to_string())
            .unwrap_or_else(|| symbol.to_string())
    }

    /// Dense offset in level order.
    fn dense_offset(&self, tensor: &str, indices: &[IndexExpr]) -> String {
        let storage = self
            .kernel
            .params
            .iter()
            .find(|p| p.tensor == tensor)
            .map(|p| p.storage.clone())
            .unwrap_or_else(|| crate::frontend::StorageSpec::dense(indices.len()));
        let levels: Vec<usize> = if storage.levels.is_empty() {
            (0..indices.len()).collect()
        } else {
            storage.levels.iter().map(|(d, _)| *d).collect()
        };
        let mut expr = String::new();
        for (k, d) in levels.iter().enumerate() {
            let idx = self.index(&indices[*d]);
            if k == 0 {
                expr = format!("({idx})");
            } else {
                expr = format!("({expr}*{}_d{} + ({idx}))", tensor, d);
            }
        }
        if expr.is_empty() {
            expr = "0".into();
        }
        expr
    }

    fn segment_offset(&self, tensor: &str, segment: &[IndexExpr]) -> String {
        // Level-order fold over the dense prefix dimensions.
        let dims = self
            .kernel
            .params
            .iter()
            .find(|p| p.tensor == tensor)
            .map(|p| p.storage.levels[..p.storage.levels.len() - 1].to_vec())
            .unwrap_or_default();
        let mut expr = String::new();
        for (k, (d, _)) in dims.iter().enumerate() {
            let idx = self.index(&segment[k]);
            if k == 0 {
                expr = format!("({idx})");
            } else {
                expr = format!("({expr}*{}_d{} + ({idx}))", tensor, d);
            }
        }
        if expr.is_empty() {
            expr = "0".into();
        }
        expr
    }

    fn access(&self, r: &Resolved) -> String {
        match r {
            Resolved::Dense { tensor, indices } => {
                format!("{}_vals[{}]", tensor, self.dense_offset(tensor, indices))
            }
            Resolved::SequentialPos { tensor } => format!("{tensor}_vals[p_{tensor}]"),
            Resolved::Workspace { ws, index } => format!("{ws}[{}]", self.index(index)),
            Resolved::EdgeOfSlice { tensor, segment, last, .. } => {
                let seg = self.segment_offset(tensor, segment);
                if *last {
                    format!("{tensor}_vals[{tensor}_pos[({seg})+1]-1]")
                } else {
                    format!("{tensor}_vals[{tensor}_pos[{seg}]]")
                }
            }
            Resolved::Search { tensor, segment, coord } => {
                let seg = self.segment_offset(tensor, segment);
                format!(
                    "read_or_zero({tensor}_crd, {tensor}_vals, {tensor}_pos[{seg}], {tensor}_pos[({seg})+1], {})",
                    self.index(coord)
                )
            }
        }
    }

    fn expr(&self, e: &KExpr) -> String {
        match e {
            KExpr::Const(c) => fmt_const(*c),
            KExpr::Local(id) => format!("t{id}"),
            KExpr::Unary(UnaryOp::Neg, c) => format!("(-{})", self.expr(c)),
            KExpr::Unary(UnaryOp::Sqrt, c) => format!("sqrt({})", self.expr(c)),
            KExpr::Binary(op, l, r) => {
                let (l, r) = (self.expr(l), self.expr(r));
                match op {
                    BinaryOp::Add => format!("({l} + {r})"),
                    BinaryOp::Sub => format!("({l} - {r})"),
                    BinaryOp::Mul => format!("({l} * {r})"),
                    BinaryOp::Div => format!("({l} / {r})"),
                    BinaryOp::Min => format!("fmin({l}, {r})"),
                    BinaryOp::Max => format!("fmax({l}, {r})"),
                }
            }
        }
    }

    fn body(&mut self, stmts: &[KernelStmt]) {
        for s in stmts {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &KernelStmt) {
        match s {
            KernelStmt::DenseLoop { var, lower, upper, parallel, body, .. } => {
                if *parallel {
                    self.line("#pragma omp parallel for");
                }
                let lo = self.index(lower);
                let hi = self.index(upper);
                self.line(&format!("for (int64_t {var} = {lo}; {var} < {hi}; {var}++) {{"));
                self.indent += 1;
                self.body(body);
                self.indent -= 1;
                self.line("}");
            }
            KernelStmt::CompressedLoop { var, tensor, segment, lower, upper, parallel, body, over_mask, .. } => {
                if *parallel {
                    self.line("#pragma omp parallel for");
                }
                let seg = self.segment_offset(tensor, segment);
                let p = format!("p_{tensor}");
                self.line(&format!(
                    "for (int64_t {p} = {tensor}_pos[{seg}]; {p} < {tensor}_pos[({seg})+1]; {p}++) {{"
                ));
                self.indent += 1;
                self.line(&format!("int64_t {var} = {tensor}_crd[{p}];"));
                if let Some(lo) = lower {
                    self.line(&format!("if ({var} < {}) continue;", self.index(lo)));
                }
                if let Some(hi) = upper {
                    self.line(&format!("if ({var} >= {}) break;", self.index(hi)));
                }
                let _ = over_mask;
                self.body(body);
                self.indent -= 1;
                self.line("}");
            }
            KernelStmt::CoIterLoop { var, union, left, right, lower, upper, body } => {
                let (lt, ls) = (&left.0, self.segment_offset(&left.0, &left.1));
                let (rt, rs) = (&right.0, self.segment_offset(&right.0, &right.1));
                self.line(&format!("int64_t p_{lt} = {lt}_pos[{ls}], p_{lt}_end = {lt}_pos[({ls})+1];"));
                self.line(&format!("int64_t p_{rt} = {rt}_pos[{rs}], p_{rt}_end = {rt}_pos[({rs})+1];"));
                let cond = if *union {
                    format!("p_{lt} < p_{lt}_end || p_{rt} < p_{rt}_end")
                } else {
                    format!("p_{lt} < p_{lt}_end && p_{rt} < p_{rt}_end")
                };
                self.line(&format!("while ({cond}) {{"));
                self.indent += 1;
                self.line(&format!(
                    "int64_t c_{lt} = p_{lt} < p_{lt}_end ? {lt}_crd[p_{lt}] : INT64_MAX;"
                ));
                self.line(&format!(
                    "int64_t c_{rt} = p_{rt} < p_{rt}_end ? {rt}_crd[p_{rt}] : INT64_MAX;"
                ));
                if *union {
                    self.line(&format!("int64_t {var} = c_{lt} < c_{rt} ? c_{lt} : c_{rt};"));
                } else {
                    self.line(&format!(
                        "if (c_{lt} != c_{rt}) {{ if (c_{lt} < c_{rt}) p_{lt}++; else p_{rt}++; continue; }}"
                    ));
                    self.line(&format!("int64_t {var} = c_{lt};"));
                }
                let mut skip = String::new();
                if let Some(lo) = lower {
                    skip = format!("{var} < {}", self.index(lo));
                }
                if let Some(hi) = upper {
                    if !skip.is_empty() {
                        skip.push_str(" || ");
                    }
                    let _ = write!(skip, "{var} >= {}", self.index(hi));
                }
                let advance = if *union {
                    format!("if (c_{lt} == {var}) p_{lt}++; if (c_{rt} == {var}) p_{rt}++;")
                } else {
                    format!("p_{lt}++; p_{rt}++;")
                };
                if !skip.is_empty() {
                    self.line(&format!("if ({skip}) {{ {advance} continue; }}"));
                }
                self.body(body);
                self.line(&advance);
                self.indent -= 1;
                self.line("}");
            }
            KernelStmt::WorkspaceInit { ws, size_of, init } => {
                let size = self.index(&self.kernel.dims[&size_of.0][size_of.1]);
                self.line(&format!(
                    "for (int64_t x = 0; x < {size}; x++) {{ {ws}[x] = {}; {ws}_set[x] = 0; }}",
                    fmt_const(*init)
                ));
            }
            KernelStmt::WorkspaceLoadSlice { ws, tensor, segment } => {
                let (t, d) = self
                    .kernel
                    .workspaces
                    .iter()
                    .find(|w| w.ws == *ws)
                    .map(|w| w.size_of.clone())
                    .unwrap();
                let size = self.index(&self.kernel.dims[&t][d]);
                let seg = self.segment_offset(tensor, segment);
                self.line(&format!("for (int64_t x = 0; x < {size}; x++) {ws}[x] = 0.0;"));
                self.line(&format!(
                    "for (int64_t p = {tensor}_pos[{seg}]; p < {tensor}_pos[({seg})+1]; p++) {ws}[{tensor}_crd[p]] = {tensor}_vals[p];"
                ));
            }
            KernelStmt::WorkspaceCompress { ws, tensor, segment } => {
                let (t, d) = self
                    .kernel
                    .workspaces
                    .iter()
                    .find(|w| w.ws == *ws)
                    .map(|w| w.size_of.clone())
                    .unwrap();
                let size = self.index(&self.kernel.dims[&t][d]);
                let seg = self.segment_offset(tensor, segment);
                self.line(&format!(
                    "for (int64_t x = 0; x < {size}; x++) if ({ws}_set[x]) {{ {tensor}_crd[*{tensor}_nnz] = x; {tensor}_vals[*{tensor}_nnz] = {ws}[x]; (*{tensor}_nnz)++; }}"
                ));
                self.line(&format!("{tensor}_pos[({seg})+1] = *{tensor}_nnz;"));
            }
            KernelStmt::Bind { local, access } => {
                self.line(&format!("double t{local} = {};", self.access(access)));
            }
            KernelStmt::Compute { lhs, mode, rhs } => {
                let target = self.access(lhs);
                let value = self.expr(rhs);
                let line = match mode {
                    FragmentMode::Assign => format!("{target} = {value};"),
                    FragmentMode::Reduce(ReduceOp::Add) => format!("{target} += {value};"),
                    FragmentMode::Reduce(ReduceOp::Min) => format!("{target} = fmin({target}, {value});"),
                    FragmentMode::Reduce(ReduceOp::Max) => format!("{target} = fmax({target}, {value});"),
                };
                self.line(&line);
                if let Resolved::Workspace { ws, index } = lhs {
                    if self.kernel.workspaces.iter().any(|w| w.ws == *ws) {
                        self.line(&format!("{ws}_set[{}] = 1;", self.index(index)));
                    }
                }
            }
        }
    }
}

#[allow(unused)]
fn level_name(fmt: LevelFormat) -> &'static str {
    match fmt {
        LevelFormat::Dense => "Dense",
        LevelFormat::Compressed => "Compressed",
    }
}
