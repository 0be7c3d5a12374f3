//! Kernel structure and C emission.

use recurc_core::codegen::{emit_c, KernelStmt, Resolved};
use recurc_core::pipeline::compile_text;

const CHOLESKY_CSR: &str = "\
rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]
rec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]
order: i j k
extent: N = 8
storage: A = Dense(0) Compressed(1)
storage: L = Dense(0) Compressed(1)
";

#[test]
fn sparse_cholesky_kernel_shape() {
    let compiled = compile_text(CHOLESKY_CSR, "chol").unwrap();
    let k = &compiled.kernel;

    // Workspace assembly for the output row, a row load of A, a compressed
    // walk of L's row j driving the k loop, and no searches.
    let mut saw_init = false;
    let mut saw_load_a = false;
    let mut saw_compress = false;
    let mut saw_compressed_loop_over_l = false;
    let mut workspace_reads = 0;
    k.walk_stmts(&mut |s| match s {
        KernelStmt::WorkspaceInit { ws, .. } if ws == "ws_L" => saw_init = true,
        KernelStmt::WorkspaceLoadSlice { tensor, .. } if tensor == "A" => saw_load_a = true,
        KernelStmt::WorkspaceCompress { tensor, .. } if tensor == "L" => saw_compress = true,
        KernelStmt::CompressedLoop { tensor, var, over_mask: false, .. } if tensor == "L" && var == "k" => {
            saw_compressed_loop_over_l = true
        }
        KernelStmt::Bind { access: Resolved::Workspace { .. }, .. } => workspace_reads += 1,
        _ => {}
    });
    assert!(saw_init, "row workspace initialized");
    assert!(saw_load_a, "sparse row of A loaded into a dense buffer");
    assert!(saw_compress, "workspace compressed into the output row");
    assert!(saw_compressed_loop_over_l, "k loop walks L's row j");
    assert!(workspace_reads > 0);
    assert!(k.warnings.is_empty(), "{:?}", k.warnings);
    assert!(!k.has_searches());

    // The diagonal read of row j resolves to the last stored entry.
    let mut saw_edge = false;
    k.walk_stmts(&mut |s| {
        if let KernelStmt::Bind { access: Resolved::EdgeOfSlice { tensor, last, .. }, .. } = s {
            if tensor == "L" && *last {
                saw_edge = true;
            }
        }
    });
    assert!(saw_edge, "diagonal uses the last-entry-of-row rule");
}

#[test]
fn all_dense_kernel_is_plain_loops() {
    let text = "\
rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]
rec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]
order: i j k
extent: N = 8
";
    let compiled = compile_text(text, "chol_dense").unwrap();
    let k = &compiled.kernel;
    assert!(k.warnings.is_empty());
    assert!(k.workspaces.is_empty());
    assert!(!k.has_searches());
    let mut compressed = 0;
    k.walk_stmts(&mut |s| {
        if matches!(s, KernelStmt::CompressedLoop { .. } | KernelStmt::CoIterLoop { .. }) {
            compressed += 1;
        }
    });
    assert_eq!(compressed, 0);
}

#[test]
fn emission_is_deterministic() {
    let compiled = compile_text(CHOLESKY_CSR, "chol").unwrap();
    let a = emit_c(&compiled.kernel, "cholesky_csr");
    let b = emit_c(&compiled.kernel, "cholesky_csr");
    assert_eq!(a, b);
    assert!(a.contains("void cholesky_csr("));
    assert!(a.contains("L_pos"));
    assert!(a.contains("A_crd"));
}

#[test]
fn fibonacci_c_is_one_ascending_loop() {
    let text = "\
rec: F(i) = F(i-1) + F(i-2) : [2<=i, i<N]
order: i
extent: N = 11
init: F(0) = 0
init: F(1) = 1
";
    let compiled = compile_text(text, "fib").unwrap();
    let src = emit_c(&compiled.kernel, "fib");
    assert_eq!(src.matches("for (").count(), 1, "{src}");
    assert!(src.contains("for (int64_t i = 2; i < F_d0; i++)"), "{src}");
    assert!(src.contains("F_vals"), "{src}");
    assert!(!src.contains("pragma"), "{src}");
}

#[test]
fn viterbi_pragma_on_parallel_loop_only() {
    let text = "\
rec: V(i,j) = Max{k}(V(k,j-1) * A(k,i) * B(i,j)) : [1<=j, j<T, i<N, k<N]
order: j i k
parallel: i
extent: N = 6
extent: T = 4
init: V(0,0) = 1
";
    let compiled = compile_text(text, "viterbi").unwrap();
    let src = emit_c(&compiled.kernel, "viterbi");
    assert_eq!(src.matches("#pragma omp parallel for").count(), 1, "{src}");
    let pragma_pos = src.find("#pragma omp parallel for").unwrap();
    let after = &src[pragma_pos..];
    let next_for = after.find("for (int64_t").unwrap();
    assert!(after[next_for..].starts_with("for (int64_t i"), "pragma sits on the i loop:\n{src}");
}

#[test]
fn ji_trisolve_csr_emits_search_helper() {
    let text = "\
rec: X(i) = (B(i) - Sum{j}(L(i,j)*X(j))) / L(i,i) : [j<i, i<N]
order: j i
extent: N = 8
storage: L = Dense(0) Compressed(1)
";
    let compiled = compile_text(text, "tri").unwrap();
    assert!(!compiled.kernel.warnings.is_empty());
    let src = emit_c(&compiled.kernel, "tri");
    assert!(src.contains("read_or_zero"), "{src}");
}
