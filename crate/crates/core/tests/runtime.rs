//! Interpreter semantics: the for/forall contract made dynamic, workspace
//! discipline, trace determinism, and readiness soundness.

use recurc_core::frontend::StorageSpec;
use recurc_core::pipeline::{compile_text, Compiled};
use recurc_core::runtime::{build_from_coo, interpret, interpret_rin, InterpretOptions, TensorData};
use std::collections::BTreeMap;

fn dense2(n: usize, f: impl Fn(usize, usize) -> f64) -> TensorData {
    let mut triples = Vec::new();
    for i in 0..n {
        for j in 0..n {
            triples.push((vec![i as i64, j as i64], f(i, j)));
        }
    }
    build_from_coo(&triples, &StorageSpec::dense(2), &[n as i64, n as i64]).unwrap()
}

fn run(c: &Compiled, inputs: &BTreeMap<String, TensorData>, opts: &InterpretOptions) -> BTreeMap<String, TensorData> {
    interpret(&c.kernel, inputs, &c.effective_spec.initial_values, opts).unwrap().0
}

#[test]
fn two_by_two_examples() {
    // Triangular solve L=[[2,0],[1,4]], b=[2,5] -> x=[1,1].
    let tri = compile_text(
        "rec: X(i) = (B(i) - Sum{j}(L(i,j)*X(j))) / L(i,i) : [j<i, i<N]\norder: i j\nextent: N = 2\n",
        "tri",
    )
    .unwrap();
    let mut inputs = BTreeMap::new();
    inputs.insert("L".to_string(), dense2(2, |i, j| [[2.0, 0.0], [1.0, 4.0]][i][j]));
    inputs.insert(
        "B".to_string(),
        build_from_coo(&[(vec![0], 2.0), (vec![1], 5.0)], &StorageSpec::dense(1), &[2]).unwrap(),
    );
    let out = run(&tri, &inputs, &InterpretOptions::default());
    assert_eq!(out["X"].get(&[0]), 1.0);
    assert_eq!(out["X"].get(&[1]), 1.0);

    // Cholesky A=[[4,2],[2,5]] -> L=[[2,0],[1,2]].
    let chol = compile_text(
        "rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]\nrec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]\norder: i j k\nextent: N = 2\n",
        "chol",
    )
    .unwrap();
    let mut inputs = BTreeMap::new();
    inputs.insert("A".to_string(), dense2(2, |i, j| [[4.0, 2.0], [2.0, 5.0]][i][j]));
    let out = run(&chol, &inputs, &InterpretOptions::default());
    let l = out["L"].to_dense();
    assert_eq!(l.get(&[0, 0]), 2.0);
    assert_eq!(l.get(&[1, 0]), 1.0);
    assert_eq!(l.get(&[1, 1]), 2.0);
}

#[test]
fn non_spd_matrix_reports_error() {
    let chol = compile_text(
        "rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]\nrec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]\norder: i j k\nextent: N = 2\n",
        "chol",
    )
    .unwrap();
    let mut inputs = BTreeMap::new();
    // Indefinite: the (1,1) pivot goes negative.
    inputs.insert("A".to_string(), dense2(2, |i, j| [[1.0, 3.0], [3.0, 1.0]][i][j]));
    let err = interpret(&chol.kernel, &inputs, &chol.effective_spec.initial_values, &InterpretOptions::default());
    assert!(err.is_err(), "indefinite input must fail loudly");
}

fn cholesky_12() -> (Compiled, BTreeMap<String, TensorData>) {
    let compiled = compile_text(
        "rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]\nrec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]\norder: i j k\nextent: N = 12\n",
        "chol",
    )
    .unwrap();
    let n = 12;
    let m = |i: usize, j: usize| ((i * 17 + j * 5) % 13) as f64 / 13.0 - 0.4;
    let a = dense2(n, |i, j| {
        let mut s = 0.0;
        for k in 0..n {
            s += m(i, k) * m(j, k);
        }
        if i == j {
            s += n as f64;
        }
        s
    });
    let mut inputs = BTreeMap::new();
    inputs.insert("A".to_string(), a);
    (compiled, inputs)
}

#[test]
fn forall_permutation_is_bit_identical() {
    let (compiled, inputs) = cholesky_12();
    let base = run(&compiled, &inputs, &InterpretOptions::default());
    for seed in 0..20u64 {
        let opts = InterpretOptions { permute_foralls: Some(seed), permute_fors: false };
        let permuted = run(&compiled, &inputs, &opts);
        assert_eq!(base["L"], permuted["L"], "seed {seed}");
    }
}

#[test]
fn for_permutation_changes_gauss_seidel() {
    let mut text = String::from(
        "rec: x(i,j,t) = 0.2*(x(i,j,t-1) + x(i-1,j,t) + x(i,j-1,t) + x(i+1,j,t-1) + x(i,j+1,t-1)) : [1<=i, i<M, 1<=j, j<M, 1<=t, t<T]\norder: t i j\nextent: T = 3\nextent: M = 5\n",
    );
    for i in 0..6 {
        for j in 0..6 {
            text.push_str(&format!("init: x({i},{j},0) = {}\n", (i * 7 + j) % 4));
        }
    }
    for t in 1..3 {
        for k in 0..6 {
            for (a, b) in [(0, k), (5, k), (k, 0), (k, 5)] {
                text.push_str(&format!("init: x({a},{b},{t}) = {}\n", (a * 7 + b) % 4));
            }
        }
    }
    let compiled = compile_text(&text, "gs").unwrap();
    let base = run(&compiled, &BTreeMap::new(), &InterpretOptions::default());
    let mut changed = false;
    for seed in 0..8u64 {
        let opts = InterpretOptions { permute_foralls: Some(seed), permute_fors: true };
        let permuted = run(&compiled, &BTreeMap::new(), &opts);
        if base["x"] != permuted["x"] {
            changed = true;
        }
    }
    assert!(changed, "permuting `for` loops must change a sweep-ordered kernel");
}

#[test]
fn trace_is_deterministic() {
    let (compiled, inputs) = cholesky_12();
    let opts = InterpretOptions { permute_foralls: Some(42), permute_fors: false };
    let (_, t1) = interpret(&compiled.kernel, &inputs, &compiled.effective_spec.initial_values, &opts).unwrap();
    let (_, t2) = interpret(&compiled.kernel, &inputs, &compiled.effective_spec.initial_values, &opts).unwrap();
    assert_eq!(t1, t2);
}

#[test]
fn warnings_match_runtime_searches() {
    // A kernel searches at runtime iff its warning list is nonempty.
    let programs = [
        (
            "rec: X(i) = (B(i) - Sum{j}(L(i,j)*X(j))) / L(i,i) : [j<i, i<N]\norder: j i\nextent: N = 8\nstorage: L = Dense(0) Compressed(1)\n",
            true,
        ),
        (
            "rec: X(i) = (B(i) - Sum{j}(L(i,j)*X(j))) / L(i,i) : [j<i, i<N]\norder: j i\nextent: N = 8\nstorage: L = Dense(1) Compressed(0)\n",
            false,
        ),
    ];
    for (text, expect_warn) in programs {
        let compiled = compile_text(text, "tri").unwrap();
        assert_eq!(!compiled.kernel.warnings.is_empty(), expect_warn);
        let storage = recurc_core::frontend::parse_program(text).unwrap().storage["L"].clone();
        let n = 8usize;
        let mut triples = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if (i + j) % 2 == 0 {
                    triples.push((vec![i as i64, j as i64], 0.5));
                }
            }
            triples.push((vec![i as i64, i as i64], 2.0));
        }
        let mut inputs = BTreeMap::new();
        inputs.insert("L".to_string(), build_from_coo(&triples, &storage, &[n as i64, n as i64]).unwrap());
        inputs.insert(
            "B".to_string(),
            build_from_coo(&(0..n).map(|i| (vec![i as i64], 1.0)).collect::<Vec<_>>(), &StorageSpec::dense(1), &[n as i64]).unwrap(),
        );
        let (_, trace) =
            interpret(&compiled.kernel, &inputs, &compiled.effective_spec.initial_values, &InterpretOptions::default()).unwrap();
        assert_eq!(trace.searches > 0, expect_warn, "{text}");
    }
}

#[test]
fn readiness_markers_hold_dynamically() {
    // Interpreting the RIN directly and asserting every marker never fires,
    // over permuted foralls.
    let programs = [
        "rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]\nrec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]\norder: i j k\nextent: N = 6\n",
        "rec: S(i) = sqrt(Sum{k}(S(k))) : [k<i, i<N]\norder: k i\nextent: N = 6\n",
        "rec: F(i) = F(i-1) + F(i-2) : [2<=i, i<N]\norder: i\nextent: N = 9\ninit: F(0) = 0\ninit: F(1) = 1\n",
    ];
    for text in programs {
        let compiled = compile_text(text, "p").unwrap();
        let mut inputs = BTreeMap::new();
        if text.contains("A(i,j)") {
            inputs.insert(
                "A".to_string(),
                dense2(6, |i, j| if i == j { 8.0 } else { ((i + 2 * j) % 3) as f64 * 0.3 }),
            );
        }
        for seed in [None, Some(1), Some(7)] {
            interpret_rin(&compiled.rin, &compiled.spec, &inputs, true, seed)
                .unwrap_or_else(|e| panic!("{text}: {e}"));
        }
    }
}

#[test]
fn rin_and_kernel_agree() {
    let (compiled, inputs) = cholesky_12();
    let (rin_out, _) = interpret_rin(&compiled.rin, &compiled.spec, &inputs, false, None).unwrap();
    let kernel_out = run(&compiled, &inputs, &InterpretOptions::default());
    let a = rin_out["L"].to_dense();
    let b = kernel_out["L"].to_dense();
    for (coords, v) in a.entries() {
        assert!((v - b.get(&coords)).abs() < 1e-12);
    }
}

#[test]
fn empty_sparse_input_empty_output() {
    let text = "\
rec: y(i) = Sum{k}(A(i,k)*x(k)) : [i<N, k<N]
order: i k
extent: N = 6
storage: A = Dense(0) Compressed(1)
";
    let compiled = compile_text(text, "spmv").unwrap();
    let csr = recurc_core::frontend::parse_program(text).unwrap().storage["A"].clone();
    let mut inputs = BTreeMap::new();
    inputs.insert("A".to_string(), build_from_coo(&[], &csr, &[6, 6]).unwrap());
    inputs.insert(
        "x".to_string(),
        build_from_coo(&(0..6).map(|i| (vec![i as i64], 1.0)).collect::<Vec<_>>(), &StorageSpec::dense(1), &[6]).unwrap(),
    );
    let (out, trace) = interpret(&compiled.kernel, &inputs, &BTreeMap::new(), &InterpretOptions::default()).unwrap();
    assert!(out["y"].to_dense().entries().iter().all(|(_, v)| *v == 0.0));
    assert_eq!(trace.loads_of("A"), 0, "zero stored entries, zero iterations");
}
