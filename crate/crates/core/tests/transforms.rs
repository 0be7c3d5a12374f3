//! Timestep removal, parallel marking, and mask behavior, end to end.

use recurc_core::frontend::{parse_program, validate, LevelFormat, StorageSpec};
use recurc_core::pipeline::{check_against_oracle, compile_text};
use recurc_core::runtime::{build_from_coo, interpret, InterpretOptions, TensorData, INF_SENTINEL};
use recurc_core::transforms::{mark_parallel, TransformError};
use std::collections::BTreeMap;

fn fw_inits(n: usize, edges: &[(usize, usize, f64)]) -> String {
    let mut weights = vec![vec![INF_SENTINEL; n]; n];
    for i in 0..n {
        weights[i][i] = 0.0;
    }
    for &(a, b, w) in edges {
        weights[a][b] = w;
    }
    let mut out = String::new();
    for i in 0..n {
        for j in 0..n {
            out.push_str(&format!("init: SP({i},{j},0) = {}\n", weights[i][j]));
        }
    }
    out
}

fn fw_text(n: usize, timestep: bool, parallel: &str) -> String {
    let mut edges = Vec::new();
    // Deterministic integer-weight graph.
    let mut state = 12345u64;
    for a in 0..n {
        for b in 0..n {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            if a != b && state % 10 < 3 {
                edges.push((a, b, ((state >> 32) % 100) as f64));
            }
        }
    }
    format!(
        "\
rec: SP(i,j,k) = min(SP(i,j,k-1), SP(i,k-1,k-1) + SP(k-1,j,k-1)) : [i<N, j<N, 1<=k, k<T]
order: k i j
extent: N = {n}
extent: T = {}
{}{}{}",
        n + 1,
        if timestep { "timestep: SP k\n" } else { "" },
        if parallel.is_empty() { String::new() } else { format!("parallel: {parallel}\n") },
        fw_inits(n, &edges)
    )
}

#[test]
fn floyd_warshall_2d_matches_3d_final_slice() {
    let n = 16;
    let compiled_3d = compile_text(&fw_text(n, false, ""), "fw3").unwrap();
    let compiled_2d = compile_text(&fw_text(n, true, ""), "fw2").unwrap();

    let r3 = check_against_oracle(&compiled_3d, &BTreeMap::new(), 0.0, &InterpretOptions::default()).unwrap();
    // The 2D check compares against the final slice of the 3D oracle run.
    let r2 = check_against_oracle(&compiled_2d, &BTreeMap::new(), 0.0, &InterpretOptions::default()).unwrap();
    assert_eq!(r2.max_abs_diff, 0.0, "min-plus timestep removal is exact");

    let sp3 = r3.outputs["SP"].to_dense();
    let sp2 = r2.outputs["SP"].to_dense();
    for i in 0..n as i64 {
        for j in 0..n as i64 {
            assert_eq!(sp2.get(&[i, j]), sp3.get(&[i, j, n as i64]));
        }
    }
}

#[test]
fn timestep_loop_serializes_inner_writers() {
    let compiled = compile_text(&fw_text(8, true, ""), "fw2").unwrap();
    let k = compiled
        .transformed
        .loops()
        .iter()
        .find(|l| l.var == "k")
        .map(|l| l.kind)
        .unwrap();
    assert_eq!(k, recurc_core::rin::LoopKind::For);
    // Any loop writing SP inside the timestep loop refuses parallelization.
    let mut prog = compiled.transformed.clone();
    for var in ["i", "j"] {
        let err = mark_parallel(&mut prog, var, &compiled.effective_spec);
        assert!(
            matches!(err, Err(TransformError::Serialized(_))),
            "{var}: {err:?}"
        );
    }
}

#[test]
fn parallel_marks_viterbi_i_but_not_j() {
    let base = "\
rec: V(i,j) = Max{k}(V(k,j-1) * A(k,i) * B(i,j)) : [1<=j, j<T, i<N, k<N]
order: j i k
extent: N = 6
extent: T = 4
init: V(0,0) = 0.3
init: V(1,0) = 0.4
init: V(2,0) = 0.1
init: V(3,0) = 0.05
init: V(4,0) = 0.1
init: V(5,0) = 0.05
";
    let with_i = format!("{base}parallel: i\n");
    let compiled = compile_text(&with_i, "viterbi").unwrap();
    let flagged: Vec<&str> = compiled
        .transformed
        .loops()
        .iter()
        .filter(|l| l.parallel)
        .map(|l| l.var.as_str())
        .collect();
    assert_eq!(flagged, vec!["i"]);

    let with_j = format!("{base}parallel: j\n");
    match compile_text(&with_j, "viterbi") {
        Err(recurc_core::pipeline::CompileError::Transform(TransformError::LoopCarried(v))) => {
            assert_eq!(v, "j")
        }
        Err(other) => panic!("expected loop-carried error, got {other}"),
        Ok(_) => panic!("expected loop-carried error, got success"),
    }
}

#[test]
fn parallel_marks_cholesky_k_but_not_i_or_j() {
    let base = "\
rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]
rec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]
order: i j k
extent: N = 8
";
    let compiled = compile_text(&format!("{base}parallel: k\n"), "chol").unwrap();
    let flagged: Vec<&str> = compiled
        .transformed
        .loops()
        .iter()
        .filter(|l| l.parallel)
        .map(|l| l.var.as_str())
        .collect();
    assert_eq!(flagged, vec!["k"]);
    for var in ["i", "j"] {
        match compile_text(&format!("{base}parallel: {var}\n"), "chol") {
            Err(recurc_core::pipeline::CompileError::Transform(TransformError::LoopCarried(_))) => {}
            Err(other) => panic!("{var}: unexpected error {other}"),
            Ok(_) => panic!("{var}: expected loop-carried error"),
        }
    }
}

fn spd8() -> Vec<Vec<f64>> {
    let n = 8;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let m: f64 = ((i * 13 + j * 7) % 11) as f64 / 11.0 - 0.5;
            a[i][j] = m;
        }
    }
    let mut spd = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                spd[i][j] += a[i][k] * a[j][k];
            }
            if i == j {
                spd[i][j] += n as f64;
            }
        }
    }
    spd
}

#[test]
fn full_mask_matches_unmasked_and_both_orientations_recorded() {
    let base = "\
rec: L(i,j) = (A(i,j) - Sum{k}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]
rec: L(i,j) = sqrt(A(i,j) - Sum{k}(L(i,k)*L(j,k))) : [k<j, j=i]
order: i j k
extent: N = 8
storage: A = Dense(0) Compressed(1)
storage: L = Dense(0) Compressed(1)
";
    let masked = format!("{base}mask: L = Dense(0) Compressed(1)\nmask: L = Dense(1) Compressed(0)\n");
    let spec = validate(parse_program(&masked).unwrap()).unwrap();
    assert_eq!(spec.storage["L"].masks.len(), 2, "both orientations recorded");

    let unmasked = compile_text(base, "chol").unwrap();
    let compiled = compile_text(&masked, "chol_masked").unwrap();

    let a = spd8();
    let csr = StorageSpec {
        levels: vec![(0, LevelFormat::Dense), (1, LevelFormat::Compressed)],
        masks: vec![],
    };
    let n = 8usize;
    let mut triples = Vec::new();
    for i in 0..n {
        for j in 0..n {
            triples.push((vec![i as i64, j as i64], a[i][j]));
        }
    }
    let a_data = build_from_coo(&triples, &csr, &[n as i64, n as i64]).unwrap();

    // Full lower-triangular mask: a superset of the true nonzero pattern.
    let mut mask_triples = Vec::new();
    for i in 0..n {
        for j in 0..=i {
            mask_triples.push((vec![i as i64, j as i64], 1.0));
        }
    }
    let mask = build_from_coo(&mask_triples, &csr, &[n as i64, n as i64]).unwrap();

    let mut inputs = BTreeMap::new();
    inputs.insert("A".to_string(), a_data.clone());
    inputs.insert("L_mask0".to_string(), mask);
    let (masked_out, _) = interpret(
        &compiled.kernel,
        &inputs,
        &compiled.effective_spec.initial_values,
        &InterpretOptions::default(),
    )
    .unwrap();

    let mut plain_inputs = BTreeMap::new();
    plain_inputs.insert("A".to_string(), a_data);
    let (plain_out, _) = interpret(
        &unmasked.kernel,
        &plain_inputs,
        &unmasked.effective_spec.initial_values,
        &InterpretOptions::default(),
    )
    .unwrap();

    let lhs = masked_out["L"].to_dense();
    let rhs = plain_out["L"].to_dense();
    for (coords, v) in rhs.entries() {
        assert!((v - lhs.get(&coords)).abs() <= 1e-12 * v.abs().max(1.0), "{coords:?}");
    }
}

#[test]
fn empty_mask_skips_all_masked_iterations() {
    // Identity copy under an empty mask performs no writes at all.
    let text = "\
rec: Yt(i,j) = A(i,j) : [i<N, j<N]
order: i j
extent: N = 6
storage: Yt = Dense(0) Compressed(1)
mask: Yt = Dense(0) Compressed(1)
storage: A = Dense(0) Compressed(1)
";
    let compiled = compile_text(text, "masked_copy").unwrap();
    let csr = StorageSpec {
        levels: vec![(0, LevelFormat::Dense), (1, LevelFormat::Compressed)],
        masks: vec![],
    };
    let a = build_from_coo(&[(vec![1, 2], 5.0)], &csr, &[6, 6]).unwrap();
    let empty = build_from_coo(&[], &csr, &[6, 6]).unwrap();
    let mut inputs = BTreeMap::new();
    inputs.insert("A".to_string(), a);
    inputs.insert("Yt_mask0".to_string(), empty);
    let (out, trace) = interpret(&compiled.kernel, &inputs, &BTreeMap::new(), &InterpretOptions::default()).unwrap();
    assert!(out["Yt"].entries().is_empty());
    assert_eq!(trace.stores.get("ws_Yt"), None);
}

#[test]
fn viterbi_timestep_removal_drops_dimension() {
    // The transform applies structurally; in-place removal is only
    // value-preserving for self-stabilizing updates like min-plus paths,
    // so no equivalence is asserted here.
    let text = "\
rec: V(i,j) = Max{k}(V(k,j-1) * A(k,i) * B(i,j)) : [1<=j, j<T, i<N, k<N]
order: j i k
timestep: V j
extent: N = 4
extent: T = 3
init: V(0,0) = 0.3
init: V(1,0) = 0.4
init: V(2,0) = 0.2
init: V(3,0) = 0.1
";
    let compiled = compile_text(text, "viterbi_ts").unwrap();
    for (f, _) in compiled.transformed.assignments() {
        assert_eq!(f.lhs.indices.len(), 1, "V lost its timestep dimension");
    }
    // Runs to completion on concrete data.
    let n = 4usize;
    let mut inputs = BTreeMap::new();
    inputs.insert(
        "A".to_string(),
        build_from_coo(
            &(0..n)
                .flat_map(|i| (0..n).map(move |j| (vec![i as i64, j as i64], 0.2 + 0.1 * ((i + j) % 3) as f64)))
                .collect::<Vec<_>>(),
            &StorageSpec::dense(2),
            &[n as i64, n as i64],
        )
        .unwrap(),
    );
    inputs.insert(
        "B".to_string(),
        build_from_coo(
            &(0..n)
                .flat_map(|i| (0..3).map(move |j| (vec![i as i64, j as i64], 0.3 + 0.1 * (i % 2) as f64)))
                .collect::<Vec<_>>(),
            &StorageSpec::dense(2),
            &[n as i64, 3],
        )
        .unwrap(),
    );
    let (out, _) = interpret(
        &compiled.kernel,
        &inputs,
        &compiled.effective_spec.initial_values,
        &InterpretOptions::default(),
    )
    .unwrap();
    assert_eq!(out["V"].extents, vec![4]);
}

#[test]
fn trivial_timestep_drop_preserves_semantics() {
    // A tensor whose timestep dimension never carries an offset: removal
    // simply drops the dimension.
    let text_3d = "\
rec: W(i,t) = A(i) + W(i,t-1) : [i<N, 1<=t, t<T]
order: t i
extent: N = 5
extent: T = 4
init: W(0,0) = 0
init: W(1,0) = 0
init: W(2,0) = 0
init: W(3,0) = 0
init: W(4,0) = 0
";
    let text_2d = format!("{text_3d}timestep: W t\n");
    let c3 = compile_text(text_3d, "w3").unwrap();
    let c2 = compile_text(&text_2d, "w2").unwrap();
    let mut inputs = BTreeMap::new();
    inputs.insert(
        "A".to_string(),
        build_from_coo(
            &(0..5).map(|i| (vec![i as i64], 1.0 + i as f64)).collect::<Vec<_>>(),
            &StorageSpec::dense(1),
            &[5],
        )
        .unwrap(),
    );
    let r3 = check_against_oracle(&c3, &inputs, 1e-12, &InterpretOptions::default()).unwrap();
    let r2 = check_against_oracle(&c2, &inputs, 1e-12, &InterpretOptions::default()).unwrap();
    let w3 = r3.outputs["W"].to_dense();
    let w2 = r2.outputs["W"].to_dense();
    for i in 0..5i64 {
        assert_eq!(w2.get(&[i]), w3.get(&[i, 3]));
    }
}
