use super::place::covers;
use super::*;
use crate::fragments::{self, MinimalFragment};
use crate::frontend::{parse_program, validate, Constraint, ConstraintSystem, IndexExpr, ProgramSpec, TensorAccess};
use std::collections::BTreeMap;

fn spec_of(text: &str) -> ProgramSpec {
    validate(parse_program(text).unwrap()).unwrap()
}

fn cholesky(order: &str) -> ProgramSpec {
    spec_of(&format!(
        "\
rec: L(i,j) = (A(i,j) - Sum{{k}}(L(i,k)*L(j,k))) / L(j,j) : [k<j, j<i]
rec: L(i,j) = sqrt(A(i,j) - Sum{{k}}(L(i,k)*L(j,k))) : [k<j, j=i]
order: {}
extent: N = 8
",
        order.chars().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
    ))
}

fn prefix_sqrt(order: &str) -> ProgramSpec {
    spec_of(&format!(
        "\
rec: S(i) = sqrt(Sum{{k}}(S(k))) : [k<i, i<N]
order: {}
extent: N = 8
",
        order.chars().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
    ))
}

#[test]
fn skeleton_matches_orderings() {
    let spec = cholesky("ijk");
    let frags = fragments::generate_and_normalize(&spec).unwrap();
    let prog = build_skeleton(&spec, &frags).unwrap();
    let printed = prog.to_string();
    assert_eq!(printed, "forall i<N:\n  forall j<i:\n    forall k<j:\n");

    let spec = cholesky("jik");
    let frags = fragments::generate_and_normalize(&spec).unwrap();
    let prog = build_skeleton(&spec, &frags).unwrap();
    assert_eq!(prog.to_string(), "forall j<N:\n  forall j<i<N:\n    forall k<j:\n");

    let spec = spec_of("rec: X(i) = X(i) : [i<N]\norder: i\nextent: N = 4\n");
    let frags = fragments::generate_and_normalize(&spec).unwrap();
    let prog = build_skeleton(&spec, &frags).unwrap();
    assert_eq!(prog.to_string(), "forall i<N:\n");
}

#[test]
fn golden_ijk_cholesky() {
    let spec = cholesky("ijk");
    let prog = lower(&spec).unwrap();
    let want = "\
for i<N:
  //L(:i,:) ready
  for j<i:
    //L(i,:j) ready
    forall k<j:
      L1(i,j) += L(i,k)*L(j,k)
    //L1(i,j) ready
    L(i,j) = (A(i,j) - L1(i,j))/L(j,j)
    //L(i,j) ready
    L1(i,i) += L(i,j)*L(i,j)
  //L1(i,i) ready
  L(i,i) = sqrt(A(i,i) - L1(i,i))
";
    assert_eq!(prog.to_string(), want);
    verify_rin(&prog, &spec).unwrap();

    // Structure: loop kinds for/for/forall, four statements, five markers.
    let loops = prog.loops();
    let kinds: Vec<(String, LoopKind)> = loops.iter().map(|l| (l.var.clone(), l.kind)).collect();
    assert_eq!(
        kinds,
        vec![
            ("i".to_string(), LoopKind::For),
            ("j".to_string(), LoopKind::For),
            ("k".to_string(), LoopKind::Forall)
        ]
    );
    assert_eq!(prog.assignments().len(), 4);
    let mut markers = 0;
    count_markers(&prog.body, &mut markers);
    assert_eq!(markers, 5);
}

fn count_markers(body: &[RinStmt], count: &mut usize) {
    for s in body {
        match s {
            RinStmt::Readiness(_) => *count += 1,
            RinStmt::Loop(l) => count_markers(&l.body, count),
            _ => {}
        }
    }
}

#[test]
fn prefix_sqrt_ik_listing() {
    let spec = prefix_sqrt("ik");
    let prog = lower(&spec).unwrap();
    let want = "\
for i<N:
  //S(:i) ready
  forall k<i:
    S1(i) += S(k)
  //S1(i) ready
  S(i) = sqrt(S1(i))
";
    assert_eq!(prog.to_string(), want);
    verify_rin(&prog, &spec).unwrap();
}

#[test]
fn prefix_sqrt_ki_listing() {
    let spec = prefix_sqrt("ki");
    let prog = lower(&spec).unwrap();
    let want = "\
for k<N:
  //S(:k) ready
  //S1(:k+1) ready
  S(k) = sqrt(S1(k))
  //S(k) ready
  forall k<i<N:
    S1(i) += S(k)
";
    assert_eq!(prog.to_string(), want);
    verify_rin(&prog, &spec).unwrap();
}

#[test]
fn fibonacci_lowering() {
    let spec = spec_of(
        "\
rec: F(i) = F(i-1) + F(i-2) : [2<=i, i<N]
order: i
extent: N = 11
init: F(0) = 0
init: F(1) = 1
",
    );
    let prog = lower(&spec).unwrap();
    assert_eq!(prog.to_string(), "for 2<=i<N:\n  //F(:i) ready\n  F(i) = F(i-1) + F(i-2)\n");
    verify_rin(&prog, &spec).unwrap();
}

#[test]
fn impossible_forward_reference() {
    let spec = spec_of(
        "\
rec: S(i) = S(i+1) + A(i) : [i<N]
order: i
extent: N = 8
",
    );
    match lower(&spec) {
        Err(PlacementError::OrderingImpossible { .. }) => {}
        other => panic!("expected ordering impossible, got {other:?}"),
    }
    // The backward-free twin compiles.
    let spec = spec_of(
        "\
rec: Y(i) = Y(i-1) + B(i) : [1<=i, i<N]
order: i
extent: N = 8
init: Y(0) = 0
",
    );
    lower(&spec).unwrap();
}

#[test]
fn covers_examples() {
    let extents: BTreeMap<String, i64> = [("N".to_string(), 8)].into();
    let cs = vec![
        Constraint::lt("k", IndexExpr::var("j")),
        Constraint::lt("j", IndexExpr::var("i")),
    ];
    let sys = ConstraintSystem::new(&cs, &extents);
    let m_rows = ReadinessMarker {
        tensor: "L".into(),
        region: vec![RegionIndex::Prefix(IndexExpr::var("i")), RegionIndex::All],
    };
    let l_jk = TensorAccess::new("L", vec![IndexExpr::var("j"), IndexExpr::var("k")]);
    assert!(covers(&m_rows, &l_jk, &sys));

    let m_row_i = ReadinessMarker {
        tensor: "L".into(),
        region: vec![RegionIndex::Exact(IndexExpr::var("i")), RegionIndex::Prefix(IndexExpr::var("j"))],
    };
    let l_ik = TensorAccess::new("L", vec![IndexExpr::var("i"), IndexExpr::var("k")]);
    assert!(covers(&m_row_i, &l_ik, &sys));

    let empty = ConstraintSystem::new(&[], &extents);
    let f_prefix = ReadinessMarker { tensor: "F".into(), region: vec![RegionIndex::Prefix(IndexExpr::var("i"))] };
    let f_next = TensorAccess::new("F", vec![IndexExpr::var_off("i", 1)]);
    let f_prev = TensorAccess::new("F", vec![IndexExpr::var_off("i", -1)]);
    assert!(!covers(&f_prefix, &f_next, &empty));
    assert!(covers(&f_prefix, &f_prev, &empty));
}

#[test]
fn covers_agrees_with_bruteforce() {
    // Enumerate all assignments in a small box and compare semantic
    // coverage of Prefix regions with the symbolic answer.
    let extents: BTreeMap<String, i64> = [("N".to_string(), 5)].into();
    let cs = vec![
        Constraint::lt("k", IndexExpr::var("j")),
        Constraint::lt("j", IndexExpr::var("i")),
        Constraint::lt("i", IndexExpr::var("N")),
    ];
    let sys = ConstraintSystem::new(&cs, &extents);
    let exprs = [
        IndexExpr::var("k"),
        IndexExpr::var("j"),
        IndexExpr::var("i"),
        IndexExpr::var_off("j", 1),
        IndexExpr::var_off("k", -1),
    ];
    for bound in &exprs {
        for target in &exprs {
            let marker = ReadinessMarker {
                tensor: "T".into(),
                region: vec![RegionIndex::Prefix(bound.clone())],
            };
            let access = TensorAccess::new("T", vec![target.clone()]);
            let symbolic = covers(&marker, &access, &sys);
            // Brute force: target < bound for every feasible (i, j, k).
            let mut semantic = true;
            let eval = |e: &IndexExpr, i: i64, j: i64, k: i64| -> i64 {
                match e.var.as_deref() {
                    Some("i") => i + e.offset,
                    Some("j") => j + e.offset,
                    Some("k") => k + e.offset,
                    _ => e.offset,
                }
            };
            for i in 0..5 {
                for j in 0..i {
                    for k in 0..j {
                        if eval(target, i, j, k) >= eval(bound, i, j, k) {
                            semantic = false;
                        }
                    }
                }
            }
            assert!(
                !symbolic || semantic,
                "symbolic coverage must be sound: {target} < {bound}"
            );
        }
    }
}

#[test]
fn ready_at_location_visibility() {
    let spec = cholesky("ijk");
    let prog = lower(&spec).unwrap();
    // Location of the accumulate statement: inside k (path i->j->k), index 0.
    // Visible: L(:i,:) and L(i,:j).
    let loc = Location { path: vec![0, 1, 1], index: 0 };
    let visible = prog.ready_at_location(&loc);
    let shown: Vec<String> = visible.iter().map(|m| m.to_string()).collect();
    assert_eq!(shown, vec!["//L(:i,:) ready", "//L(i,:j) ready"]);

    // Before any marker: empty set.
    let loc = Location { path: vec![], index: 0 };
    assert!(prog.ready_at_location(&loc).is_empty());

    // A marker inside loop j is invisible after loop j closes.
    let loc = Location { path: vec![0], index: 3 };
    let visible = prog.ready_at_location(&loc);
    assert!(visible.iter().all(|m| m.to_string() != "//L(i,:j) ready"));
    assert!(visible.iter().any(|m| m.to_string() == "//L1(i,i) ready"));
}

#[test]
fn six_cholesky_orderings_compile_with_expected_kinds() {
    for order in ["ijk", "ikj", "jik", "jki", "kij", "kji"] {
        let spec = cholesky(order);
        let prog = lower(&spec)
            .unwrap_or_else(|e| panic!("ordering {order} failed: {e}"));
        verify_rin(&prog, &spec).unwrap_or_else(|e| panic!("ordering {order} verify: {e}"));
        let for_vars: Vec<String> = prog
            .loops()
            .iter()
            .filter(|l| l.kind == LoopKind::For)
            .map(|l| l.var.clone())
            .collect();
        match order {
            "ijk" => assert_eq!(for_vars, vec!["i", "j"], "{order}"),
            "jik" => assert_eq!(for_vars, vec!["j"], "{order}"),
            _ => assert!(!for_vars.is_empty(), "{order} needs at least one assumption"),
        }
    }
}

#[test]
fn fused_triangular_solves_share_one_loop() {
    let spec = spec_of(
        "\
rec: X(i) = (B1(i) - Sum{j}(L(i,j)*X(j))) / L(i,i) : [j<i, i<N]
rec: Y(i) = (B2(i) - Sum{j}(L(i,j)*Y(j))) / L(i,i) : [j<i, i<N]
order: i j
extent: N = 8
",
    );
    let prog = lower(&spec).unwrap();
    verify_rin(&prog, &spec).unwrap();
    // Fusion: exactly one loop over i at the root, containing everything.
    let roots: Vec<&RinLoop> = prog.body.iter().filter_map(|s| s.as_loop()).collect();
    assert_eq!(roots.len(), 1);
    assert_eq!(roots[0].var, "i");
    // And one shared j loop inside.
    let inner: Vec<&RinLoop> = roots[0].body.iter().filter_map(|s| s.as_loop()).collect();
    assert_eq!(inner.len(), 1, "{prog}");
}

#[test]
fn viterbi_jik_kinds() {
    let spec = spec_of(
        "\
rec: V(i,j) = Max{k}(V(k,j-1) * A(k,i) * B(i,j)) : [1<=j, j<T, i<N, k<N]
order: j i k
extent: N = 4
extent: T = 3
init: V(0,0) = 1
",
    );
    let prog = lower(&spec).unwrap();
    verify_rin(&prog, &spec).unwrap();
    let kinds: Vec<(String, LoopKind)> = prog.loops().iter().map(|l| (l.var.clone(), l.kind)).collect();
    assert_eq!(
        kinds,
        vec![
            ("j".to_string(), LoopKind::For),
            ("i".to_string(), LoopKind::Forall),
            ("k".to_string(), LoopKind::Forall)
        ]
    );
}

#[test]
fn verify_catches_moved_statement() {
    let spec = cholesky("ijk");
    let mut prog = lower(&spec).unwrap();
    // Move the accumulate statement in front of the markers at the top of
    // the i loop: its dependencies are no longer covered.
    fn find_accumulate(body: &mut Vec<RinStmt>) -> Option<MinimalFragment> {
        for idx in 0..body.len() {
            match &mut body[idx] {
                RinStmt::Assign(f) if f.lhs.tensor == "L1" && f.is_reduce() => {
                    let f = f.clone();
                    body.remove(idx);
                    return Some(f);
                }
                RinStmt::Loop(l) => {
                    if let Some(f) = find_accumulate(&mut l.body) {
                        return Some(f);
                    }
                }
                _ => {}
            }
        }
        None
    }
    let frag = find_accumulate(&mut prog.body).unwrap();
    prog.body.insert(0, RinStmt::Assign(frag));
    assert!(verify_rin(&prog, &spec).is_err());
}

#[test]
fn placement_minimality_rescan() {
    // For the golden program, re-scan every fragment: all body lists that
    // come before its placement (in end-slot order) must be infeasible.
    let spec = cholesky("ijk");
    let frags = fragments::generate_and_normalize(&spec).unwrap();
    let dag = crate::depgraph::build_dag(&frags).unwrap();
    let order = crate::depgraph::topological_order(&dag).unwrap();
    let mut engine = PlacementEngine::new(&spec, frags).unwrap();
    for frag in order {
        let loc = loop {
            if let Some(loc) = engine.placement_location(&frag) {
                break loc;
            }
            let needed = [frag.lhs.tensor.clone()].into_iter().collect();
            engine.make_assumption(&needed);
        };
        // placement_location scans lists in program order, so the returned
        // location is minimal by construction; re-checking it stays stable.
        assert_eq!(engine.placement_location(&frag), Some(loc.clone()));
        assert!(engine.try_place_public(&frag));
    }
}
