use super::*;
use proptest::prelude::*;

#[test]
fn parses_cholesky_recurrence() {
    let spec = parse_program(
        "rec: L(i,j) = (A(i,j)-Sum{k}(L(i,k)*L(j,k)))/L(j,j) : [k<j,j<i]\norder: i j k\nextent: N = 8\n",
    )
    .unwrap();
    let rec = &spec.recurrences[0];
    assert_eq!(rec.lhs.to_string(), "L(i,j)");
    let cs: Vec<String> = rec.constraints.iter().map(|c| c.to_string()).collect();
    assert_eq!(cs, vec!["k<j", "j<i"]);
    // The reduction carries explicit bounds resolved from the constraints.
    let has_bounded_reduction = match &rec.rhs {
        ScalarExpr::Binary { left, .. } => match left.as_ref() {
            ScalarExpr::Binary { right, .. } => matches!(
                right.as_ref(),
                ScalarExpr::Reduction { lower, upper, .. }
                    if lower == &IndexExpr::constant(0) && upper == &IndexExpr::var("j")
            ),
            _ => false,
        },
        _ => false,
    };
    assert!(has_bounded_reduction, "got {}", rec.rhs);
}

#[test]
fn parses_fibonacci_offsets() {
    let spec = parse_program("rec: F(i) = F(i-1) + F(i-2) : [2<=i, i<N]\norder: i\nextent: N = 11\n").unwrap();
    let rec = &spec.recurrences[0];
    let accesses: Vec<String> = rec.rhs.accesses().iter().map(|a| a.to_string()).collect();
    assert_eq!(accesses, vec!["F(i-1)", "F(i-2)"]);
    let cs: Vec<String> = rec.constraints.iter().map(|c| c.to_string()).collect();
    assert_eq!(cs, vec!["i>=2", "i<N"]);
}

#[test]
fn parses_identity() {
    let spec = parse_program("rec: X(i) = X(i) : [i<N]\norder: i\nextent: N = 4\n").unwrap();
    assert_eq!(spec.recurrences[0].lhs, spec.recurrences[0].rhs.accesses()[0].clone());
}

#[test]
fn syntax_error_reports_position() {
    let err = parse_program("rec: L(i,j = A(i,j) : [i<N]\norder: i j\nextent: N = 4\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 1"), "{msg}");
    assert!(msg.contains("col"), "{msg}");
}

#[test]
fn explicit_reduction_bounds_materialize() {
    let spec = parse_program("rec: S(i) = Sum{k=0:i}(A(k)) : [i<N]\norder: i k\nextent: N = 8\n").unwrap();
    let cs: Vec<String> = spec.recurrences[0].constraints.iter().map(|c| c.to_string()).collect();
    assert!(cs.contains(&"k<i".to_string()), "{cs:?}");
}

#[test]
fn gt_canonicalizes_to_lt() {
    let spec = parse_program("rec: X(i) = Y(j) : [j>i, j<N, i<N]\norder: i j\nextent: N = 4\n").unwrap();
    let cs: Vec<String> = spec.recurrences[0].constraints.iter().map(|c| c.to_string()).collect();
    assert_eq!(cs[0], "i<j");
}

#[test]
fn validate_accepts_worked_examples() {
    // Cholesky, triangular solve, Viterbi, Floyd-Warshall, Fibonacci,
    // running sum.
    let programs = [
        "rec: L(i,j) = (A(i,j)-Sum{k}(L(i,k)*L(j,k)))/L(j,j) : [k<j,j<i]\nrec: L(i,j) = sqrt(A(i,j)-Sum{k}(L(i,k)*L(j,k))) : [k<j,j=i]\norder: i j k\nextent: N = 8\n",
        "rec: X(i) = (B(i) - Sum{j}(L(i,j)*X(j))) / L(i,i) : [j<i, i<N]\norder: i j\nextent: N = 8\n",
        "rec: V(i,j) = Max{k}(V(k,j-1)*A(k,i)*B(i,j)) : [1<=j, j<T, i<N, k<N]\norder: j i k\nextent: N = 4\nextent: T = 3\n",
        "rec: SP(i,j,k) = min(SP(i,j,k-1), SP(i,k-1,k-1)+SP(k-1,j,k-1)) : [i<N, j<N, 1<=k, k<T]\norder: k i j\nextent: N = 4\nextent: T = 5\n",
        "rec: F(i) = F(i-1) + F(i-2) : [2<=i, i<N]\norder: i\nextent: N = 11\n",
        "rec: S(i) = S(i-1) + A(i) : [1<=i, i<N]\norder: i\nextent: N = 8\n",
    ];
    for p in programs {
        validate(parse_program(p).unwrap()).unwrap_or_else(|e| panic!("{p}: {e}"));
    }
}

#[test]
fn validate_rejects_overlap_unbounded_and_ranks() {
    let overlap = "rec: L(i,j) = A(i,j) : [j<i]\nrec: L(i,j) = B(i,j) : [j<i]\norder: i j\nextent: N = 4\n";
    assert!(matches!(
        validate(parse_program(overlap).unwrap()),
        Err(ValidateError::OverlappingRegions(..))
    ));

    let unbounded = "rec: X(i) = Y(m) : [i<N]\norder: i m\nextent: N = 4\nextent: T = 9\n";
    assert!(matches!(
        validate(parse_program(unbounded).unwrap()),
        Err(ValidateError::Unbounded { .. })
    ));

    let ranks = "rec: X(i) = X(i,i) : [i<N]\norder: i\nextent: N = 4\n";
    assert!(matches!(
        validate(parse_program(ranks).unwrap()),
        Err(ValidateError::RankMismatch { .. })
    ));

    let missing = "rec: X(i) = Y(j) : [i<N, j<N]\norder: i\nextent: N = 4\n";
    assert!(matches!(
        validate(parse_program(missing).unwrap()),
        Err(ValidateError::OrderingMissing(_))
    ));

    let const_lhs = "rec: X(0) = Y(i) : [i<N]\norder: i\nextent: N = 4\n";
    assert!(matches!(
        validate(parse_program(const_lhs).unwrap()),
        Err(ValidateError::ConstantLhsIndex(_))
    ));
}

#[test]
fn disjoint_regions_by_offset_accepted() {
    let text = "rec: X(i) = A(i) : [i<5, i<N]\nrec: X(i) = B(i) : [5<=i, i<N]\norder: i\nextent: N = 9\n";
    validate(parse_program(text).unwrap()).unwrap();
}

#[test]
fn full_stanza_round_trip() {
    let text = "\
rec: L(i,j) = (A(i,j) - Sum{k=0:j}(L(i,k)*L(j,k)))/L(j,j) : [k<j, j<i]
order: i j k
parallel: k
timestep: L j
storage: A = Dense(0) Compressed(1)
storage: L = Dense(0) Compressed(1)
mask: L = Dense(1) Compressed(0)
extent: N = 100
init: L(0,0) = 1.5
";
    let spec = parse_program(text).unwrap();
    let printed = spec.to_string();
    let again = parse_program(&printed).unwrap();
    assert_eq!(spec, again, "print/parse round-trip:\n{printed}");
}

// Random expression trees and constraint lists round-trip through the
// printer.
fn arb_index_expr() -> impl Strategy<Value = IndexExpr> {
    prop_oneof![
        (0..3usize, -2i64..3).prop_map(|(v, off)| IndexExpr::var_off(["i", "j", "k"][v], off)),
        (0i64..5).prop_map(IndexExpr::constant),
    ]
}

fn arb_expr() -> impl Strategy<Value = ScalarExpr> {
    let leaf = prop_oneof![
        (0..3usize, proptest::collection::vec(arb_index_expr(), 1..3))
            .prop_map(|(t, idx)| ScalarExpr::access(["A", "B", "C"][t], idx)),
        (0..100i64).prop_map(|c| ScalarExpr::Constant(c as f64)),
    ];
    leaf.prop_recursive(3, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), 0..6usize).prop_map(|(l, r, op)| {
                let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Min, BinaryOp::Max][op];
                ScalarExpr::binary(op, l, r)
            }),
            inner.clone().prop_map(|c| ScalarExpr::Unary { op: UnaryOp::Sqrt, child: Box::new(c) }),
            inner.prop_map(|c| ScalarExpr::Unary { op: UnaryOp::Neg, child: Box::new(c) }),
        ]
    })
}

proptest! {
    #[test]
    fn expression_print_parse_round_trip(expr in arb_expr()) {
        let text = format!("rec: T(i) = {expr} : [i<N]\norder: i j k\nextent: N = 4\n");
        if let Ok(spec) = parse_program(&text) {
            let printed = format!("rec: {}\norder: i j k\nextent: N = 4\n", spec.recurrences[0]);
            let again = parse_program(&printed).unwrap();
            prop_assert_eq!(&spec.recurrences[0], &again.recurrences[0]);
        }
    }
}
