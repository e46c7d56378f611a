//! Property tests for the expression language and the dual-number engine.

use proptest::prelude::*;

use noether_dt_core::diff::{directional_derivative, fd_derivative, Dual, NumError, Scalar};
use noether_dt_core::expr::{parse, BinOp, Env, Expr, Func};

fn arb_expr() -> impl Strategy<Value = Expr> {
    // Negative literals are excluded: the printer would emit `-c`, which
    // reparses as negation of a literal, a different (equivalent) tree.
    let leaf = prop_oneof![
        (0.0f64..100.0).prop_map(Expr::Num),
        prop_oneof![
            Just("x1".to_string()),
            Just("x2".to_string()),
            Just("u1".to_string()),
            Just("k".to_string()),
            Just("long_name2".to_string()),
        ]
        .prop_map(Expr::Var),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (
                prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                    Just(BinOp::Pow),
                ],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
            (
                prop_oneof![
                    Just(Func::Sin),
                    Just(Func::Cos),
                    Just(Func::Exp),
                    Just(Func::Ln),
                    Just(Func::Sqrt),
                    Just(Func::Abs),
                ],
                inner
            )
                .prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
        ]
    })
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(tree in arb_expr()) {
        let printed = tree.to_string();
        let reparsed = parse(&printed).expect("printed tree parses");
        prop_assert_eq!(reparsed, tree);
    }

    #[test]
    fn zero_seed_duals_match_plain_evaluation(
        tree in arb_expr(),
        vals in proptest::collection::vec(-3.0f64..3.0, 5),
    ) {
        let names = ["x1", "x2", "u1", "k", "long_name2"];
        let mut env = Env::new();
        let mut env_d: Env<Dual<f64>> = Env::new();
        for (name, &v) in names.iter().zip(&vals) {
            env.bind(*name, v);
            env_d.bind(*name, Dual::constant(v));
        }
        match tree.eval(&env) {
            Ok(plain) if plain.is_finite() => {
                let dual = tree.eval(&env_d).expect("plain path succeeded");
                prop_assert_eq!(dual.re, plain);
                prop_assert_eq!(dual.im, 0.0);
            }
            _ => {} // domain errors and overflow are out of scope here
        }
    }
}

/// Random polynomial in three variables, as (expression, degree bound).
fn arb_polynomial() -> impl Strategy<Value = Expr> {
    let term = (-5.0f64..5.0, 0u32..4, 0u32..4, 0u32..4)
        .prop_map(|(c, p1, p2, p3)| format!("({c})*x1^{p1}*x2^{p2}*x3^{p3}"));
    proptest::collection::vec(term, 1..6)
        .prop_map(|terms| parse(&terms.join(" + ")).expect("generated polynomial parses"))
}

proptest! {
    #[test]
    fn dual_derivative_matches_central_differences_on_polynomials(
        poly in arb_polynomial(),
        point in proptest::collection::vec(-2.0f64..2.0, 3),
        direction in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let eval_at = |v: &[f64]| -> Result<f64, NumError> {
            let mut env = Env::new();
            env.bind("x1", v[0]).bind("x2", v[1]).bind("x3", v[2]);
            poly.eval(&env).map_err(|e| match e {
                noether_dt_core::expr::EvalError::Domain(d) => d,
                other => panic!("unexpected {other}"),
            })
        };
        let eval_dual = |v: &[Dual<f64>]| {
            let mut env = Env::new();
            env.bind("x1", v[0]).bind("x2", v[1]).bind("x3", v[2]);
            poly.eval(&env)
        };
        let lifted: Vec<f64> = point.clone();
        let dual = directional_derivative(eval_dual, &lifted, &direction);
        let dual = match dual { Ok(v) => v, Err(_) => return Ok(()) };
        let fd = fd_derivative(eval_at, &point, &direction, 1e-6).unwrap();
        prop_assert!((dual - fd).abs() <= 1e-6 * (1.0 + dual.abs()),
            "dual {dual} vs fd {fd}");
    }

    #[test]
    fn quadratics_differentiate_exactly(
        a in -4.0f64..4.0,
        b in -4.0f64..4.0,
        c in -4.0f64..4.0,
        x in -2.0f64..2.0,
    ) {
        // For degree <= 2 the dual pass is exact arithmetic on the same
        // operations as the analytic derivative.
        let f = |v: &[Dual<f64>]| -> Result<Dual<f64>, NumError> {
            let (ad, bd, cd) = (Dual::from_f64(a), Dual::from_f64(b), Dual::from_f64(c));
            Ok(ad * v[0] * v[0] + bd * v[0] + cd)
        };
        let d = directional_derivative(f, &[x], &[1.0]).unwrap();
        prop_assert_eq!(d, a * x + a * x + b);
    }
}
