mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use common::{c, planar};
use malkin_core::forced::{fixed_point_index, GammaT};
use malkin_core::linalg::eigenvalues_by_modulus;
use malkin_core::malkin::{closed_form_m_example, find_zeros, MalkinConfig, MalkinProfile};
use malkin_core::odeint::{flow_with_sensitivity, IntegratorConfig};
use malkin_core::sysdef::expr::{BinOp, Func, Var};
use malkin_core::sysdef::{parse_expression, Expr, ExpressionSpec, Scope, SystemDef};
use nalgebra::DMatrix;
use proptest::prelude::*;

const PARAMS: [&str; 2] = ["alpha", "beta"];

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0.0f64..1e3).prop_map(Expr::Num),
        (1e-9f64..1e-3).prop_map(Expr::Num),
        Just(Expr::Var(Var::Time)),
        Just(Expr::Var(Var::Eps)),
        (0usize..3).prop_map(|i| Expr::Var(Var::State(i))),
        (0usize..2).prop_map(|j| Expr::Var(Var::Param(j))),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    let ops = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow];
    let funcs = [Func::Sin, Func::Cos, Func::Tan, Func::Exp, Func::Log, Func::Sqrt, Func::Abs];
    leaf().prop_recursive(5, 48, 2, move |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (prop::sample::select(ops.to_vec()), inner.clone(), inner.clone())
                .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
            (prop::sample::select(funcs.to_vec()), inner).prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
        ]
    })
}

fn test_system() -> SystemDef {
    SystemDef::from_expressions(&ExpressionSpec {
        name: "mixed".into(),
        dimension: 2,
        f: vec![
            "sin(x1) * x2^2 + exp(-x1 / 3) - alpha * x2".into(),
            "sqrt(1 + x1^2) * cos(x2) + log(2 + x2^2) - x1^3 / (1 + x2^2)".into(),
        ],
        g: vec!["cos(t) * x1 * x2".into(), "sin(2 * t) + eps * x1^2".into()],
        params: BTreeMap::from([("alpha".to_string(), 0.7)]),
        forcing_period: 2.0 * PI,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn display_reparses_to_same_tree(e in expr()) {
        let scope = Scope::forced(3, PARAMS.iter().map(|s| s.to_string()).collect());
        let text = e.display(&scope).to_string();
        let back = parse_expression(&text, &scope).unwrap();
        prop_assert_eq!(back, e, "text {}", text);
    }

    #[test]
    fn dual_jacobian_matches_finite_differences(
        x1 in -2.0f64..2.0,
        x2 in -2.0f64..2.0,
        t in 0.0f64..7.0,
        eps in 0.0f64..0.5,
    ) {
        let sys = test_system();
        let x = [x1, x2];
        let (mut out, mut jac, mut scratch) = ([0.0; 2], [0.0; 4], [0.0; 6]);
        sys.rhs_jacobian(t, &x, eps, &mut out, &mut jac, &mut scratch).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let (mut fp, mut fm, mut s) = ([0.0; 2], [0.0; 2], [0.0; 2]);
            sys.rhs(t, &xp, eps, &mut fp, &mut s).unwrap();
            sys.rhs(t, &xm, eps, &mut fm, &mut s).unwrap();
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                prop_assert!((fd - jac[i * 2 + k]).abs() <= 1e-6 * (1.0 + fd.abs()), "d{i}/dx{k}: {fd} vs {}", jac[i * 2 + k]);
            }
        }
    }

    #[test]
    fn gamma_is_sign_of_det_i_minus_d(entries in prop::array::uniform4(-3.0f64..3.0)) {
        let d = DMatrix::from_row_slice(2, 2, &entries);
        let det = (DMatrix::<f64>::identity(2, 2) - &d).determinant();
        prop_assume!(det.abs() > 1e-6);
        let expected = if det > 0.0 { 1 } else { -1 };
        prop_assert_eq!(fixed_point_index(&eigenvalues_by_modulus(&d)), GammaT::Value(expected));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_index_sum_vanishes(coeffs in prop::array::uniform6(-1.0f64..1.0)) {
        let (a, b, cc) = (c(coeffs[0], coeffs[1]), c(coeffs[2], coeffs[3]), c(coeffs[4], coeffs[5]));
        let m = |th: f64| closed_form_m_example(a, b, cc, th);
        let n = 1024;
        let grid: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&th| m(th)).collect();
        let sup_norm = values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        prop_assume!(sup_norm > 1e-3);
        let profile = MalkinProfile { k: 1, period_min: 2.0 * PI, grid, values, sup_norm, zeros: Vec::new() };
        let profile = find_zeros(profile, |th| Ok(m(th)), &MalkinConfig::default()).unwrap();
        prop_assert_eq!(profile.index_sum(), 0);
        for z in &profile.zeros {
            prop_assert!(m(z.theta_star).abs() <= 1e-8 * sup_norm.max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flow_sensitivity_matches_finite_differences(
        coeffs in prop::array::uniform6(-1.0f64..1.0),
        x0 in prop::array::uniform2(-1.3f64..1.3),
        eps in 0.0f64..0.05,
    ) {
        let sys = planar(c(coeffs[0], coeffs[1]), c(coeffs[2], coeffs[3]), c(coeffs[4], coeffs[5]));
        let cfg = IntegratorConfig::with_tolerance(1e-12);
        let t1 = 2.0 * PI;
        let s = flow_with_sensitivity(&sys, eps, 0.0, &x0, t1, &cfg).unwrap().sensitivity;
        let h = 1e-6;
        for k in 0..2 {
            let (mut xp, mut xm) = (x0, x0);
            xp[k] += h;
            xm[k] -= h;
            let fp = flow_with_sensitivity(&sys, eps, 0.0, &xp, t1, &cfg).unwrap().endpoint;
            let fm = flow_with_sensitivity(&sys, eps, 0.0, &xm, t1, &cfg).unwrap().endpoint;
            let col_norm = s.column(k).norm();
            let err = ((0..2).map(|i| ((fp[i] - fm[i]) / (2.0 * h) - s[(i, k)]).powi(2)).sum::<f64>()).sqrt();
            prop_assert!(err <= 1e-5 * col_norm, "column {k}: error {err}, norm {col_norm}");
        }
    }
}
