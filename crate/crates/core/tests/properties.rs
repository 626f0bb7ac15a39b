use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use phforge::corpus::{self, WaveParams};
use phforge::decomp::{
    compute_m, compute_m_co_energy, decompose, general_correction, DecomposeOptions,
    GeneralStrategy, Policy, Ray,
};
use phforge::dynamics::discrete_gradient;
use phforge::expr::{parse, BinaryOp, Binding, Expr, UnaryOp, Var};
use phforge::linalg::{max_abs, sym_part};
use phforge::model::{load_system, NewtonConfig};
use phforge::quadrature::QuadratureConfig;

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-4.0f64..4.0).prop_map(|c| Expr::constant((c * 8.0).round() / 8.0)),
        (0usize..3).prop_map(|i| Expr::var(Var::state(i))),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec![UnaryOp::Neg, UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Exp, UnaryOp::Tanh]))
                .prop_map(|(a, op)| Expr::unary(op, a)),
            (
                inner.clone(),
                inner.clone(),
                prop::sample::select(vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div])
            )
                .prop_map(|(a, b, op)| Expr::binary(op, a, b)),
            (inner, 0u32..4).prop_map(|(a, k)| Expr::binary(BinaryOp::Pow, a, Expr::constant(k as f64))),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printed_expressions_reparse_to_the_same_tree(e in arb_expr()) {
        let e = e.simplify();
        let text = e.to_string();
        let back = parse(&text, 3, 0).unwrap();
        prop_assert_eq!(back, e, "{}", text);
    }

    #[test]
    fn derivatives_match_central_differences(e in arb_expr(), z in point(), j in 0usize..3) {
        let b = Binding::state(&z);
        let Ok(value) = e.eval(&b) else { return Ok(()) };
        let d = e.differentiate(Var::state(j)).unwrap();
        let Ok(sym) = d.eval(&b) else { return Ok(()) };
        prop_assume!(value.abs() < 1e6 && sym.abs() < 1e6);
        let h = 1e-6;
        let mut zp = z.clone();
        zp[j] += h;
        let mut zm = z.clone();
        zm[j] -= h;
        let (Ok(fp), Ok(fm)) = (e.eval(&Binding::state(&zp)), e.eval(&Binding::state(&zm))) else {
            return Ok(());
        };
        let fd = (fp - fm) / (2.0 * h);
        // differencing noise grows with the magnitudes involved
        let noise = 1e-9 * (1.0 + value.abs() + fp.abs() + fm.abs()) / h;
        prop_assert!((sym - fd).abs() <= 1e-5 * (1.0 + sym.abs()) + noise, "{} at {:?}: {} vs {}", e, z, sym, fd);
    }

    #[test]
    fn discrete_gradient_identity_on_rigid_bodies(
        i in prop::collection::vec(0.2f64..5.0, 3),
        z1 in point(),
        z2 in point(),
    ) {
        let s = corpus::build_rigid_body(i[0], i[1], i[2]).unwrap().system().unwrap();
        let g = discrete_gradient(&s, &z1, &z2).unwrap();
        let h1 = s.eval_hamiltonian(&z1).unwrap();
        let h2 = s.eval_hamiltonian(&z2).unwrap();
        let dz = DVector::from_column_slice(&z2) - DVector::from_column_slice(&z1);
        prop_assert!((g.dot(&dz) - (h2 - h1)).abs() <= 1e-13 * (1.0 + h1.abs() + h2.abs()));
    }

    #[test]
    fn rigid_body_decomposition_invariants(
        i in prop::collection::vec(0.2f64..5.0, 3),
        z in point(),
    ) {
        let s = corpus::build_rigid_body(i[0], i[1], i[2]).unwrap().system().unwrap();
        let d = decompose(&s, &z, &DecomposeOptions::default()).unwrap();
        let fnorm = d.f.norm();
        prop_assert!(d.residuals.recon <= 1e-8 * (1.0 + fnorm));
        prop_assert_eq!(max_abs(&(&d.j + d.j.transpose())), 0.0);
        prop_assert_eq!(max_abs(&(&d.r - d.r.transpose())), 0.0);
        let m_h_eta = sym_part(&d.m) * &d.eta;
        prop_assert!(d.residuals.p_eta <= 1e-9 * (1.0 + m_h_eta.norm()));
        prop_assert!(d.residuals.psd >= -1e-9);
        let dissipation = d.eta.dot(&(&d.r * &d.eta));
        prop_assert!((dissipation + d.eta.dot(&d.f)).abs() <= 1e-9 * (1.0 + fnorm * d.eta.norm()));
    }

    #[test]
    fn nonlinear_dissipative_system_invariants(z in prop::collection::vec(-1.5f64..1.5, 2)) {
        // ηᵀf = −z1⁴ − z2² − z1²z2² ≤ 0, while M_H is indefinite at most points
        let s = load_system(
            r#"{"name":"nl","n":2,"m":0,"H":"z1^2/2 + z2^2/2",
                "f":["z2 - z1^3","-z1 - z2 - z1^2*z2"]}"#,
        ).unwrap();
        for policy in [Policy::Auto, Policy::Canonical, Policy::EnergyAligned] {
            let Ok(d) = decompose(&s, &z, &DecomposeOptions::with_policy(policy)) else {
                // energy-aligned is undefined where ηᵀM_Hη vanishes
                prop_assert!(policy == Policy::EnergyAligned);
                continue;
            };
            prop_assert!(d.residuals.recon <= 1e-8 * (1.0 + d.f.norm()));
            prop_assert!(d.residuals.psd >= -1e-9, "{:?}: {}", policy, d.residuals.psd);
            let dissipation = d.eta.dot(&(&d.r * &d.eta));
            prop_assert!((dissipation + d.eta.dot(&d.f)).abs() <= 1e-9 * (1.0 + d.eta.norm_squared()));
        }
    }

    #[test]
    fn canonical_correction_matches_f_form(z in prop::collection::vec(-1.5f64..1.5, 2)) {
        let s = load_system(
            r#"{"name":"nl","n":2,"m":0,"H":"z1^2/2 + z1^4/4 + z2^2/2",
                "f":["z2 - z1","-z1 - z1^3 - z2^3"]}"#,
        ).unwrap();
        let m = compute_m_co_energy(&s, &z, &QuadratureConfig::default()).unwrap().m;
        let eta = s.eval_eta(&z).unwrap();
        prop_assume!(eta.norm() > 1e-3);
        let f = s.eval_f(&z).unwrap();
        prop_assert!((&f - &m * &eta).norm() <= 1e-10 * (1.0 + f.norm()));
        let c = general_correction(&m, &eta, &GeneralStrategy::Canonical, 1e-9).unwrap();
        let nn = eta.norm_squared();
        let expected = &eta * eta.transpose() * (f.dot(&eta) / (nn * nn));
        prop_assert!(max_abs(&(sym_part(&m) + sym_part(&c.p) - expected)) <= 1e-10);
    }

    #[test]
    fn auto_ray_reconstructs_with_nonlinear_co_energy(z in prop::collection::vec(-1.5f64..1.5, 2)) {
        let s = load_system(
            r#"{"name":"nl","n":2,"m":0,"H":"z1^2/2 + z1^4/4 + z2^2/2 + z2^4/4",
                "f":["z2 + z2^3 - z1 - z1^3","-z1 - z1^3 - z2 - z2*z1^2"]}"#,
        ).unwrap();
        let d = decompose(&s, &z, &DecomposeOptions::default()).unwrap();
        prop_assert!(d.ray != Ray::Auto);
        prop_assert!(d.residuals.recon <= 1e-8 * (1.0 + d.f.norm()));
        prop_assert!(d.residuals.psd >= -1e-9);
        prop_assert!(d.residuals.p_eta <= 1e-9 * (1.0 + d.m.norm() * d.eta.norm()));
    }

    #[test]
    fn quadrature_is_exact_for_constant_k(
        k in prop::collection::vec(-2.0f64..2.0, 4),
        nodes in 1usize..40,
        z in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let km = DMatrix::from_row_slice(2, 2, &k);
        let e = corpus::build_linear_kq(&km, &DMatrix::identity(2, 2)).unwrap();
        let s = e.system().unwrap();
        let q = QuadratureConfig { nodes, refinement: None };
        let m = compute_m(&s, &z, &q).unwrap().m;
        prop_assert!(max_abs(&(m - km)) <= 1e-14);
    }

    #[test]
    fn invert_eta_round_trips_on_wave(seed in 0u64..1000) {
        let e = corpus::build_wave_fd(&WaveParams { ncells: 4, ..WaveParams::default() }).unwrap();
        let s = e.system().unwrap();
        let z = phforge::model::sample_points(&e.sample_box, 1, seed).remove(0);
        let v = s.eval_eta(&z).unwrap();
        let back = s.invert_eta(v.as_slice(), &NewtonConfig::default()).unwrap();
        prop_assert!((back - DVector::from_column_slice(&z)).amax() <= 1e-10);
    }
}
