use helmholtz_dtn::constants::{
    check_omega_conditions, derive_level, rho_formula, Calibration, CompressionModel, ConstantsBundle,
};
use proptest::prelude::*;

fn bundle(lhat0: f64, l0: f64, k: f64, w2: f64, c_phi: f64, beta: f64) -> ConstantsBundle {
    ConstantsBundle {
        lhat0,
        l0,
        big_k: k,
        b1: 1.0,
        b2: 2.0,
        omega2: w2,
        eps: 0.1,
        phi: CompressionModel::PowerLaw { c_phi, beta },
        exponent: 4.0 / 7.0,
        calibration: Calibration::Analytic,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn phi_decreases(c_phi in 1e-6f64..10.0, beta in 0.1f64..4.0, n in 1.0f64..1e4, dn in 1.0f64..100.0) {
        let m = CompressionModel::PowerLaw { c_phi, beta };
        prop_assert!(m.phi(n + dn) < m.phi(n));
    }

    #[test]
    fn level_constants_are_monotone_in_n(
        lhat0 in 1e-3f64..10.0, l0 in 1e-3f64..10.0, k in 1e-3f64..0.5, w2 in 0.01f64..4.0,
        n1 in 1usize..50, dn in 0usize..50,
    ) {
        let b = bundle(lhat0, l0, k, w2, 1e-2, 1.0);
        let a = derive_level(&b, n1).unwrap();
        let c = derive_level(&b, n1 + dn).unwrap();
        prop_assert!(c.stab >= a.stab && c.ctilde >= a.ctilde && c.eta <= a.eta);
        for lc in [&a, &c] {
            prop_assert!(lc.lhat > 0.0 && lc.lip > 0.0 && lc.stab > 0.0 && lc.ctilde > 0.0);
            prop_assert!(lc.lhat.is_finite() && lc.stab.is_finite() && lc.ctilde.is_finite());
            if lc.rho.is_some() {
                prop_assert!(8.0 * lc.ctilde * lc.eta < 1.0);
            }
        }
    }

    #[test]
    fn rho_identity(x in 0.0f64..0.125) {
        let s = (1.0 - 8.0 * x).sqrt();
        prop_assert!((1.0 + s - 4.0 * x - 0.5 * (s + 1.0).powi(2)).abs() <= 1e-12);
    }

    #[test]
    fn rho_is_positive_below_the_admissibility_limit(ct in 1e-3f64..1e3, lhat in 1e-3f64..1e3, frac in 0.0f64..1.0) {
        let eta = frac / (8.0 * ct);
        let rho = rho_formula(ct, lhat, eta).unwrap();
        let rho0 = rho_formula(ct, lhat, 0.0).unwrap();
        prop_assert!((rho0 - 0.5 / (ct * lhat).powi(2)).abs() <= 1e-12 * rho0);
        prop_assert!(rho > 0.0 && rho <= rho0);
    }

    #[test]
    fn frequency_conditions_imply_level_conditions(
        lhat0 in 1e-3f64..10.0, l0 in 1e-3f64..10.0, k in 1e-3f64..0.3, w2 in 0.01f64..4.0,
        c_phi in 1e-12f64..1e-2, beta in 0.5f64..3.0, kc in 1usize..5, f in 2usize..4,
    ) {
        let b = bundle(lhat0, l0, k, w2, c_phi, beta);
        let n = kc * kc;
        let oc = check_omega_conditions(&b, n, n * f * f).unwrap();
        prop_assert!(oc.implication_holds(), "{oc:?}");
    }
}
