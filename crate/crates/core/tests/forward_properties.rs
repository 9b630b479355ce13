use std::sync::Arc;

use helmholtz_dtn::domain::{make_uniform_partition, Bounds, Grid, PwcField};
use helmholtz_dtn::forward::{build_boundary_weights, spectrum_guard, ForwardModel};
use helmholtz_dtn::verify::audit_alessandrini;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn field(m: usize, k: usize, coeffs: Vec<f64>) -> PwcField {
    let g = Arc::new(Grid::new(m).unwrap());
    let p = Arc::new(make_uniform_partition(&g, k).unwrap());
    PwcField::new(p, coeffs, Bounds::new(1.0, 2.0).unwrap()).unwrap()
}

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0f64..=2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dtn_is_symmetric(c in coeffs(4), w2 in 0.01f64..9.0) {
        let f = field(9, 2, c);
        let model = ForwardModel::new(f.partition().grid().clone(), w2);
        let dtn = model.dtn(&f).unwrap();
        prop_assert!(dtn.asymmetry() < 1e-12);
    }

    #[test]
    fn alessandrini_identity(a in coeffs(4), b in coeffs(4), seed in 0u64..1000) {
        let (f1, f2) = (field(9, 2, a), field(9, 2, b));
        let model = ForwardModel::new(f1.partition().grid().clone(), 5.0);
        let audit = audit_alessandrini(&model, &f1, &f2, 4, seed).unwrap();
        prop_assert!(audit.max_defect <= 1e-9, "{}", audit.max_defect);
    }

    #[test]
    fn dtn_depends_continuously_on_the_coefficient(c in coeffs(4), j in 0usize..4) {
        let f = field(9, 2, c.clone());
        let mut bumped = c;
        bumped[j] = if bumped[j] < 1.5 { bumped[j] + 1e-6 } else { bumped[j] - 1e-6 };
        let g = f.with_coeffs(bumped).unwrap();
        let model = ForwardModel::new(f.partition().grid().clone(), 3.0);
        let d = (model.dtn(&f).unwrap().lambda - model.dtn(&g).unwrap().lambda).amax();
        prop_assert!(d <= 1e-5, "{d}");
    }

    #[test]
    fn guard_admissibility_survives_narrower_bounds(
        w2 in 0.1f64..60.0,
        b1 in 0.5f64..2.0,
        width in 0.1f64..2.0,
        s in 0.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        let b2 = b1 + width;
        if spectrum_guard(w2, b1, b2).is_ok() {
            let lo = b1 + s * width;
            let hi = lo + t * (b2 - lo);
            if hi > lo {
                prop_assert!(spectrum_guard(w2, lo, hi).is_ok());
            }
        }
    }
}

#[test]
fn boundary_weights_are_spd_and_dual() {
    for m in [5, 9, 17] {
        let g = Grid::new(m).unwrap();
        let w = build_boundary_weights(&g);
        let nb = w.nb();
        for a in [&w.wplus, &w.wminus] {
            assert!((a - a.transpose()).amax() < 1e-12);
            assert!(a.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        }
        // inverse to each other under the boundary mass h_b I
        let prod = &w.wplus * &w.wminus / (w.hb() * w.hb());
        assert!((prod - DMatrix::<f64>::identity(nb, nb)).amax() < 1e-10);
        let sq = &w.wminus_sqrt * &w.wminus_sqrt;
        assert!((sq - &w.wminus).amax() < 1e-12);
    }
}
