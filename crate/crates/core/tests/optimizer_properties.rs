use std::sync::Arc;

use helmholtz_dtn::constants::{derive_level, Calibration, CompressionModel, ConstantsBundle};
use helmholtz_dtn::domain::{l2_norm, make_uniform_partition, refine_partition, Bounds, Grid, PwcField};
use helmholtz_dtn::forward::ForwardModel;
use helmholtz_dtn::optimizer::{run_level, step_scalars, LevelSettings, StopReason};
use proptest::prelude::*;

fn bundle(w2: f64) -> ConstantsBundle {
    ConstantsBundle {
        lhat0: 1.0,
        l0: 1e-3,
        big_k: 0.01,
        b1: 1.0,
        b2: 2.0,
        omega2: w2,
        eps: 0.1,
        phi: CompressionModel::PowerLaw { c_phi: 1e-4, beta: 2.0 },
        exponent: 4.0 / 7.0,
        calibration: Calibration::Analytic,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Accepted steps have positive `u` and `μ`, iterates stay in the box,
    /// the history is consistent with the step formula, and the stopping
    /// index is the first one below the discrepancy level.
    #[test]
    fn level_run_invariants(truth in prop::collection::vec(1.0f64..=2.0, 4), start in 1.0f64..=2.0, floor in 1e-6f64..1e-4) {
        let g = Arc::new(Grid::new(9).unwrap());
        let p = Arc::new(make_uniform_partition(&g, 2).unwrap());
        let bounds = Bounds::new(1.0, 2.0).unwrap();
        let model = ForwardModel::new(g, 5.0);
        let t = PwcField::new(p.clone(), truth, bounds).unwrap();
        let data = model.dtn(&t).unwrap();
        let lc = derive_level(&bundle(5.0), 4).unwrap().with_eta(0.0);
        let settings = LevelSettings { max_iter: 30, eps: 0.1, residual_floor: floor };
        let run = run_level(&model, PwcField::constant(p, start, bounds), &lc, &data, &settings, Some(&t), 0).unwrap();
        prop_assert!(run.final_field.is_admissible());
        // records before the last one are the accepted steps
        for h in &run.history[..run.k_n] {
            prop_assert!(h.u > 0.0 && h.mu > 0.0);
            prop_assert!((h.mu - h.u * h.r / (h.t * h.t)).abs() <= 1e-12 * h.mu);
            prop_assert_eq!(step_scalars(lc.ctilde, lc.lip, lc.eta, h.r, h.t).u, h.u);
        }
        if run.stop == StopReason::Discrepancy {
            prop_assert!(run.final_residual <= run.threshold);
            let rs = run.residuals();
            prop_assert!(rs[..rs.len() - 1].iter().all(|&r| r > run.threshold));
        }
        prop_assert_eq!(run.k_n + 1, run.history.len());
    }

    #[test]
    fn embedding_preserves_the_l2_norm(c in prop::collection::vec(1.0f64..=2.0, 4), factor in 2usize..4) {
        let g = Arc::new(Grid::new(13).unwrap());
        let p = Arc::new(make_uniform_partition(&g, 2).unwrap());
        let fine = Arc::new(refine_partition(&p, factor).unwrap());
        let f = PwcField::new(p, c, Bounds::new(1.0, 2.0).unwrap()).unwrap();
        let e = f.embed(&fine).unwrap();
        prop_assert!((l2_norm(&e) - l2_norm(&f)).abs() <= 1e-14 * l2_norm(&f));
    }
}
