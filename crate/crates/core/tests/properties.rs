use dera_core::estimation::*;
use dera_core::model::*;
use dera_core::system::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn kalman(m: &LinearModel, cfg: &FilterConfig, x0: &DVector<f64>) -> (Vec<DVector<f64>>, DMatrix<f64>) {
    let q = DMatrix::from_diagonal(&cfg.process_noise);
    let r = DMatrix::from_diagonal(&cfg.measurement_noise);
    let mut x = x0.clone();
    let mut p = DMatrix::from_diagonal(&cfg.initial_covariance);
    let mut out = Vec::new();
    for (k, obs) in m.data.iter().enumerate() {
        if k > 0 {
            x = &m.f * x;
            p = &m.f * p * m.f.transpose() + &q;
        }
        let y = DVector::from_iterator(obs.len(), obs.iter().map(|v| v.unwrap()));
        let s = &m.h * &p * m.h.transpose() + &r;
        let g = &p * m.h.transpose() * s.try_inverse().unwrap();
        x += &g * (y - &m.h * &x);
        p = (DMatrix::identity(x.len(), x.len()) - &g * &m.h) * p;
        out.push(x.clone());
    }
    (out, p)
}

fn plant(f: [f64; 4], h: [f64; 2], ys: &[f64]) -> LinearModel {
    LinearModel {
        f: DMatrix::from_row_slice(2, 2, &f),
        h: DMatrix::from_row_slice(1, 2, &h),
        data: ys.iter().map(|y| vec![Some(*y)]).collect(),
        dt: 0.1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn filters_match_kalman_on_linear_plants(
        f in prop::array::uniform4(-0.6f64..0.6),
        h in prop::array::uniform2(0.2f64..1.5),
        ys in prop::collection::vec(-1.0f64..1.0, 5..40),
        q in 1e-4f64..1e-1,
        r in 1e-3f64..1.0,
    ) {
        let m = plant(f, h, &ys);
        let init = DVector::from_vec(vec![0.1, -0.1]);
        let mut cfg = FilterConfig::defaults(&init, 2, 1);
        cfg.process_noise = DVector::from_vec(vec![q, 2.0 * q]);
        cfg.measurement_noise = DVector::from_vec(vec![r]);
        cfg.initial_covariance = DVector::from_vec(vec![1.0, 0.5]);
        let (expect, p) = kalman(&m, &cfg, &init);
        for res in [ekf_run(&m, &cfg, &init).unwrap(), ukf_run(&m, &cfg, &init).unwrap()] {
            for (a, b) in res.estimates.iter().zip(&expect) {
                prop_assert!((a - b).amax() < 1e-8 * (1.0 + b.amax()));
            }
            let c = &res.final_covariance;
            prop_assert!((c - c.transpose()).amax() < 1e-12);
            prop_assert!((c - &p).amax() < 1e-8);
            prop_assert!(c.clone().cholesky().is_some());
        }
    }

    #[test]
    fn analytic_jacobian_matches_ad(
        dx in prop::collection::vec(-0.3f64..0.3, 10),
        scale in prop::collection::vec(0.5f64..1.5, 11),
        v in 0.6f64..1.1,
        freq in 0.98f64..1.02,
    ) {
        let spec = AugmentedSpec::preset(Preset::Case2Calibration, MeasurementSet::Vpq);
        let params = DeraParameters::default();
        let sm = Smoothing::default();
        let (x, _) = equilibrium(&DeraInputs::default(), &params, spec.flags, &sm, &EquilibriumOptions::default()).unwrap();
        let sys = DeraSystem::new(spec, params, x, sm);
        let ns = sys.spec.states.len();
        let mut z = sys.pack(&x, &params);
        for i in 0..z.len() {
            if i < ns { z[i] += dx[i]; } else { z[i] *= scale[i - ns]; }
        }
        let u = DeraInputs { v, freq, ..DeraInputs::default() };
        let a = analytic_jacobian(&sys, &z, &u, Some(1e-6)).unwrap();
        let b = sys.field_jacobian(&z, &u, Some(1e-6)).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            prop_assert!((p - q).abs() <= 1e-6 * q.abs().max(1e-12));
        }
    }
}
