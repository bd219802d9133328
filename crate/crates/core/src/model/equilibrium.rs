use nalgebra::{DMatrix, DVector};

use crate::ad::{Dual, Scalar};
use crate::error::{Error, Result};

use super::dynamics::rhs_generic;
use super::{DeraInputs, DeraParameters, DeraState, FlagConfig, Smoothing, StateId, N_STATES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumOptions {
    /// Set `v_ref0` to the filtered voltage at the solution.
    pub tie_vref: bool,
    pub max_iter: usize,
    /// Stop when every derivative is below this magnitude.
    pub tol: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            tie_vref: true,
            max_iter: 100,
            tol: 1e-13,
        }
    }
}

/// States that can move under `flags`; the rest keep their initial values.
fn moving_states(flags: FlagConfig) -> Vec<usize> {
    StateId::ALL
        .iter()
        .filter(|s| !flags.is_frozen(**s) && !(**s == StateId::X8 && !flags.fflag))
        .map(|s| s.index())
        .collect()
}

/// Damped Newton solve of `rhs = 0`. Returns the fixed point and the inputs
/// actually used (with `v_ref0` adjusted when `tie_vref` is set).
pub fn equilibrium(
    u: &DeraInputs,
    p: &DeraParameters,
    flags: FlagConfig,
    sm: &Smoothing,
    opts: &EquilibriumOptions,
) -> Result<(DeraState, DeraInputs)> {
    u.validate()?;
    p.validate()?;
    sm.validate()?;
    let mut u = *u;
    let v = u.v.max(0.01);
    let mut x = [
        u.v,
        u.p_ref,
        u.q_ref / v,
        u.q_ref / v,
        1.0,
        u.freq,
        u.p_ref,
        u.p_ref,
        u.p_ref,
        u.p_ref / v,
    ];
    let vars = moving_states(flags);
    let pa = p.to_array();
    let pd = pa.map(Dual::cst);
    let sm = Smoothing { floor: None, ..*sm };

    let eval = |x: &[f64; N_STATES], u: &mut DeraInputs| {
        if opts.tie_vref {
            u.v_ref0 = x[0];
        }
        rhs_generic(x, &pa, u, flags, &sm)
    };
    let resid = |f: &[f64; N_STATES]| vars.iter().map(|&i| f[i].abs()).fold(0.0, f64::max);

    let mut f = eval(&x, &mut u);
    for _ in 0..opts.max_iter {
        let r = resid(&f);
        if !r.is_finite() {
            break;
        }
        if r < opts.tol {
            return Ok((DeraState(x), u));
        }
        let n = vars.len();
        let mut jac = DMatrix::zeros(n, n);
        for (c, &j) in vars.iter().enumerate() {
            let mut xd = x.map(Dual::cst);
            xd[j].d = 1.0;
            let d = rhs_generic(&xd, &pd, &u, flags, &sm);
            for (r, &i) in vars.iter().enumerate() {
                jac[(r, c)] = d[i].d;
            }
        }
        let rhs_vec = DVector::from_iterator(n, vars.iter().map(|&i| -f[i]));
        let step = jac
            .lu()
            .solve(&rhs_vec)
            .ok_or_else(|| Error::NumericalFault {
                point: 0,
                reason: "singular Jacobian in equilibrium solve".into(),
            })?;
        let mut alpha = 1.0;
        loop {
            let mut trial = x;
            for (k, &i) in vars.iter().enumerate() {
                trial[i] += alpha * step[k];
            }
            let mut ut = u;
            let ft = eval(&trial, &mut ut);
            let rt = resid(&ft);
            if rt.is_finite() && (rt < r || alpha < 1e-6) {
                x = trial;
                u = ut;
                f = ft;
                break;
            }
            alpha *= 0.5;
        }
    }
    let r = resid(&f);
    if r < opts.tol.max(1e-10) {
        return Ok((DeraState(x), u));
    }
    Err(Error::NumericalFault {
        point: 0,
        reason: format!("equilibrium solve did not converge, residual {r:e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rhs;

    #[test]
    fn fixed_point_for_both_presets() {
        let p = DeraParameters::default();
        let sm = Smoothing::default();
        for flags in [FlagConfig::CASE1, FlagConfig::CASE2] {
            let (x, u) = equilibrium(
                &DeraInputs::default(),
                &p,
                flags,
                &sm,
                &EquilibriumOptions::default(),
            )
            .unwrap();
            let dx = rhs(&x, &u, &p, flags, &sm).unwrap();
            assert!(dx.0.iter().all(|d| d.abs() < 1e-8), "{flags}: {dx:?}");
            assert_eq!(u.v_ref0, x[StateId::X1]);
        }
    }

    #[test]
    fn reactive_power_matches_reference() {
        let p = DeraParameters::default();
        let (x, u) = equilibrium(
            &DeraInputs::default(),
            &p,
            FlagConfig::CASE1,
            &Smoothing::default(),
            &EquilibriumOptions::default(),
        )
        .unwrap();
        let y = crate::model::outputs(&x, &u, &p);
        assert!((y.q - 0.2).abs() < 2e-3, "{y:?}");
        assert!((y.p - 0.5).abs() < 1e-3, "{y:?}");
    }
}
