use crate::ad::{floor_at, max_of, min_of, Scalar};
use crate::error::{Error, Result};
use crate::smoothing::{validate_sharpness, DEFAULT_SHARPNESS};

use super::logic::{current_limits_generic, voltage_trip_generic};
use super::{
    DeraInputs, DeraOutputs, DeraParameters, DeraState, FlagConfig, MeasurementSet, ParamId,
    StateId, N_PARAMS, N_STATES,
};

/// How the saturation and deadband blocks are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothing {
    pub sharpness: u32,
    /// Lower bound on smooth-operator slopes, applied only when first
    /// derivatives are being carried (Jacobian evaluation).
    pub floor: Option<f64>,
    /// Use the exact piecewise operators instead. Reference runs only.
    pub hard: bool,
}

impl Default for Smoothing {
    fn default() -> Self {
        Self {
            sharpness: DEFAULT_SHARPNESS,
            floor: None,
            hard: false,
        }
    }
}

impl Smoothing {
    pub fn with_floor(mut self, floor: Option<f64>) -> Self {
        self.floor = floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_sharpness(self.sharpness)?;
        if let Some(f) = self.floor {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::InvalidArgument(format!("derivative floor {f} is invalid")));
            }
        }
        Ok(())
    }

    fn sat<S: Scalar>(&self, x: S, lo: S, hi: S) -> S {
        if self.hard {
            return max_of(min_of(x, hi), lo);
        }
        // collapsed interval, e.g. no current headroom left
        if hi.value() - lo.value() <= 1e-12 {
            return S::cst(lo.value());
        }
        S::ssf(x, lo, hi, self.sharpness, self.floor)
    }

    fn db<S: Scalar>(&self, x: S, lo: S, hi: S) -> S {
        if self.hard {
            let v = x.value();
            return if v > hi.value() {
                x - hi
            } else if v < lo.value() {
                x - lo
            } else {
                S::cst(0.0)
            };
        }
        S::sdbf(x, lo, hi, self.sharpness, self.floor)
    }
}

/// Terminal voltage for source voltage `e` behind reactance `x_e`, with the
/// terminal voltage as the d-axis reference.
pub fn terminal_voltage<S: Scalar>(x4: S, x10: S, e: f64, x_e: S) -> S {
    let a = x_e * x10;
    let r = S::cst(e * e) - a * a;
    let root = if r.value() > 0.0 {
        r.sqrt()
    } else {
        S::cst(0.0)
    };
    x_e * x4 + root
}

/// State derivatives, generic over the number type. `p` is indexed by
/// [`ParamId::index`].
pub fn rhs_generic<S: Scalar>(
    x: &[S; N_STATES],
    p: &[S; N_PARAMS],
    u: &DeraInputs,
    flags: FlagConfig,
    sm: &Smoothing,
) -> [S; N_STATES] {
    use ParamId::*;
    let q = |id: ParamId| p[id.index()];
    let zero = S::cst(0.0);
    let mut dx = [zero; N_STATES];

    let vt = terminal_voltage(x[3], x[9], u.v, q(XE));
    let vf = floor_at(x[0], 0.01);
    let trip = if flags.vtripflag { x[4] } else { S::cst(1.0) };

    dx[0] = (vt - x[0]) / q(TRv);
    if !flags.is_frozen(StateId::X2) {
        dx[1] = (x[8] - x[1]) / q(TP);
    }

    let iqv = sm.db(-x[0] + u.v_ref0, q(Dbd1), q(Dbd2)) * q(KQv);
    let qterm = if flags.pflag {
        x[1] * q(Pfaref).tan()
    } else {
        S::cst(u.q_ref)
    };
    dx[2] = (qterm / vf - x[2]) / q(TIq);

    let iq_cmd = x[2] - sm.sat(iqv, q(IQl), q(IQh));
    let p_gen = sm.sat(x[8], q(PMin), q(PMax));
    let ip_cmd = p_gen / vf;

    let cl = current_limits_generic(flags.pqflag, ip_cmd, iq_cmd, q(IMax));
    let i_dmax = min_of(cl.i_dmax, q(IDmax));
    let i_dmin = max_of(cl.i_dmin, q(IDmin));
    let i_qmax = min_of(cl.i_qmax, q(IQmax));
    let i_qmin = max_of(cl.i_qmin, q(IQmin));

    dx[3] = (sm.sat(iq_cmd, i_qmin, i_qmax) * trip - x[3]) / q(TG);

    if flags.vtripflag {
        let mut plain = [0.0; N_PARAMS];
        for (d, s) in plain.iter_mut().zip(p.iter()) {
            *d = s.value();
        }
        let m_v = voltage_trip_generic(vt, u.trip_timer, &DeraParameters::from_array(&plain));
        dx[4] = (m_v - x[4]) / q(TV);
    }

    if flags.fflag {
        dx[5] = (-x[5] + u.freq) / q(TRf);
        let df = sm.db(-x[5] + u.f_ref, q(Fbd1), q(Fbd2));
        let droop = if df.value() >= 0.0 {
            q(DDn) * df
        } else {
            q(DUp) * df
        };
        let p_lim = sm.sat(droop + u.p_ref - x[1], q(FEmin), q(FEmax));
        let p_a = sm.sat(x[6] + q(KPg) * p_lim, q(PMin), q(PMax));
        dx[6] = q(KIg) * p_lim + q(KW) * (p_a - q(KPg) * p_lim - x[6]);
        // the ramp follows the controller output
        let ramp = (p_a - x[7]) / u.dt_input;
        dx[7] = sm.sat(ramp, q(DpMin), q(DpMax));
    }

    let p_ord = if flags.fflag {
        x[7]
    } else {
        S::cst(u.p_ref)
    };
    dx[8] = (p_ord - p_gen) / q(TPord);

    let id_target = sm.sat(ip_cmd * trip, i_dmin, i_dmax);
    dx[9] = sm.sat((id_target - x[9]) / q(TG), -q(Rrpwr), q(Rrpwr));

    dx
}

/// Plain-valued right-hand side with a finiteness check.
pub fn rhs(
    x: &DeraState,
    u: &DeraInputs,
    p: &DeraParameters,
    flags: FlagConfig,
    sm: &Smoothing,
) -> Result<DeraState> {
    let dx = rhs_generic(&x.0, &p.to_array(), u, flags, sm);
    check_finite(&dx)?;
    Ok(DeraState(dx))
}

pub(crate) fn check_finite(dx: &[f64; N_STATES]) -> Result<()> {
    match dx.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::SimulationFault {
            state: StateId::ALL[i].name().to_string(),
            step: None,
        }),
        None => Ok(()),
    }
}

/// Measured channels for the chosen set: `(V, P, Q)` or `(V, Id, Iq)`.
pub(crate) fn measure_generic<S: Scalar>(
    x: &[S; N_STATES],
    p: &[S; N_PARAMS],
    e: f64,
    set: MeasurementSet,
) -> [S; 3] {
    let vt = terminal_voltage(x[3], x[9], e, p[ParamId::XE.index()]);
    match set {
        MeasurementSet::Vpq => [vt, vt * x[9], vt * x[3]],
        MeasurementSet::Vidiq => [vt, x[9], x[3]],
    }
}

/// Interface quantities given the terminal voltage magnitude.
pub fn outputs_at_terminal(vt: f64, x: &DeraState, x_e: f64) -> DeraOutputs {
    let i_d = x[StateId::X10];
    let i_q = x[StateId::X4];
    let (v_d, v_q) = (vt, 0.0);
    let e_d = v_d - i_q * x_e;
    let e_q = v_q + i_d * x_e;
    DeraOutputs {
        p: v_d * i_d + v_q * i_q,
        q: v_d * i_q - v_q * i_d,
        i_d,
        i_q,
        v_d,
        v_q,
        e_d,
        e_q,
        theta: e_q.atan2(e_d),
    }
}

pub fn outputs(x: &DeraState, u: &DeraInputs, p: &DeraParameters) -> DeraOutputs {
    let vt = terminal_voltage(x[StateId::X4], x[StateId::X10], u.v, p.x_e);
    outputs_at_terminal(vt, x, p.x_e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Dual, Scalar};

    fn base() -> (DeraState, DeraInputs, DeraParameters) {
        let mut x = DeraState([1.0, 0.5, 0.2, 0.2, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5]);
        x[StateId::X1] = 1.0;
        (x, DeraInputs::default(), DeraParameters::default())
    }

    #[test]
    fn x1_is_first_order_lag() {
        let (mut x, u, mut p) = base();
        p.x_e = 0.0;
        x[StateId::X1] = 0.9;
        let dx = rhs(&x, &u, &p, FlagConfig::CASE1, &Smoothing::default()).unwrap();
        assert!((dx[StateId::X1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn x3_constant_q_branch() {
        let (mut x, u, p) = base();
        x[StateId::X3] = 10.0;
        let dx = rhs(&x, &u, &p, FlagConfig::CASE1, &Smoothing::default()).unwrap();
        assert!((dx[StateId::X3] + 490.0).abs() < 1e-9);
    }

    #[test]
    fn frozen_states_have_zero_derivative() {
        let (x, mut u, p) = base();
        for (i, v) in [0.7, 0.95, 1.1].into_iter().enumerate() {
            u.v = v;
            u.freq = 0.99 + 0.01 * i as f64;
            let d1 = rhs(&x, &u, &p, FlagConfig::CASE1, &Smoothing::default()).unwrap();
            for s in [StateId::X2, StateId::X5, StateId::X6, StateId::X7] {
                assert_eq!(d1[s], 0.0);
            }
            let d2 = rhs(&x, &u, &p, FlagConfig::CASE2, &Smoothing::default()).unwrap();
            assert_eq!(d2[StateId::X5], 0.0);
        }
    }

    #[test]
    fn output_examples() {
        let x = DeraState([0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.5]);
        let y = outputs_at_terminal(1.0, &x, 0.1);
        assert_eq!((y.p, y.q), (0.5, 0.0));
        let x = DeraState([0.0, 0.0, 0.0, 0.2, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let y = outputs_at_terminal(1.0, &x, 0.1);
        assert!((y.e_d - 0.98).abs() < 1e-15);
        let y = outputs_at_terminal(0.7, &DeraState::default(), 0.1);
        assert_eq!((y.p, y.q), (0.0, 0.0));
    }

    #[test]
    fn power_identities_and_q_sign() {
        let (mut x, u, p) = base();
        let mut last = f64::NEG_INFINITY;
        for i in 0..20 {
            x[StateId::X4] = -0.5 + 0.05 * i as f64;
            let y = outputs(&x, &u, &p);
            assert_eq!(y.p, y.v_d * y.i_d + y.v_q * y.i_q);
            assert_eq!(y.q, y.v_d * y.i_q - y.v_q * y.i_d);
            assert!(y.q > last);
            last = y.q;
            // source magnitude is recovered from the frame quantities
            assert!(((y.e_d * y.e_d + y.e_q * y.e_q).sqrt() - u.v).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_reports_state() {
        let (x, u, mut p) = base();
        p.t_rv = f64::NAN;
        let err = rhs(&x, &u, &p, FlagConfig::CASE1, &Smoothing::default()).unwrap_err();
        assert!(err.to_string().contains("x1"), "{err}");
    }

    #[test]
    fn dual_rhs_matches_finite_difference() {
        let (x, mut u, p) = base();
        u.v = 0.8;
        u.freq = 0.995;
        let sm = Smoothing::default();
        let pa = p.to_array();
        for j in 0..N_STATES {
            let mut xd = [Dual::default(); N_STATES];
            for i in 0..N_STATES {
                xd[i] = Dual::new(x.0[i], if i == j { 1.0 } else { 0.0 });
            }
            let pd = pa.map(Dual::cst);
            let d = rhs_generic(&xd, &pd, &u, FlagConfig::CASE2, &sm);
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp.0[j] += h;
            xm.0[j] -= h;
            let fp = rhs_generic(&xp.0, &pa, &u, FlagConfig::CASE2, &sm);
            let fm = rhs_generic(&xm.0, &pa, &u, FlagConfig::CASE2, &sm);
            for i in 0..N_STATES {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((d[i].d - fd).abs() < 1e-5 * (1.0 + fd.abs()), "({i},{j})");
            }
        }
    }
}
