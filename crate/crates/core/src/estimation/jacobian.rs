//! Hand-derived Jacobian of the der_a right-hand side with respect to the
//! full state and the eleven calibrated parameters.

use nalgebra::{DMatrix, DVector};

use crate::ad::{max_of, min_of};
use crate::error::{Error, Result};
use crate::model::{DeraInputs, ParamId, Smoothing, N_STATES};
use crate::smoothing::{sdbf_partials, ssf_partials, SmoothPartials};
use crate::system::{AugmentedSpec, DeraSystem, CALIBRATED_PARAMS};

const NV: usize = N_STATES + CALIBRATED_PARAMS.len();
type Grad = [f64; NV];

fn col(id: ParamId) -> usize {
    N_STATES + CALIBRATED_PARAMS.iter().position(|p| *p == id).expect("calibrated")
}

/// True when [`analytic_jacobian`] covers `spec`.
pub fn analytic_jacobian_supports(spec: &AugmentedSpec) -> bool {
    !spec.flags.vtripflag
        && !spec.flags.pqflag
        && spec.params.iter().all(|p| CALIBRATED_PARAMS.contains(p))
}

fn sat_p(sm: &Smoothing, x: f64, lo: f64, hi: f64) -> SmoothPartials {
    if sm.hard {
        let m = min_of(x, hi);
        let inner = x <= hi;
        let keep = m >= lo;
        return SmoothPartials {
            value: max_of(m, lo),
            d_x: if inner && keep { 1.0 } else { 0.0 },
            d_lower: if keep { 0.0 } else { 1.0 },
            d_upper: if !inner && keep { 1.0 } else { 0.0 },
        };
    }
    if hi - lo <= 1e-12 {
        return SmoothPartials {
            value: lo,
            d_x: 0.0,
            d_lower: 0.0,
            d_upper: 0.0,
        };
    }
    ssf_partials(x, lo, hi, sm.sharpness, sm.floor)
}

fn db_p(sm: &Smoothing, x: f64, lo: f64, hi: f64) -> SmoothPartials {
    if sm.hard {
        let (value, d_x, d_lower, d_upper) = if x > hi {
            (x - hi, 1.0, 0.0, -1.0)
        } else if x < lo {
            (x - lo, 1.0, -1.0, 0.0)
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        return SmoothPartials {
            value,
            d_x,
            d_lower,
            d_upper,
        };
    }
    sdbf_partials(x, lo, hi, sm.sharpness, sm.floor)
}

fn scaled(g: &Grad, a: f64) -> Grad {
    g.map(|v| v * a)
}

fn axpy(acc: &mut Grad, a: f64, g: &Grad) {
    for (d, s) in acc.iter_mut().zip(g) {
        *d += a * s;
    }
}

/// `d f / d z` for the augmented vector `z` of `sys`, with smooth-operator
/// slopes floored at `floor`. Rows of parameters are zero.
pub fn analytic_jacobian(
    sys: &DeraSystem,
    z: &DVector<f64>,
    u: &DeraInputs,
    floor: Option<f64>,
) -> Result<DMatrix<f64>> {
    if !analytic_jacobian_supports(&sys.spec) {
        return Err(Error::Contract(format!(
            "no analytic Jacobian for flags {} with parameters {:?}",
            sys.spec.flags,
            sys.spec.params.iter().map(|p| p.key()).collect::<Vec<_>>()
        )));
    }
    if z.len() != sys.dim() {
        return Err(Error::Contract("augmented vector has the wrong length".into()));
    }
    let sm = sys.smoothing.with_floor(floor);
    let flags = sys.spec.flags;
    let (xs, ps) = sys.unpack(z);
    let x = xs.0;
    let p = |id: ParamId| ps.get(id);
    use ParamId::*;

    let e = |i: usize| {
        let mut g = [0.0; NV];
        g[i] = 1.0;
        g
    };
    let mut j = [[0.0; NV]; N_STATES];

    // terminal voltage and filtered-voltage floor
    let xe = p(XE);
    let r = u.v * u.v - (xe * x[9]).powi(2);
    let root = if r > 0.0 { r.sqrt() } else { 0.0 };
    let vt = xe * x[3] + root;
    let mut d_vt = [0.0; NV];
    d_vt[3] = xe;
    if r > 0.0 {
        d_vt[9] = -xe * xe * x[9] / root;
    }
    let (vf, d_vf) = if x[0] > 0.01 { (x[0], e(0)) } else { (0.01, [0.0; NV]) };

    let trv = p(TRv);
    j[0] = scaled(&d_vt, 1.0 / trv);
    j[0][0] -= 1.0 / trv;
    j[0][col(TRv)] = -(vt - x[0]) / (trv * trv);

    if !flags.is_frozen(crate::model::StateId::X2) {
        let tp = p(TP);
        j[1][8] = 1.0 / tp;
        j[1][1] = -1.0 / tp;
        j[1][col(TP)] = -(x[8] - x[1]) / (tp * tp);
    }

    // reactive loop
    let dbv = db_p(&sm, u.v_ref0 - x[0], p(Dbd1), p(Dbd2));
    let kqv = p(KQv);
    let iqv = kqv * dbv.value;
    let mut d_iqv = [0.0; NV];
    d_iqv[0] = -kqv * dbv.d_x;
    d_iqv[col(KQv)] = dbv.value;

    let (qterm, d_qterm) = if flags.pflag {
        let t = p(Pfaref).tan();
        (x[1] * t, scaled(&e(1), t))
    } else {
        (u.q_ref, [0.0; NV])
    };
    let tiq = p(TIq);
    let qv = qterm / vf;
    let mut d_qv = scaled(&d_qterm, 1.0 / vf);
    axpy(&mut d_qv, -qterm / (vf * vf), &d_vf);
    j[2] = scaled(&d_qv, 1.0 / tiq);
    j[2][2] -= 1.0 / tiq;
    j[2][col(TIq)] = -(qv - x[2]) / (tiq * tiq);

    let qsat = sat_p(&sm, iqv, p(IQl), p(IQh));
    let iq_cmd = x[2] - qsat.value;
    let mut d_iq_cmd = e(2);
    axpy(&mut d_iq_cmd, -qsat.d_x, &d_iqv);

    // active power command
    let g = sat_p(&sm, x[8], p(PMin), p(PMax));
    let ip_cmd = g.value / vf;
    let mut d_ip = scaled(&e(8), g.d_x / vf);
    axpy(&mut d_ip, -g.value / (vf * vf), &d_vf);

    // current limits with reactive priority
    let imax = p(IMax);
    let m = min_of(iq_cmd, imax);
    let c = max_of(m, -imax);
    let dc = if iq_cmd <= imax && m >= -imax { 1.0 } else { 0.0 };
    let rr = imax * imax - c * c;
    let (head, d_head) = if rr > 0.0 {
        let h = rr.sqrt();
        (h, scaled(&d_iq_cmd, -c * dc / h))
    } else {
        (0.0, [0.0; NV])
    };
    let (i_dmax, d_idmax) = if head <= p(IDmax) {
        (head, d_head)
    } else {
        (p(IDmax), [0.0; NV])
    };
    let i_dmin = max_of(0.0, p(IDmin));
    let i_qmax = min_of(imax, p(IQmax));
    let i_qmin = max_of(-imax, p(IQmin));

    let tg = p(TG);
    let q4 = sat_p(&sm, iq_cmd, i_qmin, i_qmax);
    j[3] = scaled(&d_iq_cmd, q4.d_x / tg);
    j[3][3] -= 1.0 / tg;
    j[3][col(TG)] = -(q4.value - x[3]) / (tg * tg);

    // frequency loop
    if flags.fflag {
        let trf = p(TRf);
        j[5][5] = -1.0 / trf;
        j[5][col(TRf)] = -(u.freq - x[5]) / (trf * trf);

        let df = db_p(&sm, u.f_ref - x[5], p(Fbd1), p(Fbd2));
        let d_df = scaled(&e(5), -df.d_x);
        let (dsel, dcol) = if df.value >= 0.0 {
            (p(DDn), col(DDn))
        } else {
            (p(DUp), col(DUp))
        };
        let mut d_arg = scaled(&d_df, dsel);
        d_arg[dcol] += df.value;
        d_arg[1] -= 1.0;
        let lim = sat_p(&sm, dsel * df.value + u.p_ref - x[1], p(FEmin), p(FEmax));
        let p_lim = lim.value;
        let d_plim = scaled(&d_arg, lim.d_x);

        let kpg = p(KPg);
        let pa = sat_p(&sm, x[6] + kpg * p_lim, p(PMin), p(PMax));
        let mut d_pa_arg = e(6);
        axpy(&mut d_pa_arg, kpg, &d_plim);
        d_pa_arg[col(KPg)] += p_lim;
        let d_pa = scaled(&d_pa_arg, pa.d_x);

        let (kig, kw) = (p(KIg), p(KW));
        let mut f7 = scaled(&d_plim, kig);
        f7[col(KIg)] += p_lim;
        axpy(&mut f7, kw, &d_pa);
        axpy(&mut f7, -kw * kpg, &d_plim);
        f7[col(KPg)] -= kw * p_lim;
        f7[6] -= kw;
        j[6] = f7;

        let ramp = sat_p(&sm, (pa.value - x[7]) / u.dt_input, p(DpMin), p(DpMax));
        let mut d_ramp = d_pa;
        d_ramp[7] -= 1.0;
        j[7] = scaled(&d_ramp, ramp.d_x / u.dt_input);
    }

    let tpord = p(TPord);
    let p_ord = if flags.fflag { x[7] } else { u.p_ref };
    if flags.fflag {
        j[8][7] = 1.0 / tpord;
    }
    j[8][8] -= g.d_x / tpord;
    j[8][col(TPord)] = -(p_ord - g.value) / (tpord * tpord);

    // active current with rate limit
    let tgt = sat_p(&sm, ip_cmd, i_dmin, i_dmax);
    let mut d_tgt = scaled(&d_ip, tgt.d_x);
    axpy(&mut d_tgt, tgt.d_upper, &d_idmax);
    let rate = sat_p(&sm, (tgt.value - x[9]) / tg, -p(Rrpwr), p(Rrpwr));
    let mut d_rate = scaled(&d_tgt, 1.0 / tg);
    d_rate[9] -= 1.0 / tg;
    d_rate[col(TG)] -= (tgt.value - x[9]) / (tg * tg);
    j[9] = scaled(&d_rate, rate.d_x);

    // select the spec's rows and columns
    let n = sys.dim();
    let ns = sys.spec.states.len();
    let cols: Vec<usize> = sys
        .spec
        .states
        .iter()
        .map(|s| s.index())
        .chain(sys.spec.params.iter().map(|id| col(*id)))
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for (r, s) in sys.spec.states.iter().enumerate() {
        for (k, c) in cols.iter().enumerate() {
            out[(r, k)] = j[s.index()][*c];
        }
    }
    debug_assert!(out.rows(ns, n - ns).iter().all(|v| *v == 0.0));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimulationFault {
            state: "analytic Jacobian".into(),
            step: None,
        });
    }
    Ok(out)
}
