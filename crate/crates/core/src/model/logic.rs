use crate::ad::{max_of, min_of, Scalar};

use super::DeraParameters;

/// Dynamic current bounds from the priority logic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentLimits<S = f64> {
    pub i_dmax: S,
    pub i_dmin: S,
    pub i_qmax: S,
    pub i_qmin: S,
}

/// Circular capability curve. With `pqflag` unset reactive current has
/// priority, otherwise active current does. Commands are clipped to
/// `|.| <= i_max` before the square root.
pub fn current_limits(pqflag: bool, i_pcmd: f64, i_qcmd: f64, i_max: f64) -> CurrentLimits {
    current_limits_generic(pqflag, i_pcmd, i_qcmd, i_max)
}

pub fn current_limits_generic<S: Scalar>(
    pqflag: bool,
    i_pcmd: S,
    i_qcmd: S,
    i_max: S,
) -> CurrentLimits<S> {
    let headroom = |cmd: S| {
        let c = max_of(min_of(cmd, i_max), -i_max);
        let r = i_max * i_max - c * c;
        if r.value() > 0.0 {
            r.sqrt()
        } else {
            S::cst(0.0)
        }
    };
    if pqflag {
        let iq = headroom(i_pcmd);
        CurrentLimits {
            i_dmax: i_max,
            i_dmin: S::cst(0.0),
            i_qmax: iq,
            i_qmin: -iq,
        }
    } else {
        CurrentLimits {
            i_dmax: headroom(i_qcmd),
            i_dmin: S::cst(0.0),
            i_qmax: i_max,
            i_qmin: -i_max,
        }
    }
}

/// Voltage trip multiplier `m_v`. `t` is the time since the voltage left
/// the normal band. Branches are tested in order; the first match wins.
pub fn voltage_trip(v: f64, t: f64, p: &DeraParameters) -> f64 {
    voltage_trip_generic(v, t, p)
}

pub(crate) fn voltage_trip_generic<S: Scalar>(v: S, t: f64, p: &DeraParameters) -> S {
    let x = v.value();
    let low_span = p.v_l1 - p.v_l0;
    let high_span = p.v_h0 - p.v_h1;
    let m = if p.v_l0 <= x && x <= p.v_min {
        (v - p.v_l0) / low_span
    } else if p.v_min < x && x <= p.v_l1 && t <= p.t_l1 {
        (v - p.v_l0) / low_span
    } else if p.v_l1 < x && x < p.v_h1 && t <= p.t_h1 {
        S::cst(1.0)
    } else if p.v_h1 <= x && x <= p.v_h0 && t <= p.t_h1 {
        (-v + p.v_h0) / high_span
    } else if p.v_min <= x && x <= p.v_l1 && t >= p.t_l1 {
        (v - p.v_min) * (p.v_frac / low_span)
    } else if p.v_l1 < x && x < p.v_h1 && t >= p.t_h1 {
        S::cst(p.v_frac * (p.v_l1 - p.v_min) / low_span)
    } else if p.v_h1 <= x && x <= p.v_max && t >= p.t_h1 {
        (-v + p.v_max) * (p.v_frac / high_span)
    } else if p.v_max < x && x <= p.v_h0 {
        (-v + p.v_h0) / high_span
    } else {
        S::cst(0.0)
    };
    let mv = m.value();
    if mv < 0.0 {
        S::cst(0.0)
    } else if mv > 1.0 {
        S::cst(1.0)
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reactive_priority_values() {
        let l = current_limits(false, 0.0, 0.0, 1.2);
        assert_eq!(l.i_dmax, 1.2);
        assert_eq!(l.i_qmax, 1.2);
        assert_eq!(l.i_qmin, -1.2);
        let l = current_limits(false, 0.0, 0.6, 1.2);
        assert!((l.i_dmax - 1.08f64.sqrt()).abs() < 1e-12);
        assert!((l.i_dmax - 1.0392).abs() < 1e-4);
        // command beyond the ceiling is clipped, radicand stays >= 0
        assert_eq!(current_limits(false, 0.0, 5.0, 1.2).i_dmax, 0.0);
    }

    #[test]
    fn active_priority_values() {
        let l = current_limits(true, 1.2, 0.0, 1.2);
        assert_eq!(l.i_qmax, 0.0);
        assert_eq!(l.i_dmax, 1.2);
        let l = current_limits(true, 0.6, 0.0, 1.2);
        assert_eq!(l.i_qmin, -l.i_qmax);
    }

    #[test]
    fn limits_never_exceed_ceiling() {
        for i in -30..=30 {
            let c = i as f64 * 0.1;
            for flag in [false, true] {
                let l = current_limits(flag, c, -c, 1.2);
                assert!(l.i_dmax <= 1.2 && l.i_qmax.abs() <= 1.2);
            }
        }
    }

    #[test]
    fn trip_examples() {
        let p = DeraParameters::default();
        assert_eq!(voltage_trip(1.0, 0.0, &p), 1.0);
        assert_eq!(voltage_trip(0.3, 0.0, &p), 0.0);
        assert_eq!(voltage_trip(p.v_l0, 0.0, &p), 0.0);
        assert_eq!(voltage_trip(1.3, 0.0, &p), 0.0);
        // partial reconnection after the timer expires
        let m = voltage_trip(1.0, 1.0, &p);
        assert!((m - p.v_frac * (p.v_l1 - p.v_min) / (p.v_l1 - p.v_l0)).abs() < 1e-15);
    }

    #[test]
    fn trip_output_in_unit_interval_on_dense_grid() {
        let p = DeraParameters::default();
        let mut hits = [false; 9];
        for i in 0..=400 {
            let v = 0.3 + i as f64 * 0.0025;
            for t in [0.0, 0.1, 0.16, 0.2, 1.0] {
                let m = voltage_trip(v, t, &p);
                assert!((0.0..=1.0).contains(&m), "v={v} t={t} m={m}");
                hits[branch(v, t, &p)] = true;
            }
        }
        assert!(hits.iter().all(|h| *h), "{hits:?}");
    }

    fn branch(v: f64, t: f64, p: &DeraParameters) -> usize {
        if p.v_l0 <= v && v <= p.v_min {
            0
        } else if p.v_min < v && v <= p.v_l1 && t <= p.t_l1 {
            1
        } else if p.v_l1 < v && v < p.v_h1 && t <= p.t_h1 {
            2
        } else if p.v_h1 <= v && v <= p.v_h0 && t <= p.t_h1 {
            3
        } else if p.v_min <= v && v <= p.v_l1 && t >= p.t_l1 {
            4
        } else if p.v_l1 < v && v < p.v_h1 && t >= p.t_h1 {
            5
        } else if p.v_h1 <= v && v <= p.v_max && t >= p.t_h1 {
            6
        } else if p.v_max < v && v <= p.v_h0 {
            7
        } else {
            8
        }
    }
}
