//! Fixed-step classical Runge-Kutta with the discrete transition Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Integration step used between 30 Hz samples: 32 substeps per frame.
pub const DEFAULT_DT: f64 = 1.0 / 960.0;

/// How the stage Jacobians are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    /// Chain rule through the stages, the exact derivative of the step map.
    #[default]
    Exact,
    /// Sum of plain stage-point Jacobians.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: DVector<f64>,
    pub transition_jacobian: Option<DMatrix<f64>>,
}

fn finite(v: &DVector<f64>) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::SimulationFault {
            state: format!("component {i}"),
            step: None,
        }),
        None => Ok(()),
    }
}

/// One RK4 step with `u` held constant.
pub fn rk4_step<U, F>(x: &DVector<f64>, u: &U, dt: f64, mut f: F) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>, &U) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step {dt} must be positive")));
    }
    let k1 = f(x, u)?;
    let k2 = f(&(x + &k1 * (0.5 * dt)), u)?;
    let k3 = f(&(x + &k2 * (0.5 * dt)), u)?;
    let k4 = f(&(x + &k3 * dt), u)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    finite(&next)?;
    Ok(next)
}

/// One RK4 step and `F = d(next)/dx`. `jac` returns the right-hand side
/// Jacobian at a point.
pub fn rk4_step_with_jacobian<U, F, J>(
    x: &DVector<f64>,
    u: &U,
    dt: f64,
    mut f: F,
    mut jac: J,
    mode: JacobianMode,
) -> Result<StepResult>
where
    F: FnMut(&DVector<f64>, &U) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>, &U) -> Result<DMatrix<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step {dt} must be positive")));
    }
    let n = x.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let x1 = x.clone();
    let k1 = f(&x1, u)?;
    let x2 = x + &k1 * (0.5 * dt);
    let k2 = f(&x2, u)?;
    let x3 = x + &k2 * (0.5 * dt);
    let k3 = f(&x3, u)?;
    let x4 = x + &k3 * dt;
    let k4 = f(&x4, u)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    finite(&next)?;

    let a1 = jac(&x1, u)?;
    let a2 = jac(&x2, u)?;
    let a3 = jac(&x3, u)?;
    let a4 = jac(&x4, u)?;
    let (j1, j2, j3, j4) = match mode {
        JacobianMode::Exact => {
            let j1 = a1;
            let j2 = &a2 * (&eye + &j1 * (0.5 * dt));
            let j3 = &a3 * (&eye + &j2 * (0.5 * dt));
            let j4 = &a4 * (&eye + &j3 * dt);
            (j1, j2, j3, j4)
        }
        JacobianMode::Literal => (a1, a2, a3, a4),
    };
    let big_f = &eye + (j1 + j2 * 2.0 + j3 * 2.0 + j4) * (dt / 6.0);
    if big_f.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimulationFault {
            state: "transition Jacobian".into(),
            step: None,
        });
    }
    Ok(StepResult {
        next_state: next,
        transition_jacobian: Some(big_f),
    })
}

/// `steps` RK4 steps of size `dt`; the Jacobian, when requested, is the
/// product of the per-step transition matrices.
pub fn propagate<U, F, J>(
    x: &DVector<f64>,
    u: &U,
    dt: f64,
    steps: usize,
    mut f: F,
    jac: Option<(J, JacobianMode)>,
) -> Result<StepResult>
where
    F: FnMut(&DVector<f64>, &U) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>, &U) -> Result<DMatrix<f64>>,
{
    let mut state = x.clone();
    match jac {
        None => {
            for s in 0..steps {
                state = rk4_step(&state, u, dt, &mut f).map_err(|e| e.at_step(s))?;
            }
            Ok(StepResult {
                next_state: state,
                transition_jacobian: None,
            })
        }
        Some((mut jac, mode)) => {
            let n = x.len();
            let mut total = DMatrix::<f64>::identity(n, n);
            for s in 0..steps {
                let r = rk4_step_with_jacobian(&state, u, dt, &mut f, &mut jac, mode)
                    .map_err(|e| e.at_step(s))?;
                state = r.next_state;
                total = r.transition_jacobian.expect("requested") * total;
            }
            Ok(StepResult {
                next_state: state,
                transition_jacobian: Some(total),
            })
        }
    }
}
