//! Joint state and parameter estimation with extended and unscented Kalman
//! filters on the augmented vector.

mod dera;
mod jacobian;

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub use dera::{
    calibrate, reconstruct_inputs, DeraFilterModel, FilterKind, InputSource, JacobianSource, PassSchedule,
    RunSpec,
};
pub use jacobian::{analytic_jacobian, analytic_jacobian_supports};

/// A discrete-time model seen by the filters, one step per sample.
pub trait FilterModel: Sync {
    fn dim(&self) -> usize;
    fn n_outputs(&self) -> usize;
    /// Number of samples.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn time(&self, k: usize) -> f64;
    fn labels(&self) -> Vec<String>;
    /// Entries before this index are dynamic states, the rest parameters.
    fn n_states(&self) -> usize;
    /// Advance from sample `k` to `k + 1`.
    fn transition(&self, k: usize, z: &DVector<f64>) -> Result<DVector<f64>>;
    /// Advance and return the transition Jacobian.
    fn transition_with_jacobian(&self, k: usize, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
    fn measure(&self, k: usize, z: &DVector<f64>) -> DVector<f64>;
    fn measurement_jacobian(&self, k: usize, z: &DVector<f64>) -> DMatrix<f64>;
    /// Measured outputs at sample `k`; `None` is masked.
    fn observation(&self, k: usize) -> Vec<Option<f64>>;
}

/// Noise and tuning, all covariances diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Per augmented entry and per sample interval, pu².
    pub process_noise: DVector<f64>,
    /// Per output channel, pu².
    pub measurement_noise: DVector<f64>,
    pub initial_covariance: DVector<f64>,
    /// Full prior covariance; overrides `initial_covariance` when set.
    pub prior_covariance: Option<DMatrix<f64>>,
    pub ukf_alpha: f64,
    pub ukf_beta: f64,
    pub ukf_kappa: f64,
    /// Per augmented entry, projected after every update.
    pub bounds: Vec<Option<(f64, f64)>>,
    /// Recorded with results; both filters are deterministic.
    pub seed: u64,
    /// Samples at the end used for the CoV.
    pub tail: usize,
}

pub const STATE_NOISE: f64 = 1e-7;
pub const PARAM_NOISE: f64 = 1e-5 * 1e-5;
pub const MEASUREMENT_NOISE: f64 = 1e-4 * 1e-4;
/// Initial parameter std as a fraction of the starting value.
pub const PARAM_SPREAD: f64 = 0.1;
/// Lower bound for time constants and gains.
pub const POSITIVE_FLOOR: f64 = 1e-4;
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

impl FilterConfig {
    /// Defaults for `n_states` states followed by parameters with initial
    /// values `init`.
    pub fn defaults(init: &DVector<f64>, n_states: usize, n_outputs: usize) -> Self {
        let n = init.len();
        let process_noise = DVector::from_fn(n, |i, _| {
            if i < n_states {
                STATE_NOISE
            } else {
                PARAM_NOISE
            }
        });
        let initial_covariance = DVector::from_fn(n, |i, _| {
            if i < n_states {
                1e-4
            } else {
                (PARAM_SPREAD * init[i].abs()).max(1e-3).powi(2)
            }
        });
        Self {
            process_noise,
            measurement_noise: DVector::from_element(n_outputs, MEASUREMENT_NOISE),
            initial_covariance,
            prior_covariance: None,
            ukf_alpha: 0.1,
            ukf_beta: 2.0,
            ukf_kappa: 0.0,
            bounds: vec![None; n],
            seed: 0,
            tail: 30,
        }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.process_noise.len() != n || self.initial_covariance.len() != n || self.bounds.len() != n {
            return bad("noise, covariance and bounds must match the augmented dimension");
        }
        if self.measurement_noise.len() != p {
            return bad("measurement noise must match the output count");
        }
        let pos = |v: &DVector<f64>| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !pos(&self.process_noise) || !pos(&self.measurement_noise) || !pos(&self.initial_covariance) {
            return bad("all variances must be positive");
        }
        if !(self.ukf_alpha > 0.0 && self.ukf_alpha <= 1.0) || !(self.ukf_beta >= 0.0) {
            return bad("need 0 < alpha <= 1 and beta >= 0");
        }
        if let Some(p) = &self.prior_covariance {
            if p.nrows() != n || p.ncols() != n || Cholesky::new(p.clone()).is_none() {
                return bad("prior covariance must be n by n and positive definite");
            }
        }
        if self.bounds.iter().flatten().any(|(lo, hi)| !(lo < hi)) {
            return bad("bounds need min < max");
        }
        if n as f64 + self.ukf_kappa <= 0.0 {
            return bad("n + kappa must be positive");
        }
        Ok(())
    }

    fn prior(&self) -> DMatrix<f64> {
        self.prior_covariance
            .clone()
            .unwrap_or_else(|| DMatrix::from_diagonal(&self.initial_covariance))
    }

    fn project(&self, z: &mut DVector<f64>) {
        for (v, b) in z.iter_mut().zip(&self.bounds) {
            if let Some((lo, hi)) = b {
                *v = v.clamp(*lo, *hi);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub labels: Vec<String>,
    pub n_states: usize,
    pub times: Vec<f64>,
    /// Posterior mean after each sample.
    pub estimates: Vec<DVector<f64>>,
    /// Measured minus predicted, per sample and channel.
    pub innovations: Vec<Vec<Option<f64>>>,
    pub final_covariance: DMatrix<f64>,
    /// std / |mean| of each entry over the last `tail` samples.
    pub cov: Vec<f64>,
    pub tail: usize,
    pub seed: u64,
}

impl CalibrationResult {
    pub fn final_estimate(&self) -> &DVector<f64> {
        self.estimates.last().expect("at least one sample")
    }

    pub fn value_of(&self, label: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == label)?;
        Some(self.final_estimate()[i])
    }

    pub fn cov_of(&self, label: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == label)?;
        Some(self.cov[i])
    }

    /// Per-step estimates: `t` then one column per augmented entry.
    pub fn to_csv(&self) -> String {
        let mut s = format!("t,{}\n", self.labels.join(","));
        for (t, z) in self.times.iter().zip(&self.estimates) {
            let row: Vec<String> = z.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{t},{}", row.join(","));
        }
        s
    }

    /// Parameter table: initialization, estimate, CoV.
    pub fn summary(&self, init: &DVector<f64>) -> String {
        let mut s = String::from("parameter,initialization,estimate,cov\n");
        for i in self.n_states..self.labels.len() {
            let _ = writeln!(
                s,
                "{},{},{},{:e}",
                self.labels[i],
                init[i],
                self.final_estimate()[i],
                self.cov[i]
            );
        }
        s
    }
}

fn tail_cov(estimates: &[DVector<f64>], tail: usize) -> Vec<f64> {
    let n = estimates.first().map_or(0, |z| z.len());
    let w = &estimates[estimates.len().saturating_sub(tail.max(1))..];
    (0..n)
        .map(|i| {
            let m = w.iter().map(|z| z[i]).sum::<f64>() / w.len() as f64;
            let var = w.iter().map(|z| (z[i] - m).powi(2)).sum::<f64>() / w.len() as f64;
            if m == 0.0 {
                if var == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                var.sqrt() / m.abs()
            }
        })
        .collect()
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

/// Cholesky factor, adding diagonal jitter from 1e-12 up to 1e-6 when the
/// plain factorization fails. The jitter stays in `p`.
fn repair_cholesky(p: &mut DMatrix<f64>, step: usize) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(p.clone()) {
        return Ok(c);
    }
    let n = p.nrows();
    let mut j = JITTER_START;
    while j <= JITTER_MAX * 1.000_001 {
        let q = &*p + DMatrix::identity(n, n) * j;
        if let Some(c) = Cholesky::new(q.clone()) {
            *p = q;
            return Ok(c);
        }
        j *= 10.0;
    }
    Err(Error::Divergence {
        step,
        reason: "covariance is not positive definite after jitter".into(),
    })
}

struct Update {
    innovation: Vec<Option<f64>>,
}

fn available(obs: &[Option<f64>], step: usize) -> Result<Vec<usize>> {
    let mut idx = Vec::new();
    for (i, o) in obs.iter().enumerate() {
        if let Some(v) = o {
            if !v.is_finite() {
                return Err(Error::DataFault {
                    step,
                    reason: format!("channel {i} is not finite"),
                });
            }
            idx.push(i);
        }
    }
    Ok(idx)
}

fn innovation_record(p: usize, idx: &[usize], nu: &DVector<f64>, step: usize) -> Result<Vec<Option<f64>>> {
    if nu.iter().any(|v| !v.is_finite()) {
        return Err(Error::DataFault {
            step,
            reason: "innovation is not finite".into(),
        });
    }
    let mut rec = vec![None; p];
    for (r, i) in idx.iter().enumerate() {
        rec[*i] = Some(nu[r]);
    }
    Ok(rec)
}

fn ekf_update<M: FilterModel>(
    m: &M,
    cfg: &FilterConfig,
    k: usize,
    z: &mut DVector<f64>,
    p: &mut DMatrix<f64>,
) -> Result<Update> {
    let obs = m.observation(k);
    let idx = available(&obs, k)?;
    if idx.is_empty() {
        return Ok(Update {
            innovation: vec![None; m.n_outputs()],
        });
    }
    let y = DVector::from_iterator(idx.len(), idx.iter().map(|i| obs[*i].expect("available")));
    let hz = m.measure(k, z).select_rows(&idx);
    let h = m.measurement_jacobian(k, z).select_rows(&idx);
    let r = DMatrix::from_diagonal(&cfg.measurement_noise.select_rows(&idx));
    let nu = y - hz;
    let rec = innovation_record(m.n_outputs(), &idx, &nu, k)?;
    let mut s = &h * &*p * h.transpose() + &r;
    symmetrize(&mut s);
    let sc = repair_cholesky(&mut s, k)?;
    let gain = sc.solve(&(&h * &*p)).transpose();
    *z += &gain * nu;
    // Joseph form keeps P symmetric positive semidefinite
    let n = z.len();
    let a = DMatrix::identity(n, n) - &gain * &h;
    *p = &a * &*p * a.transpose() + &gain * r * gain.transpose();
    symmetrize(p);
    cfg.project(z);
    Ok(Update { innovation: rec })
}

fn finish(
    m: &impl FilterModel,
    cfg: &FilterConfig,
    estimates: Vec<DVector<f64>>,
    innovations: Vec<Vec<Option<f64>>>,
    p: DMatrix<f64>,
) -> CalibrationResult {
    CalibrationResult {
        labels: m.labels(),
        n_states: m.n_states(),
        times: (0..m.len()).map(|k| m.time(k)).collect(),
        cov: tail_cov(&estimates, cfg.tail),
        estimates,
        innovations,
        final_covariance: p,
        tail: cfg.tail,
        seed: cfg.seed,
    }
}

fn check_run<M: FilterModel>(m: &M, cfg: &FilterConfig, init: &DVector<f64>) -> Result<()> {
    cfg.validate(m.dim(), m.n_outputs())?;
    if init.len() != m.dim() {
        return Err(Error::InvalidArgument("initial vector has the wrong length".into()));
    }
    if m.is_empty() {
        return Err(Error::InvalidArgument("no measurements".into()));
    }
    for (v, b) in init.iter().zip(&cfg.bounds) {
        if let Some((lo, hi)) = b {
            if v < lo || v > hi {
                return Err(Error::InvalidArgument(format!("initial value {v} outside bounds")));
            }
        }
    }
    Ok(())
}

/// Extended Kalman filter. The first sample updates the prior `init`.
pub fn ekf_run<M: FilterModel>(m: &M, cfg: &FilterConfig, init: &DVector<f64>) -> Result<CalibrationResult> {
    check_run(m, cfg, init)?;
    let mut z = init.clone();
    let mut p = cfg.prior();
    let w = DMatrix::from_diagonal(&cfg.process_noise);
    let mut estimates = Vec::with_capacity(m.len());
    let mut innovations = Vec::with_capacity(m.len());
    for k in 0..m.len() {
        if k > 0 {
            let (next, f) = m
                .transition_with_jacobian(k - 1, &z)
                .map_err(|e| Error::Divergence {
                    step: k,
                    reason: e.to_string(),
                })?;
            z = next;
            p = &f * &p * f.transpose() + &w;
            symmetrize(&mut p);
        }
        let u = ekf_update(m, cfg, k, &mut z, &mut p)?;
        repair_cholesky(&mut p, k)?;
        estimates.push(z.clone());
        innovations.push(u.innovation);
    }
    Ok(finish(m, cfg, estimates, innovations, p))
}

struct SigmaWeights {
    scale: f64,
    wm0: f64,
    wc0: f64,
    wi: f64,
}

impl SigmaWeights {
    fn new(n: usize, cfg: &FilterConfig) -> Self {
        let n = n as f64;
        let lambda = cfg.ukf_alpha.powi(2) * (n + cfg.ukf_kappa) - n;
        let scale = n + lambda;
        Self {
            scale,
            wm0: lambda / scale,
            wc0: lambda / scale + 1.0 - cfg.ukf_alpha.powi(2) + cfg.ukf_beta,
            wi: 0.5 / scale,
        }
    }

    fn wm(&self, i: usize) -> f64 {
        if i == 0 {
            self.wm0
        } else {
            self.wi
        }
    }

    fn wc(&self, i: usize) -> f64 {
        if i == 0 {
            self.wc0
        } else {
            self.wi
        }
    }
}

fn sigma_points(z: &DVector<f64>, p: &mut DMatrix<f64>, w: &SigmaWeights, step: usize) -> Result<Vec<DVector<f64>>> {
    let n = z.len();
    let mut scaled = &*p * w.scale;
    let l = repair_cholesky(&mut scaled, step)?.l();
    *p = scaled / w.scale;
    let mut pts = Vec::with_capacity(2 * n + 1);
    pts.push(z.clone());
    for j in 0..n {
        pts.push(z + l.column(j));
    }
    for j in 0..n {
        pts.push(z - l.column(j));
    }
    Ok(pts)
}

fn weighted_mean(pts: &[DVector<f64>], w: &SigmaWeights) -> DVector<f64> {
    let mut m = DVector::zeros(pts[0].len());
    for (i, x) in pts.iter().enumerate() {
        m += x * w.wm(i);
    }
    m
}

/// Unscented Kalman filter with the scaled transform. Sigma points are
/// propagated through the model's transition without Jacobians.
pub fn ukf_run<M: FilterModel>(m: &M, cfg: &FilterConfig, init: &DVector<f64>) -> Result<CalibrationResult> {
    check_run(m, cfg, init)?;
    let n = m.dim();
    let sw = SigmaWeights::new(n, cfg);
    let mut z = init.clone();
    let mut p = cfg.prior();
    let w = DMatrix::from_diagonal(&cfg.process_noise);
    let mut estimates = Vec::with_capacity(m.len());
    let mut innovations = Vec::with_capacity(m.len());
    for k in 0..m.len() {
        if k > 0 {
            let mut pts = sigma_points(&z, &mut p, &sw, k)?;
            // sigma points outside the bounds would leave the model's domain
            pts.iter_mut().for_each(|x| cfg.project(x));
            let moved = pts
                .iter()
                .map(|x| m.transition(k - 1, x))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Divergence {
                    step: k,
                    reason: e.to_string(),
                })?;
            z = weighted_mean(&moved, &sw);
            let mut pn = w.clone();
            for (i, x) in moved.iter().enumerate() {
                let d = x - &z;
                pn += &d * d.transpose() * sw.wc(i);
            }
            p = pn;
            symmetrize(&mut p);
        }

        let obs = m.observation(k);
        let idx = available(&obs, k)?;
        let mut rec = vec![None; m.n_outputs()];
        if !idx.is_empty() {
            let mut pts = sigma_points(&z, &mut p, &sw, k)?;
            pts.iter_mut().for_each(|x| cfg.project(x));
            let ys: Vec<DVector<f64>> = pts.iter().map(|x| m.measure(k, x).select_rows(&idx)).collect();
            let y_hat = weighted_mean(&ys, &sw);
            let mut s = DMatrix::from_diagonal(&cfg.measurement_noise.select_rows(&idx));
            let mut c = DMatrix::zeros(n, idx.len());
            for (i, (x, y)) in pts.iter().zip(&ys).enumerate() {
                let dy = y - &y_hat;
                s += &dy * dy.transpose() * sw.wc(i);
                c += (x - &z) * dy.transpose() * sw.wc(i);
            }
            symmetrize(&mut s);
            let y = DVector::from_iterator(idx.len(), idx.iter().map(|i| obs[*i].expect("available")));
            let nu = y - y_hat;
            rec = innovation_record(m.n_outputs(), &idx, &nu, k)?;
            let sc = repair_cholesky(&mut s, k)?;
            let gain = sc.solve(&c.transpose()).transpose();
            z += &gain * nu;
            p -= &gain * s * gain.transpose();
            symmetrize(&mut p);
            cfg.project(&mut z);
        }
        repair_cholesky(&mut p, k)?;
        estimates.push(z.clone());
        innovations.push(rec);
    }
    Ok(finish(m, cfg, estimates, innovations, p))
}

/// Linear time-invariant plant, used to check the filters against the
/// textbook Kalman recursion.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub data: Vec<Vec<Option<f64>>>,
    pub dt: f64,
}

impl FilterModel for LinearModel {
    fn dim(&self) -> usize {
        self.f.nrows()
    }
    fn n_outputs(&self) -> usize {
        self.h.nrows()
    }
    fn len(&self) -> usize {
        self.data.len()
    }
    fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
    fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("z{i}")).collect()
    }
    fn n_states(&self) -> usize {
        self.dim()
    }
    fn transition(&self, _: usize, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.f * z)
    }
    fn transition_with_jacobian(&self, _: usize, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((&self.f * z, self.f.clone()))
    }
    fn measure(&self, _: usize, z: &DVector<f64>) -> DVector<f64> {
        &self.h * z
    }
    fn measurement_jacobian(&self, _: usize, _: &DVector<f64>) -> DMatrix<f64> {
        self.h.clone()
    }
    fn observation(&self, k: usize) -> Vec<Option<f64>> {
        self.data[k].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn plant(n_samples: usize) -> LinearModel {
        let f = DMatrix::from_row_slice(2, 2, &[0.98, 0.05, -0.04, 0.95]);
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut x = DVector::from_vec(vec![1.0, -0.5]);
        let mut data = Vec::new();
        for _ in 0..n_samples {
            let y = (&h * &x)[0] + noise.sample(&mut rng);
            data.push(vec![Some(y)]);
            x = &f * x;
        }
        LinearModel { f, h, data, dt: 0.1 }
    }

    /// Textbook predict / update recursion.
    fn kalman(m: &LinearModel, q: &DMatrix<f64>, r: f64, x0: &DVector<f64>, p0: &DMatrix<f64>) -> Vec<DVector<f64>> {
        let mut x = x0.clone();
        let mut p = p0.clone();
        let mut out = Vec::new();
        for k in 0..m.data.len() {
            if k > 0 {
                x = &m.f * x;
                p = &m.f * p * m.f.transpose() + q;
            }
            let y = m.data[k][0].unwrap();
            let s = (&m.h * &p * m.h.transpose())[(0, 0)] + r;
            let g = &p * m.h.transpose() / s;
            x += &g * (y - (&m.h * &x)[0]);
            p = (DMatrix::identity(2, 2) - &g * &m.h) * p;
            out.push(x.clone());
        }
        out
    }

    fn setup() -> (LinearModel, FilterConfig, DVector<f64>) {
        let m = plant(60);
        let init = DVector::from_vec(vec![0.0, 0.0]);
        let mut cfg = FilterConfig::defaults(&init, 2, 1);
        cfg.process_noise = DVector::from_vec(vec![1e-3, 2e-3]);
        cfg.measurement_noise = DVector::from_vec(vec![0.01]);
        cfg.initial_covariance = DVector::from_vec(vec![1.0, 1.0]);
        (m, cfg, init)
    }

    #[test]
    fn ekf_matches_textbook_kalman() {
        let (m, cfg, init) = setup();
        let expect = kalman(
            &m,
            &DMatrix::from_diagonal(&cfg.process_noise),
            0.01,
            &init,
            &DMatrix::identity(2, 2),
        );
        let r = ekf_run(&m, &cfg, &init).unwrap();
        for (a, b) in r.estimates.iter().zip(&expect) {
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn ukf_matches_textbook_kalman() {
        let (m, cfg, init) = setup();
        let expect = kalman(
            &m,
            &DMatrix::from_diagonal(&cfg.process_noise),
            0.01,
            &init,
            &DMatrix::identity(2, 2),
        );
        let r = ukf_run(&m, &cfg, &init).unwrap();
        for (a, b) in r.estimates.iter().zip(&expect) {
            assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn masked_samples_skip_update() {
        let (mut m, cfg, init) = setup();
        m.data[0] = vec![None];
        let r = ekf_run(&m, &cfg, &init).unwrap();
        assert_eq!(r.estimates[0], init);
        assert_eq!(r.innovations[0], vec![None]);
    }

    #[test]
    fn nan_measurement_is_a_data_fault() {
        let (mut m, cfg, init) = setup();
        m.data[5] = vec![Some(f64::NAN)];
        assert!(matches!(ekf_run(&m, &cfg, &init), Err(Error::DataFault { step: 5, .. })));
        assert!(matches!(ukf_run(&m, &cfg, &init), Err(Error::DataFault { step: 5, .. })));
    }

    #[test]
    fn bounds_are_enforced() {
        let (m, mut cfg, init) = setup();
        cfg.bounds = vec![Some((-0.1, 0.1)), None];
        let r = ekf_run(&m, &cfg, &init).unwrap();
        assert!(r.estimates.iter().all(|z| z[0].abs() <= 0.1));
        let outside = DVector::from_vec(vec![0.5, 0.0]);
        assert!(ekf_run(&m, &cfg, &outside).is_err());
    }

    #[test]
    fn tail_cov_of_constant_is_zero() {
        let e = vec![DVector::from_vec(vec![2.0]); 5];
        assert_eq!(tail_cov(&e, 3), vec![0.0]);
        let e = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![3.0])];
        assert!((tail_cov(&e, 2)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn jitter_repairs_semidefinite_and_rejects_indefinite() {
        let mut p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(repair_cholesky(&mut p, 0).is_ok());
        assert!(p[(0, 0)] > 1.0);
        let mut q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(repair_cholesky(&mut q, 4), Err(Error::Divergence { step: 4, .. })));
    }

    #[test]
    fn config_validation() {
        let init = DVector::from_vec(vec![1.0, 2.0]);
        let mut cfg = FilterConfig::defaults(&init, 1, 3);
        assert!(cfg.validate(2, 3).is_ok());
        assert!((cfg.initial_covariance[1] - 0.04).abs() < 1e-15);
        cfg.ukf_alpha = 0.0;
        assert!(cfg.validate(2, 3).is_err());
    }
}
