//! Lie-derivative observability of the parameter-augmented model, numerical
//! rank, weakest-direction weights and estimable-subset selection.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use crate::ad::{Dual, Jet, Scalar, JET_CAPACITY};
use crate::error::{Error, Result};
use crate::integrator::{propagate, JacobianMode};
use crate::model::{DeraInputs, DeraState, ParamId, StateId};
use crate::scenario::{simulate, ScenarioConfig, TruthSample};
use crate::system::{AugmentedSpec, DeraSystem};

/// Default Lie order cap.
pub const CAP_ORDER: usize = 8;
/// Safety factor in the rank tolerance.
pub const RANK_SAFETY: f64 = 1e3;

/// An autonomous system `z' = f(z)`, `y = h(z)` that can be evaluated on any
/// [`Scalar`].
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn field<S: Scalar>(&self, z: &[S]) -> Vec<S>;
    fn output<S: Scalar>(&self, z: &[S]) -> Vec<S>;
}

/// der_a on an augmented vector with inputs frozen.
pub struct DeraField<'a> {
    pub sys: &'a DeraSystem,
    pub u: DeraInputs,
}

impl VectorField for DeraField<'_> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }
    fn n_outputs(&self) -> usize {
        3
    }
    fn field<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        self.sys.field_generic(z, &self.u)
    }
    fn output<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        self.sys.output_generic(z, &self.u).to_vec()
    }
}

/// `z' = A z`, `y = C z`.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

fn mat_vec<S: Scalar>(m: &DMatrix<f64>, z: &[S]) -> Vec<S> {
    (0..m.nrows())
        .map(|i| {
            z.iter()
                .enumerate()
                .fold(S::cst(0.0), |acc, (j, v)| acc + *v * m[(i, j)])
        })
        .collect()
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
    fn field<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        mat_vec(&self.a, z)
    }
    fn output<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        mat_vec(&self.c, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Differentiation {
    /// Taylor-mode series with forward-mode tangents.
    #[default]
    Forward,
    /// Central differences of the Lie stack, step `1e-6 (1 + |z_j|)`.
    CentralDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowScaling {
    /// Every Lie-order block divided by its infinity norm.
    #[default]
    Block,
    Raw,
}

/// `L_f^k h(z0)` for `k = 0..=max_order`, as `out[k][output]`.
///
/// The Taylor coefficients of the flow through `z0` are built one order at a
/// time; `L_f^k h = k! y_k` where `y_k` is the `k`-th coefficient of `h`
/// along the flow.
fn lie_series<F: VectorField, S: Scalar>(f: &F, z0: &[S], max_order: usize) -> Result<Vec<Vec<S>>> {
    if max_order + 1 > JET_CAPACITY {
        return Err(Error::InvalidArgument(format!(
            "Lie order {max_order} exceeds the supported {}",
            JET_CAPACITY - 1
        )));
    }
    let mut coeffs: Vec<Vec<S>> = z0.iter().map(|v| vec![*v]).collect();
    for k in 0..max_order {
        let jets: Vec<Jet<S>> = coeffs.iter().map(|c| Jet::from_coeffs(c)).collect();
        let fz = f.field(&jets);
        for (c, fi) in coeffs.iter_mut().zip(&fz) {
            c.push(fi.coeff(k) / (k + 1) as f64);
        }
    }
    let jets: Vec<Jet<S>> = coeffs.iter().map(|c| Jet::from_coeffs(c)).collect();
    let y = f.output(&jets);
    let mut fact = 1.0;
    let mut out = Vec::with_capacity(max_order + 1);
    for k in 0..=max_order {
        if k > 0 {
            fact *= k as f64;
        }
        let row: Vec<S> = y.iter().map(|yj| yj.coeff(k) * fact).collect();
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::ObservabilityFault {
                order: k,
                output: j,
            });
        }
        out.push(row);
    }
    Ok(out)
}

fn check_order(max_order: usize) -> Result<()> {
    if max_order == 0 {
        return Err(Error::InvalidArgument("max_order must be at least 1".into()));
    }
    Ok(())
}

/// `[h, L_f h, ..., L_f^max_order h]` at `z0`, grouped by order.
pub fn lie_derivative_stack<F: VectorField>(f: &F, z0: &[f64], max_order: usize) -> Result<DVector<f64>> {
    check_order(max_order)?;
    let s = lie_series(f, z0, max_order)?;
    Ok(DVector::from_iterator(
        s.len() * f.n_outputs(),
        s.into_iter().flatten(),
    ))
}

/// Jacobian of [`lie_derivative_stack`] with respect to `z0`.
pub fn observability_matrix<F: VectorField>(
    f: &F,
    z0: &[f64],
    max_order: usize,
    scheme: Differentiation,
) -> Result<DMatrix<f64>> {
    check_order(max_order)?;
    let n = z0.len();
    let rows = (max_order + 1) * f.n_outputs();
    let mut o = DMatrix::zeros(rows, n);
    match scheme {
        Differentiation::Forward => {
            let mut zd: Vec<Dual> = z0.iter().map(|v| Dual::cst(*v)).collect();
            for j in 0..n {
                zd[j].d = 1.0;
                let s = lie_series(f, &zd, max_order)?;
                zd[j].d = 0.0;
                for (r, v) in s.iter().flatten().enumerate() {
                    o[(r, j)] = v.d;
                }
            }
        }
        Differentiation::CentralDifference => {
            let mut z = z0.to_vec();
            for j in 0..n {
                let h = 1e-6 * (1.0 + z0[j].abs());
                z[j] = z0[j] + h;
                let plus = lie_derivative_stack(f, &z, max_order)?;
                z[j] = z0[j] - h;
                let minus = lie_derivative_stack(f, &z, max_order)?;
                z[j] = z0[j];
                o.set_column(j, &((plus - minus) / (2.0 * h)));
            }
        }
    }
    Ok(o)
}

/// Divides each block of `block` consecutive rows by its infinity norm.
/// All-zero blocks are left alone.
pub fn scale_blocks(m: &mut DMatrix<f64>, block: usize) {
    let mut start = 0;
    while start < m.nrows() {
        let len = block.min(m.nrows() - start);
        let mut rows = m.rows_mut(start, len);
        let norm = rows.amax();
        if norm > 0.0 {
            rows /= norm;
        }
        start += len;
    }
}

/// Rank of `m` under `sigma_i > max(rows, cols) sigma_max eps safety`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
    /// Right singular vectors, one per singular value, same order.
    pub right_vectors: Option<DMatrix<f64>>,
}

pub fn numerical_rank(m: &DMatrix<f64>, safety: f64, want_vectors: bool) -> Option<RankInfo> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Some(RankInfo {
            rank: 0,
            singular_values: vec![],
            tolerance: 0.0,
            right_vectors: None,
        });
    }
    // A wide matrix has the same spectrum as its transpose.
    let svd = if r >= c || want_vectors {
        SVD::try_new(m.clone(), false, want_vectors, f64::EPSILON, 0)?
    } else {
        SVD::try_new(m.transpose(), false, false, f64::EPSILON, 0)?
    };
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]));
    let singular_values: Vec<f64> = order.iter().map(|i| sv[*i]).collect();
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let tolerance = r.max(c) as f64 * smax * 2.2e-16 * safety;
    let rank = singular_values.iter().filter(|s| **s > tolerance).count();
    let right_vectors = svd.v_t.map(|vt| {
        let mut v = DMatrix::zeros(c, order.len());
        for (k, i) in order.iter().enumerate() {
            v.set_column(k, &vt.row(*i).transpose());
        }
        v
    });
    Some(RankInfo {
        rank,
        singular_values,
        tolerance,
        right_vectors,
    })
}

/// Sample points along a simulated run. Inputs are held over each frame.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Vec<(DeraState, DeraInputs)>,
    pub frame: f64,
    pub substeps: usize,
}

impl Trajectory {
    pub fn single(x: DeraState, u: DeraInputs) -> Self {
        Self {
            points: vec![(x, u)],
            frame: 1.0 / 30.0,
            substeps: 32,
        }
    }

    pub fn from_truth(truth: &[TruthSample], frame: f64, substeps: usize) -> Self {
        Self {
            points: truth.iter().map(|s| (s.state, s.inputs)).collect(),
            frame,
            substeps,
        }
    }

    /// Truth trajectory of a scenario with the given model parameters.
    pub fn from_scenario(cfg: &ScenarioConfig) -> Result<Self> {
        Ok(Self::from_truth(&simulate(cfg)?, cfg.frame(), cfg.substeps))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityOptions {
    /// Defaults to `min(n - 1, CAP_ORDER)`.
    pub max_order: Option<usize>,
    pub safety: f64,
    pub scaling: RowScaling,
    pub differentiation: Differentiation,
    /// Samples per window for the `sigma_min` statistics.
    pub stats_window: usize,
}

impl Default for ObservabilityOptions {
    fn default() -> Self {
        Self {
            max_order: None,
            safety: RANK_SAFETY,
            scaling: RowScaling::Block,
            differentiation: Differentiation::Forward,
            stats_window: 30,
        }
    }
}

impl ObservabilityOptions {
    pub fn order_for(&self, n: usize) -> usize {
        self.max_order
            .unwrap_or_else(|| n.saturating_sub(1).min(CAP_ORDER))
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub spec: AugmentedSpec,
    pub labels: Vec<String>,
    /// Rank of the trajectory-stacked matrix.
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
    pub is_full_rank: bool,
    /// `|v_i|` of the weakest observable direction, normalized to sum 1,
    /// for every augmented entry.
    pub weights: Vec<f64>,
    /// Index of the trajectory point the verdict refers to.
    pub reference_point: usize,
    pub evaluation_point: Vec<f64>,
    pub max_order: usize,
    pub n_points: usize,
    /// Largest rank of a single-point matrix along the trajectory.
    pub pointwise_max_rank: usize,
    /// Smallest singular value of the unscaled zeroth-order window matrix
    /// starting at each sample with a complete window.
    pub sigma_min: Vec<f64>,
    pub sigma_min_mean: f64,
    pub sigma_min_std: f64,
    pub scaling: RowScaling,
}

impl ObservabilityReport {
    /// Parameter weights, largest first.
    pub fn parameter_weights(&self) -> Vec<(ParamId, f64)> {
        let ns = self.spec.states.len();
        let mut w: Vec<(ParamId, f64)> = self
            .spec
            .params
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, self.weights[ns + i]))
            .collect();
        w.sort_by(|a, b| b.1.total_cmp(&a.1));
        w
    }

    pub fn weight_of(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.weights[i])
    }

    /// `full rank (n)` or `rank-deficient (rank < n)`.
    pub fn verdict(&self) -> String {
        let n = self.labels.len();
        if self.is_full_rank {
            format!("full rank ({n})")
        } else {
            format!("rank-deficient (rank < {n})")
        }
    }

    /// Plain-text export: key-value header, then tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "verdict = \"{}\"", self.verdict());
        let _ = writeln!(s, "spec = {}", self.spec);
        let _ = writeln!(s, "dimension = {}", self.labels.len());
        let _ = writeln!(s, "rank = {}", self.rank);
        let _ = writeln!(s, "full_rank = {}", self.is_full_rank);
        let _ = writeln!(s, "pointwise_max_rank = {}", self.pointwise_max_rank);
        let _ = writeln!(s, "lie_order = {}", self.max_order);
        let _ = writeln!(s, "points = {}", self.n_points);
        let _ = writeln!(s, "reference_point = {}", self.reference_point);
        let _ = writeln!(s, "row_scaling = {:?}", self.scaling);
        let _ = writeln!(s, "tolerance = {:e}", self.tolerance);
        let _ = writeln!(s, "sigma_min_windows = {}", self.sigma_min.len());
        let _ = writeln!(s, "sigma_min_mean = {:e}", self.sigma_min_mean);
        let _ = writeln!(s, "sigma_min_std = {:e}", self.sigma_min_std);
        let _ = writeln!(s, "\n[singular_values]");
        for (i, v) in self.singular_values.iter().enumerate() {
            let mark = if *v > self.tolerance { "" } else { "  (below tolerance)" };
            let _ = writeln!(s, "{:>3}  {:.6e}{}", i + 1, v, mark);
        }
        let _ = writeln!(s, "\n[weakest_direction]");
        let mut idx: Vec<usize> = (0..self.labels.len()).collect();
        idx.sort_by(|a, b| self.weights[*b].total_cmp(&self.weights[*a]));
        for i in idx {
            let _ = writeln!(s, "{:<8} {:.6}", self.labels[i], self.weights[i]);
        }
        let _ = writeln!(s, "\n[evaluation_point]");
        for (l, v) in self.labels.iter().zip(&self.evaluation_point) {
            let _ = writeln!(s, "{l:<8} {v:.9}");
        }
        s
    }
}

/// Every moving state plus the spec entries, so that states outside the
/// spec still evolve (as known quantities) when computing Lie derivatives.
fn extended(spec: &AugmentedSpec) -> Result<(AugmentedSpec, Vec<usize>)> {
    let states: Vec<StateId> = StateId::ALL
        .iter()
        .copied()
        .filter(|s| !spec.flags.is_frozen(*s) || spec.states.contains(s))
        .collect();
    let ext = AugmentedSpec::new(
        spec.flags,
        states.clone(),
        spec.params.clone(),
        spec.measurement_set,
    )?;
    let cols = spec
        .states
        .iter()
        .map(|s| states.iter().position(|e| e == s).expect("subset"))
        .chain((0..spec.params.len()).map(|i| states.len() + i))
        .collect();
    Ok((ext, cols))
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Single-point observability matrix of `sys.spec`, columns in spec order.
pub fn dera_observability_matrix(
    sys: &DeraSystem,
    x: &DeraState,
    u: &DeraInputs,
    max_order: usize,
    scheme: Differentiation,
) -> Result<DMatrix<f64>> {
    let (ext_spec, cols) = extended(&sys.spec)?;
    let ext = DeraSystem::new(ext_spec, sys.params, *x, sys.smoothing.with_floor(None));
    let z = ext.pack(x, &sys.params);
    let o = observability_matrix(&DeraField { sys: &ext, u: *u }, z.as_slice(), max_order, scheme)?;
    Ok(select_columns(&o, &cols))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Per-point observability matrices of the extended vector and the flow
/// Jacobians between consecutive points.
#[derive(Debug, Clone)]
pub struct TrajectorySensitivity {
    /// Observability matrix at each point, all extended columns.
    pub local: Vec<DMatrix<f64>>,
    /// Flow Jacobian from point `i` to point `i + 1`.
    pub steps: Vec<DMatrix<f64>>,
    /// Extended column of each spec entry.
    pub cols: Vec<usize>,
    pub n_outputs: usize,
    pub max_order: usize,
}

impl TrajectorySensitivity {
    pub fn compute(
        sys: &DeraSystem,
        traj: &Trajectory,
        max_order: usize,
        scheme: Differentiation,
    ) -> Result<Self> {
        if traj.points.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        let (ext_spec, cols) = extended(&sys.spec)?;
        let sm = sys.smoothing.with_floor(None);
        let h = traj.frame / traj.substeps as f64;
        let ext_at = |x: &DeraState| DeraSystem::new(ext_spec.clone(), sys.params, *x, sm);
        let steps = traj.points[..traj.points.len() - 1]
            .par_iter()
            .enumerate()
            .map(|(i, (x, u))| {
                let ext = ext_at(x);
                let z = ext.pack(x, &sys.params);
                let jac = |z: &DVector<f64>, u: &DeraInputs| ext.field_jacobian(z, u, None);
                propagate(&z, u, h, traj.substeps, |z, u| ext.field(z, u), Some((jac, JacobianMode::Exact)))
                    .map(|r| r.transition_jacobian.expect("requested"))
                    .map_err(|e| Error::NumericalFault {
                        point: i,
                        reason: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let local = traj
            .points
            .par_iter()
            .map(|(x, u)| {
                let ext = ext_at(x);
                let z = ext.pack(x, &sys.params);
                observability_matrix(&DeraField { sys: &ext, u: *u }, z.as_slice(), max_order, scheme)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            local,
            steps,
            cols,
            n_outputs: 3,
            max_order,
        })
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    fn rows(&self, order: usize) -> usize {
        (order.min(self.max_order) + 1) * self.n_outputs
    }

    /// Observability matrix at point `i` up to `order`, spec columns.
    pub fn point_matrix(&self, i: usize, order: usize) -> DMatrix<f64> {
        let o = self.local[i].rows(0, self.rows(order)).into_owned();
        select_columns(&o, &self.cols)
    }

    /// Points `r..end` stacked, each composed with the flow Jacobian from
    /// point `r`, so columns are perturbations of the spec entries at `r`.
    pub fn window_matrix(&self, r: usize, end: usize, order: usize) -> DMatrix<f64> {
        let end = end.min(self.len());
        let k = self.rows(order);
        let n = self.cols.len();
        let ne = self.local[0].ncols();
        let mut out = DMatrix::zeros(k * end.saturating_sub(r), n);
        let mut phi = DMatrix::<f64>::identity(ne, ne).select_columns(&self.cols);
        for i in r..end {
            let blk = self.local[i].rows(0, k) * &phi;
            out.rows_mut((i - r) * k, k).copy_from(&blk);
            if i + 1 < end {
                phi = &self.steps[i] * phi;
            }
        }
        out
    }
}

/// Observability along a trajectory.
///
/// For every reference point the later points are stacked, each composed
/// with the flow Jacobian back to the reference. The rank verdict and the
/// weakest direction come from the best-conditioned window of highest rank.
/// Single-point ranks and windowed `sigma_min` statistics are reported
/// alongside.
pub fn analyze(sys: &DeraSystem, traj: &Trajectory, opts: &ObservabilityOptions) -> Result<ObservabilityReport> {
    let n = sys.dim();
    let order = opts.order_for(n);
    let sens = TrajectorySensitivity::compute(sys, traj, order, opts.differentiation)?;
    analyze_sensitivity(sys, traj, &sens, opts)
}

/// Simulates `cfg` and analyzes `spec` along the resulting trajectory.
pub fn analyze_scenario(spec: &AugmentedSpec, cfg: &ScenarioConfig, opts: &ObservabilityOptions) -> Result<ObservabilityReport> {
    if spec.flags != cfg.flags {
        return Err(Error::Contract(format!(
            "spec flags {} differ from scenario flags {}",
            spec.flags, cfg.flags
        )));
    }
    let traj = Trajectory::from_scenario(cfg)?;
    let sys = DeraSystem::new(spec.clone(), cfg.params, traj.points[0].0, cfg.smoothing());
    analyze(&sys, &traj, opts)
}

pub fn analyze_sensitivity(
    sys: &DeraSystem,
    traj: &Trajectory,
    sens: &TrajectorySensitivity,
    opts: &ObservabilityOptions,
) -> Result<ObservabilityReport> {
    let n = sys.dim();
    let order = sens.max_order;
    let p = sens.n_outputs;
    let npts = sens.len();
    let fault = |i: usize| Error::NumericalFault {
        point: i,
        reason: "SVD did not converge".into(),
    };

    let pointwise_max_rank = (0..npts)
        .into_par_iter()
        .map(|i| {
            let mut m = sens.point_matrix(i, order);
            if opts.scaling == RowScaling::Block {
                scale_blocks(&mut m, p);
            }
            Ok(numerical_rank(&m, opts.safety, false).ok_or_else(|| fault(i))?.rank)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);

    // Unscaled output sensitivities over the next `stats_window` samples:
    // the sampled-data observability matrix.
    let w = opts.stats_window.max(1).min(npts);
    let sigma_min = (0..=npts - w)
        .into_par_iter()
        .map(|r| {
            let m = sens.window_matrix(r, r + w, 0);
            let info = numerical_rank(&m, opts.safety, false).ok_or_else(|| fault(r))?;
            Ok(info.singular_values.last().copied().unwrap_or(0.0))
        })
        .collect::<Result<Vec<_>>>()?;

    let windows = (0..npts)
        .into_par_iter()
        .map(|r| {
            let mut m = sens.window_matrix(r, npts, order);
            if opts.scaling == RowScaling::Block {
                scale_blocks(&mut m, p);
            }
            numerical_rank(&m, opts.safety, true)
                .map(|info| (r, info))
                .ok_or_else(|| fault(r))
        })
        .collect::<Result<Vec<_>>>()?;
    let conditioning = |info: &RankInfo| match info.rank {
        0 => 0.0,
        k => info.singular_values[k - 1] / info.singular_values[0],
    };
    let (reference, info) = windows
        .into_iter()
        .reduce(|best, cand| {
            let better = cand.1.rank > best.1.rank
                || (cand.1.rank == best.1.rank && conditioning(&cand.1) > conditioning(&best.1));
            if better {
                cand
            } else {
                best
            }
        })
        .expect("non-empty");

    // Energy of each entry in the unobservable subspace, or in the last
    // singular vector when there is none. A single null vector is not unique
    // once the null space has more than one dimension.
    let weights = {
        let v = info.right_vectors.as_ref().expect("requested");
        let cols = v.ncols();
        let first = info.rank.min(cols - 1);
        let energy: Vec<f64> = (0..n)
            .map(|i| (first..cols).map(|j| v[(i, j)].powi(2)).sum())
            .collect();
        let total: f64 = energy.iter().sum();
        energy.iter().map(|e| e / total).collect()
    };
    let (sigma_min_mean, sigma_min_std) = mean_std(&sigma_min);
    let (xr, _) = &traj.points[reference];
    Ok(ObservabilityReport {
        spec: sys.spec.clone(),
        labels: sys.spec.labels(),
        rank: info.rank,
        is_full_rank: info.rank == n,
        singular_values: info.singular_values,
        tolerance: info.tolerance,
        weights,
        reference_point: reference,
        evaluation_point: sys.pack(xr, &sys.params).iter().copied().collect(),
        max_order: order,
        n_points: npts,
        pointwise_max_rank,
        sigma_min,
        sigma_min_mean,
        sigma_min_std,
        scaling: opts.scaling,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectOptions {
    /// Drop states that are pure integrators of known signals and
    /// saturation, deadband and threshold parameters before ranking.
    pub pre_exclude: bool,
    /// Parameters that are never removed.
    pub pinned: Vec<ParamId>,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            pre_exclude: true,
            pinned: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub spec: AugmentedSpec,
    pub report: ObservabilityReport,
    pub audit: Vec<String>,
}

/// Removes parameters until the stacked matrix has full rank. Each round
/// drops the unpinned parameter with the largest weakest-direction weight.
pub fn select_estimable(
    sys: &DeraSystem,
    traj: &Trajectory,
    opts: &ObservabilityOptions,
    sel: &SelectOptions,
) -> Result<Selection> {
    let mut spec = sys.spec.clone();
    let mut audit = Vec::new();
    if sel.pre_exclude {
        for id in sys.spec.params.iter().filter(|id| id.is_threshold()) {
            if !sel.pinned.contains(id) {
                spec = spec.without(id.key());
                audit.push(format!("pre-excluded {} (threshold)", id.key()));
            }
        }
        if spec.states.contains(&StateId::X8) && spec.states.len() > 1 {
            spec = spec.without(StateId::X8.name());
            audit.push("pre-excluded x8 (ramp of a known signal)".into());
        }
    }
    loop {
        let s = DeraSystem {
            spec: spec.clone(),
            ..sys.clone()
        };
        let report = analyze(&s, traj, opts)?;
        if report.is_full_rank {
            audit.push(format!("full rank {} reached", report.rank));
            return Ok(Selection { spec, report, audit });
        }
        let candidate = report
            .parameter_weights()
            .into_iter()
            .find(|(id, _)| !sel.pinned.contains(id));
        match candidate {
            Some((id, w)) => {
                audit.push(format!(
                    "removed {} (weight {:.4}, rank {} of {})",
                    id.key(),
                    w,
                    report.rank,
                    report.labels.len()
                ));
                spec = spec.without(id.key());
            }
            None => {
                return Err(Error::Contract(format!(
                    "irreducible rank deficiency: rank {} of {} with no removable parameter",
                    report.rank,
                    report.labels.len()
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay {
        t: f64,
    }

    impl VectorField for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn n_outputs(&self) -> usize {
            1
        }
        fn field<S: Scalar>(&self, z: &[S]) -> Vec<S> {
            vec![-z[0] / self.t]
        }
        fn output<S: Scalar>(&self, z: &[S]) -> Vec<S> {
            vec![z[0]]
        }
    }

    #[test]
    fn scalar_lie_derivatives() {
        let s = lie_derivative_stack(&Decay { t: 0.5 }, &[2.0], 3).unwrap();
        assert_eq!(s[0], 2.0);
        assert!((s[1] + 4.0).abs() < 1e-14);
        assert!((s[2] - 8.0).abs() < 1e-13);
        assert!((s[3] + 16.0).abs() < 1e-12);
    }

    fn lti() -> LinearField {
        LinearField {
            a: DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -2.0, -0.3, 1.0, 0.5, 0.0, -1.0]),
            c: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        }
    }

    fn kalman(f: &LinearField, k: usize) -> DMatrix<f64> {
        let mut o = DMatrix::zeros(f.c.nrows() * (k + 1), f.a.ncols());
        let mut blk = f.c.clone();
        for i in 0..=k {
            o.rows_mut(i * f.c.nrows(), f.c.nrows()).copy_from(&blk);
            blk = &blk * &f.a;
        }
        o
    }

    #[test]
    fn linear_stack_and_matrix_match_kalman() {
        let f = lti();
        let x0 = [0.3, -1.2, 0.8];
        let k = kalman(&f, 4);
        let stack = lie_derivative_stack(&f, &x0, 4).unwrap();
        assert!((stack - &k * DVector::from_row_slice(&x0)).amax() < 1e-12);
        let o = observability_matrix(&f, &x0, 4, Differentiation::Forward).unwrap();
        assert!((&o - &k).amax() < 1e-12);
        let fd = observability_matrix(&f, &x0, 4, Differentiation::CentralDifference).unwrap();
        assert!((&fd - &k).amax() < 1e-6);
    }

    #[test]
    fn decoupled_toy_is_rank_one() {
        let f = LinearField {
            a: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        };
        let o = observability_matrix(&f, &[1.0, 1.0], 1, Differentiation::Forward).unwrap();
        assert_eq!(numerical_rank(&o, RANK_SAFETY, false).unwrap().rank, 1);
    }

    #[test]
    fn block_scaling_normalizes() {
        let mut m = DMatrix::from_row_slice(4, 1, &[2.0, -4.0, 0.0, 0.0]);
        scale_blocks(&mut m, 2);
        assert_eq!(m.as_slice(), &[0.5, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn rank_rejects_zero_order() {
        assert!(lie_derivative_stack(&Decay { t: 1.0 }, &[1.0], 0).is_err());
        assert!(lie_derivative_stack(&Decay { t: 1.0 }, &[1.0], 30).is_err());
    }

    #[test]
    fn nan_names_order_and_output() {
        struct Bad;
        impl VectorField for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn n_outputs(&self) -> usize {
                2
            }
            fn field<S: Scalar>(&self, z: &[S]) -> Vec<S> {
                vec![z[0].sqrt()]
            }
            fn output<S: Scalar>(&self, z: &[S]) -> Vec<S> {
                vec![S::cst(1.0), z[0]]
            }
        }
        // d/dt sqrt at zero is infinite
        match lie_derivative_stack(&Bad, &[0.0], 3) {
            Err(Error::ObservabilityFault { order, output }) => {
                assert_eq!(output, 1);
                assert!(order >= 2);
            }
            other => panic!("{other:?}"),
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-2.0f64..2.0, r * c).prop_map(move |v| DMatrix::from_row_slice(r, c, &v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn lie_rank_matches_kalman_rank(
            n in 2usize..=4,
            seed in prop::collection::vec(-2.0f64..2.0, 16 + 4 + 4),
            zero_cols in prop::collection::vec(any::<bool>(), 4),
        ) {
            let mut a = DMatrix::from_row_slice(4, 4, &seed[..16]).view((0, 0), (n, n)).into_owned();
            let mut c = DMatrix::from_row_slice(1, 4, &seed[16..20]).view((0, 0), (1, n)).into_owned();
            // decouple some states to produce deficient instances
            for j in 0..n {
                if zero_cols[j] && j > 0 {
                    for i in 0..n {
                        if i != j {
                            a[(i, j)] = 0.0;
                            a[(j, i)] = 0.0;
                        }
                    }
                    c[(0, j)] = 0.0;
                }
            }
            let f = LinearField { a, c };
            let x0: Vec<f64> = seed[20..20 + n].to_vec();
            let o = observability_matrix(&f, &x0, n - 1, Differentiation::Forward).unwrap();
            let mut brute = DMatrix::zeros(n, n);
            let mut blk = f.c.clone();
            for i in 0..n {
                brute.row_mut(i).copy_from(&blk.row(0));
                blk = &blk * &f.a;
            }
            let r1 = numerical_rank(&o, RANK_SAFETY, false).unwrap().rank;
            let r2 = numerical_rank(&brute, RANK_SAFETY, false).unwrap().rank;
            prop_assert_eq!(r1, r2);
        }

        #[test]
        fn rank_invariant_under_row_scaling(
            m in matrix(6, 4),
            s in prop::collection::vec(0.1f64..10.0, 6),
            drop in 0usize..4,
        ) {
            let mut m = m;
            // force one dependent column
            let dup = m.column((drop + 1) % 4).clone_owned() * 0.5;
            m.set_column(drop, &dup);
            let base = numerical_rank(&m, RANK_SAFETY, false).unwrap().rank;
            let mut scaled = m.clone();
            for (i, f) in s.iter().enumerate() {
                scaled.row_mut(i).scale_mut(*f);
            }
            prop_assert_eq!(numerical_rank(&scaled, RANK_SAFETY, false).unwrap().rank, base);
        }
    }
}
