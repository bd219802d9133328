//! The der_a plant as a filter model, driven by recorded measurements.

use nalgebra::{DMatrix, DVector};

use super::{analytic_jacobian, ekf_run, ukf_run, CalibrationResult, FilterConfig, FilterModel, POSITIVE_FLOOR};
use crate::error::{Error, Result};
use crate::integrator::{rk4_step, rk4_step_with_jacobian, JacobianMode};
use crate::model::{equilibrium, DeraInputs, DeraParameters, EquilibriumOptions, MeasurementSet, ParamId};
use crate::scenario::{MeasurementRecord, ScenarioConfig};
use crate::system::{AugmentedSpec, DeraSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Ekf,
    Ukf,
}

impl std::str::FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ekf" => Ok(FilterKind::Ekf),
            "ukf" => Ok(FilterKind::Ukf),
            _ => Err(Error::InvalidArgument(format!("unknown filter `{s}`"))),
        }
    }
}

/// Where the EKF gets its right-hand-side Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianSource {
    Ad,
    Analytic,
}

/// Where the filter's exogenous inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    /// Source voltage rebuilt from measured V and currents; measured
    /// frequency.
    Measured,
    /// The scenario's own voltage profile and frequency waypoints.
    Scenario,
}

/// Record channel indices of a measurement set, in output order.
fn channel_indices(set: MeasurementSet) -> [usize; 3] {
    match set {
        MeasurementSet::Vpq => [0, 2, 3],
        MeasurementSet::Vidiq => [0, 4, 5],
    }
}

/// Exogenous inputs at each record. The source voltage behind `x_e` is
/// rebuilt from measured terminal voltage and currents; references come
/// from the scenario. Masked values hold the previous sample's.
pub fn reconstruct_inputs(
    records: &[MeasurementRecord],
    set: MeasurementSet,
    scenario: &ScenarioConfig,
    x_e: f64,
    source: InputSource,
) -> Result<Vec<DeraInputs>> {
    let first_v = records
        .iter()
        .find_map(|r| r.v)
        .ok_or_else(|| Error::DataFault {
            step: 0,
            reason: "no voltage measurement".into(),
        })?;
    let mut e_prev: Option<f64> = None;
    let mut f_prev = scenario.f_ref;
    let mut out = Vec::with_capacity(records.len());
    for (k, r) in records.iter().enumerate() {
        let currents = match set {
            MeasurementSet::Vpq => r.v.zip(r.p).zip(r.q).and_then(|((v, p), q)| {
                (v.abs() > 1e-6).then(|| (p / v, q / v))
            }),
            MeasurementSet::Vidiq => r.id.zip(r.iq),
        };
        let e = match (r.v, currents) {
            (Some(v), Some((id, iq))) => ((v - iq * x_e).powi(2) + (id * x_e).powi(2)).sqrt(),
            (Some(v), None) if x_e == 0.0 => v,
            _ => e_prev.ok_or_else(|| Error::DataFault {
                step: k,
                reason: "cannot rebuild the source voltage".into(),
            })?,
        };
        e_prev = Some(e);
        if let Some(f) = r.freq {
            f_prev = f;
        }
        let mut u = scenario.inputs_at(r.t);
        if source == InputSource::Measured {
            u.v = e;
            u.freq = f_prev;
        }
        u.v_ref0 = first_v;
        if let Some(next) = records.get(k + 1) {
            u.dt_input = next.t - r.t;
        } else if k > 0 {
            u.dt_input = r.t - records[k - 1].t;
        }
        if !u.v.is_finite() || u.v < 0.0 {
            return Err(Error::DataFault {
                step: k,
                reason: "invalid voltage".into(),
            });
        }
        out.push(u);
    }
    Ok(out)
}

const STABLE_RATIO: f64 = 0.5;
const MAX_SUBSTEPS: usize = 4096;

fn is_time_constant(id: ParamId) -> bool {
    use ParamId::*;
    matches!(id, TRv | TP | TIq | TG | TV | TRf | TPord)
}

/// der_a over a measurement record. Inputs are held over each interval at
/// the earlier sample's values.
#[derive(Debug, Clone)]
pub struct DeraFilterModel {
    pub sys: DeraSystem,
    pub inputs: Vec<DeraInputs>,
    pub times: Vec<f64>,
    obs: Vec<[Option<f64>; 3]>,
    pub substeps: usize,
    pub jacobian: JacobianSource,
    /// Floor on smooth-operator slopes inside Jacobians.
    pub floor: Option<f64>,
}

impl DeraFilterModel {
    pub fn new(
        sys: DeraSystem,
        records: &[MeasurementRecord],
        inputs: Vec<DeraInputs>,
        substeps: usize,
        jacobian: JacobianSource,
        floor: Option<f64>,
    ) -> Result<Self> {
        if records.len() != inputs.len() {
            return Err(Error::Contract("one input per record required".into()));
        }
        if substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be positive".into()));
        }
        if jacobian == JacobianSource::Analytic && !super::analytic_jacobian_supports(&sys.spec) {
            return Err(Error::Contract("analytic Jacobian does not cover this spec".into()));
        }
        let idx = channel_indices(sys.spec.measurement_set);
        let obs = records
            .iter()
            .map(|r| {
                let c = r.channels();
                idx.map(|i| c[i])
            })
            .collect();
        Ok(Self {
            times: records.iter().map(|r| r.t).collect(),
            sys,
            inputs,
            obs,
            substeps,
            jacobian,
            floor,
        })
    }

    /// Substep count and length for the interval after sample `k`. Short
    /// time constants get extra substeps so RK4 stays stable.
    fn steps(&self, k: usize, z: &DVector<f64>) -> (usize, f64) {
        let dt = self.times[k + 1] - self.times[k];
        let ns = self.sys.spec.states.len();
        let tau = self
            .sys
            .spec
            .params
            .iter()
            .zip(z.iter().skip(ns))
            .filter(|(id, _)| is_time_constant(**id))
            .map(|(_, v)| v.abs())
            .fold(f64::INFINITY, f64::min);
        let need = (dt / (STABLE_RATIO * tau)).ceil();
        let n = if need.is_finite() {
            (need as usize).clamp(self.substeps, MAX_SUBSTEPS)
        } else {
            self.substeps
        };
        (n, dt / n as f64)
    }

    fn rhs_jacobian(&self, z: &DVector<f64>, u: &DeraInputs) -> Result<DMatrix<f64>> {
        match self.jacobian {
            JacobianSource::Ad => self.sys.field_jacobian(z, u, self.floor),
            JacobianSource::Analytic => analytic_jacobian(&self.sys, z, u, self.floor),
        }
    }
}

impl FilterModel for DeraFilterModel {
    fn dim(&self) -> usize {
        self.sys.dim()
    }
    fn n_outputs(&self) -> usize {
        3
    }
    fn len(&self) -> usize {
        self.times.len()
    }
    fn time(&self, k: usize) -> f64 {
        self.times[k]
    }
    fn labels(&self) -> Vec<String> {
        self.sys.spec.labels()
    }
    fn n_states(&self) -> usize {
        self.sys.spec.states.len()
    }

    fn transition(&self, k: usize, z: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, h) = self.steps(k, z);
        let mut z = z.clone();
        for _ in 0..n {
            z = rk4_step(&z, &self.inputs[k], h, |z, u| self.sys.field(z, u))?;
        }
        Ok(z)
    }

    fn transition_with_jacobian(&self, k: usize, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (steps, h) = self.steps(k, z);
        let n = z.len();
        let mut z = z.clone();
        let mut f = DMatrix::identity(n, n);
        for _ in 0..steps {
            let s = rk4_step_with_jacobian(
                &z,
                &self.inputs[k],
                h,
                |z, u| self.sys.field(z, u),
                |z, u| self.rhs_jacobian(z, u),
                JacobianMode::Exact,
            )?;
            f = s.transition_jacobian.expect("requested") * f;
            z = s.next_state;
        }
        Ok((z, f))
    }

    fn measure(&self, k: usize, z: &DVector<f64>) -> DVector<f64> {
        self.sys.output(z, &self.inputs[k])
    }

    fn measurement_jacobian(&self, k: usize, z: &DVector<f64>) -> DMatrix<f64> {
        self.sys.output_jacobian(z, &self.inputs[k])
    }

    fn observation(&self, k: usize) -> Vec<Option<f64>> {
        self.obs[k].to_vec()
    }
}

/// Everything needed for one calibration run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub spec: AugmentedSpec,
    /// Supplies references, fixed parameters and smoothing.
    pub scenario: ScenarioConfig,
    /// Starting values of the estimated parameters.
    pub init: DeraParameters,
    pub filter: FilterKind,
    pub jacobian: JacobianSource,
    pub floor: Option<f64>,
    pub inputs: InputSource,
    /// Defaults from [`FilterConfig::defaults`] when absent.
    pub config: Option<FilterConfig>,
    pub schedule: PassSchedule,
}

/// Repeated passes over the same record. Each pass restarts from the
/// equilibrium of the previous estimate and carries the parameter block
/// of the previous posterior covariance forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassSchedule {
    pub passes: usize,
    /// Factor on the carried parameter covariance.
    pub inflation: f64,
    /// Fraction of the fresh prior added back to the carried diagonal.
    pub mix: f64,
    /// Trailing passes that carry the covariance unchanged.
    pub settle: usize,
}

impl PassSchedule {
    pub fn single() -> Self {
        Self {
            passes: 1,
            inflation: 1.0,
            mix: 0.0,
            settle: 0,
        }
    }
}

impl Default for PassSchedule {
    fn default() -> Self {
        Self {
            passes: 14,
            inflation: 4.0,
            mix: 0.1,
            settle: 2,
        }
    }
}

impl RunSpec {
    pub fn new(spec: AugmentedSpec, scenario: ScenarioConfig, init: DeraParameters, filter: FilterKind) -> Self {
        Self {
            spec,
            scenario,
            init,
            filter,
            jacobian: JacobianSource::Ad,
            floor: Some(crate::smoothing::DEFAULT_DERIVATIVE_FLOOR),
            inputs: InputSource::Measured,
            config: None,
            schedule: PassSchedule::default(),
        }
    }
}

/// Runs the pass schedule and returns the last pass together with the
/// augmented state the first pass started from.
pub fn calibrate(run: &RunSpec, records: &[MeasurementRecord]) -> Result<(CalibrationResult, DVector<f64>)> {
    if run.spec.flags != run.scenario.flags {
        return Err(Error::Contract(format!(
            "spec flags {} differ from scenario flags {}",
            run.spec.flags, run.scenario.flags
        )));
    }
    if records.len() < 2 {
        return Err(Error::InvalidArgument("need at least two records".into()));
    }
    let sch = run.schedule;
    if sch.passes == 0 || !(sch.inflation > 0.0) || !(sch.mix >= 0.0) {
        return Err(Error::Config("pass schedule needs passes >= 1, inflation > 0, mix >= 0".into()));
    }
    let inputs = reconstruct_inputs(records, run.spec.measurement_set, &run.scenario, run.init.x_e, run.inputs)?;
    let ns = run.spec.states.len();
    let mut params = run.init;
    let mut carried: Option<DMatrix<f64>> = None;
    let mut first: Option<DVector<f64>> = None;
    let mut last = None;
    for pass in 0..sch.passes {
        let (z0, sys) = start(run, &inputs, &params)?;
        let mut cfg = match &run.config {
            Some(c) => c.clone(),
            None => default_config(run, &z0, ns),
        };
        if let Some(pc) = &carried {
            let settling = pass + sch.settle >= sch.passes;
            let n = z0.len();
            let mut m = match &cfg.prior_covariance {
                Some(p) => p.clone(),
                None => DMatrix::from_diagonal(&cfg.initial_covariance),
            };
            for i in ns..n {
                for j in ns..n {
                    m[(i, j)] = if settling { pc[(i, j)] } else { pc[(i, j)] * sch.inflation };
                }
                if !settling {
                    m[(i, i)] += sch.mix * cfg.initial_covariance[i];
                }
            }
            cfg.prior_covariance = Some(m);
        }
        let model = DeraFilterModel::new(sys, records, inputs.clone(), run.scenario.substeps, run.jacobian, run.floor)?;
        let result = match run.filter {
            FilterKind::Ekf => ekf_run(&model, &cfg, &z0)?,
            FilterKind::Ukf => ukf_run(&model, &cfg, &z0)?,
        };
        let est = result.final_estimate();
        for (i, id) in run.spec.params.iter().enumerate() {
            params.set(*id, est[ns + i]);
        }
        carried = Some(result.final_covariance.clone());
        first.get_or_insert(z0);
        last = Some(result);
    }
    Ok((last.expect("at least one pass"), first.expect("at least one pass")))
}

fn start(run: &RunSpec, inputs: &[DeraInputs], params: &DeraParameters) -> Result<(DVector<f64>, DeraSystem)> {
    let sm = run.scenario.smoothing();
    let (x0, _) = equilibrium(
        &inputs[0],
        params,
        run.spec.flags,
        &sm,
        &EquilibriumOptions {
            tie_vref: false,
            ..EquilibriumOptions::default()
        },
    )?;
    let sys = DeraSystem::new(run.spec.clone(), *params, x0, sm);
    let z0 = sys.pack(&x0, params);
    Ok((z0, sys))
}

fn default_config(run: &RunSpec, z0: &DVector<f64>, ns: usize) -> FilterConfig {
    let mut c = FilterConfig::defaults(z0, ns, 3);
    c.seed = run.scenario.seed;
    for (i, id) in run.spec.params.iter().enumerate() {
        if id.is_positive() {
            c.bounds[ns + i] = Some((POSITIVE_FLOOR, f64::INFINITY));
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::synthesize;
    use crate::system::Preset;

    fn short_case1() -> ScenarioConfig {
        let mut s = ScenarioConfig::case1();
        s.duration = 1.0;
        s
    }

    #[test]
    fn inputs_recover_source_voltage() {
        let mut s = short_case1();
        s.params.x_e = 0.1;
        let syn = synthesize(&s).unwrap();
        let u = reconstruct_inputs(&syn.records, MeasurementSet::Vpq, &s, 0.1, InputSource::Measured).unwrap();
        for (ui, tr) in u.iter().zip(&syn.truth) {
            assert!((ui.v - tr.inputs.v).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_at_truth_without_noise() {
        let s = short_case1();
        let syn = synthesize(&s).unwrap();
        let spec = AugmentedSpec::preset(Preset::Case1Reduced, MeasurementSet::Vpq);
        let mut run = RunSpec::new(spec, s.clone(), s.params, FilterKind::Ekf);
        let init = {
            let (_, z0) = calibrate(&run, &syn.records).unwrap();
            z0
        };
        let mut cfg = FilterConfig::defaults(&init, 5, 3);
        cfg.process_noise.fill(1e-30);
        cfg.measurement_noise.fill(1e-12);
        cfg.initial_covariance.fill(1e-8);
        run.config = Some(cfg);
        let (r, _) = calibrate(&run, &syn.records).unwrap();
        for id in &run.spec.params {
            let v = r.value_of(id.key()).unwrap();
            let t = s.params.get(*id);
            assert!((v - t).abs() <= 1e-6 * t.abs(), "{id:?}: {v} vs {t}");
        }
    }

    #[test]
    fn flag_mismatch_is_a_contract_error() {
        let s = short_case1();
        let syn = synthesize(&s).unwrap();
        let spec = AugmentedSpec::preset(Preset::Case2Reduced, MeasurementSet::Vpq);
        let run = RunSpec::new(spec, s.clone(), s.params, FilterKind::Ekf);
        assert!(matches!(calibrate(&run, &syn.records), Err(Error::Contract(_))));
    }

    #[test]
    fn passes_refine_a_perturbed_start() {
        let mut s = short_case1();
        s.noise_std = [1e-5; 6];
        let syn = synthesize(&s).unwrap();
        let spec = AugmentedSpec::preset(Preset::Case1Reduced, MeasurementSet::Vpq);
        let mut init = s.params;
        init.set(ParamId::TPord, 1.3 * s.params.get(ParamId::TPord));
        let mut run = RunSpec::new(spec, s.clone(), init, FilterKind::Ekf);
        let err = |run: &RunSpec| {
            let (r, z0) = calibrate(run, &syn.records).unwrap();
            assert_eq!(z0[9], init.get(ParamId::TPord));
            (r.value_of("t_pord").unwrap() / s.params.get(ParamId::TPord) - 1.0).abs()
        };
        run.schedule = PassSchedule::single();
        let one = err(&run);
        run.schedule = PassSchedule::default();
        let many = err(&run);
        assert!(many < one, "{many} vs {one}");
        run.schedule.passes = 0;
        assert!(matches!(calibrate(&run, &syn.records), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_result() {
        let mut s = short_case1();
        s.noise_std = [1e-4; 6];
        let syn = synthesize(&s).unwrap();
        let spec = AugmentedSpec::preset(Preset::Case1Reduced, MeasurementSet::Vpq);
        let run = RunSpec::new(spec, s.clone(), s.params, FilterKind::Ukf);
        let a = calibrate(&run, &syn.records).unwrap();
        let b = calibrate(&run, &syn.records).unwrap();
        assert_eq!(a, b);
    }
}
