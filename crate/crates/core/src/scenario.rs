//! Disturbance profiles and truth-model measurement synthesis.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::integrator::rk4_step;
use crate::model::{
    equilibrium, outputs, rhs, terminal_voltage, DeraInputs, DeraParameters, DeraState,
    EquilibriumOptions, FlagConfig, Smoothing, StateId,
};

/// Voltage sag followed by a slow ramp, all in pu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageProfileSpec {
    /// Sag depth.
    pub a: f64,
    /// Sag duration parameter; the default 60 gives a 0.1 s sag.
    pub b: f64,
    /// Time from onset to the end of the ramp, s.
    pub c: f64,
    /// Ramp start voltage.
    pub d: f64,
    /// Sag onset, s.
    pub t_event: f64,
}

impl Default for VoltageProfileSpec {
    fn default() -> Self {
        Self {
            a: 0.80,
            b: 60.0,
            c: 0.90,
            d: 0.90,
            t_event: 1.0,
        }
    }
}

impl VoltageProfileSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.a && self.a <= self.d && self.d <= 1.0) {
            return Err(Error::InvalidArgument("profile needs 0 < a <= d <= 1".into()));
        }
        if !(self.b > 0.0 && self.c > 0.0 && self.t_event >= 0.0) {
            return Err(Error::InvalidArgument("profile needs b > 0, c > 0, t_event >= 0".into()));
        }
        Ok(())
    }
}

impl VoltageProfileSpec {
    /// Sag length in seconds, `b / 600`.
    pub fn sag_duration(&self) -> f64 {
        self.b / 600.0
    }
}

/// Piecewise voltage: `a` during the sag, then `(d - a)/9 * (t - t_sag_end) + a`
/// until `t_event + c`, 1.0 elsewhere. The ramp is reproduced as written, so it
/// ends near 0.809 pu and jumps back to 1.0.
pub fn voltage_profile(t: f64, spec: &VoltageProfileSpec) -> f64 {
    let sag_end = spec.t_event + spec.sag_duration();
    if spec.t_event <= t && t < sag_end {
        spec.a
    } else if sag_end <= t && t < spec.t_event + spec.c {
        (spec.d - spec.a) / 9.0 * (t - sag_end) + spec.a
    } else {
        1.0
    }
}

/// Piecewise-linear signal, constant outside the given knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoints {
    knots: Vec<(f64, f64)>,
}

impl Waypoints {
    pub fn constant(v: f64) -> Self {
        Self {
            knots: vec![(0.0, v)],
        }
    }

    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidArgument("waypoints need at least one knot".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("waypoint times must increase".into()));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite waypoint".into()));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t < t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        k[k.len() - 1].1
    }
}

/// One sample; `None` marks a masked channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub t: f64,
    pub v: Option<f64>,
    pub freq: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub id: Option<f64>,
    pub iq: Option<f64>,
}

impl MeasurementRecord {
    pub fn channels(&self) -> [Option<f64>; 6] {
        [self.v, self.freq, self.p, self.q, self.id, self.iq]
    }

    pub fn from_channels(t: f64, c: [Option<f64>; 6]) -> Self {
        Self {
            t,
            v: c[0],
            freq: c[1],
            p: c[2],
            q: c[3],
            id: c[4],
            iq: c[5],
        }
    }
}

pub const CHANNELS: [&str; 6] = ["V", "freq", "P", "Q", "Id", "Iq"];

/// Everything needed to generate one data set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub flags: FlagConfig,
    pub params: DeraParameters,
    pub profile: VoltageProfileSpec,
    pub frequency: Waypoints,
    pub p_ref: Waypoints,
    pub q_ref: f64,
    pub f_ref: f64,
    pub duration: f64,
    pub sample_rate: f64,
    pub substeps: usize,
    /// Noise standard deviation per channel, ordered as [`CHANNELS`].
    pub noise_std: [f64; 6],
    pub seed: u64,
    pub sharpness: u32,
}

impl ScenarioConfig {
    /// Case 1 default: voltage event plus a power reference ramp.
    pub fn case1() -> Self {
        Self {
            flags: FlagConfig::CASE1,
            params: DeraParameters::default(),
            profile: VoltageProfileSpec::default(),
            frequency: Waypoints::constant(1.0),
            p_ref: Waypoints::new(vec![(0.2, 0.5), (0.6, 0.6)]).expect("static"),
            q_ref: 0.2,
            f_ref: 1.0,
            duration: 3.0,
            sample_rate: 30.0,
            substeps: 32,
            noise_std: [0.0; 6],
            seed: 0,
            sharpness: crate::smoothing::DEFAULT_SHARPNESS,
        }
    }

    /// Case 2 default: adds a ±0.01 pu frequency excursion from 1.5 s.
    pub fn case2() -> Self {
        Self {
            flags: FlagConfig::CASE2,
            frequency: Waypoints::new(vec![(1.5, 1.0), (1.65, 0.99), (2.0, 1.01), (2.25, 1.0)])
                .expect("static"),
            ..Self::case1()
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize + 1
    }

    pub fn frame(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn smoothing(&self) -> Smoothing {
        Smoothing {
            sharpness: self.sharpness,
            ..Smoothing::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.profile.validate()?;
        self.smoothing().validate()?;
        if !(self.duration > 0.0 && self.sample_rate > 0.0) {
            return Err(Error::InvalidArgument("duration and rate must be positive".into()));
        }
        let n = self.duration * self.sample_rate;
        if (n - n.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "duration times sample rate must be an integer".into(),
            ));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be positive".into()));
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("noise std must be nonnegative".into()));
        }
        Ok(())
    }

    /// Exogenous inputs at time `t`; `v_ref0` is filled in by the caller.
    pub fn inputs_at(&self, t: f64) -> DeraInputs {
        DeraInputs {
            v: voltage_profile(t, &self.profile),
            freq: self.frequency.at(t),
            v_ref0: 1.0,
            q_ref: self.q_ref,
            p_ref: self.p_ref.at(t),
            f_ref: self.f_ref,
            dt_input: self.frame(),
            trip_timer: 0.0,
        }
    }

    /// Parses a flat TOML scenario. Every key is optional; `[params]`
    /// overrides individual model parameters.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.into_config()
    }

    pub fn to_toml_string(&self) -> String {
        let list = |v: Vec<f64>| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut s = String::new();
        s.push_str(&format!("flags = \"{}\"\n", self.flags));
        s.push_str(&format!("duration = {:?}\n", self.duration));
        s.push_str(&format!("sample_rate = {:?}\n", self.sample_rate));
        s.push_str(&format!("substeps = {}\n", self.substeps));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("sharpness = {}\n", self.sharpness));
        s.push_str(&format!("q_ref = {:?}\nf_ref = {:?}\n", self.q_ref, self.f_ref));
        s.push_str(&format!(
            "profile_a = {:?}\nprofile_b = {:?}\nprofile_c = {:?}\nprofile_d = {:?}\nprofile_t_event = {:?}\n",
            self.profile.a, self.profile.b, self.profile.c, self.profile.d, self.profile.t_event
        ));
        let (ft, fv): (Vec<f64>, Vec<f64>) = self.frequency.knots().iter().copied().unzip();
        s.push_str(&format!("freq_times = [{}]\nfreq_values = [{}]\n", list(ft), list(fv)));
        let (pt, pv): (Vec<f64>, Vec<f64>) = self.p_ref.knots().iter().copied().unzip();
        s.push_str(&format!("p_ref_times = [{}]\np_ref_values = [{}]\n", list(pt), list(pv)));
        s.push_str(&format!("noise_std = [{}]\n", list(self.noise_std.to_vec())));
        s.push_str("\n[params]\n");
        s.push_str(&self.params.to_toml_string());
        s
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    flags: Option<String>,
    duration: Option<f64>,
    sample_rate: Option<f64>,
    substeps: Option<usize>,
    seed: Option<u64>,
    sharpness: Option<u32>,
    q_ref: Option<f64>,
    f_ref: Option<f64>,
    profile_a: Option<f64>,
    profile_b: Option<f64>,
    profile_c: Option<f64>,
    profile_d: Option<f64>,
    profile_t_event: Option<f64>,
    freq_times: Option<Vec<f64>>,
    freq_values: Option<Vec<f64>>,
    p_ref_times: Option<Vec<f64>>,
    p_ref_values: Option<Vec<f64>>,
    /// One value for every channel, or six values.
    noise_std: Option<toml::Value>,
    params: Option<BTreeMap<String, f64>>,
}

fn waypoints(t: Option<Vec<f64>>, v: Option<Vec<f64>>, name: &str) -> Result<Option<Waypoints>> {
    match (t, v) {
        (None, None) => Ok(None),
        (Some(t), Some(v)) if t.len() == v.len() => {
            Ok(Some(Waypoints::new(t.into_iter().zip(v).collect())?))
        }
        _ => Err(Error::Config(format!(
            "{name}_times and {name}_values must both be given with equal length"
        ))),
    }
}

impl RawScenario {
    fn into_config(self) -> Result<ScenarioConfig> {
        let flags: FlagConfig = match &self.flags {
            Some(f) => f.parse()?,
            None => FlagConfig::CASE1,
        };
        let mut c = if flags.fflag {
            ScenarioConfig::case2()
        } else {
            ScenarioConfig::case1()
        };
        c.flags = flags;
        if let Some(v) = self.duration {
            c.duration = v;
        }
        if let Some(v) = self.sample_rate {
            c.sample_rate = v;
        }
        if let Some(v) = self.substeps {
            c.substeps = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.sharpness {
            c.sharpness = v;
        }
        if let Some(v) = self.q_ref {
            c.q_ref = v;
        }
        if let Some(v) = self.f_ref {
            c.f_ref = v;
        }
        let pr = &mut c.profile;
        for (dst, src) in [
            (&mut pr.a, self.profile_a),
            (&mut pr.b, self.profile_b),
            (&mut pr.c, self.profile_c),
            (&mut pr.d, self.profile_d),
            (&mut pr.t_event, self.profile_t_event),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        if let Some(w) = waypoints(self.freq_times, self.freq_values, "freq")? {
            c.frequency = w;
        }
        if let Some(w) = waypoints(self.p_ref_times, self.p_ref_values, "p_ref")? {
            c.p_ref = w;
        }
        match self.noise_std {
            None => {}
            Some(toml::Value::Float(f)) => c.noise_std = [f; 6],
            Some(toml::Value::Integer(i)) => c.noise_std = [i as f64; 6],
            Some(toml::Value::Array(a)) if a.len() == 6 => {
                for (dst, v) in c.noise_std.iter_mut().zip(a) {
                    *dst = match v {
                        toml::Value::Float(f) => f,
                        toml::Value::Integer(i) => i as f64,
                        _ => return Err(Error::Config("noise_std entries must be numbers".into())),
                    };
                }
            }
            Some(_) => {
                return Err(Error::Config(
                    "noise_std must be a number or a list of six numbers".into(),
                ))
            }
        }
        if let Some(p) = self.params {
            c.params = DeraParameters::from_pairs(p.iter().map(|(k, v)| (k.as_str(), *v)))?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Noise-free state and channels at one sample time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub state: DeraState,
    pub inputs: DeraInputs,
    pub record: MeasurementRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub records: Vec<MeasurementRecord>,
    pub truth: Vec<TruthSample>,
}

impl Synthesis {
    pub fn truth_records(&self) -> Vec<MeasurementRecord> {
        self.truth.iter().map(|s| s.record).collect()
    }
}

fn exact_record(t: f64, x: &DeraState, u: &DeraInputs, p: &DeraParameters) -> MeasurementRecord {
    let y = outputs(x, u, p);
    MeasurementRecord {
        t,
        v: Some(y.v_d),
        freq: Some(u.freq),
        p: Some(y.p),
        q: Some(y.q),
        id: Some(y.i_d),
        iq: Some(y.i_q),
    }
}

/// Simulates the model through the configured scenario. Inputs are held
/// constant over each sample interval.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Vec<TruthSample>> {
    cfg.validate()?;
    let sm = cfg.smoothing();
    let p = cfg.params;
    let (x0, u0) = equilibrium(
        &cfg.inputs_at(0.0),
        &p,
        cfg.flags,
        &sm,
        &EquilibriumOptions::default(),
    )?;
    let v_ref0 = u0.v_ref0;
    let n = cfg.n_samples();
    let h = cfg.frame() / cfg.substeps as f64;
    let mut x = DVector::from_row_slice(&x0.0);
    let mut out = Vec::with_capacity(n);
    let mut timer_start: Option<f64> = None;
    for k in 0..n {
        let t = k as f64 * cfg.frame();
        let mut u = cfg.inputs_at(t);
        u.v_ref0 = v_ref0;
        let xs = DeraState(x.as_slice().try_into().expect("ten states"));
        let vt = terminal_voltage(xs[StateId::X4], xs[StateId::X10], u.v, p.x_e);
        if vt > p.v_l1 && vt < p.v_h1 {
            timer_start = None;
        } else if timer_start.is_none() {
            timer_start = Some(t);
        }
        u.trip_timer = timer_start.map_or(0.0, |s| t - s);
        out.push(TruthSample {
            t,
            state: xs,
            inputs: u,
            record: exact_record(t, &xs, &u, &p),
        });
        if k + 1 == n {
            break;
        }
        for s in 0..cfg.substeps {
            x = rk4_step(&x, &u, h, |z, u| {
                let d = rhs(
                    &DeraState(z.as_slice().try_into().expect("ten states")),
                    u,
                    &p,
                    cfg.flags,
                    &sm,
                )?;
                Ok(DVector::from_row_slice(&d.0))
            })
            .map_err(|e| e.at_step(k * cfg.substeps + s))?;
        }
    }
    Ok(out)
}

/// RMS difference of the P and Q channels between two aligned record
/// sequences. Samples where either side is masked are skipped.
pub fn pq_rmse(a: &[MeasurementRecord], b: &[MeasurementRecord]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("record counts differ: {} vs {}", a.len(), b.len())));
    }
    let mut acc = [(0.0, 0usize); 2];
    for (k, (ra, rb)) in a.iter().zip(b).enumerate() {
        if (ra.t - rb.t).abs() > 1e-9 {
            return Err(Error::Contract(format!("time stamps differ at row {k}: {} vs {}", ra.t, rb.t)));
        }
        for (slot, (x, y)) in acc.iter_mut().zip([(ra.p, rb.p), (ra.q, rb.q)]) {
            if let (Some(x), Some(y)) = (x, y) {
                slot.0 += (x - y).powi(2);
                slot.1 += 1;
            }
        }
    }
    let rms = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { (s / n as f64).sqrt() };
    Ok((rms(acc[0]), rms(acc[1])))
}

/// Truth simulation plus seeded Gaussian noise on every channel.
pub fn synthesize(cfg: &ScenarioConfig) -> Result<Synthesis> {
    let truth = simulate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let records = truth
        .iter()
        .map(|s| {
            let mut c = s.record.channels();
            for (ch, sd) in c.iter_mut().zip(cfg.noise_std) {
                let z: f64 = std_normal.sample(&mut rng);
                if sd > 0.0 {
                    *ch = ch.map(|v| v + sd * z);
                }
            }
            MeasurementRecord::from_channels(s.t, c)
        })
        .collect();
    Ok(Synthesis { records, truth })
}
