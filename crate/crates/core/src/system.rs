//! Parameter-augmented der_a: which states and parameters form the
//! estimation vector, and the model evaluated on that vector.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::ad::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::model::{check_finite, measure_generic};
use crate::model::{
    rhs_generic, DeraInputs, DeraParameters, DeraState, FlagConfig, MeasurementSet, ParamId,
    Smoothing, StateId, N_PARAMS, N_STATES,
};

/// Ordered augmented vector `[states, parameters]` plus the flags and the
/// measurement set it is analysed or estimated with.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSpec {
    pub flags: FlagConfig,
    pub states: Vec<StateId>,
    pub params: Vec<ParamId>,
    pub measurement_set: MeasurementSet,
}

/// Named augmentations used throughout the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Case 1 states with every associated parameter (23 entries).
    Case1Full,
    /// Case 1 after removing thresholds and the ramp state (10 entries).
    Case1Reduced,
    /// Case 2 states with every associated parameter (36 entries).
    Case2Full,
    /// Case 2 after removing thresholds and the ramp state (14 entries).
    Case2Reduced,
    /// Every moving Case 2 state plus the eleven calibrated parameters.
    Case2Calibration,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Case1Full,
        Preset::Case1Reduced,
        Preset::Case2Full,
        Preset::Case2Reduced,
        Preset::Case2Calibration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Case1Full => "case1-full",
            Preset::Case1Reduced => "case1-reduced",
            Preset::Case2Full => "case2-full",
            Preset::Case2Reduced => "case2-reduced",
            Preset::Case2Calibration => "case2-calibration",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

const CASE1_PARAMS: [ParamId; 17] = [
    ParamId::PMax,
    ParamId::PMin,
    ParamId::IDmax,
    ParamId::IDmin,
    ParamId::IQh,
    ParamId::IQl,
    ParamId::KQv,
    ParamId::TIq,
    ParamId::TPord,
    ParamId::TRv,
    ParamId::TG,
    ParamId::IQmax,
    ParamId::IQmin,
    ParamId::Dbd1,
    ParamId::Dbd2,
    ParamId::DpMax,
    ParamId::DpMin,
];

const CASE2_EXTRA_PARAMS: [ParamId; 10] = [
    ParamId::Fbd1,
    ParamId::Fbd2,
    ParamId::KIg,
    ParamId::KPg,
    ParamId::DDn,
    ParamId::DUp,
    ParamId::TP,
    ParamId::TRf,
    ParamId::FEmax,
    ParamId::FEmin,
];

/// The eleven calibrated parameters, in reporting order.
pub const CALIBRATED_PARAMS: [ParamId; 11] = [
    ParamId::TRv,
    ParamId::KQv,
    ParamId::TG,
    ParamId::TIq,
    ParamId::TPord,
    ParamId::TP,
    ParamId::KPg,
    ParamId::KIg,
    ParamId::TRf,
    ParamId::DDn,
    ParamId::DUp,
];

impl AugmentedSpec {
    pub fn new(
        flags: FlagConfig,
        states: Vec<StateId>,
        params: Vec<ParamId>,
        measurement_set: MeasurementSet,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &states {
            if !seen.insert(s.name()) {
                return Err(Error::Contract(format!("duplicate state {s}")));
            }
        }
        for p in &params {
            if !seen.insert(p.key()) {
                return Err(Error::Contract(format!("duplicate parameter {p}")));
            }
        }
        if states.is_empty() && params.is_empty() {
            return Err(Error::Contract("empty augmented vector".into()));
        }
        Ok(Self {
            flags,
            states,
            params,
            measurement_set,
        })
    }

    pub fn preset(preset: Preset, measurement_set: MeasurementSet) -> Self {
        use StateId::*;
        let (flags, states, params): (FlagConfig, Vec<StateId>, Vec<ParamId>) = match preset {
            Preset::Case1Full => (
                FlagConfig::CASE1,
                vec![X1, X3, X4, X8, X9, X10],
                CASE1_PARAMS.to_vec(),
            ),
            Preset::Case1Reduced => (
                FlagConfig::CASE1,
                vec![X1, X3, X4, X9, X10],
                vec![
                    ParamId::TRv,
                    ParamId::KQv,
                    ParamId::TG,
                    ParamId::TIq,
                    ParamId::TPord,
                ],
            ),
            Preset::Case2Full => (
                FlagConfig::CASE2,
                vec![X1, X2, X3, X4, X6, X7, X8, X9, X10],
                CASE1_PARAMS
                    .iter()
                    .chain(CASE2_EXTRA_PARAMS.iter())
                    .copied()
                    .collect(),
            ),
            Preset::Case2Reduced => (
                FlagConfig::CASE2,
                vec![X1, X2, X3, X4, X6, X7, X9, X10],
                vec![
                    ParamId::TP,
                    ParamId::TRf,
                    ParamId::KPg,
                    ParamId::KIg,
                    ParamId::DDn,
                    ParamId::DUp,
                ],
            ),
            Preset::Case2Calibration => (
                FlagConfig::CASE2,
                vec![X1, X2, X3, X4, X6, X7, X8, X9, X10],
                CALIBRATED_PARAMS.to_vec(),
            ),
        };
        Self {
            flags,
            states,
            params,
            measurement_set,
        }
    }

    pub fn dim(&self) -> usize {
        self.states.len() + self.params.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.states
            .iter()
            .map(|s| s.name().to_string())
            .chain(self.params.iter().map(|p| p.key().to_string()))
            .collect()
    }

    pub fn param_position(&self, id: ParamId) -> Option<usize> {
        self.params
            .iter()
            .position(|p| *p == id)
            .map(|i| i + self.states.len())
    }

    /// Same augmentation with entry `label` dropped.
    pub fn without(&self, label: &str) -> Self {
        let mut s = self.clone();
        s.states.retain(|x| x.name() != label);
        s.params.retain(|x| x.key() != label);
        s
    }

    /// Parses a flat TOML spec: `preset`, or `flags` + `states` +
    /// `parameters`, with an optional `measurement_set`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            preset: Option<String>,
            flags: Option<String>,
            states: Option<Vec<String>>,
            parameters: Option<Vec<String>>,
            measurement_set: Option<String>,
        }
        let raw: Raw = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let set = match &raw.measurement_set {
            Some(s) => s.parse()?,
            None => MeasurementSet::Vpq,
        };
        if let Some(p) = raw.preset {
            if raw.flags.is_some() || raw.states.is_some() || raw.parameters.is_some() {
                return Err(Error::Config(
                    "`preset` cannot be combined with flags, states or parameters".into(),
                ));
            }
            return Ok(Self::preset(p.parse()?, set));
        }
        let flags: FlagConfig = raw
            .flags
            .ok_or_else(|| Error::Config("spec needs `preset` or `flags`".into()))?
            .parse()?;
        let states = raw
            .states
            .unwrap_or_default()
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<StateId>>>()?;
        let params = raw
            .parameters
            .unwrap_or_default()
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<ParamId>>>()?;
        Self::new(flags, states, params, set)
    }

    pub fn to_toml_string(&self) -> String {
        let q = |v: Vec<String>| {
            v.iter()
                .map(|s| format!("\"{s}\""))
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            "flags = \"{}\"\nstates = [{}]\nparameters = [{}]\nmeasurement_set = \"{}\"\n",
            self.flags,
            q(self.states.iter().map(|s| s.name().to_string()).collect()),
            q(self.params.iter().map(|p| p.key().to_string()).collect()),
            self.measurement_set
        )
    }
}

impl fmt::Display for AugmentedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "flags {} / {} / [{}]",
            self.flags,
            self.measurement_set,
            self.labels().join(", ")
        )
    }
}

/// der_a evaluated on an augmented vector. Entries outside the spec are
/// taken from `template` and `params` and held fixed.
#[derive(Debug, Clone)]
pub struct DeraSystem {
    pub spec: AugmentedSpec,
    pub params: DeraParameters,
    pub template: DeraState,
    pub smoothing: Smoothing,
}

impl DeraSystem {
    pub fn new(
        spec: AugmentedSpec,
        params: DeraParameters,
        template: DeraState,
        smoothing: Smoothing,
    ) -> Self {
        Self {
            spec,
            params,
            template,
            smoothing,
        }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Augmented vector from a full state and parameter set.
    pub fn pack(&self, x: &DeraState, p: &DeraParameters) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.spec
                .states
                .iter()
                .map(|s| x[*s])
                .chain(self.spec.params.iter().map(|id| p.get(*id))),
        )
    }

    /// Full state and parameter set from an augmented vector.
    pub fn unpack(&self, z: &DVector<f64>) -> (DeraState, DeraParameters) {
        let (x, p) = self.full(z.as_slice());
        (DeraState(x), DeraParameters::from_array(&p))
    }

    pub(crate) fn full<S: Scalar>(&self, z: &[S]) -> ([S; N_STATES], [S; N_PARAMS]) {
        let mut x = self.template.0.map(S::cst);
        let mut p = self.params.to_array().map(S::cst);
        let ns = self.spec.states.len();
        for (i, s) in self.spec.states.iter().enumerate() {
            x[s.index()] = z[i];
        }
        for (i, id) in self.spec.params.iter().enumerate() {
            p[id.index()] = z[ns + i];
        }
        (x, p)
    }

    pub(crate) fn field_with<S: Scalar>(&self, z: &[S], u: &DeraInputs, sm: &Smoothing) -> Vec<S> {
        let (x, p) = self.full(z);
        let dx = rhs_generic(&x, &p, u, self.spec.flags, sm);
        let mut out: Vec<S> = self.spec.states.iter().map(|s| dx[s.index()]).collect();
        out.resize(self.dim(), S::cst(0.0));
        out
    }

    pub fn field_generic<S: Scalar>(&self, z: &[S], u: &DeraInputs) -> Vec<S> {
        self.field_with(z, u, &self.smoothing)
    }

    pub fn output_generic<S: Scalar>(&self, z: &[S], u: &DeraInputs) -> [S; 3] {
        let (x, p) = self.full(z);
        measure_generic(&x, &p, u.v, self.spec.measurement_set)
    }

    /// Time derivative of the augmented vector; parameters have none.
    pub fn field(&self, z: &DVector<f64>, u: &DeraInputs) -> Result<DVector<f64>> {
        let (x, p) = self.full(z.as_slice());
        let dx = rhs_generic(&x, &p, u, self.spec.flags, &self.smoothing);
        check_finite(&dx)?;
        let mut out = DVector::zeros(self.dim());
        for (i, s) in self.spec.states.iter().enumerate() {
            out[i] = dx[s.index()];
        }
        Ok(out)
    }

    pub fn output(&self, z: &DVector<f64>, u: &DeraInputs) -> DVector<f64> {
        let y = self.output_generic(z.as_slice(), u);
        DVector::from_row_slice(&y)
    }

    /// Forward-mode Jacobian of [`field`](Self::field). Smooth-operator
    /// slopes are floored at `floor` when given.
    pub fn field_jacobian(
        &self,
        z: &DVector<f64>,
        u: &DeraInputs,
        floor: Option<f64>,
    ) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let sm = self.smoothing.with_floor(floor);
        let mut jac = DMatrix::zeros(n, n);
        let mut zd: Vec<Dual> = z.iter().map(|v| Dual::cst(*v)).collect();
        for j in 0..n {
            zd[j].d = 1.0;
            let col = self.field_with(&zd, u, &sm);
            zd[j].d = 0.0;
            for (i, c) in col.iter().enumerate() {
                jac[(i, j)] = c.d;
            }
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationFault {
                state: "field Jacobian".into(),
                step: None,
            });
        }
        Ok(jac)
    }

    /// Jacobian of the measurement map.
    pub fn output_jacobian(&self, z: &DVector<f64>, u: &DeraInputs) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(3, n);
        let mut zd: Vec<Dual> = z.iter().map(|v| Dual::cst(*v)).collect();
        for j in 0..n {
            zd[j].d = 1.0;
            let y = self.output_generic(&zd, u);
            zd[j].d = 0.0;
            for i in 0..3 {
                h[(i, j)] = y[i].d;
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_dimensions() {
        let d = |p| AugmentedSpec::preset(p, MeasurementSet::Vpq).dim();
        assert_eq!(d(Preset::Case1Full), 23);
        assert_eq!(d(Preset::Case1Reduced), 10);
        assert_eq!(d(Preset::Case2Full), 36);
        assert_eq!(d(Preset::Case2Reduced), 14);
        assert_eq!(d(Preset::Case2Calibration), 20);
    }

    #[test]
    fn duplicates_rejected() {
        let r = AugmentedSpec::new(
            FlagConfig::CASE1,
            vec![StateId::X1, StateId::X1],
            vec![],
            MeasurementSet::Vpq,
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn toml_round_trip() {
        let s = AugmentedSpec::preset(Preset::Case2Reduced, MeasurementSet::Vidiq);
        let back = AugmentedSpec::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
        let p = AugmentedSpec::from_toml_str("preset = \"case1-reduced\"").unwrap();
        assert_eq!(p.dim(), 10);
        assert!(AugmentedSpec::from_toml_str("preset = \"case1-reduced\"\nfoo = 1").is_err());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let spec = AugmentedSpec::preset(Preset::Case2Calibration, MeasurementSet::Vpq);
        let mut p = DeraParameters::default();
        p.k_pg = 0.45;
        let x = DeraState([0.9, 0.5, 0.2, 0.21, 1.0, 1.0, 0.5, 0.5, 0.5, 0.55]);
        let sys = DeraSystem::new(spec, DeraParameters::default(), x, Smoothing::default());
        let z = sys.pack(&x, &p);
        let (x2, p2) = sys.unpack(&z);
        assert_eq!(x, x2);
        assert_eq!(p, p2);
    }
}
