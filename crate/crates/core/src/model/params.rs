use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

macro_rules! parameters {
    ($( $(#[$doc:meta])* $field:ident : $variant:ident = $default:expr ),+ $(,)?) => {
        /// Every named constant of the der_a model.
        ///
        /// Units: time constants in s, gains and limits in pu, ramp limits in
        /// pu/s, angles in rad.
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct DeraParameters {
            $( $(#[$doc])* pub $field: f64, )+
        }

        /// Identifier of one entry of [`DeraParameters`].
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum ParamId {
            $( $variant, )+
        }

        impl ParamId {
            pub const ALL: &'static [ParamId] = &[$( ParamId::$variant, )+];

            /// Key used in parameter files and reports.
            pub fn key(self) -> &'static str {
                match self {
                    $( ParamId::$variant => stringify!($field), )+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl Default for DeraParameters {
            fn default() -> Self {
                Self { $( $field: $default, )+ }
            }
        }

        impl DeraParameters {
            pub fn get(&self, id: ParamId) -> f64 {
                match id {
                    $( ParamId::$variant => self.$field, )+
                }
            }

            pub fn set(&mut self, id: ParamId, value: f64) {
                match id {
                    $( ParamId::$variant => self.$field = value, )+
                }
            }
        }
    };
}

parameters! {
    /// Voltage measurement filter.
    t_rv: TRv = 0.02,
    /// Active power filter.
    t_p: TP = 0.02,
    /// Reactive current command filter.
    t_iq: TIq = 0.02,
    /// Inverter current lag.
    t_g: TG = 0.02,
    /// Trip voltage filter.
    t_v: TV = 0.02,
    /// Frequency measurement filter.
    t_rf: TRf = 0.02,
    /// Power order lag.
    t_pord: TPord = 0.02,
    k_qv: KQv = 5.0,
    k_pg: KPg = 0.1,
    k_ig: KIg = 10.0,
    /// Anti-windup gain of the active power PI.
    k_w: KW = 1.0,
    d_dn: DDn = 20.0,
    d_up: DUp = 20.0,
    dbd1: Dbd1 = -0.05,
    dbd2: Dbd2 = 0.05,
    fbd1: Fbd1 = -0.0006,
    fbd2: Fbd2 = 0.0006,
    f_emin: FEmin = -99.0,
    f_emax: FEmax = 99.0,
    p_min: PMin = 0.0,
    p_max: PMax = 1.0,
    dp_min: DpMin = -99.0,
    dp_max: DpMax = 99.0,
    i_max: IMax = 1.2,
    i_qmax: IQmax = 1.2,
    i_qmin: IQmin = -1.2,
    i_dmax: IDmax = 1.2,
    i_dmin: IDmin = 0.0,
    i_qh: IQh = 1.0,
    i_ql: IQl = -1.0,
    /// Active current ramp limit.
    rrpwr: Rrpwr = 10.0,
    v_l0: VL0 = 0.44,
    v_l1: VL1 = 0.49,
    v_h0: VH0 = 1.2,
    v_h1: VH1 = 1.15,
    v_min: VMin = 0.46,
    v_max: VMax = 1.18,
    /// Stored for completeness, unused by the trip logic.
    t_l0: TL0 = 0.16,
    t_l1: TL1 = 0.16,
    /// Stored for completeness, unused by the trip logic.
    t_h0: TH0 = 0.16,
    t_h1: TH1 = 0.16,
    v_frac: VFrac = 0.7,
    /// Reactance between the source voltage and the terminal.
    x_e: XE = 0.1,
    /// atan(0.2 / 0.5), the default operating point.
    pfaref: Pfaref = 0.380_506_377_112_364_9,
}

pub const N_PARAMS: usize = ParamId::ALL.len();

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamId::ALL
            .iter()
            .copied()
            .find(|p| p.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{s}`")))
    }
}

impl ParamId {
    /// Time constants and gains, kept positive during estimation.
    pub fn is_positive(self) -> bool {
        use ParamId::*;
        matches!(
            self,
            TRv | TP | TIq | TG | TV | TRf | TPord | KQv | KPg | KIg | KW | DDn | DUp | IMax
        )
    }

    /// Saturation bounds, deadband edges and trip breakpoints.
    pub fn is_threshold(self) -> bool {
        use ParamId::*;
        matches!(
            self,
            Dbd1 | Dbd2
                | Fbd1
                | Fbd2
                | FEmin
                | FEmax
                | PMin
                | PMax
                | DpMin
                | DpMax
                | IMax
                | IQmax
                | IQmin
                | IDmax
                | IDmin
                | IQh
                | IQl
                | Rrpwr
                | VL0
                | VL1
                | VH0
                | VH1
                | VMin
                | VMax
        )
    }
}

impl DeraParameters {
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        let mut out = [0.0; N_PARAMS];
        for id in ParamId::ALL {
            out[id.index()] = self.get(*id);
        }
        out
    }

    pub fn from_array(values: &[f64; N_PARAMS]) -> Self {
        let mut p = Self::default();
        for id in ParamId::ALL {
            p.set(*id, values[id.index()]);
        }
        p
    }

    /// Checks the ordering and positivity invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for id in ParamId::ALL {
            let v = self.get(*id);
            if !v.is_finite() {
                return bad(format!("{id} is not finite"));
            }
            if id.is_positive() && v <= 0.0 {
                return bad(format!("{id} must be positive, got {v}"));
            }
        }
        let strict = [
            (ParamId::Dbd1, ParamId::Dbd2),
            (ParamId::Fbd1, ParamId::Fbd2),
            (ParamId::FEmin, ParamId::FEmax),
            (ParamId::PMin, ParamId::PMax),
            (ParamId::DpMin, ParamId::DpMax),
            (ParamId::IQl, ParamId::IQh),
            (ParamId::IQmin, ParamId::IQmax),
            (ParamId::IDmin, ParamId::IDmax),
            (ParamId::VL0, ParamId::VL1),
            (ParamId::VL1, ParamId::VH1),
            (ParamId::VH1, ParamId::VH0),
            (ParamId::VMin, ParamId::VL1),
            (ParamId::VH1, ParamId::VMax),
        ];
        for (lo, hi) in strict {
            if self.get(lo) >= self.get(hi) {
                return bad(format!("{lo} must be below {hi}"));
            }
        }
        if self.v_min < self.v_l0 {
            return bad("v_min must not be below v_l0".into());
        }
        if self.v_max > self.v_h0 {
            return bad("v_max must not exceed v_h0".into());
        }
        if !(0.0..=1.0).contains(&self.v_frac) {
            return bad("v_frac must lie in [0, 1]".into());
        }
        if self.rrpwr <= 0.0 {
            return bad("rrpwr must be positive".into());
        }
        if self.x_e < 0.0 {
            return bad("x_e must be nonnegative".into());
        }
        Ok(())
    }

    /// Flat key-value map, one entry per parameter.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        ParamId::ALL
            .iter()
            .map(|id| (id.key().to_string(), self.get(*id)))
            .collect()
    }

    /// Builds a parameter set from key-value pairs. Missing keys keep their
    /// defaults, unknown keys are rejected.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        let mut p = Self::default();
        for (k, v) in pairs {
            let id: ParamId = k.parse()?;
            p.set(id, v);
        }
        p.validate()?;
        Ok(p)
    }

    /// Parses a flat TOML document of numeric parameter values.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut pairs = Vec::with_capacity(table.len());
        for (k, v) in &table {
            let x = match v {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                _ => return Err(Error::Config(format!("parameter `{k}` must be numeric"))),
            };
            pairs.push((k.as_str(), x));
        }
        Self::from_pairs(pairs)
    }

    pub fn to_toml_string(&self) -> String {
        let mut s = String::new();
        for id in ParamId::ALL {
            s.push_str(&format!("{} = {:?}\n", id.key(), self.get(*id)));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        DeraParameters::default().validate().unwrap();
        assert_eq!(N_PARAMS, 44);
    }

    #[test]
    fn array_round_trip() {
        let mut p = DeraParameters::default();
        p.k_qv = 4.95;
        let q = DeraParameters::from_array(&p.to_array());
        assert_eq!(p, q);
        assert_eq!(p.get(ParamId::KQv), 4.95);
    }

    #[test]
    fn toml_round_trip_and_unknown_key() {
        let mut p = DeraParameters::default();
        p.t_rv = 0.21;
        let back = DeraParameters::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(p, back);
        let err = DeraParameters::from_toml_str("t_rvv = 1.0").unwrap_err();
        assert!(err.to_string().contains("t_rvv"));
        let partial = DeraParameters::from_toml_str("k_ig = 7").unwrap();
        assert_eq!(partial.k_ig, 7.0);
        assert_eq!(partial.t_g, 0.02);
    }

    #[test]
    fn ordering_violations_rejected() {
        let mut p = DeraParameters::default();
        p.dbd1 = 0.1;
        assert!(p.validate().is_err());
        let mut p = DeraParameters::default();
        p.t_g = 0.0;
        assert!(p.validate().is_err());
        let mut p = DeraParameters::default();
        p.v_min = p.v_l1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn pfaref_default_matches_operating_point() {
        assert!((DeraParameters::default().pfaref - (0.2f64 / 0.5).atan()).abs() < 1e-15);
    }
}
