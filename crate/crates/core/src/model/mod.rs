//! The der_a plant.

mod dynamics;
mod equilibrium;
mod logic;
mod params;

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

pub(crate) use dynamics::{check_finite, measure_generic};
pub use dynamics::{outputs, outputs_at_terminal, rhs, rhs_generic, terminal_voltage, Smoothing};
pub use equilibrium::{equilibrium, EquilibriumOptions};
pub use logic::{current_limits, current_limits_generic, voltage_trip, CurrentLimits};
pub use params::{DeraParameters, ParamId, N_PARAMS};

use crate::error::{Error, Result};

pub const N_STATES: usize = 10;

/// Index of one of the ten dynamic states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateId {
    /// Filtered terminal voltage.
    X1,
    /// Filtered generated active power.
    X2,
    /// Reactive current from Q or power factor control.
    X3,
    /// Injected reactive current.
    X4,
    /// Trip voltage multiplier.
    X5,
    /// Filtered frequency.
    X6,
    /// Active power control effort.
    X7,
    /// Ramped power order.
    X8,
    /// Generated active power.
    X9,
    /// Injected active current.
    X10,
}

impl StateId {
    pub const ALL: [StateId; N_STATES] = [
        StateId::X1,
        StateId::X2,
        StateId::X3,
        StateId::X4,
        StateId::X5,
        StateId::X6,
        StateId::X7,
        StateId::X8,
        StateId::X9,
        StateId::X10,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9", "x10"][self.index()]
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StateId::ALL
            .iter()
            .copied()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown state `{s}`")))
    }
}

/// The four control-mode flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlagConfig {
    /// κ1: power factor control instead of constant Q.
    pub pflag: bool,
    /// κ2: active power / frequency control.
    pub fflag: bool,
    /// κ3: voltage tripping.
    pub vtripflag: bool,
    /// κ4: active current priority.
    pub pqflag: bool,
}

impl FlagConfig {
    pub const CASE1: FlagConfig = FlagConfig {
        pflag: false,
        fflag: false,
        vtripflag: false,
        pqflag: false,
    };

    pub const CASE2: FlagConfig = FlagConfig {
        pflag: true,
        fflag: true,
        vtripflag: false,
        pqflag: false,
    };

    pub fn from_bits(k1: u8, k2: u8, k3: u8, k4: u8) -> Result<Self> {
        let b = |v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::InvalidArgument(format!("flag value {v} is not binary"))),
        };
        Ok(Self {
            pflag: b(k1)?,
            fflag: b(k2)?,
            vtripflag: b(k3)?,
            pqflag: b(k4)?,
        })
    }

    /// States held at their initial value under these flags.
    pub fn is_frozen(&self, s: StateId) -> bool {
        match s {
            StateId::X5 => !self.vtripflag,
            StateId::X6 | StateId::X7 => !self.fflag,
            StateId::X2 => !self.fflag && !self.pflag,
            _ => false,
        }
    }

    pub fn active_states(&self) -> Vec<StateId> {
        StateId::ALL
            .iter()
            .copied()
            .filter(|s| !self.is_frozen(*s))
            .collect()
    }

    pub fn bits(&self) -> [u8; 4] {
        [
            self.pflag as u8,
            self.fflag as u8,
            self.vtripflag as u8,
            self.pqflag as u8,
        ]
    }
}

impl FromStr for FlagConfig {
    type Err = Error;

    /// Accepts `case1`, `case2` or four binary digits such as `1100`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "case1" => Ok(Self::CASE1),
            "case2" => Ok(Self::CASE2),
            t if t.len() == 4 && t.bytes().all(|c| c == b'0' || c == b'1') => {
                let d: Vec<u8> = t.bytes().map(|c| c - b'0').collect();
                Self::from_bits(d[0], d[1], d[2], d[3])
            }
            _ => Err(Error::Config(format!("unknown flag preset `{s}`"))),
        }
    }
}

impl fmt::Display for FlagConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.bits();
        write!(f, "{a}{b}{c}{d}")
    }
}

/// The ten dynamic states, indexed as x1..x10.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeraState(pub [f64; N_STATES]);

impl Index<StateId> for DeraState {
    type Output = f64;
    fn index(&self, s: StateId) -> &f64 {
        &self.0[s.index()]
    }
}

impl IndexMut<StateId> for DeraState {
    fn index_mut(&mut self, s: StateId) -> &mut f64 {
        &mut self.0[s.index()]
    }
}

/// Exogenous signals, held constant over an integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeraInputs {
    /// Source voltage magnitude behind `x_e`. With `x_e = 0` this is the
    /// terminal voltage.
    pub v: f64,
    pub freq: f64,
    pub v_ref0: f64,
    pub q_ref: f64,
    pub p_ref: f64,
    pub f_ref: f64,
    /// Sampling interval used by the ramp-rate block.
    pub dt_input: f64,
    /// Seconds since the terminal voltage left the normal band.
    pub trip_timer: f64,
}

impl Default for DeraInputs {
    fn default() -> Self {
        Self {
            v: 1.0,
            freq: 1.0,
            v_ref0: 1.0,
            q_ref: 0.2,
            p_ref: 0.5,
            f_ref: 1.0,
            dt_input: 1.0 / 30.0,
            trip_timer: 0.0,
        }
    }
}

impl DeraInputs {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v,
            self.freq,
            self.v_ref0,
            self.q_ref,
            self.p_ref,
            self.f_ref,
            self.dt_input,
            self.trip_timer,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input".into()));
        }
        if self.v < 0.0 {
            return Err(Error::InvalidArgument("voltage must be nonnegative".into()));
        }
        if self.dt_input <= 0.0 {
            return Err(Error::InvalidArgument("dt_input must be positive".into()));
        }
        Ok(())
    }
}

/// Interface quantities in the terminal-voltage frame (`v_q = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeraOutputs {
    pub p: f64,
    pub q: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub v_d: f64,
    pub v_q: f64,
    pub e_d: f64,
    pub e_q: f64,
    /// Angle of the source voltage relative to the terminal voltage.
    pub theta: f64,
}

/// Which three channels feed the filters and the observability map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MeasurementSet {
    /// Terminal voltage, active and reactive power.
    #[default]
    Vpq,
    /// Terminal voltage, active and reactive current.
    Vidiq,
}

impl MeasurementSet {
    pub fn channels(self) -> [&'static str; 3] {
        match self {
            MeasurementSet::Vpq => ["V", "P", "Q"],
            MeasurementSet::Vidiq => ["V", "Id", "Iq"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeasurementSet::Vpq => "vpq",
            MeasurementSet::Vidiq => "vidiq",
        }
    }
}

impl FromStr for MeasurementSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vpq" => Ok(Self::Vpq),
            "vidiq" => Ok(Self::Vidiq),
            _ => Err(Error::Config(format!("unknown measurement set `{s}`"))),
        }
    }
}

impl fmt::Display for MeasurementSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_select_documented_active_states() {
        let names = |f: FlagConfig| -> Vec<&str> {
            f.active_states().iter().map(|s| s.name()).collect()
        };
        assert_eq!(names(FlagConfig::CASE1), ["x1", "x3", "x4", "x8", "x9", "x10"]);
        assert_eq!(names(FlagConfig::CASE2).len(), 9);
        assert!(FlagConfig::CASE2.is_frozen(StateId::X5));
    }

    #[test]
    fn flag_parsing() {
        assert_eq!("case2".parse::<FlagConfig>().unwrap(), FlagConfig::CASE2);
        assert_eq!("1100".parse::<FlagConfig>().unwrap(), FlagConfig::CASE2);
        assert!("1200".parse::<FlagConfig>().is_err());
        assert!(FlagConfig::from_bits(0, 0, 2, 0).is_err());
        assert_eq!(FlagConfig::CASE2.to_string(), "1100");
    }
}
