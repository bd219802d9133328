use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite value appeared while evaluating the model.
    #[error("simulation fault in {state}{}", fmt_step(*.step))]
    SimulationFault { state: String, step: Option<usize> },

    #[error("observability fault at Lie order {order}, output {output}")]
    ObservabilityFault { order: usize, output: usize },

    #[error("numerical fault at point {point}: {reason}")]
    NumericalFault { point: usize, reason: String },

    #[error("filter diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("data fault at step {step}: {reason}")]
    DataFault { step: usize, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: u64,
        column: usize,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_step(step: Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

impl Error {
    /// True for faults caused by numerics rather than by inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SimulationFault { .. }
                | Error::ObservabilityFault { .. }
                | Error::NumericalFault { .. }
                | Error::Divergence { .. }
        )
    }

    /// Attach a step index to a simulation fault that lacks one.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::SimulationFault { state, step: None } => Error::SimulationFault {
                state,
                step: Some(step),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
