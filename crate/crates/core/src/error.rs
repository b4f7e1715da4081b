use alloc::string::String;

use crate::MachineId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("multiplier is outside the dual domain{}", at(.machine))]
    InfeasibleMultiplier { machine: Option<MachineId> },

    #[error(
        "multiplier diverged (|lambda| = {norm:.3e}); the hypothesised mean is outside or on the \
         boundary of the convex hull of the data{}",
        at(.machine)
    )]
    HullViolation {
        machine: Option<MachineId>,
        norm: f64,
    },

    #[error(
        "Newton solver stopped after {iterations} iterations with gradient norm {gradient_norm:.3e}{}",
        at(.machine)
    )]
    MaxIterations {
        machine: Option<MachineId>,
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("machine selection kept {selected} of {machines} machines; an honest strict majority is required")]
    SelectionDegenerate { selected: usize, machines: usize },

    #[error("region centre is not inside the region (statistic {statistic:.6} >= critical value {critical:.6})")]
    CenterOutsideRegion { statistic: f64, critical: f64 },

    #[error("transport failure: {0}")]
    Transport(String),
}

fn at(machine: &Option<MachineId>) -> String {
    match machine {
        Some(id) => alloc::format!(" on machine {id}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a machine id to the solver-level variants that carry one.
    pub fn on_machine(self, id: MachineId) -> Self {
        match self {
            Error::InfeasibleMultiplier { .. } => Error::InfeasibleMultiplier { machine: Some(id) },
            Error::HullViolation { norm, .. } => Error::HullViolation {
                machine: Some(id),
                norm,
            },
            Error::MaxIterations {
                iterations,
                gradient_norm,
                ..
            } => Error::MaxIterations {
                machine: Some(id),
                iterations,
                gradient_norm,
            },
            other => other,
        }
    }

    /// Machine the error was raised on, if known.
    pub fn machine(&self) -> Option<MachineId> {
        match self {
            Error::InfeasibleMultiplier { machine }
            | Error::HullViolation { machine, .. }
            | Error::MaxIterations { machine, .. } => *machine,
            _ => None,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
