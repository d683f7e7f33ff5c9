//! Experiment harness: convergence studies, the stiffness demonstration and
//! the local-order probe, plus the built-in example problems.

mod probe;
mod stability;
mod study;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fbm::FbmError;
use crate::fields::catalog;
use crate::grid::GridError;
use crate::schemes::{Problem, SchemeError, SchemeId};

pub use probe::{local_error_probe, theoretical_local_order, ProbeConfig, ProbeResult, SmoothDriver};
pub use stability::{sign_flips, stability_demo, StabilityOptions, StabilityReport};
pub use study::{
    eoc, run_study, write_study, AggregateRow, ErrorRow, ErrorTable, SeedResult, StudyConfig,
    StudyReport,
};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("errors must be positive, got {0}")]
    NonPositiveError(f64),
    #[error("step sizes must be strictly decreasing")]
    StepsNotDecreasing,
    #[error(transparent)]
    Fbm(#[from] FbmError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// The three experiments of the numerical section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemId {
    /// `dy = (y - y³) dt + dB^H`, `y(0) = -3`.
    Example1,
    /// `dy = -70 y dt + dB^H`, `y(0) = 2.7`.
    Example2,
    /// 2-d cubic drift with multiplicative noise, `y(0) = (10, -10)`.
    Example3,
}

impl ProblemId {
    pub const ALL: [ProblemId; 3] = [ProblemId::Example1, ProblemId::Example2, ProblemId::Example3];

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::Example1 => "example1",
            ProblemId::Example2 => "example2",
            ProblemId::Example3 => "example3",
        }
    }

    pub fn problem(self) -> Problem {
        let p = match self {
            ProblemId::Example1 => Problem::additive(catalog::example1_drift(), vec![-3.0], 1.0),
            ProblemId::Example2 => Problem::additive(catalog::example2_drift(), vec![2.7], 1.0),
            ProblemId::Example3 => Problem::multiplicative(
                catalog::example3_drift(),
                catalog::example3_diffusion(),
                vec![10.0, -10.0],
                1.0,
            ),
        };
        p.expect("catalogue dimensions agree")
    }

    pub fn default_hurst(self) -> Vec<f64> {
        match self {
            ProblemId::Example1 => vec![0.5],
            ProblemId::Example2 => vec![0.75],
            ProblemId::Example3 => vec![5.0 / 12.0, 5.0 / 12.0],
        }
    }

    pub fn default_scheme(self) -> SchemeId {
        match self {
            ProblemId::Example1 | ProblemId::Example2 => SchemeId::ImplicitEuler,
            ProblemId::Example3 => SchemeId::SimplifiedMilstein,
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProblemId::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown problem {s:?}; expected example1, example2 or example3"))
    }
}
