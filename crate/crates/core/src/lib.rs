pub mod bestapprox;
pub mod cli;
pub mod cones;
pub mod expr;
pub mod fixtures;
pub mod geometry;
pub mod instance;
pub mod oracles;
pub mod report;
pub mod tanconvex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::instance::InstanceError;
use crate::oracles::OracleError;
use crate::tanconvex::TanError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Tan(#[from] TanError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Input(String),
}

impl Error {
    /// 2 for bad input, 3 for numerical failures and inconclusive sampling.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Instance(_) | Error::Input(_) => 2,
            Error::Tan(TanError::DimensionMismatch { .. } | TanError::Infeasible { .. } | TanError::ZeroDirection)
            | Error::Geometry(GeometryError::DimensionMismatch { .. }) => 2,
            Error::Oracle(OracleError::Generator(_)) => 2,
            _ => 3,
        }
    }
}

/// How a reported quantity was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Computed from declared data or exact polyhedral algebra.
    Exact,
    /// Depends on sampling, grids or numerical differentiation.
    Sampled,
    /// Copied from the instance.
    Input,
}

impl Provenance {
    pub fn join(self, other: Provenance) -> Provenance {
        if self == Provenance::Sampled || other == Provenance::Sampled {
            Provenance::Sampled
        } else {
            Provenance::Exact
        }
    }
}
