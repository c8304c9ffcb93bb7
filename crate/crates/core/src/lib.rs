//! Prescriptive sensitivity analysis for small Euclidean TSP instances.
//!
//! The crate covers the data side of the toolkit: instance generation and the
//! scaled metric, an exact Held–Karp solver with node removal and Big-M edge
//! forbidding, ground-truth sensitivity labels, heuristic baseline scorers,
//! frozen-representation ingestion, and ranking evaluation.
//!
//! Probe training lives in `tspsense-probes`; the HTTP what-if service in
//! `tspsense-service`.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod instances;
pub mod io;
pub mod labeling;
pub mod representations;
pub mod solver;

pub use error::{Error, Result};
pub use instances::{generate_instance, make_instance, scaled_distance, Instance, ScaledMetric};
pub use solver::{SolveConstraints, Tour};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The two sensitivity tasks. Candidates are nodes for `Removal` and the `n`
/// edges of the canonical optimal tour for `Forbid`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Removal,
    Forbid,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Removal => "removal",
            Task::Forbid => "forbid",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "removal" | "remove" | "node" => Ok(Task::Removal),
            "forbid" | "edge" => Ok(Task::Forbid),
            other => Err(Error::Invalid(format!("unknown task '{other}' (expected removal|forbid)"))),
        }
    }
}
