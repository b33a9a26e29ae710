//! Configuration pieces shared by the quadrotor experiments.

use std::fs;
use std::path::{Path, PathBuf};

use foac_core::quadrotor::{self, BoundSpec, CostWeights, QuadrotorParams, ScenarioConfig};
use foac_core::{LtiModel, MpcProblem};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Plant, weights and bounds of a quadrotor experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrotorSetup {
    pub quadrotor: QuadrotorParams,
    /// Problem file whose `A`, `B` and `dt` replace the built-in
    /// linearization. Relative paths resolve against the config file.
    pub model_file: Option<PathBuf>,
    pub weights: CostWeights,
    pub bounds: BoundSpec,
}

impl QuadrotorSetup {
    pub fn model(&self) -> Result<LtiModel> {
        match &self.model_file {
            Some(path) => Ok(MpcProblem::load(path)?.model),
            None => Ok(quadrotor::build_quadrotor_model(&self.quadrotor)?),
        }
    }

    pub fn problem(&self, scenario: &ScenarioConfig) -> Result<MpcProblem> {
        Ok(quadrotor::scenario_problem(self.model()?, &self.weights, &self.bounds, scenario)?)
    }

    /// Rewrites a relative `model_file` against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.model_file {
            if p.is_relative() {
                self.model_file = Some(base.join(p));
            }
        }
    }
}

/// Reads and parses a JSON config file.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Parses `FOAC_SEED` if it is set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var("FOAC_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("FOAC_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}
