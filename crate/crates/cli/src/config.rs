//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stocheuler::{
    model_linear, model_logistic, model_subsampled_sum, DMatrix, DVector, ModelSpec,
};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionBlock>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Evaluation time of the rescaled error; defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_star: Option<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_replications() -> usize {
    200
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelBlock {
    Linear {
        /// Rows of `A`.
        a: Vec<Vec<f64>>,
        noise_cov: Vec<Vec<f64>>,
        x0: Vec<f64>,
        #[serde(default = "default_horizon")]
        horizon: f64,
    },
    Logistic {
        r: f64,
        cap: f64,
        clip: f64,
        noise_v: f64,
        x0: f64,
        #[serde(default = "default_horizon")]
        horizon: f64,
    },
    SubsampledSum {
        m: usize,
        seed: u64,
        batch: usize,
        x0: Vec<f64>,
        #[serde(default = "default_horizon")]
        horizon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionBlock {
    Dyadic { levels: Vec<u32> },
    Uniform { steps: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Endpoint tolerance of the reference solver.
    pub reference: f64,
    /// Accepted range of the fitted rate exponent.
    pub slope_band: [f64; 2],
    /// Consecutive-level tolerance of the propagator limit.
    pub propagator: f64,
    /// Largest accepted quadrature error estimate for the covariance.
    pub quadrature: f64,
    /// Probe times per axis of the propagator probe grid.
    pub probe_points: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            reference: 1e-9,
            slope_band: [0.4, 0.6],
            propagator: 1e-7,
            quadrature: 1e-3,
            probe_points: 10,
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(CliError::config(format!("{what} must be a nonempty rectangular array of rows")));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.iter().flatten().copied()))
}

impl ModelBlock {
    pub fn build(&self) -> Result<ModelSpec, CliError> {
        let spec = match self {
            ModelBlock::Linear {
                a,
                noise_cov,
                x0,
                horizon,
            } => model_linear(
                matrix(a, "a")?,
                matrix(noise_cov, "noise_cov")?,
                DVector::from_column_slice(x0),
                *horizon,
            ),
            ModelBlock::Logistic {
                r,
                cap,
                clip,
                noise_v,
                x0,
                horizon,
            } => model_logistic(*r, *cap, *clip, *noise_v, *x0, *horizon),
            ModelBlock::SubsampledSum {
                m,
                seed,
                batch,
                x0,
                horizon,
            } => model_subsampled_sum(*m, *seed, *batch, DVector::from_column_slice(x0), *horizon),
        };
        spec.map_err(CliError::from)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form without `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn t_star(&self, horizon: f64) -> f64 {
        self.t_star.unwrap_or(horizon)
    }

    pub fn partition(&self) -> Result<&PartitionBlock, CliError> {
        self.partition
            .as_ref()
            .ok_or_else(|| CliError::config("config has no partition block"))
    }

    /// Dyadic levels; other partition kinds are a config error.
    pub fn levels(&self) -> Result<&[u32], CliError> {
        match self.partition()? {
            PartitionBlock::Dyadic { levels } if !levels.is_empty() => Ok(levels),
            PartitionBlock::Dyadic { .. } => Err(CliError::config("levels must not be empty")),
            PartitionBlock::Uniform { .. } => Err(CliError::config("this command needs a dyadic partition with levels")),
        }
    }
}
