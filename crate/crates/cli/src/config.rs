//! JSON run configurations. Unknown keys are rejected; omitted keys take
//! their defaults. Command-line flags override file values.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tscan_core::data::{generate_synthetic, split_train_test, InstanceRecord, SyntheticConfig};
use tscan_core::eval::EvalOptions;
use tscan_core::model::ModelConfig;
use tscan_core::training::{BaselineConfig, TrainConfig};

use crate::error::{CliError, CliResult};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(tscan_core::Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| tscan_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub synthetic: SyntheticConfig,
    /// Share of records written to the test file.
    pub test_fraction: f64,
    /// When set, the test records come from an independent draw with this
    /// selection strength (0 gives a randomized holdout) instead of the
    /// training distribution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_bias_strength: Option<f64>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticConfig::default(),
            test_fraction: 0.2,
            test_bias_strength: None,
        }
    }
}

impl GenDataConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.synthetic.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if let Some(b) = self.test_bias_strength {
            if !(b.is_finite() && b >= 0.0) {
                return Err(CliError::Config(format!("test_bias_strength must be finite and >= 0, got {b}")));
            }
        }
        Ok(())
    }

    /// Train and test records for `synthetic.seed`.
    pub fn generate(&self) -> CliResult<(Vec<InstanceRecord>, Vec<InstanceRecord>)> {
        self.validate()?;
        let s = &self.synthetic;
        let records = generate_synthetic(s)?;
        let (train, test) = split_train_test(&records, 1.0 - self.test_fraction, s.seed)?;
        let Some(bias) = self.test_bias_strength else {
            return Ok((train, test));
        };
        let holdout = SyntheticConfig {
            n: test.len(),
            bias_strength: bias,
            seed: s.seed.wrapping_add(TEST_STREAM_OFFSET),
            ..s.clone()
        };
        Ok((train, generate_synthetic(&holdout)?))
    }
}

/// Seed offset of the independent test draw.
pub const TEST_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineRunConfig {
    pub baseline: BaselineConfig,
    pub train: TrainConfig,
}

/// Full benchmark: data generation, every scorer, evaluation, per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// `seed` is replaced by each run seed.
    pub data: GenDataConfig,
    pub model: ModelConfig,
    /// `seed` is replaced by each run seed.
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalOptions,
    pub seeds: Vec<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            data: GenDataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            eval: EvalOptions::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}
