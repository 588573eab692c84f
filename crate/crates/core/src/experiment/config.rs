use crate::classifier::ClassifierConfig;
use crate::dataio::{Property, PropertyStrengths, SynthConfig};
use crate::forecaster::{ForecastHyperparams, SearchSpace};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Root of all stage directories. Not part of the config hash.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub forecaster: ForecasterConfig,
    #[serde(default)]
    pub signature: SignatureConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default = "all_properties")]
    pub properties: Vec<Property>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn all_properties() -> Vec<Property> {
    Property::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic(SyntheticData),
    Csv(CsvData),
}

/// Generator settings; the generator seed derives from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub households: usize,
    pub days: usize,
    #[serde(default)]
    pub strengths: PropertyStrengths,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(default = "default_first_meter")]
    pub first_meter_id: u64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
}

fn default_start() -> NaiveDate {
    SynthConfig::new(2, 14, 0).start
}

fn default_first_meter() -> u64 {
    SynthConfig::new(2, 14, 0).first_meter_id
}

fn default_noise() -> f64 {
    SynthConfig::new(2, 14, 0).noise_sigma
}

impl SyntheticData {
    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            households: self.households,
            days: self.days,
            strengths: self.strengths,
            seed,
            start: self.start,
            first_meter_id: self.first_meter_id,
            noise_sigma: self.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub meters: PathBuf,
    pub labels: PathBuf,
    /// Shorter meters are dropped; defaults to `window + 1`.
    #[serde(default)]
    pub min_readings: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    /// Used as-is when `search_budget` is 0, otherwise the search base.
    pub hyperparams: ForecastHyperparams,
    pub search_budget: usize,
    /// Auxiliary meters the search validates on.
    pub tune_meters: usize,
    pub space: SearchSpace,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            hyperparams: ForecastHyperparams::default(),
            search_budget: 0,
            tune_meters: 8,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignatureConfig {
    pub tau: usize,
    pub k: usize,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        Self { tau: 48, k: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub max_days: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            max_days: crate::baseline::DEFAULT_MAX_DAYS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// In-process oracles.
    #[default]
    Local,
    /// Every honest model is served on a loopback TCP port and queried over
    /// the wire protocol.
    Tcp,
}

/// An honest oracle run by someone else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteTarget {
    pub meter_id: u64,
    pub addr: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub oracle: OracleMode,
    /// When non-empty, these oracles are attacked instead of the honest
    /// models trained by the pipeline.
    pub targets: Vec<RemoteTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Monte-Carlo trials of the random reference.
    pub random_trials: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { random_trials: 200 }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative CSV paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let DataConfig::Csv(c) = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut c.meters, &mut c.labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        match &self.data {
            DataConfig::Synthetic(s) => {
                s.synth_config(0).validate().map_err(|e| ConfigError(e.to_string()))?;
            }
            DataConfig::Csv(c) => {
                for p in [&c.meters, &c.labels] {
                    if !p.is_file() {
                        return err(format!("data file {} does not exist", p.display()));
                    }
                }
            }
        }
        let f = &self.forecaster;
        f.hyperparams.validate().map_err(|e| ConfigError(e.to_string()))?;
        if f.search_budget > 0 {
            if f.tune_meters == 0 {
                return err("tune_meters must be >= 1 when searching".into());
            }
            let s = &f.space;
            if s.lstm_nodes.is_empty() || s.fc_nodes.is_empty() || s.scalers.is_empty() || s.windows.is_empty() {
                return err("search space lists must be non-empty".into());
            }
            if !(s.learning_rate.0 > 0.0 && s.learning_rate.0 <= s.learning_rate.1 && s.l2.0 > 0.0 && s.l2.0 <= s.l2.1) {
                return err("search ranges must be positive and ordered".into());
            }
        }
        if self.signature.tau == 0 || self.signature.k == 0 {
            return err("signature tau and k must be >= 1".into());
        }
        self.classifier.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.baseline.max_days < crate::baseline::MIN_DAYS {
            return err(format!("baseline max_days must be >= {}", crate::baseline::MIN_DAYS));
        }
        if self.evaluate.random_trials == 0 {
            return err("random_trials must be >= 1".into());
        }
        let unique: BTreeSet<_> = self.properties.iter().collect();
        if self.properties.is_empty() || unique.len() != self.properties.len() {
            return err("properties must be non-empty and distinct".into());
        }
        let ids: BTreeSet<_> = self.attack.targets.iter().map(|t| t.meter_id).collect();
        if ids.len() != self.attack.targets.len() {
            return err("attack targets repeat a meter id".into());
        }
        Ok(())
    }

    /// Canonical JSON (sorted keys) of everything except `out`.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("out");
        v.to_string()
    }

    /// SHA-256 of the canonical form; 16 hex digits name the run directory.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
