//! JSON run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hava_core::agent::{StateEncoder, TrainConfig};
use hava_core::dd::BinConfig;
use hava_core::junction::{default_profiles, HumanProfile, ScenarioConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Grid,
    Junction,
}

/// Which norm sources feed the alignment value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Hava,
    RbOnly,
    DdOnly,
}

impl Variant {
    pub fn needs_dd(self) -> bool {
        !matches!(self, Variant::RbOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumansConfig {
    pub profiles: Vec<HumanProfile>,
    pub episodes_per_profile: usize,
    pub seed: u64,
}

impl Default for HumansConfig {
    fn default() -> Self {
        Self {
            profiles: default_profiles(),
            episodes_per_profile: 10,
            seed: 7,
        }
    }
}

/// Another finished run to place in the KS matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRun {
    pub label: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    /// Report label; defaults to HAVA, RB or DD.
    pub label: Option<String>,
    pub environment: EnvKind,
    pub variant: Variant,
    pub tau: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// First training seed; `runs` consecutive seeds are trained.
    pub seed: u64,
    pub runs: usize,
    pub train: TrainConfig,
    /// Defaults to the encoder matching `environment`.
    pub encoder: Option<StateEncoder>,
    /// Scenario JSON; the built-in scenario when absent.
    pub scenario: Option<PathBuf>,
    pub humans: HumansConfig,
    /// Where the human dataset lives; defaults to `out`.
    pub dataset_dir: Option<PathBuf>,
    /// DD model file; defaults to `out/dd_model.json`.
    pub dd_model: Option<PathBuf>,
    pub bins: BinConfig,
    /// Values swept by `toy-table` and `reputation-trace`.
    pub alphas: Vec<f64>,
    pub compare: Vec<CompareRun>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "run".into(),
            label: None,
            environment: EnvKind::Junction,
            variant: Variant::Hava,
            tau: 1.0,
            alpha: 0.1,
            gamma: hava_core::DEFAULT_GAMMA,
            seed: 0,
            runs: 1,
            train: TrainConfig::default(),
            encoder: None,
            scenario: None,
            humans: HumansConfig::default(),
            dataset_dir: None,
            dd_model: None,
            bins: BinConfig::default(),
            alphas: vec![10.0, 5.0, 4.0, 2.0, 1.6, 1.2, 1.0],
            compare: Vec::new(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            bail!("alpha must be >= 0, got {}", self.alpha);
        }
        if self.environment == EnvKind::Junction && !(self.tau > 0.0) {
            bail!("tau must be > 0 for the junction, got {}", self.tau);
        }
        if self.runs == 0 {
            bail!("runs must be >= 1");
        }
        if let Some(p) = &self.scenario {
            if !p.exists() {
                bail!("scenario file {} does not exist", p.display());
            }
        }
        for c in &self.compare {
            if !c.dir.is_dir() {
                bail!(
                    "compare run {:?}: {} is not a directory",
                    c.label,
                    c.dir.display()
                );
            }
        }
        self.train_config(self.seed)?;
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.seed + i).collect()
    }

    /// Training settings for one seed, with the run-level discount applied.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let t = TrainConfig {
            gamma: self.gamma,
            seed,
            ..self.train.clone()
        };
        t.validate()?;
        Ok(t)
    }

    pub fn encoder(&self) -> StateEncoder {
        self.encoder.clone().unwrap_or(match self.environment {
            EnvKind::Grid => StateEncoder::grid(),
            EnvKind::Junction => StateEncoder::junction(),
        })
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        match &self.scenario {
            Some(p) => Ok(ScenarioConfig::load(p)?),
            None => Ok(ScenarioConfig::default()),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_dir.clone().unwrap_or_else(|| self.out.clone())
    }

    pub fn dd_model_path(&self) -> PathBuf {
        self.dd_model
            .clone()
            .unwrap_or_else(|| self.out.join("dd_model.json"))
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.variant {
            Variant::Hava => "HAVA",
            Variant::RbOnly => "RB",
            Variant::DdOnly => "DD",
        }
        .into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = serde_json::from_str::<RunConfig>("{\n  \"alpah\": 1\n}").unwrap_err();
        assert_eq!(err.line(), 2);
    }

    #[test]
    fn bad_values_rejected() {
        let mut c = RunConfig {
            alpha: -1.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.alpha = 1.0;
        c.tau = 0.0;
        assert!(c.validate().is_err());
        c.tau = 1.0;
        c.runs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeds_are_consecutive() {
        let c = RunConfig {
            seed: 3,
            runs: 3,
            ..RunConfig::default()
        };
        assert_eq!(c.seeds(), vec![3, 4, 5]);
    }
}
