use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critic::{CriticConfig, CriticMode};
use crate::envs::{EnvConfig, RewardPerturbation};
use crate::error::{Error, Result};
use crate::meanflow::MeanFlowConfig;
use crate::net::Activation;
use crate::schedules::SdeConfig;
use crate::score::ScoreConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub updates_per_step: usize,
    pub seed: u64,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Environment steps between metric records.
    pub metrics_every: usize,
    /// Episodes per return evaluation (MDP only).
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 20_000,
            warmup_steps: 1_000,
            batch_size: 256,
            actor_lr: 1e-4,
            updates_per_step: 1,
            seed: 0,
            buffer_capacity: 1_000_000,
            hidden: vec![64, 64],
            activation: Activation::Gelu,
            metrics_every: 500,
            eval_episodes: 5,
        }
    }
}

/// Full run configuration; every section has defaults, so an empty file is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sde: SdeConfig,
    pub score: ScoreConfig,
    pub meanflow: MeanFlowConfig,
    pub env: EnvConfig,
    pub critic: CriticConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sde.schedule()?;
        self.score.validate()?;
        self.critic.validate()?;
        let t = &self.train;
        if t.warmup_steps > t.total_steps && t.total_steps > 0 {
            return Err(Error::Config("train.warmup_steps exceeds train.total_steps".into()));
        }
        if t.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if t.buffer_capacity < t.batch_size {
            return Err(Error::Config("train.buffer_capacity is smaller than the batch".into()));
        }
        if t.metrics_every == 0 || t.updates_per_step == 0 {
            return Err(Error::Config("train.metrics_every and train.updates_per_step must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.meanflow.rho_eq) {
            return Err(Error::Config("meanflow.rho_eq must lie in [0, 1]".into()));
        }
        if !self.env.is_bandit() && self.critic.mode == CriticMode::Oracle {
            return Err(Error::Config("the pointmass MDP needs critic.mode = \"learned\"".into()));
        }
        if self.critic.mode == CriticMode::Oracle && matches!(self.env.perturb, RewardPerturbation::GaussianNoise { .. }) {
            return Err(Error::Config("noisy rewards have no gradient; use critic.mode = \"learned\"".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvName;

    #[test]
    fn empty_file_gives_defaults_and_round_trips() {
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c, Config::default());
        let back = Config::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn nested_keys_parse() {
        let c = Config::from_toml_str(
            r#"
            [sde]
            kind = "ve"
            sigma_max = 2.0
            [env]
            name = "eight_gaussian"
            perturb = { kind = "gaussian_bump", c = 0.5, sigma = 0.3 }
            [critic]
            grad_source = "mean"
            "#,
        )
        .unwrap();
        assert_eq!(c.sde.sigma_max, 2.0);
        assert_eq!(c.env.perturb, RewardPerturbation::GaussianBump { c: 0.5, sigma: 0.3 });
        assert_eq!(c.env.name, EnvName::EightGaussian);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(Config::from_toml_str("[train]\nbatch_size = 1").is_err());
        assert!(Config::from_toml_str("[train]\nbogus = 1").is_err());
        assert!(Config::from_toml_str("[env]\nname = \"pointmass\"").is_err());
        assert!(Config::from_toml_str("[env.perturb]\nkind = \"gaussian_noise\"\nsigma = 0.2").is_err());
        assert!(Config::from_toml_str("[score]\nk_samples = 0").is_err());
    }
}
