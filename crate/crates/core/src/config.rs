//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::datagen::DemandConfig;
use crate::error::{Error, Result};
use crate::fleet::FleetConfig;
use crate::instance::InstanceConfig;
use crate::rewards::RewardWeights;
use crate::time::Minutes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Horizon {
    pub start: Minutes,
    pub end: Minutes,
    pub step: Minutes,
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon {
            start: 240.0,
            end: 1440.0,
            step: 5.0,
        }
    }
}

impl Horizon {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.end > self.start) {
            return Err(Error::Config(format!(
                "horizon needs step > 0 and end > start, got {:?}",
                self
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.end - self.start) / self.step).ceil() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Seeds station weights and demand generation.
    pub seed: u64,
    pub instance: InstanceConfig,
    pub horizon: Horizon,
    pub demand: DemandConfig,
    /// Group file to ingest instead of generating demand.
    pub groups: Option<PathBuf>,
    pub fleet: FleetConfig,
    pub rewards: RewardWeights,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.horizon.validate()?;
        self.demand.validate()?;
        self.rewards.validate().map_err(Error::Config)?;
        if !(self.fleet.flexible_capacity >= 0.0) || !(self.fleet.restricted_capacity >= 0.0) {
            return Err(Error::Config("fleet capacities must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub episodes: usize,
    /// Episodes for evaluation and transfer runs.
    pub eval_episodes: usize,
    /// Fixed exploration rate during evaluation.
    pub eval_epsilon: f64,
    /// Seeds the action-selection stream of evaluation runs.
    pub eval_seed: u64,
    /// Step-level log files are written for every `log_every`-th training
    /// episode and the last one; 0 writes none.
    pub log_every: usize,
    /// Baseline episodes used in comparisons.
    pub baseline_episodes: usize,
    /// Dispatch opportunities of the uniform-horizon baseline.
    pub horizon_slots: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            episodes: 3000,
            eval_episodes: 1000,
            eval_epsilon: 0.2,
            eval_seed: 1,
            log_every: 100,
            baseline_episodes: 100,
            horizon_slots: 6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub agent: AgentConfig,
    pub run: RunConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.scenario.groups.as_mut() {
            rebase(p);
        }
        if let InstanceConfig::Paper(p) = &mut cfg.scenario.instance {
            if let Some(t) = p.timetable.as_mut() {
                rebase(t);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let a = &self.agent;
        if !(a.learning_rate > 0.0) || !(0.0..=1.0).contains(&a.discount) {
            return Err(Error::Config("agent needs learning_rate > 0 and discount in [0, 1]".into()));
        }
        let e = &a.epsilon;
        if !(e.start >= e.min && e.min >= 0.0 && e.start <= 1.0) {
            return Err(Error::Config("epsilon needs 1 >= start >= min >= 0".into()));
        }
        if !(0.0..=1.0).contains(&a.explore_dispatch_rate) {
            return Err(Error::Config("explore_dispatch_rate must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.run.eval_epsilon) {
            return Err(Error::Config("eval_epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = Config::from_toml("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.scenario.horizon.steps(), 240);
        assert_eq!(cfg.scenario.demand.total, 1767);
        assert_eq!(cfg.agent.discount, 0.95);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = Config::default();
        cfg.scenario.demand.total = 2787;
        cfg.run.episodes = 12;
        let back = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn tiny_instance_section() {
        let text = r#"
            [scenario.instance]
            kind = "tiny"
            leg_minutes = 15
            [[scenario.instance.routes]]
            stations = 2
            trains = [{ code = "A", depart_time = 620 }]
        "#;
        let cfg = Config::from_toml(text).unwrap();
        let net = cfg.scenario.instance.build(0).unwrap();
        assert_eq!(net.plan_options().len(), 1);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_toml("[scenario.horizon]\nstep = 0").is_err());
        assert!(Config::from_toml("[agent.epsilon]\nmin = 2.0").is_err());
        assert!(Config::from_toml("[scenario]\nunknown = 1").is_err());
        assert!(Config::from_toml("[run]\neval_epsilon = 3").is_err());
        assert!(Config::from_toml("not toml =").is_err());
    }
}
