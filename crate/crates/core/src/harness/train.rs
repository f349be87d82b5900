use serde::{Deserialize, Serialize};

use super::episode::{run_episode, EpisodeLog, EpisodeMemory, EpisodeOptions, EpisodeSummary};
use super::policy::{DqnPolicy, Policy};
use crate::agent::{Transition, TwoStepAgent};
use crate::env::Scenario;
use crate::error::{Error, Result};

/// Whole-episode training: play with the current exploration rate, then one
/// batch update of each network. `sink` sees every episode log.
pub fn train(
    scenario: &Scenario,
    agent: &mut TwoStepAgent,
    episodes: usize,
    mut sink: impl FnMut(&EpisodeLog) -> Result<()>,
) -> Result<Vec<EpisodeSummary>> {
    check_shapes(scenario, agent)?;
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let episode = agent.episode() as usize;
        let epsilon = agent.epsilon();
        let mut memory = EpisodeMemory::default();
        let log = run_episode(
            scenario,
            &mut DqnPolicy { agent },
            EpisodeOptions {
                episode,
                epsilon: Some(epsilon),
                memory: Some(&mut memory),
            },
        )?;
        let norm = agent.norm.clone();
        let masked = agent.config.mask_infeasible;
        let d: Vec<Transition> = memory
            .dispatch
            .iter()
            .map(|e| Transition {
                state: norm.encode1(&e.state),
                action: e.action,
                reward: e.reward,
                next_state: norm.encode1(&e.next_state),
                next_mask: masked.then(|| e.next_mask.clone()),
                span: e.span,
                terminal: e.terminal,
            })
            .collect();
        let p: Vec<Transition> = memory
            .plan
            .iter()
            .map(|e| Transition {
                state: norm.encode2(&e.state),
                action: e.action,
                reward: e.reward,
                next_state: norm.encode2(&e.next_state),
                next_mask: masked.then(|| e.next_mask.clone()),
                span: e.span,
                terminal: e.terminal,
            })
            .collect();
        agent.learn(&d, &p, memory.episode_reward)?;
        sink(&log)?;
        out.push(log.summary);
    }
    Ok(out)
}

pub fn check_shapes(scenario: &Scenario, agent: &TwoStepAgent) -> Result<()> {
    if agent.plan_inputs() != scenario.state2_dim() {
        return Err(Error::Dimension {
            expected: scenario.state2_dim(),
            actual: agent.plan_inputs(),
        });
    }
    if agent.plan_actions() != scenario.plan_actions() {
        return Err(Error::Dimension {
            expected: scenario.plan_actions(),
            actual: agent.plan_actions(),
        });
    }
    Ok(())
}

/// Frozen-policy runs at a fixed exploration rate.
pub fn evaluate(
    scenario: &Scenario,
    agent: &mut TwoStepAgent,
    episodes: usize,
    epsilon: f64,
    seed: u64,
    mut sink: impl FnMut(&EpisodeLog) -> Result<()>,
) -> Result<Vec<EpisodeSummary>> {
    check_shapes(scenario, agent)?;
    agent.set_fixed_epsilon(Some(epsilon));
    agent.reseed(seed);
    let mut out = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let log = run_episode(
            scenario,
            &mut DqnPolicy { agent },
            EpisodeOptions {
                episode,
                epsilon: Some(epsilon),
                memory: None,
            },
        )?;
        sink(&log)?;
        out.push(log.summary);
    }
    agent.set_fixed_epsilon(None);
    Ok(out)
}

/// Runs a baseline policy `episodes` times.
pub fn run_policy(scenario: &Scenario, policy: &mut dyn Policy, episodes: usize) -> Result<Vec<EpisodeSummary>> {
    (0..episodes)
        .map(|episode| {
            run_episode(
                scenario,
                policy,
                EpisodeOptions {
                    episode,
                    epsilon: None,
                    memory: None,
                },
            )
            .map(|l| l.summary)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

impl Summary {
    pub fn of(values: &[f64], bins: usize) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = bins.max(1);
        let width = (max - min) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| min + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = if width > 0.0 {
                (((v - min) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[i] += 1;
        }
        if width == 0.0 {
            counts.truncate(1);
        }
        Some(Summary {
            mean,
            std: var.sqrt(),
            min,
            max,
            histogram: Histogram {
                edges: if width == 0.0 { vec![min, max] } else { edges },
                counts,
            },
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub reward: Option<Summary>,
    pub satisfied_fraction: Option<Summary>,
    pub units_used: Option<Summary>,
    pub steps: Option<Summary>,
    pub max_crowd: Option<Summary>,
    pub positive_reward_share: Option<f64>,
    pub below_threshold_share: Option<f64>,
}

impl EvalStats {
    pub fn from_summaries(runs: &[EpisodeSummary], crowd_threshold: f64) -> EvalStats {
        const BINS: usize = 20;
        let col = |f: fn(&EpisodeSummary) -> f64| -> Vec<f64> { runs.iter().map(f).collect() };
        let share = |f: &dyn Fn(&EpisodeSummary) -> bool| {
            (!runs.is_empty()).then(|| runs.iter().filter(|r| f(r)).count() as f64 / runs.len() as f64)
        };
        EvalStats {
            episodes: runs.len(),
            reward: Summary::of(&col(|r| r.total_reward), BINS),
            satisfied_fraction: Summary::of(&col(|r| r.satisfied_fraction), BINS),
            units_used: Summary::of(&col(|r| r.units_used as f64), BINS),
            steps: Summary::of(&col(|r| r.steps as f64), BINS),
            max_crowd: Summary::of(&col(|r| r.max_crowd), BINS),
            positive_reward_share: share(&|r| r.total_reward > 0.0),
            below_threshold_share: share(&|r| r.max_crowd < crowd_threshold),
        }
    }
}
