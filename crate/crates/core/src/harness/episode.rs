use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::policy::{feasible_plans, Policy};
use crate::env::{Action, Environment, Scenario};
use crate::error::Result;
use crate::mobility::{StateVector1, StateVector2};
use crate::network::Tier;
use crate::time::Minutes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: Minutes,
    pub crowd: f64,
    pub disrupted_demand: f64,
    pub flexible_stock: f64,
    pub potential_stock: f64,
    pub a1: u8,
    pub a2: Option<usize>,
    pub route: Option<u32>,
    pub tier: Option<Tier>,
    pub unit: Option<String>,
    pub capacity: f64,
    pub served: f64,
    pub delay: f64,
    pub refused: bool,
    pub headway_violation: bool,
    pub denied: f64,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_train: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub policy: String,
    pub epsilon: Option<f64>,
    pub total_reward: f64,
    pub step_reward: f64,
    pub episode_reward: f64,
    pub satisfied: f64,
    pub satisfied_fraction: f64,
    pub units_used: u32,
    pub fleet_size: u32,
    pub refusals: usize,
    pub steps: usize,
    pub max_crowd: f64,
    pub denied: f64,
}

impl EpisodeSummary {
    pub fn unused_units(&self) -> u32 {
        self.fleet_size - self.units_used
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

impl EpisodeLog {
    /// Checks that the summary agrees with the step records.
    pub fn check(&self) -> std::result::Result<(), String> {
        let s = &self.summary;
        let step_sum: f64 = self.steps.iter().map(|r| r.reward).sum();
        let served: f64 = self.steps.iter().map(|r| r.served).sum();
        let denied: f64 = self.steps.iter().map(|r| r.denied).sum();
        let max_crowd = self.steps.iter().map(|r| r.crowd).fold(0.0, f64::max);
        let dispatched = self.steps.iter().filter(|r| r.route.is_some()).count() as u32;
        let refusals = self.steps.iter().filter(|r| r.refused).count();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        let checks = [
            ("steps", s.steps == self.steps.len()),
            ("step reward", close(step_sum, s.step_reward)),
            ("total reward", close(s.step_reward + s.episode_reward, s.total_reward)),
            ("satisfied", close(served, s.satisfied)),
            ("denied", close(denied, s.denied)),
            ("max crowd", max_crowd == s.max_crowd),
            ("units used", dispatched == s.units_used),
            ("refusals", refusals == s.refusals),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(format!("episode {}: {name} does not match step records", s.episode)),
            None => Ok(()),
        }
    }
}

/// One raw transition. `next_mask` lists the actions the masked policy
/// could take in `next_state`, reached `span` steps after `state`.
#[derive(Clone, Debug)]
pub struct Experience<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub next_mask: Vec<bool>,
    pub span: u32,
    pub terminal: bool,
}

/// Raw transitions of one episode, before normalization. Dispatch
/// transitions link consecutive steps; plan transitions link consecutive
/// dispatches, since the plan network only acts when a train is sent.
#[derive(Clone, Debug, Default)]
pub struct EpisodeMemory {
    pub dispatch: Vec<Experience<StateVector1>>,
    pub plan: Vec<Experience<StateVector2>>,
    pub episode_reward: f64,
}

pub struct EpisodeOptions<'a> {
    pub episode: usize,
    pub epsilon: Option<f64>,
    pub memory: Option<&'a mut EpisodeMemory>,
}

/// Plays one episode with `policy`. Step records are always produced; the
/// transition memory is filled when requested.
pub fn run_episode(scenario: &Scenario, policy: &mut dyn Policy, opts: EpisodeOptions<'_>) -> Result<EpisodeLog> {
    let mut env = Environment::new(scenario);
    let mut memory = opts.memory;
    let mut steps = Vec::with_capacity(scenario.steps());
    let mut refusals = 0;
    let mut pending_plan: Option<(StateVector2, usize, f64, u32)> = None;
    while !env.is_done() {
        let s1 = env.state1();
        let dispatch = policy.dispatch(&env, &s1)?;
        let plan_mask = feasible_plans(&env);
        let (action, s2) = if dispatch {
            let s2 = env.state2();
            (Action::Dispatch(policy.plan(&env, &s2)?), Some(s2))
        } else {
            (Action::Hold, None)
        };
        let out = env.step(action)?;
        refusals += out.refused as usize;
        if let Some(mem) = memory.as_deref_mut() {
            let feasible = feasible_plans(&env);
            mem.dispatch.push(Experience {
                state: s1,
                action: dispatch as usize,
                reward: out.reward,
                next_state: env.state1(),
                next_mask: vec![true, feasible.contains(&true)],
                span: 1,
                terminal: out.terminal,
            });
            if let (Some(s2), Action::Dispatch(k)) = (s2, action) {
                let now = env.steps() as u32 - 1;
                if let Some((prev, pk, pr, at)) = pending_plan.take() {
                    mem.plan.push(Experience {
                        state: prev,
                        action: pk,
                        reward: pr,
                        next_state: s2.clone(),
                        next_mask: plan_mask.clone(),
                        span: now - at,
                        terminal: false,
                    });
                }
                pending_plan = Some((s2, k, out.reward, now));
            }
        }
        let d = out.dispatch.as_ref();
        steps.push(StepRecord {
            t: out.t,
            crowd: out.state.crowdedness,
            disrupted_demand: out.state.disrupted_demand,
            flexible_stock: out.state.flexible_stock,
            potential_stock: out.state.potential_stock,
            a1: dispatch as u8,
            a2: match action {
                Action::Dispatch(k) => Some(k),
                Action::Hold => None,
            },
            route: d.map(|d| d.route.0),
            tier: d.map(|d| d.tier),
            unit: d.map(|d| d.unit_code.clone().unwrap_or_else(|| "flexible".into())),
            capacity: d.map_or(0.0, |d| d.capacity),
            served: d.map_or(0.0, |d| d.served),
            delay: d.map_or(0.0, |d| d.delay),
            refused: out.refused,
            headway_violation: d.is_some_and(|d| d.headway_violation),
            denied: out.denied,
            reward: out.reward,
            by_train: d.map(|d| d.by_train.clone()).unwrap_or_default(),
        });
    }
    let episode_reward = env.episode_reward();
    if let Some(mem) = memory {
        if let Some((state, action, reward, at)) = pending_plan {
            mem.plan.push(Experience {
                state,
                action,
                reward,
                next_state: env.state2(),
                next_mask: feasible_plans(&env),
                span: env.steps() as u32 - at,
                terminal: true,
            });
        }
        mem.episode_reward = episode_reward;
    }
    let step_reward = env.step_reward_sum();
    Ok(EpisodeLog {
        steps,
        summary: EpisodeSummary {
            episode: opts.episode,
            policy: policy.name().to_string(),
            epsilon: opts.epsilon,
            total_reward: step_reward + episode_reward,
            step_reward,
            episode_reward,
            satisfied: env.served(),
            satisfied_fraction: env.satisfied_fraction(),
            units_used: env.fleet().used(),
            fleet_size: env.fleet().initial_size(),
            refusals,
            steps: env.steps(),
            max_crowd: env.max_crowd(),
            denied: env.denied(),
        },
    })
}
