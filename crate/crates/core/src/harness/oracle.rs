//! Exhaustive search over action sequences of a tiny scenario, evaluated
//! through the environment itself.

use serde::{Deserialize, Serialize};

use crate::env::{Action, Environment, Scenario};
use crate::error::{Error, Result};

pub const MAX_STEPS: usize = 12;
pub const MAX_PLANS: usize = 3;
pub const MAX_UNITS: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub actions: Vec<Action>,
    pub value: f64,
    pub sequences: u64,
}

/// Upper bound on the number of complete sequences.
pub fn search_size(scenario: &Scenario) -> f64 {
    ((scenario.plan_actions() + 1) as f64).powi(scenario.steps() as i32)
}

/// Total reward (step rewards plus the terminal reward) of playing `actions`
/// and holding afterwards.
pub fn evaluate_sequence(scenario: &Scenario, actions: &[Action]) -> Result<f64> {
    Environment::new(scenario).play(actions)
}

/// Best total reward over all action sequences. Ties keep the
/// lexicographically smallest sequence by action index.
pub fn oracle_search(scenario: &Scenario) -> Result<OracleResult> {
    let too_large = scenario.steps() > MAX_STEPS
        || scenario.plan_actions() > MAX_PLANS
        || scenario.fleet_size() > MAX_UNITS;
    if too_large {
        let limit = ((MAX_PLANS + 1) as f64).powi(MAX_STEPS as i32);
        return Err(Error::SearchTooLarge {
            estimate: search_size(scenario),
            limit,
        });
    }
    let mut best = OracleResult {
        actions: Vec::new(),
        value: f64::NEG_INFINITY,
        sequences: 0,
    };
    let mut path = Vec::new();
    dfs(&Environment::new(scenario), scenario.plan_actions(), &mut path, &mut best)?;
    Ok(best)
}

fn dfs(env: &Environment, plans: usize, path: &mut Vec<Action>, best: &mut OracleResult) -> Result<()> {
    if env.is_done() {
        best.sequences += 1;
        let value = env.step_reward_sum() + env.episode_reward();
        if value > best.value {
            best.value = value;
            best.actions = path.clone();
        }
        return Ok(());
    }
    for i in 0..=plans {
        let action = Action::from_index(i);
        let mut next = env.clone();
        next.step(action)?;
        path.push(action);
        dfs(&next, plans, path, best)?;
        path.pop();
    }
    Ok(())
}
