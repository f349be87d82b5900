//! Dispatch policies: the learned agent and the comparison baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::TwoStepAgent;
use crate::env::{Action, Environment};
use crate::error::Result;
use crate::mobility::{StateVector1, StateVector2};
use crate::network::{RouteId, Tier};

/// Two-stage decision: whether to dispatch, then which plan option.
pub trait Policy {
    fn name(&self) -> &str;
    fn dispatch(&mut self, env: &Environment, s1: &StateVector1) -> Result<bool>;
    fn plan(&mut self, env: &Environment, s2: &StateVector2) -> Result<usize>;
}

pub struct DqnPolicy<'a> {
    pub agent: &'a mut TwoStepAgent,
}

impl Policy for DqnPolicy<'_> {
    fn name(&self) -> &str {
        "dqn"
    }

    fn dispatch(&mut self, env: &Environment, s1: &StateVector1) -> Result<bool> {
        if self.agent.config.mask_infeasible && !feasible_plans(env).contains(&true) {
            return Ok(false);
        }
        self.agent.act(s1)
    }

    fn plan(&mut self, env: &Environment, s2: &StateVector2) -> Result<usize> {
        if self.agent.config.mask_infeasible {
            let mask = feasible_plans(env);
            self.agent.plan_masked(s2, Some(&mask))
        } else {
            self.agent.plan(s2)
        }
    }
}

/// Per plan option, whether its route could get a unit right now.
pub fn feasible_plans(env: &Environment) -> Vec<bool> {
    env.network()
        .plan_options()
        .iter()
        .map(|&(r, _)| can_serve(env, r))
        .collect()
}

/// Uniform over both action spaces.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> RandomPolicy {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn dispatch(&mut self, _env: &Environment, _s1: &StateVector1) -> Result<bool> {
        Ok(self.rng.random_bool(0.5))
    }

    fn plan(&mut self, env: &Environment, _s2: &StateVector2) -> Result<usize> {
        Ok(self.rng.random_range(0..env.network().plan_options().len()))
    }
}

/// Never dispatches.
pub struct NullPolicy;

impl Policy for NullPolicy {
    fn name(&self) -> &str {
        "null"
    }

    fn dispatch(&mut self, _env: &Environment, _s1: &StateVector1) -> Result<bool> {
        Ok(false)
    }

    fn plan(&mut self, _env: &Environment, _s2: &StateVector2) -> Result<usize> {
        Ok(0)
    }
}

/// Plan index of `route`'s all-stops tier.
fn all_stops_plan(env: &Environment, route: RouteId) -> usize {
    let options = env.network().plan_options();
    options
        .iter()
        .position(|&(r, t)| r == route && t == Tier::S3)
        .or_else(|| options.iter().rposition(|&(r, _)| r == route))
        .unwrap_or(0)
}

/// Route of the OD slot with the most waiting passengers; ties go to the
/// first slot.
pub fn busiest_route(env: &Environment, s2: &StateVector2) -> RouteId {
    let slots = env.network().od_slots();
    let mut best = 0;
    for (i, &d) in s2.od_demand.iter().enumerate() {
        if d > s2.od_demand[best] {
            best = i;
        }
    }
    slots.get(best).map_or(RouteId(1), |&(r, _)| r)
}

/// Whether a unit could be allocated to `route` right now.
pub fn can_serve(env: &Environment, route: RouteId) -> bool {
    let fleet = env.fleet();
    let t = env.clock();
    fleet.flexible > 0
        || fleet
            .restricted
            .iter()
            .any(|u| !u.used && u.route == route && u.arrival_time <= t)
}

/// Dispatches every step, on a route holding an arrived restricted unit if
/// there is one, else on the busiest route.
pub struct AlwaysPolicy;

impl Policy for AlwaysPolicy {
    fn name(&self) -> &str {
        "always"
    }

    fn dispatch(&mut self, _env: &Environment, _s1: &StateVector1) -> Result<bool> {
        Ok(true)
    }

    fn plan(&mut self, env: &Environment, s2: &StateVector2) -> Result<usize> {
        let t = env.clock();
        let pinned = env
            .fleet()
            .restricted
            .iter()
            .find(|u| !u.used && u.arrival_time <= t)
            .map(|u| u.route);
        let route = pinned.unwrap_or_else(|| busiest_route(env, s2));
        Ok(all_stops_plan(env, route))
    }
}

/// Dispatches an all-stops train on the busiest route whenever waiting
/// disrupted demand exceeds a threshold.
pub struct GreedyPolicy {
    pub threshold: f64,
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn dispatch(&mut self, env: &Environment, s1: &StateVector1) -> Result<bool> {
        Ok(s1.disrupted_demand > self.threshold && s1.flexible_stock > 0.0 && {
            let s2 = env.state2();
            can_serve(env, busiest_route(env, &s2))
        })
    }

    fn plan(&mut self, env: &Environment, s2: &StateVector2) -> Result<usize> {
        Ok(all_stops_plan(env, busiest_route(env, s2)))
    }
}

/// Dispatches once at each of `k` evenly spaced boundaries of the horizon.
pub struct HorizonPolicy {
    boundaries: Vec<f64>,
    next: usize,
}

impl HorizonPolicy {
    pub fn new(k: usize, start: f64, end: f64, step: f64) -> HorizonPolicy {
        let k = k.max(1);
        let span = (end - start) / k as f64;
        let last = end - step;
        let boundaries = (1..=k).map(|j| (start + j as f64 * span).min(last)).collect();
        HorizonPolicy { boundaries, next: 0 }
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }
}

impl Policy for HorizonPolicy {
    fn name(&self) -> &str {
        "horizon"
    }

    fn dispatch(&mut self, env: &Environment, _s1: &StateVector1) -> Result<bool> {
        let t = env.clock();
        let mut due = false;
        while self.next < self.boundaries.len() && self.boundaries[self.next] <= t {
            self.next += 1;
            due = true;
        }
        if !due {
            return Ok(false);
        }
        let s2 = env.state2();
        Ok(can_serve(env, busiest_route(env, &s2)))
    }

    fn plan(&mut self, env: &Environment, s2: &StateVector2) -> Result<usize> {
        Ok(all_stops_plan(env, busiest_route(env, s2)))
    }
}

/// Replays a fixed action sequence, then holds.
pub struct ScriptedPolicy {
    actions: Vec<Action>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<Action>) -> ScriptedPolicy {
        ScriptedPolicy { actions, cursor: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        "scripted"
    }

    fn dispatch(&mut self, _env: &Environment, _s1: &StateVector1) -> Result<bool> {
        let a = self.actions.get(self.cursor).copied().unwrap_or(Action::Hold);
        if a == Action::Hold {
            self.cursor += 1;
        }
        Ok(a != Action::Hold)
    }

    fn plan(&mut self, _env: &Environment, _s2: &StateVector2) -> Result<usize> {
        let a = self.actions[self.cursor];
        self.cursor += 1;
        match a {
            Action::Dispatch(k) => Ok(k),
            Action::Hold => unreachable!("plan is only asked after a dispatch decision"),
        }
    }
}
