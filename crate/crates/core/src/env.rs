//! One simulated disruption day: mobility, fleet and rewards behind a
//! step interface.
//!
//! A step at clock `t` observes the crowd, applies the action (allocate a
//! unit, serve waiting groups first-in-first-out), ticks the headway clocks,
//! advances the clock to `t + Δ` (collecting abandonment) and scores the step.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::Normalization;
use crate::config::{Horizon, ScenarioConfig};
use crate::datagen::{generate, ingest_path, GenerationManifest};
use crate::error::{Error, Result};
use crate::fleet::{FleetConfig, FleetState, UnitKind};
use crate::mobility::{observe_state1, observe_state2, GroupSpec, Mobility, PassengerGroup, StateVector1, StateVector2};
use crate::network::{Network, RouteId, Tier};
use crate::rewards::{episode_reward, is_terminal, step_reward, DispatchTerm, RewardWeights};
use crate::time::Minutes;

/// A fully built, immutable scenario from which episodes are started.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub network: Arc<Network>,
    pub groups: Vec<GroupSpec>,
    pub horizon: Horizon,
    pub rewards: RewardWeights,
    pub fleet: FleetState,
    pub manifest: Option<GenerationManifest>,
    prepared: Vec<PassengerGroup>,
    disrupted_total: f64,
}

impl Scenario {
    pub fn new(
        network: Network,
        groups: Vec<GroupSpec>,
        fleet: &FleetConfig,
        horizon: Horizon,
        rewards: RewardWeights,
    ) -> Result<Scenario> {
        horizon.validate()?;
        rewards.validate().map_err(Error::Config)?;
        let prepared = groups
            .iter()
            .map(|g| PassengerGroup::new(g.clone(), &network))
            .collect::<Result<Vec<_>>>()?;
        let disrupted_total = groups
            .iter()
            .filter(|g| g.route.is_disrupted())
            .map(|g| g.demand as f64)
            .sum();
        let fleet = FleetState::from_network(&network, fleet, horizon.step);
        Ok(Scenario {
            network: Arc::new(network),
            groups,
            horizon,
            rewards,
            fleet,
            manifest: None,
            prepared,
            disrupted_total,
        })
    }

    /// Builds the instance and either generates or ingests its groups.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Scenario> {
        cfg.validate()?;
        let network = cfg.instance.build(cfg.seed)?;
        for w in network_warnings(&network) {
            log::warn!("{w}");
        }
        let (groups, manifest) = match &cfg.groups {
            Some(path) => (ingest_path(path, &network)?, None),
            None => {
                let (g, m) = generate(&network, &cfg.demand, cfg.horizon.start, cfg.seed)?;
                (g, Some(m))
            }
        };
        let mut s = Scenario::new(network, groups, &cfg.fleet, cfg.horizon.clone(), cfg.rewards.clone())?;
        s.manifest = manifest;
        Ok(s)
    }

    pub fn disrupted_total(&self) -> f64 {
        self.disrupted_total
    }

    pub fn plan_actions(&self) -> usize {
        self.network.plan_options().len()
    }

    pub fn state2_dim(&self) -> usize {
        self.network.state2_dim()
    }

    pub fn fleet_size(&self) -> u32 {
        self.fleet.initial_size()
    }

    pub fn steps(&self) -> usize {
        self.horizon.steps()
    }

    pub fn normalization(&self) -> Normalization {
        Normalization {
            passengers: self.rewards.crowd_threshold,
            stock: self.fleet_size().max(1) as f64,
            clock_start: self.horizon.start,
            clock_span: self.horizon.end - self.horizon.start,
            headway: 60.0,
        }
    }
}

fn network_warnings(network: &Network) -> Vec<String> {
    network
        .routes
        .iter()
        .filter(|r| network.full_schedule(r.id).is_none())
        .map(|r| format!("route {} has no trains; omitted from plan actions", r.id))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Hold,
    /// Dispatch with the given plan option (route and stop tier).
    Dispatch(usize),
}

impl Action {
    /// 0 holds, `1 + k` dispatches plan `k`.
    pub fn from_index(i: usize) -> Action {
        if i == 0 {
            Action::Hold
        } else {
            Action::Dispatch(i - 1)
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::Hold => 0,
            Action::Dispatch(k) => k + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub plan: usize,
    pub route: RouteId,
    pub tier: Tier,
    pub unit: UnitKind,
    /// Timetable code of a restricted unit.
    pub unit_code: Option<String>,
    pub capacity: f64,
    pub served: f64,
    pub utilization: f64,
    pub delay: f64,
    pub headway_violation: bool,
    pub by_train: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub t: Minutes,
    pub state: StateVector1,
    pub action: Action,
    pub dispatch: Option<Dispatch>,
    /// The fleet had no eligible unit for the requested route.
    pub refused: bool,
    pub denied: f64,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Clone, Debug)]
pub struct Environment {
    network: Arc<Network>,
    horizon: Horizon,
    rewards: RewardWeights,
    mobility: Mobility,
    fleet: FleetState,
    disrupted_total: f64,
    served: f64,
    denied: f64,
    max_crowd: f64,
    step_rewards: f64,
    steps: usize,
    done: bool,
}

impl Environment {
    pub fn new(scenario: &Scenario) -> Environment {
        let mobility = Mobility::new(scenario.prepared.clone(), scenario.horizon.start);
        let fleet = scenario.fleet.clone();
        let done = is_terminal(scenario.horizon.start, scenario.horizon.end, &fleet);
        Environment {
            network: scenario.network.clone(),
            horizon: scenario.horizon.clone(),
            rewards: scenario.rewards.clone(),
            mobility,
            fleet,
            disrupted_total: scenario.disrupted_total,
            served: 0.0,
            denied: 0.0,
            max_crowd: 0.0,
            step_rewards: 0.0,
            steps: 0,
            done,
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn fleet(&self) -> &FleetState {
        &self.fleet
    }

    pub fn mobility(&self) -> &Mobility {
        &self.mobility
    }

    pub fn clock(&self) -> Minutes {
        self.mobility.clock()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn state1(&self) -> StateVector1 {
        observe_state1(&self.mobility, &self.fleet)
    }

    pub fn state2(&self) -> StateVector2 {
        observe_state2(&self.mobility, &self.fleet, &self.network)
    }

    pub fn served(&self) -> f64 {
        self.served
    }

    pub fn denied(&self) -> f64 {
        self.denied
    }

    pub fn max_crowd(&self) -> f64 {
        self.max_crowd
    }

    pub fn step_reward_sum(&self) -> f64 {
        self.step_rewards
    }

    pub fn satisfied_fraction(&self) -> f64 {
        if self.disrupted_total > 0.0 {
            self.served / self.disrupted_total
        } else {
            0.0
        }
    }

    pub fn stock_fraction(&self) -> f64 {
        match self.fleet.initial_size() {
            0 => 0.0,
            n => self.fleet.used() as f64 / n as f64,
        }
    }

    /// Terminal reward for the episode as it stands.
    pub fn episode_reward(&self) -> f64 {
        episode_reward(&self.rewards, self.satisfied_fraction(), self.stock_fraction(), self.max_crowd)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        let t = self.clock();
        let state = self.state1();
        let crowd = state.crowdedness;
        self.max_crowd = self.max_crowd.max(crowd);

        let mut dispatch = None;
        let mut refused = false;
        let mut term = DispatchTerm::None;
        let mut dispatched_route = None;
        if let Action::Dispatch(k) = action {
            let &(route, tier) = self.network.plan_options().get(k).ok_or(Error::Dimension {
                expected: self.network.plan_options().len(),
                actual: k + 1,
            })?;
            let separation = self.fleet.separation(route);
            match self.fleet.allocate(t, route) {
                None => {
                    refused = true;
                    term = DispatchTerm::Refused;
                }
                Some(unit) => {
                    let schedule = self.network.plan_schedule(k).expect("plan option has a schedule");
                    let service = self.mobility.serve_fifo(route, schedule, t, unit.capacity);
                    let violation = separation < self.rewards.headway_limit;
                    term = DispatchTerm::Executed {
                        served: service.served,
                        utilization: service.utilization,
                        delay: service.delay,
                        headway_violation: violation,
                    };
                    self.served += service.served;
                    dispatched_route = Some(route);
                    let unit_code = match unit.kind {
                        UnitKind::Restricted(i) => Some(self.fleet.restricted[i].code.clone()),
                        UnitKind::Flexible => None,
                    };
                    dispatch = Some(Dispatch {
                        plan: k,
                        route,
                        tier,
                        unit: unit.kind,
                        unit_code,
                        capacity: unit.capacity,
                        served: service.served,
                        utilization: service.utilization,
                        delay: service.delay,
                        headway_violation: violation,
                        by_train: service.by_train,
                    });
                }
            }
        }
        self.fleet.tick_headways(dispatched_route);
        let next = t + self.horizon.step;
        let events = self.mobility.advance_clock(next)?;
        self.denied += events.denied;
        let reward = step_reward(&self.rewards, events.denied, crowd, term);
        self.step_rewards += reward;
        self.steps += 1;
        self.done = is_terminal(next, self.horizon.end, &self.fleet);
        Ok(StepOutcome {
            t,
            state,
            action,
            dispatch,
            refused,
            denied: events.denied,
            reward,
            terminal: self.done,
        })
    }

    /// Plays `actions` from the current state until the episode ends or the
    /// sequence runs out (then holds), returning step rewards plus the
    /// terminal reward.
    pub fn play(&mut self, actions: &[Action]) -> Result<f64> {
        let mut i = 0;
        while !self.done {
            let a = actions.get(i).copied().unwrap_or(Action::Hold);
            self.step(a)?;
            i += 1;
        }
        Ok(self.step_rewards + self.episode_reward())
    }
}
