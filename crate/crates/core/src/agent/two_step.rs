use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dqn::{Dqn, TrainParams, Transition};
use super::mlp::Activation;
use super::EpsilonSchedule;
use crate::error::{Error, Result};
use crate::mobility::{StateVector1, StateVector2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub dispatch_hidden: Vec<usize>,
    pub plan_hidden: Vec<usize>,
    pub activation: Activation,
    /// Optimizer step size. Kept apart from `discount`, the Bellman γ.
    pub learning_rate: f64,
    pub discount: f64,
    pub sync_period: u64,
    pub minibatch: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    pub reward_scale: f64,
    pub epsilon: EpsilonSchedule,
    /// Restrict plan choices to routes that currently have an eligible unit.
    pub mask_infeasible: bool,
    /// Probability that an exploratory dispatch-step action is "dispatch";
    /// 0.5 is the uniform choice.
    pub explore_dispatch_rate: f64,
    /// Past episodes kept for replay; 0 trains on the current episode only.
    pub replay_capacity: usize,
    /// Past episodes added to each update.
    pub replay_sample: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            dispatch_hidden: vec![5],
            plan_hidden: vec![128, 64],
            activation: Activation::Relu,
            learning_rate: 1e-3,
            discount: 0.95,
            sync_period: 1,
            minibatch: 0,
            epochs: 1,
            grad_clip: 10.0,
            reward_scale: 1e-3,
            epsilon: EpsilonSchedule::default(),
            mask_infeasible: true,
            explore_dispatch_rate: 0.5,
            replay_capacity: 0,
            replay_sample: 0,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            learning_rate: self.learning_rate,
            discount: self.discount,
            sync_period: self.sync_period,
            minibatch: self.minibatch,
            epochs: self.epochs,
            grad_clip: self.grad_clip,
            reward_scale: self.reward_scale,
        }
    }
}

/// Input scaling applied before either network sees a state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub passengers: f64,
    pub stock: f64,
    pub clock_start: f64,
    pub clock_span: f64,
    pub headway: f64,
}

impl Normalization {
    pub fn encode1(&self, s: &StateVector1) -> Vec<f64> {
        vec![
            s.crowdedness / self.passengers,
            s.disrupted_demand / self.passengers,
            s.flexible_stock / self.stock,
            s.potential_stock / self.stock,
            (s.clock - self.clock_start) / self.clock_span,
        ]
    }

    pub fn encode2(&self, s: &StateVector2) -> Vec<f64> {
        s.od_demand
            .iter()
            .map(|d| d / self.passengers)
            .chain(s.headways.iter().map(|h| h / self.headway))
            .collect()
    }
}

/// Dispatch network (whether to send a train) and plan network (which route
/// and stop tier), sharing one exploration schedule.
#[derive(Clone, Debug)]
pub struct TwoStepAgent {
    pub dispatch: Dqn,
    pub plan: Dqn,
    pub config: AgentConfig,
    pub norm: Normalization,
    rng: ChaCha8Rng,
    episode: u64,
    fixed_epsilon: Option<f64>,
    replay: VecDeque<(Vec<Transition>, Vec<Transition>)>,
}

impl TwoStepAgent {
    pub fn new(config: AgentConfig, norm: Normalization, plan_inputs: usize, plan_actions: usize) -> TwoStepAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sizes = |input: usize, hidden: &[usize], out: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let dispatch = Dqn::new(
            &sizes(StateVector1::DIM, &config.dispatch_hidden, 2),
            config.activation,
            &mut rng,
        );
        let plan = Dqn::new(
            &sizes(plan_inputs, &config.plan_hidden, plan_actions),
            config.activation,
            &mut rng,
        );
        TwoStepAgent {
            dispatch,
            plan,
            config,
            norm,
            rng,
            episode: 0,
            fixed_epsilon: None,
            replay: VecDeque::new(),
        }
    }

    /// Rebuilds an agent around already-trained networks.
    pub fn from_parts(config: AgentConfig, norm: Normalization, dispatch: Dqn, plan: Dqn) -> TwoStepAgent {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        TwoStepAgent {
            dispatch,
            plan,
            config,
            norm,
            rng,
            episode: 0,
            fixed_epsilon: None,
            replay: VecDeque::new(),
        }
    }

    /// Pins exploration, e.g. for frozen evaluation.
    pub fn set_fixed_epsilon(&mut self, epsilon: Option<f64>) {
        self.fixed_epsilon = epsilon;
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn epsilon(&self) -> f64 {
        self.fixed_epsilon
            .unwrap_or_else(|| self.config.epsilon.value(self.episode as f64))
    }

    pub fn plan_actions(&self) -> usize {
        self.plan.actions()
    }

    pub fn plan_inputs(&self) -> usize {
        self.plan.online.input_dim()
    }

    pub fn act(&mut self, s1: &StateVector1) -> Result<bool> {
        let x = self.norm.encode1(s1);
        let eps = self.epsilon();
        let rate = self.config.explore_dispatch_rate;
        if rate == 0.5 {
            return Ok(self.dispatch.select(&x, eps, &mut self.rng)? == 1);
        }
        let greedy = self.dispatch.greedy(&x)?;
        if self.rng.random::<f64>() < eps {
            Ok(self.rng.random::<f64>() < rate)
        } else {
            Ok(greedy == 1)
        }
    }

    pub fn plan(&mut self, s2: &StateVector2) -> Result<usize> {
        self.plan_masked(s2, None)
    }

    pub fn plan_masked(&mut self, s2: &StateVector2, mask: Option<&[bool]>) -> Result<usize> {
        let x = self.norm.encode2(s2);
        if x.len() != self.plan_inputs() {
            return Err(Error::Dimension {
                expected: self.plan_inputs(),
                actual: x.len(),
            });
        }
        let eps = self.epsilon();
        self.plan.select_masked(&x, eps, mask, &mut self.rng)
    }

    /// End-of-episode update of both networks. Each memory receives the
    /// episode reward on its final transition. With replay enabled the batch
    /// also holds whole past episodes drawn from the buffer.
    pub fn learn(&mut self, dispatch_memory: &[Transition], plan_memory: &[Transition], episode_reward: f64) -> Result<(Option<f64>, Option<f64>)> {
        let params = self.config.train_params();
        let (l1, l2) = if self.config.replay_capacity == 0 {
            (
                self.dispatch.train_batch(dispatch_memory, episode_reward, &params)?,
                self.plan.train_batch(plan_memory, episode_reward, &params)?,
            )
        } else {
            let with_reward = |m: &[Transition]| {
                let mut m = m.to_vec();
                if let Some(last) = m.last_mut() {
                    last.reward += episode_reward;
                }
                m
            };
            let (mut d, mut p) = (with_reward(dispatch_memory), with_reward(plan_memory));
            let extra = self.config.replay_sample.min(self.replay.len());
            for i in rand::seq::index::sample(&mut self.rng, self.replay.len(), extra) {
                d.extend_from_slice(&self.replay[i].0);
                p.extend_from_slice(&self.replay[i].1);
            }
            let out = (
                self.dispatch.train_batch(&d, 0.0, &params)?,
                self.plan.train_batch(&p, 0.0, &params)?,
            );
            if self.replay.len() == self.config.replay_capacity {
                self.replay.pop_front();
            }
            self.replay
                .push_back((with_reward(dispatch_memory), with_reward(plan_memory)));
            out
        };
        self.episode += 1;
        Ok((l1, l2))
    }
}
