use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{sample_gradient, Activation, Gradients, Mlp, Sample};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Actions allowed in `next_state`; `None` allows all.
    #[serde(default)]
    pub next_mask: Option<Vec<bool>>,
    /// Environment steps between `state` and `next_state`; the bootstrap
    /// term is discounted once per step.
    #[serde(default = "one")]
    pub span: u32,
    pub terminal: bool,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub discount: f64,
    /// Number of `train_batch` calls between target-network syncs.
    pub sync_period: u64,
    /// Transitions per gradient step; 0 means the whole episode.
    pub minibatch: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    /// Multiplier applied to rewards before they become regression targets.
    pub reward_scale: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 1e-3,
            discount: 0.95,
            sync_period: 1,
            minibatch: 0,
            epochs: 1,
            grad_clip: 10.0,
            reward_scale: 1.0,
        }
    }
}

/// Online network, target network and the training counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Dqn {
    pub online: Mlp,
    pub target: Mlp,
    batches: u64,
    updates: u64,
}

impl Dqn {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Dqn {
        Dqn::from_online(Mlp::new(sizes, activation, rng))
    }

    pub fn from_online(online: Mlp) -> Dqn {
        Dqn {
            target: online.clone(),
            online,
            batches: 0,
            updates: 0,
        }
    }

    pub fn actions(&self) -> usize {
        self.online.output_dim()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    /// Arg-max of the online network; ties go to the lowest index.
    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    pub fn select<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        self.select_masked(state, epsilon, None, rng)
    }

    /// Epsilon-greedy restricted to actions whose `mask` entry is true. An
    /// all-false mask falls back to the unrestricted choice.
    pub fn select_masked<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        epsilon: f64,
        mask: Option<&[bool]>,
        rng: &mut R,
    ) -> Result<usize> {
        let q = self.q_values(state)?;
        let allowed: Vec<usize> = match mask {
            Some(m) if m.iter().any(|&b| b) => (0..q.len()).filter(|&i| m.get(i).copied().unwrap_or(false)).collect(),
            _ => (0..q.len()).collect(),
        };
        let roll: f64 = rng.random();
        if roll < epsilon {
            return Ok(allowed[rng.random_range(0..allowed.len())]);
        }
        let mut best = allowed[0];
        for &i in &allowed[1..] {
            if q[i] > q[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Bellman targets from the target network, with the episode reward added
    /// to the final transition and all rewards scaled.
    pub fn targets(&self, memory: &[Transition], episode_reward: f64, params: &TrainParams) -> Result<Vec<f64>> {
        let last = memory.len().saturating_sub(1);
        memory
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let mut r = t.reward;
                if j == last {
                    r += episode_reward;
                }
                let r = r * params.reward_scale;
                if t.terminal {
                    Ok(r)
                } else {
                    let next = self.target.forward(&t.next_state)?;
                    let allowed = |i: &usize| t.next_mask.as_ref().is_none_or(|m| m[*i]);
                    let best = (0..next.len())
                        .filter(allowed)
                        .map(|i| next[i])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let best = if best.is_finite() { best } else { next.iter().copied().fold(f64::NEG_INFINITY, f64::max) };
                    Ok(r + params.discount.powi(t.span.max(1) as i32) * best)
                }
            })
            .collect()
    }

    /// One whole-episode batch update. Returns the mean squared error of the
    /// online network against the targets before the update, or `None` for an
    /// empty memory.
    pub fn train_batch(&mut self, memory: &[Transition], episode_reward: f64, params: &TrainParams) -> Result<Option<f64>> {
        if memory.is_empty() {
            return Ok(None);
        }
        let targets = self.targets(memory, episode_reward, params)?;
        let samples: Vec<Sample> = memory
            .iter()
            .zip(&targets)
            .map(|(t, &y)| Sample {
                input: t.state.clone(),
                action: t.action,
                target: y,
            })
            .collect();
        let mut loss = 0.0;
        for s in &samples {
            let q = self.online.forward(&s.input)?;
            loss += (s.target - q[s.action]).powi(2);
        }
        loss /= samples.len() as f64;

        let chunk = if params.minibatch == 0 {
            samples.len()
        } else {
            params.minibatch
        };
        for _ in 0..params.epochs.max(1) {
            for batch in samples.chunks(chunk) {
                let mut g = Gradients::zeros_like(&self.online);
                for s in batch {
                    g.add(&sample_gradient(&self.online, s)?);
                }
                g.scale(1.0 / batch.len() as f64);
                let norm = g.norm();
                if params.grad_clip > 0.0 && norm > params.grad_clip {
                    g.scale(params.grad_clip / norm);
                }
                self.online.apply(&g, params.learning_rate)?;
                self.updates += 1;
            }
        }
        self.batches += 1;
        if params.sync_period > 0 && self.batches.is_multiple_of(params.sync_period) {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
