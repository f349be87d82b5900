//! Two-step deep Q-network dispatcher.

mod dqn;
pub mod mlp;
pub mod model;
mod two_step;

pub use dqn::{Dqn, TrainParams, Transition};
pub use mlp::{gradient_check, Activation, Gradients, Mlp, Sample};
pub use two_step::{AgentConfig, Normalization, TwoStepAgent};

use serde::{Deserialize, Serialize};

/// Sigmoid-shaped exploration decay indexed by training episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub min: f64,
    /// Steepness of the decay.
    pub rate: f64,
    /// Episode around which the decay is centred.
    pub offset: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            min: 0.2,
            rate: 0.005,
            offset: 1000.0,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, t: f64) -> f64 {
        self.start - (self.start - self.min) / (1.0 + (-self.rate * ((t - self.offset) - 0.5)).exp())
    }
}
