//! Step and episode rewards, and episode termination.

use serde::{Deserialize, Serialize};

use crate::fleet::FleetState;
use crate::time::Minutes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Step weights: denied, crowdedness, satisfied, utilization, delay, headway.
    pub omega: [f64; 6],
    /// Episode coefficients: scale, satisfied-fraction exponent, stock-fraction exponent.
    pub beta: [f64; 3],
    /// Overcrowding threshold in passengers.
    pub crowd_threshold: f64,
    pub headway_penalty: f64,
    pub headway_limit: Minutes,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            omega: [-1.0, -0.1, 10.0, 1e3, -1e-2, 1.0],
            beta: [4.0, 3.0, 5.0],
            crowd_threshold: 1600.0,
            headway_penalty: -500.0,
            headway_limit: 10.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.crowd_threshold > 0.0) {
            return Err("crowd_threshold must be positive".into());
        }
        if self.omega.iter().chain(&self.beta).any(|w| !w.is_finite()) {
            return Err("reward weights must be finite".into());
        }
        Ok(())
    }
}

/// What happened on the dispatch side of a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DispatchTerm {
    None,
    /// The fleet had no eligible unit for the requested route.
    Refused,
    Executed {
        served: f64,
        utilization: f64,
        delay: f64,
        headway_violation: bool,
    },
}

pub fn step_reward(w: &RewardWeights, denied_next: f64, crowdedness: f64, dispatch: DispatchTerm) -> f64 {
    let [w1, w2, w3, w4, w5, w6] = w.omega;
    let base = w1 * denied_next + w2 * crowdedness;
    match dispatch {
        DispatchTerm::None => base,
        DispatchTerm::Refused => base + w.headway_penalty,
        DispatchTerm::Executed {
            served,
            utilization,
            delay,
            headway_violation,
        } => {
            let h = if headway_violation { w.headway_penalty } else { 0.0 };
            base + w3 * served + w4 * utilization + w5 * delay + w6 * h
        }
    }
}

/// `satisfied` and `stock` are fractions of total demand and fleet size.
pub fn episode_reward(w: &RewardWeights, satisfied: f64, stock: f64, max_crowd: f64) -> f64 {
    let [b1, b2, b3] = w.beta;
    let crowd = if max_crowd > w.crowd_threshold { max_crowd } else { 0.0 };
    b1 * (b2 * satisfied + b3 * stock).exp() - crowd
}

pub fn is_terminal(t: Minutes, horizon_end: Minutes, fleet: &FleetState) -> bool {
    t >= horizon_end || fleet.exhausted()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::RestrictedUnit;
    use crate::network::RouteId;

    #[test]
    fn step_reward_substitutions() {
        let w = RewardWeights::default();
        assert_eq!(step_reward(&w, 0.0, 100.0, DispatchTerm::None), -10.0);
        let exec = |v| DispatchTerm::Executed {
            served: 150.0,
            utilization: 150.0 / 250.0,
            delay: 0.0,
            headway_violation: v,
        };
        assert_eq!(step_reward(&w, 0.0, 500.0, exec(false)), 2050.0);
        assert_eq!(step_reward(&w, 0.0, 500.0, exec(true)), 1550.0);
        assert_eq!(step_reward(&w, 0.0, 100.0, DispatchTerm::Refused), -510.0);
        assert_eq!(step_reward(&w, 7.0, 0.0, DispatchTerm::None), -7.0);
    }

    #[test]
    fn episode_reward_substitutions() {
        let w = RewardWeights::default();
        assert_eq!(episode_reward(&w, 0.0, 0.0, 1600.0), 4.0);
        assert!((episode_reward(&w, 0.25, 1.0, 1200.0) - 1256.8).abs() < 0.1);
        assert_eq!(episode_reward(&w, 0.0, 0.0, 1700.0), -1696.0);
    }

    #[test]
    fn terminal_conditions() {
        let mut f = FleetState::new(
            0,
            250.0,
            vec![RestrictedUnit {
                code: "x".into(),
                arrival_time: 1200.0,
                route: RouteId(1),
                capacity: 100.0,
                used: false,
            }],
            [RouteId(1)],
            10.0,
            5.0,
        );
        assert!(!is_terminal(700.0, 1440.0, &f));
        assert!(is_terminal(1440.0, 1440.0, &f));
        f.restricted[0].used = true;
        assert!(is_terminal(700.0, 1440.0, &f));
    }
}
