//! Rolling-stock pools and per-route headway clocks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::network::{Network, RouteId};
use crate::time::Minutes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedUnit {
    pub code: String,
    pub arrival_time: Minutes,
    pub route: RouteId,
    pub capacity: f64,
    pub used: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitKind {
    Flexible,
    Restricted(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub kind: UnitKind,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub flexible_capacity: f64,
    /// Nominal seats of a through train before onboard occupancy is removed.
    pub restricted_capacity: f64,
    /// Through trains departing before this time can be re-used.
    pub split_time: Minutes,
    /// Overrides the number of flexible units taken from the timetable.
    pub flexible_count: Option<u32>,
    /// Headway reported for routes that have not seen a dispatch yet.
    pub initial_headway: Minutes,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            flexible_capacity: 250.0,
            restricted_capacity: 200.0,
            split_time: 17.0 * 60.0,
            flexible_count: None,
            initial_headway: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    pub flexible: u32,
    pub flexible_capacity: f64,
    pub restricted: Vec<RestrictedUnit>,
    headways: BTreeMap<RouteId, Minutes>,
    step: Minutes,
    initial: u32,
}

impl FleetState {
    pub fn new(
        flexible: u32,
        flexible_capacity: f64,
        restricted: Vec<RestrictedUnit>,
        routes: impl IntoIterator<Item = RouteId>,
        initial_headway: Minutes,
        step: Minutes,
    ) -> FleetState {
        let initial = flexible + restricted.iter().filter(|u| !u.used).count() as u32;
        FleetState {
            flexible,
            flexible_capacity,
            restricted,
            headways: routes.into_iter().map(|r| (r, initial_headway)).collect(),
            step,
            initial,
        }
    }

    /// Builds the pools from the timetable: trains originating at the target
    /// are flexible; through trains departing before the split time are
    /// restricted, with capacity discounted by the attractiveness of their
    /// upstream stations.
    pub fn from_network(network: &Network, config: &FleetConfig, step: Minutes) -> FleetState {
        let disrupted = network.timetable.iter().filter(|t| t.disrupted);
        let originating = disrupted.clone().filter(|t| t.arrive_time.is_none()).count() as u32;
        let restricted = disrupted
            .filter(|t| t.arrive_time.is_some() && t.depart_time < config.split_time)
            .map(|t| RestrictedUnit {
                code: t.code.clone(),
                arrival_time: t.arrive_time.unwrap(),
                route: t.route,
                capacity: config.restricted_capacity * onboard_free_share(network, &t.code, t.route),
                used: false,
            })
            .collect();
        FleetState::new(
            config.flexible_count.unwrap_or(originating),
            config.flexible_capacity,
            restricted,
            network.disrupted_routes(),
            config.initial_headway,
            step,
        )
    }

    /// `(available now, arriving later)`.
    pub fn availability(&self, t: Minutes) -> (u32, u32) {
        let mut now = self.flexible;
        let mut later = 0;
        for u in self.restricted.iter().filter(|u| !u.used) {
            if u.arrival_time <= t {
                now += 1;
            } else {
                later += 1;
            }
        }
        (now, later)
    }

    /// Takes a unit for `route`: an arrived restricted unit pinned to that
    /// route if one exists, otherwise a flexible unit.
    pub fn allocate(&mut self, t: Minutes, route: RouteId) -> Option<Allocation> {
        let pick = self
            .restricted
            .iter()
            .position(|u| !u.used && u.route == route && u.arrival_time <= t);
        if let Some(i) = pick {
            self.restricted[i].used = true;
            return Some(Allocation {
                kind: UnitKind::Restricted(i),
                capacity: self.restricted[i].capacity,
            });
        }
        if self.flexible > 0 {
            self.flexible -= 1;
            return Some(Allocation {
                kind: UnitKind::Flexible,
                capacity: self.flexible_capacity,
            });
        }
        None
    }

    /// End-of-step headway update: the dispatched route resets to zero, every
    /// other route ages by one step.
    pub fn tick_headways(&mut self, dispatched: Option<RouteId>) {
        for (&r, h) in self.headways.iter_mut() {
            if Some(r) == dispatched {
                *h = 0.0;
            } else {
                *h += self.step;
            }
        }
    }

    /// Minutes since the last dispatch on `route`, as of the last tick.
    pub fn headway(&self, route: RouteId) -> Minutes {
        self.headways.get(&route).copied().unwrap_or(0.0)
    }

    /// Separation a dispatch on `route` would have from the previous one; the
    /// clock has moved one step since the last tick.
    pub fn separation(&self, route: RouteId) -> Minutes {
        self.headway(route) + self.step
    }

    pub fn headways(&self) -> &BTreeMap<RouteId, Minutes> {
        &self.headways
    }

    /// True once no unit can ever be dispatched again.
    pub fn exhausted(&self) -> bool {
        self.flexible == 0 && self.restricted.iter().all(|u| u.used)
    }

    pub fn initial_size(&self) -> u32 {
        self.initial
    }

    pub fn used(&self) -> u32 {
        let (now, later) = self.availability(f64::INFINITY);
        self.initial - now - later
    }
}

/// Share of a through train's seats left after upstream boarders, by the
/// gravity weights of upstream versus downstream stops.
fn onboard_free_share(network: &Network, code: &str, route: RouteId) -> f64 {
    let weight = |ids: &mut dyn Iterator<Item = crate::network::StationId>| -> f64 {
        ids.map(|s| network.station(s).attractiveness).sum()
    };
    let downstream = network
        .original_stops
        .get(code)
        .map(|stops| weight(&mut stops.iter().map(|&(s, _)| s)))
        .unwrap_or(0.0);
    let upstream = network
        .route(route)
        .map(|r| weight(&mut r.upstream.iter().copied()))
        .unwrap_or(0.0);
    if downstream + upstream > 0.0 {
        downstream / (downstream + upstream)
    } else {
        1.0
    }
}
