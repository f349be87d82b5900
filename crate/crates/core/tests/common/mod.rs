//! Checks shared by the property suite and the acceptance run. Each returns
//! a description of the first violation found.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hubsim::agent::EpsilonSchedule;
use hubsim::config::Config;
use hubsim::env::{Action, Environment, Scenario};
use hubsim::fleet::{FleetState, RestrictedUnit, UnitKind};
use hubsim::mobility::{split_demand, split_demand_integer, StateVector1};
use hubsim::network::{RouteId, StationId};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn paper() -> &'static Scenario {
    static S: OnceLock<Scenario> = OnceLock::new();
    S.get_or_init(|| Scenario::from_config(&Config::default().scenario).expect("paper scenario"))
}

pub fn split_conserves(demand: u32, weights: &[f64]) -> Check {
    let stops: Vec<StationId> = (0..weights.len() as u32).map(StationId).collect();
    let w = |s: StationId| weights[s.0 as usize];
    let parts = split_demand(demand as f64, &stops, w).map_err(|e| e.to_string())?;
    let total: f64 = parts.iter().sum();
    ensure!((total - demand as f64).abs() <= 1e-9 * demand as f64, "split sums to {total}, not {demand}");
    let wsum: f64 = weights.iter().sum();
    for (p, wi) in parts.iter().zip(weights) {
        let expect = wi / wsum * demand as f64;
        ensure!(*p >= -1e-9 && (p - expect).abs() <= 1e-6 * demand as f64, "share {p} vs {expect}");
    }
    let ints = split_demand_integer(demand, &stops, w).map_err(|e| e.to_string())?;
    ensure!(ints.iter().sum::<u32>() == demand, "integer split sums to {}", ints.iter().sum::<u32>());
    Ok(())
}

/// Serves one random plan option after holding a random number of steps and
/// compares the service order with the first-come rule.
pub fn fifo_dominance(seed: u64, cap: f64) -> Check {
    let s = paper();
    let mut env = Environment::new(s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..rng.random_range(20..200) {
        env.step(Action::Hold).map_err(|e| e.to_string())?;
    }
    let k = rng.random_range(0..s.plan_actions());
    let (route, _) = env.network().plan_options()[k];
    let schedule = env.network().plan_schedule(k).unwrap().clone();
    let before = env.mobility().clone();
    let svc = before.clone().serve_fifo(route, &schedule, env.clock(), cap);

    let serveable = |i: usize| -> f64 {
        before.groups()[i]
            .stops
            .iter()
            .filter(|st| schedule.contains(st.station))
            .map(|st| st.remaining)
            .sum()
    };
    let eligible: Vec<usize> = (0..before.groups().len())
        .filter(|&i| {
            let g = &before.groups()[i];
            g.spec.route == route && g.in_station && !g.denied && serveable(i) > 0.0
        })
        .collect();
    let served: Vec<usize> = svc.per_group.iter().map(|&(i, _)| i).collect();
    ensure!(served[..] == eligible[..served.len()], "served {served:?} is not a prefix of {eligible:?}");
    for w in served.windows(2) {
        ensure!(
            before.groups()[w[0]].spec.enter_time <= before.groups()[w[1]].spec.enter_time,
            "groups {w:?} served out of arrival order"
        );
    }
    for &(i, amount) in svc.per_group.iter().rev().skip(1) {
        ensure!((amount - serveable(i)).abs() < 1e-9, "group {i} got {amount} of {}", serveable(i));
    }
    if served.len() < eligible.len() {
        ensure!((svc.served - cap).abs() < 1e-9, "later groups skipped with {} seats left", cap - svc.served);
    }
    ensure!(svc.served <= cap + 1e-9, "served {} over capacity {cap}", svc.served);
    Ok(())
}

/// Plays a hold-biased random sequence and checks, after every step, that
/// met fractions only grow and every passenger is served, waiting or denied.
pub fn groups_conserve(seed: u64) -> Check {
    let s = paper();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Environment::new(s);
    let mut prev: Vec<f64> = env.mobility().groups().iter().map(|g| g.met_fraction).collect();
    while !env.is_done() {
        let a = if rng.random_bool(0.15) {
            Action::Dispatch(rng.random_range(0..s.plan_actions()))
        } else {
            Action::Hold
        };
        env.step(a).map_err(|e| e.to_string())?;
        for (i, (g, p)) in env.mobility().groups().iter().zip(prev.iter_mut()).enumerate() {
            ensure!(g.met_fraction >= *p, "group {i} met fraction fell from {p} to {}", g.met_fraction);
            ensure!((0.0..=1.0).contains(&g.met_fraction), "group {i} met fraction {}", g.met_fraction);
            *p = g.met_fraction;
            if g.is_disrupted() {
                let expect = g.demand() * (1.0 - g.met_fraction);
                ensure!((g.remaining() - expect).abs() < 1e-6 * g.demand(), "group {i} remaining {} vs {expect}", g.remaining());
                ensure!(!(g.denied && g.in_station), "group {i} denied but in station");
            }
        }
        let waiting: f64 = env
            .mobility()
            .groups()
            .iter()
            .filter(|g| g.is_disrupted() && !g.denied)
            .map(|g| g.remaining())
            .sum();
        let total = env.served() + waiting + env.denied();
        ensure!(
            (total - s.disrupted_total()).abs() < 1e-6 * s.disrupted_total(),
            "served + waiting + denied = {total}, demand {}",
            s.disrupted_total()
        );
    }
    Ok(())
}

pub fn paper_dimensions() -> Check {
    let s = paper();
    let env = Environment::new(s);
    ensure!(env.state1().to_array().len() == 5 && StateVector1::DIM == 5, "state1 is not 5-dimensional");
    ensure!(env.state2().len() == 130 && s.state2_dim() == 130, "state2 has {} entries", env.state2().len());
    // Disrupted trains per route straight from the timetable; each route
    // offers at most three stop tiers.
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/paper_timetable.csv");
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut per_route = BTreeMap::<String, usize>::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[4].trim() == "1" {
            *per_route.entry(cols[3].trim().to_string()).or_default() += 1;
        }
    }
    ensure!(per_route.len() == 9, "{} disrupted routes", per_route.len());
    ensure!(per_route.values().sum::<usize>() == 33, "{} disrupted trains", per_route.values().sum::<usize>());
    let expected: usize = per_route.values().map(|&n| n.min(3)).sum();
    ensure!(expected == 21 && s.plan_actions() == expected, "{} plan actions, expected {expected}", s.plan_actions());
    ensure!(s.fleet_size() == 20, "fleet of {}", s.fleet_size());
    Ok(())
}

/// Random restricted units and allocation requests at non-decreasing times.
pub fn restricted_pinning(arrivals: &[(f64, u32)], flexible: u32, requests: &[(f64, u32)]) -> Check {
    let units: Vec<RestrictedUnit> = arrivals
        .iter()
        .enumerate()
        .map(|(i, &(t, r))| RestrictedUnit {
            code: format!("R{i}"),
            arrival_time: t,
            route: RouteId(r),
            capacity: 200.0,
            used: false,
        })
        .collect();
    let mut fleet = FleetState::new(flexible, 250.0, units, (1..4).map(RouteId), 10.0, 5.0);
    let mut t = 0.0;
    for &(dt, r) in requests {
        t += dt;
        let route = RouteId(r);
        let matching = fleet
            .restricted
            .iter()
            .any(|u| !u.used && u.route == route && u.arrival_time <= t);
        let flex_before = fleet.flexible;
        match fleet.allocate(t, route).map(|a| a.kind) {
            Some(UnitKind::Restricted(i)) => {
                let u = &fleet.restricted[i];
                ensure!(u.route == route, "unit {} pinned to {} used on {route}", u.code, u.route);
                ensure!(u.arrival_time <= t, "unit {} used at {t} before arriving at {}", u.code, u.arrival_time);
                ensure!(fleet.flexible == flex_before, "flexible pool changed");
            }
            Some(UnitKind::Flexible) => {
                ensure!(!matching, "flexible unit used while a pinned unit waited");
                ensure!(fleet.flexible + 1 == flex_before, "flexible pool not decremented");
            }
            None => ensure!(!matching && flex_before == 0, "refused with units available"),
        }
    }
    for u in fleet.restricted.iter().filter(|u| u.arrival_time > t) {
        ensure!(!u.used, "unit {} used before arrival", u.code);
    }
    Ok(())
}

/// Headways after a sequence of ticks, each dispatching on at most one of
/// routes 1..=3, against minutes counted since the last dispatch.
pub fn headway_arithmetic(seq: &[Option<u32>]) -> Check {
    let (step, initial) = (5.0, 10.0);
    let mut fleet = FleetState::new(0, 250.0, Vec::new(), (1..4).map(RouteId), initial, step);
    for (i, d) in seq.iter().enumerate() {
        fleet.tick_headways(d.map(RouteId));
        for r in 1..4u32 {
            let expect = match seq[..=i].iter().rposition(|x| *x == Some(r)) {
                Some(j) => (i - j) as f64 * step,
                None => initial + (i + 1) as f64 * step,
            };
            let got = fleet.headway(RouteId(r));
            ensure!(got == expect, "route {r} after {} ticks: {got} vs {expect}", i + 1);
            ensure!(fleet.separation(RouteId(r)) == expect + step, "route {r} separation");
        }
    }
    Ok(())
}

pub fn epsilon_reference() -> Check {
    let e = EpsilonSchedule::default();
    let mid = e.value(e.offset + 0.5);
    ensure!((mid - 0.6).abs() < 1e-9, "epsilon at the midpoint is {mid}");
    ensure!((e.value(0.0) - 0.99466).abs() < 1e-5, "epsilon(0) is {}", e.value(0.0));
    Ok(())
}
