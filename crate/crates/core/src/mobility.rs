//! Passenger side of the environment: group lifecycle, gravity splitting,
//! first-in-first-out service and the aggregate state variables.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::FleetState;
use crate::network::{Network, RouteId, StationId, StopSchedule};
use crate::time::Minutes;

/// Static description of a passenger group, as persisted in group files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub enter_time: Minutes,
    pub planned_depart: Minutes,
    pub leave_time: Minutes,
    pub target_train: String,
    pub route: RouteId,
    pub demand: u32,
}

impl GroupSpec {
    pub fn check_times(&self) -> std::result::Result<(), String> {
        if !(self.enter_time <= self.planned_depart) {
            return Err(format!(
                "enter_time {} after planned_depart {}",
                self.enter_time, self.planned_depart
            ));
        }
        if !(self.planned_depart <= self.leave_time) {
            return Err(format!(
                "leave_time {} before planned_depart {}",
                self.leave_time, self.planned_depart
            ));
        }
        if self.demand == 0 {
            return Err("demand must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStop {
    pub station: StationId,
    /// Unserved passengers heading to this station.
    pub remaining: f64,
    /// Arrival time of the group's original train at this station.
    pub original_arrival: Minutes,
    pub od_slot: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassengerGroup {
    pub spec: GroupSpec,
    pub in_station: bool,
    pub met_fraction: f64,
    pub denied: bool,
    /// Split demand over the target train's stops; empty for undisrupted groups.
    pub stops: Vec<GroupStop>,
}

impl PassengerGroup {
    /// Builds the dynamic group, splitting disrupted demand over the target
    /// train's original downstream stops.
    pub fn new(spec: GroupSpec, network: &Network) -> Result<PassengerGroup> {
        let mut stops = Vec::new();
        if spec.route.is_disrupted() {
            let train = network
                .train(&spec.target_train)
                .ok_or_else(|| Error::UnknownTrain(spec.target_train.clone()))?;
            let original = network
                .original_stops
                .get(&train.code)
                .ok_or_else(|| Error::Train {
                    code: train.code.clone(),
                    message: "no original stops".into(),
                })?;
            let full = network.full_schedule(spec.route).ok_or_else(|| Error::Route {
                route: spec.route,
                message: "no stop schedules".into(),
            })?;
            let stations: Vec<StationId> = original.iter().map(|&(s, _)| s).collect();
            let split = split_demand(spec.demand as f64, &stations, |s| {
                network.station(s).attractiveness
            })?;
            for (&station, remaining) in stations.iter().zip(split) {
                let offset = full.offset_of(station).ok_or_else(|| Error::Route {
                    route: spec.route,
                    message: format!("station {} missing from full schedule", station.0),
                })?;
                stops.push(GroupStop {
                    station,
                    remaining,
                    original_arrival: train.depart_time + offset,
                    od_slot: network
                        .od_slot(spec.route, station)
                        .expect("full schedule stations have OD slots"),
                });
            }
        }
        Ok(PassengerGroup {
            spec,
            in_station: false,
            met_fraction: 0.0,
            denied: false,
            stops,
        })
    }

    pub fn is_disrupted(&self) -> bool {
        self.spec.route.is_disrupted()
    }

    pub fn demand(&self) -> f64 {
        self.spec.demand as f64
    }

    /// Passengers not yet served, δ_g(1 − p_M).
    pub fn remaining(&self) -> f64 {
        if self.stops.is_empty() {
            self.demand() * (1.0 - self.met_fraction)
        } else {
            self.stops.iter().map(|s| s.remaining).sum()
        }
    }

    pub fn served(&self) -> f64 {
        self.demand() - self.remaining()
    }
}

/// Gravity split of `demand` over `stops`, proportional to attractiveness.
/// The last stop absorbs rounding so the parts sum to `demand` exactly.
pub fn split_demand(
    demand: f64,
    stops: &[StationId],
    attractiveness: impl Fn(StationId) -> f64,
) -> Result<Vec<f64>> {
    if stops.is_empty() {
        return Err(Error::EmptyStopSet);
    }
    let weights: Vec<f64> = stops.iter().map(|&s| attractiveness(s)).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroAttractiveness);
    }
    let mut parts: Vec<f64> = weights.iter().map(|w| w / total * demand).collect();
    let head: f64 = parts[..parts.len() - 1].iter().sum();
    *parts.last_mut().unwrap() = demand - head;
    Ok(parts)
}

/// Integer version of [`split_demand`] used for reporting.
pub fn split_demand_integer(
    demand: u32,
    stops: &[StationId],
    attractiveness: impl Fn(StationId) -> f64,
) -> Result<Vec<u32>> {
    let parts = split_demand(demand as f64, stops, attractiveness)?;
    let mut out: Vec<u32> = parts.iter().map(|p| p.floor().max(0.0) as u32).collect();
    let head: u32 = out[..out.len() - 1].iter().sum();
    *out.last_mut().unwrap() = demand - head;
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MobilityEvents {
    /// Groups that entered the station during the interval.
    pub arrived: usize,
    /// Undisrupted passengers that left on their own train.
    pub departed: f64,
    /// Disrupted passengers that abandoned during the interval.
    pub denied: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Service {
    /// Satisfied demand δ_i.
    pub served: f64,
    /// u_i = δ_i / cp.
    pub utilization: f64,
    /// Passenger-weighted arrival delay Δ_i in minutes.
    pub delay: f64,
    /// `(group index, passengers served)` in service order.
    pub per_group: Vec<(usize, f64)>,
    pub by_train: BTreeMap<String, f64>,
}

/// Live passenger state for one episode.
#[derive(Clone, Debug)]
pub struct Mobility {
    groups: Vec<PassengerGroup>,
    clock: Minutes,
}

impl Mobility {
    /// Starts the clock at `start`. Groups are kept in ascending enter-time order.
    pub fn new(mut groups: Vec<PassengerGroup>, start: Minutes) -> Mobility {
        groups.sort_by(|a, b| a.spec.enter_time.total_cmp(&b.spec.enter_time));
        let mut m = Mobility {
            groups,
            clock: start,
        };
        m.update_flags(start);
        m
    }

    pub fn clock(&self) -> Minutes {
        self.clock
    }

    pub fn groups(&self) -> &[PassengerGroup] {
        &self.groups
    }

    /// Moves the clock forward and applies arrivals, departures and abandonment.
    pub fn advance_clock(&mut self, t: Minutes) -> Result<MobilityEvents> {
        if t < self.clock {
            return Err(Error::NonMonotoneClock {
                current: self.clock,
                requested: t,
            });
        }
        self.clock = t;
        Ok(self.update_flags(t))
    }

    fn update_flags(&mut self, t: Minutes) -> MobilityEvents {
        let mut ev = MobilityEvents::default();
        for g in &mut self.groups {
            if g.denied {
                continue;
            }
            let entered = g.spec.enter_time <= t;
            if g.is_disrupted() {
                if t > g.spec.leave_time {
                    ev.denied += g.remaining();
                    g.denied = true;
                    g.in_station = false;
                } else if entered && !g.in_station {
                    g.in_station = true;
                    ev.arrived += 1;
                }
            } else {
                let present = entered && t < g.spec.planned_depart;
                if present && !g.in_station {
                    ev.arrived += 1;
                }
                if g.in_station && !present {
                    ev.departed += g.remaining();
                }
                g.in_station = present;
            }
        }
        ev
    }

    /// Serves in-station groups of `route` in arrival order with a train running
    /// `schedule`, dispatched at `dispatch_time` with `capacity` seats.
    pub fn serve_fifo(
        &mut self,
        route: RouteId,
        schedule: &StopSchedule,
        dispatch_time: Minutes,
        capacity: f64,
    ) -> Service {
        let arrivals: HashMap<StationId, Minutes> = schedule
            .stops
            .iter()
            .zip(&schedule.offsets)
            .map(|(&s, &o)| (s, dispatch_time + o))
            .collect();
        let mut left = capacity.max(0.0);
        let mut out = Service::default();
        for (idx, g) in self.groups.iter_mut().enumerate() {
            if left <= 0.0 {
                break;
            }
            if g.spec.route != route || !g.in_station || g.denied {
                continue;
            }
            let serveable: f64 = g
                .stops
                .iter()
                .filter(|s| arrivals.contains_key(&s.station))
                .map(|s| s.remaining)
                .sum();
            if serveable <= 0.0 {
                continue;
            }
            let served = serveable.min(left);
            let full = served >= serveable;
            let share = served / serveable;
            for s in g.stops.iter_mut() {
                let Some(&arr) = arrivals.get(&s.station) else {
                    continue;
                };
                let take = if full { s.remaining } else { s.remaining * share };
                s.remaining = if full { 0.0 } else { s.remaining - take };
                out.delay += take * (arr - s.original_arrival).max(0.0);
            }
            let met = ((g.demand() - g.remaining()) / g.demand()).clamp(0.0, 1.0);
            g.met_fraction = g.met_fraction.max(met);
            left -= served;
            out.served += served;
            out.per_group.push((idx, served));
            *out.by_train.entry(g.spec.target_train.clone()).or_default() += served;
        }
        out.utilization = if capacity > 0.0 {
            out.served / capacity
        } else {
            0.0
        };
        out
    }

    /// In-station crowdedness δ^in_t.
    pub fn crowdedness(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.in_station)
            .map(PassengerGroup::remaining)
            .sum()
    }

    /// In-station demand of disrupted routes δ^{in,r}_t.
    pub fn disrupted_demand(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.in_station && g.is_disrupted())
            .map(PassengerGroup::remaining)
            .sum()
    }

    /// Remaining in-station demand per OD slot of the network.
    pub fn od_demand(&self, slots: usize) -> Vec<f64> {
        let mut od = vec![0.0; slots];
        for g in self.groups.iter().filter(|g| g.in_station) {
            for s in &g.stops {
                od[s.od_slot] += s.remaining;
            }
        }
        od
    }

    /// Remaining in-station demand summed per disrupted route.
    pub fn route_demand(&self) -> BTreeMap<RouteId, f64> {
        let mut out = BTreeMap::new();
        for g in self.groups.iter().filter(|g| g.in_station && g.is_disrupted()) {
            *out.entry(g.spec.route).or_default() += g.remaining();
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateVector1 {
    pub crowdedness: f64,
    pub disrupted_demand: f64,
    pub flexible_stock: f64,
    pub potential_stock: f64,
    pub clock: Minutes,
}

impl StateVector1 {
    pub const DIM: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.crowdedness,
            self.disrupted_demand,
            self.flexible_stock,
            self.potential_stock,
            self.clock,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateVector2 {
    pub od_demand: Vec<f64>,
    pub headways: Vec<f64>,
}

impl StateVector2 {
    pub fn len(&self) -> usize {
        self.od_demand.len() + self.headways.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn observe_state1(mobility: &Mobility, fleet: &FleetState) -> StateVector1 {
    let t = mobility.clock();
    let (flexible, potential) = fleet.availability(t);
    StateVector1 {
        crowdedness: mobility.crowdedness(),
        disrupted_demand: mobility.disrupted_demand(),
        flexible_stock: flexible as f64,
        potential_stock: potential as f64,
        clock: t,
    }
}

pub fn observe_state2(mobility: &Mobility, fleet: &FleetState, network: &Network) -> StateVector2 {
    StateVector2 {
        od_demand: mobility.od_demand(network.od_slots().len()),
        headways: network
            .disrupted_routes()
            .map(|r| fleet.headway(r))
            .collect(),
    }
}

const GROUP_HEADER: [&str; 6] = [
    "enter_time",
    "planned_depart",
    "leave_time",
    "target_train",
    "route",
    "demand",
];

pub fn write_groups<W: Write>(writer: W, groups: &[GroupSpec]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Config(format!("writing groups: {e}"));
    w.write_record(GROUP_HEADER).map_err(err)?;
    for g in groups {
        w.write_record([
            g.enter_time.to_string(),
            g.planned_depart.to_string(),
            g.leave_time.to_string(),
            g.target_train.clone(),
            g.route.0.to_string(),
            g.demand.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<groups>", e))
}

/// Parses a group file. Only the schema and time ordering are checked here.
pub fn read_groups<R: Read>(reader: R, label: &str) -> Result<Vec<GroupSpec>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let perr = |line: u64, message: String| Error::Parse {
        path: label.to_string(),
        line,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| perr(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != GROUP_HEADER {
        return Err(perr(1, format!("expected header {}", GROUP_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 6 {
            return Err(perr(line, format!("expected 6 columns, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(line, format!("bad {} {:?}", GROUP_HEADER[i], &rec[i])))
        };
        let spec = GroupSpec {
            enter_time: num(0)?,
            planned_depart: num(1)?,
            leave_time: num(2)?,
            target_train: rec[3].to_string(),
            route: RouteId(
                rec[4]
                    .parse()
                    .map_err(|_| perr(line, format!("bad route {:?}", &rec[4])))?,
            ),
            demand: rec[5]
                .parse()
                .map_err(|_| perr(line, format!("bad demand {:?}", &rec[5])))?,
        };
        spec.check_times().map_err(|m| perr(line, m))?;
        out.push(spec);
    }
    Ok(out)
}
