//! Static railway instance: stations, routes, the disrupted timetable and the
//! stop-schedule options derived from it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{format_hms, parse_hms, Minutes};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

/// Route number. Route 0 is reserved for non-disrupted traffic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RouteId(pub u32);

impl RouteId {
    pub const UNDISRUPTED: RouteId = RouteId(0);

    pub fn is_disrupted(self) -> bool {
        self.0 != 0
    }
}

impl fmt::Display for RouteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: StationId,
    pub name: String,
    /// Gravity weight used when splitting demand over downstream stops.
    pub attractiveness: f64,
    pub in_disrupted_area: bool,
}

/// Inclusive index range into [`Route::stations`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: RouteId,
    /// Stations served before the target station; only used to discount the
    /// capacity of through trains.
    pub upstream: Vec<StationId>,
    /// Downstream stations in travel order, target station excluded.
    pub stations: Vec<StationId>,
    pub disrupted_segment: Option<Segment>,
    /// Travel-time multiplier applied inside the disrupted segment.
    pub detour_factor: f64,
}

impl Route {
    pub fn position(&self, station: StationId) -> Option<usize> {
        self.stations.iter().position(|&s| s == station)
    }

    fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Route {
            route: self.id,
            message,
        };
        if !self.id.is_disrupted() {
            return Err(fail("route 0 is reserved for undisrupted traffic".into()));
        }
        if !(self.detour_factor >= 1.0) {
            return Err(fail(format!("detour factor {} < 1", self.detour_factor)));
        }
        if let Some(seg) = self.disrupted_segment {
            if seg.start > seg.end || seg.end >= self.stations.len() {
                return Err(fail(format!(
                    "disrupted segment {}..={} outside {} stations",
                    seg.start,
                    seg.end,
                    self.stations.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEntry {
    pub code: String,
    /// `None` when the train originates at the target station.
    pub arrive_time: Option<Minutes>,
    pub depart_time: Minutes,
    pub route: RouteId,
    pub disrupted: bool,
}

impl TrainEntry {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Train {
            code: self.code.clone(),
            message,
        };
        if let Some(arr) = self.arrive_time {
            if arr >= self.depart_time {
                return Err(fail(format!(
                    "arrives {} not before departure {}",
                    format_hms(arr),
                    format_hms(self.depart_time)
                )));
            }
        }
        if self.disrupted && !self.route.is_disrupted() {
            return Err(fail("disrupted train on route 0".into()));
        }
        Ok(())
    }
}

/// Orders a timetable by departure, then route, then code.
pub fn sort_timetable(timetable: &mut [TrainEntry]) {
    timetable.sort_by(|a, b| {
        a.depart_time
            .total_cmp(&b.depart_time)
            .then(a.route.cmp(&b.route))
            .then_with(|| a.code.cmp(&b.code))
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    S1,
    S2,
    S3,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::S1 => "S1",
            Tier::S2 => "S2",
            Tier::S3 => "S3",
        }
    }

    pub fn parse(text: &str) -> Option<Tier> {
        match text.trim() {
            "S1" | "s1" | "1" => Some(Tier::S1),
            "S2" | "s2" | "2" => Some(Tier::S2),
            "S3" | "s3" | "3" => Some(Tier::S3),
            _ => None,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopSchedule {
    pub route: RouteId,
    pub tier: Tier,
    pub stops: Vec<StationId>,
    /// Cumulative minutes from departure at the target station, detour included.
    pub offsets: Vec<Minutes>,
}

impl StopSchedule {
    pub fn offset_of(&self, station: StationId) -> Option<Minutes> {
        self.stops
            .iter()
            .position(|&s| s == station)
            .map(|i| self.offsets[i])
    }

    pub fn contains(&self, station: StationId) -> bool {
        self.stops.contains(&station)
    }
}

/// Arrival time at every stop for a train dispatched at `dispatch_time`.
/// The target station maps to the dispatch time itself.
pub fn arrival_time(
    schedule: &StopSchedule,
    origin: StationId,
    dispatch_time: Minutes,
) -> BTreeMap<StationId, Minutes> {
    let mut out: BTreeMap<_, _> = schedule
        .stops
        .iter()
        .zip(&schedule.offsets)
        .map(|(&s, &o)| (s, dispatch_time + o))
        .collect();
    out.insert(origin, dispatch_time);
    out
}

/// Appearance-count thresholds separating the stop tiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Stations seen on more than this many trains form S1.
    pub significant: u32,
    /// Stations seen on more than this many trains form S2.
    pub intermediate: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            significant: 3,
            intermediate: 2,
        }
    }
}

/// Original per-train stop times: minutes after departure from the target.
pub type OriginalStops = HashMap<String, Vec<(StationId, Minutes)>>;

#[derive(Clone, Debug, Default)]
pub struct DerivedSchedules {
    pub schedules: BTreeMap<RouteId, Vec<StopSchedule>>,
    pub warnings: Vec<String>,
}

impl DerivedSchedules {
    pub fn option_count(&self) -> usize {
        self.schedules.values().map(Vec::len).sum()
    }
}

pub fn derive_stop_schedules(
    timetable: &[TrainEntry],
    routes: &[Route],
    original_stops: &OriginalStops,
    thresholds: Thresholds,
) -> Result<DerivedSchedules> {
    if thresholds.significant <= thresholds.intermediate {
        return Err(Error::Config(format!(
            "significance threshold {} must exceed intermediate threshold {}",
            thresholds.significant, thresholds.intermediate
        )));
    }
    let mut out = DerivedSchedules::default();
    for route in routes {
        route.validate()?;
        let trains: Vec<&TrainEntry> = timetable
            .iter()
            .filter(|t| t.route == route.id && t.disrupted)
            .collect();
        if trains.is_empty() {
            let msg = format!("route {} has no trains; omitted", route.id);
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        let mut profiles = Vec::with_capacity(trains.len());
        for train in &trains {
            profiles.push(train_profile(route, train, original_stops)?);
        }
        out.schedules
            .insert(route.id, route_schedules(route, &profiles, thresholds)?);
    }
    Ok(out)
}

/// A train's stops keyed by position along the route.
struct Profile {
    times: BTreeMap<usize, Minutes>,
}

fn train_profile(route: &Route, train: &TrainEntry, stops: &OriginalStops) -> Result<Profile> {
    let fail = |message: String| Error::Train {
        code: train.code.clone(),
        message,
    };
    let list = stops
        .get(&train.code)
        .filter(|l| !l.is_empty())
        .ok_or_else(|| fail("no original stops".into()))?;
    let mut times = BTreeMap::new();
    let (mut last_pos, mut last_time) = (None::<usize>, 0.0);
    for &(station, t) in list {
        let pos = route.position(station).ok_or_else(|| {
            fail(format!("stop {} is not on route {}", station.0, route.id))
        })?;
        if last_pos.is_some_and(|p| pos <= p) {
            return Err(fail("stops out of route order".into()));
        }
        if !(t > last_time) {
            return Err(fail(format!("non-monotone travel time at station {}", station.0)));
        }
        times.insert(pos, t);
        last_pos = Some(pos);
        last_time = t;
    }
    Ok(Profile { times })
}

fn route_schedules(
    route: &Route,
    profiles: &[Profile],
    thresholds: Thresholds,
) -> Result<Vec<StopSchedule>> {
    let n = profiles.len() as u32;
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for p in profiles {
        for &pos in p.times.keys() {
            *counts.entry(pos).or_default() += 1;
        }
    }
    // With fewer trains than the significance threshold, both thresholds slide
    // down so that S1 still means "present on every train".
    let shift = thresholds.significant.saturating_sub(n.saturating_sub(1));
    let c1 = thresholds.significant - shift;
    let c2 = thresholds.intermediate.saturating_sub(shift);
    let all: Vec<usize> = counts.keys().copied().collect();
    let pick = |c: u32| -> Vec<usize> {
        counts
            .iter()
            .filter(|&(_, &k)| k > c)
            .map(|(&p, _)| p)
            .collect()
    };
    let mut s2 = pick(c2);
    if s2.is_empty() {
        s2 = all.clone();
    }
    let mut s1 = pick(c1);
    if s1.is_empty() {
        s1 = s2.clone();
    }

    let legs = base_legs(route, profiles, &all)?;
    let tiers: Vec<(Tier, &Vec<usize>)> = match profiles.len() {
        1 => vec![(Tier::S3, &all)],
        2 => vec![(Tier::S1, &s1), (Tier::S3, &all)],
        _ => vec![(Tier::S1, &s1), (Tier::S2, &s2), (Tier::S3, &all)],
    };
    tiers
        .into_iter()
        .map(|(tier, positions)| {
            let offsets = tier_offsets(route, profiles, &all, &legs, positions);
            if offsets.windows(2).any(|w| !(w[1] > w[0])) || offsets.first().is_some_and(|&o| o <= 0.0) {
                return Err(Error::Route {
                    route: route.id,
                    message: format!("derived {tier} offsets are not strictly increasing"),
                });
            }
            Ok(StopSchedule {
                route: route.id,
                tier,
                stops: positions.iter().map(|&p| route.stations[p]).collect(),
                offsets,
            })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Time at a position for one profile; position `None` is the origin.
fn time_at(p: &Profile, pos: Option<usize>) -> Option<Minutes> {
    match pos {
        None => Some(0.0),
        Some(pos) => p.times.get(&pos).copied(),
    }
}

fn raw_leg(profiles: &[Profile], from: Option<usize>, to: usize) -> Option<Minutes> {
    mean(profiles.iter().filter_map(|p| {
        let a = time_at(p, from)?;
        let b = time_at(p, Some(to))?;
        Some(b - a)
    }))
}

/// Undetoured running time between consecutive stations of the full stop set.
fn base_legs(route: &Route, profiles: &[Profile], all: &[usize]) -> Result<Vec<Minutes>> {
    let mut legs = Vec::with_capacity(all.len());
    let mut prev: Option<usize> = None;
    for &pos in all {
        let leg = raw_leg(profiles, prev, pos).or_else(|| {
            let at = |q: Option<usize>| mean(profiles.iter().filter_map(|p| time_at(p, q)));
            Some(at(Some(pos))? - at(prev)?)
        });
        match leg {
            Some(l) if l > 0.0 => legs.push(l),
            _ => {
                return Err(Error::Route {
                    route: route.id,
                    message: format!("non-monotone travel time into station index {pos}"),
                })
            }
        }
        prev = Some(pos);
    }
    Ok(legs)
}

fn tier_offsets(
    route: &Route,
    profiles: &[Profile],
    all: &[usize],
    legs: &[Minutes],
    positions: &[usize],
) -> Vec<Minutes> {
    let extra = route.detour_factor - 1.0;
    let index_in_all = |pos: usize| all.binary_search(&pos).expect("tier stop in full set");
    let mut offsets = Vec::with_capacity(positions.len());
    let mut acc = 0.0;
    let mut prev: Option<usize> = None;
    for &pos in positions {
        let lo = prev.map_or(0, |p| index_in_all(p) + 1);
        let hi = index_in_all(pos);
        let between = &legs[lo..=hi];
        let raw = raw_leg(profiles, prev, pos).unwrap_or_else(|| between.iter().sum());
        let detour: f64 = match route.disrupted_segment {
            Some(seg) => (lo..=hi)
                .filter(|&k| seg.contains(all[k]))
                .map(|k| legs[k])
                .sum(),
            None => 0.0,
        };
        acc += raw + extra * detour;
        offsets.push(acc);
        prev = Some(pos);
    }
    offsets
}

/// Static instance shared read-only by every episode.
#[derive(Clone, Debug)]
pub struct Network {
    pub stations: Vec<Station>,
    pub target: StationId,
    pub routes: Vec<Route>,
    pub timetable: Vec<TrainEntry>,
    pub original_stops: OriginalStops,
    pub thresholds: Thresholds,
    schedules: BTreeMap<RouteId, Vec<StopSchedule>>,
    plan_options: Vec<(RouteId, Tier)>,
    od_slots: Vec<(RouteId, StationId)>,
    od_index: HashMap<(RouteId, StationId), usize>,
    by_name: HashMap<String, StationId>,
}

impl Network {
    pub fn new(
        stations: Vec<Station>,
        target: StationId,
        routes: Vec<Route>,
        mut timetable: Vec<TrainEntry>,
        original_stops: OriginalStops,
        thresholds: Thresholds,
    ) -> Result<Network> {
        for (i, s) in stations.iter().enumerate() {
            if s.id.0 as usize != i {
                return Err(Error::Config(format!(
                    "station ids must be dense and ordered; {} at index {i}",
                    s.id.0
                )));
            }
            if !(s.attractiveness > 0.0) {
                return Err(Error::Config(format!(
                    "station {} has non-positive attractiveness",
                    s.name
                )));
            }
        }
        let mut by_name = HashMap::new();
        for s in &stations {
            if by_name.insert(s.name.clone(), s.id).is_some() {
                return Err(Error::Config(format!("duplicate station name {}", s.name)));
            }
        }
        if target.0 as usize >= stations.len() {
            return Err(Error::Config("target station id out of range".into()));
        }
        for r in &routes {
            for s in r.upstream.iter().chain(&r.stations) {
                if s.0 as usize >= stations.len() {
                    return Err(Error::Route {
                        route: r.id,
                        message: format!("unknown station id {}", s.0),
                    });
                }
            }
        }
        for t in &timetable {
            t.validate()?;
            if t.disrupted && !routes.iter().any(|r| r.id == t.route) {
                return Err(Error::Train {
                    code: t.code.clone(),
                    message: format!("route {} is not defined", t.route),
                });
            }
        }
        sort_timetable(&mut timetable);
        let derived = derive_stop_schedules(&timetable, &routes, &original_stops, thresholds)?;
        let schedules = derived.schedules;
        let plan_options = schedules
            .iter()
            .flat_map(|(&r, list)| list.iter().map(move |s| (r, s.tier)))
            .collect();
        let mut od_slots = Vec::new();
        for (&r, list) in &schedules {
            let full = list.last().expect("at least one tier per route");
            od_slots.extend(full.stops.iter().map(|&s| (r, s)));
        }
        let od_index = od_slots.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        Ok(Network {
            stations,
            target,
            routes,
            timetable,
            original_stops,
            thresholds,
            schedules,
            plan_options,
            od_slots,
            od_index,
            by_name,
        })
    }

    pub fn station(&self, id: StationId) -> &Station {
        &self.stations[id.0 as usize]
    }

    pub fn station_by_name(&self, name: &str) -> Option<StationId> {
        self.by_name.get(name).copied()
    }

    pub fn route(&self, id: RouteId) -> Option<&Route> {
        self.routes.iter().find(|r| r.id == id)
    }

    pub fn train(&self, code: &str) -> Option<&TrainEntry> {
        self.timetable.iter().find(|t| t.code == code)
    }

    pub fn schedules(&self) -> &BTreeMap<RouteId, Vec<StopSchedule>> {
        &self.schedules
    }

    pub fn schedule(&self, route: RouteId, tier: Tier) -> Option<&StopSchedule> {
        self.schedules.get(&route)?.iter().find(|s| s.tier == tier)
    }

    /// The all-stops schedule of a route.
    pub fn full_schedule(&self, route: RouteId) -> Option<&StopSchedule> {
        self.schedules.get(&route)?.last()
    }

    /// Plan actions in order: route ascending, then tier.
    pub fn plan_options(&self) -> &[(RouteId, Tier)] {
        &self.plan_options
    }

    pub fn plan_schedule(&self, action: usize) -> Option<&StopSchedule> {
        let &(r, tier) = self.plan_options.get(action)?;
        self.schedule(r, tier)
    }

    pub fn disrupted_routes(&self) -> impl Iterator<Item = RouteId> + '_ {
        self.schedules.keys().copied()
    }

    pub fn route_count(&self) -> usize {
        self.schedules.len()
    }

    /// Flattened (route, downstream station) slots of the OD-demand vector.
    pub fn od_slots(&self) -> &[(RouteId, StationId)] {
        &self.od_slots
    }

    pub fn od_slot(&self, route: RouteId, station: StationId) -> Option<usize> {
        self.od_index.get(&(route, station)).copied()
    }

    pub fn state2_dim(&self) -> usize {
        self.od_slots.len() + self.route_count()
    }
}

fn parse_error(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn csv_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Reads a timetable: `code,arrive_time,depart_time,route,disrupted`.
pub fn read_timetable<R: Read>(reader: R, label: &str) -> Result<Vec<TrainEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(label, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = csv_line(&rec);
        if rec.len() != 5 {
            return Err(parse_error(label, line, format!("expected 5 columns, got {}", rec.len())));
        }
        let time = |s: &str| parse_hms(s).map_err(|e| parse_error(label, line, e.to_string()));
        let arrive_time = match &rec[1] {
            "" => None,
            s => Some(time(s)?),
        };
        let route = rec[3]
            .parse::<u32>()
            .map_err(|_| parse_error(label, line, format!("bad route {:?}", &rec[3])))?;
        let disrupted = match &rec[4] {
            "1" => true,
            "0" => false,
            other => return Err(parse_error(label, line, format!("disrupted must be 0 or 1, got {other:?}"))),
        };
        let entry = TrainEntry {
            code: rec[0].to_string(),
            arrive_time,
            depart_time: time(&rec[2])?,
            route: RouteId(route),
            disrupted,
        };
        entry
            .validate()
            .map_err(|e| parse_error(label, line, e.to_string()))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_timetable<W: Write>(writer: W, timetable: &[TrainEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Config(format!("writing timetable: {e}"));
    w.write_record(["code", "arrive_time", "depart_time", "route", "disrupted"])
        .map_err(io)?;
    for t in timetable {
        w.write_record([
            t.code.clone(),
            t.arrive_time.map(format_hms).unwrap_or_default(),
            format_hms(t.depart_time),
            t.route.0.to_string(),
            if t.disrupted { "1" } else { "0" }.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<timetable>", e))
}

/// Writes `route,tier,station,offset_minutes` rows for every schedule.
pub fn write_stop_schedules<W: Write>(writer: W, network: &Network) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Config(format!("writing stop schedules: {e}"));
    w.write_record(["route", "tier", "station", "offset_minutes"])
        .map_err(io)?;
    for list in network.schedules().values() {
        for s in list {
            for (&st, &off) in s.stops.iter().zip(&s.offsets) {
                w.write_record([
                    s.route.0.to_string(),
                    s.tier.to_string(),
                    network.station(st).name.clone(),
                    format!("{off}"),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<stop schedules>", e))
}

/// Reads stop schedules, resolving station names through `lookup`.
pub fn read_stop_schedules<R: Read>(
    reader: R,
    label: &str,
    lookup: impl Fn(&str) -> Option<StationId>,
) -> Result<Vec<StopSchedule>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: Vec<StopSchedule> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(label, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = csv_line(&rec);
        if rec.len() != 4 {
            return Err(parse_error(label, line, format!("expected 4 columns, got {}", rec.len())));
        }
        let route = RouteId(
            rec[0]
                .parse()
                .map_err(|_| parse_error(label, line, format!("bad route {:?}", &rec[0])))?,
        );
        let tier = Tier::parse(&rec[1])
            .ok_or_else(|| parse_error(label, line, format!("bad tier {:?}", &rec[1])))?;
        let station = lookup(&rec[2])
            .ok_or_else(|| parse_error(label, line, format!("unknown station {:?}", &rec[2])))?;
        let offset: f64 = rec[3]
            .parse()
            .map_err(|_| parse_error(label, line, format!("bad offset {:?}", &rec[3])))?;
        match out.last_mut() {
            Some(s) if s.route == route && s.tier == tier => {
                if !(offset > *s.offsets.last().unwrap()) {
                    return Err(parse_error(label, line, "offsets must be strictly increasing"));
                }
                s.stops.push(station);
                s.offsets.push(offset);
            }
            _ => out.push(StopSchedule {
                route,
                tier,
                stops: vec![station],
                offsets: vec![offset],
            }),
        }
    }
    Ok(out)
}
