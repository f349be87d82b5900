//! Built-in instances: the 33-train Xi'an disruption day and small synthetic
//! networks for exhaustive search.
//!
//! Only the timetable and route 4's stop pattern are published. Every other
//! route gets synthetic station names, running times and original stop
//! patterns chosen so that the stop-tier derivation yields the published
//! option counts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    read_timetable, sort_timetable, Network, OriginalStops, Route, RouteId, Segment, Station, StationId,
    Thresholds, Tier, TrainEntry,
};
use crate::time::Minutes;

const PAPER_TIMETABLE: &str = include_str!("../data/paper_timetable.csv");
const ROUTE4_SCHEDULES: &str = include_str!("../data/route4_stop_schedules.csv");

pub const TARGET_NAME: &str = "Xi'an";

/// Downstream station counts of routes 1..=9.
pub const PAPER_ROUTE_SIZES: [usize; 9] = [18, 14, 12, 26, 10, 15, 11, 8, 7];
const UPSTREAM_STOPS: usize = 3;

/// Route-0 trains added to the timetable so that background passengers have
/// something to board.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundTrains {
    pub first: Minutes,
    pub last: Minutes,
    pub interval: Minutes,
}

impl Default for BackgroundTrains {
    fn default() -> Self {
        BackgroundTrains {
            first: 300.0,
            last: 1410.0,
            interval: 20.0,
        }
    }
}

impl BackgroundTrains {
    pub fn entries(&self) -> Vec<TrainEntry> {
        let mut out = Vec::new();
        if self.interval <= 0.0 {
            return out;
        }
        let mut t = self.first;
        while t <= self.last {
            out.push(TrainEntry {
                code: format!("BG{:04}", out.len() + 1),
                arrive_time: None,
                depart_time: t,
                route: RouteId::UNDISRUPTED,
                disrupted: false,
            });
            t += self.interval;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaperInstance {
    /// Replaces the built-in 33-train timetable.
    pub timetable: Option<PathBuf>,
    pub detour_factor: f64,
    pub thresholds: Thresholds,
    /// Log-normal spread of the synthetic station weights.
    pub attractiveness_sigma: f64,
    /// Per-station weight overrides by name.
    pub attractiveness: BTreeMap<String, f64>,
    pub background: BackgroundTrains,
}

impl Default for PaperInstance {
    fn default() -> Self {
        PaperInstance {
            timetable: None,
            detour_factor: 1.5,
            thresholds: Thresholds::default(),
            attractiveness_sigma: 0.5,
            attractiveness: BTreeMap::new(),
            background: BackgroundTrains::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyTrain {
    pub code: String,
    pub depart_time: Minutes,
    /// Present for through trains, which become restricted units.
    #[serde(default)]
    pub arrive_time: Option<Minutes>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyRoute {
    pub stations: usize,
    pub trains: Vec<TinyTrain>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TinyInstance {
    pub routes: Vec<TinyRoute>,
    pub leg_minutes: Minutes,
    pub background: BackgroundTrains,
}

impl Default for TinyInstance {
    fn default() -> Self {
        TinyInstance {
            routes: vec![TinyRoute {
                stations: 3,
                trains: vec![TinyTrain {
                    code: "T1".into(),
                    depart_time: 630.0,
                    arrive_time: None,
                }],
            }],
            leg_minutes: 20.0,
            background: BackgroundTrains {
                interval: 0.0,
                ..BackgroundTrains::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InstanceConfig {
    Paper(PaperInstance),
    Tiny(TinyInstance),
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig::Paper(PaperInstance::default())
    }
}

impl InstanceConfig {
    pub fn build(&self, seed: u64) -> Result<Network> {
        match self {
            InstanceConfig::Paper(p) => paper_network(p, seed),
            InstanceConfig::Tiny(t) => tiny_network(t),
        }
    }
}

/// Accumulates stations with dense ids.
#[derive(Default)]
struct StationTable {
    stations: Vec<Station>,
}

impl StationTable {
    fn add(&mut self, name: String, attractiveness: f64, in_disrupted_area: bool) -> StationId {
        let id = StationId(self.stations.len() as u32);
        self.stations.push(Station {
            id,
            name,
            attractiveness,
            in_disrupted_area,
        });
        id
    }
}

/// Stop pattern of route position `i` (of `n`): 1 = significant, 2 =
/// intermediate, 3 = all-stops only.
fn synthetic_level(i: usize, n: usize) -> u8 {
    if i + 1 == n || i % 3 == 2 {
        1
    } else if i.is_multiple_of(3) {
        2
    } else {
        3
    }
}

/// Original stop lists for `trains` sharing one route: the first stops
/// everywhere, the next two skip all-stops-only stations (one of them when
/// only three trains exist), the rest call at significant stations only.
fn assign_stops(
    trains: &[&TrainEntry],
    stations: &[StationId],
    levels: &[u8],
    offsets: &[Minutes],
    out: &mut OriginalStops,
) {
    let n = trains.len();
    for (k, t) in trains.iter().enumerate() {
        let max_level = match (n, k) {
            (_, 0) => 3,
            (2, _) => 1,
            (3, 1) => 2,
            (3, _) => 1,
            (_, 1) | (_, 2) => 2,
            _ => 1,
        };
        let stops = stations
            .iter()
            .zip(levels)
            .zip(offsets)
            .filter(|((_, &lv), _)| lv <= max_level)
            .map(|((&s, _), &o)| (s, o))
            .collect();
        out.insert(t.code.clone(), stops);
    }
}

struct Route4Pattern {
    names: Vec<String>,
    levels: Vec<u8>,
    offsets: Vec<Minutes>,
}

fn route4_pattern() -> Result<Route4Pattern> {
    let bad = |m: String| Error::Config(format!("route 4 table: {m}"));
    let mut rows: Vec<(Tier, String, Minutes)> = Vec::new();
    let mut rdr = csv::Reader::from_reader(ROUTE4_SCHEDULES.as_bytes());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let tier = Tier::parse(&rec[1]).ok_or_else(|| bad(format!("tier {:?}", &rec[1])))?;
        let offset = rec[3].parse().map_err(|_| bad(format!("offset {:?}", &rec[3])))?;
        rows.push((tier, rec[2].to_string(), offset));
    }
    let in_tier = |tier: Tier, name: &str| rows.iter().any(|(t, n, _)| *t == tier && n == name);
    let all: Vec<&(Tier, String, Minutes)> = rows.iter().filter(|r| r.0 == Tier::S3).collect();
    Ok(Route4Pattern {
        names: all.iter().map(|r| r.1.clone()).collect(),
        levels: all
            .iter()
            .map(|r| {
                if in_tier(Tier::S1, &r.1) {
                    1
                } else if in_tier(Tier::S2, &r.1) {
                    2
                } else {
                    3
                }
            })
            .collect(),
        offsets: all.iter().map(|r| r.2).collect(),
    })
}

/// Index of the disrupted station on route 4 (Zhengzhou).
pub const ROUTE4_DETOUR_INDEX: usize = 7;

fn synthetic_legs(route: u32, n: usize) -> Vec<Minutes> {
    (0..n)
        .map(|i| 15.0 + ((route as usize * 7 + i * 11) % 30) as f64)
        .collect()
}

fn cumulative(legs: &[Minutes]) -> Vec<Minutes> {
    legs.iter()
        .scan(0.0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .collect()
}

pub fn paper_network(cfg: &PaperInstance, seed: u64) -> Result<Network> {
    if !(cfg.detour_factor >= 1.0) {
        return Err(Error::Config("detour_factor must be at least 1".into()));
    }
    if !(cfg.attractiveness_sigma >= 0.0) {
        return Err(Error::Config("attractiveness_sigma must be non-negative".into()));
    }
    let mut timetable = match &cfg.timetable {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            read_timetable(f, &path.display().to_string())?
        }
        None => read_timetable(PAPER_TIMETABLE.as_bytes(), "paper_timetable.csv")?,
    };
    timetable.retain(|t| t.disrupted);
    timetable.extend(cfg.background.entries());
    sort_timetable(&mut timetable);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA77E_C71E);
    let weight_dist = LogNormal::new(0.0, cfg.attractiveness_sigma)
        .map_err(|e| Error::Config(format!("attractiveness distribution: {e}")))?;
    let mut table = StationTable::default();
    let target = table.add(TARGET_NAME.into(), 1.0, false);
    let r4 = route4_pattern()?;

    let mut routes = Vec::new();
    let mut original_stops = OriginalStops::new();
    for (idx, &n) in PAPER_ROUTE_SIZES.iter().enumerate() {
        let rid = RouteId(idx as u32 + 1);
        let (names, levels, offsets, segment) = if rid.0 == 4 {
            let mut legs: Vec<Minutes> = r4
                .offsets
                .iter()
                .scan(0.0, |prev, &o| {
                    let leg = o - *prev;
                    *prev = o;
                    Some(leg)
                })
                .collect();
            // The published all-stops times already include the detour.
            legs[ROUTE4_DETOUR_INDEX] /= 1.5;
            let seg = Segment {
                start: ROUTE4_DETOUR_INDEX,
                end: ROUTE4_DETOUR_INDEX,
            };
            (r4.names.clone(), r4.levels.clone(), cumulative(&legs), seg)
        } else {
            let names = (1..=n).map(|i| format!("R{}-{:02}", rid.0, i)).collect();
            let levels = (0..n).map(|i| synthetic_level(i, n)).collect();
            let start = n / 3;
            let seg = Segment { start, end: start + 1 };
            (names, levels, cumulative(&synthetic_legs(rid.0, n)), seg)
        };
        let upstream = (1..=UPSTREAM_STOPS)
            .map(|i| table.add(format!("R{}-U{}", rid.0, i), weight_dist.sample(&mut rng), false))
            .collect();
        let stations: Vec<StationId> = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| table.add(name, weight_dist.sample(&mut rng), segment.contains(i)))
            .collect();
        let trains: Vec<&TrainEntry> = timetable.iter().filter(|t| t.route == rid).collect();
        assign_stops(&trains, &stations, &levels, &offsets, &mut original_stops);
        routes.push(Route {
            id: rid,
            upstream,
            stations,
            disrupted_segment: Some(segment),
            detour_factor: cfg.detour_factor,
        });
    }
    for (name, &w) in &cfg.attractiveness {
        let s = table
            .stations
            .iter_mut()
            .find(|s| &s.name == name)
            .ok_or_else(|| Error::UnknownStation(name.clone()))?;
        s.attractiveness = w;
    }
    Network::new(table.stations, target, routes, timetable, original_stops, cfg.thresholds)
}

/// A small line network; routes are numbered from 1 and every station has
/// unit weight.
pub fn tiny_network(cfg: &TinyInstance) -> Result<Network> {
    if cfg.routes.is_empty() {
        return Err(Error::Config("tiny instance needs at least one route".into()));
    }
    let mut table = StationTable::default();
    let target = table.add("Hub".into(), 1.0, false);
    let mut routes = Vec::new();
    let mut timetable = Vec::new();
    let mut original_stops = OriginalStops::new();
    for (idx, r) in cfg.routes.iter().enumerate() {
        let rid = RouteId(idx as u32 + 1);
        if r.stations == 0 {
            return Err(Error::Route {
                route: rid,
                message: "needs at least one station".into(),
            });
        }
        let upstream = vec![table.add(format!("T{}-U", rid.0), 1.0, false)];
        let stations: Vec<StationId> = (1..=r.stations)
            .map(|i| table.add(format!("T{}-{}", rid.0, i), 1.0, false))
            .collect();
        let levels: Vec<u8> = (0..r.stations).map(|i| synthetic_level(i, r.stations)).collect();
        let offsets: Vec<Minutes> = (1..=r.stations).map(|i| i as f64 * cfg.leg_minutes).collect();
        let first = timetable.len();
        for t in &r.trains {
            timetable.push(TrainEntry {
                code: t.code.clone(),
                arrive_time: t.arrive_time,
                depart_time: t.depart_time,
                route: rid,
                disrupted: true,
            });
        }
        let trains: Vec<&TrainEntry> = timetable[first..].iter().collect();
        assign_stops(&trains, &stations, &levels, &offsets, &mut original_stops);
        routes.push(Route {
            id: rid,
            upstream,
            stations,
            disrupted_segment: None,
            detour_factor: 1.0,
        });
    }
    timetable.extend(cfg.background.entries());
    Network::new(table.stations, target, routes, timetable, original_stops, Thresholds::default())
}
