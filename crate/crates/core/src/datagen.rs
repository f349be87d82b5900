//! Synthetic passenger groups: sigmoid arrival curves ending at each train's
//! departure, log-normal waiting tolerances and four arrival/leaving
//! archetypes. Also ingests group files against a timetable.

use std::collections::BTreeMap;
use std::io::Read;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{read_groups, GroupSpec};
use crate::network::{Network, TrainEntry};
use crate::time::Minutes;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    FastSlow,
    Bell,
    SlowFast,
    Simultaneous,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::FastSlow,
        Archetype::Bell,
        Archetype::SlowFast,
        Archetype::Simultaneous,
    ];

    /// (midpoint position as a fraction of the window before departure,
    /// steepness in 1/min, tolerance log-spread).
    pub fn preset(self) -> (f64, f64, f64) {
        match self {
            Archetype::FastSlow => (0.75, 0.06, 0.6),
            Archetype::Bell => (0.5, 0.04, 0.4),
            Archetype::SlowFast => (0.25, 0.04, 0.2),
            Archetype::Simultaneous => (0.35, 0.15, 0.3),
        }
    }
}

/// Logistic accumulation curve truncated to `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArrivalCurve {
    pub start: Minutes,
    pub end: Minutes,
    pub midpoint: Minutes,
    pub steepness: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ArrivalCurve {
    fn raw(&self, t: Minutes) -> f64 {
        logistic(self.steepness * (t - self.midpoint))
    }

    /// Fraction of the train's passengers present by `t`.
    pub fn cdf(&self, t: Minutes) -> f64 {
        if t <= self.start {
            return 0.0;
        }
        if t >= self.end {
            return 1.0;
        }
        let (a, b) = (self.raw(self.start), self.raw(self.end));
        (self.raw(t) - a) / (b - a)
    }

    /// Inverse-CDF draw for `u` in [0, 1].
    pub fn sample(&self, u: f64) -> Minutes {
        if self.end <= self.start {
            return self.end;
        }
        let (a, b) = (self.raw(self.start), self.raw(self.end));
        let p = a + u * (b - a);
        let t = self.midpoint + (p / (1.0 - p)).ln() / self.steepness;
        t.clamp(self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    /// Total disrupted demand over the day.
    pub total: u32,
    /// Log-normal spread of the per-train shares.
    pub share_sigma: f64,
    /// Fixed per-train demand, excluded from the share draw.
    pub train_demand: BTreeMap<String, u32>,
    pub archetypes: BTreeMap<String, Archetype>,
    pub cohort_min: u32,
    pub cohort_max: u32,
    /// Length of the accumulation window before departure.
    pub arrival_window: Minutes,
    pub tolerance_shift: Minutes,
    pub tolerance_mean: Minutes,
    /// Passengers per route-0 train.
    pub background_demand: u32,
    pub background_window: Minutes,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            total: 1767,
            share_sigma: 0.6,
            train_demand: BTreeMap::new(),
            archetypes: BTreeMap::new(),
            cohort_min: 5,
            cohort_max: 40,
            arrival_window: 240.0,
            tolerance_shift: 30.0,
            tolerance_mean: 150.0,
            background_demand: 60,
            background_window: 60.0,
        }
    }
}

impl DemandConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.cohort_min == 0 || self.cohort_min > self.cohort_max {
            return bad("cohort bounds must satisfy 0 < cohort_min <= cohort_max");
        }
        if !(self.arrival_window > 0.0) || !(self.background_window >= 0.0) {
            return bad("arrival windows must be positive");
        }
        if !(self.tolerance_shift >= 0.0) || !(self.tolerance_mean > self.tolerance_shift) {
            return bad("tolerance_mean must exceed tolerance_shift >= 0");
        }
        if !(self.share_sigma >= 0.0) {
            return bad("share_sigma must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainShare {
    pub code: String,
    pub route: u32,
    pub demand: u32,
    pub archetype: Option<Archetype>,
    pub groups: usize,
}

/// Everything needed to reproduce a generated group file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub seed: u64,
    pub disrupted_total: u32,
    pub background_total: u32,
    pub groups: usize,
    pub trains: Vec<TrainShare>,
}

/// Splits `total` over weights, each share at least `floor`, by largest
/// remainder. Ties go to the earlier index.
pub fn apportion(total: u32, weights: &[f64], floor: u32) -> Result<Vec<u32>> {
    let n = weights.len() as u32;
    if n == 0 {
        return if total == 0 {
            Ok(vec![])
        } else {
            Err(Error::Config(format!("no trains to carry demand {total}")))
        };
    }
    if total < n * floor {
        return Err(Error::Config(format!(
            "demand {total} cannot give {n} trains at least {floor} passengers each"
        )));
    }
    let spare = (total - n * floor) as f64;
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| spare * w / sum).collect();
    let mut out: Vec<u32> = exact.iter().map(|e| floor + e.floor() as u32).collect();
    let mut left = total - out.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    Ok(out)
}

/// Partitions `demand` into cohorts with sizes in `[lo, hi]`.
pub fn cohorts<R: Rng + ?Sized>(demand: u32, lo: u32, hi: u32, rng: &mut R) -> Result<Vec<u32>> {
    if demand == 0 {
        return Ok(vec![]);
    }
    let k_min = demand.div_ceil(hi);
    let k_max = demand / lo;
    if k_min > k_max {
        return Err(Error::Config(format!(
            "demand {demand} cannot be split into cohorts of {lo}..={hi}"
        )));
    }
    let k = rng.random_range(k_min..=k_max) as usize;
    let mut sizes = vec![lo; k];
    let mut extra = demand - lo * k as u32;
    while extra > 0 {
        let i = rng.random_range(0..k);
        if sizes[i] < hi {
            sizes[i] += 1;
            extra -= 1;
        }
    }
    Ok(sizes)
}

fn tolerance_dist(cfg: &DemandConfig, spread: f64) -> Result<LogNormal<f64>> {
    let mean = cfg.tolerance_mean - cfg.tolerance_shift;
    LogNormal::new(mean.ln() - spread * spread / 2.0, spread)
        .map_err(|e| Error::Config(format!("tolerance distribution: {e}")))
}

pub fn arrival_curve(train: &TrainEntry, archetype: Archetype, window: Minutes, horizon_start: Minutes) -> ArrivalCurve {
    let (mid, steep, _) = archetype.preset();
    let end = train.depart_time;
    ArrivalCurve {
        start: (end - window).max(horizon_start).min(end),
        end,
        midpoint: end - window * mid,
        steepness: steep,
    }
}

/// Draws groups for every train of `network`. Disrupted totals match
/// `cfg.total` exactly; route-0 trains get `cfg.background_demand` each and
/// leave when their train does.
pub fn generate(
    network: &Network,
    cfg: &DemandConfig,
    horizon_start: Minutes,
    seed: u64,
) -> Result<(Vec<GroupSpec>, GenerationManifest)> {
    cfg.validate()?;
    for code in cfg.train_demand.keys().chain(cfg.archetypes.keys()) {
        if network.train(code).is_none() {
            return Err(Error::UnknownTrain(code.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let disrupted: Vec<&TrainEntry> = network.timetable.iter().filter(|t| t.disrupted).collect();

    let fixed: u32 = cfg.train_demand.values().sum();
    let free: Vec<&TrainEntry> = disrupted
        .iter()
        .copied()
        .filter(|t| !cfg.train_demand.contains_key(&t.code))
        .collect();
    let share_dist = LogNormal::new(0.0, cfg.share_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let weights: Vec<f64> = free.iter().map(|_| share_dist.sample(&mut rng)).collect();
    let remaining = cfg.total.checked_sub(fixed).ok_or_else(|| {
        Error::Config(format!("fixed train demand {fixed} exceeds total {}", cfg.total))
    })?;
    let shares = apportion(remaining, &weights, cfg.cohort_min)?;
    let mut demand: BTreeMap<&str, u32> = free.iter().map(|t| t.code.as_str()).zip(shares).collect();
    for (code, &d) in &cfg.train_demand {
        demand.insert(code.as_str(), d);
    }

    let mut groups = Vec::new();
    let mut manifest = GenerationManifest {
        seed,
        disrupted_total: 0,
        background_total: 0,
        groups: 0,
        trains: Vec::new(),
    };
    for train in &network.timetable {
        if train.disrupted {
            let archetype = match cfg.archetypes.get(&train.code) {
                Some(&a) => a,
                None => *Archetype::ALL.choose(&mut rng).unwrap(),
            };
            let d = demand[train.code.as_str()];
            let sizes = cohorts(d, cfg.cohort_min, cfg.cohort_max, &mut rng)?;
            let curve = arrival_curve(train, archetype, cfg.arrival_window, horizon_start);
            let tol = tolerance_dist(cfg, archetype.preset().2)?;
            for &size in &sizes {
                let enter = curve.sample(rng.random());
                let leave = train.depart_time + cfg.tolerance_shift + tol.sample(&mut rng);
                groups.push(GroupSpec {
                    enter_time: enter,
                    planned_depart: train.depart_time,
                    leave_time: leave,
                    target_train: train.code.clone(),
                    route: train.route,
                    demand: size,
                });
            }
            manifest.disrupted_total += d;
            manifest.trains.push(TrainShare {
                code: train.code.clone(),
                route: train.route.0,
                demand: d,
                archetype: Some(archetype),
                groups: sizes.len(),
            });
        } else {
            let d = cfg.background_demand;
            let sizes = cohorts(d, cfg.cohort_min, cfg.cohort_max, &mut rng)?;
            let start = (train.depart_time - cfg.background_window).max(horizon_start).min(train.depart_time);
            for &size in &sizes {
                let enter = start + rng.random::<f64>() * (train.depart_time - start);
                groups.push(GroupSpec {
                    enter_time: enter,
                    planned_depart: train.depart_time,
                    leave_time: train.depart_time,
                    target_train: train.code.clone(),
                    route: train.route,
                    demand: size,
                });
            }
            manifest.background_total += d;
            manifest.trains.push(TrainShare {
                code: train.code.clone(),
                route: train.route.0,
                demand: d,
                archetype: None,
                groups: sizes.len(),
            });
        }
    }
    groups.sort_by(|a, b| a.enter_time.total_cmp(&b.enter_time));
    manifest.groups = groups.len();
    Ok((groups, manifest))
}

/// Parses a group file and checks every row against the timetable.
pub fn ingest<R: Read>(reader: R, label: &str, network: &Network) -> Result<Vec<GroupSpec>> {
    let groups = read_groups(reader, label)?;
    for (i, g) in groups.iter().enumerate() {
        // One header line; rows have no embedded newlines.
        let line = i as u64 + 2;
        let perr = |message: String| Error::Parse {
            path: label.to_string(),
            line,
            message,
        };
        let train = network
            .train(&g.target_train)
            .ok_or_else(|| perr(format!("unknown train code {:?}", g.target_train)))?;
        if train.route != g.route {
            return Err(perr(format!(
                "route {} does not match train {} on route {}",
                g.route, train.code, train.route
            )));
        }
        if !g.route.is_disrupted() && g.leave_time != g.planned_depart {
            return Err(perr("background groups must leave at their planned departure".into()));
        }
    }
    Ok(groups)
}

pub fn ingest_path(path: &std::path::Path, network: &Network) -> Result<Vec<GroupSpec>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest(std::io::BufReader::new(f), &path.display().to_string(), network)
}
