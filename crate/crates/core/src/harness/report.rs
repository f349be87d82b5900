//! Line-delimited run logs and the report tables derived from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::episode::{EpisodeLog, EpisodeSummary, StepRecord};
use crate::error::{Error, Result};
use crate::time::format_hms;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARIES: &str = "summaries.jsonl";
pub const EPISODES: &str = "episodes";
pub const MODEL: &str = "model.hdqn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum LogLine {
    Step(StepRecord),
    Summary(EpisodeSummary),
}

pub fn episode_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join(EPISODES).join(format!("episode-{episode:06}.jsonl"))
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| json_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

pub fn write_episode_log(path: &Path, log: &EpisodeLog) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    for line in log
        .steps
        .iter()
        .cloned()
        .map(LogLine::Step)
        .chain([LogLine::Summary(log.summary.clone())])
    {
        serde_json::to_writer(&mut w, &line).map_err(|e| json_err(path, e))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_lines(path: &Path) -> Result<Vec<LogLine>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

pub fn read_episode_log(path: &Path) -> Result<EpisodeLog> {
    let mut steps = Vec::new();
    let mut summary = None;
    for line in read_lines(path)? {
        match line {
            LogLine::Step(s) => steps.push(s),
            LogLine::Summary(s) => summary = Some(s),
        }
    }
    let summary = summary.ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: "no summary record".into(),
    })?;
    Ok(EpisodeLog { steps, summary })
}

/// Append-only per-run file of episode summaries.
pub struct SummaryWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl SummaryWriter {
    pub fn create(path: &Path) -> Result<SummaryWriter> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(SummaryWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn push(&mut self, s: &EpisodeSummary) -> Result<()> {
        let line = LogLine::Summary(s.clone());
        serde_json::to_writer(&mut self.out, &line).map_err(|e| json_err(&self.path, e))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_summaries(path: &Path) -> Result<Vec<EpisodeSummary>> {
    Ok(read_lines(path)?
        .into_iter()
        .filter_map(|l| match l {
            LogLine::Summary(s) => Some(s),
            LogLine::Step(_) => None,
        })
        .collect())
}

/// Trailing mean; the first `window - 1` entries average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn reward_curve_csv(summaries: &[EpisodeSummary], window: usize) -> String {
    let rewards: Vec<f64> = summaries.iter().map(|s| s.total_reward).collect();
    let ma = moving_average(&rewards, window);
    let mut out = String::from(
        "episode,epsilon,total_reward,reward_moving_average,satisfied_fraction,units_used,steps,max_crowd\n",
    );
    for (s, m) in summaries.iter().zip(ma) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.episode,
            s.epsilon.map_or(String::new(), |e| e.to_string()),
            s.total_reward,
            m,
            s.satisfied_fraction,
            s.units_used,
            s.steps,
            s.max_crowd
        );
    }
    out
}

pub fn rescheduled_timetable_csv(log: &EpisodeLog) -> String {
    let mut out = String::from("depart_time,route,tier,unit,capacity,served,delay,headway_violation\n");
    for r in log.steps.iter().filter(|r| r.route.is_some()) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3},{:.3},{}",
            format_hms(r.t),
            r.route.unwrap(),
            r.tier.map_or("", |t| t.as_str()),
            r.unit.as_deref().unwrap_or(""),
            r.capacity,
            r.served,
            r.delay,
            r.headway_violation as u8
        );
    }
    out
}

/// Served passengers per target train; fractions need the train demands.
pub fn satisfaction_by_train_csv(log: &EpisodeLog, demand: &BTreeMap<String, f64>) -> String {
    let mut served: BTreeMap<&str, f64> = demand.keys().map(|k| (k.as_str(), 0.0)).collect();
    for r in &log.steps {
        for (code, v) in &r.by_train {
            *served.entry(code.as_str()).or_default() += v;
        }
    }
    let mut out = String::from("train,demand,served,fraction\n");
    for (code, s) in served {
        let d = demand.get(code).copied();
        let frac = match d {
            Some(d) if d > 0.0 => format!("{:.4}", s / d),
            _ => String::new(),
        };
        let _ = writeln!(
            out,
            "{code},{},{:.3},{frac}",
            d.map_or(String::new(), |d| d.to_string()),
            s
        );
    }
    out
}

pub fn crowd_trace_csv(log: &EpisodeLog) -> String {
    let mut out = String::from("t,clock,crowd,disrupted_demand,flexible_stock,potential_stock,dispatch\n");
    for r in &log.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            format_hms(r.t),
            r.crowd,
            r.disrupted_demand,
            r.flexible_stock,
            r.potential_stock,
            r.a1
        );
    }
    out
}

/// Disrupted demand per train from a group list.
pub fn train_demand(groups: &[crate::mobility::GroupSpec]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for g in groups.iter().filter(|g| g.route.is_disrupted()) {
        *out.entry(g.target_train.clone()).or_default() += g.demand as f64;
    }
    out
}

/// Latest step-level episode file of a run directory.
pub fn latest_episode_log(dir: &Path) -> Result<Option<PathBuf>> {
    let dir = dir.join(EPISODES);
    if !dir.exists() {
        return Ok(None);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files.pop())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub written: Vec<PathBuf>,
}

/// Writes every report table for a run directory into `out`.
pub fn write_report(
    run_dir: &Path,
    out: &Path,
    demand: &BTreeMap<String, f64>,
    window: usize,
) -> Result<ReportFiles> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = ReportFiles::default();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        files.written.push(p);
        Ok(())
    };
    let summaries_path = run_dir.join(SUMMARIES);
    if summaries_path.exists() {
        put("reward_curve.csv", reward_curve_csv(&read_summaries(&summaries_path)?, window))?;
    }
    if let Some(path) = latest_episode_log(run_dir)? {
        let log = read_episode_log(&path)?;
        put("rescheduled_timetable.csv", rescheduled_timetable_csv(&log))?;
        put("satisfaction_by_train.csv", satisfaction_by_train_csv(&log, demand))?;
        put("crowd_trace.csv", crowd_trace_csv(&log))?;
    }
    Ok(files)
}
