use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hubsim::agent::model::{load_model, save_model, ExpectedShape};
use hubsim::agent::TwoStepAgent;
use hubsim::config::Config;
use hubsim::env::{Action, Scenario};
use hubsim::harness::report::{self, SummaryWriter};
use hubsim::harness::{self, EpisodeLog, EpisodeSummary, EvalStats};
use hubsim::mobility::write_groups;
use hubsim::network::{write_stop_schedules, write_timetable};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "hubsim", version, about = "Disrupted railway hub simulator and two-step DQN dispatcher")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario and agent configuration (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the instance and write its timetable, stop schedules and passenger groups.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the dispatcher and write the model and run logs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the agent seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Replace an existing run in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run a frozen model on the configured scenario.
    Evaluate(EvalArgs),
    /// Run a frozen model on a different scenario and check the transfer targets.
    Transfer {
        #[command(flatten)]
        eval: EvalArgs,
        /// Training run whose final window sets the satisfaction bar.
        #[arg(long)]
        training_run: Option<PathBuf>,
        /// Exit with a distinct code if a transfer target is missed.
        #[arg(long)]
        check: bool,
    },
    /// Exhaustive search over action sequences of a tiny scenario.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Evaluate this comma-separated action sequence instead (0 holds, k+1 dispatches plan k).
        #[arg(long, value_delimiter = ',')]
        sequence: Option<Vec<usize>>,
    },
    /// Derive report tables from a run directory.
    Report {
        /// Run directory written by train, evaluate or transfer.
        #[arg(long)]
        run: PathBuf,
        #[arg(short, long, default_value = "report")]
        out: PathBuf,
        /// Moving-average window of the reward curve.
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    model: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Overrides the action-selection seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

/// Failure of a user-requested check, reported with its own exit code.
#[derive(Debug)]
struct CheckFailed(Vec<String>);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "checks failed: {}", self.0.join("; "))
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return EXIT_CHECK;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hubsim::Error>() {
            use hubsim::Error::*;
            return match e {
                Config(_) | Parse { .. } | UnknownTrain(_) | UnknownStation(_) | Route { .. } | Train { .. } => {
                    EXIT_CONFIG
                }
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { common, seed } => generate(&common, seed),
        Command::Train {
            common,
            seed,
            episodes,
            force,
        } => train(&common, seed, episodes, force),
        Command::Evaluate(args) => {
            evaluate(&args, "evaluate")?;
            Ok(())
        }
        Command::Transfer {
            eval,
            training_run,
            check,
        } => transfer(&eval, training_run.as_deref(), check),
        Command::Oracle { common, sequence } => oracle(&common, sequence),
        Command::Report { run, out, window } => report_cmd(&run, &out, window),
    }
}

fn load_config(common: &Common) -> anyhow::Result<Config> {
    Ok(match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Clears previous run files, or refuses if `force` is not set.
fn prepare_run_dir(dir: &Path, force: bool) -> anyhow::Result<()> {
    create_dir(dir)?;
    let summaries = dir.join(report::SUMMARIES);
    if summaries.exists() {
        if !force {
            return Err(hubsim::Error::Config(format!(
                "{} already holds a run; pass --force to replace it",
                dir.display()
            ))
            .into());
        }
        fs::remove_file(&summaries)?;
        let episodes = dir.join(report::EPISODES);
        if episodes.exists() {
            fs::remove_dir_all(&episodes)?;
        }
    }
    Ok(())
}

fn scenario_info(s: &Scenario) -> serde_json::Value {
    json!({
        "routes": s.network.route_count(),
        "plan_actions": s.plan_actions(),
        "state2_dim": s.state2_dim(),
        "fleet_size": s.fleet_size(),
        "disrupted_demand": s.disrupted_total(),
        "groups": s.groups.len(),
        "steps": s.steps(),
    })
}

fn write_manifest(dir: &Path, command: &str, cfg: &Config, scenario: &Scenario, extra: serde_json::Value) -> anyhow::Result<()> {
    let manifest = json!({
        "tool": "hubsim",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
        "scenario": scenario_info(scenario),
        "generation": scenario.manifest,
        "train_demand": report::train_demand(&scenario.groups),
        "extra": extra,
    });
    report::write_json(&dir.join(report::MANIFEST), &manifest)?;
    Ok(())
}

fn generate(common: &Common, seed: Option<u64>) -> anyhow::Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    let scenario = Scenario::from_config(&cfg.scenario)?;
    create_dir(&common.out)?;
    let open = |name: &str| -> anyhow::Result<fs::File> {
        let p = common.out.join(name);
        fs::File::create(&p).with_context(|| format!("creating {}", p.display()))
    };
    write_groups(open("groups.csv")?, &scenario.groups)?;
    write_timetable(open("timetable.csv")?, &scenario.network.timetable)?;
    write_stop_schedules(open("stop_schedules.csv")?, &scenario.network)?;
    write_manifest(&common.out, "generate", &cfg, &scenario, json!({}))?;
    println!(
        "{} groups, disrupted demand {}, {} plan options, state sizes 5 and {}",
        scenario.groups.len(),
        scenario.disrupted_total(),
        scenario.plan_actions(),
        scenario.state2_dim()
    );
    Ok(())
}

fn window_stats(runs: &[EpisodeSummary], window: usize, threshold: f64) -> EvalStats {
    let tail = &runs[runs.len().saturating_sub(window)..];
    EvalStats::from_summaries(tail, threshold)
}

fn train(common: &Common, seed: Option<u64>, episodes: Option<usize>, force: bool) -> anyhow::Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = seed {
        cfg.agent.seed = s;
    }
    if let Some(n) = episodes {
        cfg.run.episodes = n;
    }
    let scenario = Scenario::from_config(&cfg.scenario)?;
    let dir = &common.out;
    prepare_run_dir(dir, force)?;
    write_manifest(dir, "train", &cfg, &scenario, json!({}))?;
    let mut agent = TwoStepAgent::new(
        cfg.agent.clone(),
        scenario.normalization(),
        scenario.state2_dim(),
        scenario.plan_actions(),
    );
    let total = cfg.run.episodes;
    let every = cfg.run.log_every;
    let mut writer = SummaryWriter::create(&dir.join(report::SUMMARIES))?;
    let runs = harness::train(&scenario, &mut agent, total, |log: &EpisodeLog| {
        writer.push(&log.summary)?;
        let e = log.summary.episode;
        if every > 0 && (e.is_multiple_of(every) || e + 1 == total) {
            report::write_episode_log(&report::episode_path(dir, e), log)?;
        }
        if (e + 1).is_multiple_of(100) {
            log::info!(
                "episode {}: reward {:.1}, satisfied {:.3}, units {}, epsilon {:.3}",
                e + 1,
                log.summary.total_reward,
                log.summary.satisfied_fraction,
                log.summary.units_used,
                log.summary.epsilon.unwrap_or(0.0)
            );
        }
        Ok(())
    })?;
    writer.finish()?;
    save_model(&dir.join(report::MODEL), &agent)?;
    let stats = window_stats(&runs, 100, scenario.rewards.crowd_threshold);
    report::write_json(&dir.join("final_window.json"), &stats)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn evaluate(args: &EvalArgs, command: &str) -> anyhow::Result<(Config, Vec<EpisodeSummary>)> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.episodes {
        cfg.run.eval_episodes = n;
    }
    if let Some(e) = args.epsilon {
        cfg.run.eval_epsilon = e;
    }
    if let Some(s) = args.seed {
        cfg.run.eval_seed = s;
    }
    cfg.validate()?;
    let scenario = Scenario::from_config(&cfg.scenario)?;
    let mut agent = load_model(
        &args.model,
        Some(ExpectedShape {
            plan_inputs: scenario.state2_dim(),
            plan_actions: scenario.plan_actions(),
        }),
    )?;
    let dir = &args.common.out;
    prepare_run_dir(dir, args.force)?;
    write_manifest(dir, command, &cfg, &scenario, json!({ "model": args.model }))?;
    let every = cfg.run.log_every;
    let total = cfg.run.eval_episodes;
    let mut writer = SummaryWriter::create(&dir.join(report::SUMMARIES))?;
    let runs = harness::evaluate(
        &scenario,
        &mut agent,
        total,
        cfg.run.eval_epsilon,
        cfg.run.eval_seed,
        |log: &EpisodeLog| {
            writer.push(&log.summary)?;
            let e = log.summary.episode;
            if every > 0 && (e.is_multiple_of(every) || e + 1 == total) {
                report::write_episode_log(&report::episode_path(dir, e), log)?;
            }
            Ok(())
        },
    )?;
    writer.finish()?;
    let stats = EvalStats::from_summaries(&runs, scenario.rewards.crowd_threshold);
    report::write_json(&dir.join("stats.json"), &stats)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok((cfg, runs))
}

fn transfer(args: &EvalArgs, training_run: Option<&Path>, check: bool) -> anyhow::Result<()> {
    let (cfg, runs) = evaluate(args, "transfer")?;
    let threshold = cfg.scenario.rewards.crowd_threshold;
    let n = runs.len().max(1) as f64;
    let positive = runs.iter().filter(|r| r.total_reward > 0.0).count() as f64 / n;
    let calm = runs.iter().filter(|r| r.max_crowd < threshold).count() as f64 / n;
    let best = runs.iter().map(|r| r.satisfied_fraction).fold(0.0, f64::max);
    let mut failures = Vec::new();
    if positive < 0.95 {
        failures.push(format!("positive-reward share {positive:.3} < 0.95"));
    }
    if calm < 0.90 {
        failures.push(format!("below-threshold share {calm:.3} < 0.90"));
    }
    if let Some(dir) = training_run {
        let train = report::read_summaries(&dir.join(report::SUMMARIES))?;
        let tail = &train[train.len().saturating_sub(100)..];
        if tail.is_empty() {
            bail!("training run {} has no episodes", dir.display());
        }
        let bar = tail.iter().map(|r| r.satisfied_fraction).sum::<f64>() / tail.len() as f64;
        println!("best satisfied fraction {best:.4} vs training final-window mean {bar:.4}");
        if best < bar {
            failures.push(format!("best satisfied fraction {best:.4} < training mean {bar:.4}"));
        }
    }
    println!("positive reward share {positive:.4}, below-threshold share {calm:.4}");
    if check && !failures.is_empty() {
        return Err(CheckFailed(failures).into());
    }
    Ok(())
}

fn oracle(common: &Common, sequence: Option<Vec<usize>>) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let scenario = Scenario::from_config(&cfg.scenario)?;
    let describe = |actions: &[Action]| -> Vec<String> {
        actions
            .iter()
            .map(|a| match a {
                Action::Hold => "hold".to_string(),
                Action::Dispatch(k) => {
                    let (r, t) = scenario.network.plan_options()[*k];
                    format!("dispatch route {r} {t}")
                }
            })
            .collect()
    };
    let result = match sequence {
        Some(seq) => {
            let plans = scenario.plan_actions();
            if let Some(&bad) = seq.iter().find(|&&i| i > plans) {
                return Err(hubsim::Error::Config(format!("action {bad} exceeds {plans} plan options")).into());
            }
            let actions: Vec<Action> = seq.into_iter().map(Action::from_index).collect();
            let value = harness::evaluate_sequence(&scenario, &actions)?;
            json!({ "actions": describe(&actions), "value": value })
        }
        None => {
            let best = harness::oracle_search(&scenario)?;
            json!({
                "actions": describe(&best.actions),
                "indices": best.actions.iter().map(|a| a.index()).collect::<Vec<_>>(),
                "value": best.value,
                "sequences": best.sequences,
            })
        }
    };
    create_dir(&common.out)?;
    report::write_json(&common.out.join("oracle.json"), &result)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn report_cmd(run: &Path, out: &Path, window: usize) -> anyhow::Result<()> {
    let manifest: serde_json::Value = report::read_json(&run.join(report::MANIFEST))?;
    let demand: BTreeMap<String, f64> = manifest
        .get("train_demand")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .unwrap_or_default();
    let files = report::write_report(run, out, &demand, window)?;
    if files.written.is_empty() {
        bail!("{} has no logs to report on", run.display());
    }
    for f in files.written {
        println!("{}", f.display());
    }
    Ok(())
}
