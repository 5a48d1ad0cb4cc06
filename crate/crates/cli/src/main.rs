use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use reptile_core::agent::{self, ActionSpace, AgentConfig, EpisodeSource, HvacEnv, RewardParams};
use reptile_core::harness::{self, Scenario, SeriesSpec};
use reptile_core::knowledge::{self, AgentModelEntry, KnowledgeError, ModelId, TrainingMetadata, SERIES_SPACING_S};
use reptile_core::thermal::{default_devices, Device, RoomConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "reptile", version, about = "Self-adaptive HVAC control: train agents, evaluate them, run scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent on an outdoor series and write the model plus its reward curve.
    Train(TrainArgs),
    /// Run a scenario file through the adaptation loop.
    Run(RunArgs),
    /// Greedy rollout of a stored model over an outdoor series.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Hourly CSV path or synthetic:<winter|summer>:<days>[:<seed>]
    #[arg(long)]
    series: String,
    #[arg(long, default_value_t = 600)]
    episodes: usize,
    #[arg(long, env = "REPTILE_SEED", default_value_t = 0)]
    seed: u64,
    /// Model file; a JSON descriptor is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Reward curve CSV (defaults to <out>.rewards.csv).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Room TOML with [room] and [[device]] entries.
    #[arg(long)]
    room: Option<PathBuf>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    steps_per_episode: Option<usize>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long, env = "REPTILE_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Hourly CSV path or synthetic:<winter|summer>:<days>[:<seed>]
    #[arg(long)]
    series: String,
    #[arg(long, default_value_t = 96)]
    steps: usize,
    #[arg(long)]
    room: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    start_t_in: f64,
    /// Starting index into the series.
    #[arg(long, default_value_t = 0)]
    offset: usize,
    /// Seed for synthetic series without their own seed.
    #[arg(long, env = "REPTILE_SEED", default_value_t = 0)]
    seed: u64,
    /// Per-step trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn room_and_devices(path: Option<&Path>) -> Result<(RoomConfig, Vec<Device>)> {
    match path {
        Some(p) => RoomConfig::load(p).with_context(|| format!("room file {}", p.display())),
        None => Ok((RoomConfig::default(), default_devices())),
    }
}

fn load_series(spec: &str, seed: u64) -> Result<Vec<f64>> {
    let spec: SeriesSpec = spec.parse()?;
    let model = spec.load(Path::new("."), ModelId::global(0, "input"), seed)?;
    Ok(model.values().to_vec())
}

fn create_writer(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let (room, devices) = room_and_devices(a.room.as_deref())?;
    let space = ActionSpace::new(devices)?;
    let mut cfg = AgentConfig { episodes: a.episodes, ..AgentConfig::default() };
    if let Some(w) = a.hidden_width {
        cfg.hidden_width = w;
    }
    if let Some(s) = a.steps_per_episode {
        cfg.steps_per_episode = s;
    }
    let source = EpisodeSource {
        room,
        space: space.clone(),
        series: load_series(&a.series, a.seed)?,
        spacing_s: SERIES_SPACING_S as f64,
        reward: RewardParams::default(),
    };
    let (network, report) = agent::train(&source, &cfg, a.seed)?;

    let label = a
        .label
        .or_else(|| a.out.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "agent".into());
    let metadata = TrainingMetadata::from_rewards(&report.episode_rewards, a.seed, None);
    let entry = AgentModelEntry::new(ModelId::agent(1, label), network, space, metadata.clone())?;
    knowledge::save_agent_file(&a.out, &entry)?;

    let curve = a.curve.unwrap_or_else(|| a.out.with_extension("rewards.csv"));
    agent::write_reward_curve_csv(&report.episode_rewards, create_writer(&curve)?)?;

    let out = json!({
        "model": a.out,
        "curve": curve,
        "trained": metadata.trained,
        "episodes": metadata.episodes,
        "steps": report.steps,
        "final_epsilon": report.final_epsilon,
        "first_rewards_mean": metadata.first_rewards_mean,
        "last_rewards_mean": metadata.last_rewards_mean,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let result = harness::run(&scenario)?;
    harness::write_outputs(&result, &a.out_dir)?;
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    Ok(())
}

fn describe(devices: &[Device]) -> String {
    devices.iter().map(|d| format!("{} ({} levels)", d.id, d.levels.len())).collect::<Vec<_>>().join(", ")
}

fn mismatch(model: &Path, model_actions: usize, room_devices: &[Device]) -> anyhow::Error {
    let room_actions: usize = room_devices.iter().map(|d| d.levels.len()).product();
    anyhow!(
        "model {} has {model_actions} actions but the room's devices [{}] give {room_actions}; \
         expand the model for the new devices (plug them in through a scenario's plug-device event) before evaluating",
        model.display(),
        describe(room_devices)
    )
}

fn eval(a: EvalArgs) -> Result<()> {
    let (room, devices) = room_and_devices(a.room.as_deref())?;
    let entry = match knowledge::load_agent_file(&a.model, &devices) {
        Ok(e) => e,
        Err(KnowledgeError::Inconsistent { .. }) => {
            let bytes = fs::read(&a.model)?;
            let net = reptile_core::neural::deserialize(&bytes)?;
            return Err(mismatch(&a.model, net.n_actions(), &devices));
        }
        Err(e) => return Err(e.into()),
    };
    if entry.space.devices() != devices.as_slice() {
        return Err(mismatch(&a.model, entry.network.n_actions(), &devices));
    }

    let series = load_series(&a.series, a.seed)?;
    let needed = a.steps + 1;
    if a.offset + needed > series.len() {
        bail!("series has {} points; {} steps from offset {} need {needed}", series.len(), a.steps, a.offset);
    }
    let cfg = AgentConfig::default();
    let source = EpisodeSource {
        room,
        space: entry.space.clone(),
        series,
        spacing_s: SERIES_SPACING_S as f64,
        reward: RewardParams::default(),
    };
    let mut env: HvacEnv = source.env_at(a.offset, a.start_t_in, &cfg)?;
    let evaluation = agent::evaluate_network(&entry.network, &mut env, a.steps)?;
    if let Some(path) = &a.trace {
        agent::write_trace_csv(&evaluation.trace, create_writer(path)?)?;
    }
    let energy_wh: f64 =
        evaluation.trace.iter().map(|r| (r.heater_w + r.cooler_w) * cfg.action_dt / 3600.0).sum();
    let out = json!({
        "model": entry.id.to_string(),
        "steps": a.steps,
        "cumulative_reward": evaluation.cumulative_reward,
        "occupancy": evaluation.occupancy,
        "energy_wh": energy_wh,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
