//! Scenario runner: a simulated room driven by the adaptation loop under a
//! scripted sequence of outdoor-series switches and device plug-ins.
//!
//! Scenario files are TOML:
//!
//! ```toml
//! version = 1
//! name = "summer-flip"
//! seed = 7
//! duration_ticks = 336          # 300 s per tick
//! initial_t_in = 20.0
//! outdoor = "winter-live"       # series key driving the room at tick 0
//! active_agent = 1
//! room = "room.toml"            # optional; [room] table plus [[device]] entries
//!
//! [[series]]
//! key = "summer"
//! spec = "synthetic:summer:30:2"   # or a path to an hourly CSV
//! global = 2                       # also register as a stored outdoor dataset
//!
//! [[agent]]
//! index = 1
//! model = "winter.bin"             # or: train = { series = "winter", episodes = 150, seed = 42 }
//!
//! [[event]]
//! at_tick = 228
//! kind = "switch-outdoor"
//! series = "summer"
//!
//! [[event]]
//! at_tick = 60
//! kind = "plug-device"
//! device = { id = "heater2", kind = "heater", levels = [50.0, 200.0, 250.0, 400.0] }
//!
//! [analyzer]   # optional overrides of the loop settings
//! [training]   # agent settings for inline training
//! [retrain]    # agent settings for retraining (defaults to [training])
//! [reward]
//! ```
//!
//! Relative paths resolve against the scenario file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{self, AnalyzerConfig, Event, EventKind, LoopConfig, MapeLoop, Reading};
use crate::agent::{self, ActionSpace, AgentConfig, EpisodeSource, RewardParams};
use crate::knowledge::{
    self, AgentModelEntry, GlobalModel, KnowledgeBase, ModelId, Season, TrainingMetadata, SERIES_SPACING_S,
};
use crate::thermal::{self, default_devices, Device, OutdoorProfile, OutdoorTemperature, RoomConfig, SimState};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("bad series spec `{0}`: expected a CSV path or synthetic:<winter|summer>:<days>[:<seed>]")]
    SeriesSpec(String),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error(transparent)]
    Knowledge(#[from] knowledge::KnowledgeError),
    #[error(transparent)]
    Agent(#[from] agent::AgentError),
    #[error(transparent)]
    Adaptation(#[from] adaptation::AdaptationError),
    #[error(transparent)]
    Thermal(#[from] thermal::ThermalError),
}

/// Where an outdoor series comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SeriesSpec {
    Synthetic { season: Season, days: usize, seed: Option<u64> },
    HourlyCsv(PathBuf),
}

impl FromStr for SeriesSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some(rest) = s.strip_prefix("synthetic:") else {
            if s.is_empty() {
                return Err(HarnessError::SeriesSpec(s.into()));
            }
            return Ok(SeriesSpec::HourlyCsv(PathBuf::from(s)));
        };
        let bad = || HarnessError::SeriesSpec(s.into());
        let parts: Vec<&str> = rest.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(bad());
        }
        let season: Season = parts[0].parse().map_err(|_| bad())?;
        let days: usize = parts[1].parse().ok().filter(|d| *d >= 1).ok_or_else(bad)?;
        let seed = parts.get(2).map(|p| p.parse::<u64>().map_err(|_| bad())).transpose()?;
        Ok(SeriesSpec::Synthetic { season, days, seed })
    }
}

impl SeriesSpec {
    /// Materialises the series. `default_seed` applies to synthetic specs
    /// without their own seed; relative paths resolve against `base`.
    pub fn load(&self, base: &Path, id: ModelId, default_seed: u64) -> Result<GlobalModel, HarnessError> {
        match self {
            SeriesSpec::Synthetic { season, days, seed } => {
                Ok(knowledge::synthetic_series(*season, *days, seed.unwrap_or(default_seed)).with_id(id))
            }
            SeriesSpec::HourlyCsv(path) => {
                let path = base.join(path);
                Ok(knowledge::ingest_hourly_csv(&path, id, None)?)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    version: u32,
    name: String,
    seed: Option<u64>,
    duration_ticks: u64,
    #[serde(default = "default_t_in")]
    initial_t_in: f64,
    outdoor: String,
    active_agent: u32,
    room: Option<String>,
    #[serde(default)]
    series: Vec<SeriesDecl>,
    #[serde(default)]
    agent: Vec<AgentDecl>,
    #[serde(default)]
    event: Vec<EventDecl>,
    #[serde(default)]
    analyzer: AnalyzerConfig,
    #[serde(default)]
    training: AgentConfig,
    retrain: Option<AgentConfig>,
    #[serde(default)]
    reward: RewardParams,
}

fn default_t_in() -> f64 {
    20.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesDecl {
    key: String,
    spec: String,
    global: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDecl {
    index: u32,
    label: Option<String>,
    model: Option<String>,
    train: Option<TrainDecl>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainDecl {
    series: String,
    episodes: usize,
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventDecl {
    at_tick: u64,
    kind: String,
    series: Option<String>,
    device: Option<Device>,
}

/// An outdoor series available to the run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesEntry {
    pub model: GlobalModel,
    /// Registered in the knowledge base under this index when set.
    pub global: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentSource {
    Ready(Box<AgentModelEntry>),
    Train { series: String, episodes: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub index: u32,
    pub label: String,
    pub source: AgentSource,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptAction {
    SwitchOutdoor(String),
    PlugDevice(Device),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEvent {
    pub at_tick: u64,
    pub action: ScriptAction,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_ticks: u64,
    pub initial_t_in: f64,
    pub room: RoomConfig,
    pub devices: Vec<Device>,
    pub series: BTreeMap<String, SeriesEntry>,
    pub outdoor: String,
    pub agents: Vec<AgentSpec>,
    pub active_agent: u32,
    pub script: Vec<ScriptEvent>,
    pub analyzer: AnalyzerConfig,
    pub training: AgentConfig,
    pub retrain: AgentConfig,
    pub reward: RewardParams,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Invalid(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates, reporting every problem found.
    pub fn parse(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?;
        let mut errors = Vec::new();
        if file.version != SCENARIO_VERSION {
            errors.push(format!("version {} is not supported (expected {SCENARIO_VERSION})", file.version));
        }
        if file.duration_ticks == 0 {
            errors.push("duration_ticks must be positive".into());
        }
        if !file.initial_t_in.is_finite() {
            errors.push("initial_t_in must be finite".into());
        }
        let seed = file.seed.unwrap_or(0);

        let (room, devices) = match &file.room {
            Some(p) => match RoomConfig::load(&base.join(p)) {
                Ok(rd) => rd,
                Err(e) => {
                    errors.push(format!("room `{p}`: {e}"));
                    (RoomConfig::default(), default_devices())
                }
            },
            None => (RoomConfig::default(), default_devices()),
        };

        let mut series = BTreeMap::new();
        let mut globals = BTreeSet::new();
        for (i, decl) in file.series.iter().enumerate() {
            if series.contains_key(&decl.key) {
                errors.push(format!("series `{}` declared twice", decl.key));
                continue;
            }
            if let Some(g) = decl.global {
                if !globals.insert(g) {
                    errors.push(format!("global index {g} used by more than one series"));
                }
            }
            let id = ModelId::global(decl.global.unwrap_or(0), decl.key.clone());
            let loaded = decl.spec.parse::<SeriesSpec>().and_then(|s| s.load(base, id, seed.wrapping_add(i as u64)));
            match loaded {
                Ok(model) => {
                    series.insert(decl.key.clone(), SeriesEntry { model, global: decl.global });
                }
                Err(e) => errors.push(format!("series `{}`: {e}", decl.key)),
            }
        }

        let needed_s = file.duration_ticks as f64 * 300.0;
        let check_coverage = |key: &str, what: &str, errors: &mut Vec<String>| match series.get(key) {
            None => {
                if !file.series.iter().any(|s| s.key == key) {
                    errors.push(format!("{what} refers to unknown series `{key}`"));
                }
            }
            Some(e) => {
                let covered = (e.model.len() - 1) as f64 * SERIES_SPACING_S as f64;
                if covered < needed_s {
                    errors.push(format!(
                        "series `{key}` covers {covered} s but the scenario runs {needed_s} s"
                    ));
                }
            }
        };
        check_coverage(&file.outdoor, "outdoor", &mut errors);

        let mut agents = Vec::new();
        let mut seen = BTreeSet::new();
        for decl in &file.agent {
            if !seen.insert(decl.index) {
                errors.push(format!("agent index {} declared twice", decl.index));
            }
            let label = decl.label.clone().unwrap_or_else(|| format!("agent-{}", decl.index));
            let source = match (&decl.model, &decl.train) {
                (Some(p), None) => match knowledge::load_agent_file(&base.join(p), &devices) {
                    Ok(mut e) => {
                        e.id = ModelId::agent(decl.index, label.clone());
                        if e.space.devices() != devices.as_slice() {
                            errors.push(format!("agent {}: model `{p}` was built for other devices", decl.index));
                        }
                        Some(AgentSource::Ready(Box::new(e)))
                    }
                    Err(e) => {
                        errors.push(format!("agent {}: {e}", decl.index));
                        None
                    }
                },
                (None, Some(t)) => {
                    if !file.series.iter().any(|s| s.key == t.series) {
                        errors.push(format!("agent {} trains on unknown series `{}`", decl.index, t.series));
                    }
                    Some(AgentSource::Train { series: t.series.clone(), episodes: t.episodes, seed: t.seed })
                }
                _ => {
                    errors.push(format!("agent {} needs exactly one of `model` or `train`", decl.index));
                    None
                }
            };
            if let Some(source) = source {
                agents.push(AgentSpec { index: decl.index, label, source });
            }
        }
        if !file.agent.iter().any(|a| a.index == file.active_agent) {
            errors.push(format!("active_agent {} is not declared", file.active_agent));
        }

        let mut script = Vec::new();
        let mut plugged: BTreeSet<String> = devices.iter().map(|d| d.id.clone()).collect();
        for (i, decl) in file.event.iter().enumerate() {
            let at = format!("event {} (tick {})", i + 1, decl.at_tick);
            if decl.at_tick >= file.duration_ticks {
                errors.push(format!("{at}: tick is beyond duration_ticks {}", file.duration_ticks));
            }
            match decl.kind.as_str() {
                "switch-outdoor" => match &decl.series {
                    Some(key) => {
                        check_coverage(key, &at, &mut errors);
                        script.push(ScriptEvent { at_tick: decl.at_tick, action: ScriptAction::SwitchOutdoor(key.clone()) });
                    }
                    None => errors.push(format!("{at}: switch-outdoor needs `series`")),
                },
                "plug-device" => match &decl.device {
                    Some(d) => {
                        if let Err(e) = d.validate() {
                            errors.push(format!("{at}: {e}"));
                        }
                        if !plugged.insert(d.id.clone()) {
                            errors.push(format!("{at}: device id `{}` is already present", d.id));
                        }
                        script.push(ScriptEvent { at_tick: decl.at_tick, action: ScriptAction::PlugDevice(d.clone()) });
                    }
                    None => errors.push(format!("{at}: plug-device needs `device`")),
                },
                other => errors.push(format!("{at}: unknown kind `{other}` (expected switch-outdoor or plug-device)")),
            }
        }
        script.sort_by_key(|e| e.at_tick);

        if let Err(e) = file.analyzer.validate() {
            errors.push(format!("analyzer: {e}"));
        }
        if let Err(e) = file.training.validate() {
            errors.push(format!("training: {e}"));
        }
        let retrain = file.retrain.unwrap_or_else(|| file.training.clone());
        if let Err(e) = retrain.validate() {
            errors.push(format!("retrain: {e}"));
        }
        if let Err(e) = file.reward.validate() {
            errors.push(format!("reward: {e}"));
        }

        if !errors.is_empty() {
            return Err(HarnessError::Invalid(errors));
        }
        Ok(Scenario {
            name: file.name,
            seed,
            duration_ticks: file.duration_ticks,
            initial_t_in: file.initial_t_in,
            room,
            devices,
            series,
            outdoor: file.outdoor,
            agents,
            active_agent: file.active_agent,
            script,
            analyzer: file.analyzer,
            training: file.training,
            retrain,
            reward: file.reward,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub tick: u64,
    pub clock_s: f64,
    pub t_out: f64,
    pub t_in: f64,
    pub action_index: usize,
    pub heater_w: f64,
    pub cooler_w: f64,
    pub window: u8,
    pub active_agent: u32,
    pub phase: String,
    pub outdoor_series: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AdaptationCounts {
    pub contextual: usize,
    /// Switch decisions, including those that kept the active agent.
    pub model_switch: usize,
    /// Ticks at which the controlling agent actually changed.
    pub agent_changes: usize,
    pub expansion: usize,
    pub alarm: usize,
    pub retrain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub ticks: u64,
    /// Share of ticks with the indoor temperature in the comfort band.
    pub occupancy: f64,
    pub energy_wh: f64,
    pub adaptations: AdaptationCounts,
    pub final_agent: u32,
    pub final_phase: String,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Vec<TraceRow>,
    pub events: Vec<Event>,
    pub summary: Summary,
    pub knowledge: KnowledgeBase,
}

fn count_adaptations(events: &[Event], trace: &[TraceRow]) -> AdaptationCounts {
    let n = |k: EventKind| events.iter().filter(|e| e.kind == k).count();
    AdaptationCounts {
        contextual: events.iter().filter(|e| e.kind.is_contextual()).count(),
        model_switch: n(EventKind::ModelSwitch),
        agent_changes: trace.windows(2).filter(|w| w[0].active_agent != w[1].active_agent).count(),
        expansion: n(EventKind::Expansion),
        alarm: n(EventKind::Alarm),
        retrain: n(EventKind::RetrainStart),
    }
}

/// Builds the knowledge base, trains inline agents and steps the room
/// through the script.
pub fn run(scenario: &Scenario) -> Result<RunResult, HarnessError> {
    let mut kb = KnowledgeBase::new(scenario.room.clone(), scenario.devices.clone());
    for (key, entry) in &scenario.series {
        if let Some(g) = entry.global {
            kb.register_global(entry.model.clone().with_id(ModelId::global(g, key.clone())))?;
        }
    }
    let space = ActionSpace::new(scenario.devices.clone())?;
    for spec in &scenario.agents {
        let entry = match &spec.source {
            AgentSource::Ready(e) => (**e).clone(),
            AgentSource::Train { series, episodes, seed } => {
                let values = scenario.series.get(series).map(|s| s.model.values().to_vec()).unwrap_or_default();
                let source = EpisodeSource {
                    room: scenario.room.clone(),
                    space: space.clone(),
                    series: values,
                    spacing_s: SERIES_SPACING_S as f64,
                    reward: scenario.reward,
                };
                let cfg = AgentConfig { episodes: *episodes, ..scenario.training.clone() };
                log::info!("training agent {} on `{series}` for {episodes} episodes", spec.index);
                let (network, report) = agent::train(&source, &cfg, *seed)?;
                let trained_on = scenario.series.get(series).and_then(|s| s.global);
                let meta = TrainingMetadata::from_rewards(&report.episode_rewards, *seed, trained_on);
                AgentModelEntry::new(ModelId::agent(spec.index, spec.label.clone()), network, space.clone(), meta)?
            }
        };
        kb.register_agent(entry)?;
    }

    let tick_s = 300.0;
    let analyzer = AnalyzerConfig { ticks_per_action: 3, ..scenario.analyzer.clone() };
    let loop_cfg = LoopConfig {
        analyzer,
        retrain: scenario.retrain.clone(),
        reward: scenario.reward,
        seed: scenario.seed,
        tick_s,
        ..LoopConfig::default()
    };
    let mut mape = MapeLoop::new(kb, scenario.active_agent, loop_cfg)?;

    let profile_of = |key: &str| scenario.series[key].model.profile();
    let mut outdoor_key = scenario.outdoor.clone();
    let mut outdoor: OutdoorProfile = profile_of(&outdoor_key);
    let mut plugged = scenario.devices.clone();
    let mut state = SimState::new(scenario.initial_t_in, outdoor.at(0.0));
    let mut script = scenario.script.iter().peekable();
    let mut trace = Vec::with_capacity(scenario.duration_ticks as usize);
    let mut comfortable = 0u64;
    let mut energy_wh = 0.0;

    for tick in 0..scenario.duration_ticks {
        while let Some(ev) = script.next_if(|e| e.at_tick == tick) {
            match &ev.action {
                ScriptAction::SwitchOutdoor(key) => {
                    outdoor_key = key.clone();
                    outdoor = profile_of(key);
                    state.t_out = outdoor.at(state.clock);
                }
                ScriptAction::PlugDevice(d) => plugged.push(d.clone()),
            }
        }
        let reading = Reading { t_in: state.t_in, t_out: state.t_out, devices: plugged.clone() };
        mape.tick(&reading);
        if scenario.analyzer.in_comfort(state.t_in) {
            comfortable += 1;
        }
        let powers = mape.current_powers();
        trace.push(TraceRow {
            tick,
            clock_s: state.clock,
            t_out: state.t_out,
            t_in: state.t_in,
            action_index: mape.current_action(),
            heater_w: powers.heater_w,
            cooler_w: powers.cooler_w,
            window: powers.window_open as u8,
            active_agent: mape.state().active.index,
            phase: mape.phase().to_string(),
            outdoor_series: outdoor_key.clone(),
        });
        energy_wh += powers.energy_w() * tick_s / 3600.0;
        let t_in = thermal::step_temperature(&state, &powers, &scenario.room, tick_s)?;
        let clock = state.clock + tick_s;
        state = SimState { t_in, t_out: outdoor.at(clock), step_index: state.step_index + 1, clock };
    }

    let events = mape.events().to_vec();
    let summary = Summary {
        name: scenario.name.clone(),
        seed: scenario.seed,
        ticks: scenario.duration_ticks,
        occupancy: comfortable as f64 / scenario.duration_ticks as f64,
        energy_wh,
        adaptations: count_adaptations(&events, &trace),
        final_agent: mape.state().active.index,
        final_phase: mape.phase().to_string(),
    };
    Ok(RunResult { trace, events, summary, knowledge: mape.into_knowledge() })
}

/// Writes `trace.csv`, `events.csv` and `summary.json` into `dir`.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<(), HarnessError> {
    let fail = |path: &Path, message: String| HarnessError::Output { path: path.to_owned(), message };
    fs::create_dir_all(dir).map_err(|e| fail(dir, e.to_string()))?;

    let trace_path = dir.join("trace.csv");
    let mut w = csv::Writer::from_path(&trace_path).map_err(|e| fail(&trace_path, e.to_string()))?;
    for row in &result.trace {
        w.serialize(row).map_err(|e| fail(&trace_path, e.to_string()))?;
    }
    w.flush().map_err(|e| fail(&trace_path, e.to_string()))?;

    let events_path = dir.join("events.csv");
    let file = fs::File::create(&events_path).map_err(|e| fail(&events_path, e.to_string()))?;
    adaptation::write_events_csv(&result.events, file).map_err(|e| fail(&events_path, e.to_string()))?;

    let summary_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&result.summary).map_err(|e| fail(&summary_path, e.to_string()))?;
    fs::write(&summary_path, text + "\n").map_err(|e| fail(&summary_path, e.to_string()))?;
    Ok(())
}
