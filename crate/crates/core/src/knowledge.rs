//! Shared knowledge: pre-trained agents, outdoor-temperature datasets used as
//! episode generators, the device set and the observation history.
//!
//! On disk a store is a directory:
//!
//! ```text
//! manifest.json          format version, room, devices, model index
//! models/agent-<n>.bin   serialized networks
//! series/global-<n>.csv  timestamp,temperature_c at 900 s spacing
//! log.csv                timestamp,t_in,t_out,action_index
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ActionSpace;
use crate::neural::{self, DuelingNetwork};
use crate::thermal::{Device, OutdoorProfile, RoomConfig};

/// Spacing of every stored outdoor series.
pub const SERIES_SPACING_S: i64 = 900;
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("{0} not found")]
    NotFound(ModelId),
    #[error("{0} is already registered")]
    Duplicate(ModelId),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("{id}: {message}")]
    Inconsistent { id: ModelId, message: String },
    #[error("observation at {timestamp} is older than the last entry ({last})")]
    NonMonotone { timestamp: f64, last: f64 },
    #[error("store format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{id}: cannot read {path}: {source}")]
    MissingFile { id: ModelId, path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Neural(#[from] neural::NeuralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Agent,
    Global,
    TimeVarying,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelId {
    pub kind: ModelKind,
    pub index: u32,
    pub label: String,
}

impl ModelId {
    pub fn agent(index: u32, label: impl Into<String>) -> Self {
        Self { kind: ModelKind::Agent, index, label: label.into() }
    }

    pub fn global(index: u32, label: impl Into<String>) -> Self {
        Self { kind: ModelKind::Global, index, label: label.into() }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ModelKind::Agent => "agent",
            ModelKind::Global => "global",
            ModelKind::TimeVarying => "time-varying",
        };
        write!(f, "{kind} model {}", self.index)?;
        if !self.label.is_empty() {
            write!(f, " ({})", self.label)?;
        }
        Ok(())
    }
}

/// Outdoor temperature dataset at 900 s spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub id: ModelId,
    timestamps: Vec<i64>,
    values: Vec<f64>,
    pub season: String,
}

impl GlobalModel {
    pub fn new(id: ModelId, timestamps: Vec<i64>, values: Vec<f64>, season: impl Into<String>) -> Result<Self, KnowledgeError> {
        if timestamps.len() != values.len() {
            return Err(KnowledgeError::InvalidSeries("timestamp and value counts differ".into()));
        }
        if values.is_empty() {
            return Err(KnowledgeError::InvalidSeries("series is empty".into()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] - w[0] != SERIES_SPACING_S) {
            return Err(KnowledgeError::InvalidSeries(format!(
                "points {i} and {} are not {SERIES_SPACING_S} s apart",
                i + 1
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KnowledgeError::InvalidSeries("non-finite temperature".into()));
        }
        Ok(Self { id, timestamps, values, season: season.into() })
    }

    pub fn with_id(mut self, id: ModelId) -> Self {
        self.id = id;
        self
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn profile(&self) -> OutdoorProfile {
        OutdoorProfile::new(self.values.clone(), SERIES_SPACING_S as f64)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", "temperature_c"])?;
        for (t, v) in self.timestamps.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// Season label guessed from a file name.
pub fn season_from_path(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
    ["summer", "winter", "spring", "autumn"].iter().find(|s| name.contains(*s)).map_or("unknown", |s| s).to_string()
}

/// Reads `timestamp,temperature_c` rows one hour apart and repeats each value
/// three times at 900 s spacing. The output clock is compressed: hour `k`
/// occupies `[2700 k, 2700 k + 1800]`.
pub fn ingest_hourly_csv_str(text: &str, id: ModelId, season: &str) -> Result<GlobalModel, KnowledgeError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| KnowledgeError::Parse { line: 1, message: e.to_string() })?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| KnowledgeError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (ts_col, temp_col) = (col("timestamp")?, col("temperature_c")?);

    let mut hourly: Vec<(i64, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            KnowledgeError::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fail = |message: String| KnowledgeError::Parse { line, message };
        let ts_text = record.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(ts_text).ok_or_else(|| fail(format!("bad timestamp `{ts_text}`")))?;
        let temp_text = record.get(temp_col).unwrap_or("");
        let temp: f64 = temp_text
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| fail(format!("bad temperature `{temp_text}`")))?;
        if let Some(&(prev, _)) = hourly.last() {
            if ts - prev != 3600 {
                return Err(fail(format!("expected a row one hour after {prev}, got {ts} (gap or disorder)")));
            }
        }
        hourly.push((ts, temp));
    }
    if hourly.is_empty() {
        return Err(KnowledgeError::InvalidSeries("no data rows".into()));
    }
    let start = hourly[0].0;
    let values: Vec<f64> = hourly.iter().flat_map(|&(_, v)| [v; 3]).collect();
    let timestamps = (0..values.len() as i64).map(|i| start + i * SERIES_SPACING_S).collect();
    GlobalModel::new(id, timestamps, values, season)
}

pub fn ingest_hourly_csv(path: &Path, id: ModelId, season: Option<&str>) -> Result<GlobalModel, KnowledgeError> {
    let text = fs::read_to_string(path).map_err(|source| KnowledgeError::Io { path: path.to_owned(), source })?;
    let season = season.map_or_else(|| season_from_path(path), str::to_string);
    ingest_hourly_csv_str(&text, id, &season)
}

/// Reads a series written by [`GlobalModel::write_csv`].
pub fn read_series_csv(text: &str, id: ModelId, season: &str) -> Result<GlobalModel, KnowledgeError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| KnowledgeError::Parse { line: 0, message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fail = || KnowledgeError::Parse { line, message: "expected timestamp,temperature_c".into() };
        timestamps.push(record.get(0).and_then(|s| s.parse().ok()).ok_or_else(fail)?);
        values.push(record.get(1).and_then(|s| s.parse().ok()).ok_or_else(fail)?);
    }
    GlobalModel::new(id, timestamps, values, season)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Summer,
}

impl Season {
    /// Daily mean and half-swing in °C.
    pub fn cycle(self) -> (f64, f64) {
        match self {
            Season::Winter => (14.0, 3.0),
            Season::Summer => (30.0, 10.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Summer => "summer",
        }
    }
}

impl std::str::FromStr for Season {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "winter" => Ok(Season::Winter),
            "summer" => Ok(Season::Summer),
            other => Err(format!("unknown season `{other}` (expected winter or summer)")),
        }
    }
}

pub const POINTS_PER_DAY: usize = 96;

/// Daily sinusoid (coldest at 04:00, warmest at 16:00) plus unit-variance
/// Gaussian noise truncated at ±2.
pub fn synthetic_series(season: Season, days: usize, seed: u64) -> GlobalModel {
    assert!(days >= 1, "need at least one day");
    let (mean, swing) = season.cycle();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..days * POINTS_PER_DAY)
        .map(|i| {
            let hour = (i % POINTS_PER_DAY) as f64 * 24.0 / POINTS_PER_DAY as f64;
            let noise = loop {
                let e: f64 = StandardNormal.sample(&mut rng);
                if e.abs() <= 2.0 {
                    break e;
                }
            };
            mean - swing * (std::f64::consts::TAU * (hour - 4.0) / 24.0).cos() + noise
        })
        .collect();
    let timestamps = (0..values.len() as i64).map(|i| i * SERIES_SPACING_S).collect();
    let label = format!("synthetic-{}", season.label());
    GlobalModel::new(ModelId::global(0, label), timestamps, values, season.label()).expect("well-formed synthetic series")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub trained: bool,
    pub episodes: usize,
    pub seed: u64,
    /// Mean cumulative reward of the first and last ten episodes.
    pub first_rewards_mean: Option<f64>,
    pub last_rewards_mean: Option<f64>,
    /// Global model the agent was trained on, if any.
    pub trained_on: Option<u32>,
}

impl TrainingMetadata {
    pub fn from_rewards(rewards: &[f64], seed: u64, trained_on: Option<u32>) -> Self {
        let mean = |s: &[f64]| (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64);
        let k = rewards.len().min(10);
        Self {
            trained: !rewards.is_empty(),
            episodes: rewards.len(),
            seed,
            first_rewards_mean: mean(&rewards[..k]),
            last_rewards_mean: mean(&rewards[rewards.len() - k..]),
            trained_on,
        }
    }
}

/// A policy network plus the action space it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModelEntry {
    pub id: ModelId,
    pub network: DuelingNetwork,
    pub space: ActionSpace,
    pub metadata: TrainingMetadata,
}

impl AgentModelEntry {
    pub fn new(id: ModelId, network: DuelingNetwork, space: ActionSpace, metadata: TrainingMetadata) -> Result<Self, KnowledgeError> {
        let entry = Self { id, network, space, metadata };
        entry.check()?;
        Ok(entry)
    }

    fn check(&self) -> Result<(), KnowledgeError> {
        let n = self.space.len();
        if self.network.n_actions() != n || self.network.input_dim() != crate::agent::OBSERVATION_DIM + n {
            return Err(KnowledgeError::Inconsistent {
                id: self.id.clone(),
                message: format!(
                    "network has {} actions and {} inputs but the action space has {n} actions",
                    self.network.n_actions(),
                    self.network.input_dim()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Seconds on the monitor clock.
    pub timestamp: f64,
    pub t_in: f64,
    pub t_out: f64,
    pub action_index: usize,
}

/// Append-only monitoring history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationLog {
    entries: Vec<Observation>,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, obs: Observation) -> Result<(), KnowledgeError> {
        if let Some(last) = self.entries.last() {
            if !(obs.timestamp >= last.timestamp) {
                return Err(KnowledgeError::NonMonotone { timestamp: obs.timestamp, last: last.timestamp });
            }
        }
        self.entries.push(obs);
        Ok(())
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The last `n` entries in chronological order; the flag is set when
    /// fewer than `n` exist.
    pub fn recent(&self, n: usize) -> (&[Observation], bool) {
        let start = self.entries.len().saturating_sub(n);
        (&self.entries[start..], self.entries.len() < n)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self, KnowledgeError> {
        let mut log = Self::new();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for (i, row) in reader.deserialize::<Observation>().enumerate() {
            let obs = row.map_err(|e| KnowledgeError::Parse { line: i + 2, message: e.to_string() })?;
            log.append(obs)?;
        }
        Ok(log)
    }
}

/// Registries plus the live device set and history.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub room: RoomConfig,
    pub devices: Vec<Device>,
    agents: BTreeMap<u32, AgentModelEntry>,
    globals: BTreeMap<u32, GlobalModel>,
    pub log: ObservationLog,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    room: RoomConfig,
    devices: Vec<Device>,
    agents: Vec<AgentRecord>,
    globals: Vec<GlobalRecord>,
}

#[derive(Serialize, Deserialize)]
struct AgentRecord {
    id: ModelId,
    devices: Vec<Device>,
    metadata: TrainingMetadata,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct GlobalRecord {
    id: ModelId,
    season: String,
    file: String,
}

impl KnowledgeBase {
    pub fn new(room: RoomConfig, devices: Vec<Device>) -> Self {
        Self { room, devices, agents: BTreeMap::new(), globals: BTreeMap::new(), log: ObservationLog::new() }
    }

    pub fn register_agent(&mut self, entry: AgentModelEntry) -> Result<(), KnowledgeError> {
        if entry.id.kind != ModelKind::Agent {
            return Err(KnowledgeError::Inconsistent { id: entry.id, message: "not an agent id".into() });
        }
        if self.agents.contains_key(&entry.id.index) {
            return Err(KnowledgeError::Duplicate(entry.id));
        }
        entry.check()?;
        self.agents.insert(entry.id.index, entry);
        Ok(())
    }

    pub fn register_global(&mut self, model: GlobalModel) -> Result<(), KnowledgeError> {
        if model.id.kind != ModelKind::Global {
            return Err(KnowledgeError::Inconsistent { id: model.id, message: "not a global id".into() });
        }
        if self.globals.contains_key(&model.id.index) {
            return Err(KnowledgeError::Duplicate(model.id));
        }
        self.globals.insert(model.id.index, model);
        Ok(())
    }

    pub fn agent(&self, index: u32) -> Result<&AgentModelEntry, KnowledgeError> {
        self.agents.get(&index).ok_or_else(|| KnowledgeError::NotFound(ModelId::agent(index, "")))
    }

    pub fn agent_mut(&mut self, index: u32) -> Result<&mut AgentModelEntry, KnowledgeError> {
        self.agents.get_mut(&index).ok_or_else(|| KnowledgeError::NotFound(ModelId::agent(index, "")))
    }

    pub fn global(&self, index: u32) -> Result<&GlobalModel, KnowledgeError> {
        self.globals.get(&index).ok_or_else(|| KnowledgeError::NotFound(ModelId::global(index, "")))
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentModelEntry> {
        self.agents.values()
    }

    pub fn agents_mut(&mut self) -> impl Iterator<Item = &mut AgentModelEntry> {
        self.agents.values_mut()
    }

    pub fn globals(&self) -> impl Iterator<Item = &GlobalModel> {
        self.globals.values()
    }

    /// Ids of one kind, ordered by index.
    pub fn list(&self, kind: ModelKind) -> Vec<ModelId> {
        match kind {
            ModelKind::Agent => self.agents.values().map(|e| e.id.clone()).collect(),
            ModelKind::Global => self.globals.values().map(|g| g.id.clone()).collect(),
            ModelKind::TimeVarying => Vec::new(),
        }
    }

    pub fn next_agent_index(&self) -> u32 {
        self.agents.keys().next_back().map_or(1, |k| k + 1)
    }

    /// Replaces an existing agent entry, keeping its id.
    pub fn replace_agent(&mut self, entry: AgentModelEntry) -> Result<(), KnowledgeError> {
        entry.check()?;
        match self.agents.get_mut(&entry.id.index) {
            Some(slot) => {
                *slot = entry;
                Ok(())
            }
            None => Err(KnowledgeError::NotFound(entry.id)),
        }
    }

    pub fn persist(&self, dir: &Path) -> Result<(), KnowledgeError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| KnowledgeError::Io { path, source }
        };
        for sub in ["models", "series"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io(&p))?;
        }
        let mut manifest = Manifest {
            format_version: STORE_VERSION,
            room: self.room.clone(),
            devices: self.devices.clone(),
            agents: Vec::new(),
            globals: Vec::new(),
        };
        for e in self.agents.values() {
            let file = format!("models/agent-{}.bin", e.id.index);
            let path = dir.join(&file);
            fs::write(&path, neural::serialize(&e.network)).map_err(io(&path))?;
            manifest.agents.push(AgentRecord {
                id: e.id.clone(),
                devices: e.space.devices().to_vec(),
                metadata: e.metadata.clone(),
                file,
            });
        }
        for g in self.globals.values() {
            let file = format!("series/global-{}.csv", g.id.index);
            let path = dir.join(&file);
            let mut buf = Vec::new();
            g.write_csv(&mut buf).map_err(|e| KnowledgeError::Io { path: path.clone(), source: e.into() })?;
            fs::write(&path, buf).map_err(io(&path))?;
            manifest.globals.push(GlobalRecord { id: g.id.clone(), season: g.season.clone(), file });
        }
        let log_path = dir.join("log.csv");
        let mut buf = Vec::new();
        self.log.write_csv(&mut buf).map_err(|e| KnowledgeError::Io { path: log_path.clone(), source: e.into() })?;
        fs::write(&log_path, buf).map_err(io(&log_path))?;
        let manifest_path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| KnowledgeError::Manifest(e.to_string()))?;
        fs::write(&manifest_path, text).map_err(io(&manifest_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, KnowledgeError> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)
            .map_err(|source| KnowledgeError::Io { path: manifest_path.clone(), source })?;
        let version = serde_json::from_str::<serde_json::Value>(&text)
            .map_err(|e| KnowledgeError::Manifest(e.to_string()))?
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| KnowledgeError::Manifest("missing format_version".into()))?;
        if version != STORE_VERSION as u64 {
            return Err(KnowledgeError::Version { found: version as u32, expected: STORE_VERSION });
        }
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| KnowledgeError::Manifest(e.to_string()))?;
        let mut kb = KnowledgeBase::new(manifest.room, manifest.devices);
        for rec in manifest.agents {
            let path = dir.join(&rec.file);
            let bytes = fs::read(&path).map_err(|source| KnowledgeError::MissingFile { id: rec.id.clone(), path, source })?;
            let network = neural::deserialize(&bytes)?;
            let space = ActionSpace::new(rec.devices)
                .map_err(|e| KnowledgeError::Inconsistent { id: rec.id.clone(), message: e.to_string() })?;
            kb.register_agent(AgentModelEntry::new(rec.id, network, space, rec.metadata)?)?;
        }
        for rec in manifest.globals {
            let path = dir.join(&rec.file);
            let text =
                fs::read_to_string(&path).map_err(|source| KnowledgeError::MissingFile { id: rec.id.clone(), path, source })?;
            kb.register_global(read_series_csv(&text, rec.id, &rec.season)?)?;
        }
        let log_path = dir.join("log.csv");
        if log_path.exists() {
            let text = fs::read_to_string(&log_path).map_err(|source| KnowledgeError::Io { path: log_path, source })?;
            kb.log = ObservationLog::read_csv(&text)?;
        }
        Ok(kb)
    }
}

/// Sidecar written next to a standalone model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub format_version: u32,
    pub id: ModelId,
    pub devices: Vec<Device>,
    pub metadata: TrainingMetadata,
}

/// `model.bin` -> `model.json`.
pub fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

/// Writes the network to `path` and its descriptor to the sidecar.
pub fn save_agent_file(path: &Path, entry: &AgentModelEntry) -> Result<(), KnowledgeError> {
    let io = |p: &Path| {
        let p = p.to_owned();
        move |source| KnowledgeError::Io { path: p, source }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(path, neural::serialize(&entry.network)).map_err(io(path))?;
    let sidecar = ModelSidecar {
        format_version: STORE_VERSION,
        id: entry.id.clone(),
        devices: entry.space.devices().to_vec(),
        metadata: entry.metadata.clone(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| KnowledgeError::Manifest(e.to_string()))?;
    fs::write(&side, text).map_err(io(&side))?;
    Ok(())
}

/// Reads a network and, when present, its sidecar. Without a sidecar the
/// network is paired with `fallback_devices`.
pub fn load_agent_file(path: &Path, fallback_devices: &[Device]) -> Result<AgentModelEntry, KnowledgeError> {
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let bytes = fs::read(path).map_err(|source| KnowledgeError::MissingFile {
        id: ModelId::agent(0, label.clone()),
        path: path.to_owned(),
        source,
    })?;
    let network = neural::deserialize(&bytes)?;
    let side = sidecar_path(path);
    let (id, devices, metadata) = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|source| KnowledgeError::Io { path: side.clone(), source })?;
        let s: ModelSidecar = serde_json::from_str(&text).map_err(|e| KnowledgeError::Manifest(format!("{}: {e}", side.display())))?;
        if s.format_version != STORE_VERSION {
            return Err(KnowledgeError::Version { found: s.format_version, expected: STORE_VERSION });
        }
        (s.id, s.devices, s.metadata)
    } else {
        (ModelId::agent(0, label), fallback_devices.to_vec(), TrainingMetadata::default())
    };
    let space = ActionSpace::new(devices).map_err(|e| KnowledgeError::Inconsistent { id: id.clone(), message: e.to_string() })?;
    AgentModelEntry::new(id, network, space, metadata)
}
