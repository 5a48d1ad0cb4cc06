//! Monitor-analyse-plan-execute loop with three adaptation strategies:
//! switching between stored agents, growing networks when devices are
//! plugged in, and retraining on a stored outdoor dataset.
//!
//! The loop ticks every monitoring interval (300 s by default). The active
//! agent acts on every `ticks_per_action`-th tick. Retraining runs on a
//! worker thread and its result is picked up at a fixed tick, so a run is
//! reproducible regardless of how long training takes in wall time.

use std::fmt;
use std::io::Write;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    self, make_state_vector, ActionSpace, AgentConfig, AgentError, EpisodeSource, HvacEnv, RewardParams,
};
use crate::forecasting::{ArimaConfig, ForecastError, SlidingArima};
use crate::knowledge::{
    AgentModelEntry, GlobalModel, KnowledgeBase, KnowledgeError, ModelId, Observation, TrainingMetadata,
};
use crate::thermal::{Device, OutdoorProfile, Powers, RoomConfig};

#[derive(Debug, Error)]
pub enum AdaptationError {
    #[error("no stored agent is compatible with the current devices")]
    NoCandidate,
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzerConfig {
    pub comfort_low: f64,
    pub comfort_high: f64,
    /// Consecutive out-of-band observations that count as a reactive novelty.
    pub reactive_window: usize,
    pub forecast_horizon: usize,
    /// Agent steps to wait after a switch or retrain before judging it.
    pub observe_steps: usize,
    /// Share of observed steps that must end in the comfort band.
    pub goal_fraction: f64,
    /// Monitoring ticks between the start of a retrain and its hand-over.
    pub retrain_delay_ticks: u64,
    pub ticks_per_action: u64,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            comfort_low: 18.0,
            comfort_high: 22.0,
            reactive_window: 12,
            forecast_horizon: 3,
            observe_steps: 12,
            goal_fraction: 0.75,
            retrain_delay_ticks: 12,
            ticks_per_action: 3,
        }
    }
}

impl AnalyzerConfig {
    pub fn validate(&self) -> Result<(), AdaptationError> {
        let fail = |m: &str| Err(AdaptationError::InvalidConfig(m.into()));
        if !(self.comfort_low < self.comfort_high) {
            return fail("comfort_low must be below comfort_high");
        }
        if self.reactive_window == 0 || self.forecast_horizon == 0 || self.observe_steps == 0 {
            return fail("reactive_window, forecast_horizon and observe_steps must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.goal_fraction) {
            return fail("goal_fraction must be in [0, 1]");
        }
        if self.ticks_per_action == 0 {
            return fail("ticks_per_action must be at least 1");
        }
        Ok(())
    }

    pub fn in_comfort(&self, t: f64) -> bool {
        self.comfort_low <= t && t <= self.comfort_high
    }
}

/// Device-set change between what the models know and what is plugged in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceDiff {
    pub added: Vec<Device>,
    pub removed: Vec<Device>,
    /// `(registered, current)` pairs sharing an id.
    pub changed: Vec<(Device, Device)>,
}

impl DeviceDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }

    /// Only new devices; existing ones untouched.
    pub fn is_pure_addition(&self) -> bool {
        !self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }
}

impl fmt::Display for DeviceDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for d in &self.added {
            parts.push(format!("added {} {} {:?}", d.kind, d.id, d.levels));
        }
        for d in &self.removed {
            parts.push(format!("removed {}", d.id));
        }
        for (old, new) in &self.changed {
            parts.push(format!("changed {} {:?}->{:?}", old.id, old.levels, new.levels));
        }
        f.write_str(&parts.join("; "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoveltyKind {
    Architectural(DeviceDiff),
    ContextualProactive { forecast: Vec<f64> },
    ContextualReactive { run_length: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Novelty {
    pub kind: NoveltyKind,
    pub detected_at: u64,
}

/// Compares device lists by id.
pub fn detect_architectural(registered: &[Device], current: &[Device], tick: u64) -> Option<Novelty> {
    let mut diff = DeviceDiff::default();
    for c in current {
        match registered.iter().find(|r| r.id == c.id) {
            None => diff.added.push(c.clone()),
            Some(r) if r != c => diff.changed.push((r.clone(), c.clone())),
            Some(_) => {}
        }
    }
    for r in registered {
        if !current.iter().any(|c| c.id == r.id) {
            diff.removed.push(r.clone());
        }
    }
    (!diff.is_empty()).then_some(Novelty { kind: NoveltyKind::Architectural(diff), detected_at: tick })
}

/// Proactive when the farthest forecast point leaves the comfort band;
/// otherwise reactive when every one of the last `reactive_window` indoor
/// readings is outside it. `recent_short` skips the reactive check.
pub fn detect_contextual(
    forecast: Option<&[f64]>,
    recent_t_in: &[f64],
    recent_short: bool,
    cfg: &AnalyzerConfig,
    tick: u64,
) -> Option<Novelty> {
    if let Some(f) = forecast {
        if let Some(&last) = f.get(cfg.forecast_horizon - 1) {
            if !cfg.in_comfort(last) {
                return Some(Novelty { kind: NoveltyKind::ContextualProactive { forecast: f.to_vec() }, detected_at: tick });
            }
        }
    }
    if recent_short || recent_t_in.len() < cfg.reactive_window {
        return None;
    }
    let window = &recent_t_in[recent_t_in.len() - cfg.reactive_window..];
    if window.iter().all(|t| !cfg.in_comfort(*t)) {
        return Some(Novelty {
            kind: NoveltyKind::ContextualReactive { run_length: cfg.reactive_window },
            detected_at: tick,
        });
    }
    None
}

/// Conditions a candidate is replayed under.
#[derive(Debug, Clone)]
pub struct ReplayContext {
    pub room: RoomConfig,
    pub reward: RewardParams,
    pub t_in: f64,
    pub prev_action: usize,
    /// Outdoor temperatures at `spacing_s`, starting now.
    pub outdoor: Vec<f64>,
    pub spacing_s: f64,
    pub steps: usize,
    pub action_dt: f64,
    pub sub_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchOutcome {
    pub winner: ModelId,
    /// `(index, cumulative reward)` per candidate, in candidate order.
    pub scores: Vec<(u32, f64)>,
}

/// Greedy replay of every candidate; the greatest cumulative reward wins
/// and ties go to the lowest index.
pub fn model_switch(candidates: &[&AgentModelEntry], ctx: &ReplayContext) -> Result<SwitchOutcome, AdaptationError> {
    let mut sorted: Vec<&AgentModelEntry> = candidates.to_vec();
    sorted.sort_by_key(|e| e.id.index);
    let mut best: Option<(&AgentModelEntry, f64)> = None;
    let mut scores = Vec::with_capacity(sorted.len());
    for entry in sorted {
        let profile = OutdoorProfile::new(ctx.outdoor.clone(), ctx.spacing_s);
        let mut env = HvacEnv::new(ctx.room.clone(), entry.space.clone(), profile, ctx.reward, ctx.t_in)?
            .with_cadence(ctx.action_dt, ctx.sub_dt);
        let mut prev = if ctx.prev_action < entry.space.len() { ctx.prev_action } else { 0 };
        let mut total = 0.0;
        for _ in 0..ctx.steps {
            let s = env.state();
            let x = make_state_vector(s.t_out, s.t_in, prev, &entry.space)?;
            let a = entry.network.greedy_action(x.as_slice()).map_err(AgentError::from)?;
            total += env.step(a)?.reward;
            prev = a;
        }
        scores.push((entry.id.index, total));
        if best.is_none_or(|(_, b)| total > b) {
            best = Some((entry, total));
        }
    }
    let (winner, _) = best.ok_or(AdaptationError::NoCandidate)?;
    Ok(SwitchOutcome { winner: winner.id.clone(), scores })
}

/// Whether `entry` can be grown into `space`: its devices must be the tail
/// of the new list.
fn expansion_prefix<'a>(entry_space: &ActionSpace, space: &'a ActionSpace) -> Option<&'a [Device]> {
    let old = entry_space.devices();
    let new = space.devices();
    if new.len() < old.len() || new[new.len() - old.len()..] != *old {
        return None;
    }
    Some(&new[..new.len() - old.len()])
}

/// Grows one entry to the action space `space`. Returns `None` when the
/// entry cannot be mapped onto it.
pub fn expand_entry(entry: &AgentModelEntry, space: &ActionSpace) -> Option<AgentModelEntry> {
    let prefix = expansion_prefix(&entry.space, space)?;
    if prefix.is_empty() {
        return Some(entry.clone());
    }
    let n_old = entry.space.len();
    if entry.network.n_actions() != n_old {
        return None;
    }
    let extra = space.len() - n_old;
    Some(AgentModelEntry {
        id: entry.id.clone(),
        network: entry.network.expand(extra, extra),
        space: space.clone(),
        metadata: entry.metadata.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionReport {
    pub expanded: Vec<u32>,
    pub skipped: Vec<(u32, String)>,
    pub space: ActionSpace,
}

/// Places the added devices ahead of the known ones and grows every stored
/// network to the new joint action space.
pub fn architectural_adapt(kb: &mut KnowledgeBase, diff: &DeviceDiff) -> Result<ExpansionReport, AdaptationError> {
    let old_space = ActionSpace::new(kb.devices.clone())?;
    if diff.added.is_empty() {
        return Ok(ExpansionReport { expanded: Vec::new(), skipped: Vec::new(), space: old_space });
    }
    let space = old_space.extended(&diff.added)?;
    let mut expanded = Vec::new();
    let mut skipped = Vec::new();
    for entry in kb.agents_mut() {
        match expand_entry(entry, &space) {
            Some(grown) => {
                *entry = grown;
                expanded.push(entry.id.index);
            }
            None => skipped.push((entry.id.index, format!("devices do not match ({} actions)", entry.network.n_actions()))),
        }
    }
    kb.devices = space.devices().to_vec();
    Ok(ExpansionReport { expanded, skipped, space })
}

/// Global model whose mean is nearest the mean of `recent_outdoor`; ties go
/// to the lowest index.
pub fn select_global<'a>(globals: impl Iterator<Item = &'a GlobalModel>, recent_outdoor: &[f64]) -> Option<&'a GlobalModel> {
    if recent_outdoor.is_empty() {
        return None;
    }
    let target = recent_outdoor.iter().sum::<f64>() / recent_outdoor.len() as f64;
    let mut best: Option<(&GlobalModel, f64)> = None;
    for g in globals {
        let d = (g.mean() - target).abs();
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((g, d));
        }
    }
    best.map(|(g, _)| g)
}

/// Everything a retrain needs, owned so it can move to a worker thread.
#[derive(Debug, Clone)]
pub struct RetrainJob {
    pub id: ModelId,
    pub global_index: u32,
    pub source: EpisodeSource,
    pub cfg: AgentConfig,
    pub seed: u64,
}

impl RetrainJob {
    pub fn new(
        id: ModelId,
        global: &GlobalModel,
        room: RoomConfig,
        space: ActionSpace,
        reward: RewardParams,
        cfg: AgentConfig,
        seed: u64,
    ) -> Self {
        let source = EpisodeSource {
            room,
            space,
            series: global.values().to_vec(),
            spacing_s: crate::knowledge::SERIES_SPACING_S as f64,
            reward,
        };
        Self { id, global_index: global.id.index, source, cfg, seed }
    }

    /// Trains a fresh agent on episodes from the global model.
    pub fn run(self) -> Result<AgentModelEntry, AdaptationError> {
        let (network, report) = agent::train(&self.source, &self.cfg, self.seed)?;
        let metadata = TrainingMetadata::from_rewards(&report.episode_rewards, self.seed, Some(self.global_index));
        Ok(AgentModelEntry::new(self.id, network, self.source.space, metadata)?)
    }
}

/// Synchronous retrain on a global model.
pub fn retrain(job: RetrainJob) -> Result<AgentModelEntry, AdaptationError> {
    job.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Phase {
    Monitoring,
    Observing { remaining: usize, after_retrain: bool },
    Retraining,
    Alarmed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Monitoring => f.write_str("monitoring"),
            Phase::Observing { remaining, .. } => write!(f, "observing({remaining})"),
            Phase::Retraining => f.write_str("retraining"),
            Phase::Alarmed => f.write_str("alarmed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Expansion,
    ExpansionSkipped,
    ArchitecturalUnsupported,
    ContextualProactive,
    ContextualReactive,
    ModelSwitch,
    SwitchFailure,
    GoalMet,
    GoalFailure,
    Alarm,
    RetrainStart,
    RetrainComplete,
    RetrainFailed,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Expansion => "expansion",
            EventKind::ExpansionSkipped => "expansion-skipped",
            EventKind::ArchitecturalUnsupported => "architectural-unsupported",
            EventKind::ContextualProactive => "contextual-proactive",
            EventKind::ContextualReactive => "contextual-reactive",
            EventKind::ModelSwitch => "model-switch",
            EventKind::SwitchFailure => "switch-failure",
            EventKind::GoalMet => "goal-met",
            EventKind::GoalFailure => "goal-failure",
            EventKind::Alarm => "alarm",
            EventKind::RetrainStart => "retrain-start",
            EventKind::RetrainComplete => "retrain-complete",
            EventKind::RetrainFailed => "retrain-failed",
            EventKind::Error => "error",
        }
    }

    pub fn is_contextual(self) -> bool {
        matches!(self, EventKind::ContextualProactive | EventKind::ContextualReactive)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub tick: u64,
    /// Phase after the event was handled.
    pub phase: Phase,
    pub kind: EventKind,
    pub detail: String,
}

pub fn write_events_csv(events: &[Event], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tick", "phase", "event_kind", "detail"])?;
    for e in events {
        w.write_record([e.tick.to_string(), e.phase.to_string(), e.kind.to_string(), e.detail.clone()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationState {
    pub phase: Phase,
    pub active: ModelId,
    pub alarm_log: Vec<(u64, String)>,
}

/// Settings for a [`MapeLoop`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub analyzer: AnalyzerConfig,
    pub arima: ArimaConfig,
    /// Training settings used when retraining.
    pub retrain: AgentConfig,
    pub reward: RewardParams,
    pub seed: u64,
    /// Seconds between monitoring ticks.
    pub tick_s: f64,
    pub alarm_to_stderr: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            analyzer: AnalyzerConfig::default(),
            arima: ArimaConfig::default(),
            retrain: AgentConfig::default(),
            reward: RewardParams::default(),
            seed: 0,
            tick_s: 300.0,
            alarm_to_stderr: true,
        }
    }
}

/// One monitoring sample from the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub t_in: f64,
    pub t_out: f64,
    /// Devices currently plugged in.
    pub devices: Vec<Device>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    /// Set on ticks where the agent chose a new action.
    pub action: Option<usize>,
    pub events: Vec<Event>,
}

struct PendingRetrain {
    handle: JoinHandle<Result<AgentModelEntry, AdaptationError>>,
    ready_at: u64,
    id: ModelId,
}

pub struct MapeLoop {
    kb: KnowledgeBase,
    cfg: LoopConfig,
    state: AdaptationState,
    indoor_model: SlidingArima,
    outdoor_model: SlidingArima,
    tick: u64,
    action: usize,
    pending: Option<PendingRetrain>,
    observed: Vec<bool>,
    observe_from: u64,
    monitoring_since: u64,
    alarm_raised: bool,
    retrains: u32,
    events: Vec<Event>,
}

impl MapeLoop {
    /// Starts monitoring with agent `active` in control.
    pub fn new(kb: KnowledgeBase, active: u32, cfg: LoopConfig) -> Result<Self, AdaptationError> {
        cfg.analyzer.validate()?;
        cfg.reward.validate()?;
        let arima = ArimaConfig { horizon: cfg.analyzer.forecast_horizon, ..cfg.arima.clone() };
        let space = ActionSpace::new(kb.devices.clone())?;
        let entry = kb.agent(active)?;
        if entry.space != space {
            return Err(AdaptationError::InvalidConfig(format!(
                "{} was built for different devices than the room has",
                entry.id
            )));
        }
        let state = AdaptationState { phase: Phase::Monitoring, active: entry.id.clone(), alarm_log: Vec::new() };
        Ok(Self {
            indoor_model: SlidingArima::new(arima.clone())?,
            outdoor_model: SlidingArima::new(arima)?,
            kb,
            cfg,
            state,
            tick: 0,
            action: 0,
            pending: None,
            observed: Vec::new(),
            observe_from: 0,
            monitoring_since: 0,
            alarm_raised: false,
            retrains: 0,
            events: Vec::new(),
        })
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn into_knowledge(mut self) -> KnowledgeBase {
        if let Some(p) = self.pending.take() {
            let _ = p.handle.join();
        }
        self.kb
    }

    pub fn state(&self) -> &AdaptationState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn active_entry(&self) -> &AgentModelEntry {
        self.kb.agent(self.state.active.index).expect("active model is registered")
    }

    /// Joint action currently applied.
    pub fn current_action(&self) -> usize {
        self.action
    }

    /// Actuator output of the current action.
    pub fn current_powers(&self) -> Powers {
        self.active_entry().space.powers(self.action).unwrap_or_default()
    }

    pub fn retrain_count(&self) -> u32 {
        self.retrains
    }

    fn emit(&mut self, out: &mut Vec<Event>, kind: EventKind, detail: String) {
        let e = Event { tick: self.tick, phase: self.state.phase, kind, detail };
        log::info!("tick {} {} [{}] {}", e.tick, e.kind, e.phase, e.detail);
        out.push(e.clone());
        self.events.push(e);
    }

    fn raise_alarm(&mut self, out: &mut Vec<Event>, reason: String) {
        if self.alarm_raised {
            return;
        }
        self.alarm_raised = true;
        if self.cfg.alarm_to_stderr {
            eprintln!("ALARM tick {}: {reason}", self.tick);
        }
        self.state.alarm_log.push((self.tick, reason.clone()));
        self.emit(out, EventKind::Alarm, reason);
    }

    fn enter_monitoring(&mut self) {
        self.state.phase = Phase::Monitoring;
        self.monitoring_since = self.tick + 1;
        self.alarm_raised = false;
    }

    /// Processes one monitoring sample.
    pub fn tick(&mut self, reading: &Reading) -> TickReport {
        let mut out = Vec::new();
        if let Err(e) = self.tick_inner(reading, &mut out) {
            self.emit(&mut out, EventKind::Error, e.to_string());
        }
        let acted = self.tick % self.cfg.analyzer.ticks_per_action == 0;
        let report = TickReport { tick: self.tick, action: acted.then_some(self.action), events: out };
        self.tick += 1;
        report
    }

    fn tick_inner(&mut self, reading: &Reading, out: &mut Vec<Event>) -> Result<(), AdaptationError> {
        // Monitor.
        self.kb.log.append(Observation {
            timestamp: self.tick as f64 * self.cfg.tick_s,
            t_in: reading.t_in,
            t_out: reading.t_out,
            action_index: self.action,
        })?;
        self.indoor_model.refit_on_arrival(reading.t_in)?;
        self.outdoor_model.refit_on_arrival(reading.t_out)?;

        self.collect_retrain(out)?;

        // Analyse and plan.
        let architectural = detect_architectural(&self.kb.devices, &reading.devices, self.tick);
        if let Some(Novelty { kind: NoveltyKind::Architectural(diff), .. }) = architectural {
            self.handle_architectural(&diff, out)?;
        } else if self.state.phase == Phase::Monitoring {
            let forecast = self.indoor_model.forecast();
            let (recent, short) = self.kb.log.recent(self.cfg.analyzer.reactive_window);
            let since = self.monitoring_since as f64 * self.cfg.tick_s;
            let fresh = recent.first().is_some_and(|o| o.timestamp >= since);
            let t_in: Vec<f64> = recent.iter().map(|o| o.t_in).collect();
            if let Some(n) = detect_contextual(forecast.as_deref(), &t_in, short || !fresh, &self.cfg.analyzer, self.tick) {
                self.handle_contextual(n, reading, out)?;
            }
        }

        // Execute.
        if self.tick % self.cfg.analyzer.ticks_per_action == 0 {
            self.judge_step(reading, out)?;
            let entry = self.active_entry();
            let x = make_state_vector(reading.t_out, reading.t_in, self.action, &entry.space)?;
            self.action = entry.network.greedy_action(x.as_slice()).map_err(AgentError::from)?;
        }
        Ok(())
    }

    fn handle_architectural(&mut self, diff: &DeviceDiff, out: &mut Vec<Event>) -> Result<(), AdaptationError> {
        if !diff.is_pure_addition() {
            self.emit(out, EventKind::ArchitecturalUnsupported, diff.to_string());
            self.state.phase = Phase::Alarmed;
            self.raise_alarm(out, format!("device change cannot be absorbed by expansion: {diff}"));
            // Stop re-reporting the same change every tick.
            self.kb.devices = self.kb.devices.iter().filter(|d| !diff.removed.contains(d)).cloned().collect();
            for (old, new) in &diff.changed {
                if let Some(d) = self.kb.devices.iter_mut().find(|d| d.id == old.id) {
                    *d = new.clone();
                }
            }
            return Ok(());
        }
        let before = self.active_entry().space.len();
        let report = architectural_adapt(&mut self.kb, diff)?;
        self.emit(
            out,
            EventKind::Expansion,
            format!("{diff}; {before}->{} actions; agents {:?}", report.space.len(), report.expanded),
        );
        for (index, why) in &report.skipped {
            self.emit(out, EventKind::ExpansionSkipped, format!("agent {index}: {why}"));
        }
        if !report.expanded.contains(&self.state.active.index) {
            return Err(AdaptationError::NoCandidate);
        }
        Ok(())
    }

    fn compatible_candidates(&self) -> Vec<&AgentModelEntry> {
        let devices = &self.kb.devices;
        self.kb.agents().filter(|e| e.space.devices() == devices.as_slice()).collect()
    }

    fn replay_context(&self, reading: &Reading) -> ReplayContext {
        let t = self.cfg.analyzer.observe_steps;
        let ticks = t * self.cfg.analyzer.ticks_per_action as usize;
        let mut outdoor = self.outdoor_model.forecast().unwrap_or_default();
        let keep = ticks.saturating_sub(outdoor.len()).max(1);
        let (recent, _) = self.kb.log.recent(keep);
        let mut series: Vec<f64> = recent.iter().map(|o| o.t_out).collect();
        series.append(&mut outdoor);
        ReplayContext {
            room: self.kb.room.clone(),
            reward: self.cfg.reward,
            t_in: reading.t_in,
            prev_action: self.action,
            outdoor: series,
            spacing_s: self.cfg.tick_s,
            steps: t,
            action_dt: self.cfg.tick_s * self.cfg.analyzer.ticks_per_action as f64,
            sub_dt: self.cfg.tick_s,
        }
    }

    fn handle_contextual(&mut self, novelty: Novelty, reading: &Reading, out: &mut Vec<Event>) -> Result<(), AdaptationError> {
        let (kind, detail) = match &novelty.kind {
            NoveltyKind::ContextualProactive { forecast } => {
                (EventKind::ContextualProactive, format!("forecast {forecast:.2?} leaves comfort band"))
            }
            NoveltyKind::ContextualReactive { run_length } => {
                (EventKind::ContextualReactive, format!("{run_length} consecutive readings outside comfort band"))
            }
            NoveltyKind::Architectural(_) => unreachable!("handled separately"),
        };
        self.emit(out, kind, detail);
        let ctx = self.replay_context(reading);
        match model_switch(&self.compatible_candidates(), &ctx) {
            Ok(outcome) => {
                let from = self.state.active.index;
                self.state.active = outcome.winner.clone();
                self.state.phase = Phase::Observing { remaining: self.cfg.analyzer.observe_steps, after_retrain: false };
                self.observed.clear();
                self.observe_from = self.tick;
                let scores: Vec<String> = outcome.scores.iter().map(|(i, s)| format!("{i}:{s:.1}")).collect();
                self.emit(
                    out,
                    EventKind::ModelSwitch,
                    format!("agent {from} -> {} (replay {})", outcome.winner.index, scores.join(" ")),
                );
            }
            Err(AdaptationError::NoCandidate) => {
                self.emit(out, EventKind::SwitchFailure, "no compatible agent to switch to".into());
                self.escalate(out)?;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Counts one agent step while observing and judges the goal at the end.
    fn judge_step(&mut self, reading: &Reading, out: &mut Vec<Event>) -> Result<(), AdaptationError> {
        let Phase::Observing { remaining, after_retrain } = self.state.phase else {
            return Ok(());
        };
        // The step that started the observation is not counted.
        if self.tick == self.observe_from {
            return Ok(());
        }
        self.observed.push(self.cfg.analyzer.in_comfort(reading.t_in));
        let remaining = remaining - 1;
        if remaining > 0 {
            self.state.phase = Phase::Observing { remaining, after_retrain };
            return Ok(());
        }
        let met = self.observed.iter().filter(|b| **b).count();
        let fraction = met as f64 / self.observed.len() as f64;
        let summary = format!("{met}/{} steps in comfort band ({:.2})", self.observed.len(), fraction);
        if fraction >= self.cfg.analyzer.goal_fraction {
            self.enter_monitoring();
            self.emit(out, EventKind::GoalMet, summary);
        } else if after_retrain {
            self.enter_monitoring();
            self.emit(out, EventKind::GoalFailure, format!("{summary}; retrained agent also short, resuming monitoring"));
        } else {
            self.emit(out, EventKind::GoalFailure, summary);
            self.emit(out, EventKind::SwitchFailure, format!("agent {} did not restore the goal", self.state.active.index));
            self.escalate(out)?;
        }
        Ok(())
    }

    /// Alarm plus retrain on the best-matching global model.
    fn escalate(&mut self, out: &mut Vec<Event>) -> Result<(), AdaptationError> {
        let recent: Vec<f64> = self.outdoor_model.window();
        let Some(global) = select_global(self.kb.globals(), &recent).cloned() else {
            self.state.phase = Phase::Alarmed;
            self.raise_alarm(out, "goal unmet and no global model to retrain on".into());
            return Ok(());
        };
        self.raise_alarm(out, format!("goal unmet; retraining on {}", global.id));
        let id = ModelId::agent(self.kb.next_agent_index(), format!("retrained-{}", global.season));
        let seed = self.cfg.seed.wrapping_add(1 + self.retrains as u64);
        let job = RetrainJob::new(
            id.clone(),
            &global,
            self.kb.room.clone(),
            ActionSpace::new(self.kb.devices.clone())?,
            self.cfg.reward,
            self.cfg.retrain.clone(),
            seed,
        );
        let detail = format!("{} on {} ({} episodes, seed {seed})", id, global.id, self.cfg.retrain.episodes);
        self.retrains += 1;
        self.pending = Some(PendingRetrain {
            handle: std::thread::spawn(move || job.run()),
            ready_at: self.tick + self.cfg.analyzer.retrain_delay_ticks,
            id,
        });
        self.state.phase = Phase::Retraining;
        self.emit(out, EventKind::RetrainStart, detail);
        Ok(())
    }

    fn collect_retrain(&mut self, out: &mut Vec<Event>) -> Result<(), AdaptationError> {
        if !self.pending.as_ref().is_some_and(|p| self.tick >= p.ready_at) {
            return Ok(());
        }
        let pending = self.pending.take().expect("checked above");
        let result = pending.handle.join().unwrap_or_else(|_| Err(AdaptationError::InvalidConfig("retrain worker panicked".into())));
        let entry = match result {
            Ok(entry) => entry,
            Err(e) => {
                self.state.phase = Phase::Alarmed;
                self.emit(out, EventKind::RetrainFailed, format!("{}: {e}", pending.id));
                self.raise_alarm(out, format!("retraining failed: {e}"));
                return Ok(());
            }
        };
        // Devices may have been plugged in while training ran.
        let space = ActionSpace::new(self.kb.devices.clone())?;
        let Some(entry) = expand_entry(&entry, &space) else {
            self.state.phase = Phase::Alarmed;
            self.emit(out, EventKind::RetrainFailed, format!("{} no longer matches the devices", pending.id));
            return Ok(());
        };
        let trained = entry.metadata.trained;
        let id = entry.id.clone();
        self.kb.register_agent(entry)?;
        self.state.active = id.clone();
        self.action = 0;
        self.observed.clear();
        self.observe_from = self.tick;
        self.state.phase = Phase::Observing { remaining: self.cfg.analyzer.observe_steps, after_retrain: true };
        let note = if trained { "" } else { " (untrained)" };
        self.emit(out, EventKind::RetrainComplete, format!("{id} now active{note}"));
        Ok(())
    }
}
