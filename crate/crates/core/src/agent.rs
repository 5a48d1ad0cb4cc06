//! Real-time Q-learning agent: joint action space, state encoding, zoned
//! reward, experience replay and the episodic training loop.

use std::io::Write;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{self, argmax, DuelingNetwork, NeuralError, OptimizerState};
use crate::thermal::{self, Device, DeviceKind, OutdoorProfile, Powers, RoomConfig, SimState, ThermalError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("action space needs at least one device")]
    EmptyDevices,
    #[error("action index {index} out of range for {n_actions} actions")]
    ActionIndex { index: usize, n_actions: usize },
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at episode {episode}, step {step}")]
    NonFiniteLoss { episode: usize, step: usize },
    #[error("state vector has width {got}, network expects {expected}")]
    StateWidth { expected: usize, got: usize },
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Cartesian product of device levels. The first device is the most
/// significant digit of the joint index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    devices: Vec<Device>,
}

impl ActionSpace {
    pub fn new(devices: Vec<Device>) -> Result<Self, AgentError> {
        if devices.is_empty() {
            return Err(AgentError::EmptyDevices);
        }
        for d in &devices {
            d.validate()?;
        }
        Ok(Self { devices })
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn len(&self) -> usize {
        self.devices.iter().map(|d| d.levels.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check(&self, index: usize) -> Result<(), AgentError> {
        if index >= self.len() {
            return Err(AgentError::ActionIndex { index, n_actions: self.len() });
        }
        Ok(())
    }

    /// Per-device level indices of a joint action.
    pub fn decode(&self, index: usize) -> Result<Vec<usize>, AgentError> {
        self.check(index)?;
        let mut rest = index;
        let mut levels = vec![0; self.devices.len()];
        for (slot, d) in levels.iter_mut().zip(&self.devices).rev() {
            *slot = rest % d.levels.len();
            rest /= d.levels.len();
        }
        Ok(levels)
    }

    /// Joint index of per-device level indices.
    pub fn index_of(&self, levels: &[usize]) -> Result<usize, AgentError> {
        if levels.len() != self.devices.len() {
            return Err(AgentError::InvalidConfig(format!(
                "expected {} level indices, got {}",
                self.devices.len(),
                levels.len()
            )));
        }
        let mut index = 0;
        for (&l, d) in levels.iter().zip(&self.devices) {
            if l >= d.levels.len() {
                return Err(AgentError::ActionIndex { index: l, n_actions: d.levels.len() });
            }
            index = index * d.levels.len() + l;
        }
        Ok(index)
    }

    pub fn encode(&self, index: usize) -> Result<Vec<f64>, AgentError> {
        self.check(index)?;
        let mut v = vec![0.0; self.len()];
        v[index] = 1.0;
        Ok(v)
    }

    /// Inverse of [`encode`](Self::encode): the position of the single 1.
    pub fn decode_one_hot(&self, one_hot: &[f64]) -> Option<usize> {
        if one_hot.len() != self.len() {
            return None;
        }
        let ones: Vec<usize> = one_hot.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        let zeros = one_hot.iter().filter(|v| **v == 0.0).count();
        (ones.len() == 1 && zeros == one_hot.len() - 1).then(|| ones[0])
    }

    /// Actuator output of a joint action. Heaters and coolers add up; any
    /// open window opens the room.
    pub fn powers(&self, index: usize) -> Result<Powers, AgentError> {
        let mut p = Powers::off();
        for (d, l) in self.devices.iter().zip(self.decode(index)?) {
            let level = d.levels[l];
            match d.kind {
                DeviceKind::Heater => p.heater_w += level,
                DeviceKind::Cooler => p.cooler_w += level,
                DeviceKind::Window => p.window_open |= level == thermal::WINDOW_OPEN,
            }
        }
        Ok(p)
    }

    pub fn describe(&self, index: usize) -> Result<String, AgentError> {
        let parts: Vec<String> = self
            .devices
            .iter()
            .zip(self.decode(index)?)
            .map(|(d, l)| format!("{}={}", d.id, d.level_label(l)))
            .collect();
        Ok(parts.join(" "))
    }

    /// Space with `added` placed ahead of the existing devices. Each old
    /// action `i` keeps index `i` (the new devices at their first level) and
    /// the new combinations follow.
    pub fn extended(&self, added: &[Device]) -> Result<Self, AgentError> {
        let mut devices = added.to_vec();
        devices.extend(self.devices.iter().cloned());
        Self::new(devices)
    }
}

/// Convenience wrapper for [`ActionSpace::new`].
pub fn build_action_space(devices: Vec<Device>) -> Result<ActionSpace, AgentError> {
    ActionSpace::new(devices)
}

/// `(t_out, t_in, one-hot previous action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Observation features ahead of the one-hot block.
pub const OBSERVATION_DIM: usize = 2;

pub fn make_state_vector(t_out: f64, t_in: f64, prev_action: usize, space: &ActionSpace) -> Result<StateVector, AgentError> {
    let mut v = Vec::with_capacity(OBSERVATION_DIM + space.len());
    v.push(t_out);
    v.push(t_in);
    v.extend(space.encode(prev_action)?);
    Ok(StateVector(v))
}

/// Comfort-zone reward parameters. `comfort_band` is the half-width of the
/// zero-penalty band; `delta` bounds the quadratic zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub setpoint: f64,
    pub comfort_band: f64,
    pub delta: f64,
    pub beta: f64,
    pub rho: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { setpoint: 20.0, comfort_band: 2.0, delta: 4.0, beta: 0.05, rho: 1.0 }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let finite = [self.setpoint, self.comfort_band, self.delta, self.beta, self.rho].iter().all(|v| v.is_finite());
        if !finite || !(0.0 < self.comfort_band && self.comfort_band < self.delta) {
            return Err(AgentError::InvalidConfig(format!(
                "reward needs 0 < comfort_band < delta, got {} and {}",
                self.comfort_band, self.delta
            )));
        }
        Ok(())
    }

    pub fn in_comfort(&self, t_in: f64) -> bool {
        (t_in - self.setpoint).abs() <= self.comfort_band
    }
}

/// Zero inside the comfort band, quadratic deviation penalty up to `delta`,
/// cubic beyond it. Energy is charged only outside the comfort band.
pub fn reward(t_in: f64, energy_w: f64, p: &RewardParams) -> f64 {
    let dev = (p.setpoint - t_in).abs();
    if dev <= p.comfort_band {
        0.0
    } else if dev <= p.delta {
        -p.beta * energy_w - p.rho * dev * dev
    } else {
        -p.beta * energy_w - p.rho * dev.powi(3)
    }
}

/// ε-greedy choice. Exploration is uniform over every output; exploitation
/// takes the arg-max over trained actions with ties to the lowest index.
pub fn select_action(net: &DuelingNetwork, x: &StateVector, epsilon: f64, rng: &mut impl Rng) -> Result<usize, AgentError> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.n_actions()));
    }
    Ok(net.greedy_action(x.as_slice())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: StateVector,
    pub action: usize,
    pub reward: f64,
    pub x_next: StateVector,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { items: Vec::new(), capacity, next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` distinct transitions drawn uniformly.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }

    /// Contents from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub memory_size: usize,
    pub batch_size: usize,
    pub eps_start: f64,
    pub eps_decay: f64,
    pub eps_floor: f64,
    pub tau: f64,
    pub episodes: usize,
    pub gamma: f64,
    pub steps_per_episode: usize,
    pub action_dt: f64,
    pub sub_dt: f64,
    pub hidden_width: usize,
    pub learning_rate: f64,
    /// Range for the indoor temperature at the start of each episode.
    pub start_t_in: (f64, f64),
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            memory_size: 1_000_000,
            batch_size: 256,
            eps_start: 1.0,
            eps_decay: 0.0002,
            eps_floor: 0.01,
            tau: 0.005,
            episodes: 600,
            // The room settles within one or two agent steps.
            gamma: 0.5,
            steps_per_episode: 96,
            action_dt: 900.0,
            sub_dt: 300.0,
            hidden_width: 256,
            learning_rate: 1e-3,
            start_t_in: (15.0, 25.0),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |m: String| Err(AgentError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.batch_size == 0 || self.batch_size > self.memory_size {
            return fail(format!("batch_size {} must be in 1..=memory_size ({})", self.batch_size, self.memory_size));
        }
        if !(0.0..1.0).contains(&self.eps_floor) {
            return fail(format!("eps_floor {} outside [0, 1)", self.eps_floor));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(self.eps_decay >= 0.0) {
            return fail("eps_start must be in [0, 1] and eps_decay >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.steps_per_episode == 0 || self.hidden_width == 0 {
            return fail("steps_per_episode and hidden_width must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        let (lo, hi) = self.start_t_in;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return fail("start_t_in must be a finite (low, high) pair".into());
        }
        let ratio = self.action_dt / self.sub_dt;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return fail(format!("action_dt {} is not a multiple of sub_dt {}", self.action_dt, self.sub_dt));
        }
        Ok(())
    }

    /// Exploration rate after `steps` training steps.
    pub fn epsilon_at(&self, steps: u64) -> f64 {
        (self.eps_start - steps as f64 * self.eps_decay).max(self.eps_floor)
    }

    pub fn sub_steps(&self) -> usize {
        (self.action_dt / self.sub_dt).round() as usize
    }
}

/// Result of one agent step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: SimState,
    pub reward: f64,
    pub powers: Powers,
    /// Room state after each sub-step, for the monitor.
    pub samples: Vec<SimState>,
    /// True once the outdoor series has no data past this step.
    pub terminal: bool,
}

/// Room simulator behind a gym-style interface.
#[derive(Debug, Clone)]
pub struct HvacEnv {
    room: RoomConfig,
    space: ActionSpace,
    outdoor: OutdoorProfile,
    reward: RewardParams,
    action_dt: f64,
    sub_dt: f64,
    state: SimState,
    prev_action: usize,
}

impl HvacEnv {
    /// Starts at clock 0 with `t_out` taken from the profile.
    pub fn new(
        room: RoomConfig,
        space: ActionSpace,
        outdoor: OutdoorProfile,
        reward: RewardParams,
        t_in: f64,
    ) -> Result<Self, AgentError> {
        room.validate()?;
        reward.validate()?;
        use thermal::OutdoorTemperature;
        let state = SimState::new(t_in, outdoor.at(0.0));
        Ok(Self { room, space, outdoor, reward, action_dt: 900.0, sub_dt: 300.0, state, prev_action: 0 })
    }

    pub fn with_cadence(mut self, action_dt: f64, sub_dt: f64) -> Self {
        self.action_dt = action_dt;
        self.sub_dt = sub_dt;
        self
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.reward
    }

    pub fn prev_action(&self) -> usize {
        self.prev_action
    }

    pub fn observation(&self) -> StateVector {
        make_state_vector(self.state.t_out, self.state.t_in, self.prev_action, &self.space).expect("valid previous action")
    }

    pub fn is_exhausted(&self) -> bool {
        self.state.clock + 1e-9 >= self.outdoor.end_clock()
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, AgentError> {
        let powers = self.space.powers(action)?;
        let samples =
            thermal::simulate_action_interval(&self.state, &powers, &self.room, &self.outdoor, self.action_dt, self.sub_dt)?;
        self.state = *samples.last().expect("at least one sub-step");
        self.prev_action = action;
        let r = reward(self.state.t_in, powers.energy_w(), &self.reward);
        Ok(StepOutcome { state: self.state, reward: r, powers, samples, terminal: self.is_exhausted() })
    }
}

/// Episode generator over an outdoor series sampled every `spacing_s`.
#[derive(Debug, Clone)]
pub struct EpisodeSource {
    pub room: RoomConfig,
    pub space: ActionSpace,
    pub series: Vec<f64>,
    pub spacing_s: f64,
    pub reward: RewardParams,
}

impl EpisodeSource {
    /// Fresh environment at a random offset into the series with a random
    /// starting indoor temperature.
    pub fn sample_env(&self, cfg: &AgentConfig, rng: &mut impl Rng) -> Result<HvacEnv, AgentError> {
        let needed = ((cfg.steps_per_episode as f64 * cfg.action_dt) / self.spacing_s).ceil() as usize + 1;
        let max_offset = self.series.len().saturating_sub(needed);
        let offset = rng.random_range(0..=max_offset);
        let (lo, hi) = cfg.start_t_in;
        let t_in = if lo < hi { rng.random_range(lo..hi) } else { lo };
        self.env_at(offset, t_in, cfg)
    }

    pub fn env_at(&self, offset: usize, t_in: f64, cfg: &AgentConfig) -> Result<HvacEnv, AgentError> {
        if self.series.is_empty() {
            return Err(AgentError::InvalidConfig("outdoor series is empty".into()));
        }
        let profile = OutdoorProfile::new(self.series.clone(), self.spacing_s).starting_at(offset);
        Ok(HvacEnv::new(self.room.clone(), self.space.clone(), profile, self.reward, t_in)?
            .with_cadence(cfg.action_dt, cfg.sub_dt))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub episode_rewards: Vec<f64>,
    pub steps: u64,
    pub final_epsilon: f64,
}

/// Trains a fresh network on episodes drawn from `source`.
pub fn train(source: &EpisodeSource, cfg: &AgentConfig, seed: u64) -> Result<(DuelingNetwork, TrainingReport), AgentError> {
    let net = DuelingNetwork::new(OBSERVATION_DIM, source.space.len(), cfg.hidden_width, seed);
    train_from(net, |rng| source.sample_env(cfg, rng), cfg, seed)
}

/// Continues training `net` on environments produced by `env_factory`.
pub fn train_from<F>(
    mut net: DuelingNetwork,
    mut env_factory: F,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<(DuelingNetwork, TrainingReport), AgentError>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<HvacEnv, AgentError>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a6e7);
    let mut target = net.clone();
    let mut opt = OptimizerState::adam(&net);
    opt.learning_rate = cfg.learning_rate;
    let mut memory = ReplayBuffer::new(cfg.memory_size);
    let mut episode_rewards = Vec::with_capacity(cfg.episodes);
    let mut steps: u64 = 0;
    let width = net.input_dim();

    for episode in 0..cfg.episodes {
        let mut env = env_factory(&mut rng)?;
        if env.space().len() != net.n_actions() {
            return Err(AgentError::StateWidth { expected: width, got: OBSERVATION_DIM + env.space().len() });
        }
        let mut x = env.observation();
        let mut total = 0.0;
        for step in 0..cfg.steps_per_episode {
            let eps = cfg.epsilon_at(steps);
            let action = select_action(&net, &x, eps, &mut rng)?;
            let outcome = env.step(action)?;
            let x_next = env.observation();
            total += outcome.reward;
            memory.push(Transition {
                x: x.clone(),
                action,
                reward: outcome.reward,
                x_next: x_next.clone(),
                terminal: outcome.terminal,
            });
            steps += 1;

            if memory.len() >= cfg.batch_size {
                let batch = memory.sample(cfg.batch_size, &mut rng);
                let loss = learn_from_batch(&mut net, &target, &mut opt, &batch, cfg.gamma)?;
                if !loss.is_finite() {
                    return Err(AgentError::NonFiniteLoss { episode, step });
                }
                neural::soft_update(&net, &mut target, cfg.tau)?;
            }
            x = x_next;
            if outcome.terminal {
                break;
            }
        }
        log::debug!("episode {episode}: reward {total:.2}, epsilon {:.3}", cfg.epsilon_at(steps));
        episode_rewards.push(total);
    }
    Ok((net, TrainingReport { episode_rewards, steps, final_epsilon: cfg.epsilon_at(steps) }))
}

/// TD targets `r + gamma * max_a' Q_target(x', a')`, or `r` when terminal.
pub fn td_targets(target: &DuelingNetwork, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>, AgentError> {
    let next = stack(batch.iter().map(|t| &t.x_next), target.input_dim())?;
    let q_next = target.forward_batch(&next)?;
    let c = target.centered_actions();
    Ok(batch
        .iter()
        .zip(q_next.rows())
        .map(|(t, q)| {
            if t.terminal {
                t.reward
            } else {
                let q = q.as_slice().expect("row-major");
                t.reward + gamma * q[argmax(&q[..c])]
            }
        })
        .collect())
}

fn learn_from_batch(
    net: &mut DuelingNetwork,
    target: &DuelingNetwork,
    opt: &mut OptimizerState,
    batch: &[&Transition],
    gamma: f64,
) -> Result<f64, AgentError> {
    let y = td_targets(target, batch, gamma)?;
    let x = stack(batch.iter().map(|t| &t.x), net.input_dim())?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, grads) = net.td_backward_batch(&x, &actions, &y)?;
    neural::optimizer_step(net, &grads, opt)?;
    Ok(loss)
}

fn stack<'a>(rows: impl Iterator<Item = &'a StateVector>, width: usize) -> Result<Array2<f64>, AgentError> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return Err(AgentError::StateWidth { expected: width, got: r.len() });
        }
        data.extend_from_slice(r.as_slice());
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, width), data).expect("shape"))
}

/// Anything that picks an action from a state.
pub trait Policy {
    fn act(&mut self, x: &StateVector) -> Result<usize, AgentError>;
}

/// Deterministic greedy policy of a network.
pub struct Greedy<'a>(pub &'a DuelingNetwork);

impl Policy for Greedy<'_> {
    fn act(&mut self, x: &StateVector) -> Result<usize, AgentError> {
        Ok(self.0.greedy_action(x.as_slice())?)
    }
}

/// Always the same action.
pub struct Fixed(pub usize);

impl Policy for Fixed {
    fn act(&mut self, _x: &StateVector) -> Result<usize, AgentError> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub clock_s: f64,
    pub t_out: f64,
    pub t_in: f64,
    pub action_index: usize,
    pub heater_w: f64,
    pub cooler_w: f64,
    pub window: u8,
    pub reward: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub cumulative_reward: f64,
    pub occupancy: f64,
    pub trace: Vec<TraceRow>,
}

/// Rolls `policy` out for up to `n_steps` steps. Occupancy is the share of
/// steps that end inside the comfort band.
pub fn evaluate(policy: &mut impl Policy, env: &mut HvacEnv, n_steps: usize) -> Result<Evaluation, AgentError> {
    let mut trace = Vec::with_capacity(n_steps);
    let mut total = 0.0;
    let mut comfortable = 0;
    for step in 0..n_steps {
        let x = env.observation();
        let action = policy.act(&x)?;
        let o = env.step(action)?;
        total += o.reward;
        if env.reward_params().in_comfort(o.state.t_in) {
            comfortable += 1;
        }
        trace.push(TraceRow {
            step,
            clock_s: o.state.clock,
            t_out: o.state.t_out,
            t_in: o.state.t_in,
            action_index: action,
            heater_w: o.powers.heater_w,
            cooler_w: o.powers.cooler_w,
            window: o.powers.window_open as u8,
            reward: o.reward,
            epsilon: 0.0,
        });
        if o.terminal {
            break;
        }
    }
    let occupancy = if trace.is_empty() { 0.0 } else { comfortable as f64 / trace.len() as f64 };
    Ok(Evaluation { cumulative_reward: total, occupancy, trace })
}

/// Greedy rollout of a network.
pub fn evaluate_network(net: &DuelingNetwork, env: &mut HvacEnv, n_steps: usize) -> Result<Evaluation, AgentError> {
    evaluate(&mut Greedy(net), env, n_steps)
}

pub fn write_trace_csv(rows: &[TraceRow], out: impl Write) -> Result<(), AgentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reward_curve_csv(rewards: &[f64], out: impl Write) -> Result<(), AgentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "cumulative_reward"]).map_err(csv_io)?;
    for (i, r) in rewards.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string()]).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}
