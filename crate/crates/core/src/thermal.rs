//! Single-room thermal simulator.
//!
//! The room is a lumped air volume exchanging heat with the outside through
//! the four vertical walls, the windows and air infiltration. Heaters add
//! power, coolers remove it, and an open window raises the infiltration rate.
//! Integration is explicit Euler with one sub-step per call.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by room or device configuration.
#[derive(Debug, Error, PartialEq)]
pub enum ThermalError {
    #[error("invalid room configuration: {0}")]
    InvalidRoom(String),
    #[error("invalid device '{id}': {reason}")]
    InvalidDevice { id: String, reason: String },
    #[error("action interval {action_dt}s is not a whole multiple of the sub-step {sub_dt}s")]
    IndivisibleCadence { action_dt: f64, sub_dt: f64 },
    #[error("non-finite temperature produced by the simulator")]
    NonFinite,
    #[error("failed to read configuration file: {0}")]
    Io(String),
    #[error("failed to parse configuration file: {0}")]
    Parse(String),
}

/// Room geometry and envelope parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub depth_m: f64,
    /// Wall thermal resistance, m²·K/W.
    pub wall_r: f64,
    /// Window thermal resistance, m²·K/W.
    pub window_r: f64,
    /// Air changes per hour with all windows closed.
    pub ach: f64,
    /// Area of a single window, m².
    pub window_area_m2: f64,
    pub n_windows: usize,
    /// kg/m³
    pub air_density: f64,
    /// J/(kg·K)
    pub air_specific_heat: f64,
    /// Air changes per hour while a window is open.
    pub ach_window_open: f64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            width_m: 5.0,
            height_m: 3.0,
            depth_m: 3.0,
            wall_r: 3.6,
            window_r: 0.176,
            ach: 1.7,
            window_area_m2: 1.0,
            n_windows: 1,
            air_density: 1.225,
            air_specific_heat: 1005.0,
            ach_window_open: 8.0,
        }
    }
}

impl RoomConfig {
    pub fn volume_m3(&self) -> f64 {
        self.width_m * self.height_m * self.depth_m
    }

    /// Total area of the four vertical walls, windows included.
    pub fn gross_wall_area_m2(&self) -> f64 {
        2.0 * (self.width_m * self.height_m + self.depth_m * self.height_m)
    }

    /// Heat capacity of the room air, J/K.
    pub fn heat_capacity(&self) -> f64 {
        self.air_density * self.air_specific_heat * self.volume_m3()
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        let positive = [
            ("width_m", self.width_m),
            ("height_m", self.height_m),
            ("depth_m", self.depth_m),
            ("wall_r", self.wall_r),
            ("window_r", self.window_r),
            ("air_density", self.air_density),
            ("air_specific_heat", self.air_specific_heat),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(ThermalError::InvalidRoom(format!("{name} must be > 0, got {value}")));
            }
        }
        for (name, value) in [
            ("ach", self.ach),
            ("ach_window_open", self.ach_window_open),
            ("window_area_m2", self.window_area_m2),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ThermalError::InvalidRoom(format!("{name} must be >= 0, got {value}")));
            }
        }
        let glazing = self.window_area_m2 * self.n_windows as f64;
        if glazing >= self.gross_wall_area_m2() {
            return Err(ThermalError::InvalidRoom(format!(
                "window area {glazing} m² leaves no opaque wall (total {} m²)",
                self.gross_wall_area_m2()
            )));
        }
        Ok(())
    }

    /// Overall conductance using this room's own window count.
    pub fn conductance(&self, window_open: bool) -> Result<f64, ThermalError> {
        conductance(self, self.n_windows, window_open)
    }

    /// Loads a room and device list from a TOML key/value file.
    pub fn load(path: &Path) -> Result<(RoomConfig, Vec<Device>), ThermalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ThermalError::Io(format!("{}: {e}", path.display())))?;
        parse_room_file(&text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomFile {
    #[serde(default)]
    room: RoomConfig,
    #[serde(default, rename = "device")]
    devices: Vec<Device>,
}

/// Parses the room configuration format:
///
/// ```toml
/// [room]
/// width_m = 5.0          # any RoomConfig field; omitted fields keep defaults
///
/// [[device]]
/// id = "heater"
/// kind = "heater"        # heater | cooler | window
/// levels = [0.0, 200.0, 400.0]
/// ```
///
/// A file without `[[device]]` tables gets the default heater/cooler/window set.
pub fn parse_room_file(text: &str) -> Result<(RoomConfig, Vec<Device>), ThermalError> {
    let file: RoomFile = toml::from_str(text).map_err(|e| ThermalError::Parse(e.to_string()))?;
    file.room.validate()?;
    let devices = if file.devices.is_empty() { default_devices() } else { file.devices };
    for d in &devices {
        d.validate()?;
    }
    Ok((file.room, devices))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Heater,
    Cooler,
    Window,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DeviceKind::Heater => "heater",
            DeviceKind::Cooler => "cooler",
            DeviceKind::Window => "window",
        };
        f.write_str(s)
    }
}

/// An actuator with discrete settings.
///
/// Heater and cooler levels are watts. Window levels are `[0, 1]`, read as
/// CLOSE and OPEN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    pub kind: DeviceKind,
    pub levels: Vec<f64>,
}

pub const WINDOW_CLOSED: f64 = 0.0;
pub const WINDOW_OPEN: f64 = 1.0;

impl Device {
    pub fn heater(id: impl Into<String>, levels: &[f64]) -> Self {
        Self { id: id.into(), kind: DeviceKind::Heater, levels: levels.to_vec() }
    }

    pub fn cooler(id: impl Into<String>, levels: &[f64]) -> Self {
        Self { id: id.into(), kind: DeviceKind::Cooler, levels: levels.to_vec() }
    }

    pub fn window(id: impl Into<String>) -> Self {
        Self { id: id.into(), kind: DeviceKind::Window, levels: vec![WINDOW_CLOSED, WINDOW_OPEN] }
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        let fail = |reason: &str| ThermalError::InvalidDevice { id: self.id.clone(), reason: reason.into() };
        if self.levels.is_empty() {
            return Err(fail("no levels"));
        }
        match self.kind {
            DeviceKind::Window => {
                if self.levels != [WINDOW_CLOSED, WINDOW_OPEN] {
                    return Err(fail("window levels must be exactly [0 (CLOSE), 1 (OPEN)]"));
                }
            }
            DeviceKind::Heater | DeviceKind::Cooler => {
                if self.levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
                    return Err(fail("power levels must be finite and >= 0"));
                }
                if self.levels.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(fail("power levels must be strictly increasing"));
                }
            }
        }
        Ok(())
    }

    /// Human-readable form of one level, e.g. `200W` or `OPEN`.
    pub fn level_label(&self, level: usize) -> String {
        match self.kind {
            DeviceKind::Window => {
                if self.levels[level] == WINDOW_OPEN { "OPEN".into() } else { "CLOSE".into() }
            }
            _ => format!("{}W", self.levels[level]),
        }
    }
}

/// Heater 0/200/400 W, cooler 0/400 W, one window.
pub fn default_devices() -> Vec<Device> {
    vec![
        Device::heater("heater", &[0.0, 200.0, 400.0]),
        Device::cooler("cooler", &[0.0, 400.0]),
        Device::window("window"),
    ]
}

/// Instantaneous actuator output applied to the room.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Powers {
    pub heater_w: f64,
    pub cooler_w: f64,
    pub window_open: bool,
}

impl Powers {
    pub fn off() -> Self {
        Self::default()
    }

    /// Electrical draw counted against comfort; the window draws nothing.
    pub fn energy_w(&self) -> f64 {
        self.heater_w + self.cooler_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t_in: f64,
    pub t_out: f64,
    pub step_index: u64,
    /// Simulated seconds since the start of the episode.
    pub clock: f64,
}

impl SimState {
    pub fn new(t_in: f64, t_out: f64) -> Self {
        Self { t_in, t_out, step_index: 0, clock: 0.0 }
    }
}

/// Outdoor temperature as a function of the simulation clock.
pub trait OutdoorTemperature {
    fn at(&self, clock_s: f64) -> f64;
}

impl OutdoorTemperature for f64 {
    fn at(&self, _clock_s: f64) -> f64 {
        *self
    }
}

/// Uniformly spaced outdoor samples, linearly interpolated and held flat
/// past either end.
#[derive(Debug, Clone, PartialEq)]
pub struct OutdoorProfile {
    values: Vec<f64>,
    spacing_s: f64,
    /// Clock value that maps to `values[0]`.
    origin_s: f64,
}

impl OutdoorProfile {
    pub fn new(values: Vec<f64>, spacing_s: f64) -> Self {
        assert!(!values.is_empty(), "outdoor profile needs at least one sample");
        assert!(spacing_s > 0.0);
        Self { values, spacing_s, origin_s: 0.0 }
    }

    /// Shifts the profile so that clock 0 maps to sample `index`.
    pub fn starting_at(mut self, index: usize) -> Self {
        self.origin_s = -(index as f64) * self.spacing_s;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing_s(&self) -> f64 {
        self.spacing_s
    }

    /// Clock value past which the profile has no more data.
    pub fn end_clock(&self) -> f64 {
        self.origin_s + (self.values.len() - 1) as f64 * self.spacing_s
    }
}

impl OutdoorTemperature for OutdoorProfile {
    fn at(&self, clock_s: f64) -> f64 {
        let pos = (clock_s - self.origin_s) / self.spacing_s;
        if pos <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        let i = pos.floor() as usize;
        if i >= last {
            return self.values[last];
        }
        let frac = pos - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }
}

/// Overall room-to-outside conductance UA in W/K.
///
/// Walls and windows conduct as A/R; infiltration carries `ach` room volumes
/// per hour, or `ach_window_open` when a window is open.
pub fn conductance(room: &RoomConfig, n_windows: usize, window_open: bool) -> Result<f64, ThermalError> {
    let glazing = room.window_area_m2 * n_windows as f64;
    let wall_area = room.gross_wall_area_m2() - glazing;
    if !(wall_area > 0.0) {
        return Err(ThermalError::InvalidRoom(format!("effective wall area {wall_area} m² is not positive")));
    }
    let ach = if window_open { room.ach_window_open } else { room.ach };
    let infiltration = ach / 3600.0 * room.volume_m3() * room.air_density * room.air_specific_heat;
    Ok(wall_area / room.wall_r + glazing / room.window_r + infiltration)
}

/// One explicit Euler step of the room energy balance; returns the new indoor
/// temperature.
pub fn step_temperature(state: &SimState, powers: &Powers, room: &RoomConfig, dt: f64) -> Result<f64, ThermalError> {
    let ua = room.conductance(powers.window_open)?;
    let flux = powers.heater_w - powers.cooler_w - ua * (state.t_in - state.t_out);
    let t_in = state.t_in + dt * flux / room.heat_capacity();
    if t_in.is_finite() {
        Ok(t_in)
    } else {
        Err(ThermalError::NonFinite)
    }
}

/// Holds `powers` for `action_dt` seconds in `sub_dt` sub-steps and returns
/// the state after each sub-step. The outdoor temperature is sampled at the
/// end of each sub-step.
pub fn simulate_action_interval(
    state: &SimState,
    powers: &Powers,
    room: &RoomConfig,
    outdoor: &impl OutdoorTemperature,
    action_dt: f64,
    sub_dt: f64,
) -> Result<Vec<SimState>, ThermalError> {
    if !(sub_dt > 0.0) || !(action_dt > 0.0) {
        return Err(ThermalError::IndivisibleCadence { action_dt, sub_dt });
    }
    let ratio = action_dt / sub_dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 || n < 1.0 {
        return Err(ThermalError::IndivisibleCadence { action_dt, sub_dt });
    }
    let mut out = Vec::with_capacity(n as usize);
    let mut current = *state;
    for _ in 0..n as usize {
        let t_in = step_temperature(&current, powers, room, sub_dt)?;
        let clock = current.clock + sub_dt;
        current = SimState { t_in, t_out: outdoor.at(clock), step_index: current.step_index + 1, clock };
        out.push(current);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table_room() -> RoomConfig {
        RoomConfig::default()
    }

    #[test]
    fn conductance_closed_matches_hand_computation() {
        let ua = conductance(&table_room(), 1, false).unwrap();
        let oracle = 47.0 / 3.6 + 1.0 / 0.176 + (1.7 / 3600.0) * 45.0 * 1.225 * 1005.0;
        assert_relative_eq!(ua, oracle, epsilon = 1e-12);
        assert!((ua - 44.9).abs() < 0.05, "{ua}");
    }

    #[test]
    fn conductance_open_window() {
        let ua = conductance(&table_room(), 1, true).unwrap();
        let oracle = 47.0 / 3.6 + 1.0 / 0.176 + (8.0 / 3600.0) * 45.0 * 1.225 * 1005.0;
        assert_relative_eq!(ua, oracle, epsilon = 1e-12);
        assert!((ua - 141.9).abs() < 0.1, "{ua}");
    }

    #[test]
    fn conductance_perfect_insulation_limit() {
        let room = RoomConfig { wall_r: 1e12, window_r: 1e12, ach: 0.0, ..table_room() };
        assert!(conductance(&room, 1, false).unwrap() < 1e-9);
    }

    #[test]
    fn conductance_rejects_all_glass_walls() {
        let room = table_room();
        assert!(matches!(conductance(&room, 48, false), Err(ThermalError::InvalidRoom(_))));
        let glassy = RoomConfig { n_windows: 48, ..table_room() };
        assert!(glassy.validate().is_err());
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let s = SimState::new(20.0, 20.0);
        assert_eq!(step_temperature(&s, &Powers::off(), &table_room(), 300.0).unwrap(), 20.0);
    }

    #[test]
    fn free_cooling_reaches_outdoor() {
        let room = table_room();
        let mut s = SimState::new(20.0, 10.0);
        for _ in 0..(24 * 12) {
            s.t_in = step_temperature(&s, &Powers::off(), &room, 300.0).unwrap();
        }
        assert!((s.t_in - 10.0).abs() < 0.5);
    }

    #[test]
    fn heater_steady_state_matches_energy_balance() {
        let room = table_room();
        let ua = room.conductance(false).unwrap();
        let p = Powers { heater_w: 200.0, ..Powers::off() };
        let mut s = SimState::new(10.0, 10.0);
        for _ in 0..2000 {
            s.t_in = step_temperature(&s, &p, &room, 300.0).unwrap();
        }
        assert_relative_eq!(s.t_in - 10.0, 200.0 / ua, max_relative = 1e-9);
        assert!((s.t_in - 10.0 - 4.45).abs() < 0.01);
    }

    #[test]
    fn action_interval_sub_states() {
        let room = table_room();
        let s = SimState::new(20.0, 20.0);
        let subs = simulate_action_interval(&s, &Powers::off(), &room, &20.0, 900.0, 300.0).unwrap();
        assert_eq!(subs.len(), 3);
        assert!(subs.iter().all(|x| x.t_in == 20.0 && x.t_out == 20.0));
        assert_eq!(subs[2].clock, 900.0);
        assert_eq!(subs[2].step_index, 3);

        let p = Powers { heater_w: 400.0, ..Powers::off() };
        let one = simulate_action_interval(&s, &p, &room, &20.0, 900.0, 900.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].t_in, step_temperature(&s, &p, &room, 900.0).unwrap());
    }

    #[test]
    fn indivisible_cadence_is_rejected() {
        let s = SimState::new(20.0, 20.0);
        let err = simulate_action_interval(&s, &Powers::off(), &table_room(), &20.0, 900.0, 400.0);
        assert!(matches!(err, Err(ThermalError::IndivisibleCadence { .. })));
    }

    #[test]
    fn profile_interpolates_and_clamps() {
        let p = OutdoorProfile::new(vec![10.0, 20.0, 30.0], 900.0);
        assert_eq!(p.at(-5.0), 10.0);
        assert_eq!(p.at(450.0), 15.0);
        assert_eq!(p.at(1800.0), 30.0);
        assert_eq!(p.at(1e9), 30.0);
        let shifted = p.clone().starting_at(1);
        assert_eq!(shifted.at(0.0), 20.0);
        assert_eq!(shifted.end_clock(), 900.0);
    }

    #[test]
    fn device_validation() {
        for d in default_devices() {
            d.validate().unwrap();
        }
        assert!(Device::heater("h", &[]).validate().is_err());
        assert!(Device::heater("h", &[0.0, 200.0, 200.0]).validate().is_err());
        assert!(Device::cooler("c", &[-1.0, 200.0]).validate().is_err());
        let w = Device { levels: vec![0.0, 1.0, 2.0], ..Device::window("w") };
        assert!(w.validate().is_err());
        assert_eq!(Device::window("w").level_label(1), "OPEN");
        assert_eq!(Device::heater("h", &[0.0, 200.0]).level_label(1), "200W");
    }

    #[test]
    fn room_file_round_trip() {
        let text = r#"
            [room]
            width_m = 6.0
            ach = 2.0

            [[device]]
            id = "h1"
            kind = "heater"
            levels = [0.0, 500.0]
        "#;
        let (room, devices) = parse_room_file(text).unwrap();
        assert_eq!(room.width_m, 6.0);
        assert_eq!(room.ach, 2.0);
        assert_eq!(room.depth_m, 3.0);
        assert_eq!(devices, vec![Device::heater("h1", &[0.0, 500.0])]);

        let (room, devices) = parse_room_file("").unwrap();
        assert_eq!(room, RoomConfig::default());
        assert_eq!(devices, default_devices());

        assert!(matches!(parse_room_file("[room]\nwidth_m = -1.0"), Err(ThermalError::InvalidRoom(_))));
        assert!(matches!(parse_room_file("[room]\nbogus = 1"), Err(ThermalError::Parse(_))));
    }
}
