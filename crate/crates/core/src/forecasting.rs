//! Online ARIMA(p, 1, q) forecaster over a sliding window.
//!
//! The model is fitted on first differences `z_t = y_t - y_{t-1}`:
//!
//! ```text
//! z_t = c + e_t + sum_i phi_i z_{t-i} + sum_j theta_j e_{t-j}
//! ```
//!
//! Coefficients minimise the conditional sum of squared residuals (the first
//! `p` differences are conditioned on, pre-sample residuals are zero).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("series too short: need at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("invalid ARIMA configuration: {0}")]
    InvalidConfig(String),
    #[error("window has {got} points, expected {expected}")]
    WindowSize { expected: usize, got: usize },
    #[error("non-finite observation")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaConfig {
    pub p: usize,
    pub q: usize,
    pub window_size: usize,
    pub horizon: usize,
    pub max_iterations: usize,
    /// Relative change in SSR below which the fit is considered converged.
    pub tolerance: f64,
}

impl Default for ArimaConfig {
    fn default() -> Self {
        Self { p: 2, q: 1, window_size: 30, horizon: 3, max_iterations: 500, tolerance: 1e-8 }
    }
}

impl ArimaConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.p + self.q == 0 {
            return Err(ForecastError::InvalidConfig("p + q must be at least 1".into()));
        }
        if self.window_size <= self.p + self.q + 2 {
            return Err(ForecastError::InvalidConfig(format!(
                "window_size {} must exceed p + q + 2 = {}",
                self.window_size,
                self.p + self.q + 2
            )));
        }
        if self.horizon == 0 {
            return Err(ForecastError::InvalidConfig("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub c: f64,
    pub sigma2: f64,
    /// Raw observations the model was fitted on, oldest first.
    pub last_window: Vec<f64>,
    /// Set when the optimiser hit its iteration cap before converging.
    pub degraded: bool,
}

impl ArimaModel {
    /// Sum of squared conditional residuals of this model on its own window.
    pub fn ssr(&self) -> f64 {
        let z = difference(&self.last_window).unwrap_or_default();
        conditional_residuals(&z, &self.phi, &self.theta, self.c).iter().map(|e| e * e).sum()
    }
}

/// First differences of `series`.
pub fn difference(series: &[f64]) -> Result<Vec<f64>, ForecastError> {
    if series.len() < 2 {
        return Err(ForecastError::TooShort { need: 2, got: series.len() });
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Inverse of [`difference`] given the first raw value.
pub fn undifference(diffs: &[f64], first: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(diffs.len() + 1);
    out.push(first);
    let mut acc = first;
    for d in diffs {
        acc += d;
        out.push(acc);
    }
    out
}

/// Residuals `e_t` for `t in p..z.len()`; entries before `p` are zero.
fn conditional_residuals(z: &[f64], phi: &[f64], theta: &[f64], c: f64) -> Vec<f64> {
    let p = phi.len();
    let mut e = vec![0.0; z.len()];
    for t in p..z.len() {
        let mut pred = c;
        for (i, ph) in phi.iter().enumerate() {
            pred += ph * z[t - i - 1];
        }
        for (j, th) in theta.iter().enumerate() {
            if t > j {
                pred += th * e[t - j - 1];
            }
        }
        e[t] = z[t] - pred;
    }
    e
}

/// Residuals and their Jacobian with respect to `(c, phi.., theta..)`.
fn residuals_and_jacobian(z: &[f64], params: &[f64], p: usize, q: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = 1 + p + q;
    let (c, phi, theta) = (params[0], &params[1..1 + p], &params[1 + p..]);
    let e = conditional_residuals(z, phi, theta, c);
    let mut jac = vec![vec![0.0; k]; z.len()];
    for t in p..z.len() {
        let mut row = vec![0.0; k];
        row[0] = -1.0;
        for i in 0..p {
            row[1 + i] = -z[t - i - 1];
        }
        for j in 0..q {
            if t > j {
                row[1 + p + j] = -e[t - j - 1];
            }
        }
        for j in 0..q {
            if t > j {
                let prev = &jac[t - j - 1];
                for (r, pv) in row.iter_mut().zip(prev) {
                    *r -= theta[j] * pv;
                }
            }
        }
        jac[t] = row;
    }
    (e, jac)
}

fn ssr_of(z: &[f64], params: &[f64], p: usize) -> f64 {
    let e = conditional_residuals(z, &params[1..1 + p], &params[1 + p..], params[0]);
    let s: f64 = e.iter().map(|v| v * v).sum();
    if s.is_finite() { s } else { f64::INFINITY }
}

/// Solves the small dense system `a x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` when the matrix is numerically singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fits the model on a raw window of exactly `cfg.window_size` points.
///
/// Descent directions are damped Gauss-Newton steps on the CSS objective;
/// a step is halved until SSR decreases. A window whose differences are all
/// equal short-circuits to zero AR/MA terms with `c` set to that difference.
pub fn fit(window: &[f64], cfg: &ArimaConfig) -> Result<ArimaModel, ForecastError> {
    cfg.validate()?;
    if window.len() != cfg.window_size {
        return Err(ForecastError::WindowSize { expected: cfg.window_size, got: window.len() });
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite);
    }
    let z = difference(window)?;
    let (p, q) = (cfg.p, cfg.q);
    let n_eff = (z.len() - p) as f64;

    let first = z[0];
    if z.iter().all(|v| (v - first).abs() <= 1e-12 * first.abs().max(1.0)) {
        return Ok(ArimaModel {
            phi: vec![0.0; p],
            theta: vec![0.0; q],
            c: first,
            sigma2: 0.0,
            last_window: window.to_vec(),
            degraded: false,
        });
    }

    let k = 1 + p + q;
    let mut params = vec![0.0; k];
    let mut ssr = ssr_of(&z, &params, p);
    let mut converged = false;
    let mut damping = 1e-9;
    for _ in 0..cfg.max_iterations {
        let (e, jac) = residuals_and_jacobian(&z, &params, p, q);
        // Normal equations (J'J + damping·diag) d = -J'e
        let mut jtj = vec![vec![0.0; k]; k];
        let mut jte = vec![0.0; k];
        for (row, et) in jac.iter().zip(&e) {
            for a in 0..k {
                jte[a] += row[a] * et;
                for b in 0..k {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let scale = (0..k).map(|i| jtj[i][i]).fold(0.0, f64::max).max(1e-300);
        for (i, row) in jtj.iter_mut().enumerate() {
            row[i] += damping * scale;
        }
        let Some(dir) = solve(jtj, jte.iter().map(|g| -g).collect()) else {
            damping *= 10.0;
            continue;
        };

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
            let trial_ssr = ssr_of(&z, &trial, p);
            if trial_ssr < ssr {
                accepted = Some((trial, trial_ssr));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, trial_ssr)) => {
                let rel = (ssr - trial_ssr) / ssr.max(1e-300);
                params = trial;
                ssr = trial_ssr;
                if rel < cfg.tolerance || ssr == 0.0 {
                    converged = true;
                    break;
                }
            }
            None => {
                // No decrease along the best local direction: stationary point.
                converged = true;
                break;
            }
        }
    }

    Ok(ArimaModel {
        c: params[0],
        phi: params[1..1 + p].to_vec(),
        theta: params[1 + p..].to_vec(),
        sigma2: ssr / n_eff,
        last_window: window.to_vec(),
        degraded: !converged,
    })
}

/// Iterates the fitted recursion `horizon` steps ahead with future shocks set
/// to zero and returns absolute levels.
pub fn forecast(model: &ArimaModel, horizon: usize) -> Vec<f64> {
    let Some(&last) = model.last_window.last() else {
        return Vec::new();
    };
    let mut z = difference(&model.last_window).unwrap_or_default();
    let mut e = conditional_residuals(&z, &model.phi, &model.theta, model.c);
    let mut level = last;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let t = z.len();
        let mut next = model.c;
        for (i, ph) in model.phi.iter().enumerate() {
            if t > i {
                next += ph * z[t - i - 1];
            }
        }
        for (j, th) in model.theta.iter().enumerate() {
            if t > j {
                next += th * e[t - j - 1];
            }
        }
        z.push(next);
        e.push(0.0);
        level += next;
        out.push(level);
    }
    out
}

/// Sliding-window holder that refits on every new observation.
#[derive(Debug, Clone)]
pub struct SlidingArima {
    cfg: ArimaConfig,
    window: VecDeque<f64>,
    model: Option<ArimaModel>,
}

impl SlidingArima {
    pub fn new(cfg: ArimaConfig) -> Result<Self, ForecastError> {
        cfg.validate()?;
        Ok(Self { window: VecDeque::with_capacity(cfg.window_size), cfg, model: None })
    }

    pub fn config(&self) -> &ArimaConfig {
        &self.cfg
    }

    pub fn window(&self) -> Vec<f64> {
        self.window.iter().copied().collect()
    }

    pub fn model(&self) -> Option<&ArimaModel> {
        self.model.as_ref()
    }

    pub fn is_ready(&self) -> bool {
        self.model.is_some()
    }

    /// Drops the oldest point, appends `obs` and refits once the window is
    /// full. A fit that fails to converge keeps the previous model.
    pub fn refit_on_arrival(&mut self, obs: f64) -> Result<Option<&ArimaModel>, ForecastError> {
        if !obs.is_finite() {
            return Err(ForecastError::NonFinite);
        }
        if self.window.len() == self.cfg.window_size {
            self.window.pop_front();
        }
        self.window.push_back(obs);
        if self.window.len() == self.cfg.window_size {
            let window: Vec<f64> = self.window.iter().copied().collect();
            let fitted = fit(&window, &self.cfg)?;
            if !fitted.degraded || self.model.is_none() {
                self.model = Some(fitted);
            }
        }
        Ok(self.model.as_ref())
    }

    /// Forecast over the configured horizon, once a model exists.
    pub fn forecast(&self) -> Option<Vec<f64>> {
        self.model.as_ref().map(|m| forecast(m, self.cfg.horizon))
    }
}
