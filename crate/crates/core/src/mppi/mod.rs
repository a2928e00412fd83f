//! Model predictive path integral control.
//!
//! One control step samples `K` Gaussian perturbations of the warm-start
//! plan, rolls every perturbed sequence through the prediction model, scores
//! the rollouts against the reference path, and replaces the plan by the
//! softmax-weighted average of the perturbations. The updated plan is then
//! smoothed along the horizon before its first command is applied.

pub mod savgol;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    admissible_control, clamp_control, rk4_step_batch, wrap_angle, ControlInput, Dynamics,
    VehicleState,
};
use crate::error::{Error, Result};
use crate::paths::{nearest_reference, PathPoint, ReferencePath};
use crate::rng::{Domain, StreamKey};

pub use savgol::{savgol_coefficients, savgol_filter, savgol_smooth};

/// Rollouts are evaluated in fixed-size chunks; chunking is part of neither
/// the noise keys nor the reduction order, so results do not depend on it.
const ROLLOUT_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MppiConfig {
    pub horizon: usize,
    pub num_samples: usize,
    pub temperature: f64,
    pub noise_cov_a: f64,
    pub noise_cov_omega: f64,
    pub sg_window: usize,
    pub sg_order: usize,
    pub gamma_control_cost: f64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            num_samples: 3000,
            temperature: 0.05,
            noise_cov_a: 0.1,
            noise_cov_omega: 0.5,
            sg_window: 5,
            sg_order: 3,
            gamma_control_cost: 0.0,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::invalid("horizon ≥ 1"));
        }
        if self.num_samples < 1 {
            return Err(Error::invalid("num_samples ≥ 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature > 0"));
        }
        if !(self.noise_cov_a > 0.0 && self.noise_cov_omega > 0.0) {
            return Err(Error::invalid("noise variances > 0"));
        }
        if self.sg_window.is_multiple_of(2) || self.sg_window <= self.sg_order {
            return Err(Error::invalid("sg_window odd and > sg_order"));
        }
        if self.sg_window > self.horizon {
            return Err(Error::invalid("sg_window ≤ horizon"));
        }
        if !(self.gamma_control_cost >= 0.0) {
            return Err(Error::invalid("gamma_control_cost ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub w_pos: f64,
    pub w_heading: f64,
    pub w_speed: f64,
    pub w_terminal: f64,
    pub ref_speed: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { w_pos: 10.0, w_heading: 2.0, w_speed: 1.0, w_terminal: 5.0, ref_speed: 2.0 }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        for (w, rule) in [
            (self.w_pos, "cost.w_pos ≥ 0"),
            (self.w_heading, "cost.w_heading ≥ 0"),
            (self.w_speed, "cost.w_speed ≥ 0"),
            (self.w_terminal, "cost.w_terminal ≥ 0"),
        ] {
            if !(w >= 0.0) {
                return Err(Error::invalid(rule));
            }
        }
        if !self.ref_speed.is_finite() {
            return Err(Error::invalid("cost.ref_speed finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSequence(pub Vec<ControlInput>);

impl ControlSequence {
    pub fn zeros(horizon: usize) -> Self {
        Self(vec![ControlInput::default(); horizon])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Receding-horizon warm start: drop the first command, repeat the last.
    pub fn shifted(&self) -> Self {
        let mut v: Vec<ControlInput> = self.0.iter().skip(1).copied().collect();
        if let Some(last) = self.0.last() {
            v.push(*last);
        }
        Self(v)
    }
}

/// `K x H` perturbations, stored row-major by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensor {
    pub num_samples: usize,
    pub horizon: usize,
    pub values: Vec<ControlInput>,
}

impl NoiseTensor {
    pub fn zeros(num_samples: usize, horizon: usize) -> Self {
        Self { num_samples, horizon, values: vec![ControlInput::default(); num_samples * horizon] }
    }

    pub fn row(&self, k: usize) -> &[ControlInput] {
        &self.values[k * self.horizon..(k + 1) * self.horizon]
    }

    pub fn at(&self, k: usize, t: usize) -> ControlInput {
        self.values[k * self.horizon + t]
    }
}

/// Draws the perturbations for control step `step`. Row `k` comes from its
/// own substream keyed by `(step, k)`.
pub fn sample_noise(cfg: &MppiConfig, key: &StreamKey, step: u64) -> NoiseTensor {
    let (sa, sw) = (cfg.noise_cov_a.sqrt(), cfg.noise_cov_omega.sqrt());
    let mut values = Vec::with_capacity(cfg.num_samples * cfg.horizon);
    for k in 0..cfg.num_samples {
        let mut rng = key.substream(Domain::MppiNoise, step, k as u64);
        for _ in 0..cfg.horizon {
            let za: f64 = StandardNormal.sample(&mut rng);
            let zw: f64 = StandardNormal.sample(&mut rng);
            values.push(ControlInput::new(sa * za, sw * zw));
        }
    }
    NoiseTensor { num_samples: cfg.num_samples, horizon: cfg.horizon, values }
}

/// Simulates one perturbed plan. Returns the `H + 1` states and the `H`
/// controls that were actually applied.
pub fn rollout_trajectory<M: Dynamics + ?Sized>(
    model: &M,
    x0: &VehicleState,
    nominal: &ControlSequence,
    noise_row: &[ControlInput],
) -> Result<(Vec<VehicleState>, Vec<ControlInput>)> {
    let cfg = model.vehicle();
    let mut states = Vec::with_capacity(nominal.len() + 1);
    let mut applied = Vec::with_capacity(nominal.len());
    states.push(*x0);
    for (u, eps) in nominal.0.iter().zip(noise_row) {
        let s = *states.last().unwrap();
        let v = admissible_control(&s, &clamp_control(&(*u + *eps), cfg), cfg);
        states.push(crate::dynamics::model_step(model, &s, &v, cfg.dt)?);
        applied.push(v);
    }
    Ok((states, applied))
}

/// All `K` rollouts, advanced in lock-step so batched models can use matrix
/// products. Returns states row-major by sample, `H + 1` per sample.
pub fn rollout_batch<M: Dynamics + ?Sized>(
    model: &M,
    x0: &VehicleState,
    nominal: &ControlSequence,
    noise: &NoiseTensor,
) -> Result<Vec<VehicleState>> {
    let horizon = noise.horizon;
    let cfg = model.vehicle();
    let chunks: Vec<(usize, usize)> = (0..noise.num_samples)
        .step_by(ROLLOUT_CHUNK)
        .map(|lo| (lo, (lo + ROLLOUT_CHUNK).min(noise.num_samples)))
        .collect();
    let parts: Vec<Result<Vec<VehicleState>>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let n = hi - lo;
            let mut current = vec![*x0; n];
            let mut out = vec![*x0; n * (horizon + 1)];
            let mut controls = vec![ControlInput::default(); n];
            for t in 0..horizon {
                for (j, k) in (lo..hi).enumerate() {
                    let v = clamp_control(&(nominal.0[t] + noise.at(k, t)), cfg);
                    controls[j] = admissible_control(&current[j], &v, cfg);
                }
                rk4_step_batch(model, &mut current, &controls, cfg.dt)?;
                for j in 0..n {
                    out[j * (horizon + 1) + t + 1] = current[j];
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(noise.num_samples * (horizon + 1));
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

pub fn state_cost(s: &VehicleState, r: &PathPoint, cost: &CostConfig) -> f64 {
    let pos = (s.x - r.x).powi(2) + (s.y - r.y).powi(2);
    let heading = wrap_angle(s.theta - r.theta).powi(2);
    let speed = (s.v - cost.ref_speed).powi(2);
    cost.w_pos * pos + cost.w_heading * heading + cost.w_speed * speed
}

/// Running plus terminal cost of one rollout. Each state is matched to the
/// path with forward-only progress starting from `start_index`.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_cost(
    states: &[VehicleState],
    nominal: &ControlSequence,
    noise_row: &[ControlInput],
    path: &ReferencePath,
    start_index: usize,
    cost: &CostConfig,
    cfg: &MppiConfig,
) -> f64 {
    let horizon = states.len() - 1;
    let mut prev = start_index;
    let mut total = 0.0;
    for (t, s) in states.iter().enumerate() {
        let (idx, r) = nearest_reference(path, (s.x, s.y), prev);
        prev = idx;
        let q = state_cost(s, &r, cost);
        if t < horizon {
            total += q;
            if cfg.gamma_control_cost > 0.0 {
                let (u, e) = (nominal.0[t], noise_row[t]);
                total += cfg.gamma_control_cost
                    * (u.a * e.a / cfg.noise_cov_a + u.omega * e.omega / cfg.noise_cov_omega);
            }
        } else {
            total += cost.w_terminal * q;
        }
    }
    total
}

/// Softmax importance weights with the minimum cost subtracted first.
pub fn compute_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let rho = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let unnorm: Vec<f64> = costs.iter().map(|s| (-(s - rho) / lambda).exp()).collect();
    let eta: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|w| w / eta).collect()
}

pub fn update_controls(nominal: &ControlSequence, noise: &NoiseTensor, weights: &[f64]) -> ControlSequence {
    let mut out = nominal.clone();
    for (t, u) in out.0.iter_mut().enumerate() {
        let (mut da, mut dw) = (0.0, 0.0);
        for (k, w) in weights.iter().enumerate() {
            let e = noise.at(k, t);
            da += w * e.a;
            dw += w * e.omega;
        }
        u.a += da;
        u.omega += dw;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub min_cost: f64,
    pub mean_cost: f64,
    pub effective_samples: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub applied: ControlInput,
    /// The smoothed, box-clamped plan whose first command was applied.
    pub plan: ControlSequence,
    pub next_warm: ControlSequence,
    pub diagnostics: StepDiagnostics,
}

/// Everything a control step needs besides the model and the randomness.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub path: &'a ReferencePath,
    pub progress: usize,
    pub mppi: &'a MppiConfig,
    pub cost: &'a CostConfig,
}

pub fn mppi_step<M: Dynamics + ?Sized>(
    x0: &VehicleState,
    warm: &ControlSequence,
    model: &M,
    ctx: &StepContext<'_>,
    noise: &NoiseTensor,
) -> Result<StepOutput> {
    let cfg = ctx.mppi;
    if warm.len() != cfg.horizon || noise.horizon != cfg.horizon {
        return Err(Error::DimensionMismatch { expected: cfg.horizon, got: warm.len().min(noise.horizon) });
    }
    let states = rollout_batch(model, x0, warm, noise)?;
    let stride = cfg.horizon + 1;
    let costs: Vec<f64> = (0..noise.num_samples)
        .into_par_iter()
        .map(|k| {
            trajectory_cost(&states[k * stride..(k + 1) * stride], warm, noise.row(k), ctx.path, ctx.progress, ctx.cost, cfg)
        })
        .collect();
    let weights = compute_weights(&costs, cfg.temperature);
    let updated = update_controls(warm, noise, &weights);
    let vehicle = model.vehicle();
    let smoothed: Vec<ControlInput> = savgol_smooth(&updated.0, cfg.sg_window, cfg.sg_order)?
        .iter()
        .map(|u| clamp_control(u, vehicle))
        .collect();
    let plan = ControlSequence(smoothed);
    let diagnostics = StepDiagnostics {
        min_cost: costs.iter().copied().fold(f64::INFINITY, f64::min),
        mean_cost: costs.iter().sum::<f64>() / costs.len() as f64,
        effective_samples: 1.0 / weights.iter().map(|w| w * w).sum::<f64>(),
    };
    Ok(StepOutput { applied: clamp_control(&plan.0[0], vehicle), next_warm: plan.shifted(), plan, diagnostics })
}

/// Receding-horizon controller: keeps the warm-start plan, the path progress
/// index and the step counter that keys the noise streams.
pub struct MppiController<'a, M> {
    pub model: M,
    pub path: &'a ReferencePath,
    pub mppi: MppiConfig,
    pub cost: CostConfig,
    key: StreamKey,
    plan: ControlSequence,
    progress: usize,
    step: u64,
}

impl<'a, M: Dynamics> MppiController<'a, M> {
    pub fn new(model: M, path: &'a ReferencePath, mppi: MppiConfig, cost: CostConfig, key: StreamKey) -> Self {
        Self { model, path, plan: ControlSequence::zeros(mppi.horizon), mppi, cost, key, progress: 0, step: 0 }
    }

    pub fn progress(&self) -> usize {
        self.progress
    }

    pub fn plan(&self) -> &ControlSequence {
        &self.plan
    }

    /// Matches the vehicle to the path and plans; returns the applied command,
    /// the matched reference point and the step diagnostics.
    pub fn control(&mut self, x: &VehicleState) -> Result<(ControlInput, PathPoint, StepDiagnostics)> {
        let (idx, r) = nearest_reference(self.path, (x.x, x.y), self.progress);
        self.progress = idx;
        let noise = sample_noise(&self.mppi, &self.key, self.step);
        let ctx = StepContext { path: self.path, progress: idx, mppi: &self.mppi, cost: &self.cost };
        let out = mppi_step(x, &self.plan, &self.model, &ctx, &noise)?;
        self.plan = out.next_warm;
        self.step += 1;
        Ok((out.applied, r, out.diagnostics))
    }
}
