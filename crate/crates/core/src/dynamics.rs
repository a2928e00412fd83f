//! Kinematic bicycle model, the sinusoidal drift disturbance and the RK4
//! integrator shared by the plant, the controller rollouts and the training
//! loss.
//!
//! State is `[x, y, theta, v, delta]`, control is `[a, omega]`:
//!
//! ```text
//! x'     = v cos(theta)
//! y'     = v sin(theta)
//! theta' = v / l * tan(delta)
//! v'     = a
//! delta' = omega
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Margin kept below pi/2 for the steering clamp.
pub const STEERING_SINGULARITY_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub delta: f64,
}

impl VehicleState {
    pub const DIM: usize = 5;

    pub fn new(x: f64, y: f64, theta: f64, v: f64, delta: f64) -> Self {
        Self { x, y, theta, v, delta }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.theta, self.v, self.delta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    /// `self + h * d`, without any wrapping or clamping.
    pub fn advanced(&self, d: &StateDerivative, h: f64) -> Self {
        Self {
            x: self.x + h * d.d_x,
            y: self.y + h * d.d_y,
            theta: self.theta + h * d.d_theta,
            v: self.v + h * d.d_v,
            delta: self.delta + h * d.d_delta,
        }
    }

    /// Component-wise difference with the heading compared modulo 2*pi.
    pub fn error_to(&self, other: &VehicleState) -> [f64; 5] {
        [
            self.x - other.x,
            self.y - other.y,
            wrap_angle(self.theta - other.theta),
            self.v - other.v,
            self.delta - other.delta,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub omega: f64,
}

impl ControlInput {
    pub fn new(a: f64, omega: f64) -> Self {
        Self { a, omega }
    }

    pub fn to_array(&self) -> [f64; 2] {
        [self.a, self.omega]
    }
}

impl std::ops::Add for ControlInput {
    type Output = ControlInput;
    fn add(self, rhs: Self) -> Self {
        ControlInput::new(self.a + rhs.a, self.omega + rhs.omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateDerivative {
    pub d_x: f64,
    pub d_y: f64,
    pub d_theta: f64,
    pub d_v: f64,
    pub d_delta: f64,
}

impl StateDerivative {
    pub fn to_array(&self) -> [f64; 5] {
        [self.d_x, self.d_y, self.d_theta, self.d_v, self.d_delta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { d_x: a[0], d_y: a[1], d_theta: a[2], d_v: a[3], d_delta: a[4] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

impl std::ops::Add for StateDerivative {
    type Output = StateDerivative;
    fn add(self, rhs: Self) -> Self {
        StateDerivative {
            d_x: self.d_x + rhs.d_x,
            d_y: self.d_y + rhs.d_y,
            d_theta: self.d_theta + rhs.d_theta,
            d_v: self.d_v + rhs.d_v,
            d_delta: self.d_delta + rhs.d_delta,
        }
    }
}

impl std::ops::Sub for StateDerivative {
    type Output = StateDerivative;
    fn sub(self, rhs: Self) -> Self {
        StateDerivative {
            d_x: self.d_x - rhs.d_x,
            d_y: self.d_y - rhs.d_y,
            d_theta: self.d_theta - rhs.d_theta,
            d_v: self.d_v - rhs.d_v,
            d_delta: self.d_delta - rhs.d_delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConfig {
    pub wheelbase: f64,
    pub a_max: f64,
    pub delta_max: f64,
    pub omega_max: f64,
    pub dt: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self { wheelbase: 2.5, a_max: 2.0, delta_max: 1.571, omega_max: 1.0, dt: 0.05 }
    }
}

impl VehicleConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.wheelbase, "vehicle.wheelbase > 0"),
            (self.a_max, "vehicle.a_max > 0"),
            (self.delta_max, "vehicle.delta_max > 0"),
            (self.omega_max, "vehicle.omega_max > 0"),
            (self.dt, "vehicle.dt > 0"),
        ];
        for (value, rule) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(rule));
            }
        }
        Ok(())
    }

    /// The steering clamp actually enforced: `min(delta_max, pi/2 - margin)`.
    pub fn steering_limit(&self) -> f64 {
        self.delta_max.min(FRAC_PI_2 - STEERING_SINGULARITY_MARGIN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    pub amp_x: f64,
    pub amp_y: f64,
    pub amp_theta: f64,
    pub freq_x: f64,
    pub freq_y: f64,
    pub freq_theta: f64,
    pub enabled: bool,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            amp_x: 0.3,
            amp_y: 0.3,
            amp_theta: 0.1,
            freq_x: 0.5,
            freq_y: 0.7,
            freq_theta: 0.9,
            enabled: true,
        }
    }
}

impl DisturbanceConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.amp_x, "disturbance.amp_x >= 0"),
            (self.amp_y, "disturbance.amp_y >= 0"),
            (self.amp_theta, "disturbance.amp_theta >= 0"),
            (self.freq_x, "disturbance.freq_x >= 0"),
            (self.freq_y, "disturbance.freq_y >= 0"),
            (self.freq_theta, "disturbance.freq_theta >= 0"),
        ];
        for (value, rule) in checks {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(rule));
            }
        }
        Ok(())
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let r = (theta + PI).rem_euclid(two_pi) - PI;
    // rem_euclid yields [0, 2pi), mapping odd multiples of pi to -pi.
    if r <= -PI {
        r + two_pi
    } else {
        r
    }
}

pub fn clamp_control(u: &ControlInput, cfg: &VehicleConfig) -> ControlInput {
    ControlInput {
        a: u.a.clamp(-cfg.a_max, cfg.a_max),
        omega: u.omega.clamp(-cfg.omega_max, cfg.omega_max),
    }
}

/// Box clamp followed by steering-actuator saturation: the steering rate is
/// limited so that a zero-order-hold step of length `dt` cannot carry the
/// steering angle past the steering limit.
pub fn admissible_control(s: &VehicleState, u: &ControlInput, cfg: &VehicleConfig) -> ControlInput {
    let boxed = clamp_control(u, cfg);
    let lim = cfg.steering_limit();
    let lo = ((-lim - s.delta) / cfg.dt).min(0.0);
    let hi = ((lim - s.delta) / cfg.dt).max(0.0);
    ControlInput { a: boxed.a, omega: boxed.omega.clamp(lo, hi) }
}

pub fn nominal_derivative(
    s: &VehicleState,
    u: &ControlInput,
    cfg: &VehicleConfig,
) -> Result<StateDerivative> {
    // Half of the margin is reserved for RK4 stage excursions beyond the clamp.
    if !(s.delta.abs() < FRAC_PI_2 - 0.5 * STEERING_SINGULARITY_MARGIN) {
        return Err(Error::SingularSteering { delta: s.delta });
    }
    let (sin, cos) = s.theta.sin_cos();
    Ok(StateDerivative {
        d_x: s.v * cos,
        d_y: s.v * sin,
        d_theta: s.v / cfg.wheelbase * s.delta.tan(),
        d_v: u.a,
        d_delta: u.omega,
    })
}

pub fn disturbance_at(t: f64, d: &DisturbanceConfig) -> StateDerivative {
    if !d.enabled {
        return StateDerivative::default();
    }
    StateDerivative {
        d_x: d.amp_x * (d.freq_x * t).sin(),
        d_y: d.amp_y * (d.freq_y * t).cos(),
        d_theta: d.amp_theta * (d.freq_theta * t).sin(),
        d_v: 0.0,
        d_delta: 0.0,
    }
}

pub fn plant_derivative(
    s: &VehicleState,
    u: &ControlInput,
    t: f64,
    cfg: &VehicleConfig,
    d: &DisturbanceConfig,
) -> Result<StateDerivative> {
    Ok(nominal_derivative(s, u, cfg)? + disturbance_at(t, d))
}

/// Wraps the heading and clamps the steering angle after an integrator step.
pub fn normalize_state(s: VehicleState, cfg: &VehicleConfig) -> VehicleState {
    let lim = cfg.steering_limit();
    VehicleState { theta: wrap_angle(s.theta), delta: s.delta.clamp(-lim, lim), ..s }
}

pub(crate) fn rk4_combine(
    s: &VehicleState,
    k: [&StateDerivative; 4],
    dt: f64,
) -> VehicleState {
    let mix = |a: f64, b: f64, c: f64, d: f64| dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    VehicleState {
        x: s.x + mix(k[0].d_x, k[1].d_x, k[2].d_x, k[3].d_x),
        y: s.y + mix(k[0].d_y, k[1].d_y, k[2].d_y, k[3].d_y),
        theta: s.theta + mix(k[0].d_theta, k[1].d_theta, k[2].d_theta, k[3].d_theta),
        v: s.v + mix(k[0].d_v, k[1].d_v, k[2].d_v, k[3].d_v),
        delta: s.delta + mix(k[0].d_delta, k[1].d_delta, k[2].d_delta, k[3].d_delta),
    }
}

/// One classical RK4 step with the control held constant over the step.
///
/// `f(tau, state, control)` receives the time offset of the stage within the
/// step (`0`, `dt/2` or `dt`). The heading is wrapped and the steering angle
/// clamped only after the step.
pub fn rk4_step<F>(
    mut f: F,
    s: &VehicleState,
    u: &ControlInput,
    dt: f64,
    cfg: &VehicleConfig,
) -> Result<VehicleState>
where
    F: FnMut(f64, &VehicleState, &ControlInput) -> Result<StateDerivative>,
{
    let checked = |d: StateDerivative| if d.is_finite() { Ok(d) } else { Err(Error::NonFiniteState) };
    let k1 = checked(f(0.0, s, u)?)?;
    let k2 = checked(f(0.5 * dt, &s.advanced(&k1, 0.5 * dt), u)?)?;
    let k3 = checked(f(0.5 * dt, &s.advanced(&k2, 0.5 * dt), u)?)?;
    let k4 = checked(f(dt, &s.advanced(&k3, dt), u)?)?;
    let next = rk4_combine(s, [&k1, &k2, &k3, &k4], dt);
    if !next.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(normalize_state(next, cfg))
}

/// A time-invariant prediction model usable inside controller rollouts.
pub trait Dynamics: Sync {
    fn derivative(&self, s: &VehicleState, u: &ControlInput) -> Result<StateDerivative>;

    /// Evaluates many (state, control) pairs at once. Implementations backed
    /// by neural networks override this to use matrix products.
    fn derivative_batch(
        &self,
        states: &[VehicleState],
        controls: &[ControlInput],
        out: &mut Vec<StateDerivative>,
    ) -> Result<()> {
        out.clear();
        for (s, u) in states.iter().zip(controls) {
            out.push(self.derivative(s, u)?);
        }
        Ok(())
    }

    fn vehicle(&self) -> &VehicleConfig;
}

#[derive(Debug, Clone, Copy)]
pub struct NominalModel {
    pub cfg: VehicleConfig,
}

impl NominalModel {
    pub fn new(cfg: VehicleConfig) -> Self {
        Self { cfg }
    }
}

impl Dynamics for NominalModel {
    fn derivative(&self, s: &VehicleState, u: &ControlInput) -> Result<StateDerivative> {
        nominal_derivative(s, u, &self.cfg)
    }

    fn vehicle(&self) -> &VehicleConfig {
        &self.cfg
    }
}

/// One RK4 step of a time-invariant model.
pub fn model_step<M: Dynamics + ?Sized>(
    model: &M,
    s: &VehicleState,
    u: &ControlInput,
    dt: f64,
) -> Result<VehicleState> {
    rk4_step(|_, x, u| model.derivative(x, u), s, u, dt, model.vehicle())
}

/// RK4 step of many states in lock-step, each with its own held control.
pub fn rk4_step_batch<M: Dynamics + ?Sized>(
    model: &M,
    states: &mut [VehicleState],
    controls: &[ControlInput],
    dt: f64,
) -> Result<()> {
    let n = states.len();
    let mut k = [vec![], vec![], vec![], vec![]];
    let mut stage: Vec<VehicleState> = states.to_vec();
    let offsets = [0.5 * dt, 0.5 * dt, dt];
    for i in 0..4 {
        if i > 0 {
            for j in 0..n {
                stage[j] = states[j].advanced(&k[i - 1][j], offsets[i - 1]);
            }
        }
        let mut out = Vec::with_capacity(n);
        model.derivative_batch(&stage, controls, &mut out)?;
        if out.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        k[i] = out;
    }
    let cfg = model.vehicle();
    for j in 0..n {
        let next = rk4_combine(&states[j], [&k[0][j], &k[1][j], &k[2][j], &k[3][j]], dt);
        if !next.is_finite() {
            return Err(Error::NonFiniteState);
        }
        states[j] = normalize_state(next, cfg);
    }
    Ok(())
}

/// The disturbed plant: nominal bicycle plus the time-varying drift.
#[derive(Debug, Clone, Copy)]
pub struct Plant {
    pub vehicle: VehicleConfig,
    pub disturbance: DisturbanceConfig,
}

impl Plant {
    pub fn new(vehicle: VehicleConfig, disturbance: DisturbanceConfig) -> Self {
        Self { vehicle, disturbance }
    }

    /// Advances the plant from time `t` by one sampling period, applying the
    /// admissible version of `u`. Returns the next state and the control that
    /// was actually applied.
    pub fn step(&self, s: &VehicleState, u: &ControlInput, t: f64) -> Result<(VehicleState, ControlInput)> {
        let applied = admissible_control(s, u, &self.vehicle);
        let cfg = &self.vehicle;
        let dist = &self.disturbance;
        let next = rk4_step(
            |tau, x, u| plant_derivative(x, u, t + tau, cfg, dist),
            s,
            &applied,
            cfg.dt,
            cfg,
        )?;
        Ok((next, applied))
    }
}
