//! Control-affine neural residual
//!
//! ```text
//! f_res(x, u) = f(x) + G(x) u,   G(x) in R^{5 x 2}
//! ```
//!
//! `f` and `G` are two separate Softplus MLPs over a normalized encoding of
//! the state. The prediction model used by the controller is the nominal
//! bicycle plus this residual.

mod checkpoint;
mod grad;
mod mlp;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    nominal_derivative, rk4_step, ControlInput, Dynamics, StateDerivative, VehicleConfig, VehicleState,
};
use crate::error::{Error, Result};

pub use checkpoint::{checkpoint_from_json, checkpoint_to_json, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use grad::{loss_and_grad, loss_and_grad_unrolled, prediction_loss};
pub use mlp::{mlp_forward, softplus, Dense, Mlp};

pub const FEATURE_DIM: usize = 6;
pub const STATE_DIM: usize = 5;
pub const CONTROL_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub pos_x: f64,
    pub pos_y: f64,
    pub speed: f64,
    pub steer: f64,
}

impl FeatureScale {
    pub fn for_vehicle(cfg: &VehicleConfig) -> Self {
        Self { pos_x: 10.0, pos_y: 10.0, speed: 5.0, steer: cfg.delta_max }
    }

    /// `[x/sx, y/sy, sin(theta), cos(theta), v/sv, delta/sd]`
    pub fn encode(&self, s: &VehicleState) -> [f64; FEATURE_DIM] {
        let (sin, cos) = s.theta.sin_cos();
        [s.x / self.pos_x, s.y / self.pos_y, sin, cos, s.v / self.speed, s.delta / self.steer]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// Drift net `f`, mapping features to 5 outputs.
    pub drift: Mlp,
    /// Gain net `G`, mapping features to 10 outputs read row-major as 5 x 2.
    pub gain: Mlp,
    pub feature_scale: FeatureScale,
}

/// Per-parameter gradients, shaped like the networks they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub drift: Mlp,
    pub gain: Mlp,
}

impl GradientBundle {
    pub fn zeros_like(p: &NetworkParams) -> Self {
        Self { drift: p.drift.zeros_like(), gain: p.gain.zeros_like() }
    }

    pub fn is_finite(&self) -> bool {
        self.drift.is_finite() && self.gain.is_finite()
    }

    /// All parameter slices in a fixed order: drift layers then gain layers,
    /// weight before bias.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.drift.slices();
        v.extend(self.gain.slices());
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.drift.slices_mut();
        v.extend(self.gain.slices_mut());
        v
    }
}

impl NetworkParams {
    /// Hidden layers get fan-in scaled uniform weights; both output layers
    /// start at zero so the residual is exactly zero after initialization.
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], feature_scale: FeatureScale, rng: &mut R) -> Self {
        let dims = |out: usize| {
            let mut d = vec![FEATURE_DIM];
            d.extend_from_slice(hidden);
            d.push(out);
            d
        };
        let mut drift = Mlp::random(&dims(STATE_DIM), rng);
        let mut gain = Mlp::random(&dims(STATE_DIM * CONTROL_DIM), rng);
        drift.zero_output_layer();
        gain.zero_output_layer();
        Self { drift, gain, feature_scale }
    }

    pub fn validate(&self) -> Result<()> {
        for (net, out) in [(&self.drift, STATE_DIM), (&self.gain, STATE_DIM * CONTROL_DIM)] {
            net.validate()?;
            if net.input_dim() != FEATURE_DIM {
                return Err(Error::DimensionMismatch { expected: FEATURE_DIM, got: net.input_dim() });
            }
            if net.output_dim() != out {
                return Err(Error::DimensionMismatch { expected: out, got: net.output_dim() });
            }
        }
        if !(self.drift.is_finite() && self.gain.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.drift.slices();
        v.extend(self.gain.slices());
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.drift.slices_mut();
        v.extend(self.gain.slices_mut());
        v
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn features(&self, states: &[VehicleState]) -> Array2<f64> {
        let mut f = Array2::zeros((states.len(), FEATURE_DIM));
        for (mut row, s) in f.rows_mut().into_iter().zip(states) {
            for (dst, v) in row.iter_mut().zip(self.feature_scale.encode(s)) {
                *dst = v;
            }
        }
        f
    }

    /// Residual derivatives for a batch, one row per state.
    pub fn residual_batch(&self, states: &[VehicleState], controls: &[ControlInput]) -> Array2<f64> {
        let feats = self.features(states);
        self.residual_from_features(feats.view(), controls)
    }

    fn residual_from_features(&self, feats: ArrayView2<'_, f64>, controls: &[ControlInput]) -> Array2<f64> {
        let mut out = self.drift.forward(feats);
        let gains = self.gain.forward(feats);
        for ((mut row, g), u) in out.rows_mut().into_iter().zip(gains.rows()).zip(controls) {
            for r in 0..STATE_DIM {
                row[r] += g[r * CONTROL_DIM] * u.a + g[r * CONTROL_DIM + 1] * u.omega;
            }
        }
        out
    }
}

fn row_to_derivative(row: ndarray::ArrayView1<'_, f64>) -> StateDerivative {
    StateDerivative::from_array([row[0], row[1], row[2], row[3], row[4]])
}

pub fn residual_derivative(p: &NetworkParams, s: &VehicleState, u: &ControlInput) -> Result<StateDerivative> {
    let out = p.residual_batch(std::slice::from_ref(s), std::slice::from_ref(u));
    Ok(row_to_derivative(out.row(0)))
}

pub fn combined_derivative(
    p: &NetworkParams,
    s: &VehicleState,
    u: &ControlInput,
    cfg: &VehicleConfig,
) -> Result<StateDerivative> {
    Ok(nominal_derivative(s, u, cfg)? + residual_derivative(p, s, u)?)
}

/// One RK4 step over the nominal plus residual field.
pub fn predict_next(
    p: &NetworkParams,
    s: &VehicleState,
    u: &ControlInput,
    dt: f64,
    cfg: &VehicleConfig,
) -> Result<VehicleState> {
    rk4_step(|_, x, u| combined_derivative(p, x, u, cfg), s, u, dt, cfg)
}

/// Nominal plus learned residual, holding a frozen parameter snapshot.
#[derive(Debug, Clone)]
pub struct IcodeModel {
    pub params: Arc<NetworkParams>,
    pub cfg: VehicleConfig,
}

impl IcodeModel {
    pub fn new(params: Arc<NetworkParams>, cfg: VehicleConfig) -> Self {
        Self { params, cfg }
    }
}

impl Dynamics for IcodeModel {
    fn derivative(&self, s: &VehicleState, u: &ControlInput) -> Result<StateDerivative> {
        combined_derivative(&self.params, s, u, &self.cfg)
    }

    fn derivative_batch(
        &self,
        states: &[VehicleState],
        controls: &[ControlInput],
        out: &mut Vec<StateDerivative>,
    ) -> Result<()> {
        let res = self.params.residual_batch(states, controls);
        out.clear();
        for ((s, u), r) in states.iter().zip(controls).zip(res.rows()) {
            out.push(nominal_derivative(s, u, &self.cfg)? + row_to_derivative(r));
        }
        Ok(())
    }

    fn vehicle(&self) -> &VehicleConfig {
        &self.cfg
    }
}

/// Either prediction model the controller can run with.
#[derive(Debug, Clone)]
pub enum PredictionModel {
    Nominal(crate::dynamics::NominalModel),
    Icode(IcodeModel),
}

impl Dynamics for PredictionModel {
    fn derivative(&self, s: &VehicleState, u: &ControlInput) -> Result<StateDerivative> {
        match self {
            PredictionModel::Nominal(m) => m.derivative(s, u),
            PredictionModel::Icode(m) => m.derivative(s, u),
        }
    }

    fn derivative_batch(
        &self,
        states: &[VehicleState],
        controls: &[ControlInput],
        out: &mut Vec<StateDerivative>,
    ) -> Result<()> {
        match self {
            PredictionModel::Nominal(m) => m.derivative_batch(states, controls, out),
            PredictionModel::Icode(m) => m.derivative_batch(states, controls, out),
        }
    }

    fn vehicle(&self) -> &VehicleConfig {
        match self {
            PredictionModel::Nominal(m) => m.vehicle(),
            PredictionModel::Icode(m) => m.vehicle(),
        }
    }
}
