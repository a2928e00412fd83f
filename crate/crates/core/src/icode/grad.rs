//! Prediction loss and its exact gradient.
//!
//! The loss is the mean squared error between recorded next states and the
//! RK4 prediction over the nominal plus residual field. Gradients are obtained
//! by running the reverse pass by hand through the four RK4 stages, the
//! nominal bicycle Jacobian, the feature encoding and both MLPs.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use super::mlp::MlpTrace;
use super::{GradientBundle, IcodeModel, NetworkParams, CONTROL_DIM, FEATURE_DIM, STATE_DIM};
use crate::dynamics::{
    rk4_step_batch, wrap_angle, ControlInput, Dynamics, NominalModel, VehicleConfig, VehicleState,
    STEERING_SINGULARITY_MARGIN,
};
use crate::error::{Error, Result};
use crate::training::Transition;

const TH: usize = 2;
const V: usize = 3;
const DE: usize = 4;

struct StageTrace {
    states: Array2<f64>,
    drift: MlpTrace,
    gain: MlpTrace,
}

struct StepTrace {
    controls: Array2<f64>,
    stages: Vec<StageTrace>,
    /// Rows whose predicted steering angle was clamped.
    clamped: Vec<bool>,
}

fn state_row(s: &VehicleState) -> [f64; 5] {
    s.to_array()
}

fn encode_rows(p: &NetworkParams, states: &Array2<f64>) -> Array2<f64> {
    let sc = &p.feature_scale;
    let mut f = Array2::zeros((states.nrows(), FEATURE_DIM));
    for (mut dst, s) in f.rows_mut().into_iter().zip(states.rows()) {
        let (sin, cos) = s[TH].sin_cos();
        dst[0] = s[0] / sc.pos_x;
        dst[1] = s[1] / sc.pos_y;
        dst[2] = sin;
        dst[3] = cos;
        dst[4] = s[V] / sc.speed;
        dst[5] = s[DE] / sc.steer;
    }
    f
}

fn nominal_row(s: ArrayView1<'_, f64>, u: ArrayView1<'_, f64>, cfg: &VehicleConfig) -> Result<[f64; 5]> {
    if !(s[DE].abs() < std::f64::consts::FRAC_PI_2 - 0.5 * STEERING_SINGULARITY_MARGIN) {
        return Err(Error::SingularSteering { delta: s[DE] });
    }
    let (sin, cos) = s[TH].sin_cos();
    Ok([s[V] * cos, s[V] * sin, s[V] / cfg.wheelbase * s[DE].tan(), u[0], u[1]])
}

fn stage_forward(
    p: &NetworkParams,
    states: Array2<f64>,
    controls: &Array2<f64>,
    cfg: &VehicleConfig,
) -> Result<(Array2<f64>, StageTrace)> {
    let feats = encode_rows(p, &states);
    let (mut k, drift) = p.drift.forward_traced(feats.clone());
    let (g, gain) = p.gain.forward_traced(feats);
    for b in 0..states.nrows() {
        let nom = nominal_row(states.row(b), controls.row(b), cfg)?;
        for r in 0..STATE_DIM {
            k[[b, r]] += nom[r]
                + g[[b, r * CONTROL_DIM]] * controls[[b, 0]]
                + g[[b, r * CONTROL_DIM + 1]] * controls[[b, 1]];
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    Ok((k, StageTrace { states, drift, gain }))
}

/// Pulls the adjoint of a stage derivative back to the stage state,
/// accumulating parameter gradients on the way.
fn stage_backward(
    p: &NetworkParams,
    trace: &StageTrace,
    controls: &Array2<f64>,
    gk: &Array2<f64>,
    cfg: &VehicleConfig,
    grads: &mut GradientBundle,
) -> Array2<f64> {
    let n = gk.nrows();
    let mut g_gain = Array2::zeros((n, STATE_DIM * CONTROL_DIM));
    for b in 0..n {
        for r in 0..STATE_DIM {
            for j in 0..CONTROL_DIM {
                g_gain[[b, r * CONTROL_DIM + j]] = gk[[b, r]] * controls[[b, j]];
            }
        }
    }
    let g_feat = p.drift.backward(&trace.drift, gk.clone(), &mut grads.drift)
        + p.gain.backward(&trace.gain, g_gain, &mut grads.gain);

    let sc = &p.feature_scale;
    let mut gs = Array2::zeros((n, STATE_DIM));
    for b in 0..n {
        let s = trace.states.row(b);
        let (sin, cos) = s[TH].sin_cos();
        let (tan, sec2) = (s[DE].tan(), 1.0 / s[DE].cos().powi(2));
        let l = cfg.wheelbase;
        let gf = g_feat.row(b);
        let g = gk.row(b);
        gs[[b, 0]] = gf[0] / sc.pos_x;
        gs[[b, 1]] = gf[1] / sc.pos_y;
        gs[[b, TH]] = gf[2] * cos - gf[3] * sin + (-s[V] * sin * g[0] + s[V] * cos * g[1]);
        gs[[b, V]] = gf[4] / sc.speed + cos * g[0] + sin * g[1] + tan / l * g[2];
        gs[[b, DE]] = gf[5] / sc.steer + s[V] / l * sec2 * g[2];
    }
    gs
}

/// One-step loss over a batch of transitions, with gradients for every
/// parameter of both networks.
pub fn loss_and_grad(
    p: &NetworkParams,
    batch: &[Transition],
    cfg: &VehicleConfig,
) -> Result<(f64, GradientBundle)> {
    let windows: Vec<&[Transition]> = batch.chunks(1).collect();
    loss_and_grad_unrolled(p, &windows, cfg)
}

/// Multi-step variant: every window is a run of consecutive transitions and
/// the model is rolled forward from the first state using the recorded
/// controls. The loss averages over all windows and steps.
pub fn loss_and_grad_unrolled(
    p: &NetworkParams,
    windows: &[&[Transition]],
    cfg: &VehicleConfig,
) -> Result<(f64, GradientBundle)> {
    let n = windows.len();
    let steps = windows.first().map_or(0, |w| w.len());
    if n == 0 || steps == 0 {
        return Err(Error::EmptyBatch);
    }
    if windows.iter().any(|w| w.len() != steps) {
        return Err(Error::DimensionMismatch { expected: steps, got: windows.iter().map(|w| w.len()).min().unwrap() });
    }
    let dt = windows[0][0].dt;
    if windows.iter().flat_map(|w| w.iter()).any(|t| t.dt != dt) {
        return Err(Error::invalid("all transitions in a batch must share dt"));
    }
    let lim = cfg.steering_limit();
    let scale = 1.0 / (n * steps) as f64;

    // The rollout is tracked as a deviation from the recorded states. Errors
    // are then formed from small quantities, (recorded - target) + deviation
    // + increment, instead of differences of absolute positions, which keeps
    // the loss accurate to close to machine precision in its own magnitude.
    let mut dev: Array2<f64> = Array2::zeros((n, STATE_DIM));
    let mut loss = 0.0;
    let mut traces: Vec<StepTrace> = Vec::with_capacity(steps);
    let mut residuals: Vec<Array2<f64>> = Vec::with_capacity(steps);
    for j in 0..steps {
        let mut controls = Array2::zeros((n, CONTROL_DIM));
        let mut recorded = Array2::zeros((n, STATE_DIM));
        for b in 0..n {
            controls[[b, 0]] = windows[b][j].control.a;
            controls[[b, 1]] = windows[b][j].control.omega;
            recorded.row_mut(b).assign(&ArrayView1::from(&state_row(&windows[b][j].state)));
        }
        let x = &recorded + &dev;
        let mut stages = Vec::with_capacity(4);
        let (k1, t1) = stage_forward(p, x.clone(), &controls, cfg)?;
        stages.push(t1);
        let (k2, t2) = stage_forward(p, &x + &(&k1 * (0.5 * dt)), &controls, cfg)?;
        stages.push(t2);
        let (k3, t3) = stage_forward(p, &x + &(&k2 * (0.5 * dt)), &controls, cfg)?;
        stages.push(t3);
        let (k4, t4) = stage_forward(p, &x + &(&k3 * dt), &controls, cfg)?;
        stages.push(t4);
        let inc = (&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (dt / 6.0);
        if inc.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        let mut clamped = vec![false; n];
        let mut err = Array2::zeros((n, STATE_DIM));
        for b in 0..n {
            let target = windows[b][j].next_state.to_array();
            for r in 0..STATE_DIM {
                let gap = recorded[[b, r]] - target[r];
                err[[b, r]] = if r == TH { wrap_angle(gap + dev[[b, r]] + inc[[b, r]]) } else { gap + dev[[b, r]] + inc[[b, r]] };
            }
            let d = recorded[[b, DE]] + dev[[b, DE]] + inc[[b, DE]];
            if d.abs() > lim {
                err[[b, DE]] = d.clamp(-lim, lim) - target[DE];
                clamped[b] = true;
            }
            for r in 0..STATE_DIM {
                loss += err[[b, r]] * err[[b, r]] * scale;
            }
        }
        if j + 1 < steps {
            // Deviation of the prediction from the next recorded state; for
            // chained windows the recorded gap is exactly zero.
            for b in 0..n {
                let (target, following) = (windows[b][j].next_state.to_array(), state_row(&windows[b][j + 1].state));
                for r in 0..STATE_DIM {
                    let gap = target[r] - following[r];
                    dev[[b, r]] = if r == TH { wrap_angle(err[[b, r]] + gap) } else { err[[b, r]] + gap };
                }
            }
        }
        residuals.push(err);
        traces.push(StepTrace { controls, stages, clamped });
    }

    let mut grads = GradientBundle::zeros_like(p);
    let mut carry: Array2<f64> = Array2::zeros((n, STATE_DIM));
    for j in (0..steps).rev() {
        let tr = &traces[j];
        let mut g = &carry + &(&residuals[j] * (2.0 * scale));
        for b in 0..n {
            if tr.clamped[b] {
                g[[b, DE]] = 0.0;
            }
        }
        let u = &tr.controls;
        let mut gx = g.clone();
        let g_s4 = stage_backward(p, &tr.stages[3], u, &(&g * (dt / 6.0)), cfg, &mut grads);
        gx += &g_s4;
        let gk3 = &g * (dt / 3.0) + &(&g_s4 * dt);
        let g_s3 = stage_backward(p, &tr.stages[2], u, &gk3, cfg, &mut grads);
        gx += &g_s3;
        let gk2 = &g * (dt / 3.0) + &(&g_s3 * (0.5 * dt));
        let g_s2 = stage_backward(p, &tr.stages[1], u, &gk2, cfg, &mut grads);
        gx += &g_s2;
        let gk1 = &g * (dt / 6.0) + &(&g_s2 * (0.5 * dt));
        let g_s1 = stage_backward(p, &tr.stages[0], u, &gk1, cfg, &mut grads);
        gx += &g_s1;
        carry = gx;
    }
    Ok((loss, grads))
}

/// Mean squared one-step prediction error without gradients. `None` scores
/// the nominal model alone.
pub fn prediction_loss(params: Option<&Arc<NetworkParams>>, batch: &[Transition], cfg: &VehicleConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut states: Vec<VehicleState> = batch.iter().map(|t| t.state).collect();
    let controls: Vec<ControlInput> = batch.iter().map(|t| t.control).collect();
    let dt = batch[0].dt;
    match params {
        Some(p) => rk4_step_batch(&IcodeModel::new(p.clone(), *cfg), &mut states, &controls, dt)?,
        None => rk4_step_batch(&NominalModel::new(*cfg) as &dyn Dynamics, &mut states, &controls, dt)?,
    }
    let total: f64 = states
        .iter()
        .zip(batch)
        .map(|(pred, t)| pred.error_to(&t.next_state).iter().map(|e| e * e).sum::<f64>())
        .sum();
    Ok(total / batch.len() as f64)
}
