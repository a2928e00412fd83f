//! Closed-loop episodes: the disturbed plant driven by an MPPI controller.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, Dynamics, Plant, VehicleConfig, VehicleState};
use crate::error::{Error, Result};
use crate::mppi::{CostConfig, MppiConfig, MppiController, StepDiagnostics};
use crate::paths::{PathPoint, ReferencePath};
use crate::rng::StreamKey;
use crate::training::{Transition, TransitionSource};

/// One row per control step. `states` has one more entry than the other
/// series: the state reached after the last command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub times: Vec<f64>,
    pub states: Vec<VehicleState>,
    pub references: Vec<PathPoint>,
    pub commands: Vec<ControlInput>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub dt: f64,
}

impl EpisodeRecord {
    pub fn steps(&self) -> usize {
        self.commands.len()
    }

    /// States at which each command was computed.
    pub fn visited_states(&self) -> &[VehicleState] {
        &self.states[..self.steps()]
    }

    pub fn transitions(&self, source: TransitionSource) -> Vec<Transition> {
        (0..self.steps())
            .map(|i| Transition::new(self.states[i], self.commands[i], self.states[i + 1], self.dt, source, self.times[i]))
            .collect()
    }
}

/// On the path at its first point, aligned with it, at the reference speed
/// and with the steering angle that matches the local curvature.
pub fn initial_state(path: &ReferencePath, vehicle: &VehicleConfig, speed: f64) -> VehicleState {
    let p = path.points[0];
    let delta = (vehicle.wheelbase * path.curvature_at(0)).atan().clamp(-vehicle.steering_limit(), vehicle.steering_limit());
    VehicleState::new(p.x, p.y, p.theta, speed, delta)
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeSpec {
    pub duration: f64,
    pub start_time: f64,
}

/// Runs the plant under MPPI with `model` as the prediction model. Open
/// paths stop early once the matched reference reaches their last point.
pub fn run_episode<M: Dynamics>(
    plant: &Plant,
    model: M,
    path: &ReferencePath,
    mppi: &MppiConfig,
    cost: &CostConfig,
    key: StreamKey,
    spec: EpisodeSpec,
) -> Result<EpisodeRecord> {
    if !(spec.duration.is_finite() && spec.duration > 0.0) {
        return Err(Error::invalid("episode_duration > 0"));
    }
    let dt = plant.vehicle.dt;
    let n_steps = (spec.duration / dt).round() as usize;
    let mut ctrl = MppiController::new(model, path, *mppi, *cost, key);
    let mut x = initial_state(path, &plant.vehicle, cost.ref_speed);
    let mut rec = EpisodeRecord {
        times: Vec::with_capacity(n_steps),
        states: vec![x],
        references: Vec::with_capacity(n_steps),
        commands: Vec::with_capacity(n_steps),
        diagnostics: Vec::with_capacity(n_steps),
        dt,
    };
    for i in 0..n_steps {
        let t = spec.start_time + i as f64 * dt;
        let (u, r, diag) = ctrl.control(&x)?;
        let (next, applied) = plant.step(&x, &u, t)?;
        rec.times.push(t);
        rec.references.push(r);
        rec.commands.push(applied);
        rec.diagnostics.push(diag);
        rec.states.push(next);
        x = next;
        if !path.closed && ctrl.progress() + 1 >= path.len() {
            break;
        }
    }
    Ok(rec)
}
