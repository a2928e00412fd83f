//! Iterative data aggregation.
//!
//! Iteration 0 excites the disturbed plant with random controls and trains on
//! that data. Every later iteration deploys the current residual inside MPPI,
//! records on-policy episodes on the task path, appends them to the replay
//! buffer and retrains on the union.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, NominalModel, Plant, VehicleState};
use crate::error::{Error, Result};
use crate::icode::{loss_and_grad_unrolled, prediction_loss, FeatureScale, GradientBundle, IcodeModel, NetworkParams};
use crate::mppi::{CostConfig, MppiConfig};
use crate::paths::ReferencePath;
use crate::rng::{mix, unit_hash, Domain, StreamKey};
use crate::simulation::{run_episode, EpisodeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionSource {
    Random,
    Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: VehicleState,
    pub control: ControlInput,
    pub next_state: VehicleState,
    pub dt: f64,
    pub source: TransitionSource,
    /// Plant time at which `state` was sampled.
    pub time: f64,
}

impl Transition {
    pub fn new(
        state: VehicleState,
        control: ControlInput,
        next_state: VehicleState,
        dt: f64,
        source: TransitionSource,
        time: f64,
    ) -> Self {
        Self { state, control, next_state, dt, source, time }
    }

    /// A content hash, stable across runs and buffer positions.
    fn fingerprint(&self) -> u64 {
        let s = &self.state;
        [s.x, s.y, s.theta, s.v, s.delta, self.control.a, self.control.omega, self.time]
            .iter()
            .fold(self.source as u64, |h, v| mix(h, Domain::Holdout, v.to_bits()))
    }
}

/// Bounded FIFO of transitions; the oldest entries are evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    transitions: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { transitions: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    pub fn to_vec(&self) -> Vec<Transition> {
        self.transitions.iter().copied().collect()
    }

    pub fn count(&self, source: TransitionSource) -> usize {
        self.transitions.iter().filter(|t| t.source == source).count()
    }
}

pub fn aggregate(mut buffer: ReplayBuffer, new: Vec<Transition>) -> ReplayBuffer {
    for t in new {
        if buffer.capacity == 0 {
            break;
        }
        if buffer.transitions.len() == buffer.capacity {
            buffer.transitions.pop_front();
        }
        buffer.transitions.push_back(t);
    }
    buffer
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_per_iter: usize,
    pub n_random: usize,
    pub task_episodes_per_iter: usize,
    pub n_iterations: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub holdout_fraction: f64,
    pub capacity: usize,
    pub hidden: Vec<usize>,
    /// Consecutive steps unrolled per training window.
    pub unroll_steps: usize,
    /// Random-exploration controls are held for this many steps.
    pub random_hold_steps: usize,
    pub random_episode_steps: usize,
    /// Duration of each on-policy task episode.
    pub task_episode_duration: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 64,
            epochs_per_iter: 200,
            n_random: 2000,
            task_episodes_per_iter: 2,
            n_iterations: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            holdout_fraction: 0.1,
            capacity: 50_000,
            hidden: vec![256, 256],
            unroll_steps: 1,
            random_hold_steps: 10,
            random_episode_steps: 200,
            task_episode_duration: 60.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("train.lr > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("train.batch_size ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::invalid("0 ≤ train.holdout_fraction < 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("train.adam_beta1 and train.adam_beta2 in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("train.adam_eps > 0"));
        }
        if self.unroll_steps < 1 {
            return Err(Error::invalid("train.unroll_steps ≥ 1"));
        }
        if self.random_hold_steps < 1 || self.random_episode_steps < 1 {
            return Err(Error::invalid("train.random_hold_steps and train.random_episode_steps ≥ 1"));
        }
        if self.n_random < 1 {
            return Err(Error::invalid("train.n_random ≥ 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("train.hidden widths ≥ 1"));
        }
        if !(self.task_episode_duration > 0.0) {
            return Err(Error::invalid("train.task_episode_duration > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientBundle,
    pub v: GradientBundle,
    pub step: u64,
}

impl AdamState {
    pub fn new(p: &NetworkParams) -> Self {
        Self { m: GradientBundle::zeros_like(p), v: GradientBundle::zeros_like(p), step: 0 }
    }
}

pub fn adam_step(p: &mut NetworkParams, g: &GradientBundle, st: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let shapes = |s: Vec<&[f64]>| s.iter().map(|x| x.len()).collect::<Vec<_>>();
    let expected = shapes(p.slices());
    if shapes(g.slices()) != expected || shapes(st.m.slices()) != expected || shapes(st.v.slices()) != expected {
        return Err(Error::ShapeMismatch);
    }
    st.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(st.step as i32);
    let c2 = 1.0 - b2.powi(st.step as i32);
    let mut params = p.slices_mut();
    let mut m = st.m.slices_mut();
    let mut v = st.v.slices_mut();
    for (t, gt) in g.slices().into_iter().enumerate() {
        for i in 0..gt.len() {
            m[t][i] = b1 * m[t][i] + (1.0 - b1) * gt[i];
            v[t][i] = b2 * v[t][i] + (1.0 - b2) * gt[i] * gt[i];
            let mhat = m[t][i] / c1;
            let vhat = v[t][i] / c2;
            params[t][i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Random excitation of the disturbed plant: piecewise-constant uniform
/// controls from randomized initial states near `path`. An exploration
/// episode restarts when the state leaves the envelope or after
/// `random_episode_steps` steps.
pub fn collect_random(plant: &Plant, path: &ReferencePath, cfg: &TrainConfig, n: usize, key: StreamKey) -> Result<Vec<Transition>> {
    let v = &plant.vehicle;
    let margin = 5.0;
    let (x0, x1, y0, y1) = path.bounding_box();
    let mut out = Vec::with_capacity(n);
    let mut episode = 0u64;
    while out.len() < n {
        let mut rng = key.substream(Domain::Exploration, episode, 0);
        episode += 1;
        let mut s = VehicleState::new(
            rng.random_range(x0 - margin..=x1 + margin),
            rng.random_range(y0 - margin..=y1 + margin),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(0.0..=4.0),
            rng.random_range(-0.5..=0.5),
        );
        let mut t = rng.random_range(0.0..cfg.task_episode_duration);
        let mut u = ControlInput::default();
        for k in 0..cfg.random_episode_steps {
            if out.len() == n {
                break;
            }
            if k % cfg.random_hold_steps == 0 {
                u = ControlInput::new(rng.random_range(-v.a_max..=v.a_max), rng.random_range(-v.omega_max..=v.omega_max));
            }
            let (next, applied) = plant.step(&s, &u, t)?;
            out.push(Transition::new(s, applied, next, v.dt, TransitionSource::Random, t));
            s = next;
            t += v.dt;
            let outside = s.x < x0 - 2.0 * margin
                || s.x > x1 + 2.0 * margin
                || s.y < y0 - 2.0 * margin
                || s.y > y1 + 2.0 * margin;
            if outside || s.v < -1.0 || s.v > 6.0 || s.delta.abs() > 1.2 {
                break;
            }
        }
    }
    Ok(out)
}

/// Everything the aggregation loop needs to run task episodes.
#[derive(Debug, Clone)]
pub struct TaskSetup<'a> {
    pub plant: Plant,
    pub path: &'a ReferencePath,
    pub mppi: MppiConfig,
    pub cost: CostConfig,
}

/// Closed-loop episodes with MPPI over the given parameter snapshot (or the
/// nominal model when `params` is `None`). Episode `i` uses the stream
/// `first_episode + i`.
pub fn collect_task(
    setup: &TaskSetup<'_>,
    params: Option<Arc<NetworkParams>>,
    n_episodes: usize,
    duration: f64,
    key: StreamKey,
    first_episode: u64,
) -> Result<Vec<Transition>> {
    let spec = EpisodeSpec { duration, start_time: 0.0 };
    let mut out = Vec::new();
    for i in 0..n_episodes as u64 {
        let ep_key = key.child(Domain::TaskEpisode, first_episode + i);
        let rec = match &params {
            Some(p) => run_episode(&setup.plant, IcodeModel::new(p.clone(), setup.plant.vehicle), setup.path, &setup.mppi, &setup.cost, ep_key, spec)?,
            None => run_episode(&setup.plant, NominalModel::new(setup.plant.vehicle), setup.path, &setup.mppi, &setup.cost, ep_key, spec)?,
        };
        out.extend(rec.transitions(TransitionSource::Task));
    }
    Ok(out)
}

/// Deterministic holdout membership. Each source is split separately by the
/// same fraction, and a transition keeps its side across iterations.
pub fn is_holdout(t: &Transition, seed: u64, fraction: f64) -> bool {
    fraction > 0.0 && unit_hash(seed, Domain::Holdout, t.fingerprint()) < fraction
}

pub fn split_holdout(transitions: &[Transition], seed: u64, fraction: f64) -> (Vec<Transition>, Vec<Transition>) {
    transitions.iter().partition(|t| !is_holdout(t, seed, fraction))
}

/// Training windows of `steps` consecutive transitions, chained by
/// `next_state == state`.
fn windows(train: &[Transition], steps: usize) -> Vec<&[Transition]> {
    if steps == 1 {
        return train.chunks(1).collect();
    }
    (0..train.len().saturating_sub(steps - 1))
        .filter(|&i| (i..i + steps - 1).all(|j| train[j].next_state == train[j + 1].state && train[j].dt == train[j + 1].dt))
        .map(|i| &train[i..i + steps])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    /// Mean mini-batch loss per epoch.
    pub loss_curve: Vec<f64>,
    pub holdout_loss_combined: f64,
    pub holdout_loss_nominal: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// Runs `epochs_per_iter` epochs of shuffled mini-batches over the training
/// part of `buffer`, then scores the holdout part once.
pub fn train_iteration(
    p: &mut NetworkParams,
    adam: &mut AdamState,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    key: StreamKey,
    iteration: u64,
    vehicle: &crate::dynamics::VehicleConfig,
) -> Result<IterationOutcome> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let all = buffer.to_vec();
    let (train, holdout) = split_holdout(&all, key.seed, cfg.holdout_fraction);
    let wins = windows(&train, cfg.unroll_steps);
    let mut order: Vec<usize> = (0..wins.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs_per_iter);
    for epoch in 0..cfg.epochs_per_iter {
        if wins.is_empty() {
            break;
        }
        let mut rng = key.substream(Domain::Shuffle, iteration, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[Transition]> = chunk.iter().map(|&i| wins[i]).collect();
            let (loss, grads) = loss_and_grad_unrolled(p, &batch, vehicle)?;
            if !grads.is_finite() {
                return Err(Error::NonFiniteState);
            }
            adam_step(p, &grads, adam, cfg)?;
            total += loss;
            batches += 1;
        }
        loss_curve.push(total / batches as f64);
    }
    let (combined, nominal) = if holdout.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let snapshot = Arc::new(p.clone());
        (prediction_loss(Some(&snapshot), &holdout, vehicle)?, prediction_loss(None, &holdout, vehicle)?)
    };
    Ok(IterationOutcome {
        loss_curve,
        holdout_loss_combined: combined,
        holdout_loss_nominal: nominal,
        n_train: train.len(),
        n_holdout: holdout.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub buffer_size: usize,
    pub n_task: usize,
    pub train_loss_final: f64,
    pub holdout_loss_combined: f64,
    pub holdout_loss_nominal: f64,
}

pub struct TrainingRun {
    pub params: NetworkParams,
    pub metrics: Vec<IterationMetrics>,
    /// Parameter snapshot after each iteration, iteration 0 first.
    pub snapshots: Vec<Arc<NetworkParams>>,
    pub buffer: ReplayBuffer,
}

/// The full collect / aggregate / train / redeploy loop. `on_iteration` is
/// called after every iteration with the finished snapshot, e.g. to persist
/// it.
pub fn run_training_loop<F>(setup: &TaskSetup<'_>, cfg: &TrainConfig, seed: u64, mut on_iteration: F) -> Result<TrainingRun>
where
    F: FnMut(&IterationMetrics, &NetworkParams) -> Result<()>,
{
    cfg.validate()?;
    let key = StreamKey::new(seed);
    let vehicle = setup.plant.vehicle;
    let mut init_rng = key.substream(Domain::Init, 0, 0);
    let mut params = NetworkParams::new(&cfg.hidden, FeatureScale::for_vehicle(&vehicle), &mut init_rng);
    let mut adam = AdamState::new(&params);
    let mut buffer = ReplayBuffer::new(cfg.capacity);
    let mut metrics = Vec::new();
    let mut snapshots = Vec::new();
    if cfg.n_iterations == 0 {
        return Ok(TrainingRun { params, metrics, snapshots, buffer });
    }
    for iteration in 0..=cfg.n_iterations {
        let new = if iteration == 0 {
            collect_random(&setup.plant, setup.path, cfg, cfg.n_random, key.child(Domain::Exploration, 0))?
        } else {
            let deployed = snapshots.last().cloned();
            let first = ((iteration - 1) * cfg.task_episodes_per_iter) as u64;
            collect_task(setup, deployed, cfg.task_episodes_per_iter, cfg.task_episode_duration, key, first)?
        };
        buffer = aggregate(buffer, new);
        let outcome = train_iteration(&mut params, &mut adam, &buffer, cfg, key, iteration as u64, &vehicle)?;
        let m = IterationMetrics {
            iteration,
            buffer_size: buffer.len(),
            n_task: buffer.count(TransitionSource::Task),
            train_loss_final: outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
            holdout_loss_combined: outcome.holdout_loss_combined,
            holdout_loss_nominal: outcome.holdout_loss_nominal,
        };
        on_iteration(&m, &params)?;
        metrics.push(m);
        snapshots.push(Arc::new(params.clone()));
    }
    Ok(TrainingRun { params, metrics, snapshots, buffer })
}
