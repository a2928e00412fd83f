//! Tracking and smoothness metrics: per-axis RMSE against the matched
//! reference, boxplot summaries of absolute errors and normalized histograms
//! of control rates.

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, ControlInput, VehicleState};
use crate::error::{Error, Result};
use crate::paths::{nearest_reference, PathPoint, ReferencePath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingRmse {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub cross_track: f64,
}

/// Per-step signed tracking errors against the matched reference point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrors {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub yaw: Vec<f64>,
    pub cross_track: Vec<f64>,
}

/// Matches every state to the path with monotone progress from index 0.
pub fn match_reference(states: &[VehicleState], path: &ReferencePath) -> Vec<(usize, PathPoint)> {
    let mut prev = 0;
    states
        .iter()
        .map(|s| {
            let m = nearest_reference(path, (s.x, s.y), prev);
            prev = m.0;
            m
        })
        .collect()
}

pub fn errors_against(states: &[VehicleState], refs: &[PathPoint]) -> TrackingErrors {
    let mut e = TrackingErrors::default();
    for (s, r) in states.iter().zip(refs) {
        let (dx, dy) = (s.x - r.x, s.y - r.y);
        e.x.push(dx);
        e.y.push(dy);
        e.yaw.push(wrap_angle(s.theta - r.theta));
        e.cross_track.push(-r.theta.sin() * dx + r.theta.cos() * dy);
    }
    e
}

pub fn tracking_errors(states: &[VehicleState], path: &ReferencePath) -> TrackingErrors {
    let refs: Vec<PathPoint> = match_reference(states, path).into_iter().map(|(_, p)| p).collect();
    errors_against(states, &refs)
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
}

impl TrackingErrors {
    pub fn rmse(&self) -> Result<TrackingRmse> {
        if self.x.is_empty() {
            return Err(Error::EmptySeries);
        }
        Ok(TrackingRmse { x: rms(&self.x), y: rms(&self.y), yaw: rms(&self.yaw), cross_track: rms(&self.cross_track) })
    }
}

pub fn compute_rmse(actual: &[VehicleState], path: &ReferencePath) -> Result<TrackingRmse> {
    if actual.is_empty() {
        return Err(Error::EmptySeries);
    }
    tracking_errors(actual, path).rmse()
}

/// Boxplot statistics. Quartiles use linear interpolation between order
/// statistics; whiskers reach the furthest samples within 1.5 IQR of the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub median: f64,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn distribution_summary(errors: &[f64]) -> Result<DistributionSummary> {
    if errors.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = sorted.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence);
    let whisker_low = inside.clone().fold(f64::INFINITY, f64::min);
    let whisker_high = inside.fold(f64::NEG_INFINITY, f64::max);
    Ok(DistributionSummary {
        median: quantile_sorted(&sorted, 0.5),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers: sorted.iter().filter(|v| **v < lo_fence || **v > hi_fence).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateHistogram {
    /// `n_bins + 1` edges over `[-bound, bound]`.
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Density of the bin containing zero.
    pub zero_peak: f64,
    /// Population standard deviation of the rate series.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRateDensity {
    pub accel: RateHistogram,
    pub steer: RateHistogram,
}

pub fn control_rates(controls: &[ControlInput], dt: f64) -> (Vec<f64>, Vec<f64>) {
    controls
        .windows(2)
        .map(|w| ((w[1].a - w[0].a) / dt, (w[1].omega - w[0].omega) / dt))
        .unzip()
}

pub fn rate_histogram(rates: &[f64], n_bins: usize) -> RateHistogram {
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let std = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max_abs = rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let bound = if max_abs > 0.0 { max_abs } else { 1.0 };
    let width = 2.0 * bound / n_bins as f64;
    let edges = (0..=n_bins).map(|i| -bound + width * i as f64).collect();
    let bin_of = |r: f64| (((r + bound) / width).floor() as usize).min(n_bins - 1);
    let mut counts = vec![0usize; n_bins];
    for r in rates {
        counts[bin_of(*r)] += 1;
    }
    let density: Vec<f64> = counts.iter().map(|c| *c as f64 / (n * width)).collect();
    let zero_peak = density[bin_of(0.0)];
    RateHistogram { edges, density, zero_peak, std }
}

pub fn control_rate_density(controls: &[ControlInput], dt: f64, n_bins: usize) -> Result<ControlRateDensity> {
    if controls.len() < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: controls.len() });
    }
    let (accel, steer) = control_rates(controls, dt);
    Ok(ControlRateDensity { accel: rate_histogram(&accel, n_bins), steer: rate_histogram(&steer, n_bins) })
}
