//! Reference paths and the monotone-progress nearest-point matcher.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub points: Vec<PathPoint>,
    /// Cumulative arc length at each point, starting at zero.
    pub arc_length: Vec<f64>,
    /// Closed paths do not repeat their first point at the end.
    pub closed: bool,
}

impl ReferencePath {
    fn from_samples(points: Vec<PathPoint>, closed: bool) -> Self {
        assert!(points.len() >= 2, "a path needs at least two points");
        let mut arc_length = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        arc_length.push(0.0);
        for w in points.windows(2) {
            acc += (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            arc_length.push(acc);
        }
        Self { points, arc_length, closed }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Length including the closing segment on closed paths.
    pub fn total_length(&self) -> f64 {
        let last = *self.arc_length.last().unwrap();
        if self.closed {
            let (a, b) = (self.points[self.len() - 1], self.points[0]);
            last + (a.x - b.x).hypot(a.y - b.y)
        } else {
            last
        }
    }

    /// Number of points scanned forward by [`nearest_reference`].
    pub fn search_window(&self) -> usize {
        (self.len() / 4).max(1)
    }

    /// Signed curvature at a point from the heading change across neighbours.
    pub fn curvature_at(&self, i: usize) -> f64 {
        let n = self.len();
        let (prev, next) = if self.closed {
            ((i + n - 1) % n, (i + 1) % n)
        } else {
            (i.saturating_sub(1), (i + 1).min(n - 1))
        };
        let seg = |a: usize, b: usize| {
            let (p, q) = (self.points[a], self.points[b]);
            (q.x - p.x).hypot(q.y - p.y)
        };
        let ds = seg(prev, i) + seg(i, next);
        if ds <= 0.0 {
            return 0.0;
        }
        wrap_angle(self.points[next].theta - self.points[prev].theta) / ds
    }

    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(x0, x1, y0, y1), p| (x0.min(p.x), x1.max(p.x), y0.min(p.y), y1.max(p.y)),
        )
    }

    /// Steps of forward progress from `from` to `to` (modulo wrap when closed).
    pub fn progress_between(&self, from: usize, to: usize) -> usize {
        if self.closed {
            (to + self.len() - from) % self.len()
        } else {
            to.saturating_sub(from)
        }
    }
}

/// Ellipse `(a cos phi, b sin phi)`, sampled uniformly in `phi`.
pub fn make_ellipse(a_axis: f64, b_axis: f64, n_points: usize) -> ReferencePath {
    assert!(a_axis > 0.0 && b_axis > 0.0 && n_points >= 8);
    let points = (0..n_points)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / n_points as f64;
            PathPoint {
                x: a_axis * phi.cos(),
                y: b_axis * phi.sin(),
                theta: (b_axis * phi.cos()).atan2(-a_axis * phi.sin()),
            }
        })
        .collect();
    ReferencePath::from_samples(points, true)
}

/// Sine wave `(s, A sin(2 pi s / wavelength))` for `s` in `[0, length]`.
pub fn make_sine(length: f64, amplitude: f64, wavelength: f64, n_points: usize) -> ReferencePath {
    assert!(length > 0.0 && amplitude >= 0.0 && wavelength > 0.0 && n_points >= 2);
    let k = 2.0 * PI / wavelength;
    let points = (0..n_points)
        .map(|i| {
            let s = length * i as f64 / (n_points - 1) as f64;
            PathPoint { x: s, y: amplitude * (k * s).sin(), theta: (amplitude * k * (k * s).cos()).atan() }
        })
        .collect();
    ReferencePath::from_samples(points, false)
}

/// Lemniscate of Gerono `(c sin phi, c sin phi cos phi)`; crosses itself at
/// the origin at `phi = 0` and `phi = pi`.
pub fn make_figure8(scale: f64, n_points: usize) -> ReferencePath {
    assert!(scale > 0.0 && n_points >= 8);
    let points = (0..n_points)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / n_points as f64;
            PathPoint {
                x: scale * phi.sin(),
                y: scale * phi.sin() * phi.cos(),
                theta: (scale * (2.0 * phi).cos()).atan2(scale * phi.cos()),
            }
        })
        .collect();
    ReferencePath::from_samples(points, true)
}

/// Closest path point to `query` among the `search_window` points at and
/// after `prev_index`. Progress therefore never moves backwards.
pub fn nearest_reference(path: &ReferencePath, query: (f64, f64), prev_index: usize) -> (usize, PathPoint) {
    let n = path.len();
    let window = path.search_window();
    let mut best = (prev_index, f64::INFINITY);
    for step in 0..=window {
        let idx = if path.closed {
            (prev_index + step) % n
        } else {
            let idx = prev_index + step;
            if idx >= n {
                break;
            }
            idx
        };
        let p = &path.points[idx];
        let d2 = (p.x - query.0).powi(2) + (p.y - query.1).powi(2);
        if d2 < best.1 {
            best = (idx, d2);
        }
    }
    (best.0, path.points[best.0])
}
