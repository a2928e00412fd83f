//! Deterministic SVG figures: trajectory overlays, error boxplots and control
//! rate densities. Coordinates are printed with fixed precision, so equal
//! inputs give byte-identical files.

use std::fmt::Write;

use icode_mppi::metrics::RateHistogram;
use icode_mppi::{DistributionSummary, ReferencePath};

use crate::config::{Method, PathKind};
use crate::output::RunMetrics;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 50.0;

fn method_colour(m: Method) -> &'static str {
    match m {
        Method::Nominal => "#d62728",
        Method::Icode => "#1f77b4",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
}

/// Affine map from data to pixel coordinates, y pointing up.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64), left: f64, right: f64, top: f64, bottom: f64) -> Self {
        let pad = |(a, b): (f64, f64)| if b - a > 1e-12 { (a, b) } else { (a - 1.0, b + 1.0) };
        let ((x0, x1), (y0, y1)) = (pad(x), pad(y));
        Self { x0, x1, y0, y1, left, right, top, bottom }
    }

    /// Equal scale on both axes, centred in the plot area.
    fn equal(x: (f64, f64), y: (f64, f64)) -> Self {
        let (left, right, top, bottom) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
        let (cx, cy) = ((x.0 + x.1) / 2.0, (y.0 + y.1) / 2.0);
        let span = ((x.1 - x.0) / (right - left)).max((y.1 - y.0) / (bottom - top)).max(1e-9) * 1.05;
        let (hw, hh) = (span * (right - left) / 2.0, span * (bottom - top) / 2.0);
        Self::new((cx - hw, cx + hw), (cy - hh, cy + hh), left, right, top, bottom)
    }

    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)
    }

    pub fn py(&self, y: f64) -> f64 {
        self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.left,
            self.top,
            self.right - self.left,
            self.bottom - self.top
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (self.x0 + f * (self.x1 - self.x0), self.y0 + f * (self.y1 - self.y0));
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                self.px(xv),
                self.bottom + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                self.left - 4.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (self.left + self.right) / 2.0,
            self.bottom + 34.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
            (self.top + self.bottom) / 2.0,
            (self.top + self.bottom) / 2.0,
            escape(ylabel)
        );
    }

    fn polyline(&self, out: &mut String, pts: impl Iterator<Item = (f64, f64)>, attrs: &str) {
        let mut d = String::new();
        for (x, y) in pts {
            let _ = write!(d, "{:.2},{:.2} ", self.px(x), self.py(y));
        }
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" {attrs}/>"#, d.trim_end());
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn legend(out: &mut String, entries: &[(&str, &str, bool)]) {
    for (i, (label, colour, dashed)) in entries.iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * i as f64;
        let x = W - MARGIN - 150.0;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{colour}" stroke-width="2"{dash}/>"#,
            x + 24.0
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 30.0, y + 4.0, escape(label));
    }
}

/// Reference path (dashed) and the driven trajectory of one method.
pub fn trajectory_svg(path: &ReferencePath, kind: PathKind, method: Method, driven: &[(f64, f64)]) -> String {
    let mut xs: Vec<f64> = path.points.iter().map(|p| p.x).chain(driven.iter().map(|p| p.0)).collect();
    let mut ys: Vec<f64> = path.points.iter().map(|p| p.y).chain(driven.iter().map(|p| p.1)).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let frame = Frame::equal((xs[0], *xs.last().unwrap()), (ys[0], *ys.last().unwrap()));
    let mut out = String::new();
    header(&mut out, &format!("{}: {}", kind.title(), method.title()));
    frame.axes(&mut out, "x (m)", "y (m)");
    let mut reference: Vec<(f64, f64)> = path.points.iter().map(|p| (p.x, p.y)).collect();
    if path.closed {
        reference.push(reference[0]);
    }
    frame.polyline(&mut out, reference.into_iter(), r##"stroke="#555" stroke-width="1.5" stroke-dasharray="6 4" class="reference""##);
    frame.polyline(
        &mut out,
        driven.iter().copied(),
        &format!(r#"stroke="{}" stroke-width="2" class="trajectory""#, method_colour(method)),
    );
    legend(&mut out, &[("Reference", "#555", true), (method.title(), method_colour(method), false)]);
    out.push_str("</svg>\n");
    out
}

type Selector = fn(&RunMetrics) -> DistributionSummary;

/// Side-by-side boxplots of the absolute x, y and yaw errors for each
/// method. Median lines carry `class="median"` and identify their series.
pub fn boxplot_svg(kind: PathKind, runs: &[&RunMetrics]) -> String {
    let groups: [(&str, Selector); 3] =
        [("x", |m| m.errors.x), ("y", |m| m.errors.y), ("yaw", |m| m.errors.yaw)];
    let ymax = runs
        .iter()
        .flat_map(|m| groups.iter().map(move |(_, f)| f(m).whisker_high))
        .fold(0.0f64, f64::max);
    let frame = boxplot_frame(ymax);
    let mut out = String::new();
    header(&mut out, &format!("{}: absolute tracking errors", kind.title()));
    frame.axes(&mut out, "state", "|error| (m, rad)");
    let slot = (W - 2.0 * MARGIN) / groups.len() as f64;
    let n = runs.len().max(1) as f64;
    let bw = slot / (n + 1.0) * 0.7;
    for (g, (name, f)) in groups.iter().enumerate() {
        let centre = MARGIN + slot * (g as f64 + 0.5);
        let _ = writeln!(out, r#"<text x="{centre:.2}" y="{:.2}" text-anchor="middle">{name}</text>"#, H - MARGIN + 28.0);
        for (i, m) in runs.iter().enumerate() {
            let s = f(m);
            let cx = centre + (i as f64 - (n - 1.0) / 2.0) * slot / (n + 1.0);
            let (x0, x1) = (cx - bw / 2.0, cx + bw / 2.0);
            let colour = method_colour(m.method);
            let id = format!(r#"data-method="{}" data-state="{name}""#, m.method);
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{colour}" class="whisker" {id}/>"#,
                frame.py(s.whisker_low),
                frame.py(s.whisker_high)
            );
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="white" stroke="{colour}" class="box" {id}/>"#,
                frame.py(s.q3),
                frame.py(s.q1) - frame.py(s.q3)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="{colour}" stroke-width="2" class="median" {id}/>"#,
                y = frame.py(s.median)
            );
        }
    }
    let mut entries: Vec<(&str, &str, bool)> = runs.iter().map(|m| (m.method.title(), method_colour(m.method), false)).collect();
    entries.dedup();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// The value axis used by [`boxplot_svg`] for a given largest whisker.
pub fn boxplot_frame(ymax: f64) -> Frame {
    Frame::new((0.0, 1.0), (0.0, (ymax * 1.1).max(1e-6)), MARGIN, W - MARGIN, MARGIN, H - MARGIN)
}

fn density_panel(out: &mut String, hists: &[(Method, &RateHistogram)], top: f64, bottom: f64, label: &str) {
    let xmax = hists.iter().map(|(_, h)| h.edges.last().copied().unwrap_or(1.0).abs()).fold(1e-9, f64::max);
    let ymax = hists.iter().flat_map(|(_, h)| h.density.iter().copied()).fold(1e-9, f64::max);
    let frame = Frame::new((-xmax, xmax), (0.0, ymax * 1.1), MARGIN + 20.0, W - MARGIN, top, bottom);
    frame.axes(out, label, "density");
    for (m, h) in hists {
        let mut pts = Vec::with_capacity(2 * h.density.len() + 2);
        pts.push((h.edges[0], 0.0));
        for (i, d) in h.density.iter().enumerate() {
            pts.push((h.edges[i], *d));
            pts.push((h.edges[i + 1], *d));
        }
        pts.push((*h.edges.last().unwrap(), 0.0));
        frame.polyline(
            out,
            pts.into_iter(),
            &format!(r#"stroke="{}" stroke-width="1.5" class="density" data-method="{m}""#, method_colour(*m)),
        );
    }
}

/// Histogram densities of the steering-rate and acceleration-rate series.
pub fn rates_svg(kind: PathKind, runs: &[&RunMetrics]) -> String {
    let mut out = String::new();
    header(&mut out, &format!("{}: control rate densities", kind.title()));
    let steer: Vec<(Method, &RateHistogram)> = runs.iter().map(|m| (m.method, &m.rates.steer)).collect();
    let accel: Vec<(Method, &RateHistogram)> = runs.iter().map(|m| (m.method, &m.rates.accel)).collect();
    let mid = H / 2.0;
    density_panel(&mut out, &steer, MARGIN, mid - 25.0, "steering rate (rad/s^2)");
    density_panel(&mut out, &accel, mid + 25.0, H - MARGIN, "acceleration rate (m/s^3)");
    let mut entries: Vec<(&str, &str, bool)> = runs.iter().map(|m| (m.method.title(), method_colour(m.method), false)).collect();
    entries.dedup();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
