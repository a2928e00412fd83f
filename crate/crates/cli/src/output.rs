//! Files written by the subcommands: per-step metrics CSVs, per-run summary
//! JSON, the training log and the benchmark report.

use std::fs::File;
use std::path::Path;

use icode_mppi::metrics::{control_rate_density, distribution_summary, errors_against, ControlRateDensity};
use icode_mppi::training::IterationMetrics;
use icode_mppi::{ControlInput, DistributionSummary, EpisodeRecord, PathPoint, TrackingRmse, VehicleState};
use serde::{Deserialize, Serialize};

use crate::config::{Method, PathKind};
use crate::error::{CliError, CliResult};

pub const RATE_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub delta: f64,
    pub ref_x: f64,
    pub ref_y: f64,
    pub ref_theta: f64,
    pub a_cmd: f64,
    pub omega_cmd: f64,
}

impl MetricsRow {
    pub fn state(&self) -> VehicleState {
        VehicleState::new(self.x, self.y, self.theta, self.v, self.delta)
    }

    pub fn reference(&self) -> PathPoint {
        PathPoint { x: self.ref_x, y: self.ref_y, theta: self.ref_theta }
    }

    pub fn command(&self) -> ControlInput {
        ControlInput::new(self.a_cmd, self.omega_cmd)
    }
}

pub fn episode_rows(rec: &EpisodeRecord) -> Vec<MetricsRow> {
    (0..rec.steps())
        .map(|i| {
            let (s, r, u) = (rec.states[i], rec.references[i], rec.commands[i]);
            MetricsRow {
                t: rec.times[i],
                x: s.x,
                y: s.y,
                theta: s.theta,
                v: s.v,
                delta: s.delta,
                ref_x: r.x,
                ref_y: r.y,
                ref_theta: r.theta,
                a_cmd: u.a,
                omega_cmd: u.omega,
            }
        })
        .collect()
}

pub fn metrics_file_name(path: PathKind, method: Method) -> String {
    format!("metrics_{path}_{method}.csv")
}

pub fn write_metrics_csv(file: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(file)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(CliError::io(file.display().to_string()))?;
    Ok(())
}

pub fn read_metrics_csv(file: &Path) -> CliResult<Vec<MetricsRow>> {
    let f = File::open(file).map_err(|e| CliError::MissingInput(format!("{}: {e}", file.display())))?;
    let mut r = csv::Reader::from_reader(f);
    let rows = r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?;
    if rows.is_empty() {
        return Err(CliError::MissingInput(format!("{} has no rows", file.display())));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummaries {
    pub x: DistributionSummary,
    pub y: DistributionSummary,
    pub yaw: DistributionSummary,
    pub cross_track: DistributionSummary,
}

/// Everything reported about one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub trajectory: PathKind,
    pub method: Method,
    pub seed: u64,
    pub steps: usize,
    pub rmse: TrackingRmse,
    /// Boxplot statistics of the absolute errors.
    pub errors: ErrorSummaries,
    pub rates: ControlRateDensity,
}

fn abs(v: &[f64]) -> Vec<f64> {
    v.iter().map(|e| e.abs()).collect()
}

/// Metrics from the rows of a metrics CSV, so a run and a re-read of its CSV
/// give identical numbers.
pub fn run_metrics(rows: &[MetricsRow], dt: f64, trajectory: PathKind, method: Method, seed: u64) -> CliResult<RunMetrics> {
    let states: Vec<VehicleState> = rows.iter().map(MetricsRow::state).collect();
    let refs: Vec<PathPoint> = rows.iter().map(MetricsRow::reference).collect();
    let commands: Vec<ControlInput> = rows.iter().map(MetricsRow::command).collect();
    let e = errors_against(&states, &refs);
    let rmse = e.rmse()?;
    let errors = ErrorSummaries {
        x: distribution_summary(&abs(&e.x))?,
        y: distribution_summary(&abs(&e.y))?,
        yaw: distribution_summary(&abs(&e.yaw))?,
        cross_track: distribution_summary(&abs(&e.cross_track))?,
    };
    let rates = control_rate_density(&commands, dt, RATE_BINS)?;
    Ok(RunMetrics { trajectory, method, seed, steps: rows.len(), rmse, errors, rates })
}

pub fn write_json<T: Serialize>(file: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(file, text + "\n").map_err(CliError::io(file.display().to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub iteration: usize,
    pub buffer_size: usize,
    pub train_loss_final: Option<f64>,
    pub holdout_loss_combined: Option<f64>,
    pub holdout_loss_nominal: Option<f64>,
}

impl From<&IterationMetrics> for TrainingLogRow {
    fn from(m: &IterationMetrics) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            iteration: m.iteration,
            buffer_size: m.buffer_size,
            train_loss_final: finite(m.train_loss_final),
            holdout_loss_combined: finite(m.holdout_loss_combined),
            holdout_loss_nominal: finite(m.holdout_loss_nominal),
        }
    }
}

pub fn write_training_log(file: &Path, rows: &[TrainingLogRow]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(file)?;
    w.write_record(["iteration", "buffer_size", "train_loss_final", "holdout_loss_combined", "holdout_loss_nominal"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(CliError::io(file.display().to_string()))?;
    Ok(())
}

pub fn read_training_log(file: &Path) -> CliResult<Vec<TrainingLogRow>> {
    let f = File::open(file).map_err(|e| CliError::MissingInput(format!("{}: {e}", file.display())))?;
    Ok(csv::Reader::from_reader(f).deserialize().collect::<Result<Vec<_>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub trajectory: PathKind,
    pub method: Method,
    pub seed: u64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_yaw: f64,
    pub steer_rate_std: f64,
    pub steer_rate_zero_peak: f64,
    pub accel_rate_std: f64,
}

impl From<&RunMetrics> for ReportRow {
    fn from(m: &RunMetrics) -> Self {
        Self {
            trajectory: m.trajectory,
            method: m.method,
            seed: m.seed,
            rmse_x: m.rmse.x,
            rmse_y: m.rmse.y,
            rmse_yaw: m.rmse.yaw,
            steer_rate_std: m.rates.steer.std,
            steer_rate_zero_peak: m.rates.steer.zero_peak,
            accel_rate_std: m.rates.accel.std,
        }
    }
}

pub fn write_report_csv(file: &Path, rows: &[ReportRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(file)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(CliError::io(file.display().to_string()))?;
    Ok(())
}

pub fn read_report_csv(file: &Path) -> CliResult<Vec<ReportRow>> {
    let f = File::open(file).map_err(|e| CliError::MissingInput(format!("{}: {e}", file.display())))?;
    Ok(csv::Reader::from_reader(f).deserialize().collect::<Result<Vec<_>, _>>()?)
}

/// Per-cell means over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub trajectory: PathKind,
    pub method: Method,
    pub n_seeds: usize,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_yaw: f64,
    pub steer_rate_std: f64,
    pub steer_rate_zero_peak: f64,
    pub accel_rate_std: f64,
}

pub fn summarize_cells(rows: &[ReportRow]) -> Vec<CellSummary> {
    let mut cells: Vec<(PathKind, Method)> = rows.iter().map(|r| (r.trajectory, r.method)).collect();
    cells.sort();
    cells.dedup();
    cells
        .into_iter()
        .map(|(trajectory, method)| {
            let sel: Vec<&ReportRow> = rows.iter().filter(|r| r.trajectory == trajectory && r.method == method).collect();
            let mean = |f: fn(&ReportRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64;
            CellSummary {
                trajectory,
                method,
                n_seeds: sel.len(),
                rmse_x: mean(|r| r.rmse_x),
                rmse_y: mean(|r| r.rmse_y),
                rmse_yaw: mean(|r| r.rmse_yaw),
                steer_rate_std: mean(|r| r.steer_rate_std),
                steer_rate_zero_peak: mean(|r| r.steer_rate_zero_peak),
                accel_rate_std: mean(|r| r.accel_rate_std),
            }
        })
        .collect()
}

/// Text table with one row per (trajectory, method) and the per-axis ratio
/// of ICODE to nominal below each trajectory.
pub fn format_report_table(cells: &[CellSummary], failures: &[String]) -> String {
    let mut out = String::new();
    out.push_str("Tracking RMSE comparison (mean over seeds)\n\n");
    out.push_str(&format!(
        "{:<10} {:<13} {:>5} {:>9} {:>9} {:>9} {:>10} {:>10}\n",
        "Trajectory", "Method", "Seeds", "X (m)", "Y (m)", "Yaw (rad)", "Steer-rate", "Zero-peak"
    ));
    let mut trajectories: Vec<PathKind> = cells.iter().map(|c| c.trajectory).collect();
    trajectories.dedup();
    for t in trajectories {
        let of = |m: Method| cells.iter().find(|c| c.trajectory == t && c.method == m);
        for m in Method::ALL {
            if let Some(c) = of(m) {
                out.push_str(&format!(
                    "{:<10} {:<13} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>10.4} {:>10.4}\n",
                    if m == Method::Nominal { t.title() } else { "" },
                    m.title(),
                    c.n_seeds,
                    c.rmse_x,
                    c.rmse_y,
                    c.rmse_yaw,
                    c.steer_rate_std,
                    c.steer_rate_zero_peak
                ));
            }
        }
        if let (Some(n), Some(i)) = (of(Method::Nominal), of(Method::Icode)) {
            out.push_str(&format!(
                "{:<10} {:<13} {:>5} {:>9.3} {:>9.3} {:>9.3} {:>10.3} {:>10.3}\n",
                "",
                "ratio",
                "",
                i.rmse_x / n.rmse_x,
                i.rmse_y / n.rmse_y,
                i.rmse_yaw / n.rmse_yaw,
                i.steer_rate_std / n.steer_rate_std,
                i.steer_rate_zero_peak / n.steer_rate_zero_peak
            ));
        }
    }
    if !failures.is_empty() {
        out.push_str("\nFailed cells:\n");
        for f in failures {
            out.push_str(&format!("  {f}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> MetricsRow {
        let t = i as f64 * 0.05;
        MetricsRow {
            t,
            x: t.cos(),
            y: t.sin() + 0.01,
            theta: t,
            v: 2.0,
            delta: 0.1,
            ref_x: t.cos(),
            ref_y: t.sin(),
            ref_theta: t,
            a_cmd: 0.1 * (i % 3) as f64,
            omega_cmd: -0.2,
        }
    }

    #[test]
    fn metrics_csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.csv");
        let rows: Vec<MetricsRow> = (0..10).map(row).collect();
        write_metrics_csv(&file, &rows).unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,x,y,theta,v,delta,ref_x,ref_y,ref_theta,a_cmd,omega_cmd");
        assert_eq!(read_metrics_csv(&file).unwrap(), rows);
    }

    #[test]
    fn run_metrics_from_rows() {
        let rows: Vec<MetricsRow> = (0..10).map(row).collect();
        let m = run_metrics(&rows, 0.05, PathKind::Ellipse, Method::Nominal, 0).unwrap();
        assert!(m.rmse.x.abs() < 1e-12);
        assert!((m.rmse.y - 0.01).abs() < 1e-12);
        assert!((m.errors.y.median - 0.01).abs() < 1e-12);
        assert_eq!(m.rates.steer.std, 0.0);
    }

    #[test]
    fn report_header_and_cells() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("report.csv");
        let mk = |trajectory, method, seed, y| ReportRow {
            trajectory,
            method,
            seed,
            rmse_x: 1.0,
            rmse_y: y,
            rmse_yaw: 0.1,
            steer_rate_std: 0.2,
            steer_rate_zero_peak: 3.0,
            accel_rate_std: 0.4,
        };
        let rows = vec![
            mk(PathKind::Ellipse, Method::Nominal, 0, 0.4),
            mk(PathKind::Ellipse, Method::Nominal, 1, 0.6),
            mk(PathKind::Ellipse, Method::Icode, 0, 0.2),
            mk(PathKind::Ellipse, Method::Icode, 1, 0.3),
        ];
        write_report_csv(&file, &rows).unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "trajectory,method,seed,rmse_x,rmse_y,rmse_yaw,steer_rate_std,steer_rate_zero_peak,accel_rate_std"
        );
        assert_eq!(read_report_csv(&file).unwrap(), rows);
        let cells = summarize_cells(&rows);
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.n_seeds == 2));
        assert!((cells[0].rmse_y - 0.5).abs() < 1e-12);
        let table = format_report_table(&cells, &[]);
        assert!(table.contains("ratio") && table.contains("0.500"));
    }

    #[test]
    fn training_log_has_fixed_columns() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("training_log.csv");
        let rows = vec![TrainingLogRow {
            iteration: 0,
            buffer_size: 10,
            train_loss_final: Some(1e-4),
            holdout_loss_combined: Some(2e-4),
            holdout_loss_nominal: None,
        }];
        write_training_log(&file, &rows).unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iteration,buffer_size,train_loss_final,holdout_loss_combined,holdout_loss_nominal");
        assert_eq!(read_training_log(&file).unwrap(), rows);
    }
}
