use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use icode_mppi::icode::{load_checkpoint, save_checkpoint};
use icode_mppi::rng::StreamKey;
use icode_mppi::training::{run_training_loop, TaskSetup};
use icode_mppi::{run_episode, EpisodeRecord, EpisodeSpec, IcodeModel, NetworkParams, NominalModel, Plant};
use serde::Serialize;

use crate::config::{Method, PathKind, RunConfiguration};
use crate::error::{CliError, CliResult};
use crate::output::{
    episode_rows, format_report_table, metrics_file_name, read_metrics_csv, run_metrics, summarize_cells, write_json,
    write_metrics_csv, write_report_csv, write_training_log, CellSummary, ReportRow, RunMetrics, TrainingLogRow,
};
use crate::svg::{boxplot_svg, rates_svg, trajectory_svg};

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("icode_iter_{iteration}.ckpt")
}

/// The checkpoint a completed training run leaves behind for deployment.
pub fn final_checkpoint(dir: &Path, cfg: &RunConfiguration) -> PathBuf {
    dir.join(checkpoint_name(cfg.train.n_iterations))
}

fn simulate(
    cfg: &RunConfiguration,
    kind: PathKind,
    method: Method,
    params: Option<&Arc<NetworkParams>>,
    seed: u64,
) -> CliResult<EpisodeRecord> {
    let path = cfg.path.build(kind);
    let plant = Plant::new(cfg.vehicle, cfg.disturbance);
    let spec = EpisodeSpec { duration: cfg.episode_duration, start_time: 0.0 };
    let key = StreamKey::new(seed);
    let rec = match (method, params) {
        (Method::Nominal, _) => run_episode(&plant, NominalModel::new(cfg.vehicle), &path, &cfg.mppi, &cfg.cost, key, spec)?,
        (Method::Icode, Some(p)) => {
            run_episode(&plant, IcodeModel::new(p.clone(), cfg.vehicle), &path, &cfg.mppi, &cfg.cost, key, spec)?
        }
        (Method::Icode, None) => return Err(CliError::MissingCheckpoint),
    };
    Ok(rec)
}

fn load_params(file: &Path) -> CliResult<Arc<NetworkParams>> {
    if !file.exists() {
        return Err(CliError::MissingCheckpoint);
    }
    Ok(Arc::new(load_checkpoint(file)?))
}

/// Writes `metrics_<path>_<method>.csv` and `summary_<path>_<method>.json`.
fn persist_run(out: &Path, cfg: &RunConfiguration, kind: PathKind, method: Method, seed: u64, rec: &EpisodeRecord) -> CliResult<RunMetrics> {
    let rows = episode_rows(rec);
    write_metrics_csv(&out.join(metrics_file_name(kind, method)), &rows)?;
    let metrics = run_metrics(&rows, cfg.vehicle.dt, kind, method, seed)?;
    write_json(&out.join(format!("summary_{kind}_{method}.json")), &metrics)?;
    Ok(metrics)
}

/// One closed-loop episode on `cfg.path.kind` with `cfg.method`.
pub fn cmd_run(cfg: &RunConfiguration, out: &Path) -> CliResult<RunMetrics> {
    cfg.validate()?;
    let params = match cfg.method {
        Method::Icode => Some(load_params(cfg.checkpoint_path.as_deref().ok_or(CliError::MissingCheckpoint)?)?),
        Method::Nominal => None,
    };
    ensure_dir(out)?;
    let rec = simulate(cfg, cfg.path.kind, cfg.method, params.as_ref(), cfg.seed)?;
    persist_run(out, cfg, cfg.path.kind, cfg.method, cfg.seed, &rec)
}

/// The aggregation loop on `kind`, writing `icode_iter_<k>.ckpt` and
/// `training_log.csv` into `out` after every iteration.
pub fn train_on(cfg: &RunConfiguration, kind: PathKind, out: &Path) -> CliResult<Vec<TrainingLogRow>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let path = cfg.path.build(kind);
    let setup = TaskSetup { plant: Plant::new(cfg.vehicle, cfg.disturbance), path: &path, mppi: cfg.mppi, cost: cfg.cost };
    let log_file = out.join("training_log.csv");
    let mut rows: Vec<TrainingLogRow> = Vec::new();
    let run = run_training_loop(&setup, &cfg.train, cfg.seed, |m, params| {
        save_checkpoint(&out.join(checkpoint_name(m.iteration)), params)?;
        rows.push(m.into());
        write_training_log(&log_file, &rows).map_err(|e| icode_mppi::Error::Io(std::io::Error::other(e.to_string())))
    })?;
    if cfg.train.n_iterations == 0 {
        save_checkpoint(&out.join(checkpoint_name(0)), &run.params)?;
        rows.push(TrainingLogRow {
            iteration: 0,
            buffer_size: 0,
            train_loss_final: None,
            holdout_loss_combined: None,
            holdout_loss_nominal: None,
        });
        write_training_log(&log_file, &rows)?;
    }
    Ok(rows)
}

pub fn cmd_train(cfg: &RunConfiguration, out: &Path) -> CliResult<Vec<TrainingLogRow>> {
    train_on(cfg, cfg.path.kind, out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub trajectory: PathKind,
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<String>,
    pub timings: Vec<Timing>,
}

fn checkpoint_dir(cfg: &RunConfiguration, kind: PathKind, out: &Path) -> PathBuf {
    match &cfg.bench.checkpoint_dir {
        Some(d) => d.join(kind.name()),
        None => out.join(format!("train_{kind}")),
    }
}

/// The trajectory by method grid over `bench.n_seeds` seeds. Each trajectory
/// uses its own checkpoint, trained first if it does not exist yet. The
/// first seed's runs are also written as metrics CSVs and plotted.
pub fn cmd_bench(cfg: &RunConfiguration, out: &Path) -> CliResult<ExperimentReport> {
    cfg.validate()?;
    ensure_dir(out)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for &kind in &cfg.bench.trajectories {
        let dir = checkpoint_dir(cfg, kind, out);
        let ckpt = final_checkpoint(&dir, cfg);
        if !ckpt.exists() {
            let t0 = Instant::now();
            if let Err(e) = train_on(cfg, kind, &dir) {
                failures.push(format!("{kind}/train: {e}"));
            }
            timings.push(Timing { trajectory: kind, stage: "train".into(), seconds: t0.elapsed().as_secs_f64() });
        }
        let params = load_params(&ckpt).ok();
        for method in Method::ALL {
            let t0 = Instant::now();
            for i in 0..cfg.bench.n_seeds as u64 {
                let seed = cfg.seed + i;
                let result = simulate(cfg, kind, method, params.as_ref(), seed).and_then(|rec| {
                    if i == 0 {
                        persist_run(out, cfg, kind, method, seed, &rec)
                    } else {
                        run_metrics(&episode_rows(&rec), cfg.vehicle.dt, kind, method, seed)
                    }
                });
                match result {
                    Ok(m) => rows.push(ReportRow::from(&m)),
                    Err(e) => failures.push(format!("{kind}/{method}/seed {seed}: {e}")),
                }
            }
            timings.push(Timing { trajectory: kind, stage: method.name().into(), seconds: t0.elapsed().as_secs_f64() });
        }
    }
    write_report_csv(&out.join("report.csv"), &rows)?;
    let cells = summarize_cells(&rows);
    std::fs::write(out.join("report.txt"), format_report_table(&cells, &failures))
        .map_err(CliError::io("writing report.txt"))?;
    write_json(&out.join("timings.json"), &timings)?;
    cmd_plot(cfg, out, out)?;
    let report = ExperimentReport { rows, cells, failures, timings };
    if !report.failures.is_empty() {
        return Err(CliError::Bench(format!("{} failed cell(s): {}", report.failures.len(), report.failures.join("; "))));
    }
    Ok(report)
}

/// SVG figures for every trajectory that has metrics CSVs in `input`.
pub fn cmd_plot(cfg: &RunConfiguration, input: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut written = Vec::new();
    for kind in PathKind::ALL {
        let mut runs = Vec::new();
        for method in Method::ALL {
            let file = input.join(metrics_file_name(kind, method));
            if !file.exists() {
                continue;
            }
            let rows = read_metrics_csv(&file)?;
            let path = cfg.path.build(kind);
            let driven: Vec<(f64, f64)> = rows.iter().map(|r| (r.x, r.y)).collect();
            let svg_file = out.join(format!("traj_{kind}_{method}.svg"));
            std::fs::write(&svg_file, trajectory_svg(&path, kind, method, &driven))
                .map_err(CliError::io(svg_file.display().to_string()))?;
            written.push(svg_file);
            runs.push(run_metrics(&rows, cfg.vehicle.dt, kind, method, 0)?);
        }
        if runs.is_empty() {
            continue;
        }
        let refs: Vec<&RunMetrics> = runs.iter().collect();
        for (name, text) in [(format!("box_{kind}.svg"), boxplot_svg(kind, &refs)), (format!("rates_{kind}.svg"), rates_svg(kind, &refs))] {
            let f = out.join(name);
            std::fs::write(&f, text).map_err(CliError::io(f.display().to_string()))?;
            written.push(f);
        }
    }
    if written.is_empty() {
        return Err(CliError::MissingInput(format!("no metrics_<path>_<method>.csv files in {}", input.display())));
    }
    Ok(written)
}
