mod common;

use std::process::Command;

use common::{files_with_ext, tiny_config};
use icode_mppi::icode::load_checkpoint;
use icode_mppi_cli::commands::{checkpoint_name, cmd_bench, cmd_plot, cmd_run, cmd_train};
use icode_mppi_cli::output::{read_metrics_csv, read_report_csv, read_training_log, run_metrics};
use icode_mppi_cli::svg::boxplot_frame;
use icode_mppi_cli::{CliError, Method, PathKind};

#[test]
fn run_writes_csv_and_summary_deterministically() {
    let cfg = tiny_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = cmd_run(&cfg, a.path()).unwrap();
    cmd_run(&cfg, b.path()).unwrap();
    let csv = "metrics_ellipse_nominal.csv";
    assert_eq!(std::fs::read(a.path().join(csv)).unwrap(), std::fs::read(b.path().join(csv)).unwrap());
    assert_eq!(
        std::fs::read(a.path().join("summary_ellipse_nominal.json")).unwrap(),
        std::fs::read(b.path().join("summary_ellipse_nominal.json")).unwrap()
    );
    let text = std::fs::read_to_string(a.path().join(csv)).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,x,y,theta,v,delta,ref_x,ref_y,ref_theta,a_cmd,omega_cmd"
    );
    assert_eq!(m.steps, text.lines().count() - 1);
    assert_eq!(m.steps, 40);
}

#[test]
fn different_seeds_differ() {
    let mut cfg = tiny_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_run(&cfg, a.path()).unwrap();
    cfg.seed = 7;
    cmd_run(&cfg, b.path()).unwrap();
    let csv = "metrics_ellipse_nominal.csv";
    assert_ne!(std::fs::read(a.path().join(csv)).unwrap(), std::fs::read(b.path().join(csv)).unwrap());
}

#[test]
fn icode_run_without_checkpoint_is_rejected() {
    let mut cfg = tiny_config();
    cfg.method = Method::Icode;
    let out = tempfile::tempdir().unwrap();
    let err = cmd_run(&cfg, out.path()).unwrap_err();
    assert!(matches!(err, CliError::MissingCheckpoint), "{err}");
    cfg.checkpoint_path = Some(out.path().join("absent.ckpt"));
    assert!(matches!(cmd_run(&cfg, out.path()).unwrap_err(), CliError::MissingCheckpoint));
}

#[test]
fn zero_iterations_emit_zero_residual_checkpoint() {
    let mut cfg = tiny_config();
    cfg.train.n_iterations = 0;
    let out = tempfile::tempdir().unwrap();
    let rows = cmd_train(&cfg, out.path()).unwrap();
    assert_eq!(rows.len(), 1);
    let p = load_checkpoint(&out.path().join(checkpoint_name(0))).unwrap();
    for net in [&p.drift, &p.gain] {
        let out = net.layers.last().unwrap();
        assert!(out.weight.iter().chain(out.bias.iter()).all(|w| *w == 0.0));
    }
    assert_eq!(read_training_log(&out.path().join("training_log.csv")).unwrap().len(), 1);
}

#[test]
fn train_then_run_icode() {
    let mut cfg = tiny_config();
    let out = tempfile::tempdir().unwrap();
    let rows = cmd_train(&cfg, out.path()).unwrap();
    assert_eq!(rows.len(), cfg.train.n_iterations + 1);
    let log = read_training_log(&out.path().join("training_log.csv")).unwrap();
    assert_eq!(log, rows);
    assert!(log.iter().all(|r| r.holdout_loss_combined.is_some() && r.holdout_loss_nominal.is_some()));
    for k in 0..=cfg.train.n_iterations {
        assert!(out.path().join(checkpoint_name(k)).exists());
    }
    cfg.method = Method::Icode;
    cfg.checkpoint_path = Some(out.path().join(checkpoint_name(cfg.train.n_iterations)));
    let m = cmd_run(&cfg, out.path()).unwrap();
    assert_eq!(m.method, Method::Icode);
    assert!(m.rmse.x.is_finite() && m.rmse.y.is_finite());
}

#[test]
fn bench_covers_grid_and_plots() {
    let cfg = tiny_config();
    let out = tempfile::tempdir().unwrap();
    let report = cmd_bench(&cfg, out.path()).unwrap();
    assert_eq!(report.cells.len(), 6);
    assert!(report.cells.iter().all(|c| c.n_seeds == cfg.bench.n_seeds));
    let rows = read_report_csv(&out.path().join("report.csv")).unwrap();
    assert_eq!(rows, report.rows);
    assert_eq!(rows.len(), 6 * cfg.bench.n_seeds);
    let header = std::fs::read_to_string(out.path().join("report.csv")).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "trajectory,method,seed,rmse_x,rmse_y,rmse_yaw,steer_rate_std,steer_rate_zero_peak,accel_rate_std"
    );
    let table = std::fs::read_to_string(out.path().join("report.txt")).unwrap();
    for kind in PathKind::ALL {
        assert!(table.contains(kind.title()), "{table}");
        for method in Method::ALL {
            assert!(out.path().join(format!("traj_{kind}_{method}.svg")).exists());
        }
        assert!(out.path().join(format!("box_{kind}.svg")).exists());
        assert!(out.path().join(format!("rates_{kind}.svg")).exists());
    }
}

#[test]
fn plots_are_well_formed_and_deterministic() {
    let cfg = tiny_config();
    let data = tempfile::tempdir().unwrap();
    cmd_run(&cfg, data.path()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let written = cmd_plot(&cfg, data.path(), a.path()).unwrap();
    cmd_plot(&cfg, data.path(), b.path()).unwrap();
    assert_eq!(written.len(), 3);
    let (sa, sb) = (files_with_ext(a.path(), &["svg"]), files_with_ext(b.path(), &["svg"]));
    assert_eq!(sa, sb);
    for (name, bytes) in &sa {
        let text = std::str::from_utf8(bytes).unwrap();
        let doc = roxmltree::Document::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(doc.root().children().filter(|n| n.is_element()).count(), 1);
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
}

#[test]
fn boxplot_median_lines_encode_the_medians() {
    let cfg = tiny_config();
    let data = tempfile::tempdir().unwrap();
    cmd_run(&cfg, data.path()).unwrap();
    cmd_plot(&cfg, data.path(), data.path()).unwrap();
    let rows = read_metrics_csv(&data.path().join("metrics_ellipse_nominal.csv")).unwrap();
    let m = run_metrics(&rows, cfg.vehicle.dt, PathKind::Ellipse, Method::Nominal, 0).unwrap();
    let ymax = [m.errors.x, m.errors.y, m.errors.yaw].iter().map(|s| s.whisker_high).fold(0.0, f64::max);
    let frame = boxplot_frame(ymax);
    let text = std::fs::read_to_string(data.path().join("box_ellipse.svg")).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let mut seen = 0;
    for node in doc.descendants().filter(|n| n.attribute("class") == Some("median")) {
        let summary = match node.attribute("data-state").unwrap() {
            "x" => m.errors.x,
            "y" => m.errors.y,
            "yaw" => m.errors.yaw,
            other => panic!("unexpected state {other}"),
        };
        let y: f64 = node.attribute("y1").unwrap().parse().unwrap();
        assert!((y - frame.py(summary.median)).abs() <= 0.005 + 1e-9, "{y} vs {}", frame.py(summary.median));
        seen += 1;
    }
    assert_eq!(seen, 3);
}

#[test]
fn plot_without_inputs_is_missing_input() {
    let cfg = tiny_config();
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_plot(&cfg, empty.path(), empty.path()).unwrap_err(), CliError::MissingInput(_)));
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_icode-mppi"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"mppi": {"horizon": -1}}"#).unwrap();
    let status = binary().args(["run", "--config"]).arg(&bad).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(1));

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"mppi": {"horizn": 3}}"#).unwrap();
    let status = binary().args(["run", "--config"]).arg(&unknown).status().unwrap();
    assert_eq!(status.code(), Some(1));

    let ok = dir.path().join("ok.json");
    std::fs::write(&ok, tiny_config().to_json()).unwrap();
    let status = binary().args(["run", "--config"]).arg(&ok).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("metrics_ellipse_nominal.csv").exists());

    let status = binary().args(["plot", "--input"]).arg(dir.path().join("nowhere")).arg("--out").arg(dir.path()).status().unwrap();
    assert_ne!(status.code(), Some(0));
}

#[test]
fn print_config_reports_sources() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_file = dir.path().join("c.json");
    std::fs::write(&cfg_file, r#"{"mppi": {"num_samples": 100}}"#).unwrap();
    let out = binary().args(["run", "--print-config", "--seed", "3", "--config"]).arg(&cfg_file).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"]["value"], 3);
    assert_eq!(v["seed"]["source"], "command-line");
    assert_eq!(v["mppi"]["num_samples"]["value"], 100);
    assert_eq!(v["mppi"]["num_samples"]["source"], "config-file");
    assert_eq!(v["mppi"]["horizon"]["source"], "reference");
    assert_eq!(v["cost"]["w_pos"]["source"], "design-decision");
}
