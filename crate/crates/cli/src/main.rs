use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icode_mppi_cli::{cmd_bench, cmd_plot, cmd_run, cmd_train, CliError, CliResult, RunConfiguration};

#[derive(Parser)]
#[command(name = "icode-mppi", version, about = "MPPI path tracking with a learned control-affine residual")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the resolved configuration with the source of every value and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode.
    Run(Common),
    /// Train the residual by iterative data aggregation.
    Train(Common),
    /// Benchmark nominal and ICODE MPPI on every trajectory over several seeds.
    Bench(Common),
    /// Render SVG figures from metrics CSVs.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Directory holding the metrics CSVs (defaults to --out).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> CliResult<Option<RunConfiguration>> {
    let (mut cfg, user) = match &c.config {
        Some(file) => {
            let text = std::fs::read_to_string(file)
                .map_err(|e| CliError::MissingInput(format!("config file {}: {e}", file.display())))?;
            let cfg = RunConfiguration::from_json_str(&text, file)?;
            (cfg, serde_json::from_str(&text).ok())
        }
        None => (RunConfiguration::default(), None),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if c.print_config {
        let overrides: &[&str] = if c.seed.is_some() { &["seed"] } else { &[] };
        let text = serde_json::to_string_pretty(&cfg.annotated(user.as_ref(), overrides)).expect("serializable");
        println!("{text}");
        return Ok(None);
    }
    Ok(Some(cfg))
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(c) => {
            if let Some(cfg) = resolve(&c)? {
                let m = cmd_run(&cfg, &c.out)?;
                println!(
                    "{} {}: rmse_x {:.4} rmse_y {:.4} rmse_yaw {:.4} ({} steps)",
                    m.trajectory, m.method, m.rmse.x, m.rmse.y, m.rmse.yaw, m.steps
                );
            }
        }
        Command::Train(c) => {
            if let Some(cfg) = resolve(&c)? {
                for r in cmd_train(&cfg, &c.out)? {
                    println!(
                        "iteration {}: buffer {} holdout combined {:?} nominal {:?}",
                        r.iteration, r.buffer_size, r.holdout_loss_combined, r.holdout_loss_nominal
                    );
                }
            }
        }
        Command::Bench(c) => {
            if let Some(cfg) = resolve(&c)? {
                cmd_bench(&cfg, &c.out)?;
                let table = std::fs::read_to_string(c.out.join("report.txt")).map_err(CliError::io("reading report.txt"))?;
                print!("{table}");
            }
        }
        Command::Plot { common, input } => {
            if let Some(cfg) = resolve(&common)? {
                for f in cmd_plot(&cfg, input.as_deref().unwrap_or(&common.out), &common.out)? {
                    println!("{}", f.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
