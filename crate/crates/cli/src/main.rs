use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uavnet::harness::{self, GeoAnchor, RunOptions};
use uavnet::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Multi-UAV network simulator with learning controllers.
#[derive(Debug, Parser)]
#[command(name = "uavnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every seed of an experiment and write metrics, manifests and a summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds overriding the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Export a trajectory run's final logged episode as GeoJSON.
    ExportGeojson {
        /// Path to a seed's manifest.json.
        #[arg(long)]
        run: PathBuf,
        /// Latitude and longitude of the local origin, e.g. `48.1,11.6`.
        #[arg(long, value_parser = parse_anchor, allow_hyphen_values = true)]
        anchor: GeoAnchor,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and report every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_anchor(s: &str) -> Result<GeoAnchor, String> {
    let (lat, lon) = s.split_once(',').ok_or("expected lat,lon")?;
    let lat: f64 = lat.trim().parse().map_err(|e| format!("latitude: {e}"))?;
    let lon: f64 = lon.trim().parse().map_err(|e| format!("longitude: {e}"))?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err("latitude must lie in [-90, 90] and longitude in [-180, 180]".into());
    }
    Ok(GeoAnchor { lat, lon })
}

fn load(config: &PathBuf) -> Result<harness::ExperimentConfig, ExitCode> {
    harness::parse_config(config).map_err(|e| {
        match e {
            Error::Config(v) => {
                eprintln!("{}: {} violation(s)", config.display(), v.len());
                for m in v {
                    eprintln!("  {m}");
                }
            }
            other => eprintln!("{}: {other}", config.display()),
        }
        ExitCode::from(EXIT_CONFIG)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!("{}: ok ({:?} mode, {} seed(s))", config.display(), cfg.mode(), cfg.experiment.seeds.len());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Simulate { config, seeds, workers } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if seeds.as_ref().is_some_and(Vec::is_empty) || workers == Some(0) {
                eprintln!("--seeds needs at least one seed and --workers at least 1");
                return ExitCode::from(EXIT_CONFIG);
            }
            let opts = RunOptions {
                seeds,
                workers,
                output_root: None,
            };
            match harness::run(&cfg, &opts) {
                Ok(report) => {
                    for s in &report.seeds {
                        match &s.error {
                            None => println!("seed {}: ok ({})", s.seed, s.manifest.display()),
                            Some(e) => eprintln!("seed {}: failed: {e}", s.seed),
                        }
                    }
                    println!("summary: {}", report.summary.display());
                    if report.all_ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_RUNTIME)
                    }
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::ExportGeojson { run, anchor, out } => match harness::export_run_geojson(&run, anchor, out.as_deref()) {
            Ok(path) => {
                println!("{}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("export failed: {e}");
                ExitCode::from(EXIT_RUNTIME)
            }
        },
    }
}
