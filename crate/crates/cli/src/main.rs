use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ledmocap::pose::SolverKind;
use ledmocap_cli::commands::{self, SweepOptions, TrackOptions};
use ledmocap_cli::{exit, exit_code, AppConfig, Level, Resolved};
use log::warn;

#[derive(Parser)]
#[command(
    name = "ledmocap",
    version,
    about = "Event-camera motion capture with blinking LED markers"
)]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a recording from the simulator section of the config.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth poses as JSON lines.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seconds; overrides the config.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Track an event file and write one pose per batch.
    Track {
        #[arg(long = "in")]
        input: PathBuf,
        /// `.csv` for CSV, anything else for JSON lines, `-` for stdout.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        solver: Option<SolverKind>,
        /// Pose rate; sets the batch duration.
        #[arg(long)]
        rate_hz: Option<f64>,
        /// Particle filter seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the run statistics as JSON.
        #[arg(long)]
        stats: bool,
        /// Write the run statistics as JSON to this file.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Replay at recording speed, dropping batches under overload.
        #[arg(long)]
        realtime: bool,
        /// Directory for per-batch candidate, cluster and association CSVs.
        #[arg(long)]
        debug_dir: Option<PathBuf>,
    },
    /// Static precision of both solvers across distances.
    NoiseSweep {
        #[arg(long, value_delimiter = ',', default_values_t = [0.7, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0])]
        distances: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        /// Seconds simulated per repeat.
        #[arg(long, default_value_t = 0.5)]
        duration: f64,
        /// Seconds discarded at the start of each repeat.
        #[arg(long, default_value_t = 0.1)]
        warmup: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Log-log slopes; defaults to `<out stem>.slopes.csv`.
        #[arg(long)]
        slopes_out: Option<PathBuf>,
    },
    /// Time-align poses with ground truth and report the errors.
    Compare {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// JSON report; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Matching window; half a batch by default.
        #[arg(long)]
        tolerance_us: Option<u64>,
    },
    /// Run every validation rule on the config and print the outcome.
    CheckConfig,
    /// Print the default configuration.
    DefaultConfig,
}

fn load(path: Option<&Path>) -> Result<Resolved> {
    let cfg = match path {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    let resolved = cfg.resolve()?;
    for w in &resolved.warnings {
        warn!("{w}");
    }
    Ok(resolved)
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")
            .with_context(|| format!("cannot write {}", p.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")?;
            out.flush()?;
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<i32> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Simulate {
            out,
            truth,
            seed,
            duration,
        } => {
            let r = load(config)?;
            let summary = commands::simulate(&r, &out, truth.as_deref(), seed, duration)?;
            let duration = duration.unwrap_or(r.config.simulator.duration_s);
            println!(
                "{} markers, {:.3} s, seed {seed}: {} events -> {}",
                r.rig.len(),
                duration,
                summary.events,
                out.display()
            );
            if let Some(t) = truth {
                println!("{} truth records -> {}", summary.truth_records, t.display());
            }
        }
        Command::Track {
            input,
            out,
            solver,
            rate_hz,
            seed,
            stats,
            stats_out,
            realtime,
            debug_dir,
        } => {
            let r = load(config)?;
            let opts = TrackOptions {
                solver,
                rate_hz,
                seed,
                realtime,
                debug_dir,
            };
            let s = commands::track(&r, &input, &out, &opts)?;
            let summary = s.summary();
            if stats {
                write_json(None, &summary)?;
            }
            if let Some(p) = stats_out {
                write_json(Some(&p), &summary)?;
            }
            eprintln!(
                "{} batches, {} dropped, {} poses ({:.0} Hz), stage 3 median {} us",
                s.processed,
                s.dropped,
                s.poses,
                s.pose_rate_hz(),
                s.stage_us[2].median().unwrap_or(0)
            );
        }
        Command::NoiseSweep {
            distances,
            repeats,
            duration,
            warmup,
            seed,
            out,
            slopes_out,
        } => {
            let r = load(config)?;
            let opts = SweepOptions {
                distances_m: distances,
                repeats,
                duration_s: duration,
                warmup_s: warmup,
                seed,
            };
            let report = commands::noise_sweep(&r, &opts)?;
            report.write_csv(
                std::fs::File::create(&out)
                    .with_context(|| format!("cannot create {}", out.display()))?,
            )?;
            let slopes_path = slopes_out.unwrap_or_else(|| out.with_extension("slopes.csv"));
            report.write_slopes_csv(
                std::fs::File::create(&slopes_path)
                    .with_context(|| format!("cannot create {}", slopes_path.display()))?,
            )?;
            let mut stdout = std::io::stdout().lock();
            report.write_slopes_csv(&mut stdout)?;
            stdout.flush()?;
        }
        Command::Compare {
            poses,
            truth,
            out,
            tolerance_us,
        } => {
            let r = load(config)?;
            let tolerance = tolerance_us.unwrap_or(r.config.pipeline.batch_us / 2);
            let p = commands::read_poses(&poses)?;
            let t = commands::read_truth(&truth)?;
            let report = commands::compare(&p, &t, tolerance)?;
            write_json(out.as_deref(), &report)?;
        }
        Command::CheckConfig => {
            let cfg = match config {
                Some(p) => AppConfig::load(p)?,
                None => AppConfig::default(),
            };
            let findings = cfg.check();
            for f in &findings {
                println!("{f}");
            }
            if findings.iter().any(|f| f.level == Level::Error) {
                return Ok(exit::CONFIG);
            }
        }
        Command::DefaultConfig => print!("{}", AppConfig::default().to_toml()),
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE as u8
            } else {
                exit::OK as u8
            });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
