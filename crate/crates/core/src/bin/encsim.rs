use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use encsim::harness::{
    self, compute_metrics, evaluate_fidelity, load_trace, run_scenario, write_json, HarnessError, SimConfig,
};
use encsim::mobility::{
    events_to_trace, infer_plausible_positions, write_encounter_events, write_position_rows, Arena, InferConfig,
};
use encsim::personality::{fit_all, FitConfig};
use encsim::profilecast::{read_encounter_events, read_message_log, write_message_log, DeliveryMode};
use encsim::spectrum::{analyze_trace, SpectrumConfig};
use encsim::trace::write_encounter_csv;
use encsim::Execution;

#[derive(Parser)]
#[command(
    name = "encsim",
    version,
    about = "Encounter-trace driven mobility and DTN forwarding simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Targeted,
    Disseminate,
}

#[derive(clap::Args)]
struct RoutingFlags {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-pair spectrum of an encounter (or visit) trace, as JSON.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        /// Bin width in seconds.
        #[arg(long, default_value_t = 86_400)]
        bin: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit one personality per node from a trace.
    Fit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 86_400)]
        bin: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a scenario and write position, encounter and message logs plus metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        routing: RoutingFlags,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Infer plausible positions from a contact trace.
    Infer {
        #[arg(long)]
        trace: PathBuf,
        /// Scenario config supplying the arena.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Slot width in seconds.
        #[arg(long, default_value_t = 60)]
        bin: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Replay an encounter event log through the routing layer only.
    Route {
        #[arg(long)]
        encounters: PathBuf,
        /// Scenario config supplying nodes, profiles and bundles.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        routing: RoutingFlags,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Metrics and fidelity report from the logs of a run.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        encounters: PathBuf,
        #[arg(long)]
        messages: Option<PathBuf>,
        /// Overrides the config's fidelity bin width.
        #[arg(long)]
        bin: Option<u64>,
        #[command(flatten)]
        routing: RoutingFlags,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes to `dir/name`, or to stdout when no directory is given.
fn emit(dir: Option<&Path>, name: &str, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), HarnessError> {
    match dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(name);
            let mut file = io::BufWriter::new(harness::create(&path)?);
            f(&mut file).and_then(|_| file.flush()).map_err(io_err(&path))?;
            info!("wrote {}", path.display());
            Ok(())
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
                .and_then(|_| lock.flush())
                .map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn to_io<E: std::error::Error + Send + Sync + 'static>(e: E) -> io::Error {
    io::Error::other(e)
}

fn load_config(path: &Path, seed: Option<u64>, routing: &RoutingFlags) -> Result<SimConfig, HarnessError> {
    let mut cfg = SimConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if routing.mode.is_some() || routing.sigma.is_some() || routing.epsilon.is_some() {
        let (base_sigma, base_eps) = match cfg.mode {
            DeliveryMode::TargetedGradient { sigma, epsilon } => (sigma, epsilon),
            DeliveryMode::InterestDissemination { sigma } => (sigma, 0.01),
        };
        let sigma = routing.sigma.unwrap_or(base_sigma);
        let targeted = match routing.mode {
            Some(m) => matches!(m, Mode::Targeted),
            None => matches!(cfg.mode, DeliveryMode::TargetedGradient { .. }),
        };
        let mode = if targeted {
            DeliveryMode::TargetedGradient {
                sigma,
                epsilon: routing.epsilon.unwrap_or(base_eps),
            }
        } else {
            DeliveryMode::InterestDissemination { sigma }
        };
        cfg.override_mode(mode);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_events(path: &Path) -> Result<Vec<encsim::mobility::EncounterEvent>, HarnessError> {
    Ok(read_encounter_events(harness::open(path)?)?)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let exec = Execution::default();
    match cli.command {
        Command::Analyze { trace, bin, out_dir } => {
            if bin == 0 {
                return Err(zero_bin());
            }
            let trace = load_trace(&trace)?;
            let report = analyze_trace(&trace, &SpectrumConfig::new(bin), exec)?;
            info!("analyzed {} pairs", report.len());
            emit(out_dir.as_deref(), "analysis.json", |w| write_json(&report, w))
        }
        Command::Fit { trace, bin, out_dir } => {
            if bin == 0 {
                return Err(zero_bin());
            }
            let trace = load_trace(&trace)?;
            let cfg = FitConfig {
                spectrum: SpectrumConfig::new(bin),
                ..FitConfig::default()
            };
            let personalities = fit_all(&trace, &cfg, exec)?;
            match out_dir {
                Some(dir) => {
                    for p in &personalities {
                        emit(Some(&dir), &format!("{}.json", p.node), |w| write_json(p, w))?;
                    }
                    Ok(())
                }
                None => emit(None, "", |w| write_json(&personalities, w)),
            }
        }
        Command::Simulate {
            config,
            seed,
            routing,
            out_dir,
        } => {
            let cfg = load_config(&config, seed, &routing)?;
            let out = run_scenario(&cfg, exec)?;
            let dir = Some(out_dir.as_path());
            emit(dir, "positions.csv", |w| {
                write_position_rows(&out.positions, w).map_err(to_io)
            })?;
            emit(dir, "encounters.csv", |w| {
                write_encounter_events(&out.encounters, w).map_err(to_io)
            })?;
            emit(dir, "encounter_trace.csv", |w| {
                write_encounter_csv(&out.encounter_trace(&cfg), w).map_err(to_io)
            })?;
            emit(dir, "messages.csv", |w| {
                write_message_log(&out.messages, w).map_err(to_io)
            })?;
            emit(dir, "metrics.json", |w| write_json(&out.metrics, w))
        }
        Command::Infer {
            trace,
            config,
            seed,
            bin,
            out_dir,
        } => {
            let arena = match config {
                Some(path) => SimConfig::load(&path)?.arena,
                None => Arena::default(),
            };
            let trace = load_trace(&trace)?;
            let cfg = InferConfig {
                slot_width: bin,
                seed,
                ..InferConfig::default()
            };
            let positions = infer_plausible_positions(&trace, &arena, &cfg)?;
            if !positions.infeasible_slots.is_empty() {
                log::warn!("{} slots left infeasible", positions.infeasible_slots.len());
            }
            emit(out_dir.as_deref(), "inferred_positions.csv", |w| {
                positions.write_csv(w).map_err(to_io)
            })?;
            if let Some(dir) = out_dir.as_deref() {
                emit(Some(dir), "satisfaction.csv", |w| {
                    positions.write_satisfaction_csv(w).map_err(to_io)
                })?;
            }
            Ok(())
        }
        Command::Route {
            encounters,
            config,
            routing,
            out_dir,
        } => {
            let cfg = load_config(&config, None, &routing)?;
            let events = read_events(&encounters)?;
            let (messages, metrics) = harness::route(&cfg, &events)?;
            emit(out_dir.as_deref(), "messages.csv", |w| {
                write_message_log(&messages, w).map_err(to_io)
            })?;
            if let Some(dir) = out_dir.as_deref() {
                emit(Some(dir), "metrics.json", |w| write_json(&metrics, w))?;
            }
            Ok(())
        }
        Command::Report {
            config,
            encounters,
            messages,
            bin,
            routing,
            out_dir,
        } => {
            let mut cfg = load_config(&config, None, &routing)?;
            if let Some(bin) = bin {
                if bin == 0 {
                    return Err(zero_bin());
                }
                cfg.fidelity.bin_width = bin;
            }
            let events = read_events(&encounters)?;
            let messages = match messages {
                Some(path) => read_message_log(harness::open(&path)?)?,
                None => harness::route(&cfg, &events)?.0,
            };
            let router = cfg.router_config();
            let metrics = compute_metrics(&router.bundles, &router.nodes, &events, &messages);
            let generated = events_to_trace(&events, cfg.node_ids(), cfg.duration_s);
            let fidelity = match evaluate_fidelity(&generated, &cfg.source_components(), &cfg.fidelity, exec) {
                Ok(r) => Some(r),
                Err(HarnessError::NoOverlap) => {
                    log::warn!("no source pair met in the generated trace; fidelity omitted");
                    None
                }
                Err(e) => return Err(e),
            };
            #[derive(serde::Serialize)]
            struct Report {
                metrics: harness::Metrics,
                fidelity: Option<harness::FidelityReport>,
            }
            emit(out_dir.as_deref(), "report.json", |w| {
                write_json(&Report { metrics, fidelity }, w)
            })
        }
    }
}

fn zero_bin() -> HarnessError {
    HarnessError::Trace(encsim::trace::TraceError::ZeroBinWidth)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ENCSIM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
