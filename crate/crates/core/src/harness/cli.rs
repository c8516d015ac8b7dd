//! `dtta` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime or numerical
//! error. Every command that produces files writes `manifest.txt` next to
//! them; passing that manifest back as `--config` repeats the run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::engine::{run_stream, Method};
use crate::error::{Error, Result};
use crate::model::{load_model, save_model, Model};

use super::config::RunConfig;
use super::experiments::{
    build_scenarios, compare, mean_by_method, order_study, retrieval_sweep, runs_table, sweep_lr,
    MethodSummary,
};
use super::output::{telemetry_table, train_log_table, write_json, write_metrics_json, Manifest};
use super::plots::emit_plots;
use super::scenario::{accuracy_on, trained_model, validation_set, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dtta", version, about = "Test-time adaptation with a dynamic learning rate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (flat key = value); defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`, and `seeds` for multi-seed commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `method`.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Output directory; overrides `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Source model file to adapt instead of training one per seed.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the source model and save it.
    Train,
    /// Adapt over one test stream and write telemetry.
    Adapt,
    /// All four methods over every seed.
    Compare,
    /// Fixed and dynamic rates over the initial-rate grid.
    SweepLr,
    /// One method over shuffled batch orders.
    OrderStudy,
    /// The dynamic method over several retrieval sizes.
    RetrievalSweep,
    /// Write plotting scripts for CSV outputs.
    EmitPlots {
        /// CSV files written by the other commands.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.seeds = vec![seed];
    }
    if let Some(m) = &cli.method {
        cfg.method = m.parse()?;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_input_model(cli: &Cli, manifest: &mut Manifest) -> Result<Option<Model>> {
    match &cli.model {
        Some(path) => {
            let model = load_model(path)?;
            manifest.add_input(path)?;
            Ok(Some(model))
        }
        None => Ok(None),
    }
}

struct OutDir {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl OutDir {
    fn create(dir: &str) -> Result<Self> {
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(PathBuf::from(name));
        self.dir.join(name)
    }

    fn finish(self, mut manifest: Manifest) -> Result<()> {
        manifest.add_outputs(&self.dir, &self.files)?;
        manifest.save(&self.dir)?;
        for f in &self.files {
            println!("wrote {}", self.dir.join(f).display());
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    epochs: usize,
    final_loss: f64,
    train_accuracy: f64,
    validation_accuracy: f64,
}

#[derive(Serialize)]
struct CompareSummary {
    seeds: Vec<u64>,
    methods: Vec<(Method, MethodSummary)>,
}

#[derive(Serialize)]
struct OrderSummaryJson {
    method: Method,
    n_orders: usize,
    final_accuracy_std: f64,
    orders: Vec<super::experiments::OrderResult>,
}

pub const VALIDATION_SAMPLES: usize = 1000;

fn execute(cli: &Cli) -> Result<()> {
    if let Command::EmitPlots { csv } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("plots"));
        for script in emit_plots(csv, &out)? {
            println!("wrote {}", script.display());
        }
        return Ok(());
    }
    let cfg = resolve_config(cli)?;
    let name = command_name(&cli.command);
    let seeds = match cli.command {
        Command::Train | Command::Adapt => vec![cfg.seed],
        _ => cfg.seeds.clone(),
    };
    let mut manifest = Manifest::new(name, cfg.to_text(), seeds.clone());
    let mut out = OutDir::create(&cfg.out)?;
    match cli.command {
        Command::Train => {
            let (model, _, log) = trained_model(&cfg, cfg.seed)?;
            save_model(&model, out.path("model.bin"))?;
            train_log_table(&log)?.save(out.path("train_log.csv"))?;
            let val = validation_set(&cfg, cfg.seed, VALIDATION_SAMPLES)?;
            let summary = TrainSummary {
                seed: cfg.seed,
                epochs: log.len(),
                final_loss: log.last().map_or(f64::NAN, |e| e.loss),
                train_accuracy: log.last().map_or(f64::NAN, |e| e.accuracy),
                validation_accuracy: accuracy_on(&model, &val)?,
            };
            println!("validation accuracy {:.4}", summary.validation_accuracy);
            write_json(&summary, out.path("train_summary.json"))?;
        }
        Command::Adapt => {
            let scenario = match load_input_model(cli, &mut manifest)? {
                Some(m) => Scenario::with_model(&cfg, cfg.seed, m)?,
                None => Scenario::build(&cfg, cfg.seed)?,
            };
            let mut model = scenario.model.clone();
            let result = run_stream(&mut model, scenario.stream, &cfg.adapt_config(), None, &mut crate::engine::NullSink)?;
            telemetry_table(cfg.method, &result.telemetry)?.save(out.path("telemetry.csv"))?;
            write_metrics_json(&result.metrics, out.path("metrics.json"))?;
            println!(
                "{}: streaming accuracy {:.4}, final accuracy {:.4}",
                cfg.method, result.metrics.streaming_accuracy, result.metrics.final_accuracy
            );
            if result.flagged {
                eprintln!("warning: {} steps were aborted and rolled back", result.metrics.aborted_steps);
            }
        }
        Command::Compare => {
            let model = load_input_model(cli, &mut manifest)?;
            let scenarios = build_scenarios(&cfg, &seeds, model.as_ref())?;
            let cells = compare(&cfg, &scenarios, &Method::ALL)?;
            runs_table(&cells)?.save(out.path("runs.csv"))?;
            let methods = mean_by_method(&cells);
            for (m, s) in &methods {
                println!(
                    "{m:>6}: final accuracy {:.4}, streaming {:.4}, smoothness {:.4}",
                    s.final_accuracy, s.streaming_accuracy, s.loss_smoothness
                );
            }
            write_json(&CompareSummary { seeds, methods }, out.path("summary.json"))?;
        }
        Command::SweepLr => {
            let model = load_input_model(cli, &mut manifest)?;
            let scenarios = build_scenarios(&cfg, &seeds, model.as_ref())?;
            let methods = match &cli.method {
                Some(_) => vec![cfg.method],
                None => vec![Method::Fixed, Method::Dltta],
            };
            let result = sweep_lr(&cfg, &scenarios, &methods, &cfg.lr_multipliers)?;
            runs_table(&result.cells)?.save(out.path("runs.csv"))?;
            result.summary_table()?.save(out.path("sweep_lr_summary.csv"))?;
            for (m, std) in &result.grid_std {
                println!("{m:>6}: std of final accuracy across the grid {std:.4}");
            }
        }
        Command::OrderStudy => {
            let model = load_input_model(cli, &mut manifest)?;
            let scenarios = build_scenarios(&cfg, &seeds, model.as_ref())?;
            let study = order_study(&cfg, &scenarios, cfg.method, cfg.n_orders)?;
            runs_table(&study.cells)?.save(out.path("runs.csv"))?;
            study.summary_table()?.save(out.path("order_summary.csv"))?;
            println!("{}: std of final accuracy across orders {:.4}", cfg.method, study.std);
            write_json(
                &OrderSummaryJson {
                    method: cfg.method,
                    n_orders: cfg.n_orders,
                    final_accuracy_std: study.std,
                    orders: study.orders,
                },
                out.path("order_study.json"),
            )?;
        }
        Command::RetrievalSweep => {
            let model = load_input_model(cli, &mut manifest)?;
            let scenarios = build_scenarios(&cfg, &seeds, model.as_ref())?;
            let sweep = retrieval_sweep(&cfg, &scenarios, &cfg.retrieval_sizes)?;
            runs_table(&sweep.cells)?.save(out.path("runs.csv"))?;
            sweep.summary_table()?.save(out.path("retrieval_summary.csv"))?;
            for p in &sweep.points {
                println!("D = {:>3}: final accuracy {:.4}", p.retrieval_size, p.mean_final_accuracy);
            }
        }
        Command::EmitPlots { .. } => unreachable!("handled above"),
    }
    out.finish(manifest)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train => "train",
        Command::Adapt => "adapt",
        Command::Compare => "compare",
        Command::SweepLr => "sweep-lr",
        Command::OrderStudy => "order-study",
        Command::RetrievalSweep => "retrieval-sweep",
        Command::EmitPlots { .. } => "emit-plots",
    }
}

/// Path of the manifest a command wrote into `dir`.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(super::output::MANIFEST_FILE)
}
