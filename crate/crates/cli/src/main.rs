//! `cpe`: sweeps, training, single-trace evaluation and plot data for the
//! carrier phase estimators in `cpe-core`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use cpe_core::estimators::{Algorithm, BpMode};
use cpe_core::experiment::{self, DemapperMode, ExperimentConfig};
use cpe_core::training::{LossKind, TrainSchedule};
use cpe_core::Error;

#[derive(Parser)]
#[command(name = "cpe", version, about = "Carrier phase estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (SNR, σ_θ²) cell and write realizations.csv / summary.csv.
    Sweep(Common),
    /// Train the weighted softmin BPS for a single cell.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Run one algorithm on one realization and dump per-symbol CSVs.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Algorithm,
        #[arg(long, default_value_t = 0)]
        realization: usize,
    },
    /// Turn a sweep directory into BMI-vs-SNR tables and a weights table.
    PlotData(Common),
}

/// Overrides applied on top of the JSON config (or the defaults).
#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sigma_theta_sq: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    half_window: Option<usize>,
    #[arg(long)]
    num_phases: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    num_symbols: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    exclude_edges: Option<bool>,
    #[arg(long, value_parser = parse_snake::<DemapperMode>)]
    demapper: Option<DemapperMode>,
    /// QAM order.
    #[arg(long)]
    order: Option<usize>,
    /// Maxwell-Boltzmann λ (clears the entropy target).
    #[arg(long, conflicts_with_all = ["target_entropy", "uniform"])]
    lambda: Option<f64>,
    /// Shaping target in bits (clears λ).
    #[arg(long, conflicts_with = "uniform")]
    target_entropy: Option<f64>,
    /// Unshaped constellation.
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    wrap_terms: Option<usize>,
    #[arg(long, value_parser = parse_snake::<BpMode>)]
    bp_mode: Option<BpMode>,
    /// Trained parameters (train report or bare params JSON) for bps_opt.
    #[arg(long)]
    bps_opt_params: Option<PathBuf>,
    #[arg(long)]
    bps_opt_temperature: Option<f64>,
}

#[derive(Args)]
struct TrainFlags {
    /// Start from the 10-epoch desk schedule instead of the full one.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batches_start: Option<usize>,
    #[arg(long)]
    batches_end: Option<usize>,
    #[arg(long)]
    batch_symbols_start: Option<usize>,
    #[arg(long)]
    batch_symbols_end: Option<usize>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    init_temperature: Option<f64>,
    #[arg(long, value_parser = parse_snake::<LossKind>)]
    loss: Option<LossKind>,
    #[arg(long)]
    validation_symbols: Option<usize>,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl Common {
    fn resolve(self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        set!(cfg.output_dir, self.output_dir);
        set!(cfg.snr_db, self.snr_db);
        set!(cfg.sigma_theta_sq, self.sigma_theta_sq);
        set!(cfg.algorithms, self.algorithms);
        set!(cfg.half_window, self.half_window);
        set!(cfg.num_phases, self.num_phases);
        set!(cfg.realizations, self.realizations);
        set!(cfg.num_symbols, self.num_symbols);
        set!(cfg.seed, self.seed);
        set!(cfg.exclude_edges, self.exclude_edges);
        set!(cfg.demapper, self.demapper);
        set!(cfg.constellation.order, self.order);
        if let Some(l) = self.lambda {
            cfg.constellation.lambda = Some(l);
            cfg.constellation.target_entropy_bits = None;
        }
        if let Some(h) = self.target_entropy {
            cfg.constellation.target_entropy_bits = Some(h);
            cfg.constellation.lambda = None;
        }
        if self.uniform {
            cfg.constellation.lambda = None;
            cfg.constellation.target_entropy_bits = None;
        }
        set!(cfg.overrides.wrap_terms, self.wrap_terms);
        set!(cfg.overrides.bp_mode, self.bp_mode);
        if self.bps_opt_params.is_some() {
            cfg.overrides.bps_opt_params = self.bps_opt_params;
        }
        set!(cfg.overrides.bps_opt_temperature, self.bps_opt_temperature);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainFlags {
    fn apply(self, base: TrainSchedule) -> TrainSchedule {
        let mut s = if self.desk {
            TrainSchedule {
                seed: base.seed,
                loss: base.loss,
                ..TrainSchedule::desk()
            }
        } else {
            base
        };
        set!(s.epochs, self.epochs);
        set!(s.learning_rate, self.lr);
        set!(s.batches_start, self.batches_start);
        set!(s.batches_end, self.batches_end);
        set!(s.batch_symbols_start, self.batch_symbols_start);
        set!(s.batch_symbols_end, self.batch_symbols_end);
        set!(s.seed, self.train_seed);
        set!(s.init_temperature, self.init_temperature);
        set!(s.loss, self.loss);
        set!(s.validation_symbols, self.validation_symbols);
        s
    }
}

fn init_workers() -> Result<(), Error> {
    let Ok(v) = std::env::var("CPE_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CPE_WORKERS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))
}

fn run(cmd: Command) -> Result<(), Error> {
    init_workers()?;
    match cmd {
        Command::Sweep(common) => {
            let cfg = common.resolve()?;
            let out = experiment::run_sweep(&cfg)?;
            println!(
                "config {}: {} cells computed, {} reused, {} summary rows in {}",
                out.config_hash,
                out.computed_cells,
                out.reused_cells,
                out.summary.len(),
                cfg.output_dir.join(experiment::SUMMARY_FILE).display()
            );
        }
        Command::Train { common, train } => {
            let mut cfg = common.resolve()?;
            cfg.train = train.apply(cfg.train);
            cfg.validate()?;
            let report = experiment::run_train(&cfg)?;
            if let Some(msg) = &report.aborted {
                eprintln!("training aborted: {msg}");
            }
            println!(
                "{} epochs, final loss {:.6}, temperature {:.4e}, report in {}",
                report.epochs_completed,
                report.epoch_loss.last().copied().unwrap_or(f64::NAN),
                report.params.temperature,
                cfg.output_dir.join(experiment::TRAIN_REPORT_FILE).display()
            );
            if report.aborted.is_some() {
                return Err(Error::Numerical("training diverged".into()));
            }
        }
        Command::Eval {
            common,
            algorithm,
            realization,
        } => {
            let cfg = common.resolve()?;
            let s = experiment::run_eval(&cfg, algorithm, realization)?;
            println!(
                "{} realization {}: BMI {:.4} bit, σ² {:.4e}, {} slips, files in {}",
                s.algorithm,
                s.realization,
                s.report.bmi_bits,
                s.report.demapper_sigma_sq,
                s.slip_events.len(),
                s.directory.display()
            );
        }
        Command::PlotData(common) => {
            let cfg = common.resolve()?;
            for p in experiment::emit_plot_data(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
