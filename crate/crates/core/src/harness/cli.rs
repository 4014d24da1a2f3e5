//! Command-line front end: `design`, `simulate`, `sweep`, `bound`, `train`
//! and `harden`, with uniform `--seed`, `--trials`, `--config`, `--output`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::ExperimentConfig;
use super::{format, Axis, Metric, ScenarioName};
use crate::bounds::SpectrumBound;
use crate::deep::{self, DeepDetector, Head};
use crate::linear_task;
use crate::rng;
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tbq", about = "Task-based quantization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Root random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo trials (overrides the config).
    #[arg(long)]
    trials: Option<usize>,
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path (CSV, design or model file).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a task-based design and optionally write it as a design file.
    Design(Common),
    /// Simulate every configured method at the first grid point.
    Simulate(Common),
    /// Run the full grid and write CSV.
    Sweep(Common),
    /// Write the indirect distortion-rate curve as CSV.
    Bound(Common),
    /// Train a deep task-based quantizer and write the hardened model file.
    Train(Common),
    /// Harden a model file and print its quantizers.
    Harden {
        #[command(flatten)]
        common: Common,
        /// Model file (defaults to `[train] model` in the config).
        model: Option<PathBuf>,
    },
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_cli_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_config_error() {
                1
            } else {
                2
            }
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required for this subcommand".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        if trials == 0 {
            return Err(Error::Config("--trials must be at least 1".into()));
        }
        cfg.trials = trials;
    }
    if let Some(output) = &common.output {
        cfg.output = Some(output.clone());
    }
    Ok(cfg)
}

fn emit_csv(rows: &[super::ResultRow], target: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let text = super::csv_string(rows);
    match target {
        Some(path) => std::fs::write(path, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Design(c) => design(&load(&c)?, out),
        Command::Simulate(c) => {
            let mut cfg = load(&c)?;
            let first = cfg.sweep.grid[0];
            cfg.sweep.grid = vec![first];
            let report = super::sweep(&cfg)?;
            report.notes.iter().try_for_each(|n| writeln!(err, "{n}"))?;
            emit_csv(&report.rows, cfg.output.as_deref(), out)
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            let report = super::sweep(&cfg)?;
            report.notes.iter().try_for_each(|n| writeln!(err, "{n}"))?;
            emit_csv(&report.rows, cfg.output.as_deref(), out)
        }
        Command::Bound(c) => {
            let cfg = load(&c)?;
            if cfg.sweep.axis != Axis::RateBits {
                return Err(Error::Config("bound needs a rate_bits grid".into()));
            }
            let rows = match &cfg.bound {
                Some(b) => super::bound_rows(&b.eigenvalues, b.mmse_floor, b.n, &cfg.sweep.grid)?,
                None => {
                    let scenario = super::build_scenario(&cfg.scenario)?;
                    let model = scenario
                        .linear_model()
                        .ok_or_else(|| Error::Config(format!("scenario '{}' has no linear model to bound", scenario.name)))?;
                    let spec = SpectrumBound::from_model(model, 0.0)?;
                    super::bound_rows(spec.eigenvalues(), spec.mmse_floor, model.n(), &cfg.sweep.grid)?
                }
            };
            emit_csv(&rows, cfg.output.as_deref(), out)
        }
        Command::Train(c) => train(&load(&c)?, out),
        Command::Harden { common, model } => {
            let cfg = match &common.config {
                Some(_) => Some(load(&common)?),
                None => None,
            };
            let path = model
                .or_else(|| cfg.as_ref().and_then(|c| c.train.model.clone()))
                .ok_or_else(|| Error::Config("harden needs a model file path".into()))?;
            let net = format::load_network(&path).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("cannot read model file {}: {io}", path.display())),
                other => other,
            })?;
            let hard = deep::harden(&net)?;
            if let deep::QuantStage::Hard(chans) = hard.quant() {
                for (i, q) in chans.iter().enumerate() {
                    writeln!(out, "channel {i}: thresholds {:?} levels {:?}", q.thresholds(), q.levels())?;
                }
            }
            if let Some(target) = common.output.as_ref() {
                format::save_network(&hard, target)?;
            }
            Ok(())
        }
    }
}

fn design(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let scenario = super::build_scenario(&cfg.scenario)?;
    let model = scenario
        .linear_model()
        .ok_or_else(|| Error::Config(format!("scenario '{}' has no linear model to design for", scenario.name)))?;
    let p = cfg.design.p.unwrap_or_else(|| linear_task::recommend_p(model));
    let levels = match cfg.design.levels {
        Some(l) => l,
        None => super::levels_for_rate(cfg.design.rate.unwrap_or(cfg.sweep.grid[0]), model.n(), p),
    };
    let eta = cfg.design.eta.start;
    let d = linear_task::design(model, p, levels, eta)?;
    writeln!(out, "scenario {} n = {} k = {}", scenario.name, model.n(), model.k())?;
    writeln!(out, "p = {p} levels = {levels} eta = {eta} total bits = {}", d.total_bits())?;
    writeln!(out, "support = {} waterline = {:?}", d.quantizer.support(), d.waterline)?;
    writeln!(out, "predicted excess mse = {}", d.predicted_excess_mse)?;
    writeln!(out, "mmse = {} predicted total = {}", model.mmse_floor(), model.mmse_floor() + d.predicted_excess_mse)?;
    if let Some(path) = &cfg.output {
        format::save_design(&d, path)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

fn train(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let scenario = match cfg.scenario.name {
        ScenarioName::Covariance => return Err(Error::Config("train supports the isi, dft_pilot and bpsk scenarios".into())),
        _ => super::build_scenario(&cfg.scenario)?,
    };
    let (n, k) = (scenario.n(), scenario.k());
    let (p, levels) = if scenario.is_classification() {
        let rate = cfg.scenario.rate;
        let p = cfg.design.p.unwrap_or(((k as f64) * rate).floor().max(1.0) as usize);
        (p, super::levels_for_rate(rate, n, p))
    } else {
        let p = cfg.design.p.unwrap_or(k);
        (p, super::levels_for_rate(cfg.design.rate.unwrap_or(cfg.sweep.grid[0]), n, p))
    };
    if levels < 2 {
        return Err(Error::Config(format!("the configured rate gives {levels} level(s) for {p} quantizers")));
    }
    let path = [rng::tag("train")];
    let (net, losses) = super::train_network(cfg, &scenario, p, levels, cfg.seed, &path)?;
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(out, "epoch {epoch} loss {loss}")?;
    }
    let test_path = [rng::tag("train/test")];
    match net.head() {
        Head::Estimation { .. } => {
            let row = super::simulate_mse_at(&super::DeepEstimator(net.clone()), &scenario, cfg.trials, cfg.seed, &test_path)?;
            writeln!(out, "hardened test {} {} over {} trials", Metric::Mse.label(), row.mse.estimate, cfg.trials)?;
        }
        Head::Classification { .. } => {
            let det = DeepDetector { network: net.clone(), symbols: k };
            let row = super::simulate_ber_at(&det, &scenario, cfg.trials, cfg.seed, &test_path)?;
            writeln!(out, "hardened test {} {} over {} trials", Metric::Ber.label(), row.estimate, cfg.trials)?;
        }
    }
    if let Some(path) = &cfg.output {
        format::save_network(&net, path)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}
