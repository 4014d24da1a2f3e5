//! Monte Carlo experiment engine: runs estimators and detectors against
//! scenarios, sweeps rate or SNR grids and writes CSV results.

pub mod cli;
pub mod config;
pub mod format;

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bounds::{self, SpectrumBound};
use crate::deep::{self, Dataset, DeepDetector, Network, NetworkSpec};
use crate::hardware::{self, CombinerConstraint, DmaConstraint, Microstrip, PartialAssignment, ParamGrid, Propagation};
use crate::linear_task::{self, LinearTaskModel, QuantizerDesign};
use crate::quadratic_task::{self, LiftedModel, QuadraticTask};
use crate::quant::UniformQuantizerSpec;
use crate::rng::{self, Rng};
use crate::scenarios::{self, Detector, MapDetector, QuantizedMapDetector, ScenarioSpec};
use crate::{Error, Result};

pub use config::{Axis, ConstraintKind, ExperimentConfig, Method, Metric, PerturbationMode, ScenarioName};

/// Trials per parallel block (and per random stream).
pub const BLOCK: usize = 1024;
pub const CSV_HEADER: &str = "axis,method,metric,estimate,std_error,trials";

/// One reported number.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub axis: f64,
    pub method: String,
    pub metric: Metric,
    pub estimate: f64,
    /// `None` when not available (single trial, analytic rows).
    pub std_error: Option<f64>,
    pub trials: usize,
    pub wall_time_ms: f64,
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        let se = self.std_error.map_or_else(|| "NA".to_string(), |s| s.to_string());
        format!("{},{},{},{},{},{}", self.axis, self.method, self.metric.label(), self.estimate, se, self.trials)
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: &mut W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_line())?;
    }
    Ok(())
}

pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// A map from observation to task estimate, possibly randomized (dither).
pub trait Estimator: Sync {
    fn estimate(&self, x: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>>;
}

/// `ŝ = B (Q(A φ(x) + c) − c) + d`, where `φ` is the identity or the
/// quadratic lift.
#[derive(Debug, Clone)]
pub struct HybridPipeline {
    pub design: QuantizerDesign,
    pub lift: Option<LiftedModel>,
    pub analog_offset: Option<DVector<f64>>,
    pub digital_offset: Option<DVector<f64>>,
}

impl HybridPipeline {
    pub fn linear(design: QuantizerDesign) -> Self {
        Self {
            design,
            lift: None,
            analog_offset: None,
            digital_offset: None,
        }
    }
}

impl Estimator for HybridPipeline {
    fn estimate(&self, x: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
        let input = match &self.lift {
            Some(l) => l.lift(x)?,
            None => x.clone(),
        };
        if input.len() != self.design.n() {
            return Err(Error::dims("pipeline input", self.design.n(), input.len()));
        }
        let mut z = &self.design.analog * input;
        if let Some(c) = &self.analog_offset {
            z += c;
        }
        for v in z.iter_mut() {
            *v = self.design.quantizer.apply(*v, rng)?;
        }
        if let Some(c) = &self.analog_offset {
            z -= c;
        }
        let mut s = &self.design.digital * z;
        if let Some(d) = &self.digital_offset {
            s += d;
        }
        Ok(s)
    }
}

/// Always returns the task mean: the estimate without any information.
#[derive(Debug, Clone)]
pub struct MeanOnly(pub DVector<f64>);

impl Estimator for MeanOnly {
    fn estimate(&self, _: &DVector<f64>, _: &mut Rng) -> Result<DVector<f64>> {
        Ok(self.0.clone())
    }
}

/// Task-ignorant quadratic estimate: quantize `x` entry-wise, then evaluate
/// the quadratic forms on the quantized vector.
#[derive(Debug, Clone)]
pub struct PlugInQuadratic {
    pub task: QuadraticTask,
    pub quantizer: UniformQuantizerSpec,
}

impl Estimator for PlugInQuadratic {
    fn estimate(&self, x: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
        let mut q = x.clone();
        for v in q.iter_mut() {
            *v = self.quantizer.apply(*v, rng)?;
        }
        Ok(self.task.evaluate(&q))
    }
}

/// Estimation network (normally hardened).
#[derive(Debug, Clone)]
pub struct DeepEstimator(pub Network);

impl Estimator for DeepEstimator {
    fn estimate(&self, x: &DVector<f64>, _: &mut Rng) -> Result<DVector<f64>> {
        self.0.forward(x)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(mut self, other: &Moments) -> Self {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    fn std_error(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let n = self.count as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        Some((var / n).sqrt())
    }
}

fn blocks(trials: usize) -> Vec<(usize, usize)> {
    (0..trials.div_ceil(BLOCK))
        .map(|b| (b, BLOCK.min(trials - b * BLOCK)))
        .collect()
}

/// Monte Carlo MSE and, when the scenario has an analytic `Γ`, the excess
/// over the MMSE estimate `‖Γx − ŝ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct MseSummary {
    pub mse: ResultRow,
    pub excess: Option<ResultRow>,
}

/// Streams are addressed by `stream(seed, path ++ [block])`.
pub fn simulate_mse_at(
    estimator: &dyn Estimator,
    scenario: &ScenarioSpec,
    trials: usize,
    seed: u64,
    path: &[u64],
) -> Result<MseSummary> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    let start = Instant::now();
    let gamma = scenario.analytic.as_ref().map(|a| &a.gamma);
    let per_block: Vec<Result<(Moments, Moments)>> = blocks(trials)
        .into_par_iter()
        .map(|(b, count)| {
            let mut full = path.to_vec();
            full.push(b as u64);
            let mut r = rng::stream(seed, &full);
            let mut mse = Moments::default();
            let mut excess = Moments::default();
            for _ in 0..count {
                let (s, x) = scenario.sample(&mut r);
                let est = estimator.estimate(&x, &mut r)?;
                if est.len() != s.len() {
                    return Err(Error::dims("estimate length", s.len(), est.len()));
                }
                mse.push((&s - &est).norm_squared());
                if let Some(g) = gamma {
                    excess.push((g * &x - &est).norm_squared());
                }
            }
            Ok((mse, excess))
        })
        .collect();
    let mut mse = Moments::default();
    let mut excess = Moments::default();
    for block in per_block {
        let (m, e) = block?;
        mse = mse.merge(&m);
        excess = excess.merge(&e);
    }
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let row = |metric, m: &Moments| ResultRow {
        axis: 0.0,
        method: String::new(),
        metric,
        estimate: m.mean(),
        std_error: m.std_error(),
        trials,
        wall_time_ms: ms,
    };
    Ok(MseSummary {
        mse: row(Metric::Mse, &mse),
        excess: gamma.map(|_| row(Metric::ExcessMse, &excess)),
    })
}

/// Empirical `E‖s − ŝ‖²` of a linear design, with the ADC dither switched on
/// or off.
pub fn simulate_mse(design: &QuantizerDesign, scenario: &ScenarioSpec, trials: usize, seed: u64, dither: bool) -> Result<ResultRow> {
    if design.n() != scenario.n() || design.k() != scenario.k() {
        return Err(Error::dims(
            "design vs scenario",
            format!("n={} k={}", scenario.n(), scenario.k()),
            format!("n={} k={}", design.n(), design.k()),
        ));
    }
    let pipeline = HybridPipeline::linear(design.with_dither(dither));
    Ok(simulate_mse_at(&pipeline, scenario, trials, seed, &[])?.mse)
}

/// Bit error rate `errors / (k · trials)` of a detector.
pub fn simulate_ber_at(detector: &dyn Detector, scenario: &ScenarioSpec, trials: usize, seed: u64, path: &[u64]) -> Result<ResultRow> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    if !scenario.is_classification() {
        return Err(Error::Parameter(format!("scenario '{}' has no symbols to detect", scenario.name)));
    }
    let start = Instant::now();
    let k = scenario.k() as f64;
    let per_block: Vec<Moments> = blocks(trials)
        .into_par_iter()
        .map(|(b, count)| {
            let mut full = path.to_vec();
            full.push(b as u64);
            let mut r = rng::stream(seed, &full);
            let mut m = Moments::default();
            for _ in 0..count {
                let (s, x) = scenario.sample(&mut r);
                let errors = detector.detect(&x).iter().zip(s.iter()).filter(|(a, b)| a != b).count();
                m.push(errors as f64 / k);
            }
            m
        })
        .collect();
    let m = per_block.iter().fold(Moments::default(), |acc, b| acc.merge(b));
    Ok(ResultRow {
        axis: 0.0,
        method: String::new(),
        metric: Metric::Ber,
        estimate: m.mean(),
        std_error: m.std_error(),
        trials,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn simulate_ber(detector: &dyn Detector, scenario: &ScenarioSpec, trials: usize, seed: u64) -> Result<ResultRow> {
    simulate_ber_at(detector, scenario, trials, seed, &[])
}

/// Detector that ignores its input and flips fair coins; a sanity reference.
#[derive(Debug, Clone)]
pub struct CoinFlip {
    pub symbols: usize,
}

impl Detector for CoinFlip {
    fn detect(&self, x: &DVector<f64>) -> DVector<f64> {
        // derive the coins from the observation so the detector stays stateless
        let h = x.iter().fold(0u64, |acc, v| acc.rotate_left(7) ^ v.to_bits());
        let mut r = rng::from_seed(h);
        DVector::from_fn(self.symbols, |_, _| if rng::uniform(&mut r, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 })
    }
}

/// `M̃ = ⌊2^{bits}⌋` with a guard against round-off just below an integer power.
pub fn levels_for_bits(bits: f64) -> usize {
    (bits.exp2() * (1.0 + 1e-12)).floor() as usize
}

/// Per-quantizer levels when `n R` total bits are split across `p` quantizers.
pub fn levels_for_rate(rate: f64, n: usize, p: usize) -> usize {
    levels_for_bits(n as f64 * rate / p as f64)
}

/// Builds the scenario named in the config, with its overrides.
pub fn build_scenario(cfg: &config::ScenarioConfig) -> Result<ScenarioSpec> {
    Ok(match cfg.name {
        ScenarioName::Isi => scenarios::isi_scenario(),
        ScenarioName::DftPilot => scenarios::dft_pilot_with_noise(cfg.noise_var.unwrap_or(0.25)),
        ScenarioName::Covariance => scenarios::covariance_scenario(),
        ScenarioName::Bpsk => scenarios::bpsk_scenario(scenarios::db_to_linear(cfg.snr_db))?,
    })
}

/// Training scenario for `deep`: the evaluation scenario, optionally with CSI errors.
pub fn training_scenario(scenario: &ScenarioSpec, cfg: &config::ScenarioConfig, seed: u64) -> Result<ScenarioSpec> {
    match cfg.perturbation {
        None => Ok(scenario.clone()),
        Some(f) => match cfg.perturbation_mode {
            PerturbationMode::Fixed => scenarios::csi_perturb(scenario, f, seed),
            PerturbationMode::PerSample => scenarios::csi_perturb_per_sample(scenario, f),
        },
    }
}

/// Hybrid design whose support follows the overload rule
/// `γ = η · max_i (std_i + |mean_i|)` of the ADC inputs `A z + c`.
pub fn design_with_overload_rule(
    model: &LinearTaskModel,
    analog: DMatrix<f64>,
    analog_mean: Option<&DVector<f64>>,
    levels: usize,
    eta: f64,
) -> Result<QuantizerDesign> {
    let cov = &analog * model.obs_cov() * analog.transpose();
    let support = (0..analog.nrows())
        .map(|i| cov[(i, i)].max(0.0).sqrt() + analog_mean.map_or(0.0, |m| m[i].abs()))
        .fold(0.0, f64::max)
        * eta;
    if support.is_nan() || support <= 0.0 {
        return Err(Error::DegenerateTask("every ADC input is constant".into()));
    }
    let digital = linear_task::optimal_digital(&analog, model, support, levels)?;
    let predicted = linear_task::excess_mse(&analog, model, support, levels)?;
    Ok(QuantizerDesign {
        analog,
        quantizer: UniformQuantizerSpec::new(levels, support, false)?,
        digital,
        predicted_excess_mse: predicted,
        singular_values: model.singular_values(),
        waterline: None,
    })
}

/// Quadratic task-based design for a total bit budget: task-based combiners
/// on the lifted model for every `p ≤ k`, supports by the overload rule,
/// keeping the `p` with the smallest predicted excess MSE.
pub fn quadratic_design(lifted: &LiftedModel, total_bits: f64, eta: f64, p: Option<usize>) -> Result<Option<QuantizerDesign>> {
    let k = lifted.model.k();
    let candidates: Vec<usize> = match p {
        Some(p) => vec![p],
        None => (1..=k).collect(),
    };
    let mut best: Option<QuantizerDesign> = None;
    for p in candidates {
        let levels = levels_for_bits(total_bits / p as f64);
        if levels < 2 {
            continue;
        }
        let base = match linear_task::design(&lifted.model, p, levels, eta) {
            Ok(d) => d,
            Err(Error::Parameter(_)) => continue,
            Err(e) => return Err(e),
        };
        let d = design_with_overload_rule(&lifted.model, base.analog, None, levels, eta)?;
        if best.as_ref().is_none_or(|b| d.predicted_excess_mse < b.predicted_excess_mse) {
            best = Some(d);
        }
    }
    Ok(best)
}

/// Constraint object for a `p × n` combiner.
pub fn build_constraint(kind: ConstraintKind, hw: &config::HardwareConfig, p: usize, n: usize) -> Result<CombinerConstraint> {
    let partial = |phase_only| -> Result<CombinerConstraint> {
        let groups = hw.groups.unwrap_or(p);
        if groups != p {
            return Err(Error::Config(format!("[hardware] groups = {groups} must equal p = {p}")));
        }
        Ok(CombinerConstraint::Partial {
            assignment: PartialAssignment::contiguous(p, n)?,
            phase_only,
        })
    };
    Ok(match kind {
        ConstraintKind::PhaseOnly => CombinerConstraint::PhaseOnly,
        ConstraintKind::Partial => partial(false)?,
        ConstraintKind::PartialPhaseOnly => partial(true)?,
        ConstraintKind::Lorentzian => {
            let assignment = PartialAssignment::contiguous(p, n)?;
            let placeholder = hardware::LorentzianElement::new(1.0, 1.0, 1.0)?;
            let layout = assignment
                .subsets()
                .iter()
                .map(|s| Microstrip {
                    elements: vec![placeholder; s.len()],
                    propagation: Propagation {
                        attenuation: hw.attenuation,
                        phase_velocity: hw.phase_velocity,
                    },
                })
                .collect();
            CombinerConstraint::Lorentzian(DmaConstraint {
                layout,
                omega: hw.omega,
                grid: ParamGrid::around(hw.omega).with_points(hw.grid_points),
            })
        }
    })
}

/// Trains an estimation or classification network for one grid point and
/// returns it hardened, with the per-epoch training loss.
pub fn train_network(
    cfg: &ExperimentConfig,
    scenario: &ScenarioSpec,
    channels: usize,
    levels: usize,
    seed: u64,
    path: &[u64],
) -> Result<(Network, Vec<f64>)> {
    let train_scenario = training_scenario(scenario, &cfg.scenario, seed)?;
    let spec = if scenario.is_classification() {
        NetworkSpec {
            steepness: cfg.train.steepness,
            support: cfg.train.support,
            ..NetworkSpec::classifier(scenario.n(), cfg.train.hidden, channels, levels, 1 << scenario.k())
        }
    } else {
        NetworkSpec {
            steepness: cfg.train.steepness,
            support: cfg.train.support,
            ..NetworkSpec::linear(scenario.n(), channels, levels, scenario.k())
        }
    };
    let mut data_path = path.to_vec();
    data_path.push(rng::tag("train/data"));
    let data = Dataset::from_scenario(&train_scenario, cfg.train.samples, &mut rng::stream(seed, &data_path));
    let init_seed = rand::RngCore::next_u64(&mut rng::stream(seed, path));
    let net = Network::new(&spec, init_seed)?;
    let train_cfg = deep::TrainConfig {
        seed: init_seed,
        ..cfg.train.config.clone()
    };
    let report = deep::train(&net, &data, &train_cfg)?;
    Ok((deep::harden(&report.network)?, report.epoch_loss))
}

/// Rows plus human-readable notes (realized rates, skipped points).
#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<ResultRow>,
    pub notes: Vec<String>,
}

fn labeled(mut row: ResultRow, axis: f64, method: &str) -> ResultRow {
    row.axis = axis;
    row.method = method.to_string();
    row
}

/// Runs every method at every grid point.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let scenario = build_scenario(&cfg.scenario)?;
    let mut report = SweepReport::default();
    let points = cfg.sweep.grid.len();
    for (idx, &value) in cfg.sweep.grid.iter().enumerate() {
        let eta = cfg.design.eta.at(idx, points);
        match (cfg.scenario.name, cfg.sweep.axis) {
            (ScenarioName::Bpsk, Axis::SnrDb) => {
                let point = scenarios::bpsk_scenario(scenarios::db_to_linear(value))?;
                bpsk_point(cfg, &point, idx, value, eta, &mut report)?;
            }
            (ScenarioName::Bpsk, Axis::RateBits) => {
                return Err(Error::Config("the bpsk scenario sweeps snr_db; set the rate under [scenario]".into()));
            }
            (_, Axis::SnrDb) => {
                return Err(Error::Config("snr_db sweeps are only defined for the bpsk scenario".into()));
            }
            (ScenarioName::Covariance, Axis::RateBits) => quadratic_point(cfg, &scenario, idx, value, eta, &mut report)?,
            (_, Axis::RateBits) => linear_point(cfg, &scenario, idx, value, eta, &mut report)?,
        }
    }
    Ok(report)
}

fn emit_mse(cfg: &ExperimentConfig, summary: MseSummary, axis: f64, method: &str, rows: &mut Vec<ResultRow>) {
    for metric in &cfg.metrics {
        match metric {
            Metric::Mse => rows.push(labeled(summary.mse.clone(), axis, method)),
            Metric::ExcessMse => {
                if let Some(e) = &summary.excess {
                    rows.push(labeled(e.clone(), axis, method));
                }
            }
            Metric::Ber => {}
        }
    }
}

fn linear_point(cfg: &ExperimentConfig, scenario: &ScenarioSpec, idx: usize, rate: f64, eta: f64, report: &mut SweepReport) -> Result<()> {
    let model = scenario
        .linear_model()
        .ok_or_else(|| Error::Config(format!("scenario '{}' has no linear model", scenario.name)))?;
    let (n, k) = (model.n(), model.k());
    let mean_only = MeanOnly(DVector::zeros(k));
    for &method in &cfg.methods {
        let label = method.label();
        let path = [rng::tag(&label), idx as u64];
        let (p, estimator): (usize, Box<dyn Estimator>) = match method {
            Method::TaskBased | Method::Constrained(_) => {
                let p = cfg.design.p.unwrap_or_else(|| linear_task::recommend_p(model));
                let levels = levels_for_rate(rate, n, p);
                let est: Box<dyn Estimator> = if levels < 2 {
                    Box::new(mean_only.clone())
                } else {
                    let d = match method {
                        Method::Constrained(kind) => {
                            let c = build_constraint(kind, &cfg.hardware, p, n)?;
                            hardware::constrained_design(model, &c, p, levels, eta)?
                        }
                        _ => linear_task::design(model, p, levels, eta)?,
                    };
                    Box::new(HybridPipeline::linear(d.with_dither(cfg.dither)))
                };
                (p, est)
            }
            Method::MmseThenQuantize => {
                let levels = levels_for_rate(rate, n, k);
                let est: Box<dyn Estimator> = if levels < 2 {
                    Box::new(mean_only.clone())
                } else {
                    let d = QuantizerDesign::from_combiner(model, model.task_matrix().clone(), levels, eta, cfg.dither)?;
                    Box::new(HybridPipeline::linear(d))
                };
                (k, est)
            }
            Method::DigitalOnly => {
                let levels = levels_for_rate(rate, n, n);
                let est: Box<dyn Estimator> = if levels < 2 {
                    Box::new(mean_only.clone())
                } else {
                    let d = QuantizerDesign::from_combiner(model, DMatrix::identity(n, n), levels, eta, cfg.dither)?;
                    Box::new(HybridPipeline::linear(d))
                };
                (n, est)
            }
            Method::Deep => {
                let p = cfg.design.p.unwrap_or(k);
                let levels = levels_for_rate(rate, n, p);
                if levels < 2 {
                    (p, Box::new(mean_only.clone()))
                } else {
                    let (net, _) = train_network(cfg, scenario, p, levels, cfg.seed, &path)?;
                    (p, Box::new(DeepEstimator(net)))
                }
            }
            Method::Quadratic | Method::Map | Method::QuantizedMap => {
                return Err(Error::Config(format!("method {label} does not apply to scenario '{}'", scenario.name)));
            }
        };
        let levels = levels_for_rate(rate, n, p);
        let realized = if levels >= 2 { p as f64 * (levels as f64).log2() / n as f64 } else { 0.0 };
        report
            .notes
            .push(format!("{label} at R = {rate}: p = {p}, levels = {levels}, realized R = {realized}"));
        let summary = simulate_mse_at(estimator.as_ref(), scenario, cfg.trials, cfg.seed, &path)?;
        emit_mse(cfg, summary, rate, &label, &mut report.rows);
    }
    if cfg.design.include_bound && cfg.metrics.contains(&Metric::Mse) {
        let bound = bounds::indirect_drf(&SpectrumBound::from_model(model, n as f64 * rate)?);
        report.rows.push(ResultRow {
            axis: rate,
            method: "bound".into(),
            metric: Metric::Mse,
            estimate: bound,
            std_error: None,
            trials: 0,
            wall_time_ms: 0.0,
        });
    }
    Ok(())
}

fn quadratic_point(cfg: &ExperimentConfig, scenario: &ScenarioSpec, idx: usize, rate: f64, eta: f64, report: &mut SweepReport) -> Result<()> {
    let task = scenario.quadratic_task().expect("covariance scenario carries its task");
    let lifted = quadratic_task::to_linear_model(task)?;
    let n = task.n();
    let k = task.k();
    let total_bits = n as f64 * rate;
    let means = task.means();
    let mean_only = MeanOnly(means.clone());
    for &method in &cfg.methods {
        let label = method.label();
        let path = [rng::tag(&label), idx as u64];
        let estimator: Box<dyn Estimator> = match method {
            Method::Quadratic | Method::TaskBased => match quadratic_design(&lifted, total_bits, eta, cfg.design.p)? {
                Some(d) => {
                    report.notes.push(format!("{label} at {total_bits} bits: p = {}, levels = {}", d.p(), d.quantizer.levels()));
                    Box::new(HybridPipeline {
                        design: d.with_dither(cfg.dither),
                        lift: Some(lifted.clone()),
                        analog_offset: None,
                        digital_offset: Some(means.clone()),
                    })
                }
                None => Box::new(mean_only.clone()),
            },
            Method::MmseThenQuantize => {
                let levels = levels_for_bits(total_bits / k as f64);
                if levels < 2 {
                    Box::new(mean_only.clone())
                } else {
                    let d = design_with_overload_rule(&lifted.model, lifted.model.task_matrix().clone(), Some(&means), levels, eta)?;
                    Box::new(HybridPipeline {
                        design: d.with_dither(cfg.dither),
                        lift: Some(lifted.clone()),
                        analog_offset: Some(means.clone()),
                        digital_offset: Some(means.clone()),
                    })
                }
            }
            Method::DigitalOnly => {
                let levels = levels_for_bits(total_bits / n as f64);
                if levels < 2 {
                    Box::new(mean_only.clone())
                } else {
                    let std = (0..n).map(|i| task.input_cov()[(i, i)].sqrt()).fold(0.0, f64::max);
                    Box::new(PlugInQuadratic {
                        task: task.clone(),
                        quantizer: UniformQuantizerSpec::new(levels, eta * std, cfg.dither)?,
                    })
                }
            }
            _ => return Err(Error::Config(format!("method {label} does not apply to scenario '{}'", scenario.name))),
        };
        let summary = simulate_mse_at(estimator.as_ref(), scenario, cfg.trials, cfg.seed, &path)?;
        emit_mse(cfg, summary, rate, &label, &mut report.rows);
    }
    Ok(())
}

fn bpsk_point(cfg: &ExperimentConfig, scenario: &ScenarioSpec, idx: usize, snr_db: f64, eta: f64, report: &mut SweepReport) -> Result<()> {
    let h = scenario.channel().expect("bpsk has a channel").clone();
    let (n, k) = (scenario.n(), scenario.k());
    let rate = cfg.scenario.rate;
    for &method in &cfg.methods {
        let label = method.label();
        let path = [rng::tag(&label), idx as u64];
        let detector: Box<dyn Detector> = match method {
            Method::Map => Box::new(MapDetector::new(h.clone())),
            Method::QuantizedMap => {
                let levels = levels_for_bits(rate);
                if levels < 2 {
                    return Err(Error::Config(format!("rate {rate} gives fewer than 2 levels per entry")));
                }
                let noise_var = scenario.noise_var().expect("bpsk has noise");
                let std = (0..n).map(|i| (h.row(i).norm_squared() + noise_var).sqrt()).fold(0.0, f64::max);
                let q = UniformQuantizerSpec::new(levels, eta * std, false)?;
                Box::new(QuantizedMapDetector::new(h.clone(), noise_var, q))
            }
            Method::Deep => {
                let p = cfg.design.p.unwrap_or(((k as f64) * rate).floor().max(1.0) as usize);
                let levels = levels_for_rate(rate, n, p);
                if levels < 2 {
                    return Err(Error::Config(format!("rate {rate} gives fewer than 2 levels for {p} quantizers")));
                }
                report.notes.push(format!("deep at {snr_db} dB: p = {p}, levels = {levels}"));
                let (net, _) = train_network(cfg, scenario, p, levels, cfg.seed, &path)?;
                Box::new(DeepDetector { network: net, symbols: k })
            }
            _ => return Err(Error::Config(format!("method {label} does not apply to scenario 'bpsk'"))),
        };
        let row = simulate_ber_at(detector.as_ref(), scenario, cfg.trials, cfg.seed, &path)?;
        report.rows.push(labeled(row, snr_db, &label));
    }
    Ok(())
}

/// Indirect distortion-rate curve rows, one per grid rate `R` (total bits `nR`).
pub fn bound_rows(spectrum: &[f64], mmse_floor: f64, n: usize, grid: &[f64]) -> Result<Vec<ResultRow>> {
    let totals: Vec<f64> = grid.iter().map(|r| r * n as f64).collect();
    let values = bounds::drf_curve(spectrum, mmse_floor, &totals)?;
    Ok(grid
        .iter()
        .zip(values)
        .map(|(&axis, estimate)| ResultRow {
            axis,
            method: "bound".into(),
            metric: Metric::Mse,
            estimate,
            std_error: None,
            trials: 0,
            wall_time_ms: 0.0,
        })
        .collect())
}
