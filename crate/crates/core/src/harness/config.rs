//! Flat `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! [experiment]
//! scenario = isi
//! methods = task_based, mmse_then_quantize
//! trials = 20000
//!
//! [sweep]
//! axis = rate_bits
//! grid = 8/120, 16/120, 24/120
//! ```
//!
//! Keys before the first header belong to `[experiment]`. `#` starts a
//! comment. Numbers may be written as fractions `a/b`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::deep::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed configuration text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    origin: String,
    entries: BTreeMap<(String, String), Entry>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = "experiment".to_string();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("{origin}:{line}: unterminated section header")))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{line}: expected `key = value`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("{origin}:{line}: empty key")));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert((section.clone(), key.clone()), entry) {
                return Err(Error::Config(format!(
                    "{origin}:{line}: [{section}] {key} already set on line {}",
                    prev.line
                )));
            }
        }
        Ok(Self {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn fail(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        let line = self.entry(section, key).map_or(0, |e| e.line);
        Error::Config(format!("{}:{line}: [{section}] {key}: {msg}", self.origin))
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.fail(section, key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn number(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => parse_number(v).map(Some).map_err(|m| self.fail(section, key, m)),
        }
    }

    pub fn numbers(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|t| parse_number(t.trim()))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|m| self.fail(section, key, m)),
        }
    }

    pub fn list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.raw(section, key)
            .map(|v| v.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect())
    }

    /// Rejects keys outside `known`, naming the first offender.
    pub fn check_known(&self, known: &[(&str, &[&str])]) -> Result<()> {
        for ((section, key), entry) in &self.entries {
            let ok = known.iter().any(|(s, keys)| s == section && keys.contains(&key.as_str()));
            if !ok {
                return Err(Error::Config(format!("{}:{}: unknown key [{section}] {key}", self.origin, entry.line)));
            }
        }
        Ok(())
    }
}

/// Parses `3.5`, `-1e-3` or `8/120`.
pub fn parse_number(text: &str) -> std::result::Result<f64, String> {
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| format!("bad number `{text}`"))?;
            let den: f64 = den.trim().parse().map_err(|_| format!("bad number `{text}`"))?;
            num / den
        }
        None => text.parse().map_err(|_| format!("bad number `{text}`"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("non-finite number `{text}`"))
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("experiment", &["scenario", "methods", "method", "metrics", "trials", "seed", "dither", "output"]),
    ("scenario", &["noise_var", "snr_db", "perturbation", "perturbation_mode", "rate"]),
    ("sweep", &["axis", "grid"]),
    ("design", &["p", "eta", "eta_end", "levels", "rate", "bound"]),
    ("train", &["learning_rate", "batch_size", "epochs", "samples", "hidden", "steepness", "steepness_end", "support", "model"]),
    ("bound", &["eigenvalues", "mmse_floor", "n"]),
    ("hardware", &["groups", "omega", "attenuation", "phase_velocity", "grid_points"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioName {
    Isi,
    DftPilot,
    Covariance,
    Bpsk,
}

impl FromStr for ScenarioName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "isi" => Ok(Self::Isi),
            "dft_pilot" => Ok(Self::DftPilot),
            "covariance" => Ok(Self::Covariance),
            "bpsk" => Ok(Self::Bpsk),
            _ => Err(format!("unknown scenario `{s}` (expected isi, dft_pilot, covariance or bpsk)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationMode {
    Fixed,
    PerSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    pub noise_var: Option<f64>,
    pub snr_db: f64,
    /// CSI error fraction applied to the training data of `deep`.
    pub perturbation: Option<f64>,
    pub perturbation_mode: PerturbationMode,
    /// Rate `R` used by classification methods.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    PhaseOnly,
    Partial,
    PartialPhaseOnly,
    Lorentzian,
}

impl ConstraintKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::PhaseOnly => "phase_only",
            Self::Partial => "partial",
            Self::PartialPhaseOnly => "partial_phase_only",
            Self::Lorentzian => "lorentzian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    TaskBased,
    MmseThenQuantize,
    DigitalOnly,
    Deep,
    Quadratic,
    Constrained(ConstraintKind),
    /// Exhaustive MAP on the unquantized observation.
    Map,
    /// Exhaustive MAP on the entry-wise quantized observation.
    QuantizedMap,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Self::TaskBased => "task_based".into(),
            Self::MmseThenQuantize => "mmse_then_quantize".into(),
            Self::DigitalOnly => "digital_only".into(),
            Self::Deep => "deep".into(),
            Self::Quadratic => "quadratic".into(),
            Self::Constrained(kind) => format!("constrained({})", kind.label()),
            Self::Map => "map".into(),
            Self::QuantizedMap => "quantized_map".into(),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "task_based" => Self::TaskBased,
            "mmse_then_quantize" => Self::MmseThenQuantize,
            "digital_only" => Self::DigitalOnly,
            "deep" => Self::Deep,
            "quadratic" => Self::Quadratic,
            "map" => Self::Map,
            "quantized_map" => Self::QuantizedMap,
            other => {
                let kind = other
                    .strip_prefix("constrained(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| format!("unknown method `{other}`"))?;
                Self::Constrained(match kind {
                    "phase_only" => ConstraintKind::PhaseOnly,
                    "partial" => ConstraintKind::Partial,
                    "partial_phase_only" => ConstraintKind::PartialPhaseOnly,
                    "lorentzian" => ConstraintKind::Lorentzian,
                    _ => return Err(format!("unknown constraint kind `{kind}`")),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    ExcessMse,
    Ber,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::ExcessMse => "excess_mse",
            Self::Ber => "ber",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mse" => Ok(Self::Mse),
            "excess_mse" => Ok(Self::ExcessMse),
            "ber" => Ok(Self::Ber),
            _ => Err(format!("unknown metric `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// `R = (1/n) log₂ M`.
    RateBits,
    SnrDb,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Self::RateBits => "rate_bits",
            Self::SnrDb => "snr_db",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub axis: Axis,
    pub grid: Vec<f64>,
}

/// Overload factor, linear from `start` at the first grid point to `end` at the last.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaSchedule {
    pub start: f64,
    pub end: f64,
}

impl EtaSchedule {
    pub fn constant(eta: f64) -> Self {
        Self { start: eta, end: eta }
    }

    pub fn at(&self, index: usize, points: usize) -> f64 {
        if points <= 1 {
            self.start
        } else {
            self.start + (self.end - self.start) * index as f64 / (points - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    /// Number of quantizers; `None` picks per method.
    pub p: Option<usize>,
    pub eta: EtaSchedule,
    /// Levels for the `design` subcommand (overrides `rate`).
    pub levels: Option<usize>,
    pub rate: Option<f64>,
    pub include_bound: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub config: TrainConfig,
    pub samples: usize,
    pub hidden: usize,
    pub steepness: f64,
    pub support: f64,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareConfig {
    /// Antenna groups for partial connectivity; defaults to `p`.
    pub groups: Option<usize>,
    pub omega: f64,
    pub attenuation: f64,
    pub phase_velocity: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub eigenvalues: Vec<f64>,
    pub mmse_floor: f64,
    pub n: usize,
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub methods: Vec<Method>,
    pub metrics: Vec<Metric>,
    pub sweep: SweepConfig,
    pub trials: usize,
    pub seed: u64,
    pub dither: bool,
    pub output: Option<PathBuf>,
    pub design: DesignConfig,
    pub train: TrainSettings,
    pub hardware: HardwareConfig,
    /// Explicit spectrum for the `bound` subcommand.
    pub bound: Option<BoundConfig>,
}

impl ExperimentConfig {
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        Self::from_file(&ConfigFile::parse(text, origin)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&ConfigFile::load(path)?)
    }

    pub fn from_file(cfg: &ConfigFile) -> Result<Self> {
        cfg.check_known(KNOWN)?;
        let ex = "experiment";
        let name: ScenarioName = cfg.get(ex, "scenario")?.unwrap_or(ScenarioName::Isi);
        let is_bpsk = name == ScenarioName::Bpsk;

        let method_key = if cfg.raw(ex, "methods").is_some() { "methods" } else { "method" };
        let methods = match cfg.list(ex, method_key) {
            Some(items) => items
                .iter()
                .map(|m| m.parse::<Method>().map_err(|e| cfg.fail(ex, method_key, e)))
                .collect::<Result<Vec<_>>>()?,
            None if is_bpsk => vec![Method::Deep],
            None if name == ScenarioName::Covariance => vec![Method::Quadratic],
            None => vec![Method::TaskBased],
        };
        if methods.is_empty() {
            return Err(cfg.fail(ex, method_key, "no methods listed"));
        }
        let metrics = match cfg.list(ex, "metrics") {
            Some(items) => items
                .iter()
                .map(|m| m.parse::<Metric>().map_err(|e| cfg.fail(ex, "metrics", e)))
                .collect::<Result<Vec<_>>>()?,
            None if is_bpsk => vec![Metric::Ber],
            None => vec![Metric::Mse],
        };

        let trials: usize = cfg.get(ex, "trials")?.unwrap_or(if is_bpsk { 20_000 } else { 10_000 });
        if trials == 0 {
            return Err(cfg.fail(ex, "trials", "must be at least 1"));
        }

        let sc = "scenario";
        let perturbation = cfg.number(sc, "perturbation")?;
        if perturbation.is_some_and(|f| f < 0.0) {
            return Err(cfg.fail(sc, "perturbation", "must be nonnegative"));
        }
        let perturbation_mode = match cfg.raw(sc, "perturbation_mode") {
            None | Some("per_sample") => PerturbationMode::PerSample,
            Some("fixed") => PerturbationMode::Fixed,
            Some(other) => return Err(cfg.fail(sc, "perturbation_mode", format!("expected fixed or per_sample, got `{other}`"))),
        };
        let noise_var = cfg.number(sc, "noise_var")?;
        if noise_var.is_some_and(|v| v <= 0.0) {
            return Err(cfg.fail(sc, "noise_var", "must be positive"));
        }
        let scenario = ScenarioConfig {
            name,
            noise_var,
            snr_db: cfg.number(sc, "snr_db")?.unwrap_or(10.0),
            perturbation,
            perturbation_mode,
            rate: cfg.number(sc, "rate")?.unwrap_or(1.0),
        };

        let sw = "sweep";
        let axis = match cfg.raw(sw, "axis") {
            None => {
                if is_bpsk {
                    Axis::SnrDb
                } else {
                    Axis::RateBits
                }
            }
            Some("rate_bits") => Axis::RateBits,
            Some("snr_db") => Axis::SnrDb,
            Some(other) => return Err(cfg.fail(sw, "axis", format!("expected rate_bits or snr_db, got `{other}`"))),
        };
        let grid = match cfg.numbers(sw, "grid")? {
            Some(g) => g,
            None if axis == Axis::SnrDb => vec![scenario.snr_db],
            None => vec![1.0],
        };
        if grid.is_empty() {
            return Err(cfg.fail(sw, "grid", "grid is empty"));
        }
        if grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(cfg.fail(sw, "grid", "grid must be sorted ascending"));
        }
        if axis == Axis::RateBits && grid.iter().any(|r| *r < 0.0) {
            return Err(cfg.fail(sw, "grid", "rates must be nonnegative"));
        }

        let de = "design";
        let eta = cfg.number(de, "eta")?.unwrap_or(4.0);
        let eta_end = cfg.number(de, "eta_end")?.unwrap_or(eta);
        if eta <= 0.0 || eta_end <= 0.0 {
            return Err(cfg.fail(de, "eta", "overload factor must be positive"));
        }
        let p: Option<usize> = cfg.get(de, "p")?;
        if p == Some(0) {
            return Err(cfg.fail(de, "p", "must be at least 1"));
        }
        let design = DesignConfig {
            p,
            eta: EtaSchedule { start: eta, end: eta_end },
            levels: cfg.get(de, "levels")?,
            rate: cfg.number(de, "rate")?,
            include_bound: cfg.get(de, "bound")?.unwrap_or(true),
        };

        let tr = "train";
        let steepness = cfg.number(tr, "steepness")?.unwrap_or(if is_bpsk { 20.0 } else { crate::deep::DEFAULT_STEEPNESS });
        let c_schedule = match cfg.number(tr, "steepness_end")? {
            Some(end) => {
                if end < steepness {
                    return Err(cfg.fail(tr, "steepness_end", "steepness schedule must be non-decreasing"));
                }
                vec![steepness, end]
            }
            None => Vec::new(),
        };
        let train_config = TrainConfig {
            learning_rate: cfg.number(tr, "learning_rate")?.unwrap_or(if is_bpsk { 0.01 } else { 0.003 }),
            batch_size: cfg.get(tr, "batch_size")?.unwrap_or(64),
            epochs: cfg.get(tr, "epochs")?.unwrap_or(if is_bpsk { 200 } else { 30 }),
            seed: 0,
            c_schedule,
        };
        let train = TrainSettings {
            config: train_config,
            samples: cfg.get(tr, "samples")?.unwrap_or(if is_bpsk { 5000 } else { 1 << 15 }),
            hidden: cfg.get(tr, "hidden")?.unwrap_or(32),
            steepness,
            support: cfg.number(tr, "support")?.unwrap_or(if is_bpsk { 1.0 } else { 3.0 }),
            model: cfg.raw(tr, "model").map(PathBuf::from),
        };

        let hw = "hardware";
        let hardware = HardwareConfig {
            groups: cfg.get(hw, "groups")?,
            omega: cfg.number(hw, "omega")?.unwrap_or(1.0),
            attenuation: cfg.number(hw, "attenuation")?.unwrap_or(0.0),
            phase_velocity: cfg.number(hw, "phase_velocity")?.unwrap_or(f64::INFINITY),
            grid_points: cfg.get(hw, "grid_points")?.unwrap_or(crate::hardware::ParamGrid::DEFAULT_POINTS),
        };

        let bo = "bound";
        let bound = match cfg.numbers(bo, "eigenvalues")? {
            Some(eigenvalues) => {
                let n = cfg.get(bo, "n")?.unwrap_or(eigenvalues.len());
                Some(BoundConfig {
                    mmse_floor: cfg.number(bo, "mmse_floor")?.unwrap_or(0.0),
                    eigenvalues,
                    n,
                })
            }
            None => None,
        };

        Ok(Self {
            scenario,
            methods,
            metrics,
            sweep: SweepConfig { axis, grid },
            trials,
            seed: cfg.get(ex, "seed")?.unwrap_or(0),
            dither: cfg.get(ex, "dither")?.unwrap_or(false),
            output: cfg.raw(ex, "output").map(PathBuf::from),
            design,
            train,
            hardware,
            bound,
        })
    }
}
