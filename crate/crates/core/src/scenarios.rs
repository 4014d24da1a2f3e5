//! Statistical models for the experiments, each with a seeded sampler of
//! `(s, x)` pairs and, when it exists in closed form, the linear-MMSE map.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use statrs::function::erf::erfc;

use crate::bounds;
use crate::linalg;
use crate::linear_task::LinearTaskModel;
use crate::quadratic_task::QuadraticTask;
use crate::quant::UniformQuantizerSpec;
use crate::rng;
use crate::{Error, Result};

/// Closed-form linear-MMSE estimator of a Gaussian scenario.
#[derive(Debug, Clone)]
pub struct Analytic {
    pub gamma: DMatrix<f64>,
    pub mmse: f64,
}

#[derive(Debug, Clone)]
pub enum ScenarioModel {
    Linear(LinearTaskModel),
    Quadratic(QuadraticTask),
    /// Data-only scenario (no designer model), e.g. BPSK detection.
    SamplerOnly,
}

#[derive(Debug, Clone)]
enum Channel {
    Exact,
    /// `H + E` with one fixed draw of `E`.
    Fixed(DMatrix<f64>),
    /// Fresh `E_ij ~ N(0, fraction·|H_ij|)` for every sample.
    PerSample(DMatrix<f64>),
}

#[derive(Debug, Clone)]
enum Sampler {
    /// `s = L g`, `x = H s + σ w`.
    LinearGaussian {
        h: DMatrix<f64>,
        task_chol: DMatrix<f64>,
        noise_std: f64,
        channel: Channel,
    },
    /// `x = L g`, `s_i = xᵀ C_i x`.
    QuadraticGaussian { input_chol: DMatrix<f64>, task: QuadraticTask },
    /// `s` uniform on `{−1, 1}^k`, `x = H s + σ w`.
    Bpsk {
        h: DMatrix<f64>,
        noise_std: f64,
        channel: Channel,
    },
}

/// A named experiment model with its sampler.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub model: ScenarioModel,
    pub analytic: Option<Analytic>,
    sampler: Sampler,
}

impl ScenarioSpec {
    /// Task dimension `k`.
    pub fn k(&self) -> usize {
        match &self.sampler {
            Sampler::LinearGaussian { h, .. } | Sampler::Bpsk { h, .. } => h.ncols(),
            Sampler::QuadraticGaussian { task, .. } => task.k(),
        }
    }

    /// Observation dimension `n`.
    pub fn n(&self) -> usize {
        match &self.sampler {
            Sampler::LinearGaussian { h, .. } | Sampler::Bpsk { h, .. } => h.nrows(),
            Sampler::QuadraticGaussian { task, .. } => task.n(),
        }
    }

    /// True channel matrix `H`, when the scenario has one.
    pub fn channel(&self) -> Option<&DMatrix<f64>> {
        match &self.sampler {
            Sampler::LinearGaussian { h, .. } | Sampler::Bpsk { h, .. } => Some(h),
            Sampler::QuadraticGaussian { .. } => None,
        }
    }

    /// Additive noise variance `σ_w²`, when the scenario has one.
    pub fn noise_var(&self) -> Option<f64> {
        match &self.sampler {
            Sampler::LinearGaussian { noise_std, .. } | Sampler::Bpsk { noise_std, .. } => Some(noise_std * noise_std),
            Sampler::QuadraticGaussian { .. } => None,
        }
    }

    pub fn linear_model(&self) -> Option<&LinearTaskModel> {
        match &self.model {
            ScenarioModel::Linear(m) => Some(m),
            _ => None,
        }
    }

    pub fn quadratic_task(&self) -> Option<&QuadraticTask> {
        match &self.model {
            ScenarioModel::Quadratic(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.sampler, Sampler::Bpsk { .. })
    }

    /// Whether the sampler uses a perturbed channel (training-only data).
    pub fn is_perturbed(&self) -> bool {
        match &self.sampler {
            Sampler::LinearGaussian { channel, .. } | Sampler::Bpsk { channel, .. } => !matches!(channel, Channel::Exact),
            Sampler::QuadraticGaussian { .. } => false,
        }
    }

    /// Draws one `(s, x)` pair.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        match &self.sampler {
            Sampler::LinearGaussian {
                h,
                task_chol,
                noise_std,
                channel,
            } => {
                let s = task_chol * rng::normal_vector(task_chol.ncols(), rng);
                let x = observe(h, channel, &s, *noise_std, rng);
                (s, x)
            }
            Sampler::QuadraticGaussian { input_chol, task } => {
                let x = input_chol * rng::normal_vector(input_chol.ncols(), rng);
                (task.evaluate(&x), x)
            }
            Sampler::Bpsk { h, noise_std, channel } => {
                let s = DVector::from_fn(h.ncols(), |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
                let x = observe(h, channel, &s, *noise_std, rng);
                (s, x)
            }
        }
    }

    /// Draws `count` pairs.
    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<(DVector<f64>, DVector<f64>)> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

fn observe<R: Rng + ?Sized>(h: &DMatrix<f64>, channel: &Channel, s: &DVector<f64>, noise_std: f64, rng: &mut R) -> DVector<f64> {
    let noise = rng::normal_vector(h.nrows(), rng) * noise_std;
    match channel {
        Channel::Exact => h * s + noise,
        Channel::Fixed(perturbed) => perturbed * s + noise,
        Channel::PerSample(std) => {
            let e = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| std[(i, j)] * rng::normal(rng));
            (h + e) * s + noise
        }
    }
}

/// Builds a linear-Gaussian scenario `x = H s + w`.
pub fn linear_gaussian(name: &str, h: DMatrix<f64>, sigma_s: DMatrix<f64>, noise_var: f64) -> Result<ScenarioSpec> {
    let (gamma, mmse) = bounds::gaussian_mmse(&h, &sigma_s, noise_var)?;
    let obs_cov = bounds::observation_cov(&h, &sigma_s, noise_var);
    let model = LinearTaskModel::new(obs_cov, gamma.clone(), mmse)?;
    let task_chol = linalg::symmetrize(&sigma_s)
        .cholesky()
        .ok_or_else(|| Error::Parameter("task covariance is not positive definite".into()))?
        .l();
    Ok(ScenarioSpec {
        name: name.to_string(),
        model: ScenarioModel::Linear(model),
        analytic: Some(Analytic { gamma, mmse }),
        sampler: Sampler::LinearGaussian {
            h,
            task_chol,
            noise_std: noise_var.sqrt(),
            channel: Channel::Exact,
        },
    })
}

/// Exponential correlation `e^{−|i−j|}`.
pub fn exp_correlation(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| (-((i as f64) - (j as f64)).abs()).exp())
}

/// Multipath channel estimation from a known cosine training sequence:
/// `k = 8` taps with covariance `e^{−|i−j|}`, `n = 120` observations,
/// unit-variance noise.
pub fn isi_scenario() -> ScenarioSpec {
    let (k, n) = (8usize, 120usize);
    // x_i = Σ_l s_l a_{i−l+1}, a_m = cos(2πm/n) for m > 0, zero otherwise
    let h = DMatrix::from_fn(n, k, |r, c| {
        if r >= c {
            let m = (r - c + 1) as f64;
            (2.0 * PI * m / n as f64).cos()
        } else {
            0.0
        }
    });
    linear_gaussian("isi", h, exp_correlation(k), 1.0).expect("isi scenario is well-posed")
}

/// Upper-triangular index pairs of a `dim × dim` matrix, row-major.
pub fn upper_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim).flat_map(|i| (i..dim).map(move |j| (i, j))).collect()
}

/// Empirical covariance recovery: `x` stacks four i.i.d. `N(0, Σ_v)` 3-vectors
/// (`n = 12`) and the task is the upper triangle of `¼ Σ_b v_b v_bᵀ` (`k = 6`).
pub fn covariance_scenario() -> ScenarioSpec {
    let (blocks, dim) = (4usize, 3usize);
    let n = blocks * dim;
    let sigma_v = exp_correlation(dim);
    let mut sigma_x = DMatrix::zeros(n, n);
    for b in 0..blocks {
        sigma_x.view_mut((b * dim, b * dim), (dim, dim)).copy_from(&sigma_v);
    }
    let weight = 1.0 / blocks as f64;
    let forms = upper_pairs(dim)
        .into_iter()
        .map(|(i, j)| {
            let mut c = DMatrix::zeros(n, n);
            for b in 0..blocks {
                let (bi, bj) = (b * dim + i, b * dim + j);
                if i == j {
                    c[(bi, bi)] = weight;
                } else {
                    c[(bi, bj)] = 0.5 * weight;
                    c[(bj, bi)] = 0.5 * weight;
                }
            }
            c
        })
        .collect();
    let task = QuadraticTask::new(forms, sigma_x.clone()).expect("covariance scenario is well-posed");
    let input_chol = sigma_x.cholesky().expect("positive definite").l();
    ScenarioSpec {
        name: "covariance".into(),
        model: ScenarioModel::Quadratic(task.clone()),
        analytic: None,
        sampler: Sampler::QuadraticGaussian { input_chol, task },
    }
}

/// First `cols` columns of the (unnormalized) `size × size` DFT matrix.
pub fn dft_columns(size: usize, cols: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(size, cols, |m, c| {
        Complex64::from_polar(1.0, -2.0 * PI * (m * c) as f64 / size as f64)
    })
}

/// Pilot-based channel estimation: `H` is the real-composite embedding of
/// `Φ ⊗ I₅` with `Φ` the first 4 columns of the 12×12 DFT matrix, giving
/// `n = 120`, `k = 40`; `s ~ N(0, I)`, `σ_w² = 0.25`.
pub fn dft_pilot_scenario() -> ScenarioSpec {
    dft_pilot_with_noise(0.25)
}

pub fn dft_pilot_with_noise(noise_var: f64) -> ScenarioSpec {
    let phi = dft_columns(12, 4);
    let eye = DMatrix::<Complex64>::identity(5, 5);
    let h = linalg::real_composite(&linalg::kron_complex(&phi, &eye));
    let k = h.ncols();
    linear_gaussian("dft_pilot", h, DMatrix::identity(k, k), noise_var).expect("dft pilot scenario is well-posed")
}

/// `10^{dB/10}`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// BPSK symbol detection: `s` uniform on `{−1, 1}⁴`, `(H)_ij = e^{−|i−j|}`
/// (12×4), `σ_w² = 1/snr` with `snr` on a linear scale.
pub fn bpsk_scenario(snr: f64) -> Result<ScenarioSpec> {
    if !(snr.is_finite() && snr > 0.0) {
        return Err(Error::Parameter(format!("snr must be positive and finite, got {snr}")));
    }
    let (n, k) = (12usize, 4usize);
    let h = DMatrix::from_fn(n, k, |i, j| (-((i as f64) - (j as f64)).abs()).exp());
    Ok(ScenarioSpec {
        name: "bpsk".into(),
        model: ScenarioModel::SamplerOnly,
        analytic: None,
        sampler: Sampler::Bpsk {
            h,
            noise_std: (1.0 / snr).sqrt(),
            channel: Channel::Exact,
        },
    })
}

/// Training-data scenario with a fixed channel error `E`,
/// `E_ij ~ N(0, fraction·|H_ij|)` drawn once from `seed`.
pub fn csi_perturb(scenario: &ScenarioSpec, fraction: f64, seed: u64) -> Result<ScenarioSpec> {
    let std = perturbation_std(scenario, fraction)?;
    let mut r = rng::stream(seed, &[rng::tag("csi_perturb")]);
    let h = scenario.channel().expect("checked by perturbation_std");
    let perturbed = h + DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| std[(i, j)] * rng::normal(&mut r));
    Ok(with_channel(scenario, Channel::Fixed(perturbed)))
}

/// Like [`csi_perturb`], but with a fresh channel error for every sample.
pub fn csi_perturb_per_sample(scenario: &ScenarioSpec, fraction: f64) -> Result<ScenarioSpec> {
    let std = perturbation_std(scenario, fraction)?;
    Ok(with_channel(scenario, Channel::PerSample(std)))
}

fn perturbation_std(scenario: &ScenarioSpec, fraction: f64) -> Result<DMatrix<f64>> {
    if !(fraction.is_finite() && fraction >= 0.0) {
        return Err(Error::Parameter(format!("perturbation fraction must be nonnegative, got {fraction}")));
    }
    let h = scenario
        .channel()
        .ok_or_else(|| Error::Parameter(format!("scenario '{}' has no channel matrix to perturb", scenario.name)))?;
    Ok(h.map(|v| (fraction * v.abs()).sqrt()))
}

fn with_channel(scenario: &ScenarioSpec, channel: Channel) -> ScenarioSpec {
    let mut out = scenario.clone();
    out.name = format!("{}+csi", scenario.name);
    match &mut out.sampler {
        Sampler::LinearGaussian { channel: c, .. } | Sampler::Bpsk { channel: c, .. } => *c = channel,
        Sampler::QuadraticGaussian { .. } => {}
    }
    out
}

/// Class index of a `±1` symbol vector: bit `j` is set when `s_j > 0`.
pub fn bpsk_label(s: &DVector<f64>) -> usize {
    s.iter().enumerate().fold(0, |acc, (j, &v)| if v > 0.0 { acc | (1 << j) } else { acc })
}

/// Inverse of [`bpsk_label`].
pub fn bpsk_symbols(label: usize, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |j, _| if label >> j & 1 == 1 { 1.0 } else { -1.0 })
}

/// Symbol detector for the BPSK scenario.
pub trait Detector: Sync {
    fn detect(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Exhaustive maximum-likelihood (= MAP for uniform symbols) detection from
/// the unquantized observation.
#[derive(Debug, Clone)]
pub struct MapDetector {
    h: DMatrix<f64>,
    hypotheses: Vec<DVector<f64>>,
    images: Vec<DVector<f64>>,
}

impl MapDetector {
    pub fn new(h: DMatrix<f64>) -> Self {
        let k = h.ncols();
        let hypotheses: Vec<DVector<f64>> = (0..1usize << k).map(|l| bpsk_symbols(l, k)).collect();
        let images = hypotheses.iter().map(|s| &h * s).collect();
        Self { h, hypotheses, images }
    }

    pub fn channel(&self) -> &DMatrix<f64> {
        &self.h
    }
}

impl Detector for MapDetector {
    fn detect(&self, x: &DVector<f64>) -> DVector<f64> {
        let best = self
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| (i, (x - img).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.hypotheses[best].clone()
    }
}

/// Exhaustive MAP detection from the per-entry uniformly quantized
/// observation `Q(x)` (no analog processing): the task-ignorant baseline.
#[derive(Debug, Clone)]
pub struct QuantizedMapDetector {
    quantizer: UniformQuantizerSpec,
    noise_std: f64,
    hypotheses: Vec<DVector<f64>>,
    images: Vec<DVector<f64>>,
}

impl QuantizedMapDetector {
    pub fn new(h: DMatrix<f64>, noise_var: f64, quantizer: UniformQuantizerSpec) -> Self {
        let k = h.ncols();
        let hypotheses: Vec<DVector<f64>> = (0..1usize << k).map(|l| bpsk_symbols(l, k)).collect();
        let images = hypotheses.iter().map(|s| &h * s).collect();
        Self {
            quantizer,
            noise_std: noise_var.sqrt(),
            hypotheses,
            images,
        }
    }

    fn cell_bounds(&self, x: f64) -> (f64, f64) {
        let q = &self.quantizer;
        let l = ((q.quantize(x).expect("finite observation") + q.support()) / q.spacing() - 0.5).round() as usize;
        let lo = if l == 0 { f64::NEG_INFINITY } else { -q.support() + l as f64 * q.spacing() };
        let hi = if l + 1 == q.levels() {
            f64::INFINITY
        } else {
            -q.support() + (l + 1) as f64 * q.spacing()
        };
        (lo, hi)
    }
}

/// `P(lo ≤ N(0,1) < hi)` evaluated without cancellation in the tails.
pub fn normal_interval(lo: f64, hi: f64) -> f64 {
    let tail = |t: f64| 0.5 * erfc(t / std::f64::consts::SQRT_2); // P(N > t)
    if lo >= 0.0 {
        tail(lo) - tail(hi)
    } else if hi <= 0.0 {
        tail(-hi) - tail(-lo)
    } else {
        1.0 - tail(hi) - tail(-lo)
    }
}

impl Detector for QuantizedMapDetector {
    fn detect(&self, x: &DVector<f64>) -> DVector<f64> {
        let cells: Vec<(f64, f64)> = x.iter().map(|&v| self.cell_bounds(v)).collect();
        let mut best = (0usize, f64::NEG_INFINITY);
        for (idx, img) in self.images.iter().enumerate() {
            let ll: f64 = cells
                .iter()
                .zip(img.iter())
                .map(|(&(lo, hi), &mu)| {
                    let p = normal_interval((lo - mu) / self.noise_std, (hi - mu) / self.noise_std);
                    p.max(1e-300).ln()
                })
                .sum();
            if ll > best.1 {
                best = (idx, ll);
            }
        }
        self.hypotheses[best.0].clone()
    }
}
