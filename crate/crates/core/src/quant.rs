//! Scalar quantizers: the uniform mid-rise ADC (optionally with
//! non-subtractive dither) and the learned piecewise-constant quantizer
//! obtained by hardening a trained soft quantization activation.

use rand::Rng;

use crate::{Error, Result};

/// Uniform mid-rise quantizer with `levels` outputs spread over `[-support, support]`.
///
/// Cell `l` covers `[-γ + lΔ, -γ + (l+1)Δ)` and outputs its midpoint
/// `-γ + Δ(l + ½)`. Inputs beyond the support saturate at `±(γ − Δ/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformQuantizerSpec {
    levels: usize,
    support: f64,
    spacing: f64,
    dithered: bool,
}

impl UniformQuantizerSpec {
    pub fn new(levels: usize, support: f64, dithered: bool) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Parameter(format!("quantizer needs at least 2 levels, got {levels}")));
        }
        if !(support.is_finite() && support > 0.0) {
            return Err(Error::Parameter(format!("quantizer support must be positive and finite, got {support}")));
        }
        Ok(Self {
            levels,
            support,
            spacing: 2.0 * support / levels as f64,
            dithered,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dithered(&self) -> bool {
        self.dithered
    }

    pub fn with_dither(mut self, dithered: bool) -> Self {
        self.dithered = dithered;
        self
    }

    /// Bits per sample, `log₂ M̃`.
    pub fn bits(&self) -> f64 {
        (self.levels as f64).log2()
    }

    /// Output value of cell `l`.
    pub fn level(&self, l: usize) -> f64 {
        -self.support + self.spacing * (l as f64 + 0.5)
    }

    /// The `M̃` output values in increasing order.
    pub fn alphabet(&self) -> Vec<f64> {
        (0..self.levels).map(|l| self.level(l)).collect()
    }

    fn cell(&self, z: f64) -> usize {
        let raw = ((z + self.support) / self.spacing).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.levels - 1)
        }
    }

    /// Deterministic quantization `q(z)`.
    pub fn quantize(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::Domain(format!("cannot quantize non-finite input {z}")));
        }
        Ok(self.level(self.cell(z)))
    }

    /// `q(z + u)` with an explicit dither value `u`.
    pub fn quantize_with_dither(&self, z: f64, u: f64) -> Result<f64> {
        self.quantize(z + u)
    }

    /// Dithered quantization `q(z + u)`, `u ~ U[−Δ/2, Δ/2]` drawn from `rng`.
    pub fn dithered_quantize<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> Result<f64> {
        let u = self.draw_dither(rng);
        self.quantize(z + u)
    }

    pub fn draw_dither<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let half = 0.5 * self.spacing;
        rng.random_range(-half..=half)
    }

    /// Applies the quantizer as configured: dithered or plain.
    pub fn apply<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> Result<f64> {
        if self.dithered {
            self.dithered_quantize(z, rng)
        } else {
            self.quantize(z)
        }
    }

    /// Variance of the non-subtractive dithered quantization error inside the
    /// support: `2γ²/(3M̃²) = Δ²/6`.
    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.support, self.levels)
    }
}

/// `2γ²/(3M̃²)`, the per-channel noise power of a dithered uniform quantizer.
pub fn noise_variance(support: f64, levels: usize) -> f64 {
    let m = levels as f64;
    2.0 * support * support / (3.0 * m * m)
}

/// Support sizing from the overload factor `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportRule {
    pub support: f64,
    pub kappa: f64,
}

/// `κ = η²(1 − η²/(3M̃²))⁻¹` and `γ = √(κ/p)`.
///
/// `κ` is the squared ratio between the support and the standard deviation of
/// the dithered ADC input when the analog combiner delivers total power 1
/// spread evenly over `p` channels.
pub fn support_from_eta(eta: f64, levels: usize, p: usize) -> Result<SupportRule> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
    }
    if p == 0 {
        return Err(Error::Parameter("number of quantizers p must be at least 1".into()));
    }
    let m2 = (levels as f64).powi(2);
    let ratio = eta * eta / (3.0 * m2);
    if ratio >= 1.0 {
        return Err(Error::Parameter(format!(
            "eta^2 = {} must be below 3*M^2 = {} for M = {levels} levels",
            eta * eta,
            3.0 * m2
        )));
    }
    let kappa = eta * eta / (1.0 - ratio);
    Ok(SupportRule {
        support: (kappa / p as f64).sqrt(),
        kappa,
    })
}

/// Largest `η` accepted by [`support_from_eta`] scaled by `fraction < 1`.
pub fn max_eta(levels: usize, fraction: f64) -> f64 {
    fraction * (3.0f64).sqrt() * levels as f64
}

/// Piecewise-constant scalar quantizer with arbitrary thresholds and levels.
///
/// Cells are half-open `[t_{j-1}, t_j)`; an input equal to a threshold falls
/// in the upper cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedQuantizerSpec {
    thresholds: Vec<f64>,
    levels: Vec<f64>,
}

impl LearnedQuantizerSpec {
    pub fn new(thresholds: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if levels.len() != thresholds.len() + 1 {
            return Err(Error::Parameter(format!(
                "learned quantizer needs thresholds+1 levels: {} thresholds, {} levels",
                thresholds.len(),
                levels.len()
            )));
        }
        if thresholds.iter().chain(levels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("learned quantizer parameters must be finite".into()));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("learned quantizer thresholds must be strictly increasing".into()));
        }
        Ok(Self { thresholds, levels })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Cell index of `z`: the number of thresholds `≤ z`.
    pub fn cell(&self, z: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= z)
    }

    pub fn quantize(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::Domain(format!("cannot quantize non-finite input {z}")));
        }
        Ok(self.levels[self.cell(z)])
    }

    /// Whether the mapping is non-decreasing. Not required, but a trained
    /// quantizer that is not monotone usually points at a training problem.
    pub fn is_monotone(&self) -> bool {
        self.levels.windows(2).all(|w| w[0] <= w[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn spec(levels: usize, support: f64) -> UniformQuantizerSpec {
        UniformQuantizerSpec::new(levels, support, false).unwrap()
    }

    #[test]
    fn one_bit_is_sign_quantizer() {
        let q = spec(2, 1.0);
        assert_eq!(q.quantize(0.3).unwrap(), 0.5);
        assert_eq!(q.quantize(-2.0).unwrap(), -0.5);
        assert_eq!(q.alphabet(), vec![-0.5, 0.5]);
    }

    #[test]
    fn four_level_cell_midpoint() {
        let q = spec(4, 1.0);
        assert_eq!(q.spacing(), 0.5);
        assert_eq!(q.quantize(0.1).unwrap(), 0.25);
        // pinned dither
        assert_eq!(q.quantize_with_dither(0.0, 0.0).unwrap(), 0.25);
    }

    #[test]
    fn overload_saturates() {
        let q = spec(8, 2.0);
        let top = q.support() - q.spacing() / 2.0;
        assert!((q.quantize(5.0).unwrap() - top).abs() < 1e-15);
        assert!((q.quantize(-5.0).unwrap() + top).abs() < 1e-15);
        assert_eq!(q.quantize(2.0).unwrap(), q.quantize(5.0).unwrap());
    }

    #[test]
    fn rejects_non_finite_and_bad_specs() {
        let q = spec(4, 1.0);
        assert!(matches!(q.quantize(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(q.quantize(f64::INFINITY), Err(Error::Domain(_))));
        assert!(UniformQuantizerSpec::new(1, 1.0, false).is_err());
        assert!(UniformQuantizerSpec::new(4, 0.0, false).is_err());
    }

    #[test]
    fn noise_variance_formula() {
        assert!((noise_variance(1.0, 2) - 1.0 / 6.0).abs() < 1e-15);
        assert!((noise_variance(2.0, 4) - 1.0 / 6.0).abs() < 1e-15);
        let q = spec(16, 1.0);
        assert!((q.noise_variance() - q.spacing().powi(2) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn support_from_eta_examples() {
        let r = support_from_eta(2.0, 4, 1).unwrap();
        assert!((r.kappa - 48.0 / 11.0).abs() < 1e-12);
        assert!((r.support - (48.0f64 / 11.0).sqrt()).abs() < 1e-12);

        let r = support_from_eta(1.0, 1 << 20, 4).unwrap();
        assert!((r.kappa - 1.0).abs() < 1e-9);
        assert!((r.support - 0.5).abs() < 1e-9);

        let r = support_from_eta(3.0, 2, 1).unwrap();
        assert!((r.kappa - 36.0).abs() < 1e-12);
        assert!((r.support - 6.0).abs() < 1e-12);

        let err = support_from_eta(4.0, 2, 1).unwrap_err();
        assert!(err.to_string().contains("3*M^2"));
        assert!(support_from_eta(1.0, 4, 0).is_err());
    }

    #[test]
    fn dithered_error_is_unbiased_with_expected_variance() {
        let q = UniformQuantizerSpec::new(4, 1.0, true).unwrap();
        let mut rng = rng::from_seed(3);
        let mut input = rng::from_seed(4);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng::uniform(&mut input, -0.5, 0.5);
            let e = q.dithered_quantize(z, &mut rng).unwrap() - z;
            sum += e;
            sq += e * e;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let target = q.noise_variance();
        assert!(mean.abs() < 4.0 * (target / n as f64).sqrt());
        assert!((var / target - 1.0).abs() < 0.02);
    }

    #[test]
    fn learned_quantizer_examples() {
        let sign = LearnedQuantizerSpec::new(vec![0.0], vec![-1.0, 1.0]).unwrap();
        assert_eq!(sign.quantize(0.7).unwrap(), 1.0);
        assert_eq!(sign.quantize(0.0).unwrap(), 1.0);
        let three = LearnedQuantizerSpec::new(vec![-0.5, 0.5], vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(three.quantize(-0.7).unwrap(), -1.0);
        assert!(three.is_monotone());
        assert!(three.quantize(f64::NAN).is_err());
    }

    #[test]
    fn learned_quantizer_validation() {
        assert!(LearnedQuantizerSpec::new(vec![0.0, 0.0], vec![0.0, 1.0, 2.0]).is_err());
        assert!(LearnedQuantizerSpec::new(vec![1.0, 0.0], vec![0.0, 1.0, 2.0]).is_err());
        assert!(LearnedQuantizerSpec::new(vec![0.0], vec![0.0]).is_err());
        let odd = LearnedQuantizerSpec::new(vec![0.0], vec![1.0, -1.0]).unwrap();
        assert!(!odd.is_monotone());
    }

    proptest! {
        #[test]
        fn quantizer_properties(levels in 2usize..64, support in 0.01f64..100.0, a in -300.0f64..300.0, b in -300.0f64..300.0) {
            let q = spec(levels, support);
            let qa = q.quantize(a).unwrap();
            // idempotent
            prop_assert_eq!(q.quantize(qa).unwrap(), qa);
            // inside the alphabet
            let alphabet = q.alphabet();
            prop_assert!(alphabet.contains(&qa));
            prop_assert!(qa.abs() < support);
            // monotone
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize(lo).unwrap() <= q.quantize(hi).unwrap());
            // constant on the overload regions
            let top = q.level(levels - 1);
            prop_assert!((top - (support - q.spacing() / 2.0)).abs() <= 1e-12 * support);
            if a > support {
                prop_assert_eq!(qa, top);
            }
            if a < -support {
                prop_assert_eq!(qa, q.level(0));
            }
        }

        #[test]
        fn spacing_times_levels_is_twice_support(levels in 2usize..1024, support in 1e-3f64..1e3) {
            let q = spec(levels, support);
            prop_assert!((q.spacing() * levels as f64 - 2.0 * support).abs() <= 1e-12 * support);
        }
    }
}
