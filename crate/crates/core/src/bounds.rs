//! Reference curves: the unquantized Gaussian MMSE and the Gaussian indirect
//! distortion-rate lower bound (reverse water-filling over the spectrum of the
//! MMSE estimate).

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::linear_task::LinearTaskModel;
use crate::{Error, Result};

/// Linear-Gaussian MMSE for `x = H s + w`, `s ~ N(0, Σ_s)`, `w ~ N(0, σ²I)`.
///
/// Returns `Γ = Σ_s Hᵀ(HΣ_sHᵀ + σ²I)⁻¹` and `mmse = Tr(Σ_s − ΓHΣ_s)`.
pub fn gaussian_mmse(h: &DMatrix<f64>, sigma_s: &DMatrix<f64>, noise_var: f64) -> Result<(DMatrix<f64>, f64)> {
    if !(noise_var.is_finite() && noise_var > 0.0) {
        return Err(Error::Parameter(format!("noise variance must be positive, got {noise_var}")));
    }
    let (n, k) = h.shape();
    if sigma_s.shape() != (k, k) {
        return Err(Error::dims("gaussian_mmse task covariance", format!("{k}x{k}"), format!("{:?}", sigma_s.shape())));
    }
    let obs_cov = h * sigma_s * h.transpose() + DMatrix::identity(n, n) * noise_var;
    let cross = sigma_s * h.transpose();
    let gamma = linalg::solve_right_spd(&cross, &obs_cov, "gaussian_mmse")?;
    let mmse = (sigma_s - &gamma * h * sigma_s).trace().max(0.0);
    Ok((gamma, mmse))
}

/// Observation covariance `HΣ_sHᵀ + σ²I` of the linear-Gaussian model.
pub fn observation_cov(h: &DMatrix<f64>, sigma_s: &DMatrix<f64>, noise_var: f64) -> DMatrix<f64> {
    let n = h.nrows();
    h * sigma_s * h.transpose() + DMatrix::identity(n, n) * noise_var
}

/// Spectrum of `Cov(s̃)` plus the MMSE floor, evaluated at a total bit budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumBound {
    eigenvalues: Vec<f64>,
    pub mmse_floor: f64,
    /// Total bits `log₂ M`.
    pub rate_bits: f64,
}

impl SpectrumBound {
    pub fn new(mut eigenvalues: Vec<f64>, mmse_floor: f64, rate_bits: f64) -> Result<Self> {
        if eigenvalues.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("spectrum entries must be finite and nonnegative".into()));
        }
        if !(mmse_floor.is_finite() && mmse_floor >= 0.0) {
            return Err(Error::Parameter(format!("mmse floor must be nonnegative, got {mmse_floor}")));
        }
        if !(rate_bits.is_finite() && rate_bits >= 0.0) {
            return Err(Error::Parameter(format!("rate must be nonnegative, got {rate_bits}")));
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            eigenvalues,
            mmse_floor,
            rate_bits,
        })
    }

    /// Bound for a linear task model: eigenvalues of `ΓΣ_xΓᵀ`.
    pub fn from_model(model: &LinearTaskModel, rate_bits: f64) -> Result<Self> {
        let (vals, _) = linalg::sym_eigen(&model.estimate_cov());
        Self::new(vals.iter().map(|v| v.max(0.0)).collect(), model.mmse_floor(), rate_bits)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn with_rate(&self, rate_bits: f64) -> Result<Self> {
        Self::new(self.eigenvalues.clone(), self.mmse_floor, rate_bits)
    }
}

/// Gaussian indirect distortion-rate function:
/// `mmse_floor + Σ_i min(θ, λ_i)` with `Σ_i ½log₂⁺(λ_i/θ) = R`.
pub fn indirect_drf(bound: &SpectrumBound) -> f64 {
    let total: f64 = bound.eigenvalues.iter().sum();
    let positive: Vec<f64> = bound.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
    if bound.rate_bits == 0.0 || positive.is_empty() {
        return bound.mmse_floor + total;
    }
    let rate = bound.rate_bits;
    let bits_at = |theta: f64| -> f64 { positive.iter().map(|&l| 0.5 * (l / theta).log2().max(0.0)).sum() };

    // bits_at is decreasing in θ; the bracket always straddles the root
    let lam_max = positive[0];
    let lam_min = *positive.last().expect("nonempty");
    let mut lo = (lam_min * (-2.0 * rate).exp2()).ln();
    let mut hi = lam_max.ln();
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if bits_at(mid.exp()) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let theta = (0.5 * (lo + hi)).exp();
    bound.mmse_floor + bound.eigenvalues.iter().map(|&l| l.min(theta)).sum::<f64>()
}

/// DRF evaluated on a grid of total bit budgets.
pub fn drf_curve(spectrum: &[f64], mmse_floor: f64, rates: &[f64]) -> Result<Vec<f64>> {
    rates
        .iter()
        .map(|&r| SpectrumBound::new(spectrum.to_vec(), mmse_floor, r).map(|b| indirect_drf(&b)))
        .collect()
}

/// Descending eigenvalues of a symmetric matrix, clipped at zero.
pub fn spectrum(cov: &DMatrix<f64>) -> DVector<f64> {
    linalg::sym_eigen(cov).0.map(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_wiener_per_coordinate() {
        let k = 3;
        let (gamma, mmse) = gaussian_mmse(&DMatrix::identity(k, k), &DMatrix::identity(k, k), 1.0).unwrap();
        assert!((gamma - DMatrix::identity(k, k) * 0.5).amax() < 1e-14);
        assert!((mmse - k as f64 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn noiseless_limit() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.2, -0.3]);
        let (_, mmse) = gaussian_mmse(&h, &DMatrix::identity(2, 2), 1e-9).unwrap();
        assert!(mmse < 1e-7);
        assert!(gaussian_mmse(&h, &DMatrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn drf_examples() {
        for r in [0.5, 1.0, 3.0] {
            let b = SpectrumBound::new(vec![1.0], 0.25, r).unwrap();
            assert!((indirect_drf(&b) - (0.25 + (-2.0 * r).exp2())).abs() < 1e-10);
        }
        let b = SpectrumBound::new(vec![3.0, 1.0, 0.5], 0.1, 0.0).unwrap();
        assert!((indirect_drf(&b) - 4.6).abs() < 1e-15);

        let (k, c, r) = (4usize, 2.0, 6.0);
        let b = SpectrumBound::new(vec![c; k], 0.0, r).unwrap();
        let expected = k as f64 * c * (-2.0 * r / k as f64).exp2();
        assert!((indirect_drf(&b) - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn drf_is_non_increasing_and_convex() {
        let spec = [5.0, 2.0, 1.0, 0.3, 0.01, 0.0];
        let rates: Vec<f64> = (0..=80).map(|i| i as f64 * 0.25).collect();
        let d = drf_curve(&spec, 0.2, &rates).unwrap();
        for w in d.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for w in d.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
        }
        assert!(SpectrumBound::new(vec![-1.0], 0.0, 1.0).is_err());
        assert!(SpectrumBound::new(vec![1.0], 0.0, -1.0).is_err());
    }
}
