//! Model-aware task-based quantizer design for linear estimation tasks.
//!
//! Given the observation covariance `Σ_x` and the linear-MMSE map `Γ`
//! (`s̃ = Γx`), [`design`] returns the analog combiner `A`, the ADC support and
//! the digital matrix `B` minimizing `E‖s̃ − B·Q(Ax)‖²` under the dithered
//! additive-noise model of the ADCs. The construction:
//!
//! 1. whiten: `Γ̃ = Γ Σ_x^{1/2} = U_s diag(λ) Vᵀ`;
//! 2. water-fill the combiner gains over the top `p` singular modes;
//! 3. rotate the gains with an orthogonal `U_A` so every ADC sees the same
//!    input variance;
//! 4. `A = U_A Λ_A Vᵀ Σ_x^{-1/2}`, support `γ = √(κ/p)`, and `B` the linear
//!    MMSE estimator of `s̃` from `Ax + e`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::{self, SortedSvd};
use crate::quant::{self, UniformQuantizerSpec};
use crate::{Error, Result};

/// Floor applied to covariance eigenvalues (relative to the largest) before
/// taking square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Relative singular-value cutoff for [`recommend_p`].
pub const RANK_TOL: f64 = 1e-10;

/// Default overload factor for design-time support sizing.
pub const DEFAULT_ETA: f64 = 4.0;

/// Second-order description of a linear estimation task.
#[derive(Debug, Clone)]
pub struct LinearTaskModel {
    obs_cov: DMatrix<f64>,
    task_matrix: DMatrix<f64>,
    mmse_floor: f64,
}

impl LinearTaskModel {
    /// `obs_cov` is `n×n` symmetric positive definite, `task_matrix` is `k×n`
    /// with `k ≤ n`, and `mmse_floor = E‖s − s̃‖²`.
    pub fn new(obs_cov: DMatrix<f64>, task_matrix: DMatrix<f64>, mmse_floor: f64) -> Result<Self> {
        let n = obs_cov.nrows();
        if !obs_cov.is_square() {
            return Err(Error::dims("LinearTaskModel obs_cov", "square", format!("{:?}", obs_cov.shape())));
        }
        if task_matrix.ncols() != n {
            return Err(Error::dims("LinearTaskModel task_matrix columns", n, task_matrix.ncols()));
        }
        if task_matrix.nrows() == 0 || task_matrix.nrows() > n {
            return Err(Error::Parameter(format!(
                "task dimension k = {} must satisfy 1 <= k <= n = {n}",
                task_matrix.nrows()
            )));
        }
        if !linalg::is_symmetric(&obs_cov, 1e-10) {
            return Err(Error::Parameter("observation covariance is not symmetric".into()));
        }
        let (eig, _) = linalg::sym_eigen(&obs_cov);
        if eig.min() <= 0.0 {
            return Err(Error::Parameter(format!(
                "observation covariance must be positive definite (smallest eigenvalue {:.3e})",
                eig.min()
            )));
        }
        if !(mmse_floor.is_finite() && mmse_floor >= 0.0) {
            return Err(Error::Parameter(format!("mmse floor must be nonnegative, got {mmse_floor}")));
        }
        Ok(Self {
            obs_cov: linalg::symmetrize(&obs_cov),
            task_matrix,
            mmse_floor,
        })
    }

    pub fn obs_cov(&self) -> &DMatrix<f64> {
        &self.obs_cov
    }

    pub fn task_matrix(&self) -> &DMatrix<f64> {
        &self.task_matrix
    }

    pub fn mmse_floor(&self) -> f64 {
        self.mmse_floor
    }

    /// Observation dimension `n`.
    pub fn n(&self) -> usize {
        self.obs_cov.nrows()
    }

    /// Task dimension `k`.
    pub fn k(&self) -> usize {
        self.task_matrix.nrows()
    }

    /// `Γ̃ = Γ Σ_x^{1/2}`.
    pub fn whitened_task(&self) -> DMatrix<f64> {
        &self.task_matrix * linalg::sym_pow(&self.obs_cov, 0.5, EIGEN_FLOOR)
    }

    /// Covariance of the MMSE estimate, `Γ Σ_x Γᵀ`.
    pub fn estimate_cov(&self) -> DMatrix<f64> {
        &self.task_matrix * &self.obs_cov * self.task_matrix.transpose()
    }

    /// Descending singular values of `Γ̃`.
    pub fn singular_values(&self) -> DVector<f64> {
        linalg::sorted_svd(&self.whitened_task()).singular_values
    }
}

/// A complete hybrid quantization system `ŝ = B · Q(A x)`.
#[derive(Debug, Clone)]
pub struct QuantizerDesign {
    pub analog: DMatrix<f64>,
    pub quantizer: UniformQuantizerSpec,
    pub digital: DMatrix<f64>,
    pub predicted_excess_mse: f64,
    /// Descending singular values of `Γ̃`.
    pub singular_values: DVector<f64>,
    /// Water level `ζ`; `None` for designs not produced by water-filling.
    pub waterline: Option<f64>,
}

impl QuantizerDesign {
    /// Number of scalar quantizers.
    pub fn p(&self) -> usize {
        self.analog.nrows()
    }

    pub fn n(&self) -> usize {
        self.analog.ncols()
    }

    pub fn k(&self) -> usize {
        self.digital.nrows()
    }

    /// Total bits `p · log₂ M̃`.
    pub fn total_bits(&self) -> f64 {
        self.p() as f64 * self.quantizer.bits()
    }

    /// Copy with the ADC dither switched on or off.
    pub fn with_dither(&self, dithered: bool) -> Self {
        let mut out = self.clone();
        out.quantizer = out.quantizer.with_dither(dithered);
        out
    }

    /// Wraps an arbitrary combiner: the support follows the `η` rule on the
    /// largest channel variance and `B` is the optimal digital matrix.
    pub fn from_combiner(
        model: &LinearTaskModel,
        analog: DMatrix<f64>,
        levels: usize,
        eta: f64,
        dithered: bool,
    ) -> Result<Self> {
        let support = support_for_combiner(&analog, model, levels, eta)?;
        let quantizer = UniformQuantizerSpec::new(levels, support, dithered)?;
        let digital = optimal_digital(&analog, model, support, levels)?;
        let predicted_excess_mse = excess_mse(&analog, model, support, levels)?;
        Ok(Self {
            analog,
            quantizer,
            digital,
            predicted_excess_mse,
            singular_values: model.singular_values(),
            waterline: None,
        })
    }
}

fn check_combiner(a: &DMatrix<f64>, model: &LinearTaskModel) -> Result<()> {
    if a.ncols() != model.n() {
        return Err(Error::dims("analog combiner columns", model.n(), a.ncols()));
    }
    if a.nrows() == 0 {
        return Err(Error::Parameter("analog combiner has no rows".into()));
    }
    Ok(())
}

fn regularized_gram(a: &DMatrix<f64>, model: &LinearTaskModel, support: f64, levels: usize) -> DMatrix<f64> {
    let p = a.nrows();
    a * model.obs_cov() * a.transpose() + DMatrix::identity(p, p) * quant::noise_variance(support, levels)
}

/// MSE-optimal digital matrix for combiner `a`:
/// `ΓΣ_xAᵀ(AΣ_xAᵀ + (2γ²/3M̃²)I)⁻¹`.
pub fn optimal_digital(a: &DMatrix<f64>, model: &LinearTaskModel, support: f64, levels: usize) -> Result<DMatrix<f64>> {
    check_combiner(a, model)?;
    let cross = model.task_matrix() * model.obs_cov() * a.transpose();
    linalg::solve_right_spd(&cross, &regularized_gram(a, model, support, levels), "optimal_digital")
}

/// Excess MSE achieved by combiner `a` with the optimal digital matrix.
pub fn excess_mse(a: &DMatrix<f64>, model: &LinearTaskModel, support: f64, levels: usize) -> Result<f64> {
    check_combiner(a, model)?;
    let cross = model.task_matrix() * model.obs_cov() * a.transpose();
    let solved = linalg::solve_right_spd(&cross, &regularized_gram(a, model, support, levels), "excess_mse")?;
    let total = model.estimate_cov().trace();
    let captured = (solved.component_mul(&cross)).sum();
    Ok((total - captured).max(0.0))
}

/// Excess MSE of an arbitrary `(A, B)` pair under the additive-noise ADC
/// model: `Tr(ΓΣΓᵀ) − 2Tr(BAΣΓᵀ) + Tr(B(AΣAᵀ + σ²I)Bᵀ)`.
pub fn excess_mse_with_digital(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    model: &LinearTaskModel,
    support: f64,
    levels: usize,
) -> Result<f64> {
    check_combiner(a, model)?;
    if b.ncols() != a.nrows() || b.nrows() != model.k() {
        return Err(Error::dims("digital matrix", format!("{}x{}", model.k(), a.nrows()), format!("{}x{}", b.nrows(), b.ncols())));
    }
    let cross = model.task_matrix() * model.obs_cov() * a.transpose();
    let gram = regularized_gram(a, model, support, levels);
    let value = model.estimate_cov().trace() - 2.0 * b.component_mul(&cross).sum() + (b * gram * b.transpose()).trace();
    Ok(value.max(0.0))
}

/// Support `γ = √κ · max_l std((Ax)_l)`, the `η` rule applied to an arbitrary
/// combiner. For an optimal combiner (channel variance `1/p`) it reduces to
/// `√(κ/p)`.
pub fn support_for_combiner(a: &DMatrix<f64>, model: &LinearTaskModel, levels: usize, eta: f64) -> Result<f64> {
    check_combiner(a, model)?;
    let rule = quant::support_from_eta(eta, levels, 1)?;
    let gram = a * model.obs_cov() * a.transpose();
    let max_var = gram.diagonal().max();
    if max_var <= 0.0 {
        return Err(Error::DegenerateTask("analog combiner output has zero variance".into()));
    }
    Ok((rule.kappa * max_var).sqrt())
}

/// Water-filling solution over the top `p` singular modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    /// Combiner gains `(Λ_A)_{ii}`, length `p`, nonnegative.
    pub diag: Vec<f64>,
    /// Water level `ζ`.
    pub waterline: f64,
}

/// Solves `(2κ/(3M̃²p)) Σ_{i≤p} (ζλ_i − 1)⁺ = 1` for `ζ` and returns
/// `diag_i = √((2κ/(3M̃²p))(ζλ_i − 1)⁺)`.
///
/// `singvals` must be sorted descending; entries past its end count as zero.
pub fn waterfill(singvals: &[f64], kappa: f64, levels: usize, p: usize) -> Result<Waterfill> {
    if p == 0 {
        return Err(Error::Parameter("water-filling needs p >= 1".into()));
    }
    if singvals.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::Parameter("singular values must be finite and nonnegative".into()));
    }
    if singvals.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Parameter("singular values must be sorted in descending order".into()));
    }
    let lam: Vec<f64> = (0..p).map(|i| singvals.get(i).copied().unwrap_or(0.0)).collect();
    let positive = lam.iter().take_while(|&&v| v > 0.0).count();
    if positive == 0 {
        return Err(Error::DegenerateTask("all singular values of the whitened task are zero".into()));
    }
    let scale = 2.0 * kappa / (3.0 * (levels as f64).powi(2) * p as f64);

    // The left side is piecewise linear and increasing in ζ; with the top m
    // modes active ζ = (1/scale + m) / Σ_{i≤m} λ_i.
    let mut zeta = None;
    let mut partial = 0.0;
    for m in 1..=positive {
        partial += lam[m - 1];
        let candidate = (1.0 / scale + m as f64) / partial;
        let active_ok = candidate * lam[m - 1] > 1.0;
        let next_off = m == positive || candidate * lam[m] <= 1.0;
        if active_ok && next_off {
            zeta = Some(candidate);
            break;
        }
    }
    let zeta = match zeta {
        Some(z) => z,
        None => bisect_waterline(&lam, scale),
    };
    let diag = lam
        .iter()
        .map(|&l| (scale * (zeta * l - 1.0).max(0.0)).sqrt())
        .collect();
    Ok(Waterfill { diag, waterline: zeta })
}

fn bisect_waterline(lam: &[f64], scale: f64) -> f64 {
    let g = |z: f64| scale * lam.iter().map(|&l| (z * l - 1.0).max(0.0)).sum::<f64>() - 1.0;
    let mut lo = 1.0 / lam[0];
    let mut hi = lo;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Orthogonal `U` such that `diag(U D Uᵀ)` is constant, for `D = diag(d)`.
///
/// Each step pairs the largest and the smallest unfinished diagonal entries
/// and applies the plane rotation that sets the larger one exactly to the
/// mean `Tr(D)/p`; that entry is then final. At most `p − 1` rotations.
pub fn equalizing_rotation(d: &[f64]) -> DMatrix<f64> {
    let p = d.len();
    let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(d));
    let mut u = DMatrix::<f64>::identity(p, p);
    if p < 2 {
        return u;
    }
    let target = d.iter().sum::<f64>() / p as f64;
    let scale = d.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut open: Vec<usize> = (0..p).collect();

    while open.len() > 1 {
        let (mut hi, mut lo) = (open[0], open[0]);
        for &i in &open {
            if m[(i, i)] > m[(hi, hi)] {
                hi = i;
            }
            if m[(i, i)] < m[(lo, lo)] {
                lo = i;
            }
        }
        if m[(hi, hi)] - m[(lo, lo)] <= 1e-15 * scale {
            break;
        }
        let (a, c, b) = (m[(hi, hi)], m[(lo, lo)], m[(hi, lo)]);
        let mid = 0.5 * (a + c);
        let half = 0.5 * (a - c);
        let radius = half.hypot(b);
        let phi = b.atan2(half);
        let rho = ((target - mid) / radius).clamp(-1.0, 1.0);
        let theta = 0.5 * (phi - rho.acos());
        let (s, cs) = theta.sin_cos();
        rotate(&mut m, hi, lo, cs, s);
        rotate_rows(&mut u, hi, lo, cs, s);
        m[(hi, hi)] = target;
        open.retain(|&i| i != hi);
    }
    u
}

// Left-multiplies by the plane rotation G with rows
// e_i' = c·e_i + s·e_j and e_j' = −s·e_i + c·e_j.
fn rotate_rows(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for col in 0..m.ncols() {
        let (x, y) = (m[(i, col)], m[(j, col)]);
        m[(i, col)] = c * x + s * y;
        m[(j, col)] = -s * x + c * y;
    }
}

// m ← G m Gᵀ
fn rotate(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    rotate_rows(m, i, j, c, s);
    for row in 0..m.nrows() {
        let (x, y) = (m[(row, i)], m[(row, j)]);
        m[(row, i)] = c * x + s * y;
        m[(row, j)] = -s * x + c * y;
    }
}

/// Task-based design with `p` quantizers of `levels` levels and overload factor `eta`.
///
/// The returned quantizer is marked dithered, matching the noise model the
/// design optimizes; use [`QuantizerDesign::with_dither`] to simulate plain ADCs.
pub fn design(model: &LinearTaskModel, p: usize, levels: usize, eta: f64) -> Result<QuantizerDesign> {
    if p == 0 {
        return Err(Error::Parameter("number of quantizers p must be at least 1".into()));
    }
    let rule = quant::support_from_eta(eta, levels, p)?;
    let inv_half = linalg::sym_pow(model.obs_cov(), -0.5, EIGEN_FLOOR);
    let SortedSvd {
        u: left,
        singular_values,
        v_t,
    } = linalg::sorted_svd(&model.whitened_task());
    let lam: Vec<f64> = singular_values.iter().copied().collect();
    let wf = waterfill(&lam, rule.kappa, levels, p)?;

    let powers: Vec<f64> = wf.diag.iter().map(|d| d * d).collect();
    let rotation = equalizing_rotation(&powers);

    let n = model.n();
    let k = model.k();
    let served = p.min(lam.len());
    let sigma2 = quant::noise_variance(rule.support, levels);

    // Λ_A Vᵀ and the matching digital columns Γ̃ v_i d_i / (d_i² + σ²) = λ_i d_i u_i / (d_i² + σ²)
    let mut scaled_vt = DMatrix::zeros(p, n);
    let mut weights = DMatrix::zeros(k, p);
    for (i, &l) in lam.iter().enumerate().take(served) {
        let d = wf.diag[i];
        if d == 0.0 {
            continue;
        }
        scaled_vt.set_row(i, &(v_t.row(i) * d));
        let gain = l * d / (d * d + sigma2);
        weights.set_column(i, &(left.column(i) * gain));
    }
    let analog = &rotation * scaled_vt * inv_half;
    let digital = weights * rotation.transpose();

    let mut predicted = 0.0;
    for (i, &l) in lam.iter().enumerate().take(k) {
        if i < p {
            predicted += l * l / ((wf.waterline * l - 1.0).max(0.0) + 1.0);
        } else {
            predicted += l * l;
        }
    }

    Ok(QuantizerDesign {
        analog,
        quantizer: UniformQuantizerSpec::new(levels, rule.support, true)?,
        digital,
        predicted_excess_mse: predicted,
        singular_values,
        waterline: Some(wf.waterline),
    })
}

/// Largest useful number of quantizers: the numerical rank of `Γ̃`.
pub fn recommend_p(model: &LinearTaskModel) -> usize {
    linalg::rank(&model.whitened_task(), RANK_TOL)
}

/// Runs one observation through the pipeline: `ŝ = B · Q(A x)`.
pub fn estimate<R: Rng + ?Sized>(design: &QuantizerDesign, x: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if x.len() != design.n() {
        return Err(Error::dims("estimate input", design.n(), x.len()));
    }
    let z = &design.analog * x;
    let mut q = DVector::zeros(z.len());
    for (dst, &v) in q.iter_mut().zip(z.iter()) {
        *dst = design.quantizer.apply(v, rng)?;
    }
    Ok(&design.digital * q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_model(seed: u64, n: usize, k: usize) -> LinearTaskModel {
        let mut r = rng::from_seed(seed);
        let g = rng::normal_matrix(n, n, &mut r);
        let cov: DMatrix<f64> = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5;
        let gamma = rng::normal_matrix(k, n, &mut r);
        LinearTaskModel::new(cov, gamma, 0.0).unwrap()
    }

    fn scalar_model() -> LinearTaskModel {
        LinearTaskModel::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 0.0).unwrap()
    }

    #[test]
    fn model_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(LinearTaskModel::new(bad, DMatrix::identity(1, 2), 0.0).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(LinearTaskModel::new(singular, DMatrix::identity(1, 2), 0.0).is_err());
        assert!(LinearTaskModel::new(DMatrix::identity(2, 2), DMatrix::identity(3, 2), 0.0).is_err());
        assert!(LinearTaskModel::new(DMatrix::identity(2, 2), DMatrix::identity(1, 3), 0.0).is_err());
    }

    #[test]
    fn zero_combiner_passes_nothing() {
        let model = random_model(1, 4, 2);
        let a = DMatrix::zeros(2, 4);
        let b = optimal_digital(&a, &model, 1.0, 4).unwrap();
        assert_eq!(b.amax(), 0.0);
        let mse = excess_mse(&a, &model, 1.0, 4).unwrap();
        assert!((mse - model.estimate_cov().trace()).abs() < 1e-12);
    }

    #[test]
    fn scalar_wiener_gain() {
        let model = scalar_model();
        let a = DMatrix::identity(1, 1);
        let (gamma, levels) = (1.0, 4);
        let sigma2 = quant::noise_variance(gamma, levels);
        let b = optimal_digital(&a, &model, gamma, levels).unwrap();
        assert!((b[(0, 0)] - 1.0 / (1.0 + sigma2)).abs() < 1e-15);
    }

    #[test]
    fn fine_quantization_recovers_mmse_map() {
        let model = random_model(2, 3, 3);
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.3, 1.0, 0.2, 0.0, 0.4, 1.5]);
        let levels = 1 << 24;
        let b = optimal_digital(&a, &model, 1.0, levels).unwrap();
        assert!((&b * &a - model.task_matrix()).amax() < 1e-6);
        let gamma = model.task_matrix().clone();
        assert!(excess_mse(&gamma, &model, 1.0, levels).unwrap() < 1e-9);
    }

    #[test]
    fn excess_mse_bounded_by_estimate_energy() {
        let model = random_model(3, 6, 3);
        let mut r = rng::from_seed(9);
        for _ in 0..20 {
            let a = rng::normal_matrix(4, 6, &mut r);
            let mse = excess_mse(&a, &model, 2.0, 8).unwrap();
            assert!(mse >= 0.0 && mse <= model.estimate_cov().trace() + 1e-12);
        }
    }

    #[test]
    fn waterfill_single_mode_unit_power() {
        let (kappa, levels) = (5.0, 4);
        let wf = waterfill(&[1.0], kappa, levels, 1).unwrap();
        let expected = 1.0 + 3.0 * (levels as f64).powi(2) / (2.0 * kappa);
        assert!((wf.waterline - expected).abs() < 1e-12);
        assert!((wf.diag[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn waterfill_zero_modes_get_zero() {
        let wf = waterfill(&[1.0, 0.0], 4.0, 8, 2).unwrap();
        assert_eq!(wf.diag[1], 0.0);
        let total: f64 = wf.diag.iter().map(|d| d * d).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((wf.diag[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn waterfill_degenerate_and_invalid() {
        assert!(matches!(waterfill(&[0.0, 0.0], 4.0, 8, 2), Err(Error::DegenerateTask(_))));
        assert!(waterfill(&[1.0, 2.0], 4.0, 8, 2).is_err());
        assert!(waterfill(&[1.0], 4.0, 8, 0).is_err());
    }

    #[test]
    fn waterfill_shuts_off_weak_modes() {
        // strong mode far above the weak one with a coarse quantizer
        let wf = waterfill(&[10.0, 0.01], 16.0 / (1.0 - 16.0 / 12.0 * 0.25), 2, 2).unwrap();
        assert!(wf.diag[0] > 0.0);
        assert_eq!(wf.diag[1], 0.0);
    }

    #[test]
    fn rotation_examples() {
        let u = equalizing_rotation(&[3.0, 3.0, 3.0]);
        assert_eq!(u, DMatrix::identity(3, 3));

        let u = equalizing_rotation(&[2.0, 0.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = DMatrix::from_row_slice(2, 2, &[h, -h, h, h]);
        assert!((&u - expected).amax() < 1e-12);
        let m = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0])) * u.transpose();
        assert!((m[(0, 0)] - 1.0).abs() < 1e-12 && (m[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_equalizes_random_diagonals() {
        let mut r = rng::from_seed(11);
        for _ in 0..100 {
            let d: Vec<f64> = (0..7).map(|_| rng::uniform(&mut r, 0.0, 5.0)).collect();
            let u = equalizing_rotation(&d);
            assert!((u.transpose() * &u - DMatrix::identity(7, 7)).amax() < 1e-10);
            let m = &u * DMatrix::from_diagonal(&DVector::from_vec(d.clone())) * u.transpose();
            let diag = m.diagonal();
            let trace: f64 = d.iter().sum();
            assert!(diag.max() - diag.min() < 1e-9 * trace);
        }
    }

    #[test]
    fn design_is_self_consistent() {
        for seed in 0..10 {
            let model = random_model(100 + seed, 8, 4);
            for &(p, levels) in &[(1usize, 4usize), (2, 8), (4, 16), (3, 64)] {
                let d = design(&model, p, levels, 4.0).unwrap();
                let exact = excess_mse(&d.analog, &model, d.quantizer.support(), levels).unwrap();
                assert!((d.predicted_excess_mse - exact).abs() <= 1e-8 * exact.max(1e-300));
                let b = optimal_digital(&d.analog, &model, d.quantizer.support(), levels).unwrap();
                assert!((&b - &d.digital).amax() < 1e-8 * b.amax().max(1.0));
                let gram = &d.analog * model.obs_cov() * d.analog.transpose();
                assert!(linalg::diagonal_spread(&gram) < 1e-8);
                assert!((gram.trace() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_one_single_quantizer_closed_form() {
        let mut r = rng::from_seed(5);
        let u = rng::normal_vector(3, &mut r);
        let v = rng::normal_vector(5, &mut r);
        let gamma = &u * v.transpose();
        let model = LinearTaskModel::new(DMatrix::identity(5, 5) * 2.0, gamma, 0.0).unwrap();
        let d = design(&model, 1, 8, 4.0).unwrap();
        let l1 = d.singular_values[0];
        let zeta = d.waterline.unwrap();
        assert!((d.predicted_excess_mse - l1 * l1 / (zeta * l1)).abs() < 1e-10 * l1 * l1);
    }

    #[test]
    fn unserved_modes_contribute_full_energy() {
        let model = random_model(21, 6, 4);
        let d = design(&model, 2, 16, 4.0).unwrap();
        let s = &d.singular_values;
        let tail: f64 = (2..4).map(|i| s[i] * s[i]).sum();
        let zeta = d.waterline.unwrap();
        let head: f64 = (0..2).map(|i| s[i] * s[i] / ((zeta * s[i] - 1.0).max(0.0) + 1.0)).sum();
        assert!((d.predicted_excess_mse - (head + tail)).abs() < 1e-12 * (head + tail));
    }

    #[test]
    fn white_estimate_combiner_spans_task_rows() {
        // Γ̃Γ̃ᵀ = cI when Γ = Q Σ^{-1/2} with orthonormal rows Q
        let mut r = rng::from_seed(8);
        let g = rng::normal_matrix(5, 5, &mut r);
        let cov: DMatrix<f64> = &g * g.transpose() + DMatrix::identity(5, 5);
        let q = g.clone().qr().q().rows(0, 3).into_owned() * 1.7;
        let gamma = &q * linalg::sym_pow(&cov, -0.5, 1e-12);
        let model = LinearTaskModel::new(cov, gamma.clone(), 0.0).unwrap();
        let d = design(&model, 3, 8, 4.0).unwrap();
        let mut stacked = DMatrix::zeros(6, 5);
        stacked.rows_mut(0, 3).copy_from(&d.analog);
        stacked.rows_mut(3, 3).copy_from(&gamma);
        assert_eq!(linalg::rank(&stacked, 1e-8), 3);
    }

    #[test]
    fn recommend_p_is_rank() {
        let model = random_model(31, 6, 3);
        assert_eq!(recommend_p(&model), 3);
        let mut gamma = model.task_matrix().clone();
        let row = gamma.row(0).into_owned();
        gamma.set_row(1, &row);
        let dup = LinearTaskModel::new(model.obs_cov().clone(), gamma, 0.0).unwrap();
        assert_eq!(recommend_p(&dup), 2);
    }

    #[test]
    fn predicted_mse_non_increasing_in_levels() {
        let model = random_model(41, 10, 5);
        let mut last = f64::INFINITY;
        for bits in 2..10 {
            let d = design(&model, 4, 1 << bits, 4.0).unwrap();
            assert!(d.predicted_excess_mse <= last + 1e-12);
            last = d.predicted_excess_mse;
        }
        let s = model.singular_values();
        let tail: f64 = s.iter().skip(4).map(|v| v * v).sum();
        let fine = design(&model, 4, 1 << 22, 4.0).unwrap();
        assert!((fine.predicted_excess_mse - tail).abs() < 1e-6);
    }

    #[test]
    fn estimate_zero_input_is_deterministic() {
        let model = random_model(51, 4, 2);
        let d = design(&model, 2, 4, 4.0).unwrap().with_dither(false);
        let mut r = rng::from_seed(0);
        let s = estimate(&d, &DVector::zeros(4), &mut r).unwrap();
        let mid = d.quantizer.quantize(0.0).unwrap();
        let expected = &d.digital * DVector::from_element(2, mid);
        assert!((s - expected).amax() < 1e-15);
        assert!(estimate(&d, &DVector::zeros(3), &mut r).is_err());
    }

    #[test]
    fn fine_quantization_estimate_tracks_mmse() {
        let model = random_model(61, 5, 5);
        let d = design(&model, 5, 1 << 20, 4.0).unwrap().with_dither(false);
        let mut r = rng::from_seed(1);
        let x = rng::normal_vector(5, &mut r);
        let s = estimate(&d, &x, &mut r).unwrap();
        let target = model.task_matrix() * &x;
        assert!((s - target).amax() < 1e-3);
    }
}
