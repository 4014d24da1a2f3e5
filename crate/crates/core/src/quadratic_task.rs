//! Quadratic tasks `f_i(x) = xᵀ C_i x` on zero-mean Gaussian inputs.
//!
//! The observation is lifted to the centered outer product
//! `x̄ − E{x̄}` with `x̄ = vec(x xᵀ)`. Every task entry is then an exact
//! affine function of the lifted vector, so the linear designer applies with
//! the lifted covariance from the Gaussian fourth-moment identity
//! `Cov(x_i x_j, x_k x_l) = Σ_ik Σ_jl + Σ_il Σ_jk`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg;
use crate::linear_task::{LinearTaskModel, QuantizerDesign};
use crate::{Error, Result};

/// Relative eigenvalue floor added to the rank-deficient full lifted covariance.
pub const LIFT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct QuadraticTask {
    forms: Vec<DMatrix<f64>>,
    input_cov: DMatrix<f64>,
}

impl QuadraticTask {
    pub fn new(forms: Vec<DMatrix<f64>>, input_cov: DMatrix<f64>) -> Result<Self> {
        let n = input_cov.nrows();
        if !input_cov.is_square() || n == 0 {
            return Err(Error::dims("QuadraticTask input_cov", "square", format!("{:?}", input_cov.shape())));
        }
        if !linalg::is_symmetric(&input_cov, 1e-10) || linalg::sym_eigen(&input_cov).0.min() <= 0.0 {
            return Err(Error::Parameter("quadratic task input covariance must be symmetric positive definite".into()));
        }
        if forms.is_empty() {
            return Err(Error::Parameter("quadratic task needs at least one form".into()));
        }
        for (i, c) in forms.iter().enumerate() {
            if c.shape() != (n, n) {
                return Err(Error::dims("QuadraticTask form", format!("{n}x{n}"), format!("form {i}: {:?}", c.shape())));
            }
            if !linalg::is_symmetric(c, 1e-10) {
                return Err(Error::Parameter(format!("quadratic form {i} is not symmetric")));
            }
        }
        Ok(Self { forms, input_cov })
    }

    pub fn forms(&self) -> &[DMatrix<f64>] {
        &self.forms
    }

    pub fn input_cov(&self) -> &DMatrix<f64> {
        &self.input_cov
    }

    pub fn n(&self) -> usize {
        self.input_cov.nrows()
    }

    pub fn k(&self) -> usize {
        self.forms.len()
    }

    /// Exact task values `xᵀ C_i x`.
    pub fn evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.k(), self.forms.iter().map(|c| x.dot(&(c * x))))
    }

    /// Task means `Tr(C_i Σ)`.
    pub fn means(&self) -> DVector<f64> {
        DVector::from_iterator(self.k(), self.forms.iter().map(|c| (c * &self.input_cov).trace()))
    }

    /// Exact task covariance `Cov(f_i, f_j) = 2 Tr(C_i Σ C_j Σ)`.
    pub fn task_cov(&self) -> DMatrix<f64> {
        let k = self.k();
        let prods: Vec<DMatrix<f64>> = self.forms.iter().map(|c| c * &self.input_cov).collect();
        DMatrix::from_fn(k, k, |i, j| 2.0 * (&prods[i] * &prods[j]).trace())
    }
}

/// Which coordinates of `x xᵀ` the lift keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LiftMode {
    /// All `n²` entries of `vec(x xᵀ)` (column-major); covariance is
    /// rank-deficient and gets a small ridge.
    Full,
    /// The `n(n+1)/2` distinct entries `x_i x_j`, `i ≤ j`, row-major over the
    /// upper triangle.
    #[default]
    Half,
}

impl LiftMode {
    pub fn dim(self, n: usize) -> usize {
        match self {
            LiftMode::Full => n * n,
            LiftMode::Half => n * (n + 1) / 2,
        }
    }

    fn pairs(self, n: usize) -> Vec<(usize, usize)> {
        match self {
            LiftMode::Full => (0..n).flat_map(|j| (0..n).map(move |i| (i, j))).collect(),
            LiftMode::Half => (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect(),
        }
    }
}

/// `vec(x xᵀ) − vec(Σ)`.
pub fn lift(x: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    lift_with(LiftMode::Full, x, sigma)
}

pub fn lift_with(mode: LiftMode, x: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = x.len();
    if sigma.shape() != (n, n) {
        return Err(Error::dims("lift covariance", format!("{n}x{n}"), format!("{:?}", sigma.shape())));
    }
    let pairs = mode.pairs(n);
    Ok(DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| x[i] * x[j] - sigma[(i, j)])))
}

/// `(I + K_n)(Σ ⊗ Σ)`, the covariance of `vec(x xᵀ)` for `x ~ N(0, Σ)`.
pub fn lifted_covariance(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    lifted_covariance_with(LiftMode::Full, sigma)
}

pub fn lifted_covariance_with(mode: LiftMode, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let pairs = mode.pairs(sigma.nrows());
    let d = pairs.len();
    DMatrix::from_fn(d, d, |a, b| {
        let (i, j) = pairs[a];
        let (k, l) = pairs[b];
        sigma[(i, k)] * sigma[(j, l)] + sigma[(i, l)] * sigma[(j, k)]
    })
}

/// Linear model in the lifted domain plus what is needed to map back.
#[derive(Debug, Clone)]
pub struct LiftedModel {
    pub model: LinearTaskModel,
    /// `Tr(C_i Σ)`, re-added after digital recovery.
    pub offsets: DVector<f64>,
    pub mode: LiftMode,
    input_cov: DMatrix<f64>,
}

impl LiftedModel {
    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        lift_with(self.mode, x, &self.input_cov)
    }

    pub fn input_cov(&self) -> &DMatrix<f64> {
        &self.input_cov
    }
}

/// Reduces a quadratic task to a [`LinearTaskModel`] on the lifted observation
/// using the default [`LiftMode::Half`].
pub fn to_linear_model(task: &QuadraticTask) -> Result<LiftedModel> {
    to_linear_model_with(task, LiftMode::Half)
}

pub fn to_linear_model_with(task: &QuadraticTask, mode: LiftMode) -> Result<LiftedModel> {
    let n = task.n();
    let pairs = mode.pairs(n);
    let mut cov = lifted_covariance_with(mode, task.input_cov());
    if mode == LiftMode::Full {
        let top = linalg::sym_eigen(&cov).0.max();
        for i in 0..cov.nrows() {
            cov[(i, i)] += LIFT_FLOOR * top;
        }
    }
    let mut gamma = DMatrix::zeros(task.k(), pairs.len());
    for (r, c) in task.forms().iter().enumerate() {
        for (col, &(i, j)) in pairs.iter().enumerate() {
            gamma[(r, col)] = match mode {
                LiftMode::Full => c[(i, j)],
                LiftMode::Half if i == j => c[(i, i)],
                LiftMode::Half => c[(i, j)] + c[(j, i)],
            };
        }
    }
    Ok(LiftedModel {
        model: LinearTaskModel::new(cov, gamma, 0.0)?,
        offsets: task.means(),
        mode,
        input_cov: task.input_cov().clone(),
    })
}

/// `ŝ = B · Q(A · lift(x)) + offsets`.
pub fn estimate_quadratic<R: Rng + ?Sized>(
    lifted: &LiftedModel,
    design: &QuantizerDesign,
    x: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if design.k() != lifted.offsets.len() {
        return Err(Error::dims("estimate_quadratic offsets", design.k(), lifted.offsets.len()));
    }
    let z = lifted.lift(x)?;
    Ok(crate::linear_task::estimate(design, &z, rng)? + &lifted.offsets)
}
