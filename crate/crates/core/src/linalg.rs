//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

/// Gram matrices with a larger condition estimate are refused.
pub const MAX_CONDITION: f64 = 1e14;

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Averages `m` with its transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// `m^power` for symmetric PSD `m`, with eigenvalues floored at
/// `floor_rel * λ_max` before exponentiation.
pub fn sym_pow(m: &DMatrix<f64>, power: f64, floor_rel: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let floor = floor_rel * vals.max().max(0.0);
    let scaled = DVector::from_iterator(vals.len(), vals.iter().map(|&v| v.max(floor).powf(power)));
    &vecs * DMatrix::from_diagonal(&scaled) * vecs.transpose()
}

/// Condition number of a symmetric positive semi-definite matrix.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    let hi = vals.max();
    let lo = vals.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Returns `rhs · m⁻¹` for symmetric positive-definite `m`.
pub fn solve_right_spd(rhs: &DMatrix<f64>, m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let cond = sym_condition(m);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::Numerical {
            message: format!("{context}: Gram matrix is singular or ill-conditioned"),
            condition: cond,
        });
    }
    let chol = symmetrize(m).cholesky().ok_or_else(|| Error::Numerical {
        message: format!("{context}: Cholesky factorization failed"),
        condition: cond,
    })?;
    // rhs · m⁻¹ = (m⁻¹ · rhsᵀ)ᵀ since m is symmetric
    Ok(chol.solve(&rhs.transpose()).transpose())
}

/// Thin SVD `m = U diag(s) Vᵀ` with singular values sorted descending.
///
/// Each right-singular vector is flipped so that its first entry with
/// magnitude above `1e-12` is nonnegative; the matching left vector flips too.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("U requested");
    let v_t = svd.v_t.expect("Vᵀ requested");
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut su = DMatrix::zeros(u.nrows(), r);
    let mut svt = DMatrix::zeros(r, v_t.ncols());
    let mut s = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = svd.singular_values[src];
        let mut ucol = u.column(src).into_owned();
        let mut vrow = v_t.row(src).into_owned();
        let sign = vrow
            .iter()
            .find(|v| v.abs() > 1e-12)
            .map(|v| v.signum())
            .unwrap_or(1.0);
        if sign < 0.0 {
            ucol.neg_mut();
            vrow.neg_mut();
        }
        su.set_column(dst, &ucol);
        svt.set_row(dst, &vrow);
    }
    SortedSvd {
        u: su,
        singular_values: s,
        v_t: svt,
    }
}

/// Numerical rank: singular values below `rel_tol · σ_max` count as zero.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = m.singular_values();
    let top = s.max();
    if top <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Real-composite embedding `[[Re, Im], [−Im, Re]]` of a complex matrix.
pub fn real_composite(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i, c + j)] = z.im;
            out[(r + i, j)] = -z.im;
            out[(r + i, c + j)] = z.re;
        }
    }
    out
}

/// Kronecker product of two complex matrices.
pub fn kron_complex(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::from_element(ar * br, ac * bc, Complex64::new(0.0, 0.0));
    for i in 0..ar {
        for j in 0..ac {
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Largest relative spread `(max − min) / mean` of a matrix diagonal.
pub fn diagonal_spread(m: &DMatrix<f64>) -> f64 {
    let d = m.diagonal();
    let mean = d.mean();
    if mean == 0.0 {
        return 0.0;
    }
    (d.max() - d.min()) / mean.abs()
}
