//! Feasibility models for analog combiners: phase-only and partially
//! connected phase-shifter networks, and dynamic metasurface antennas whose
//! elements follow a Lorentzian resonance.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::linear_task::{self, LinearTaskModel, QuantizerDesign};
use crate::{Error, Result};

/// Entry-wise projection onto the unit circle; zero entries map to `+1`.
pub fn project_phase_only(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.map(|z| {
        let r = z.norm();
        if r == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            z / r
        }
    })
}

/// Real phase-only projection: entries become `±1` (zero maps to `+1`).
pub fn project_phase_only_real(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.map(|v| if v < 0.0 { -1.0 } else { 1.0 })
}

/// Antenna subsets, one per quantizer row, partitioning `{0, …, n−1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialAssignment {
    subsets: Vec<Vec<usize>>,
    n: usize,
}

impl PartialAssignment {
    pub fn new(subsets: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in subsets.iter().flatten() {
            if i >= n {
                return Err(Error::Parameter(format!("antenna {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Parameter(format!("antenna {i} assigned to more than one quantizer")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Parameter(format!("antenna {missing} is not assigned to any quantizer")));
        }
        Ok(Self { subsets, n })
    }

    /// `p` contiguous subsets of (nearly) equal size.
    pub fn contiguous(p: usize, n: usize) -> Result<Self> {
        if p == 0 || p > n {
            return Err(Error::Parameter(format!("cannot split {n} antennas into {p} subsets")));
        }
        let subsets = (0..p).map(|i| (i * n / p..(i + 1) * n / p).collect()).collect();
        Self::new(subsets, n)
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn rows(&self) -> usize {
        self.subsets.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// 0/1 connectivity mask, `p × n`.
    pub fn mask(&self) -> DMatrix<bool> {
        let mut m = DMatrix::from_element(self.rows(), self.n, false);
        for (row, subset) in self.subsets.iter().enumerate() {
            for &col in subset {
                m[(row, col)] = true;
            }
        }
        m
    }
}

/// Zeroes every entry outside its row's subset; returns the masked matrix and
/// the Frobenius norm of what was removed.
pub fn apply_partial_mask<T: ComplexField<RealField = f64> + Copy>(
    a: &DMatrix<T>,
    assignment: &PartialAssignment,
) -> Result<(DMatrix<T>, f64)> {
    if a.shape() != (assignment.rows(), assignment.n()) {
        return Err(Error::dims(
            "partial mask",
            format!("{}x{}", assignment.rows(), assignment.n()),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let mask = assignment.mask();
    let mut out = a.clone();
    let mut removed = 0.0;
    for (v, keep) in out.iter_mut().zip(mask.iter()) {
        if !keep {
            removed += v.modulus_squared();
            *v = T::zero();
        }
    }
    Ok((out, removed.sqrt()))
}

/// One metasurface element, `b(ω) = Fω² / (ω_R² − ω² − jωχ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianElement {
    pub strength: f64,
    pub damping: f64,
    pub resonance: f64,
}

impl LorentzianElement {
    pub fn new(strength: f64, damping: f64, resonance: f64) -> Result<Self> {
        for (name, v) in [("oscillator strength", strength), ("damping", damping), ("resonance frequency", resonance)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            strength,
            damping,
            resonance,
        })
    }
}

pub fn lorentzian_response(elem: &LorentzianElement, omega: f64) -> Complex64 {
    let denom = Complex64::new(elem.resonance * elem.resonance - omega * omega, -omega * elem.damping);
    Complex64::new(elem.strength * omega * omega, 0.0) / denom
}

/// Lossy transmission line: element `l` (0-based) sees `exp(−l(α + jω/v_p))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagation {
    pub attenuation: f64,
    pub phase_velocity: f64,
}

impl Propagation {
    pub const IDEAL: Propagation = Propagation {
        attenuation: 0.0,
        phase_velocity: f64::INFINITY,
    };

    pub fn response(&self, index: usize, omega: f64) -> Complex64 {
        let l = index as f64;
        (-Complex64::new(l * self.attenuation, l * omega / self.phase_velocity)).exp()
    }
}

/// One microstrip feeding one quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Microstrip {
    pub elements: Vec<LorentzianElement>,
    pub propagation: Propagation,
}

fn column_offsets(microstrips: &[Microstrip]) -> Vec<usize> {
    microstrips
        .iter()
        .scan(0, |acc, m| {
            let start = *acc;
            *acc += m.elements.len();
            Some(start)
        })
        .collect()
}

/// Combining matrix of a DMA: row `i` holds `b_{i,l}(ω) h_{i,l}(ω)` on the
/// columns of microstrip `i` (ordered microstrip by microstrip), zero elsewhere.
pub fn dma_combiner(microstrips: &[Microstrip], omega: f64) -> DMatrix<Complex64> {
    let n: usize = microstrips.iter().map(|m| m.elements.len()).sum();
    let mut out = DMatrix::from_element(microstrips.len(), n, Complex64::new(0.0, 0.0));
    for ((row, strip), start) in microstrips.iter().enumerate().zip(column_offsets(microstrips)) {
        for (l, elem) in strip.elements.iter().enumerate() {
            out[(row, start + l)] = lorentzian_response(elem, omega) * strip.propagation.response(l, omega);
        }
    }
    out
}

/// Log-spaced search ranges for `(F, χ, ω_R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGrid {
    pub strength: (f64, f64),
    pub damping: (f64, f64),
    pub resonance: (f64, f64),
    pub points: usize,
}

impl ParamGrid {
    pub const DEFAULT_POINTS: usize = 32;

    /// Ranges centred on the carrier: `F ∈ [0.1, 10]`, `χ ∈ [0.01ω, ω]`,
    /// `ω_R ∈ [0.5ω, 2ω]`.
    pub fn around(omega: f64) -> Self {
        Self {
            strength: (0.1, 10.0),
            damping: (0.01 * omega, omega),
            resonance: (0.5 * omega, 2.0 * omega),
            points: Self::DEFAULT_POINTS,
        }
    }

    pub fn with_points(self, points: usize) -> Self {
        Self { points, ..self }
    }

    fn axis(range: (f64, f64), points: usize) -> Vec<f64> {
        if points == 1 {
            return vec![(range.0 * range.1).sqrt()];
        }
        let (lo, hi) = (range.0.ln(), range.1.ln());
        (0..points).map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::Parameter("parameter grid needs at least one point per axis".into()));
        }
        for (name, (lo, hi)) in [("strength", self.strength), ("damping", self.damping), ("resonance", self.resonance)] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
                return Err(Error::Parameter(format!("invalid {name} range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Every grid element, strength-major.
    pub fn elements(&self) -> Result<Vec<LorentzianElement>> {
        self.validate()?;
        let (fs, cs, rs) = (
            Self::axis(self.strength, self.points),
            Self::axis(self.damping, self.points),
            Self::axis(self.resonance, self.points),
        );
        let mut out = Vec::with_capacity(fs.len() * cs.len() * rs.len());
        for &f in &fs {
            for &c in &cs {
                for &r in &rs {
                    out.push(LorentzianElement::new(f, c, r)?);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct LorentzianProjection {
    pub matrix: DMatrix<Complex64>,
    /// Chosen elements per microstrip.
    pub microstrips: Vec<Microstrip>,
    /// Total squared distance to the desired matrix.
    pub residual: f64,
}

/// Nearest DMA combiner, element by element, over the sampled grid.
/// `layout` supplies the microstrip sizes and propagation; its element values
/// are ignored.
pub fn project_lorentzian(
    desired: &DMatrix<Complex64>,
    layout: &[Microstrip],
    omega: f64,
    grid: &ParamGrid,
) -> Result<LorentzianProjection> {
    let n: usize = layout.iter().map(|m| m.elements.len()).sum();
    if desired.shape() != (layout.len(), n) {
        return Err(Error::dims(
            "lorentzian projection",
            format!("{}x{n}", layout.len()),
            format!("{}x{}", desired.nrows(), desired.ncols()),
        ));
    }
    let candidates = grid.elements()?;
    let responses: Vec<Complex64> = candidates.iter().map(|e| lorentzian_response(e, omega)).collect();
    let offsets = column_offsets(layout);

    let chosen: Vec<Vec<(LorentzianElement, f64)>> = layout
        .par_iter()
        .zip(offsets.par_iter())
        .enumerate()
        .map(|(row, (strip, &start))| {
            (0..strip.elements.len())
                .map(|l| {
                    let h = strip.propagation.response(l, omega);
                    let target = desired[(row, start + l)];
                    let (best, dist) = responses
                        .iter()
                        .enumerate()
                        .map(|(i, b)| (i, (b * h - target).norm_sqr()))
                        .min_by(|x, y| x.1.total_cmp(&y.1))
                        .expect("grid is nonempty");
                    (candidates[best], dist)
                })
                .collect()
        })
        .collect();

    let microstrips: Vec<Microstrip> = layout
        .iter()
        .zip(&chosen)
        .map(|(strip, picks)| Microstrip {
            elements: picks.iter().map(|(e, _)| *e).collect(),
            propagation: strip.propagation,
        })
        .collect();
    let matrix = dma_combiner(&microstrips, omega);
    let on_strip: f64 = chosen.iter().flatten().map(|(_, d)| d).sum();
    let mut off_strip = 0.0;
    for (row, start) in offsets.iter().enumerate() {
        let end = start + layout[row].elements.len();
        for col in (0..n).filter(|c| !(*start..end).contains(c)) {
            off_strip += desired[(row, col)].norm_sqr();
        }
    }
    Ok(LorentzianProjection {
        matrix,
        microstrips,
        residual: on_strip + off_strip,
    })
}

/// DMA configuration for constrained design of a real model.
#[derive(Debug, Clone, PartialEq)]
pub struct DmaConstraint {
    pub layout: Vec<Microstrip>,
    pub omega: f64,
    pub grid: ParamGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CombinerConstraint {
    Unconstrained,
    /// Every entry `±1` (real phase shifters).
    PhaseOnly,
    /// Each quantizer connects only to its antenna subset; optionally with
    /// phase-only weights on the connected entries.
    Partial { assignment: PartialAssignment, phase_only: bool },
    /// Real part of the nearest DMA combiner.
    Lorentzian(DmaConstraint),
}

impl CombinerConstraint {
    /// Projects a real combiner onto the feasible set.
    pub fn project(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            CombinerConstraint::Unconstrained => Ok(a.clone()),
            CombinerConstraint::PhaseOnly => Ok(project_phase_only_real(a)),
            CombinerConstraint::Partial { assignment, phase_only } => {
                let (masked, _) = apply_partial_mask(a, assignment)?;
                if *phase_only {
                    let mask = assignment.mask();
                    Ok(DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
                        if mask[(i, j)] {
                            if masked[(i, j)] < 0.0 {
                                -1.0
                            } else {
                                1.0
                            }
                        } else {
                            0.0
                        }
                    }))
                } else {
                    Ok(masked)
                }
            }
            CombinerConstraint::Lorentzian(dma) => {
                let desired = a.map(|v| Complex64::new(v, 0.0));
                let proj = project_lorentzian(&desired, &dma.layout, dma.omega, &dma.grid)?;
                Ok(proj.matrix.map(|z| z.re))
            }
        }
    }

    /// Whether `a` already satisfies the structural part of the constraint.
    pub fn is_feasible(&self, a: &DMatrix<f64>) -> bool {
        match self {
            CombinerConstraint::Unconstrained | CombinerConstraint::Lorentzian(_) => true,
            CombinerConstraint::PhaseOnly => a.iter().all(|v| v.abs() == 1.0),
            CombinerConstraint::Partial { assignment, phase_only } => {
                a.shape() == (assignment.rows(), assignment.n())
                    && a.iter().zip(assignment.mask().iter()).all(|(v, keep)| {
                        if *keep {
                            !*phase_only || v.abs() == 1.0
                        } else {
                            *v == 0.0
                        }
                    })
            }
        }
    }
}

/// Task-based design projected onto the constraint (one shot), with the
/// support and digital matrix recomputed for the projected combiner.
pub fn constrained_design(
    model: &LinearTaskModel,
    constraint: &CombinerConstraint,
    p: usize,
    levels: usize,
    eta: f64,
) -> Result<QuantizerDesign> {
    let base = linear_task::design(model, p, levels, eta)?;
    if *constraint == CombinerConstraint::Unconstrained {
        return Ok(base);
    }
    let projected = constraint.project(&base.analog)?;
    QuantizerDesign::from_combiner(model, projected, levels, eta, base.quantizer.dithered())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::scenarios;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn phase_only_examples() {
        let a = DMatrix::from_row_slice(1, 3, &[c(3.0, 4.0), c(-2.0, 0.0), c(0.0, 0.0)]);
        let p = project_phase_only(&a);
        assert!((p[0] - c(0.6, 0.8)).norm() < 1e-15);
        assert_eq!(p[1], c(-1.0, 0.0));
        assert_eq!(p[2], c(1.0, 0.0));
        assert_eq!(project_phase_only(&p), p);
    }

    #[test]
    fn partial_mask_examples() {
        let mut r = rng::from_seed(4);
        let a = rng::normal_matrix(4, 4, &mut r);
        let singletons = PartialAssignment::new((0..4).map(|i| vec![i]).collect(), 4).unwrap();
        let (m, _) = apply_partial_mask(&a, &singletons).unwrap();
        assert_eq!(m, DMatrix::from_diagonal(&a.diagonal()));

        let a = rng::normal_matrix(2, 8, &mut r);
        let halves = PartialAssignment::contiguous(2, 8).unwrap();
        let (m, residual) = apply_partial_mask(&a, &halves).unwrap();
        let zeroed: f64 = (0..2)
            .flat_map(|i| (0..8).map(move |j| (i, j)))
            .filter(|&(i, j)| (j < 4) != (i == 0))
            .map(|ij| a[ij] * a[ij])
            .sum();
        assert!((residual * residual - zeroed).abs() < 1e-12);
        let (again, residual) = apply_partial_mask(&m, &halves).unwrap();
        assert_eq!((again, residual), (m, 0.0));

        assert!(PartialAssignment::new(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(PartialAssignment::new(vec![vec![0], vec![2]], 3).is_err());
        assert!(PartialAssignment::new(vec![vec![0, 5]], 3).is_err());
    }

    #[test]
    fn lorentzian_examples() {
        let e = LorentzianElement::new(2.0, 0.3, 5.0).unwrap();
        let peak = lorentzian_response(&e, 5.0);
        assert!((peak - c(0.0, 2.0 * 5.0 / 0.3)).norm() < 1e-12);
        assert!((peak.norm() - 2.0 * 5.0 / 0.3).abs() < 1e-12);
        let low = lorentzian_response(&e, 1e-3);
        assert!((low.re / (2.0 * 1e-6 / 25.0) - 1.0).abs() < 1e-6 && low.im.abs() < 1e-3 * low.re);
        assert!(LorentzianElement::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn dma_structure() {
        let e = LorentzianElement::new(1.0, 0.5, 2.0).unwrap();
        let single = dma_combiner(
            &[Microstrip {
                elements: vec![e],
                propagation: Propagation::IDEAL,
            }],
            1.5,
        );
        assert_eq!(single.shape(), (1, 1));
        assert!((single[0] - lorentzian_response(&e, 1.5)).norm() < 1e-15);

        let lossless = Propagation {
            attenuation: 0.0,
            phase_velocity: 3.0,
        };
        let strips = vec![
            Microstrip {
                elements: vec![e; 4],
                propagation: lossless,
            },
            Microstrip {
                elements: vec![e; 3],
                propagation: lossless,
            },
        ];
        let m = dma_combiner(&strips, 1.5);
        assert_eq!(m.shape(), (2, 7));
        for j in 0..7 {
            assert_eq!(m[(0, j)].norm() == 0.0, j >= 4);
            assert_eq!(m[(1, j)].norm() == 0.0, j < 4);
        }
        for j in 1..4 {
            assert!((m[(0, j)].norm() - m[(0, 0)].norm()).abs() < 1e-12);
        }
    }

    fn layout(sizes: &[usize]) -> Vec<Microstrip> {
        let e = LorentzianElement::new(1.0, 1.0, 1.0).unwrap();
        sizes
            .iter()
            .map(|&s| Microstrip {
                elements: vec![e; s],
                propagation: Propagation {
                    attenuation: 0.05,
                    phase_velocity: 4.0,
                },
            })
            .collect()
    }

    #[test]
    fn lorentzian_projection() {
        let omega = 2.0;
        let grid = ParamGrid::around(omega).with_points(5);
        let lay = layout(&[2, 3]);
        let feasible = project_lorentzian(&DMatrix::from_element(2, 5, c(0.3, -0.2)), &lay, omega, &grid).unwrap();
        let again = project_lorentzian(&feasible.matrix, &lay, omega, &grid).unwrap();
        assert!(again.residual < 1e-24);
        assert_eq!(again.matrix, feasible.matrix);

        let mut r = rng::from_seed(8);
        let desired = DMatrix::from_fn(2, 5, |_, _| c(rng::normal(&mut r), rng::normal(&mut r)));
        let mut last = f64::INFINITY;
        for points in [3, 5, 9, 17] {
            let res = project_lorentzian(&desired, &lay, omega, &grid.with_points(points)).unwrap().residual;
            assert!(res <= last + 1e-12, "{points}: {res} > {last}");
            last = res;
        }
        assert!(project_lorentzian(&desired, &layout(&[5]), omega, &grid).is_err());
    }

    #[test]
    fn constrained_design_properties() {
        let model = scenarios::isi_scenario().linear_model().unwrap().clone();
        let base = linear_task::design(&model, 8, 8, 4.0).unwrap();
        let same = constrained_design(&model, &CombinerConstraint::Unconstrained, 8, 8, 4.0).unwrap();
        assert_eq!(same.analog, base.analog);
        let phase = constrained_design(&model, &CombinerConstraint::PhaseOnly, 8, 8, 4.0).unwrap();
        assert!(CombinerConstraint::PhaseOnly.is_feasible(&phase.analog));
        assert!(phase.predicted_excess_mse >= base.predicted_excess_mse);
        let stale = linear_task::excess_mse_with_digital(&phase.analog, &base.digital, &model, phase.quantizer.support(), 8).unwrap();
        assert!(phase.predicted_excess_mse <= stale);
    }

    #[test]
    fn phase_only_gap_on_isi_is_stable() {
        let model = scenarios::isi_scenario().linear_model().unwrap().clone();
        let base = linear_task::design(&model, 8, 8, 4.0).unwrap();
        let phase = constrained_design(&model, &CombinerConstraint::PhaseOnly, 8, 8, 4.0).unwrap();
        let gap = phase.predicted_excess_mse - base.predicted_excess_mse;
        assert!((gap / 2.311_737_895_813_548_6 - 1.0).abs() < 1e-6, "gap {gap}");
    }
}
