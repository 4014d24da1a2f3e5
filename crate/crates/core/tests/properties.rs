use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use taskquant::bounds;
use taskquant::deep::{self, Network, NetworkSpec, QuantStage};
use taskquant::hardware::{self, CombinerConstraint, LorentzianElement, Microstrip, PartialAssignment, Propagation};
use taskquant::linear_task::{self, LinearTaskModel};
use taskquant::{linalg, rng};

fn model(seed: u64, n: usize, k: usize) -> LinearTaskModel {
    let mut r = rng::from_seed(seed);
    let g = rng::normal_matrix(n, n, &mut r);
    let cov = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.2;
    LinearTaskModel::new(cov, rng::normal_matrix(k, n, &mut r), 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn design_beats_quantizing_the_mmse_estimate(seed in any::<u64>(), n in 2usize..20, k in 1usize..6, levels in 4usize..40) {
        let k = k.min(n);
        let m = model(seed, n, k);
        let d = linear_task::design(&m, k, levels, 2.0).unwrap();
        let gamma = m.task_matrix().clone();
        let support = linear_task::support_for_combiner(&gamma, &m, levels, 2.0).unwrap();
        let baseline = linear_task::excess_mse(&gamma, &m, support, levels).unwrap();
        prop_assert!(d.predicted_excess_mse <= baseline * (1.0 + 1e-9));
    }

    #[test]
    fn design_invariants(seed in any::<u64>(), n in 2usize..20, k in 1usize..6, p in 1usize..20, levels in 4usize..40) {
        let k = k.min(n);
        let p = p.min(n);
        let m = model(seed, n, k);
        let d = linear_task::design(&m, p, levels, 2.0).unwrap();
        let exact = linear_task::excess_mse(&d.analog, &m, d.quantizer.support(), levels).unwrap();
        prop_assert!((exact - d.predicted_excess_mse).abs() <= 1e-8 * exact.abs().max(1e-300));
        let gram = &d.analog * m.obs_cov() * d.analog.transpose();
        prop_assert!(linalg::diagonal_spread(&gram) < 1e-8);
        let finer = linear_task::design(&m, p, levels + 1, 2.0).unwrap();
        prop_assert!(finer.predicted_excess_mse <= d.predicted_excess_mse * (1.0 + 1e-12));
        prop_assert!(d.predicted_excess_mse >= 0.0);
    }

    #[test]
    fn fine_resolution_limit_is_the_unserved_energy(seed in any::<u64>(), n in 2usize..16, k in 1usize..6, p in 1usize..8) {
        let k = k.min(n);
        let m = model(seed, n, k);
        let lam = m.singular_values();
        let tail: f64 = lam.iter().skip(p).map(|l| l * l).sum();
        let total: f64 = lam.iter().map(|l| l * l).sum();
        let d = linear_task::design(&m, p, 1 << 24, 2.0).unwrap();
        prop_assert!((d.predicted_excess_mse - tail).abs() <= 1e-9 * total);
    }

    #[test]
    fn drf_is_monotone_and_convex(eigs in prop::collection::vec(0.0f64..5.0, 1..10), floor in 0.0f64..2.0) {
        let rates: Vec<f64> = (0..40).map(|i| 0.25 * i as f64).collect();
        let curve = bounds::drf_curve(&eigs, floor, &rates).unwrap();
        let total: f64 = eigs.iter().sum();
        prop_assert!((curve[0] - floor - total).abs() <= 1e-9 * (1.0 + total));
        for w in curve.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
            prop_assert!(w[1] >= floor - 1e-12);
        }
        for w in curve.windows(3) {
            prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-8 * (1.0 + total));
        }
    }

    #[test]
    fn projections_are_idempotent_and_reoptimized(seed in any::<u64>(), groups in 1usize..5) {
        let m = model(seed, 12, 3);
        let mut r = rng::from_seed(seed ^ 1);
        let a = rng::normal_matrix(groups, 12, &mut r);
        let assignment = PartialAssignment::contiguous(groups, 12).unwrap();
        let constraints = [
            CombinerConstraint::PhaseOnly,
            CombinerConstraint::Partial { assignment: assignment.clone(), phase_only: false },
            CombinerConstraint::Partial { assignment, phase_only: true },
        ];
        for c in &constraints {
            let once = c.project(&a).unwrap();
            prop_assert!(c.is_feasible(&once));
            prop_assert_eq!(&c.project(&once).unwrap(), &once);

            // the optimal digital matrix never loses to reusing the unconstrained one
            let levels = 8;
            let base = linear_task::design(&m, groups, levels, 2.0).unwrap();
            let projected = c.project(&base.analog).unwrap();
            let support = linear_task::support_for_combiner(&projected, &m, levels, 2.0);
            if let Ok(support) = support {
                let best = linear_task::excess_mse(&projected, &m, support, levels).unwrap();
                let reused = linear_task::excess_mse_with_digital(&projected, &base.digital, &m, support, levels).unwrap();
                prop_assert!(best <= reused * (1.0 + 1e-9) + 1e-12);
            }
        }
    }

    #[test]
    fn dma_sparsity_follows_microstrips(sizes in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let mut r = rng::from_seed(seed);
        let strips: Vec<Microstrip> = sizes
            .iter()
            .map(|&s| Microstrip {
                elements: (0..s)
                    .map(|_| LorentzianElement::new(rng::uniform(&mut r, 0.1, 5.0), rng::uniform(&mut r, 0.05, 1.0), rng::uniform(&mut r, 0.5, 2.0)).unwrap())
                    .collect(),
                propagation: Propagation { attenuation: rng::uniform(&mut r, 0.0, 0.3), phase_velocity: rng::uniform(&mut r, 0.5, 3.0) },
            })
            .collect();
        let w = hardware::dma_combiner(&strips, 1.0);
        let mut start = 0;
        for (row, &s) in sizes.iter().enumerate() {
            for col in 0..w.ncols() {
                let on = (start..start + s).contains(&col);
                prop_assert_eq!(w[(row, col)] != Complex64::new(0.0, 0.0), on);
            }
            start += s;
        }
    }

    #[test]
    fn softmax_head_sums_to_one(seed in any::<u64>(), scale in 0.1f64..30.0) {
        let spec = NetworkSpec::classifier(5, 4, 2, 3, 6);
        let mut net = Network::new(&spec, seed).unwrap();
        let mut r = rng::from_seed(seed);
        let theta: Vec<f64> = net.parameters().iter().map(|_| scale * rng::normal(&mut r)).collect();
        net.set_parameters(&theta).unwrap();
        let out = net.forward(&rng::normal_vector(5, &mut r)).unwrap();
        prop_assert!((out.sum() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn hardening_yields_sorted_step_functions(seed in any::<u64>(), levels in 2usize..9) {
        let spec = NetworkSpec { steepness: 5.0, ..NetworkSpec::linear(4, 3, levels, 2) };
        let mut net = Network::new(&spec, seed).unwrap();
        let mut r = rng::from_seed(seed);
        let theta: Vec<f64> = net.parameters().iter().map(|t| t + 0.1 * rng::normal(&mut r)).collect();
        net.set_parameters(&theta).unwrap();
        let hard = deep::harden(&net).unwrap();
        prop_assert!(hard.is_hard());
        prop_assert_eq!(hard.head().outputs(), 2);
        if let QuantStage::Hard(chans) = hard.quant() {
            for q in chans {
                prop_assert!(q.thresholds().windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(q.levels().len(), q.thresholds().len() + 1);
            }
        }
        prop_assert_eq!(deep::harden(&hard).unwrap(), hard);
    }
}
