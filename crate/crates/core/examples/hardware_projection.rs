//! Cost of hardware-constrained analog combiners on the ISI design.

use taskquant::hardware::{self, CombinerConstraint, DmaConstraint, Microstrip, ParamGrid, PartialAssignment, Propagation};
use taskquant::{linear_task, scenarios};

fn main() -> taskquant::Result<()> {
    let model = scenarios::isi_scenario().linear_model().expect("linear scenario").clone();
    let (p, n, levels, eta) = (8, model.n(), 8, 4.0);
    let layout: Vec<Microstrip> = (0..p)
        .map(|_| Microstrip {
            elements: vec![hardware::LorentzianElement::new(1.0, 0.1, 1.0).expect("valid element"); n / p],
            propagation: Propagation::IDEAL,
        })
        .collect();
    let constraints = [
        ("unconstrained", CombinerConstraint::Unconstrained),
        ("phase only", CombinerConstraint::PhaseOnly),
        ("partial", CombinerConstraint::Partial { assignment: PartialAssignment::contiguous(p, n)?, phase_only: false }),
        ("partial phase", CombinerConstraint::Partial { assignment: PartialAssignment::contiguous(p, n)?, phase_only: true }),
        ("lorentzian", CombinerConstraint::Lorentzian(DmaConstraint { layout, omega: 1.0, grid: ParamGrid::around(1.0) })),
    ];
    for (name, c) in &constraints {
        let d = hardware::constrained_design(&model, c, p, levels, eta)?;
        println!("{name:>14}: excess MSE {:.4}", d.predicted_excess_mse);
    }
    let base = linear_task::design(&model, p, levels, eta)?;
    let (_, residual) = hardware::apply_partial_mask(&base.analog, &PartialAssignment::contiguous(p, n)?)?;
    println!("energy removed by the partial mask: {residual:.4}");
    Ok(())
}
