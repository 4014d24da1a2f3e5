//! Empirical covariance recovery: a quadratic task made linear by lifting.

use taskquant::harness::{self, HybridPipeline};
use taskquant::quadratic_task;
use taskquant::scenarios;

fn main() -> taskquant::Result<()> {
    let scenario = scenarios::covariance_scenario();
    let task = scenario.quadratic_task().expect("quadratic scenario");
    let lifted = quadratic_task::to_linear_model(task)?;
    println!("n = {}, lifted dimension = {}, k = {}", task.n(), lifted.model.n(), task.k());
    for bits in [8.0, 12.0, 16.0, 24.0] {
        let Some(design) = harness::quadratic_design(&lifted, bits, 4.0, None)? else {
            println!("{bits} bits: too few for two levels per quantizer");
            continue;
        };
        let est = HybridPipeline {
            design: design.clone(),
            lift: Some(lifted.clone()),
            analog_offset: None,
            digital_offset: Some(task.means()),
        };
        let mse = harness::simulate_mse_at(&est, &scenario, 20_000, 3, &[bits as u64])?.mse;
        println!(
            "{bits} bits: p = {}, M = {}, predicted {:.4}, simulated {:.4}",
            design.p(),
            design.quantizer.levels(),
            design.predicted_excess_mse,
            mse.estimate
        );
    }
    Ok(())
}
