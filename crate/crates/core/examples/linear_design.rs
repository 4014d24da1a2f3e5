//! Closed-form hybrid design for ISI channel estimation, checked by simulation.

use taskquant::harness;
use taskquant::linear_task;
use taskquant::scenarios;

fn main() -> taskquant::Result<()> {
    let scenario = scenarios::isi_scenario();
    let model = scenario.linear_model().expect("linear scenario");
    println!("n = {}, k = {}, MMSE = {:.4}", model.n(), model.k(), model.mmse_floor());
    let p = linear_task::recommend_p(model);
    for levels in [2, 4, 8, 16] {
        let design = linear_task::design(model, p, levels, 3.0)?;
        let row = harness::simulate_mse(&design, &scenario, 20_000, 7, true)?;
        println!(
            "p = {p}, M = {levels:>2} ({:>2} bits): predicted {:.4}, simulated {:.4} ± {:.4}",
            design.total_bits(),
            design.predicted_excess_mse + model.mmse_floor(),
            row.estimate,
            row.std_error.unwrap_or(0.0)
        );
    }
    Ok(())
}
