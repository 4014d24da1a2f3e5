//! Learns a hybrid quantizer for DFT-pilot channel estimation and compares the
//! hardened network with the closed-form design at the same rate.

use taskquant::deep::{self, Dataset, Network, NetworkSpec, TrainConfig};
use taskquant::harness;
use taskquant::linear_task;
use taskquant::{rng, scenarios};

fn main() -> taskquant::Result<()> {
    let scenario = scenarios::dft_pilot_scenario();
    let model = scenario.linear_model().expect("linear scenario");
    let (n, k) = (model.n(), model.k());
    let levels = harness::levels_for_rate(2.0, n, k);
    let design = linear_task::design(model, k, levels, 4.0)?;

    let train = Dataset::from_scenario(&scenario, 1 << 14, &mut rng::stream(1, &[0]));
    let test = Dataset::from_scenario(&scenario, 1 << 10, &mut rng::stream(1, &[1]));
    let spec = NetworkSpec { support: 3.0, ..NetworkSpec::linear(n, k, levels, k) };
    let cfg = TrainConfig { learning_rate: 0.003, epochs: 30, seed: 1, ..TrainConfig::default() };
    let report = deep::train(&Network::new(&spec, 1)?, &train, &cfg)?;
    let hard = deep::harden(&report.network)?;

    println!("M = {levels} per quantizer, {k} quantizers");
    println!("closed-form design: {:.4}", design.predicted_excess_mse + model.mmse_floor());
    println!("soft network:       {:.4}", deep::evaluate_mse(&report.network, &test)?);
    println!("hardened network:   {:.4}", deep::evaluate_mse(&hard, &test)?);
    Ok(())
}
