//! Indirect distortion-rate curve of the ISI task next to the closed-form design.

use taskquant::bounds::{self, SpectrumBound};
use taskquant::{harness, linear_task, scenarios};

fn main() -> taskquant::Result<()> {
    let model = scenarios::isi_scenario().linear_model().expect("linear scenario").clone();
    let p = 8;
    println!("bits,bound,design");
    for bits_per_adc in 1..=6 {
        let total = (p * bits_per_adc) as f64;
        let bound = bounds::indirect_drf(&SpectrumBound::from_model(&model, total)?);
        let levels = harness::levels_for_bits(bits_per_adc as f64);
        let eta = 3.0_f64.min(taskquant::quant::max_eta(levels, 0.95));
        let design = linear_task::design(&model, p, levels, eta)?;
        println!("{total},{bound:.4},{:.4}", design.predicted_excess_mse + model.mmse_floor());
    }
    Ok(())
}
