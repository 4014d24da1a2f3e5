//! BPSK detection with a learned 3-bit front end, against exhaustive MAP on
//! the clean and on the 1-bit quantized observation.

use taskquant::deep::{self, Dataset, DeepDetector, Network, NetworkSpec, TrainConfig};
use taskquant::harness;
use taskquant::quant::UniformQuantizerSpec;
use taskquant::scenarios::{self, MapDetector, QuantizedMapDetector};
use taskquant::rng;

fn main() -> taskquant::Result<()> {
    let snr_db = 10.0;
    let scenario = scenarios::bpsk_scenario(scenarios::db_to_linear(snr_db))?;
    let h = scenario.channel().expect("bpsk has a channel").clone();
    let noise = scenario.noise_var().expect("bpsk has noise");
    let (n, k) = (scenario.n(), scenario.k());

    let data = Dataset::from_scenario(&scenario, 5000, &mut rng::stream(1, &[0]));
    let spec = NetworkSpec { steepness: 20.0, ..NetworkSpec::classifier(n, 32, 4, 8, 1 << k) };
    let cfg = TrainConfig { learning_rate: 0.01, epochs: 100, seed: 1, ..TrainConfig::default() };
    let net = deep::harden(&deep::train(&Network::new(&spec, 1)?, &data, &cfg)?.network)?;

    let deep = DeepDetector { network: net, symbols: k };
    let map = MapDetector::new(h.clone());
    let one_bit = QuantizedMapDetector::new(h, noise, UniformQuantizerSpec::new(2, 1.0, false)?);
    for (name, det) in [("map", &map as &dyn scenarios::Detector), ("1-bit map", &one_bit), ("deep", &deep)] {
        let row = harness::simulate_ber(det, &scenario, 20_000, 2)?;
        println!("{name:>9} at {snr_db} dB: BER {:.4}", row.estimate);
    }
    Ok(())
}
