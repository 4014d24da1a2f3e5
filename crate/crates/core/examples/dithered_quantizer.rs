//! Error statistics of a dithered uniform quantizer against the `Δ²/6` model.

use taskquant::quant::UniformQuantizerSpec;
use taskquant::rng;

fn main() -> taskquant::Result<()> {
    let samples = 200_000;
    for levels in [2, 4, 16] {
        let q = UniformQuantizerSpec::new(levels, 1.0, true)?;
        let edge = q.support() - q.spacing() / 2.0;
        let mut r = rng::stream(1, &[levels as u64]);
        let (mut mean, mut power) = (0.0, 0.0);
        for _ in 0..samples {
            let x = rng::uniform(&mut r, -edge, edge);
            let e = q.apply(x, &mut r)? - x;
            mean += e;
            power += e * e;
        }
        mean /= samples as f64;
        power /= samples as f64;
        println!(
            "M = {levels:>2}: error mean {mean:+.5}, error power {power:.5}, model {:.5}",
            q.noise_variance()
        );
    }
    Ok(())
}
