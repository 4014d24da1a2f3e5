//! Rate sweep on the ISI scenario: task-based design, quantize-the-estimate
//! baseline and the distortion-rate bound, written as CSV to stdout.

use taskquant::harness::{self, config::ExperimentConfig};

const CONFIG: &str = "\
scenario = isi
methods = task_based, mmse_then_quantize, digital_only
trials = 10000
seed = 1
dither = true
[sweep]
grid = 8/120, 16/120, 24/120, 32/120, 40/120, 48/120
[design]
p = 8
eta = 3
";

fn main() -> taskquant::Result<()> {
    let cfg = ExperimentConfig::from_text(CONFIG, "isi_sweep")?;
    let report = harness::sweep(&cfg)?;
    print!("{}", harness::csv_string(&report.rows));
    Ok(())
}
