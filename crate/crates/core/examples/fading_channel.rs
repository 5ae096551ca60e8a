//! Generates a correlated log-normal fading trace, bins it into a loss
//! histogram and replays that histogram as an empirical channel.

use fso_cvqkd::channel::{generate_trace, EmpiricalHistogram, FadingConfig, FadingDistribution, PhaseDriftConfig};
use fso_cvqkd::units::{DbLoss, RngSeed};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = FadingConfig {
        distribution: FadingDistribution::LogNormalTruncated,
        sigma_db: 0.6,
        fading_bandwidth: 5e3,
        ..FadingConfig::constant(DbLoss::new(19.5)?, 5e6)
    };
    let n = 2_000_000;
    let trace = generate_trace(&cfg, &PhaseDriftConfig::default(), n, RngSeed(1))?;
    let losses: Vec<f64> = trace.transmittance.iter().map(|t| -10.0 * t.log10()).collect();
    let hist = EmpiricalHistogram::from_losses(&losses, 0.2)?;
    println!("measured loss histogram (0.2-dB bins):");
    for (c, p) in hist.centers_db.iter().zip(&hist.probabilities) {
        if *p > 0.005 {
            println!("{c:>7.1} dB {p:>7.4} {}", "#".repeat((p * 200.0) as usize));
        }
    }
    let replay = FadingConfig {
        distribution: FadingDistribution::DiscreteEmpirical { histogram: hist.clone() },
        ..cfg
    };
    let trace2 = generate_trace(&replay, &PhaseDriftConfig::default(), n, RngSeed(2))?;
    let losses2: Vec<f64> = trace2.transmittance.iter().map(|t| -10.0 * t.log10()).collect();
    let hist2 = EmpiricalHistogram::from_losses(&losses2, 0.2)?;
    println!("total variation between measured and replayed histograms: {:.4}", hist.total_variation(&hist2));
    Ok(())
}
