//! Runs a built-in scenario preset end to end and prints the group table.
//!
//! Usage: cargo run --release --example run_scenario -- [preset] [injected]

use fso_cvqkd::scenario::{run_scenario, EstimationMode, ScenarioConfig, PRESETS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "inland-6-night".into());
    let mut cfg = ScenarioConfig::preset(&name).map_err(|e| format!("{e} (presets: {PRESETS:?})"))?;
    if args.next().as_deref() == Some("injected") {
        cfg.estimation = EstimationMode::Injected;
    }
    let start = std::time::Instant::now();
    let rep = run_scenario(&cfg)?;
    println!("preset {name}: {} slots in {:.2?}", rep.pipeline.n_slots, start.elapsed());
    println!(
        "n0 {:.4}  nu_el {:.4}  pilot SNR {:.1}  residual phase var {:.2e}",
        rep.pipeline.n0_hat, rep.pipeline.nu_el_hat, rep.pipeline.pilot_snr, rep.pipeline.phase_residual_variance
    );
    println!("{:>6} {:>8} {:>7} {:>7} {:>8} {:>8} {:>7} {:>10}", "bin", "L(dB)", "P", "V_A", "SNR", "eps", "alphaG", "R(bps)");
    for g in &rep.groups {
        println!(
            "{:>6} {:>8.3} {:>7.4} {:>7.3} {:>8.4} {:>8.4} {:>7.3} {:>10.2}",
            g.i, g.loss_db, g.probability, g.v_a, g.snr, g.eps, g.alpha_g, g.r_bps
        );
    }
    for s in &rep.skipped {
        println!("skipped bin {} ({} pairs): {}", s.i, s.n_pairs, s.reason);
    }
    println!("R_tot = {:.3} bps", rep.r_tot);
    Ok(())
}
