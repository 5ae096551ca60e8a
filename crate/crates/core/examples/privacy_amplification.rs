//! Toeplitz-hash privacy amplification of a biased bit string, followed by
//! the monobit and runs tests on the output.

use fso_cvqkd::privacy::{monobit_p_value, privacy_amplify, runs_p_value, PaConfig};
use fso_cvqkd::units::RngSeed;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 1 << 20;
    let mut rng = RngSeed(1).stream("example.bits");
    let raw: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.35)).collect();
    let cfg = PaConfig::from_fraction(n, 0.4)?;
    let key = privacy_amplify(&raw, &cfg, RngSeed(2))?;
    println!("input {} bits: monobit p = {:.3e}", raw.len(), monobit_p_value(&raw));
    println!(
        "output {} bits: monobit p = {:.3}, runs p = {:.3}",
        key.len(),
        monobit_p_value(&key),
        runs_p_value(&key)
    );
    Ok(())
}
