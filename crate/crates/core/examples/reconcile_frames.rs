//! Multidimensional reconciliation with a rate-adapted LDPC code at the
//! night-time operating SNR. Every frame is hash-checked.
//!
//! Usage: cargo run --release --example reconcile_frames -- [frames] [beta]

use fso_cvqkd::reconciliation::{capacity, reconcile_bench, ReconConfig};
use fso_cvqkd::units::RngSeed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(4);
    let beta: f64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0.95);
    let snr = 0.0651;
    let cfg = ReconConfig { beta_target: beta, ..ReconConfig::default() };
    let start = std::time::Instant::now();
    let (rep, outcomes) = reconcile_bench(&cfg, snr, frames, RngSeed(7))?;
    println!("capacity {:.6} bits/symbol, R_eff {:.6}, beta {:.4}", capacity(snr), rep.r_eff, rep.beta);
    for o in &outcomes {
        println!(
            "frame {:>3}: {:<8} {:>4} iterations  hash {}",
            o.frame,
            if o.success() { "ok" } else { "failed" },
            o.iterations,
            &o.bob_hash[..16]
        );
    }
    println!("FER {:.3} over {} frames of {} symbols in {:.1?}", rep.fer, rep.frames_total, rep.frame_len, start.elapsed());
    Ok(())
}
