//! One-way reverse reconciliation of whole frames: MDR mapping, syndrome
//! transfer, decoding on Alice's side and a hash comparison.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ldpc::{adapt_rate, capacity, DecoderConfig, LdpcCode, MetParams, Position, KNOWN_LLR};
use super::mdr::MdrFrame;
use crate::error::{ensure_len, Error, Result};
use crate::units::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub beta_target: f64,
    pub mdr_dimension: usize,
    pub code: MetParams,
    pub decoder: DecoderConfig,
    pub code_seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            beta_target: 0.95,
            mdr_dimension: 8,
            code: MetParams::low_rate(16_384),
            decoder: DecoderConfig::default(),
            code_seed: 1,
        }
    }
}

impl ReconConfig {
    /// Mother code followed by rate adaptation for `snr`.
    pub fn build_code(&self, snr: f64) -> Result<LdpcCode> {
        let mother = LdpcCode::met(&self.code, self.decoder, RngSeed(self.code_seed))?;
        adapt_rate(&mother, snr, self.beta_target)
    }
}

/// What a single frame produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub frame: usize,
    pub converged: bool,
    /// Decoder converged to a word with the right syndrome but the hashes
    /// differ.
    pub undetected_error: bool,
    pub iterations: usize,
    pub bob_hash: String,
    pub alice_hash: String,
    /// Reconciled bits (Bob's word without shortened positions), present
    /// only on success.
    pub key: Option<Vec<u8>>,
}

impl FrameOutcome {
    pub fn success(&self) -> bool {
        self.converged && !self.undetected_error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub snr: f64,
    pub r_eff: f64,
    pub beta: f64,
    pub fer: f64,
    pub frames_total: usize,
    pub frames_failed: usize,
    pub undetected_errors: usize,
    pub frame_len: usize,
    pub mean_iterations: f64,
}

pub fn hash_bits(bits: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bits);
    hex::encode(h.finalize())
}

/// Reconciles one frame. `x` is Alice's reference and `y` Bob's
/// measurement, both in SNU with `y = gain·x + z`, `Var(z) = noise`.
pub fn reconcile_frame(
    code: &LdpcCode,
    positions: &[Position],
    x: &[f64],
    y: &[f64],
    gain: f64,
    noise: f64,
    mdr_dimension: usize,
    seed: RngSeed,
) -> Result<FrameOutcome> {
    let m = code.frame_len();
    ensure_len("frame reference", m, x.len())?;
    ensure_len("frame measurement", m, y.len())?;
    let mut rng = seed.stream("recon.bob");
    // Bob's word: random bits everywhere. Measured positions carry the MDR
    // sign bits, shortened ones are disclosed, punctured ones stay private.
    let word: Vec<u8> = (0..code.n()).map(|_| rng.random_range(0..2u8)).collect();
    let tx: Vec<usize> = (0..code.n()).filter(|&i| positions[i] == Position::Transmitted).collect();
    let sign_bits: Vec<u8> = tx.iter().map(|&i| word[i]).collect();
    let mdr = MdrFrame::encode(y, &sign_bits, mdr_dimension)?;
    let syndrome = code.h.syndrome(&word);

    // Alice.
    let channel_llr = mdr.llrs(x, gain, noise)?;
    let mut llr = vec![0.0; code.n()];
    for (&i, &l) in tx.iter().zip(&channel_llr) {
        llr[i] = l;
    }
    for (i, p) in positions.iter().enumerate() {
        if *p == Position::Shortened {
            llr[i] = if word[i] == 0 { KNOWN_LLR } else { -KNOWN_LLR };
        }
    }
    let out = code.decode(&llr, &syndrome)?;
    let keep = |bits: &[u8]| -> Vec<u8> {
        bits.iter()
            .zip(positions)
            .filter(|(_, p)| **p != Position::Shortened)
            .map(|(b, _)| *b)
            .collect()
    };
    let bob_key = keep(&word);
    let alice_key = keep(&out.bits);
    let bob_hash = hash_bits(&bob_key);
    let alice_hash = hash_bits(&alice_key);
    let undetected_error = out.converged && bob_hash != alice_hash;
    let success = out.converged && !undetected_error;
    Ok(FrameOutcome {
        frame: 0,
        converged: out.converged,
        undetected_error,
        iterations: out.iterations,
        bob_hash,
        alice_hash,
        key: success.then_some(bob_key),
    })
}

/// Splits paired data into as many full frames as fit and reconciles them
/// in parallel. Leftover symbols are not used.
pub fn reconcile(
    code: &LdpcCode,
    x: &[f64],
    y: &[f64],
    gain: f64,
    noise: f64,
    snr: f64,
    mdr_dimension: usize,
    seed: RngSeed,
) -> Result<(ReconReport, Vec<FrameOutcome>)> {
    ensure_len("paired data", x.len(), y.len())?;
    let m = code.frame_len();
    let frames = x.len() / m;
    if frames == 0 {
        return Err(Error::InsufficientData(format!("{} symbols do not fill a {m}-symbol frame", x.len())));
    }
    let positions = code.positions();
    let outcomes: Vec<FrameOutcome> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let r = f * m..(f + 1) * m;
            let mut out = reconcile_frame(
                code,
                &positions,
                &x[r.clone()],
                &y[r],
                gain,
                noise,
                mdr_dimension,
                RngSeed(seed.0).derive(&format!("frame{f}")),
            )?;
            out.frame = f;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let failed = outcomes.iter().filter(|o| !o.success()).count();
    let report = ReconReport {
        snr,
        r_eff: code.effective_rate(),
        beta: code.effective_rate() / capacity(snr),
        fer: failed as f64 / frames as f64,
        frames_total: frames,
        frames_failed: failed,
        undetected_errors: outcomes.iter().filter(|o| o.undetected_error).count(),
        frame_len: m,
        mean_iterations: outcomes.iter().map(|o| o.iterations as f64).sum::<f64>() / frames as f64,
    };
    Ok((report, outcomes))
}

/// Synthetic Gaussian pairs at the given SNR (`V_A = 1`, unit noise).
pub fn gaussian_pairs(snr: f64, n: usize, seed: RngSeed) -> (Vec<f64>, Vec<f64>) {
    let g = snr.sqrt();
    let mut rng = seed.stream("recon.pairs");
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        x.push(a);
        y.push(g * a + z);
    }
    (x, y)
}

/// FER/β measurement on synthetic data.
pub fn reconcile_bench(cfg: &ReconConfig, snr: f64, frames: usize, seed: RngSeed) -> Result<(ReconReport, Vec<FrameOutcome>)> {
    let code = cfg.build_code(snr)?;
    let (x, y) = gaussian_pairs(snr, frames * code.frame_len(), seed);
    reconcile(&code, &x, &y, snr.sqrt(), 1.0, snr, cfg.mdr_dimension, seed)
}

/// Settings for a batch of synthetic-data reconciliation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub snrs: Vec<f64>,
    pub frames: usize,
    pub recon: ReconConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            snrs: vec![0.0651],
            frames: 20,
            recon: ReconConfig::default(),
        }
    }
}

pub fn write_recon_reports<W: Write>(out: W, reports: &[ReconReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["snr", "r_eff", "beta", "fer", "frames", "frames_failed", "undetected_errors", "frame_len", "mean_iterations"])?;
    for r in reports {
        w.write_record([
            r.snr.to_string(),
            r.r_eff.to_string(),
            r.beta.to_string(),
            r.fer.to_string(),
            r.frames_total.to_string(),
            r.frames_failed.to_string(),
            r.undetected_errors.to_string(),
            r.frame_len.to_string(),
            r.mean_iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconciliation::ldpc::DecoderKind;

    fn small_cfg(beta: f64, kind: DecoderKind) -> ReconConfig {
        ReconConfig {
            beta_target: beta,
            code: MetParams::low_rate(8_000),
            decoder: DecoderConfig { kind, max_iterations: 200, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_frames_reconcile() {
        // At very high SNR a low-rate code always decodes.
        let cfg = small_cfg(0.95, DecoderKind::NormalizedMinSum);
        let mother = LdpcCode::met(&cfg.code, cfg.decoder, RngSeed(1)).unwrap();
        let code = mother.with_rate(0.03).unwrap();
        let (x, y) = gaussian_pairs(10.0, code.frame_len() * 3, RngSeed(2));
        let (rep, outs) = reconcile(&code, &x, &y, 10f64.sqrt(), 1.0, 10.0, 8, RngSeed(3)).unwrap();
        assert_eq!(rep.frames_failed, 0);
        for o in &outs {
            assert!(o.success());
            assert_eq!(o.alice_hash, o.bob_hash);
            assert_eq!(o.key.as_ref().unwrap().len(), code.n() - code.shortened);
        }
    }

    #[test]
    fn failed_frames_are_counted_and_hashes_checked() {
        let cfg = small_cfg(0.95, DecoderKind::SumProduct);
        let (rep, outs) = reconcile_bench(&cfg, 0.0651, 4, RngSeed(4)).unwrap();
        assert_eq!(rep.frames_total, 4);
        assert_eq!(rep.fer, rep.frames_failed as f64 / 4.0);
        assert_eq!(rep.beta, rep.r_eff / capacity(0.0651));
        for o in &outs {
            if o.success() {
                assert_eq!(o.alice_hash, o.bob_hash);
            } else {
                assert!(o.key.is_none());
            }
        }
    }

    #[test]
    fn moderate_efficiency_decodes() {
        // Well below capacity the small code succeeds on most frames.
        let cfg = small_cfg(0.95, DecoderKind::SumProduct);
        let mother = LdpcCode::met(&cfg.code, cfg.decoder, RngSeed(1)).unwrap();
        let snr = 0.0651;
        let code = mother.with_rate(0.7 * capacity(snr)).unwrap();
        let (x, y) = gaussian_pairs(snr, code.frame_len() * 10, RngSeed(5));
        let (rep, _) = reconcile(&code, &x, &y, snr.sqrt(), 1.0, snr, 8, RngSeed(6)).unwrap();
        assert!(rep.fer <= 0.3, "{rep:?}");
        assert_eq!(rep.undetected_errors, 0);
    }

    #[test]
    fn too_little_data_is_an_error() {
        let cfg = small_cfg(0.95, DecoderKind::NormalizedMinSum);
        let code = cfg.build_code(0.0651).unwrap();
        let (x, y) = gaussian_pairs(0.0651, 10, RngSeed(7));
        assert!(reconcile(&code, &x, &y, 0.25, 1.0, 0.0651, 8, RngSeed(8)).is_err());
    }

    #[test]
    fn report_csv() {
        let rep = ReconReport {
            snr: 0.0651,
            r_eff: 0.0432,
            beta: 0.95,
            fer: 0.5,
            frames_total: 2,
            frames_failed: 1,
            undetected_errors: 0,
            frame_len: 100,
            mean_iterations: 3.0,
        };
        let mut buf = Vec::new();
        write_recon_reports(&mut buf, &[rep]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("snr,r_eff,beta,fer,frames"));
    }
}
