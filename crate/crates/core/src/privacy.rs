//! Toeplitz-hash privacy amplification and the statistical checks used on
//! its output.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure_len, Error, Result};
use crate::units::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaConfig {
    pub input_len: usize,
    pub output_len: usize,
}

impl PaConfig {
    pub fn new(input_len: usize, output_len: usize) -> Result<Self> {
        if output_len > input_len {
            return Err(Error::invalid(
                "output_len",
                format!("{output_len} exceeds input length {input_len}"),
            ));
        }
        Ok(PaConfig { input_len, output_len })
    }

    /// Output length `⌊fraction · input_len⌋`.
    pub fn from_fraction(input_len: usize, secret_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&secret_fraction) {
            return Err(Error::invalid("secret_fraction", format!("must lie in [0, 1], got {secret_fraction}")));
        }
        Self::new(input_len, (secret_fraction * input_len as f64).floor() as usize)
    }

    /// Bits of seed describing one Toeplitz matrix.
    pub fn seed_len(&self) -> usize {
        (self.input_len + self.output_len).saturating_sub(1)
    }
}

/// Output bit `i` is `⊕_j r[i − j + n − 1]·x[j]`, the `m × n` Toeplitz
/// matrix with first column `r[n−1..]` and first row `r[..n]` reversed.
pub fn toeplitz_naive(input: &[u8], seed_bits: &[u8], output_len: usize) -> Result<Vec<u8>> {
    let n = input.len();
    ensure_len("toeplitz seed", (n + output_len).saturating_sub(1), seed_bits.len())?;
    Ok((0..output_len)
        .map(|i| {
            (0..n).fold(0u8, |acc, j| acc ^ (seed_bits[i + n - 1 - j] & input[j] & 1))
        })
        .collect())
}

/// Same product as [`toeplitz_naive`], computed as a convolution with an
/// FFT and reduced mod 2. Counts stay far below 2^52, so rounding is exact.
pub fn toeplitz_fft(input: &[u8], seed_bits: &[u8], output_len: usize) -> Result<Vec<u8>> {
    let n = input.len();
    ensure_len("toeplitz seed", (n + output_len).saturating_sub(1), seed_bits.len())?;
    if output_len == 0 || n == 0 {
        return Ok(vec![0; output_len]);
    }
    let len = (n + seed_bits.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut a: Vec<Complex<f64>> = input.iter().map(|&b| Complex::new(f64::from(b & 1), 0.0)).collect();
    a.resize(len, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = seed_bits.iter().map(|&b| Complex::new(f64::from(b & 1), 0.0)).collect();
    b.resize(len, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let scale = 1.0 / len as f64;
    Ok((0..output_len)
        .map(|i| {
            let count = (a[i + n - 1].re * scale).round() as u64;
            (count & 1) as u8
        })
        .collect())
}

/// Compresses reconciled bits with a Toeplitz matrix drawn from `seed`.
pub fn privacy_amplify(bits: &[u8], cfg: &PaConfig, seed: RngSeed) -> Result<Vec<u8>> {
    ensure_len("privacy amplification input", cfg.input_len, bits.len())?;
    if cfg.output_len > cfg.input_len {
        return Err(Error::invalid("output_len", "exceeds input length"));
    }
    let mut rng = seed.stream("privacy.toeplitz");
    let seed_bits: Vec<u8> = (0..cfg.seed_len()).map(|_| rng.random_range(0..2u8)).collect();
    toeplitz_fft(bits, &seed_bits, cfg.output_len)
}

/// NIST frequency (monobit) test p-value.
pub fn monobit_p_value(bits: &[u8]) -> f64 {
    let n = bits.len() as f64;
    let s: f64 = bits.iter().map(|&b| if b & 1 == 1 { 1.0 } else { -1.0 }).sum();
    erfc(s.abs() / n.sqrt() / std::f64::consts::SQRT_2)
}

/// NIST runs test p-value; zero when the monobit prerequisite fails.
pub fn runs_p_value(bits: &[u8]) -> f64 {
    let n = bits.len() as f64;
    let pi = bits.iter().filter(|&&b| b & 1 == 1).count() as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return 0.0;
    }
    let runs = 1 + bits.windows(2).filter(|w| (w[0] ^ w[1]) & 1 == 1).count();
    let num = (runs as f64 - 2.0 * n * pi * (1.0 - pi)).abs();
    erfc(num / (2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi)))
}
