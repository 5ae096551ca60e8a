//! Multidimensional reconciliation over the normed division algebras
//! (reals, complex numbers, quaternions, octonions).
//!
//! Bob holds a Gaussian vector `y` and a random sign vector `u`. He publishes
//! `α = u · conj(y/‖y‖)`, and left multiplication by `α` is an orthogonal
//! map sending his normalised vector onto `u`. Alice applies the same map to
//! her correlated vector and sees `u` through a binary-input noisy channel.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

pub const MAX_DIMENSION: usize = 8;

fn check_dimension(d: usize) -> Result<()> {
    if matches!(d, 1 | 2 | 4 | 8) {
        Ok(())
    } else {
        Err(Error::invalid("dimension", format!("must be 1, 2, 4 or 8, got {d}")))
    }
}

/// Cayley-Dickson conjugate.
pub fn conj(a: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = a.iter().map(|v| -v).collect();
    out[0] = a[0];
    out
}

/// Cayley-Dickson product `(a, b)(c, d) = (ac − d̄b, da + bc̄)`.
pub fn mul(x: &[f64], y: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert!(n == y.len() && n == out.len());
    if n == 1 {
        out[0] = x[0] * y[0];
        return;
    }
    let h = n / 2;
    let (a, b) = x.split_at(h);
    let (c, d) = y.split_at(h);
    let mut t1 = [0.0; MAX_DIMENSION];
    let mut t2 = [0.0; MAX_DIMENSION];
    mul(a, c, &mut t1[..h]);
    mul(&conj(d), b, &mut t2[..h]);
    for i in 0..h {
        out[i] = t1[i] - t2[i];
    }
    mul(d, a, &mut t1[..h]);
    mul(b, &conj(c), &mut t2[..h]);
    for i in 0..h {
        out[h + i] = t1[i] + t2[i];
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Splits `m` symbols into MDR blocks: as many blocks of `d` as fit, then
/// the remainder as a sum of smaller powers of two, largest first.
pub fn chunk_dims(m: usize, d: usize) -> Result<Vec<usize>> {
    check_dimension(d)?;
    let mut dims = vec![d; m / d];
    let mut rest = m % d;
    let mut p = d / 2;
    while rest > 0 {
        if rest >= p {
            dims.push(p);
            rest -= p;
        }
        p /= 2;
    }
    Ok(dims)
}

/// Sign vector of unit norm: bit 0 maps to `+1/√d`, bit 1 to `−1/√d`.
pub fn sign_vector(bits: &[u8]) -> Vec<f64> {
    let a = 1.0 / (bits.len() as f64).sqrt();
    bits.iter().map(|&b| if b & 1 == 0 { a } else { -a }).collect()
}

/// Bob's rotation message for one block.
pub fn mdr_encode(y: &[f64], bits: &[u8]) -> Result<Vec<f64>> {
    check_dimension(y.len())?;
    ensure_len("sign bits", y.len(), bits.len())?;
    let ny = norm(y);
    if !(ny > 0.0) {
        return Err(Error::invalid("y", "zero-norm vector"));
    }
    let y_unit: Vec<f64> = y.iter().map(|v| v / ny).collect();
    let u = sign_vector(bits);
    let mut alpha = vec![0.0; y.len()];
    mul(&u, &conj(&y_unit), &mut alpha);
    Ok(alpha)
}

/// Applies the orthogonal map defined by `alpha` to `v`.
pub fn mdr_apply(alpha: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dimension(alpha.len())?;
    ensure_len("mdr vector", alpha.len(), v.len())?;
    let mut out = vec![0.0; v.len()];
    mul(alpha, v, &mut out);
    Ok(out)
}

/// The public side information for one reconciliation frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdrFrame {
    pub dims: Vec<usize>,
    /// Concatenated rotation messages, one per block.
    pub messages: Vec<f64>,
    /// Bob's per-block norms. These are independent of the sign bits.
    pub norms: Vec<f64>,
}

impl MdrFrame {
    /// Bob's side: maps measurements `y` and raw key bits to public data.
    pub fn encode(y: &[f64], bits: &[u8], d: usize) -> Result<Self> {
        ensure_len("raw key bits", y.len(), bits.len())?;
        let dims = chunk_dims(y.len(), d)?;
        let mut messages = Vec::with_capacity(y.len());
        let mut norms = Vec::with_capacity(dims.len());
        let mut at = 0;
        for &k in &dims {
            let blk = &y[at..at + k];
            messages.extend(mdr_encode(blk, &bits[at..at + k])?);
            norms.push(norm(blk));
            at += k;
        }
        Ok(MdrFrame { dims, messages, norms })
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Alice's side: bit LLRs (positive favours bit 0) from her data `x`
    /// given the link gain `g = √(ηT)` and Bob's total noise `n_b` in SNU,
    /// for the model `y = g·x + z`, `Var(z) = n_b`.
    pub fn llrs(&self, x: &[f64], gain: f64, noise: f64) -> Result<Vec<f64>> {
        ensure_len("reference symbols", self.len(), x.len())?;
        let mut out = Vec::with_capacity(x.len());
        let mut at = 0;
        for (&k, &ny) in self.dims.iter().zip(&self.norms) {
            let t = mdr_apply(&self.messages[at..at + k], &x[at..at + k])?;
            let scale = 2.0 * gain * ny / ((k as f64).sqrt() * noise);
            out.extend(t.iter().map(|v| scale * v));
            at += k;
        }
        Ok(out)
    }
}

/// Mutual information of a binary-input channel estimated from true
/// posterior LLRs: `1 − E[log2(1 + e^{−L·s})]` with `s = ±1` the sent sign.
pub fn binary_capacity(llrs: &[f64], bits: &[u8]) -> f64 {
    let total: f64 = llrs
        .iter()
        .zip(bits)
        .map(|(&l, &b)| {
            let z = if b & 1 == 0 { l } else { -l };
            // log2(1 + e^{-z}) without overflow.
            if z > 0.0 {
                (-z).exp().ln_1p()
            } else {
                -z + z.exp().ln_1p()
            }
        })
        .sum();
    1.0 - total / (llrs.len() as f64 * std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::RngSeed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn products_are_composition_algebras() {
        let mut rng = RngSeed(1).stream("mdr");
        for d in [1, 2, 4, 8] {
            for _ in 0..100 {
                let a = gauss(&mut rng, d);
                let b = gauss(&mut rng, d);
                let mut ab = vec![0.0; d];
                mul(&a, &b, &mut ab);
                assert!((norm(&ab) - norm(&a) * norm(&b)).abs() < 1e-12 * norm(&a) * norm(&b));
                // (a b̄) b = a |b|²
                let mut t = vec![0.0; d];
                mul(&a, &conj(&b), &mut t);
                let mut back = vec![0.0; d];
                mul(&t, &b, &mut back);
                let nb2 = norm(&b).powi(2);
                for i in 0..d {
                    assert!((back[i] - a[i] * nb2).abs() < 1e-12 * (1.0 + nb2 * norm(&a)));
                }
            }
        }
    }

    #[test]
    fn noiseless_maps_to_codeword() {
        let mut rng = RngSeed(2).stream("mdr");
        for d in [1, 2, 4, 8] {
            let y = gauss(&mut rng, d);
            let bits: Vec<u8> = (0..d).map(|_| rng.random_range(0..2)).collect();
            let alpha = mdr_encode(&y, &bits).unwrap();
            let ny = norm(&y);
            let yu: Vec<f64> = y.iter().map(|v| v / ny).collect();
            let v = mdr_apply(&alpha, &yu).unwrap();
            let u = sign_vector(&bits);
            for i in 0..d {
                assert!((v[i] - u[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_case_is_sign_multiplication() {
        for (y, b) in [(0.7, 0u8), (-2.0, 0), (0.3, 1), (-1.0, 1)] {
            let alpha = mdr_encode(&[y], &[b]).unwrap();
            let expected = if b == 0 { 1.0 } else { -1.0 } * y.signum();
            assert_eq!(alpha, vec![expected]);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(mdr_encode(&[0.0; 8], &[0; 8]).is_err());
        assert!(mdr_encode(&[1.0; 3], &[0; 3]).is_err());
        assert!(mdr_encode(&[1.0; 4], &[0; 2]).is_err());
    }

    #[test]
    fn remainder_chunks() {
        assert_eq!(chunk_dims(16, 8).unwrap(), vec![8, 8]);
        assert_eq!(chunk_dims(23, 8).unwrap(), vec![8, 8, 4, 2, 1]);
        assert_eq!(chunk_dims(5, 4).unwrap(), vec![4, 1]);
        assert!(chunk_dims(5, 3).is_err());
    }

    proptest! {
        #[test]
        fn map_preserves_norm(seed in 0u64..10_000, di in 0usize..4) {
            let d = [1, 2, 4, 8][di];
            let mut rng = RngSeed(seed).stream("mdr.prop");
            let y = gauss(&mut rng, d);
            let v = gauss(&mut rng, d);
            let bits: Vec<u8> = (0..d).map(|_| rng.random_range(0..2)).collect();
            let alpha = mdr_encode(&y, &bits).unwrap();
            let out = mdr_apply(&alpha, &v).unwrap();
            prop_assert!((norm(&out) - norm(&v)).abs() < 1e-12 * norm(&v).max(1.0));
        }
    }

    /// Gaussian pairs `y = g·x + z` with `V_A = 1`, noise 1, SNR `g²`.
    fn virtual_channel(snr: f64, frames: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let d = 8;
        let g = snr.sqrt();
        let mut rng = RngSeed(seed).stream("mdr.vc");
        let n = frames * d;
        let x = gauss(&mut rng, n);
        let y: Vec<f64> = x.iter().map(|&xi| g * xi + rng.sample::<f64, _>(StandardNormal)).collect();
        let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let frame = MdrFrame::encode(&y, &bits, d).unwrap();
        (frame.llrs(&x, g, 1.0).unwrap(), bits)
    }

    #[test]
    fn virtual_channel_capacity_matches_gaussian() {
        let snr = 0.05;
        let (llr, bits) = virtual_channel(snr, 100_000, 3);
        let c = binary_capacity(&llr, &bits);
        let gauss_c = 0.5 * (1.0 + snr).log2();
        assert!((c / gauss_c - 1.0).abs() < 0.02, "{c} vs {gauss_c}");
    }

    #[test]
    fn message_is_independent_of_bits() {
        // Correlation between each message coordinate and each sign bit
        // should vanish.
        let d = 8;
        let mut rng = RngSeed(4).stream("mdr.leak");
        let n = 50_000;
        let mut sums = [[0.0f64; 8]; 8];
        for _ in 0..n {
            let y = gauss(&mut rng, d);
            let bits: Vec<u8> = (0..d).map(|_| rng.random_range(0..2)).collect();
            let alpha = mdr_encode(&y, &bits).unwrap();
            let u = sign_vector(&bits);
            for i in 0..d {
                for j in 0..d {
                    sums[i][j] += alpha[i] * u[j];
                }
            }
        }
        // Each product has variance ≤ 1/64; 5σ over n samples.
        let bound = 5.0 * (1.0 / 64.0 / n as f64).sqrt();
        for row in &sums {
            for &s in row {
                assert!((s / n as f64).abs() < bound);
            }
        }
    }
}
