//! Asymptotic secret-key-rate engine for Gaussian-modulated coherent states
//! with homodyne detection and reverse reconciliation.
//!
//! Eve's information is the collective-attack Holevo bound with a trusted
//! detector: the detection efficiency `eta` and electronic noise `nu_el`
//! are device constants not attributed to the eavesdropper. Excess noise is
//! referred to the channel input and every variance is in shot-noise units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DISCRIMINANT_TOL: f64 = 1e-12;
const EIGENVALUE_TOL: f64 = 1e-9;

/// Operating point of one parameter-estimation block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateInputs {
    /// Quantum symbol rate in Hz.
    pub f: f64,
    /// Overhead for frame synchronization and parameter estimation.
    pub alpha_overhead: f64,
    /// Reconciliation efficiency.
    pub beta: f64,
    /// Frame error rate of the reconciliation.
    pub fer: f64,
    pub v_a: f64,
    /// Linear channel transmittance, excluding the detector.
    pub t: f64,
    /// Input-referred excess noise.
    pub eps: f64,
    pub eta: f64,
    pub nu_el: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub snr: f64,
    /// Alice-Bob mutual information, bits per symbol.
    pub i_ab: f64,
    /// Holevo bound on Eve's information, bits per symbol.
    pub chi_be: f64,
    /// Secret key rate, bits per second. Zero when no key can be distilled.
    pub r_secret: f64,
    pub positive: bool,
}

impl RateResult {
    /// `beta * I_AB - chi_BE`, which may be negative.
    pub fn margin(&self, beta: f64) -> f64 {
        beta * self.i_ab - self.chi_be
    }
}

/// One summand of the fading-channel total rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    /// Probability of the group within the whole raw key set.
    pub probability: f64,
    /// Secure-key-generation proportion of the group's raw data.
    pub alpha_g: f64,
    pub rate: RateResult,
}

impl RateInputs {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &'static str, v: f64| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("out of range: {v}")))
            }
        };
        check(self.f.is_finite() && self.f >= 0.0, "f", self.f)?;
        check((0.0..1.0).contains(&self.alpha_overhead), "alpha_overhead", self.alpha_overhead)?;
        check(self.beta > 0.0 && self.beta <= 1.0, "beta", self.beta)?;
        check((0.0..=1.0).contains(&self.fer), "fer", self.fer)?;
        check(self.v_a.is_finite() && self.v_a >= 0.0, "v_a", self.v_a)?;
        check(self.t > 0.0 && self.t <= 1.0, "t", self.t)?;
        check(self.eps.is_finite() && self.eps >= 0.0, "eps", self.eps)?;
        check(self.eta > 0.0 && self.eta <= 1.0, "eta", self.eta)?;
        check(self.nu_el.is_finite() && self.nu_el >= 0.0, "nu_el", self.nu_el)?;
        Ok(())
    }
}

/// Signal-to-noise ratio at Bob's detector: `ηT·V_A / (1 + ν_el + ηT·ε)`.
pub fn snr(inputs: &RateInputs) -> f64 {
    let gain = inputs.eta * inputs.t;
    gain * inputs.v_a / (1.0 + inputs.nu_el + gain * inputs.eps)
}

/// Shannon capacity of the homodyne Gaussian channel, bits per symbol.
pub fn mutual_information(snr: f64) -> f64 {
    0.5 * (1.0 + snr).log2()
}

/// Entropy function of a thermal mode with mean photon number `x`.
///
/// `G(x) = (x+1) log2(x+1) - x log2(x)`, with `G(0) = 0`.
pub fn thermal_entropy(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (x + 1.0) * (x + 1.0).log2() - x * x.log2()
}

/// Symplectic eigenvalues entering the Holevo bound.
///
/// `[λ1, λ2]` belong to the Alice-Bob state before detection (largest
/// first), `[λ3, λ4]` to Alice's state conditioned on Bob's homodyne
/// outcome, including the trusted detector modes. The fifth eigenvalue of
/// the conditional state is identically 1 and contributes nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymplecticSpectrum {
    pub joint: [f64; 2],
    pub conditional: [f64; 2],
}

pub fn symplectic_spectrum(inputs: &RateInputs) -> Result<SymplecticSpectrum> {
    inputs.validate()?;
    let t = inputs.t;
    let v = inputs.v_a + 1.0;
    let chi_line = (1.0 - t) / t + inputs.eps;
    let chi_hom = (1.0 + inputs.nu_el) / inputs.eta - 1.0;
    let chi_tot = chi_line + chi_hom / t;

    let a = v * v * (1.0 - 2.0 * t) + 2.0 * t + t * t * (v + chi_line).powi(2);
    let b = t * t * (v * chi_line + 1.0).powi(2);
    let joint = quadratic_pair(a, b, "joint")?;

    let sqrt_b = b.sqrt();
    let denom = t * (v + chi_tot);
    let c = (a * chi_hom + v * sqrt_b + t * (v + chi_line)) / denom;
    let d = sqrt_b * (v + sqrt_b * chi_hom) / denom;
    let conditional = quadratic_pair(c, d, "conditional")?;

    Ok(SymplecticSpectrum { joint, conditional })
}

/// Roots `λ` of `λ⁴ - sum·λ² + product = 0`, returned as `[λ+, λ-]`.
fn quadratic_pair(sum: f64, product: f64, which: &str) -> Result<[f64; 2]> {
    let mut disc = sum * sum - 4.0 * product;
    let scale = (sum * sum).max(1.0);
    if disc < -DISCRIMINANT_TOL * scale {
        return Err(Error::Unphysical(format!(
            "{which} symplectic discriminant is negative ({disc:e})"
        )));
    }
    // A double root is only known to rounding; its square root would
    // amplify that to ~1e-8 in the eigenvalues.
    if disc <= DISCRIMINANT_TOL * scale {
        disc = 0.0;
    }
    let hi_sq = 0.5 * (sum + disc.sqrt());
    // Product form of the smaller root avoids cancellation when sum² ≫ 4·product.
    let lo_sq = if hi_sq > 0.0 { product / hi_sq } else { 0.0 };
    let hi = hi_sq.sqrt();
    let lo = lo_sq.sqrt();
    if lo < 1.0 - EIGENVALUE_TOL || hi < 1.0 - EIGENVALUE_TOL {
        return Err(Error::Unphysical(format!(
            "{which} symplectic eigenvalue below 1: ({hi}, {lo})"
        )));
    }
    Ok([hi.max(1.0), lo.max(1.0)])
}

/// Holevo bound on Eve's information for reverse reconciliation, bits per
/// symbol.
pub fn holevo_bound(inputs: &RateInputs) -> Result<f64> {
    let eig = symplectic_spectrum(inputs)?;
    let g = |l: f64| thermal_entropy((l - 1.0) / 2.0);
    let chi = g(eig.joint[0]) + g(eig.joint[1]) - g(eig.conditional[0]) - g(eig.conditional[1]);
    Ok(chi.max(0.0))
}

/// Per-block secret key rate `f(1-α)(1-FER)·max(0, β·I_AB - χ_BE)`.
pub fn secret_rate(inputs: &RateInputs) -> Result<RateResult> {
    let snr = snr(inputs);
    let i_ab = mutual_information(snr);
    let chi_be = holevo_bound(inputs)?;
    let margin = inputs.beta * i_ab - chi_be;
    let positive = margin > 0.0;
    let r_secret = if positive {
        inputs.f * (1.0 - inputs.alpha_overhead) * (1.0 - inputs.fer) * margin
    } else {
        0.0
    };
    Ok(RateResult {
        snr,
        i_ab,
        chi_be,
        r_secret,
        positive,
    })
}

/// Total rate over transmittance groups: `Σ P_i · α_G,i · R_i`.
pub fn total_rate(groups: &[GroupRate]) -> Result<f64> {
    let p_sum: f64 = groups.iter().map(|g| g.probability).sum();
    if p_sum > 1.0 + 1e-9 {
        return Err(Error::invalid("probability", format!("group probabilities sum to {p_sum} > 1")));
    }
    for g in groups {
        if !(0.0..=1.0).contains(&g.probability) {
            return Err(Error::invalid("probability", format!("{} outside [0, 1]", g.probability)));
        }
        if !(0.0..=1.0).contains(&g.alpha_g) {
            return Err(Error::invalid("alpha_g", format!("{} outside [0, 1]", g.alpha_g)));
        }
    }
    Ok(groups
        .iter()
        .map(|g| g.probability * g.alpha_g * g.rate.r_secret)
        .sum())
}

/// Operating point as written in configuration files, with the channel
/// given either as a loss in dB or as a linear transmittance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatePoint {
    pub f: f64,
    pub alpha_overhead: f64,
    pub beta: f64,
    pub fer: f64,
    pub v_a: f64,
    #[serde(default)]
    pub loss_db: Option<f64>,
    #[serde(default)]
    pub t: Option<f64>,
    pub eps: f64,
    pub eta: f64,
    pub nu_el: f64,
}

impl RatePoint {
    pub fn inputs(&self) -> Result<RateInputs> {
        let t = match (self.loss_db, self.t) {
            (Some(l), None) => crate::units::db_to_transmittance(crate::units::DbLoss::new(l)?),
            (None, Some(t)) => t,
            _ => return Err(Error::invalid("t", "give exactly one of `loss_db` and `t`")),
        };
        let inputs = RateInputs {
            f: self.f,
            alpha_overhead: self.alpha_overhead,
            beta: self.beta,
            fer: self.fer,
            v_a: self.v_a,
            t,
            eps: self.eps,
            eta: self.eta,
            nu_el: self.nu_el,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}
