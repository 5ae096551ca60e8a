//! Fading free-space channel: correlated transmittance traces, carrier
//! phase drift, and application of the channel to transmitted amplitudes.
//!
//! Transmittance fluctuates on the kHz scale while pulses arrive at MHz
//! rates, so consecutive pulses see strongly correlated attenuation. The
//! correlation is a first-order Gauss-Markov process in a latent standard
//! normal variable, mapped onto the configured marginal.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure_len, Error, Result};
use crate::units::{DbLoss, RngSeed, Snu};

/// Marginal distribution of the link loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FadingDistribution {
    /// Gaussian loss in dB (log-normal transmittance), clipped so that the
    /// transmittance never exceeds `max_transmittance`.
    LogNormalTruncated,
    /// Replay of a measured loss histogram, uniform within each bin.
    DiscreteEmpirical { histogram: EmpiricalHistogram },
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingConfig {
    pub distribution: FadingDistribution,
    pub mean_loss: DbLoss,
    /// Standard deviation of the loss in dB.
    pub sigma_db: f64,
    /// 3-dB bandwidth of the fading process in Hz.
    pub fading_bandwidth: f64,
    /// Rate of trace samples (pulse slots) in Hz.
    pub symbol_rate: f64,
    pub max_transmittance: f64,
    /// Input-referred excess noise added by the channel.
    #[serde(default)]
    pub excess_noise: Snu,
}

impl FadingConfig {
    pub fn constant(loss: DbLoss, symbol_rate: f64) -> Self {
        FadingConfig {
            distribution: FadingDistribution::Constant,
            mean_loss: loss,
            sigma_db: 0.0,
            fading_bandwidth: 0.0,
            symbol_rate,
            max_transmittance: 1.0,
            excess_noise: Snu::ZERO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_db >= 0.0 && self.sigma_db.is_finite()) {
            return Err(Error::invalid("sigma_db", format!("must be >= 0, got {}", self.sigma_db)));
        }
        if !(self.symbol_rate > 0.0) {
            return Err(Error::invalid("symbol_rate", format!("must be > 0, got {}", self.symbol_rate)));
        }
        if !(self.fading_bandwidth >= 0.0 && self.fading_bandwidth < self.symbol_rate) {
            return Err(Error::invalid(
                "fading_bandwidth",
                format!(
                    "must lie in [0, symbol_rate), got {} vs {}",
                    self.fading_bandwidth, self.symbol_rate
                ),
            ));
        }
        if !(self.max_transmittance > 0.0 && self.max_transmittance <= 1.0) {
            return Err(Error::invalid(
                "max_transmittance",
                format!("must lie in (0, 1], got {}", self.max_transmittance),
            ));
        }
        Ok(())
    }

    /// Lag-one correlation of the latent Gauss-Markov process.
    pub fn correlation_per_sample(&self) -> f64 {
        (-2.0 * std::f64::consts::PI * self.fading_bandwidth / self.symbol_rate).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseDriftConfig {
    /// Random-walk increment standard deviation, rad per √slot.
    pub drift_rate_std: f64,
    pub offset: f64,
}

/// Per-pulse channel state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrace {
    pub transmittance: Vec<f64>,
    pub phase: Vec<f64>,
    pub excess_noise_injected: Snu,
}

impl ChannelTrace {
    pub fn len(&self) -> usize {
        self.transmittance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transmittance.is_empty()
    }

    /// A static channel with fixed transmittance and phase.
    pub fn fixed(n: usize, transmittance: f64, phase: f64, excess_noise: Snu) -> Self {
        ChannelTrace {
            transmittance: vec![transmittance; n],
            phase: vec![phase; n],
            excess_noise_injected: excess_noise,
        }
    }
}

/// Standard normal CDF.
fn phi(u: f64) -> f64 {
    0.5 * erfc(-u / std::f64::consts::SQRT_2)
}

pub fn generate_trace(cfg: &FadingConfig, drift: &PhaseDriftConfig, n: usize, seed: RngSeed) -> Result<ChannelTrace> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("n", "trace length must be >= 1"));
    }
    if !(drift.drift_rate_std >= 0.0) {
        return Err(Error::invalid("drift_rate_std", format!("must be >= 0, got {}", drift.drift_rate_std)));
    }
    let mut rng = seed.stream("channel.fading");
    let rho = cfg.correlation_per_sample();
    let innovation = (1.0 - rho * rho).sqrt();
    let min_loss = -10.0 * cfg.max_transmittance.log10();

    let mut transmittance = Vec::with_capacity(n);
    let mut latent: f64 = rng.sample(StandardNormal);
    for k in 0..n {
        if k > 0 {
            let w: f64 = rng.sample(StandardNormal);
            latent = rho * latent + innovation * w;
        }
        let loss = match &cfg.distribution {
            FadingDistribution::Constant => cfg.mean_loss.db(),
            FadingDistribution::LogNormalTruncated => cfg.mean_loss.db() + cfg.sigma_db * latent,
            FadingDistribution::DiscreteEmpirical { histogram } => histogram.quantile(phi(latent)),
        };
        let t = 10f64.powf(-loss.max(min_loss) / 10.0);
        transmittance.push(t);
    }

    let mut rng = seed.stream("channel.phase");
    let mut phase = Vec::with_capacity(n);
    let mut walk = 0.0;
    for k in 0..n {
        if k > 0 && drift.drift_rate_std > 0.0 {
            let w: f64 = rng.sample(StandardNormal);
            walk += drift.drift_rate_std * w;
        }
        phase.push(drift.offset + walk);
    }

    Ok(ChannelTrace {
        transmittance,
        phase,
        excess_noise_injected: cfg.excess_noise,
    })
}

/// Sends amplitudes through the channel.
///
/// Each amplitude becomes `√T_k·e^{iθ_k}·α_k` plus Gaussian noise of
/// variance `T_k·ε` on each quadrature. Vacuum noise is added at detection.
pub fn apply_channel(input: &[Complex64], trace: &ChannelTrace, seed: RngSeed) -> Result<Vec<Complex64>> {
    ensure_len("channel trace", input.len(), trace.len())?;
    ensure_len("channel phase", trace.transmittance.len(), trace.phase.len())?;
    let eps = trace.excess_noise_injected.get();
    let mut rng = seed.stream("channel.noise");
    let out = input
        .iter()
        .zip(&trace.transmittance)
        .zip(&trace.phase)
        .map(|((&a, &t), &theta)| {
            let mut out = a * Complex64::from_polar(t.sqrt(), theta);
            if eps > 0.0 {
                let sd = (t * eps).sqrt();
                let nx: f64 = rng.sample(StandardNormal);
                let np: f64 = rng.sample(StandardNormal);
                out += Complex64::new(sd * nx, sd * np);
            }
            out
        })
        .collect();
    Ok(out)
}

/// Effective transmittance `⟨√T⟩²` and `Var(√T)` of a discrete mixture.
pub fn mixture_moments(transmittances: &[f64], weights: &[f64]) -> (f64, f64) {
    let wsum: f64 = weights.iter().sum();
    let m1: f64 = transmittances.iter().zip(weights).map(|(t, w)| w * t.sqrt()).sum::<f64>() / wsum;
    let m2: f64 = transmittances.iter().zip(weights).map(|(t, w)| w * t).sum::<f64>() / wsum;
    (m1 * m1, m2 - m1 * m1)
}

/// Loss histogram: bin centres in dB with their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalHistogram {
    pub centers_db: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub width_db: f64,
}

impl EmpiricalHistogram {
    pub fn new(centers_db: Vec<f64>, probabilities: Vec<f64>, width_db: Option<f64>) -> Result<Self> {
        ensure_len("histogram columns", centers_db.len(), probabilities.len())?;
        if centers_db.is_empty() {
            return Err(Error::InsufficientData("empty histogram".into()));
        }
        let mut pairs: Vec<(f64, f64)> = centers_db.into_iter().zip(probabilities).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs.iter().any(|&(_, p)| !(p >= 0.0)) {
            return Err(Error::invalid("probability", "histogram probabilities must be >= 0"));
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("probability", format!("histogram sums to {total}, expected 1")));
        }
        // Without an explicit width, bins are assumed contiguous; a single bin
        // defaults to the 0.2-dB grouping width.
        let width = width_db.unwrap_or_else(|| {
            if pairs.len() == 1 {
                0.2
            } else {
                pairs.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min)
            }
        });
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("width_db", format!("bin width must be > 0, got {width}")));
        }
        if pairs[0].0 - width / 2.0 < 0.0 {
            return Err(Error::invalid("center_db", "histogram extends below 0 dB"));
        }
        let (centers_db, probabilities) = pairs.into_iter().unzip();
        Ok(EmpiricalHistogram {
            centers_db,
            probabilities,
            width_db: width,
        })
    }

    /// Loss at cumulative probability `u`, uniform within each bin.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (&c, &p) in self.centers_db.iter().zip(&self.probabilities) {
            if p > 0.0 && u < acc + p {
                let frac = ((u - acc) / p).clamp(0.0, 1.0);
                return c - self.width_db / 2.0 + frac * self.width_db;
            }
            acc += p;
        }
        // u == 1 or rounding in the cumulative sum: top of the last occupied bin.
        let last = self
            .probabilities
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.centers_db.len() - 1);
        self.centers_db[last] + self.width_db / 2.0
    }

    /// Histogram of observed losses on bins anchored at multiples of
    /// `width_db` from 0 dB.
    pub fn from_losses(losses: &[f64], width_db: f64) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::InsufficientData("no losses to histogram".into()));
        }
        let mut counts = std::collections::BTreeMap::<i64, usize>::new();
        for &l in losses {
            *counts.entry(crate::grouping::bin_index(l, width_db)).or_default() += 1;
        }
        let n = losses.len() as f64;
        let centers = counts.keys().map(|&i| (i as f64 + 0.5) * width_db).collect();
        let probs = counts.values().map(|&c| c as f64 / n).collect();
        EmpiricalHistogram::new(centers, probs, Some(width_db))
    }

    /// Total-variation distance to another histogram, matching bins by centre.
    pub fn total_variation(&self, other: &EmpiricalHistogram) -> f64 {
        let key = |c: f64| (c / self.width_db.min(other.width_db) * 1e6).round() as i64;
        let mut map = std::collections::BTreeMap::<i64, (f64, f64)>::new();
        for (&c, &p) in self.centers_db.iter().zip(&self.probabilities) {
            map.entry(key(c)).or_default().0 += p;
        }
        for (&c, &p) in other.centers_db.iter().zip(&other.probabilities) {
            map.entry(key(c)).or_default().1 += p;
        }
        0.5 * map.values().map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// Parses the two-column text format: loss bin centre in dB and
    /// probability, separated by whitespace or commas. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut centers = Vec::new();
        let mut probs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    reason: format!("`{s}`: {e}"),
                })
            };
            match fields.as_slice() {
                // Tolerate a header row.
                [a, _] if a.parse::<f64>().is_err() && centers.is_empty() => {}
                [c, p] => {
                    let (c, p) = (parse(c)?, parse(p)?);
                    centers.push(c);
                    probs.push(p);
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        reason: format!("expected two columns, got {}", fields.len()),
                    })
                }
            }
        }
        EmpiricalHistogram::new(centers, probs, None)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# loss_db_center probability\n");
        for (c, p) in self.centers_db.iter().zip(&self.probabilities) {
            let _ = writeln!(s, "{c} {p}");
        }
        s
    }
}
