//! Receiver-side signal recovery: pilot-aided phase estimation and
//! compensation, per-pulse transmittance monitoring from the LO tap, and
//! real-time shot-noise calibration.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{correlation, mean, variance};
use crate::transceiver::{wrap, Basis, MeasurementRecord, SiftedPair, SlotLayout, PILOTS_PER_BLOCK};

/// Carrier phase estimates, one per slot block.
///
/// Every quantum symbol takes the estimate of the pilot pair that opens its
/// block and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    /// `None` where a pilot was clipped or missing.
    pub block_estimates: Vec<Option<f64>>,
    /// Received pilot energy over twice the per-quadrature noise variance.
    pub pilot_snr: f64,
    /// Estimated random-walk increment variance per slot.
    pub drift_variance_per_slot: f64,
    pub layout: SlotLayout,
}

impl PhaseEstimate {
    pub fn theta_hat(&self, slot: usize) -> Option<f64> {
        self.block_estimates.get(self.layout.block_of(slot)).copied().flatten()
    }

    /// Variance of a single pilot-pair estimate, `1 / (2·pilot_snr)`.
    pub fn estimation_variance(&self) -> f64 {
        1.0 / (2.0 * self.pilot_snr)
    }

    /// Expected residual phase variance on quantum slots: estimation noise
    /// plus drift accumulated between the pilot pair and the symbol.
    pub fn residual_variance(&self) -> f64 {
        let q = self.layout.quantum_per_block;
        // Pilot-pair estimate sits at slot 0.5 of its block.
        let mean_lag: f64 = (0..q).map(|i| (PILOTS_PER_BLOCK + i) as f64 - 0.5).sum::<f64>() / q as f64;
        self.estimation_variance() + self.drift_variance_per_slot * mean_lag
    }
}

/// Complex phasor of the pilot pair opening `block`, in raw units, or
/// `None` if either pilot is clipped.
fn pilot_phasor(record: &MeasurementRecord, layout: &SlotLayout, block: usize) -> Option<Complex64> {
    let k = block * layout.block_len();
    if k + 1 >= record.len() || !record.pilot_mask[k] || !record.pilot_mask[k + 1] {
        return None;
    }
    if record.clipped[k] || record.clipped[k + 1] {
        return None;
    }
    debug_assert_eq!(record.basis[k], Basis::X);
    debug_assert_eq!(record.basis[k + 1], Basis::P);
    Some(Complex64::new(record.y[k], record.y[k + 1]))
}

/// Estimates the carrier phase of every block from its two pilots.
///
/// The first pilot is measured in X and the second in P, so together they
/// form the phasor `g·e^{i(φ+θ)}`; subtracting the known QPSK phase `φ`
/// gives `θ`.
pub fn estimate_phase(record: &MeasurementRecord, layout: &SlotLayout, pilot_phases: &[f64]) -> Result<PhaseEstimate> {
    if pilot_phases.is_empty() {
        return Err(Error::invalid("pilot_phases", "empty"));
    }
    let n_blocks = record.len() / layout.block_len();
    if n_blocks == 0 {
        return Err(Error::InsufficientData("record shorter than one slot block".into()));
    }
    let derotated: Vec<Option<Complex64>> = (0..n_blocks)
        .map(|b| {
            pilot_phasor(record, layout, b)
                .map(|z| z * Complex64::from_polar(1.0, -pilot_phases[b % pilot_phases.len()]))
        })
        .collect();
    let block_estimates: Vec<Option<f64>> = derotated.iter().map(|z| z.map(|z| z.arg())).collect();

    // Noise from differences of neighbouring phasors: each component of the
    // difference carries twice the measurement variance.
    let mut diff_power = Vec::new();
    let mut power = Vec::new();
    let mut dtheta = Vec::new();
    for w in derotated.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            diff_power.push((b.norm() - a.norm()).powi(2));
            dtheta.push(wrap(b.arg() - a.arg()));
        }
    }
    for z in derotated.iter().flatten() {
        power.push(z.norm_sqr());
    }
    if power.len() < 2 || diff_power.is_empty() {
        return Err(Error::InsufficientData("fewer than two valid pilot pairs".into()));
    }
    // The radial component of a phasor difference carries 2σ² of noise.
    let sigma2 = mean(&diff_power) / 2.0;
    let signal = (mean(&power) - 2.0 * sigma2).max(f64::MIN_POSITIVE);
    let pilot_snr = signal / (2.0 * sigma2.max(f64::MIN_POSITIVE));
    let est_var = 1.0 / (2.0 * pilot_snr);
    let drift_variance_per_slot = ((variance(&dtheta) - 2.0 * est_var) / layout.block_len() as f64).max(0.0);

    Ok(PhaseEstimate {
        block_estimates,
        pilot_snr,
        drift_variance_per_slot,
        layout: *layout,
    })
}

/// Rotates Alice's reference by the estimated phase, which is equivalent to
/// rotating Bob's measurement frame by `-θ̂`. Pairs without an estimate are
/// dropped.
pub fn compensate(pairs: &[SiftedPair], est: &PhaseEstimate) -> Vec<SiftedPair> {
    pairs
        .iter()
        .filter_map(|p| {
            let theta = est.theta_hat(p.slot)?;
            let rotated = Complex64::new(p.x_a, p.p_a) * Complex64::from_polar(1.0, theta);
            Some(SiftedPair {
                reference: p.basis.project(rotated),
                ..*p
            })
        })
        .collect()
}

/// Per-pulse transmittance from the LO tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmittanceMonitor {
    /// Estimated transmittance; `NaN` where the pulse is invalid.
    pub t_hat: Vec<f64>,
    pub valid: Vec<bool>,
    pub calibration_gain: f64,
}

impl TransmittanceMonitor {
    pub fn loss_db(&self, slot: usize) -> Option<f64> {
        self.valid[slot].then(|| -10.0 * self.t_hat[slot].log10())
    }
}

pub fn monitor_transmittance(lo_tap_peaks: &[f64], calibration_gain: f64) -> Result<TransmittanceMonitor> {
    if !(calibration_gain > 0.0) {
        return Err(Error::invalid("calibration_gain", format!("must be > 0, got {calibration_gain}")));
    }
    let mut t_hat = Vec::with_capacity(lo_tap_peaks.len());
    let mut valid = Vec::with_capacity(lo_tap_peaks.len());
    for &peak in lo_tap_peaks {
        if peak > 0.0 && peak.is_finite() {
            t_hat.push((peak / calibration_gain).min(1.0));
            valid.push(true);
        } else {
            t_hat.push(f64::NAN);
            valid.push(false);
        }
    }
    Ok(TransmittanceMonitor {
        t_hat,
        valid,
        calibration_gain,
    })
}

/// Tap gain from a calibration run at a known transmittance.
pub fn calibrate_monitor_gain(lo_tap_peaks: &[f64], known_transmittance: f64) -> Result<f64> {
    if lo_tap_peaks.is_empty() || !(known_transmittance > 0.0) {
        return Err(Error::InsufficientData("calibration needs peaks and a positive transmittance".into()));
    }
    Ok(mean(lo_tap_peaks) / known_transmittance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Correlation between pilot power and monitored transmittance for each
    /// trial shift of the monitor, in slots.
    pub lag_correlations: Vec<(i64, f64)>,
    pub best_lag: i64,
    pub aligned: bool,
}

/// Checks the pre-calibrated delay between the monitor tap and the signal
/// path by correlating received pilot power against the monitored
/// transmittance under trial shifts. A shift other than zero wins only if it
/// beats zero by more than three standard errors.
pub fn alignment_check(
    record: &MeasurementRecord,
    monitor: &TransmittanceMonitor,
    layout: &SlotLayout,
    max_lag: i64,
) -> Result<AlignmentReport> {
    let n_blocks = record.len() / layout.block_len();
    let blocks: Vec<(usize, f64)> = (0..n_blocks)
        .filter_map(|b| pilot_phasor(record, layout, b).map(|z| (b, z.norm_sqr())))
        .collect();
    if blocks.len() < 10 {
        return Err(Error::InsufficientData("too few pilot pairs for alignment check".into()));
    }
    let n = record.len() as i64;
    let mut lag_correlations = Vec::new();
    for lag in -max_lag..=max_lag {
        let mut pw = Vec::with_capacity(blocks.len());
        let mut tm = Vec::with_capacity(blocks.len());
        for &(b, p) in &blocks {
            let k = (b * layout.block_len()) as i64;
            let (s0, s1) = (k + lag, k + 1 + lag);
            if s0 < 0 || s1 >= n {
                continue;
            }
            let (s0, s1) = (s0 as usize, s1 as usize);
            if monitor.valid[s0] && monitor.valid[s1] {
                pw.push(p);
                tm.push(0.5 * (monitor.t_hat[s0] + monitor.t_hat[s1]));
            }
        }
        let c = if pw.len() > 2 { correlation(&pw, &tm) } else { f64::NAN };
        lag_correlations.push((lag, if c.is_finite() { c } else { 0.0 }));
    }
    let (best_lag, best) = lag_correlations
        .iter()
        .copied()
        .fold((0, f64::NEG_INFINITY), |acc, (l, c)| if c > acc.1 { (l, c) } else { acc });
    let at_zero = lag_correlations
        .iter()
        .find(|(l, _)| *l == 0)
        .map(|x| x.1)
        .unwrap_or(0.0);
    let margin = 3.0 / (blocks.len() as f64).sqrt();
    Ok(AlignmentReport {
        lag_correlations,
        best_lag,
        aligned: best_lag == 0 || best - at_zero <= margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoiseMap {
    pub intercept: f64,
    pub slope: f64,
}

impl ShotNoiseMap {
    pub fn eval(&self, monitor_peak: f64) -> f64 {
        self.intercept + self.slope * monitor_peak
    }
}

/// Least-squares fit of shot noise against mean monitor reading from
/// calibration runs. With fewer than two distinct readings the map is flat.
pub fn fit_shot_noise_map(points: &[(f64, f64)]) -> Result<ShotNoiseMap> {
    if points.is_empty() {
        return Err(Error::InsufficientData("no calibration points".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let vx = variance(&xs);
    if points.len() < 2 || vx <= 1e-18 * mean(&xs).powi(2).max(1.0) {
        return Ok(ShotNoiseMap { intercept: mean(&ys), slope: 0.0 });
    }
    let slope = crate::stats::covariance(&xs, &ys) / vx;
    Ok(ShotNoiseMap {
        intercept: mean(&ys) - slope * mean(&xs),
        slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ShotNoiseMethod {
    VacuumProbes,
    MonitorRegression { map: ShotNoiseMap },
}

pub const MIN_VACUUM_PROBES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoiseCalibration {
    /// Shot-noise variance in raw detector units.
    pub n0_hat: f64,
    /// Electronic noise relative to `n0_hat`.
    pub nu_el_hat: f64,
    pub method: ShotNoiseMethod,
    pub samples: usize,
}

impl ShotNoiseCalibration {
    /// A calibration that takes raw units as already shot-noise normalized.
    pub fn exact(nu_el: f64) -> Self {
        ShotNoiseCalibration {
            n0_hat: 1.0,
            nu_el_hat: nu_el,
            method: ShotNoiseMethod::VacuumProbes,
            samples: 0,
        }
    }

    pub fn to_snu(&self, y_raw: f64) -> f64 {
        y_raw / self.n0_hat.sqrt()
    }
}

/// Shot-noise calibration.
///
/// Electronic noise is measured separately from a dark record (LO blocked)
/// and subtracted; without a dark record it is taken as zero.
pub fn calibrate_shot_noise(
    record: &MeasurementRecord,
    monitor: &TransmittanceMonitor,
    method: ShotNoiseMethod,
    dark: Option<&[f64]>,
) -> Result<ShotNoiseCalibration> {
    let dark_var = match dark {
        Some(d) if d.len() >= 2 => variance(d),
        Some(_) => return Err(Error::InsufficientData("dark record too short".into())),
        None => 0.0,
    };
    let (n0_hat, samples) = match method {
        ShotNoiseMethod::VacuumProbes => {
            let vac = record.vacuum_samples();
            if vac.len() < MIN_VACUUM_PROBES {
                return Err(Error::InsufficientData(format!(
                    "{} vacuum probes, need at least {MIN_VACUUM_PROBES}",
                    vac.len()
                )));
            }
            (variance(&vac) - dark_var, vac.len())
        }
        ShotNoiseMethod::MonitorRegression { map } => {
            let peaks: Vec<f64> = record
                .monitor_peak
                .iter()
                .zip(&monitor.valid)
                .zip(&record.pilot_mask)
                .filter(|((_, &v), &p)| v && !p)
                .map(|((&x, _), _)| x)
                .collect();
            if peaks.is_empty() {
                return Err(Error::InsufficientData("no valid monitor readings".into()));
            }
            (map.eval(mean(&peaks)), peaks.len())
        }
    };
    if !(n0_hat > 0.0) {
        return Err(Error::Unphysical(format!("shot-noise estimate {n0_hat} is not positive")));
    }
    Ok(ShotNoiseCalibration {
        n0_hat,
        nu_el_hat: dark_var / n0_hat,
        method,
        samples,
    })
}

/// Writes per-slot diagnostics as CSV: slot, kind, theta_hat, t_hat, and
/// flags.
pub fn write_diagnostics<W: Write>(
    out: W,
    record: &MeasurementRecord,
    est: &PhaseEstimate,
    monitor: &TransmittanceMonitor,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "kind", "theta_hat", "t_hat", "clipped", "vacuum_probe", "phase_valid", "monitor_valid"])?;
    for k in 0..record.len() {
        let theta = est.theta_hat(k);
        w.write_record([
            k.to_string(),
            if record.pilot_mask[k] { "pilot" } else { "quantum" }.to_string(),
            theta.map(|t| t.to_string()).unwrap_or_default(),
            if monitor.valid[k] { monitor.t_hat[k].to_string() } else { String::new() },
            u8::from(record.clipped[k]).to_string(),
            u8::from(record.is_vacuum_probe[k]).to_string(),
            u8::from(theta.is_some()).to_string(),
            u8::from(monitor.valid[k]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
