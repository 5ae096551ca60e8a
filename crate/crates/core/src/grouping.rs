//! Transmittance-bin grouping of sifted pairs, per-group channel estimation
//! in SNU, fading excess noise and the excess-noise budget.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recovery::{ShotNoiseCalibration, TransmittanceMonitor};
use crate::stats::{covariance, mean, variance};
use crate::transceiver::{DetectorModel, SiftedPair};
use crate::units::Snu;

/// Smallest group on which channel parameters are estimated.
pub const MIN_GROUP_SIZE: usize = 1000;

/// Index of the loss bin containing `loss_db`. Bins are `[i·w, (i+1)·w)`,
/// so a value on an edge belongs to the higher-loss bin. Values within
/// 1e-9 bin widths of an edge are treated as on it, which keeps decimal
/// edges such as 16.2 dB stable against rounding.
pub fn bin_index(loss_db: f64, width_db: f64) -> i64 {
    let x = loss_db / width_db;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as i64
    } else {
        x.floor() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupingConfig {
    pub bin_width_db: f64,
    pub min_group_size: usize,
    pub loss_cap_db: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            bin_width_db: 0.2,
            min_group_size: 100_000,
            loss_cap_db: 25.0,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_db > 0.0) {
            return Err(Error::invalid("bin_width_db", "must be > 0"));
        }
        if self.min_group_size < MIN_GROUP_SIZE {
            return Err(Error::invalid("min_group_size", format!("must be >= {MIN_GROUP_SIZE}")));
        }
        if !(self.loss_cap_db > 0.0) {
            return Err(Error::invalid("loss_cap_db", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedBlock {
    pub index: i64,
    pub lower_db: f64,
    pub upper_db: f64,
    /// Indices into the sifted pair sequence.
    pub members: Vec<usize>,
    pub probability: f64,
    pub usable: bool,
}

impl GroupedBlock {
    pub fn center_db(&self) -> f64 {
        0.5 * (self.lower_db + self.upper_db)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    /// Non-empty groups in ascending loss order.
    pub groups: Vec<GroupedBlock>,
    /// Pairs above the loss cap or without a valid monitor reading.
    pub discarded: usize,
    pub total: usize,
}

/// Sorts pairs into loss bins by the monitored transmittance of their slot.
///
/// `P` is the share of all input pairs, so discarded pairs count against
/// the total and `Σ P ≤ 1`.
pub fn group_pairs(pairs: &[SiftedPair], monitor: &TransmittanceMonitor, cfg: &GroupingConfig) -> Result<Grouping> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs to group".into()));
    }
    let mut bins: std::collections::BTreeMap<i64, Vec<usize>> = std::collections::BTreeMap::new();
    let mut discarded = 0;
    for (i, p) in pairs.iter().enumerate() {
        let loss = match monitor.loss_db(p.slot) {
            Some(l) if l < cfg.loss_cap_db => l,
            _ => {
                discarded += 1;
                continue;
            }
        };
        bins.entry(bin_index(loss, cfg.bin_width_db)).or_default().push(i);
    }
    let total = pairs.len();
    let groups = bins
        .into_iter()
        .map(|(index, members)| GroupedBlock {
            index,
            lower_db: index as f64 * cfg.bin_width_db,
            upper_db: (index + 1) as f64 * cfg.bin_width_db,
            probability: members.len() as f64 / total as f64,
            usable: members.len() >= cfg.min_group_size,
            members,
        })
        .collect();
    Ok(Grouping { groups, discarded, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    /// Effective link transmittance, detector efficiency removed.
    pub t_hat: f64,
    pub eps_hat: Snu,
    pub eps_fading: Snu,
    pub v_a_used: Snu,
    pub nu_el: Snu,
    pub n_pairs: usize,
}

impl GroupEstimate {
    pub fn snr(&self, eta: f64) -> f64 {
        let g = eta * self.t_hat;
        g * self.v_a_used.get() / (1.0 + self.nu_el.get() + g * self.eps_hat.get())
    }
}

/// Covariance estimators for one group.
///
/// Bob's samples are put in SNU with the calibrated shot noise. The gain
/// `√(η·T)` is the regression slope of `y` on Alice's reference, and the
/// conditional variance left after removing it, minus vacuum and
/// electronic noise, gives the excess noise referred to the channel input.
/// `v_a_used` is the sample variance of the reference, which is the
/// modulation variance the slope and the residual actually see.
pub fn estimate_group(
    pairs: &[SiftedPair],
    monitored_t: &[f64],
    n0: &ShotNoiseCalibration,
    det: &DetectorModel,
) -> Result<GroupEstimate> {
    if pairs.len() < MIN_GROUP_SIZE {
        return Err(Error::InsufficientData(format!(
            "group has {} pairs, need at least {MIN_GROUP_SIZE}",
            pairs.len()
        )));
    }
    let scale = 1.0 / n0.n0_hat.sqrt();
    let x: Vec<f64> = pairs.iter().map(|p| p.reference).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.y * scale).collect();
    let v_a = variance(&x);
    let c = covariance(&x, &y);
    if !(c > 0.0) || !(v_a > 0.0) {
        return Err(Error::Unphysical(format!("non-positive estimated gain (cov {c})")));
    }
    let gain = c / v_a;
    let eta_t = gain * gain;
    let t_hat = (eta_t / det.eta).min(1.0);
    let conditional = variance(&y) - c * c / v_a;
    let eps_hat = (conditional - 1.0 - n0.nu_el_hat) / eta_t;
    if !eps_hat.is_finite() {
        return Err(Error::Unphysical("excess-noise estimate is not finite".into()));
    }
    Ok(GroupEstimate {
        t_hat,
        eps_hat: Snu::signed(eps_hat),
        eps_fading: fading_excess_noise(monitored_t, Snu::new(v_a)?),
        v_a_used: Snu::new(v_a)?,
        nu_el: Snu::new(n0.nu_el_hat.max(0.0))?,
        n_pairs: pairs.len(),
    })
}

/// Input-referred noise from mixing transmittances in one estimation
/// block: `Var(√T)·V_A / ⟨√T⟩²`. Fewer than two values give zero.
pub fn fading_excess_noise(transmittances: &[f64], v_a: Snu) -> Snu {
    if transmittances.len() < 2 || transmittances.iter().all(|&t| t == transmittances[0]) {
        return Snu::ZERO;
    }
    let roots: Vec<f64> = transmittances.iter().map(|t| t.sqrt()).collect();
    let m = mean(&roots);
    Snu::signed((variance(&roots) * v_a.get() / (m * m)).max(0.0))
}

/// Modelled excess-noise contributions for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetInputs {
    pub eps_hat: f64,
    pub v_a: f64,
    /// Residual carrier-phase variance after compensation, rad².
    pub phase_variance: f64,
    /// ADC step in raw units; `None` for an ideal converter.
    pub adc_step: Option<f64>,
    pub n0_raw: f64,
    pub eta: f64,
    pub t_hat: f64,
    /// LO to signal power ratio at the polarization demultiplexer.
    pub lo_signal_ratio: f64,
    /// `None` for perfect extinction.
    pub extinction_ratio_db: Option<f64>,
    pub eps_rin: f64,
    /// How far below zero the residual may fall before it is flagged.
    pub residual_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub eps_pl: Snu,
    pub eps_phase: Snu,
    pub eps_adc: Snu,
    pub eps_rin: Snu,
    /// Residual; may be slightly negative through estimation noise.
    pub other: Snu,
    pub model_mismatch: bool,
}

impl NoiseBudget {
    pub fn modelled(&self) -> f64 {
        self.eps_pl.get() + self.eps_phase.get() + self.eps_adc.get() + self.eps_rin.get()
    }

    pub fn total(&self) -> f64 {
        self.modelled() + self.other.get()
    }
}

pub fn eps_phase(v_a: f64, phase_variance: f64) -> f64 {
    v_a * phase_variance
}

/// Quantization noise `Δ²/12`, converted to SNU and referred to the input.
pub fn eps_adc(step_raw: f64, n0_raw: f64, eta: f64, t: f64) -> f64 {
    step_raw * step_raw / 12.0 / n0_raw / (eta * t)
}

pub fn eps_pl(lo_signal_ratio: f64, extinction_ratio_db: f64) -> f64 {
    lo_signal_ratio * 10f64.powf(-extinction_ratio_db / 10.0)
}

pub fn assemble_budget(inp: &BudgetInputs) -> Result<NoiseBudget> {
    let nonneg = |name: &'static str, v: f64| {
        if v >= 0.0 && v.is_finite() {
            Ok(Snu::signed(v))
        } else {
            Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")))
        }
    };
    let phase = nonneg("eps_phase", eps_phase(inp.v_a, inp.phase_variance))?;
    let adc = nonneg(
        "eps_adc",
        inp.adc_step.map_or(0.0, |d| eps_adc(d, inp.n0_raw, inp.eta, inp.t_hat)),
    )?;
    let pl = nonneg(
        "eps_pl",
        inp.extinction_ratio_db.map_or(0.0, |er| eps_pl(inp.lo_signal_ratio, er)),
    )?;
    let rin = nonneg("eps_rin", inp.eps_rin)?;
    let other = inp.eps_hat - (phase.get() + adc.get() + pl.get() + rin.get());
    Ok(NoiseBudget {
        eps_pl: pl,
        eps_phase: phase,
        eps_adc: adc,
        eps_rin: rin,
        other: Snu::signed(other),
        model_mismatch: other < -inp.residual_tolerance.abs(),
    })
}

/// One row of the group report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupReportRow {
    pub i: i64,
    pub lower_db: f64,
    pub upper_db: f64,
    pub n_pairs: usize,
    pub p: f64,
    pub t_hat: f64,
    pub eps_hat: f64,
    pub eps_fading: f64,
    pub eps_pl: f64,
    pub eps_phase: f64,
    pub eps_adc: f64,
    pub eps_rin: f64,
    pub other: f64,
    pub model_mismatch: bool,
}

impl GroupReportRow {
    pub fn new(block: &GroupedBlock, est: &GroupEstimate, budget: &NoiseBudget) -> Self {
        GroupReportRow {
            i: block.index,
            lower_db: block.lower_db,
            upper_db: block.upper_db,
            n_pairs: est.n_pairs,
            p: block.probability,
            t_hat: est.t_hat,
            eps_hat: est.eps_hat.get(),
            eps_fading: est.eps_fading.get(),
            eps_pl: budget.eps_pl.get(),
            eps_phase: budget.eps_phase.get(),
            eps_adc: budget.eps_adc.get(),
            eps_rin: budget.eps_rin.get(),
            other: budget.other.get(),
            model_mismatch: budget.model_mismatch,
        }
    }
}

pub fn write_group_report<W: Write>(out: W, rows: &[GroupReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Estimates every usable group in parallel. Results keep group order;
/// unusable groups give `None`.
pub fn estimate_groups(
    pairs: &[SiftedPair],
    monitor: &TransmittanceMonitor,
    grouping: &Grouping,
    n0: &ShotNoiseCalibration,
    det: &DetectorModel,
) -> Vec<Option<Result<GroupEstimate>>> {
    grouping
        .groups
        .par_iter()
        .map(|g| {
            if !g.usable {
                return None;
            }
            let members: Vec<SiftedPair> = g.members.iter().map(|&i| pairs[i]).collect();
            let ts: Vec<f64> = members.iter().map(|p| monitor.t_hat[p.slot]).collect();
            Some(estimate_group(&members, &ts, n0, det))
        })
        .collect()
}
