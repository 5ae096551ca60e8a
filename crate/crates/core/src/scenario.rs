//! Scenario configuration and the end-to-end experiment runner.
//!
//! A run goes generate → channel → measure → calibrate → recover phase →
//! sift → group → estimate → budget → (optional) reconcile → rate. Every
//! stage draws from its own stream derived from the scenario seed, and
//! errors carry the name of the stage that raised them.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, generate_trace, ChannelTrace, FadingConfig, FadingDistribution, PhaseDriftConfig};
use crate::error::{Error, Result};
use crate::grouping::{assemble_budget, estimate_groups, group_pairs, BudgetInputs, GroupEstimate, GroupingConfig, NoiseBudget};
use crate::io::config_hash;
use crate::keyrate::{secret_rate, total_rate, GroupRate, RateInputs, RateResult};
use crate::reconciliation::{capacity, reconcile, ReconConfig};
use crate::recovery::{
    alignment_check, calibrate_shot_noise, compensate, estimate_phase, monitor_transmittance, PhaseEstimate,
    ShotNoiseCalibration, ShotNoiseMethod,
};
use crate::transceiver::{
    generate_frame, homodyne_measure, measure_dark, sift, DetectorModel, ModulationConfig, MonitorTap, SiftedPair,
    SlotLayout, SymbolFrame, MeasurementRecord, QPSK_PHASES,
};
use crate::units::{DbLoss, RngSeed, Snu};

/// Descriptive fields carried through to the report. None of them enters
/// any computation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioMetadata {
    pub name: String,
    pub site: String,
    pub distance_km: Option<f64>,
    /// "day" or "night".
    pub period: String,
    pub wavelength_nm: Option<f64>,
    pub tx_aperture_mm: Option<f64>,
    pub rx_aperture_mm: Option<f64>,
    pub pointing_error_urad: Option<f64>,
    pub divergence_urad: Option<f64>,
    pub numerical_aperture: Option<f64>,
    pub fiber_core_um: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotNoiseSource {
    /// Vacuum probes interleaved with the quantum slots plus a dark record.
    VacuumProbes,
    /// Trust the detector configuration (`n0_raw`, `nu_el`) as calibrated.
    Configured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub shot_noise: ShotNoiseSource,
    pub vacuum_probe_fraction: f64,
    /// Length of the dark (LO blocked) record.
    pub dark_samples: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            shot_noise: ShotNoiseSource::VacuumProbes,
            vacuum_probe_fraction: 0.01,
            dark_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub phase_compensation: bool,
    /// Largest monitor shift tried by the alignment check; 0 skips it.
    pub alignment_max_lag: i64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            phase_compensation: true,
            alignment_max_lag: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    /// Quantum symbol rate, Hz.
    pub f: f64,
    pub alpha_overhead: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetConfig {
    pub lo_signal_ratio: f64,
    pub extinction_ratio_db: Option<f64>,
    pub eps_rin: f64,
    pub residual_tolerance: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            lo_signal_ratio: 0.0,
            extinction_ratio_db: None,
            eps_rin: 0.0,
            residual_tolerance: 0.01,
        }
    }
}

/// How β and FER are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ReconciliationMode {
    /// Use the given values without decoding anything.
    Replay {
        beta: f64,
        fer: f64,
        /// Secure-key proportion of each group; `None` uses the fraction of
        /// the group's pairs that fill whole frames of `frame_len`.
        #[serde(default)]
        alpha_g: Option<f64>,
        #[serde(default = "default_frame_len")]
        frame_len: usize,
    },
    /// Decode up to `max_frames` frames of each group's data.
    Simulate {
        #[serde(default)]
        config: ReconConfig,
        #[serde(default = "default_max_frames")]
        max_frames: usize,
    },
}

fn default_frame_len() -> usize {
    16_384
}

fn default_max_frames() -> usize {
    4
}

/// Where the per-group channel parameters entering the rate come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationMode {
    /// Covariance estimates from the simulated data.
    #[default]
    Measured,
    /// The simulator's ground truth: mean trace transmittance of the group
    /// and the injected excess noise. Separates model error from
    /// finite-sample estimation error.
    Injected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: RngSeed,
    #[serde(default)]
    pub metadata: ScenarioMetadata,
    pub fading: FadingConfig,
    #[serde(default)]
    pub drift: PhaseDriftConfig,
    pub modulation: ModulationConfig,
    pub detector: DetectorModel,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default)]
    pub grouping: GroupingConfig,
    pub rate: RateConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    pub reconciliation: ReconciliationMode,
    #[serde(default)]
    pub estimation: EstimationMode,
}

pub const PRESETS: [&str; 3] = ["lossless", "inland-6-night", "drifting"];

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Lowercase hex SHA-256 of the configuration.
    pub fn hash_hex(&self) -> Result<String> {
        Ok(hex::encode(config_hash(self)?))
    }

    pub fn validate(&self) -> Result<()> {
        self.fading.validate()?;
        self.modulation.validate()?;
        self.detector.validate()?;
        self.grouping.validate()?;
        let pps = self.modulation.layout.pulses_per_symbol();
        let expected = self.rate.f * pps;
        if !(self.rate.f > 0.0) || (self.fading.symbol_rate - expected).abs() > 1e-9 * expected {
            return Err(Error::invalid(
                "symbol_rate",
                format!(
                    "slot rate {} does not match quantum symbol rate {} × {pps} slots per symbol",
                    self.fading.symbol_rate, self.rate.f
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.rate.alpha_overhead) {
            return Err(Error::invalid("alpha_overhead", "must lie in [0, 1)"));
        }
        let vpf = self.calibration.vacuum_probe_fraction;
        if !(0.0..0.5).contains(&vpf) {
            return Err(Error::invalid("vacuum_probe_fraction", "must lie in [0, 0.5)"));
        }
        if self.calibration.shot_noise == ShotNoiseSource::VacuumProbes && (vpf == 0.0 || self.calibration.dark_samples < 2)
        {
            return Err(Error::invalid(
                "calibration",
                "vacuum-probe calibration needs a positive probe fraction and a dark record",
            ));
        }
        match &self.reconciliation {
            ReconciliationMode::Replay { beta, fer, alpha_g, frame_len } => {
                if !(*beta > 0.0 && *beta <= 1.0) {
                    return Err(Error::invalid("beta", "must lie in (0, 1]"));
                }
                if !(0.0..=1.0).contains(fer) {
                    return Err(Error::invalid("fer", "must lie in [0, 1]"));
                }
                if alpha_g.is_some_and(|a| !(0.0..=1.0).contains(&a)) {
                    return Err(Error::invalid("alpha_g", "must lie in [0, 1]"));
                }
                if *frame_len == 0 {
                    return Err(Error::invalid("frame_len", "must be > 0"));
                }
            }
            ReconciliationMode::Simulate { config, max_frames } => {
                config.code.validate()?;
                if *max_frames == 0 {
                    return Err(Error::invalid("max_frames", "must be > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "lossless" => Ok(lossless_preset()),
            "inland-6-night" => Ok(inland_sixth_preset()),
            "drifting" => Ok(drifting_preset()),
            _ => Err(Error::Config(format!("unknown preset `{name}`; available: {}", PRESETS.join(", ")))),
        }
    }
}

fn detector_for(eta: f64, nu_el: f64, adc_bits: Option<u32>, t_max: f64, v_a: f64, eps: f64, pilot: f64) -> DetectorModel {
    let mut det = DetectorModel {
        eta,
        nu_el: Snu::new(nu_el).expect("preset noise"),
        adc_bits,
        adc_fullscale: 1.0,
        pilot_fullscale: 1.0,
        n0_raw: 1.0,
        monitor: MonitorTap::default(),
    };
    det.adc_fullscale = det.quantum_fullscale_for(t_max, v_a, eps);
    det.pilot_fullscale = det.pilot_fullscale_for(t_max, pilot);
    det
}

/// Unit transmittance, no excess noise, ideal detector.
fn lossless_preset() -> ScenarioConfig {
    let f = 1e6;
    let v_a = 4.0;
    let pilot = 30.0;
    ScenarioConfig {
        seed: RngSeed(1),
        metadata: ScenarioMetadata { name: "lossless".into(), ..Default::default() },
        fading: FadingConfig::constant(DbLoss::new(0.0).expect("zero loss"), 2.0 * f),
        drift: PhaseDriftConfig::default(),
        modulation: ModulationConfig {
            v_a: Snu::new(v_a).expect("preset"),
            n_symbols: 200_000,
            pilot_amplitude: pilot,
            pilot_pattern: QPSK_PHASES.to_vec(),
            layout: SlotLayout::default(),
        },
        detector: detector_for(1.0, 0.0, None, 1.0, v_a, 0.0, pilot),
        calibration: CalibrationConfig { vacuum_probe_fraction: 0.1, ..Default::default() },
        recovery: RecoveryConfig::default(),
        grouping: GroupingConfig { min_group_size: 10_000, ..Default::default() },
        rate: RateConfig { f, alpha_overhead: 0.5 },
        budget: BudgetConfig::default(),
        reconciliation: ReconciliationMode::Replay { beta: 0.95, fer: 0.1, alpha_g: Some(1.0), frame_len: 16_384 },
        estimation: EstimationMode::Measured,
    }
}

/// The night-time 7-km operating point with the strongest key: mean loss
/// 16.5 dB with weak, slow fading so that one 0.2-dB bin dominates.
fn inland_sixth_preset() -> ScenarioConfig {
    let f = 2.5e6;
    let v_a = 8.9241;
    let eps = 0.0258;
    let pilot = 1000.0;
    let loss = 16.5020;
    let mut fading = FadingConfig::constant(DbLoss::new(loss).expect("preset"), 2.0 * f);
    fading.distribution = FadingDistribution::LogNormalTruncated;
    fading.sigma_db = 0.03;
    fading.fading_bandwidth = 5e3;
    fading.excess_noise = Snu::new(eps).expect("preset");
    let t_max = 10f64.powf(-(loss - 0.5) / 10.0);
    ScenarioConfig {
        seed: RngSeed(6),
        metadata: ScenarioMetadata {
            name: "inland-6-night".into(),
            site: "inland".into(),
            distance_km: Some(7.0),
            period: "night".into(),
            wavelength_nm: Some(1550.0),
            tx_aperture_mm: Some(80.0),
            rx_aperture_mm: Some(250.0),
            pointing_error_urad: Some(3.0),
            divergence_urad: Some(32.7),
            numerical_aperture: Some(0.125),
            fiber_core_um: Some(10.0),
        },
        fading,
        drift: PhaseDriftConfig::default(),
        modulation: ModulationConfig {
            v_a: Snu::new(v_a).expect("preset"),
            n_symbols: 1_000_000,
            pilot_amplitude: pilot,
            pilot_pattern: QPSK_PHASES.to_vec(),
            layout: SlotLayout::default(),
        },
        detector: detector_for(0.375, 0.1494, Some(12), t_max, v_a, eps, pilot),
        calibration: CalibrationConfig::default(),
        recovery: RecoveryConfig::default(),
        grouping: GroupingConfig::default(),
        rate: RateConfig { f, alpha_overhead: 0.5 },
        budget: BudgetConfig::default(),
        reconciliation: ReconciliationMode::Replay { beta: 0.965, fer: 0.86, alpha_g: None, frame_len: 16_384 },
        estimation: EstimationMode::Measured,
    }
}

/// Short link with a slow carrier-phase random walk and weak pilots.
fn drifting_preset() -> ScenarioConfig {
    let f = 1e6;
    let v_a = 4.0;
    let eps = 0.02;
    let pilot = 8.0;
    let mut fading = FadingConfig::constant(DbLoss::new(1.1).expect("preset"), 2.0 * f);
    fading.excess_noise = Snu::new(eps).expect("preset");
    ScenarioConfig {
        seed: RngSeed(11),
        metadata: ScenarioMetadata { name: "drifting".into(), ..Default::default() },
        fading,
        drift: PhaseDriftConfig { drift_rate_std: 0.001, offset: 0.4 },
        modulation: ModulationConfig {
            v_a: Snu::new(v_a).expect("preset"),
            n_symbols: 500_000,
            pilot_amplitude: pilot,
            pilot_pattern: QPSK_PHASES.to_vec(),
            layout: SlotLayout::default(),
        },
        detector: detector_for(0.8, 0.05, None, 1.0, v_a, eps, pilot),
        calibration: CalibrationConfig { shot_noise: ShotNoiseSource::Configured, ..Default::default() },
        recovery: RecoveryConfig::default(),
        grouping: GroupingConfig { bin_width_db: 0.2, min_group_size: 10_000, loss_cap_db: 25.0 },
        rate: RateConfig { f, alpha_overhead: 0.5 },
        budget: BudgetConfig::default(),
        reconciliation: ReconciliationMode::Replay { beta: 0.95, fer: 0.1, alpha_g: Some(1.0), frame_len: 16_384 },
        estimation: EstimationMode::Measured,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub reconciliation: String,
    pub estimation: EstimationMode,
}

/// One row per estimated group, in the column order of the summary table
/// followed by diagnostic columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub i: i64,
    pub lower_db: f64,
    pub upper_db: f64,
    /// Mean monitored loss of the group's pairs.
    pub loss_db: f64,
    pub probability: f64,
    pub v_a: f64,
    pub nu_el: f64,
    pub snr: f64,
    pub eps: f64,
    pub alpha_g: f64,
    pub beta: f64,
    pub fer: f64,
    pub r_bps: f64,
    pub n_pairs: usize,
    pub t_hat: f64,
    pub eps_fading: f64,
    pub eps_phase: f64,
    pub eps_adc: f64,
    pub eps_pl: f64,
    pub eps_rin: f64,
    pub eps_other: f64,
    pub model_mismatch: bool,
    pub i_ab: f64,
    pub chi_be: f64,
    pub frames: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub i: i64,
    pub n_pairs: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub n_slots: usize,
    pub sifted_pairs: usize,
    pub discarded_pairs: usize,
    pub n0_hat: f64,
    pub nu_el_hat: f64,
    pub vacuum_probes: usize,
    pub pilot_snr: f64,
    pub phase_residual_variance: f64,
    pub drift_variance_per_slot: f64,
    pub monitor_best_lag: Option<i64>,
    pub monitor_aligned: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub provenance: Provenance,
    pub metadata: ScenarioMetadata,
    pub pipeline: PipelineSummary,
    pub groups: Vec<GroupRow>,
    pub skipped: Vec<SkippedGroup>,
    pub r_tot: f64,
    /// Index into `groups` of the row with the highest `r_bps`.
    pub optimal_group: Option<usize>,
}

pub const GROUP_CSV_HEADER: [&str; 26] = [
    "i", "lower_db", "upper_db", "loss_db", "p", "v_a", "nu_el", "snr", "eps", "alpha_g", "beta", "fer", "r_bps",
    "n_pairs", "t_hat", "eps_fading", "eps_phase", "eps_adc", "eps_pl", "eps_rin", "eps_other", "model_mismatch",
    "i_ab", "chi_be", "frames", "status",
];

impl KeyRateReport {
    pub fn optimal(&self) -> Option<&GroupRow> {
        self.optimal_group.map(|i| &self.groups[i])
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(GROUP_CSV_HEADER)?;
        for g in &self.groups {
            w.write_record([
                g.i.to_string(),
                g.lower_db.to_string(),
                g.upper_db.to_string(),
                g.loss_db.to_string(),
                g.probability.to_string(),
                g.v_a.to_string(),
                g.nu_el.to_string(),
                g.snr.to_string(),
                g.eps.to_string(),
                g.alpha_g.to_string(),
                g.beta.to_string(),
                g.fer.to_string(),
                g.r_bps.to_string(),
                g.n_pairs.to_string(),
                g.t_hat.to_string(),
                g.eps_fading.to_string(),
                g.eps_phase.to_string(),
                g.eps_adc.to_string(),
                g.eps_pl.to_string(),
                g.eps_rin.to_string(),
                g.eps_other.to_string(),
                g.model_mismatch.to_string(),
                g.i_ab.to_string(),
                g.chi_be.to_string(),
                g.frames.to_string(),
                g.status.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `groups.csv` and `summary.json` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join("groups.csv"))?)?;
        fs::write(dir.join("summary.json"), self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Everything the stages before grouping produce; kept around so callers
/// can inspect intermediate data.
pub struct SimulatedLink {
    pub trace: ChannelTrace,
    pub frame: SymbolFrame,
    pub record: MeasurementRecord,
}

/// Runs the physical-layer stages only.
pub fn simulate_link(cfg: &ScenarioConfig) -> Result<SimulatedLink> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let seed = cfg.seed;
    let frame = generate_frame(&cfg.modulation, cfg.calibration.vacuum_probe_fraction, seed.derive("transmitter"))
        .map_err(|e| e.in_stage("transmitter"))?;
    let trace = generate_trace(&cfg.fading, &cfg.drift, frame.len(), seed.derive("channel"))
        .map_err(|e| e.in_stage("channel"))?;
    let received =
        apply_channel(&frame.amplitudes(), &trace, seed.derive("channel")).map_err(|e| e.in_stage("channel"))?;
    let record = homodyne_measure(&received, &frame, &cfg.detector, &trace, seed.derive("receiver"))
        .map_err(|e| e.in_stage("detector"))?;
    Ok(SimulatedLink { trace, frame, record })
}

/// Spread of the uncompensated carrier phase, from the pilot estimates:
/// `−2 ln |⟨e^{iθ̂}⟩|` minus the estimation noise.
fn uncompensated_phase_variance(est: &PhaseEstimate) -> f64 {
    let (mut s, mut n) = (Complex64::new(0.0, 0.0), 0usize);
    for th in est.block_estimates.iter().flatten() {
        s += Complex64::from_polar(1.0, *th);
        n += 1;
    }
    let r = (s.norm() / n.max(1) as f64).max(1e-12);
    (-2.0 * r.ln() - est.estimation_variance()).max(0.0)
}

struct GroupParams {
    t: f64,
    eps: f64,
    v_a: f64,
    nu_el: f64,
}

struct Reconciled {
    beta: f64,
    fer: f64,
    alpha_g: f64,
    frames: usize,
    status: String,
}

fn coverage(n_pairs: usize, frame_len: usize) -> f64 {
    ((n_pairs / frame_len) * frame_len) as f64 / n_pairs as f64
}

fn reconcile_group(
    mode: &ReconciliationMode,
    members: &[SiftedPair],
    n0: &ShotNoiseCalibration,
    p: &GroupParams,
    eta: f64,
    seed: RngSeed,
) -> Result<Reconciled> {
    match mode {
        ReconciliationMode::Replay { beta, fer, alpha_g, frame_len } => Ok(Reconciled {
            beta: *beta,
            fer: *fer,
            alpha_g: alpha_g.unwrap_or_else(|| coverage(members.len(), *frame_len)),
            frames: members.len() / frame_len,
            status: "replay".into(),
        }),
        ReconciliationMode::Simulate { config, max_frames } => {
            let gain2 = eta * p.t;
            let noise = 1.0 + p.nu_el + gain2 * p.eps;
            let snr = gain2 * p.v_a / noise;
            let unusable = |status: &str| Reconciled {
                beta: config.beta_target,
                fer: 1.0,
                alpha_g: 0.0,
                frames: 0,
                status: status.into(),
            };
            let code = match config.build_code(snr) {
                Ok(c) => c,
                Err(Error::UnreachableRate(_)) => return Ok(unusable("unreachable-rate")),
                Err(e) => return Err(e),
            };
            let m = code.frame_len();
            let frames = (members.len() / m).min(*max_frames);
            if frames == 0 {
                return Ok(unusable("too-few-pairs"));
            }
            let scale = 1.0 / n0.n0_hat.sqrt();
            let x: Vec<f64> = members[..frames * m].iter().map(|q| q.reference).collect();
            let y: Vec<f64> = members[..frames * m].iter().map(|q| q.y * scale).collect();
            let (rep, _) = reconcile(&code, &x, &y, gain2.sqrt(), noise, snr, config.mdr_dimension, seed)?;
            Ok(Reconciled {
                beta: code.effective_rate() / capacity(snr),
                fer: rep.fer,
                alpha_g: coverage(members.len(), m),
                frames,
                status: "decoded".into(),
            })
        }
    }
}

/// Runs the whole chain for one scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<KeyRateReport> {
    let link = simulate_link(cfg)?;
    analyze(cfg, &link)
}

/// Everything from calibration onward, on an existing link simulation.
pub fn analyze(cfg: &ScenarioConfig, link: &SimulatedLink) -> Result<KeyRateReport> {
    let seed = cfg.seed;
    let det = &cfg.detector;
    let layout = &cfg.modulation.layout;
    let SimulatedLink { trace, frame, record } = link;

    let monitor = monitor_transmittance(&record.monitor_peak, det.monitor.gain).map_err(|e| e.in_stage("monitor"))?;
    let alignment = if cfg.recovery.alignment_max_lag > 0 {
        Some(alignment_check(record, &monitor, layout, cfg.recovery.alignment_max_lag).map_err(|e| e.in_stage("monitor"))?)
    } else {
        None
    };

    let n0 = match cfg.calibration.shot_noise {
        ShotNoiseSource::VacuumProbes => {
            let dark = measure_dark(det, cfg.calibration.dark_samples, seed.derive("dark"))
                .map_err(|e| e.in_stage("calibration"))?;
            calibrate_shot_noise(record, &monitor, ShotNoiseMethod::VacuumProbes, Some(&dark))
                .map_err(|e| e.in_stage("calibration"))?
        }
        ShotNoiseSource::Configured => ShotNoiseCalibration {
            n0_hat: det.n0_raw,
            ..ShotNoiseCalibration::exact(det.nu_el.get())
        },
    };

    let phase = estimate_phase(record, layout, &cfg.modulation.pilot_pattern).map_err(|e| e.in_stage("phase"))?;
    let sifted = sift(frame, record).map_err(|e| e.in_stage("sifting"))?;
    let (pairs, phase_variance) = if cfg.recovery.phase_compensation {
        (compensate(&sifted, &phase), phase.residual_variance())
    } else {
        (sifted, uncompensated_phase_variance(&phase))
    };

    let grouping = group_pairs(&pairs, &monitor, &cfg.grouping).map_err(|e| e.in_stage("grouping"))?;
    let estimates = estimate_groups(&pairs, &monitor, &grouping, &n0, det);

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut rates = Vec::new();
    for (g, est) in grouping.groups.iter().zip(estimates) {
        let est: GroupEstimate = match est {
            None => {
                skipped.push(SkippedGroup {
                    i: g.index,
                    n_pairs: g.len(),
                    reason: format!("fewer than {} pairs", cfg.grouping.min_group_size),
                });
                continue;
            }
            // A group whose data cannot support an estimate is dropped like
            // an undersized one; anything else aborts the run.
            Some(Err(e @ (Error::Unphysical(_) | Error::InsufficientData(_)))) => {
                skipped.push(SkippedGroup { i: g.index, n_pairs: g.len(), reason: format!("estimation: {e}") });
                continue;
            }
            Some(r) => r.map_err(|e| e.in_stage("estimation"))?,
        };
        let members: Vec<SiftedPair> = g.members.iter().map(|&i| pairs[i]).collect();
        let loss_db = members.iter().map(|q| monitor.loss_db(q.slot).unwrap_or(f64::NAN)).sum::<f64>()
            / members.len() as f64;
        let params = match cfg.estimation {
            EstimationMode::Measured => GroupParams {
                t: est.t_hat,
                eps: est.eps_hat.get(),
                v_a: est.v_a_used.get(),
                nu_el: est.nu_el.get(),
            },
            EstimationMode::Injected => GroupParams {
                t: members.iter().map(|q| trace.transmittance[q.slot]).sum::<f64>() / members.len() as f64,
                eps: trace.excess_noise_injected.get(),
                v_a: cfg.modulation.v_a.get(),
                nu_el: det.nu_el.get(),
            },
        };
        let budget: NoiseBudget = assemble_budget(&BudgetInputs {
            eps_hat: params.eps,
            v_a: params.v_a,
            phase_variance,
            adc_step: det.step(det.adc_fullscale),
            n0_raw: n0.n0_hat,
            eta: det.eta,
            t_hat: params.t,
            lo_signal_ratio: cfg.budget.lo_signal_ratio,
            extinction_ratio_db: cfg.budget.extinction_ratio_db,
            eps_rin: cfg.budget.eps_rin,
            residual_tolerance: cfg.budget.residual_tolerance,
        })
        .map_err(|e| e.in_stage("budget"))?;

        let rec = reconcile_group(&cfg.reconciliation, &members, &n0, &params, det.eta, seed.derive(&format!("recon{}", g.index)))
            .map_err(|e| e.in_stage("reconciliation"))?;

        let inputs = RateInputs {
            f: cfg.rate.f,
            alpha_overhead: cfg.rate.alpha_overhead,
            beta: rec.beta.min(1.0),
            fer: rec.fer,
            v_a: params.v_a,
            t: params.t,
            // A negative estimate is a fluctuation below zero noise.
            eps: params.eps.max(0.0),
            eta: det.eta,
            nu_el: params.nu_el,
        };
        let rate: RateResult = secret_rate(&inputs).map_err(|e| e.in_stage("rate"))?;
        rates.push(GroupRate { probability: g.probability, alpha_g: rec.alpha_g, rate });
        rows.push(GroupRow {
            i: g.index,
            lower_db: g.lower_db,
            upper_db: g.upper_db,
            loss_db,
            probability: g.probability,
            v_a: params.v_a,
            nu_el: params.nu_el,
            snr: rate.snr,
            eps: params.eps,
            alpha_g: rec.alpha_g,
            beta: rec.beta,
            fer: rec.fer,
            r_bps: rate.r_secret,
            n_pairs: est.n_pairs,
            t_hat: params.t,
            eps_fading: est.eps_fading.get(),
            eps_phase: budget.eps_phase.get(),
            eps_adc: budget.eps_adc.get(),
            eps_pl: budget.eps_pl.get(),
            eps_rin: budget.eps_rin.get(),
            eps_other: budget.other.get(),
            model_mismatch: budget.model_mismatch,
            i_ab: rate.i_ab,
            chi_be: rate.chi_be,
            frames: rec.frames,
            status: rec.status,
        });
    }
    let r_tot = total_rate(&rates).map_err(|e| e.in_stage("rate"))?;
    let optimal_group = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.r_bps > 0.0)
        .fold(None::<(usize, f64)>, |best, (i, r)| match best {
            Some((_, b)) if b >= r.r_bps => best,
            _ => Some((i, r.r_bps)),
        })
        .map(|(i, _)| i);

    let reconciliation = match &cfg.reconciliation {
        ReconciliationMode::Replay { .. } => "replay",
        ReconciliationMode::Simulate { .. } => "simulate",
    };
    Ok(KeyRateReport {
        provenance: Provenance {
            config_hash: cfg.hash_hex().map_err(|e| e.in_stage("report"))?,
            seed: seed.0,
            version: env!("CARGO_PKG_VERSION").to_string(),
            reconciliation: reconciliation.into(),
            estimation: cfg.estimation,
        },
        metadata: cfg.metadata.clone(),
        pipeline: PipelineSummary {
            n_slots: record.len(),
            sifted_pairs: grouping.total,
            discarded_pairs: grouping.discarded,
            n0_hat: n0.n0_hat,
            nu_el_hat: n0.nu_el_hat,
            vacuum_probes: n0.samples,
            pilot_snr: phase.pilot_snr,
            phase_residual_variance: phase_variance,
            drift_variance_per_slot: phase.drift_variance_per_slot,
            monitor_best_lag: alignment.as_ref().map(|a| a.best_lag),
            monitor_aligned: alignment.as_ref().map(|a| a.aligned),
        },
        groups: rows,
        skipped,
        r_tot,
        optimal_group,
    })
}
