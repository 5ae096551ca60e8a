//! Acceptance suite. Each test prints one `PASS`/`FAIL` line with the
//! measured figures; run with `--nocapture` to see them.

#[path = "support/holevo_oracle.rs"]
mod oracle;

use std::time::{Duration, Instant};

use fso_cvqkd::channel::{EmpiricalHistogram, FadingConfig, FadingDistribution};
use fso_cvqkd::grouping::fading_excess_noise;
use fso_cvqkd::keyrate::{symplectic_spectrum, RateInputs};
use fso_cvqkd::reconciliation::session::hash_bits;
use fso_cvqkd::reconciliation::{capacity, reconcile, reconcile_bench, ReconConfig};
use fso_cvqkd::recovery::estimate_phase;
use fso_cvqkd::scenario::{
    analyze, run_scenario, simulate_link, EstimationMode, KeyRateReport, ReconciliationMode, ScenarioConfig,
    ShotNoiseSource,
};
use fso_cvqkd::table::{reproduce_table, FixedParams, BUNDLED_TABLE};
use fso_cvqkd::transceiver::wrap;
use fso_cvqkd::units::{RngSeed, Snu};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {n} [{name}]: {} | {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

#[test]
fn criterion_1_snr_reconstruction() {
    let start = Instant::now();
    let cmp = reproduce_table(BUNDLED_TABLE.as_bytes(), &FixedParams::default()).unwrap();
    let elapsed = start.elapsed();
    let devs: Vec<f64> = cmp.rows.iter().map(|r| r.snr_rel_dev.unwrap()).collect();
    let ok = cmp.errors.is_empty() && cmp.rows.len() == 9 && devs.iter().all(|d| d.abs() < 0.01) && within(elapsed, 1.0);
    verdict(
        1,
        "SNR reconstruction",
        ok,
        format!(
            "{} rows, max |dev| {:.3}%, {:.1?}",
            cmp.rows.len(),
            100.0 * cmp.max_abs_snr_dev(),
            elapsed
        ),
    );
}

#[test]
fn criterion_2_key_rate_reproduction() {
    let start = Instant::now();
    let cmp = reproduce_table(BUNDLED_TABLE.as_bytes(), &FixedParams::default()).unwrap();
    let elapsed = start.elapsed();
    for r in &cmp.rows {
        println!(
            "  {:<16} R {:>9.3} bps vs {:>9.3} ({:+.3}%)",
            r.label,
            r.r_secret,
            r.r_ref.unwrap(),
            100.0 * r.r_rel_dev.unwrap()
        );
    }
    let ok = cmp.rows.len() == 9
        && cmp.rows.iter().all(|r| r.r_secret > 0.0 && r.r_rel_dev.unwrap().abs() <= 0.20)
        && within(elapsed, 1.0);
    verdict(
        2,
        "key-rate reproduction",
        ok,
        format!("all positive, max |dev| {:.3}%, {:.1?}", 100.0 * cmp.max_abs_rate_dev(), elapsed),
    );
}

#[test]
fn criterion_3_holevo_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(1e-3..=0.99);
        let v_a = rng.random_range(1.0..=20.0);
        let eps = rng.random_range(0.0..=0.2);
        let eta = rng.random_range(0.2..1.0);
        let nu_el = rng.random_range(0.0..=1.0);
        let inp = RateInputs { f: 1.0, alpha_overhead: 0.0, beta: 1.0, fer: 0.0, v_a, t, eps, eta, nu_el };
        let cf = symplectic_spectrum(&inp).unwrap();
        let o = oracle::oracle_spectrum(v_a, t, eps, eta, nu_el);
        let pairs = [
            (cf.joint[0], o.joint[0]),
            (cf.joint[1], o.joint[1]),
            (cf.conditional[0], o.conditional[0]),
            (cf.conditional[1], o.conditional[1]),
        ];
        for (a, b) in pairs {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "Holevo oracle equivalence",
        worst < 1e-9 && within(elapsed, 10.0),
        format!("100 points, max |closed − oracle| {worst:.2e}, {elapsed:.1?}"),
    );
}

fn two_level_config(v_a: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset("drifting").unwrap();
    cfg.seed = RngSeed(404);
    cfg.drift = Default::default();
    cfg.recovery.phase_compensation = false;
    cfg.calibration.shot_noise = ShotNoiseSource::Configured;
    cfg.modulation.v_a = Snu::new(v_a).unwrap();
    cfg.modulation.n_symbols = 1_000_000;
    cfg.fading = FadingConfig {
        distribution: FadingDistribution::DiscreteEmpirical {
            histogram: EmpiricalHistogram::new(vec![1.1, 3.1, 5.1], vec![0.4, 0.35, 0.25], Some(0.002)).unwrap(),
        },
        fading_bandwidth: 2e3,
        ..cfg.fading
    };
    cfg.detector.adc_fullscale = cfg.detector.quantum_fullscale_for(1.0, v_a, 0.02);
    cfg.detector.pilot_fullscale = cfg.detector.pilot_fullscale_for(1.0, cfg.modulation.pilot_amplitude);
    cfg.reconciliation = ReconciliationMode::Replay { beta: 0.95, fer: 0.1, alpha_g: Some(1.0), frame_len: 16_384 };
    cfg
}

#[test]
fn criterion_4_fading_mixture() {
    let start = Instant::now();
    let v_a = 4.0;
    let mut cfg = two_level_config(v_a);
    let link = simulate_link(&cfg).unwrap();
    let branches = analyze(&cfg, &link).unwrap();
    cfg.grouping.bin_width_db = 20.0;
    let pooled = analyze(&cfg, &link).unwrap();

    // Per-branch estimates, weighted by branch size.
    let big: Vec<_> = branches.groups.iter().filter(|g| g.n_pairs > 100_000).collect();
    let w: f64 = big.iter().map(|g| g.n_pairs as f64).sum();
    let branch_eps: f64 = big.iter().map(|g| g.eps * g.n_pairs as f64).sum::<f64>() / w;
    let pooled_eps = pooled.groups[0].eps;
    // Prediction from the realised branch transmittances and weights.
    let ts: Vec<f64> = [1.1f64, 3.1, 5.1].iter().map(|l| 10f64.powf(-l / 10.0)).collect();
    let mut samples = Vec::new();
    for (t, g) in ts.iter().zip(&big) {
        samples.extend(std::iter::repeat_n(*t, g.n_pairs / 100));
    }
    let predicted = fading_excess_noise(&samples, Snu::new(pooled.groups[0].v_a).unwrap()).get();
    let inflation = pooled_eps - branch_eps;
    let rel = inflation / predicted - 1.0;

    // Single 0.2-dB bin of a continuous log-normal channel at V_A ≈ 9.
    let mut ln = ScenarioConfig::preset("inland-6-night").unwrap();
    ln.fading.sigma_db = 0.6;
    ln.fading.mean_loss = fso_cvqkd::units::DbLoss::new(19.5).unwrap();
    ln.grouping.min_group_size = 20_000;
    ln.estimation = EstimationMode::Measured;
    ln.calibration.shot_noise = ShotNoiseSource::Configured;
    let rep = run_scenario(&ln).unwrap();
    let max_bin_fading = rep.groups.iter().map(|g| g.eps_fading).fold(0.0, f64::max);
    let elapsed = start.elapsed();

    let ok = big.len() == 3
        && rel.abs() <= 0.10
        && !rep.groups.is_empty()
        && max_bin_fading < 0.005
        && within(elapsed, 120.0);
    verdict(
        4,
        "fading-mixture property",
        ok,
        format!(
            "pooled − per-branch ε̂ = {inflation:.4}, predicted {predicted:.4} ({:+.1}%); max single-bin ε_f {max_bin_fading:.2e} over {} bins; {elapsed:.1?}",
            100.0 * rel,
            rep.groups.len()
        ),
    );
}

#[test]
fn criterion_5_end_to_end_estimation() {
    let start = Instant::now();
    let cfg = ScenarioConfig::preset("inland-6-night").unwrap();
    assert_eq!(cfg.modulation.n_symbols, 1_000_000);
    let link = simulate_link(&cfg).unwrap();
    let rep = analyze(&cfg, &link).unwrap();
    let elapsed = start.elapsed();
    let injected = cfg.fading.excess_noise.get();
    let Some(g) = rep.groups.iter().max_by_key(|g| g.n_pairs) else {
        verdict(5, "end-to-end estimation", false, "no usable group".into());
        return;
    };
    // Ground-truth transmittance of the group's pairs.
    let mut truth = cfg.clone();
    truth.estimation = EstimationMode::Injected;
    let rep_truth = analyze(&truth, &link).unwrap();
    let gt = rep_truth.groups.iter().find(|x| x.i == g.i).unwrap();
    let eps_err = g.eps - injected;
    let t_rel = g.t_hat / gt.t_hat - 1.0;
    // Statistical floor of the covariance estimator alone, ignoring the
    // shot-noise calibration error.
    let eta_t = cfg.detector.eta * gt.t_hat;
    let noise = 1.0 + cfg.detector.nu_el.get() + eta_t * injected;
    let sigma_eps = (2.0 / g.n_pairs as f64).sqrt() * noise / eta_t;
    let ok = eps_err.abs() <= 0.01 && t_rel.abs() <= 0.01 && within(elapsed, 300.0);
    println!(
        "  group {} ({} pairs): R measured {:.2} bps, with injected parameters {:.2} bps (reported 334.56)",
        g.i, g.n_pairs, g.r_bps, gt.r_bps
    );
    verdict(
        5,
        "end-to-end estimation",
        ok,
        format!(
            "ε̂ {:.4} vs {injected} (err {eps_err:+.4}, estimator σ ≥ {sigma_eps:.3}), T̂ rel err {:+.3}%, N0 rel err {:+.3}%; {elapsed:.1?}",
            g.eps,
            100.0 * t_rel,
            100.0 * (rep.pipeline.n0_hat / cfg.detector.n0_raw - 1.0)
        ),
    );
}

fn main_group(rep: &KeyRateReport) -> Option<&fso_cvqkd::scenario::GroupRow> {
    rep.groups.iter().max_by_key(|g| g.n_pairs)
}

#[test]
fn criterion_6_phase_compensation() {
    let start = Instant::now();
    let mut cfg = ScenarioConfig::preset("drifting").unwrap();
    let link = simulate_link(&cfg).unwrap();
    let on = analyze(&cfg, &link).unwrap();
    cfg.recovery.phase_compensation = false;
    let off = analyze(&cfg, &link).unwrap();

    // True residual phase error of the compensated quantum slots.
    let layout = cfg.modulation.layout;
    let est = estimate_phase(&link.record, &layout, &cfg.modulation.pilot_pattern).unwrap();
    let mut acc = 0.0;
    let mut n = 0usize;
    for k in (0..link.record.len()).filter(|&k| !link.record.pilot_mask[k]) {
        if let Some(th) = est.theta_hat(k) {
            acc += wrap(th - link.trace.phase[k]).powi(2);
            n += 1;
        }
    }
    let sigma2 = acc / n as f64;
    let elapsed = start.elapsed();

    let g_on = main_group(&on).expect("compensated group");
    let eps_off = main_group(&off).map_or(f64::INFINITY, |g| g.eps);
    let injected = cfg.fading.excess_noise.get();
    let measured_phase = g_on.eps - injected - g_on.eps_adc;
    let expected = g_on.v_a * sigma2;
    let rel = measured_phase / expected - 1.0;
    let rel_budget = g_on.eps_phase / expected - 1.0;
    let ok = g_on.eps < eps_off && rel.abs() <= 0.15 && rel_budget.abs() <= 0.15 && within(elapsed, 120.0);
    verdict(
        6,
        "phase compensation",
        ok,
        format!(
            "ε̂ {:.4} compensated vs {eps_off:.4} uncompensated; residual ε_phase {measured_phase:.4} vs V_A·σ_φ² {expected:.4} ({:+.1}%), budget {:.4} ({:+.1}%); {elapsed:.1?}",
            g_on.eps,
            100.0 * rel,
            g_on.eps_phase,
            100.0 * rel_budget
        ),
    );
}

#[test]
fn criterion_7_reconciliation_correctness() {
    let start = Instant::now();
    let snr = 0.0651;
    let frames = 200;
    let cfg = ReconConfig { beta_target: 0.95, ..ReconConfig::default() };
    let (rep, outcomes) = reconcile_bench(&cfg, snr, frames, RngSeed(77)).unwrap();
    let elapsed = start.elapsed();
    let code = cfg.build_code(snr).unwrap();
    let beta_exact = rep.beta == code.effective_rate() / capacity(snr);
    // Accepted frames: Bob's key must hash to what Alice decoded.
    let accepted: Vec<_> = outcomes.iter().filter(|o| o.success()).collect();
    let identical = accepted
        .iter()
        .all(|o| o.alice_hash == o.bob_hash && o.key.as_ref().is_some_and(|k| hash_bits(k) == o.alice_hash));
    let caught = outcomes.iter().filter(|o| o.undetected_error).all(|o| !o.success() && o.key.is_none());
    let ok = outcomes.len() >= 200
        && identical
        && caught
        && beta_exact
        && rep.fer.is_finite()
        && within(elapsed, 600.0);
    verdict(
        7,
        "reconciliation correctness",
        ok,
        format!(
            "{} frames × {} symbols, {} accepted and hash-identical, {} syndrome-consistent mismatches caught by the hash; R_eff {:.6}, β {:.4} (exact {beta_exact}), FER {:.3}; {elapsed:.1?}",
            rep.frames_total,
            rep.frame_len,
            accepted.len(),
            rep.undetected_errors,
            rep.r_eff,
            rep.beta,
            rep.fer
        ),
    );
}

fn report_bytes(rep: &KeyRateReport) -> (Vec<u8>, String) {
    let mut csv = Vec::new();
    rep.write_csv(&mut csv).unwrap();
    (csv, rep.to_json().unwrap())
}

#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let mut scenarios = Vec::new();
    let mut lossless = ScenarioConfig::preset("lossless").unwrap();
    lossless.modulation.n_symbols = 50_000;
    scenarios.push(lossless);
    let mut sixth = ScenarioConfig::preset("inland-6-night").unwrap();
    sixth.modulation.n_symbols = 200_000;
    sixth.grouping.min_group_size = 20_000;
    scenarios.push(sixth.clone());
    let mut decoded = sixth;
    decoded.calibration.shot_noise = ShotNoiseSource::Configured;
    decoded.estimation = EstimationMode::Injected;
    decoded.reconciliation = ReconciliationMode::Simulate { config: ReconConfig::default(), max_frames: 2 };
    scenarios.push(decoded);

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut identical = true;
    for (i, cfg) in scenarios.iter().enumerate() {
        let a = run_scenario(cfg).unwrap();
        let b = run_scenario(cfg).unwrap();
        identical &= report_bytes(&a) == report_bytes(&b);
        let (pa, pb) = (dir_a.path().join(i.to_string()), dir_b.path().join(i.to_string()));
        a.write_to_dir(&pa).unwrap();
        b.write_to_dir(&pb).unwrap();
        for f in ["groups.csv", "summary.json"] {
            identical &= std::fs::read(pa.join(f)).unwrap() == std::fs::read(pb.join(f)).unwrap();
        }
    }
    // Reconciliation on its own.
    let code = ReconConfig::default().build_code(0.0651).unwrap();
    let (x, y) = fso_cvqkd::reconciliation::session::gaussian_pairs(0.0651, 2 * code.frame_len(), RngSeed(5));
    let r1 = reconcile(&code, &x, &y, 0.0651f64.sqrt(), 1.0, 0.0651, 8, RngSeed(5)).unwrap();
    let r2 = reconcile(&code, &x, &y, 0.0651f64.sqrt(), 1.0, 0.0651, 8, RngSeed(5)).unwrap();
    identical &= r1 == r2;
    let elapsed = start.elapsed();
    verdict(
        8,
        "determinism",
        identical,
        format!("{} scenarios run twice plus a reconciliation batch; byte-identical: {identical}; {elapsed:.1?}", scenarios.len()),
    );
}
