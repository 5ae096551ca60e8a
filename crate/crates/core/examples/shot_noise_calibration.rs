//! Shot-noise calibration from interleaved vacuum probes and a dark record,
//! on a detector whose raw units are not shot-noise normalized.

use fso_cvqkd::channel::{apply_channel, generate_trace, FadingConfig, PhaseDriftConfig};
use fso_cvqkd::recovery::{calibrate_shot_noise, monitor_transmittance, ShotNoiseMethod};
use fso_cvqkd::transceiver::{
    generate_frame, homodyne_measure, measure_dark, DetectorModel, ModulationConfig, MonitorTap, SlotLayout, QPSK_PHASES,
};
use fso_cvqkd::units::{DbLoss, RngSeed, Snu};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let modulation = ModulationConfig {
        v_a: Snu::new(6.0)?,
        n_symbols: 400_000,
        pilot_amplitude: 200.0,
        pilot_pattern: QPSK_PHASES.to_vec(),
        layout: SlotLayout::default(),
    };
    let det = DetectorModel {
        eta: 0.375,
        nu_el: Snu::new(0.2)?,
        adc_bits: Some(12),
        adc_fullscale: 60.0,
        pilot_fullscale: 400.0,
        n0_raw: 37.5,
        monitor: MonitorTap::default(),
    };
    let frame = generate_frame(&modulation, 0.05, RngSeed(1))?;
    let fading = FadingConfig::constant(DbLoss::new(18.0)?, 5e6);
    let trace = generate_trace(&fading, &PhaseDriftConfig::default(), frame.len(), RngSeed(2))?;
    let rx = apply_channel(&frame.amplitudes(), &trace, RngSeed(3))?;
    let rec = homodyne_measure(&rx, &frame, &det, &trace, RngSeed(4))?;
    let dark = measure_dark(&det, 200_000, RngSeed(5))?;
    let monitor = monitor_transmittance(&rec.monitor_peak, det.monitor.gain)?;
    let cal = calibrate_shot_noise(&rec, &monitor, ShotNoiseMethod::VacuumProbes, Some(&dark))?;
    println!("vacuum probes used: {}", cal.samples);
    println!("N0: estimated {:.4}, true {:.4} (raw units)", cal.n0_hat, det.n0_raw);
    println!("nu_el: estimated {:.4}, true {:.4} (SNU)", cal.nu_el_hat, det.nu_el.get());
    Ok(())
}
