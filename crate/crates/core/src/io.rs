//! Columnar binary and CSV serialization of frames, records and traces.
//!
//! Binary layout, all integers and reals little-endian:
//!
//! | offset | size   | field                                            |
//! |--------|--------|--------------------------------------------------|
//! | 0      | 8      | magic: `CVQKDFRM`, `CVQKDREC` or `CVQKDTRC`      |
//! | 8      | 4      | format version (u32, currently 1)                |
//! | 12     | 4      | column count `c` (u32)                           |
//! | 16     | 8      | row count `n` (u64)                              |
//! | 24     | 32     | SHA-256 of the generating configuration          |
//! | 56     | 8      | aux (u64): frame id, or f64 bits of the trace's injected excess noise |
//! | 64     | 8·c·n  | `c` columns of `n` f64 values, column after column |
//!
//! Column order: frames `x_a, p_a, pilot, vacuum`; records
//! `y, basis, monitor_peak, vacuum, pilot, clipped`; traces
//! `transmittance, phase`. Flags are stored as 0.0 or 1.0 and the basis as
//! 0.0 for X, 1.0 for P.

use std::io::{Read, Write};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::channel::ChannelTrace;
use crate::error::{Error, Result};
use crate::transceiver::{Basis, MeasurementRecord, SymbolFrame};
use crate::units::Snu;

pub const FORMAT_VERSION: u32 = 1;
pub const FRAME_MAGIC: [u8; 8] = *b"CVQKDFRM";
pub const RECORD_MAGIC: [u8; 8] = *b"CVQKDREC";
pub const TRACE_MAGIC: [u8; 8] = *b"CVQKDTRC";

pub type ConfigHash = [u8; 32];

/// SHA-256 of the JSON serialization of a configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<ConfigHash> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(Sha256::digest(&bytes).into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub magic: [u8; 8],
    pub config_hash: ConfigHash,
    pub aux: u64,
    pub columns: Vec<Vec<f64>>,
}

impl Columns {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

pub fn write_columns<W: Write>(mut out: W, cols: &Columns) -> Result<()> {
    let n = cols.rows();
    if cols.columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("columns", "columns differ in length"));
    }
    out.write_all(&cols.magic)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(cols.columns.len() as u32).to_le_bytes())?;
    out.write_all(&(n as u64).to_le_bytes())?;
    out.write_all(&cols.config_hash)?;
    out.write_all(&cols.aux.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * n);
    for c in &cols.columns {
        buf.clear();
        for v in c {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Reads a column file and checks its magic against `expected`.
pub fn read_columns<R: Read>(mut input: R, expected: [u8; 8]) -> Result<Columns> {
    let magic: [u8; 8] = read_array(&mut input)?;
    if magic != expected {
        return Err(Error::Parse {
            line: 0,
            reason: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&expected)
            ),
        });
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != FORMAT_VERSION {
        return Err(Error::Parse { line: 0, reason: format!("unsupported format version {version}") });
    }
    let c = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let n = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let config_hash: ConfigHash = read_array(&mut input)?;
    let aux = u64::from_le_bytes(read_array(&mut input)?);
    let mut columns = Vec::with_capacity(c);
    let mut buf = vec![0u8; 8 * n];
    for _ in 0..c {
        input.read_exact(&mut buf)?;
        columns.push(
            buf.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect(),
        );
    }
    Ok(Columns { magic, config_hash, aux, columns })
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn expect_columns(cols: &Columns, want: usize) -> Result<()> {
    if cols.columns.len() != want {
        return Err(Error::Parse {
            line: 0,
            reason: format!("expected {want} columns, found {}", cols.columns.len()),
        });
    }
    Ok(())
}

pub fn frame_columns(frame: &SymbolFrame, hash: ConfigHash) -> Columns {
    Columns {
        magic: FRAME_MAGIC,
        config_hash: hash,
        aux: frame.frame_id,
        columns: vec![
            frame.x_a.clone(),
            frame.p_a.clone(),
            frame.pilot_mask.iter().map(|&b| flag(b)).collect(),
            frame.vacuum_mask.iter().map(|&b| flag(b)).collect(),
        ],
    }
}

pub fn frame_from_columns(cols: &Columns) -> Result<SymbolFrame> {
    expect_columns(cols, 4)?;
    let c = &cols.columns;
    Ok(SymbolFrame {
        x_a: c[0].clone(),
        p_a: c[1].clone(),
        pilot_mask: c[2].iter().map(|&v| v != 0.0).collect(),
        vacuum_mask: c[3].iter().map(|&v| v != 0.0).collect(),
        frame_id: cols.aux,
    })
}

pub fn record_columns(rec: &MeasurementRecord, hash: ConfigHash) -> Columns {
    Columns {
        magic: RECORD_MAGIC,
        config_hash: hash,
        aux: 0,
        columns: vec![
            rec.y.clone(),
            rec.basis.iter().map(|b| f64::from(b.bit())).collect(),
            rec.monitor_peak.clone(),
            rec.is_vacuum_probe.iter().map(|&b| flag(b)).collect(),
            rec.pilot_mask.iter().map(|&b| flag(b)).collect(),
            rec.clipped.iter().map(|&b| flag(b)).collect(),
        ],
    }
}

pub fn record_from_columns(cols: &Columns) -> Result<MeasurementRecord> {
    expect_columns(cols, 6)?;
    let c = &cols.columns;
    Ok(MeasurementRecord {
        y: c[0].clone(),
        basis: c[1].iter().map(|&v| Basis::from_bit(u8::from(v != 0.0))).collect(),
        monitor_peak: c[2].clone(),
        is_vacuum_probe: c[3].iter().map(|&v| v != 0.0).collect(),
        pilot_mask: c[4].iter().map(|&v| v != 0.0).collect(),
        clipped: c[5].iter().map(|&v| v != 0.0).collect(),
    })
}

pub fn trace_columns(trace: &ChannelTrace, hash: ConfigHash) -> Columns {
    Columns {
        magic: TRACE_MAGIC,
        config_hash: hash,
        aux: trace.excess_noise_injected.get().to_bits(),
        columns: vec![trace.transmittance.clone(), trace.phase.clone()],
    }
}

pub fn trace_from_columns(cols: &Columns) -> Result<ChannelTrace> {
    expect_columns(cols, 2)?;
    Ok(ChannelTrace {
        transmittance: cols.columns[0].clone(),
        phase: cols.columns[1].clone(),
        excess_noise_injected: Snu::new(f64::from_bits(cols.aux))?,
    })
}

pub fn write_frame_csv<W: Write>(out: W, frame: &SymbolFrame) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "x_a", "p_a", "pilot", "vacuum"])?;
    for k in 0..frame.len() {
        w.write_record([
            k.to_string(),
            frame.x_a[k].to_string(),
            frame.p_a[k].to_string(),
            u8::from(frame.pilot_mask[k]).to_string(),
            u8::from(frame.vacuum_mask[k]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_record_csv<W: Write>(out: W, rec: &MeasurementRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "y", "basis", "monitor_peak", "vacuum", "pilot", "clipped"])?;
    for k in 0..rec.len() {
        w.write_record([
            k.to_string(),
            rec.y[k].to_string(),
            rec.basis[k].bit().to_string(),
            rec.monitor_peak[k].to_string(),
            u8::from(rec.is_vacuum_probe[k]).to_string(),
            u8::from(rec.pilot_mask[k]).to_string(),
            u8::from(rec.clipped[k]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(out: W, trace: &ChannelTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "transmittance", "loss_db", "phase"])?;
    for k in 0..trace.len() {
        let t = trace.transmittance[k];
        w.write_record([
            k.to_string(),
            t.to_string(),
            (-10.0 * t.log10()).max(0.0).to_string(),
            trace.phase[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel, generate_trace, FadingConfig, PhaseDriftConfig};
    use crate::transceiver::{generate_frame, homodyne_measure, DetectorModel, ModulationConfig, MonitorTap, SlotLayout, QPSK_PHASES};
    use crate::units::{DbLoss, RngSeed};

    fn sample() -> (SymbolFrame, MeasurementRecord, ChannelTrace) {
        let m = ModulationConfig {
            v_a: Snu::new(4.0).unwrap(),
            n_symbols: 2000,
            pilot_amplitude: 30.0,
            pilot_pattern: QPSK_PHASES.to_vec(),
            layout: SlotLayout::default(),
        };
        let frame = generate_frame(&m, 0.05, RngSeed(3)).unwrap();
        let fading = FadingConfig::constant(DbLoss::new(3.0).unwrap(), 5e6);
        let drift = PhaseDriftConfig { drift_rate_std: 0.01, offset: 0.2 };
        let trace = generate_trace(&fading, &drift, frame.len(), RngSeed(4)).unwrap();
        let rx = apply_channel(&frame.amplitudes(), &trace, RngSeed(5)).unwrap();
        let det = DetectorModel {
            eta: 0.6,
            nu_el: Snu::new(0.1).unwrap(),
            adc_bits: Some(12),
            adc_fullscale: 10.0,
            pilot_fullscale: 40.0,
            n0_raw: 1.0,
            monitor: MonitorTap::default(),
        };
        let rec = homodyne_measure(&rx, &frame, &det, &trace, RngSeed(6)).unwrap();
        (frame, rec, trace)
    }

    #[test]
    fn binary_round_trip() {
        let (frame, rec, trace) = sample();
        let hash = config_hash(&"cfg").unwrap();
        let mut buf = Vec::new();
        write_columns(&mut buf, &frame_columns(&frame, hash)).unwrap();
        assert_eq!(buf.len(), 64 + 8 * 4 * frame.len());
        assert_eq!(&buf[..8], b"CVQKDFRM");
        let cols = read_columns(buf.as_slice(), FRAME_MAGIC).unwrap();
        assert_eq!(cols.config_hash, hash);
        assert_eq!(frame_from_columns(&cols).unwrap(), frame);

        let mut buf = Vec::new();
        write_columns(&mut buf, &record_columns(&rec, hash)).unwrap();
        let back = record_from_columns(&read_columns(buf.as_slice(), RECORD_MAGIC).unwrap()).unwrap();
        assert_eq!(back, rec);

        let mut buf = Vec::new();
        write_columns(&mut buf, &trace_columns(&trace, hash)).unwrap();
        let back = trace_from_columns(&read_columns(buf.as_slice(), TRACE_MAGIC).unwrap()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let (frame, ..) = sample();
        let mut buf = Vec::new();
        write_columns(&mut buf, &frame_columns(&frame, [0; 32])).unwrap();
        assert!(read_columns(buf.as_slice(), RECORD_MAGIC).is_err());
        assert!(read_columns(&buf[..buf.len() - 3], FRAME_MAGIC).is_err());
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_columns(bad.as_slice(), FRAME_MAGIC).is_err());
    }

    #[test]
    fn header_fields_are_little_endian() {
        let cols = Columns { magic: TRACE_MAGIC, config_hash: [7; 32], aux: 5, columns: vec![vec![1.5, -2.0]] };
        let mut buf = Vec::new();
        write_columns(&mut buf, &cols).unwrap();
        assert_eq!(&buf[8..12], &[1, 0, 0, 0]);
        assert_eq!(&buf[12..16], &[1, 0, 0, 0]);
        assert_eq!(&buf[16..24], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&buf[56..64], &[5, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&buf[64..72], &1.5f64.to_le_bytes());
    }

    #[test]
    fn config_hash_tracks_content() {
        assert_eq!(config_hash(&(1, 2.0)).unwrap(), config_hash(&(1, 2.0)).unwrap());
        assert_ne!(config_hash(&(1, 2.0)).unwrap(), config_hash(&(1, 2.5)).unwrap());
    }

    #[test]
    fn csv_outputs() {
        let (frame, rec, trace) = sample();
        let mut buf = Vec::new();
        write_frame_csv(&mut buf, &frame).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), frame.len() + 1);
        let mut buf = Vec::new();
        write_record_csv(&mut buf, &rec).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("slot,y,basis,monitor_peak"));
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let second: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert!((second[2].parse::<f64>().unwrap() - 3.0).abs() < 1e-9);
    }
}
