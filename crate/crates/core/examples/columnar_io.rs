//! Writes a simulated channel trace, frame and measurement record in the
//! columnar binary format and reads them back.

use std::fs::File;

use fso_cvqkd::io::{
    config_hash, frame_columns, frame_from_columns, read_columns, record_columns, record_from_columns, trace_columns,
    trace_from_columns, write_columns, FRAME_MAGIC, RECORD_MAGIC, TRACE_MAGIC,
};
use fso_cvqkd::scenario::{simulate_link, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::preset("inland-6-night")?;
    cfg.modulation.n_symbols = 10_000;
    let link = simulate_link(&cfg)?;
    let hash = config_hash(&cfg)?;
    let dir = std::env::temp_dir().join("fso-cvqkd-columnar");
    std::fs::create_dir_all(&dir)?;

    write_columns(File::create(dir.join("trace.bin"))?, &trace_columns(&link.trace, hash))?;
    write_columns(File::create(dir.join("frame.bin"))?, &frame_columns(&link.frame, hash))?;
    write_columns(File::create(dir.join("record.bin"))?, &record_columns(&link.record, hash))?;

    let trace = trace_from_columns(&read_columns(File::open(dir.join("trace.bin"))?, TRACE_MAGIC)?)?;
    let frame = frame_from_columns(&read_columns(File::open(dir.join("frame.bin"))?, FRAME_MAGIC)?)?;
    let cols = read_columns(File::open(dir.join("record.bin"))?, RECORD_MAGIC)?;
    let record = record_from_columns(&cols)?;
    assert_eq!(trace, link.trace);
    assert_eq!(frame, link.frame);
    assert_eq!(record, link.record);
    println!("round trip ok in {}: {} slots, config {}", dir.display(), cols.rows(), hex::encode(cols.config_hash));
    Ok(())
}
