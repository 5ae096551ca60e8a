use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use fso_cvqkd::io::{
    config_hash, frame_columns, record_columns, trace_columns, write_columns, write_frame_csv, write_record_csv,
    write_trace_csv,
};
use fso_cvqkd::keyrate::{secret_rate, RatePoint};
use fso_cvqkd::reconciliation::{reconcile_bench, write_recon_reports, BenchConfig};
use fso_cvqkd::scenario::{run_scenario, simulate_link, ScenarioConfig, PRESETS};
use fso_cvqkd::table::{reproduce_table, write_comparison, write_line_errors, FixedParams, BUNDLED_TABLE};
use fso_cvqkd::units::RngSeed;
use fso_cvqkd::Error;

#[derive(Parser)]
#[command(name = "fso-cvqkd", version, about = "Free-space CV-QKD simulation and key-rate analysis")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Root seed; overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a full scenario and write groups.csv and summary.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Built-in preset used when no --config is given.
        #[arg(long, default_value = "inland-6-night")]
        preset: String,
        /// Print the resolved configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Evaluate summary-table rows and compare with their reported values.
    ReproduceTable {
        #[command(flatten)]
        common: Common,
        /// Row CSV; the bundled nine-row table when omitted.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Secret key rate for the operating points listed in the config.
    Keyrate {
        #[command(flatten)]
        common: Common,
    },
    /// Reconciliation FER and efficiency on synthetic Gaussian data.
    ReconcileBench {
        #[command(flatten)]
        common: Common,
    },
    /// Write the channel trace, Alice's frame and Bob's record of a scenario.
    TraceGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "inland-6-night")]
        preset: String,
        /// Number of quantum symbols, overriding the configuration.
        #[arg(long)]
        symbols: Option<usize>,
        /// Also write CSV copies.
        #[arg(long)]
        csv: bool,
    },
}

/// Failure with the pipeline stage it came from.
struct Failure {
    stage: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn new(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Failure { stage, message: e.to_string(), code: 1 }
    }

    fn config(e: impl std::fmt::Display) -> Self {
        Failure { stage: "config", message: e.to_string(), code: 2 }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Stage { stage, source } => {
                let code = if stage == "config" { 2 } else { 1 };
                Failure { stage, message: source.to_string(), code }
            }
            Error::Config(_) | Error::InvalidParameter { .. } => Failure::config(e),
            Error::Io(_) => Failure::new("io", e),
            other => Failure::new("run", other),
        }
    }
}

type CliResult = Result<(), Failure>;

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn scenario(common: &Common, preset: &str) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => ScenarioConfig::load(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        None => ScenarioConfig::preset(preset).map_err(Failure::config)?,
    };
    if let Some(s) = common.seed {
        cfg.seed = RngSeed(s);
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path, Failure> {
    fs::create_dir_all(&common.out).map_err(|e| Failure::new("io", format!("{}: {e}", common.out.display())))?;
    Ok(&common.out)
}

fn create(path: PathBuf) -> Result<fs::File, Failure> {
    fs::File::create(&path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

fn simulate(common: Common, preset: String, print_config: bool) -> CliResult {
    let cfg = scenario(&common, &preset)?;
    if print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let report = run_scenario(&cfg)?;
    let dir = out_dir(&common)?;
    report.write_to_dir(dir)?;
    println!(
        "{} groups, R_tot = {:.4} bps; wrote {}",
        report.groups.len(),
        report.r_tot,
        dir.display()
    );
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TableConfig {
    fixed: FixedParams,
    rows: Option<PathBuf>,
}

fn reproduce(common: Common, rows: Option<PathBuf>) -> CliResult {
    let cfg: TableConfig = match &common.config {
        Some(p) => read_toml(p)?,
        None => TableConfig::default(),
    };
    let text = match rows.or(cfg.rows) {
        Some(p) => fs::read_to_string(&p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        None => BUNDLED_TABLE.to_string(),
    };
    let cmp = reproduce_table(text.as_bytes(), &cfg.fixed)?;
    let dir = out_dir(&common)?;
    write_comparison(create(dir.join("table.csv"))?, &cmp)?;
    write_line_errors(create(dir.join("table_errors.csv"))?, &cmp)?;
    for r in &cmp.rows {
        println!(
            "{:<18} snr {:.4} ({:+.2}%)  R {:>9.3} bps ({:+.2}%)",
            r.label,
            r.snr,
            100.0 * r.snr_rel_dev.unwrap_or(f64::NAN),
            r.r_secret,
            100.0 * r.r_rel_dev.unwrap_or(f64::NAN)
        );
    }
    for e in &cmp.errors {
        eprintln!("line {}: {}", e.line, e.reason);
    }
    if cmp.errors.is_empty() {
        Ok(())
    } else {
        Err(Failure { stage: "parse", message: format!("{} malformed rows", cmp.errors.len()), code: 1 })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyrateConfig {
    points: Vec<RatePoint>,
}

fn keyrate(common: Common) -> CliResult {
    let path = common.config.as_ref().ok_or_else(|| Failure::config("keyrate needs --config with [[points]]"))?;
    let cfg: KeyrateConfig = read_toml(path)?;
    let dir = out_dir(&common)?;
    let mut w = csv::Writer::from_writer(create(dir.join("keyrate.csv"))?);
    w.write_record(["point", "snr", "i_ab", "chi_be", "r_secret", "positive"])
        .map_err(|e| Failure::new("io", e))?;
    for (i, p) in cfg.points.iter().enumerate() {
        let r = p.inputs().and_then(|inp| secret_rate(&inp)).map_err(|e| e.in_stage("rate"))?;
        println!("point {i}: snr {:.5}  I_AB {:.6}  chi_BE {:.6}  R {:.4} bps", r.snr, r.i_ab, r.chi_be, r.r_secret);
        w.write_record([
            i.to_string(),
            r.snr.to_string(),
            r.i_ab.to_string(),
            r.chi_be.to_string(),
            r.r_secret.to_string(),
            r.positive.to_string(),
        ])
        .map_err(|e| Failure::new("io", e))?;
    }
    w.flush().map_err(|e| Failure::new("io", e))?;
    Ok(())
}

fn bench(common: Common) -> CliResult {
    let cfg: BenchConfig = match &common.config {
        Some(p) => read_toml(p)?,
        None => BenchConfig::default(),
    };
    let seed = RngSeed(common.seed.unwrap_or(1));
    let mut reports = Vec::new();
    for &snr in &cfg.snrs {
        let (rep, _) = reconcile_bench(&cfg.recon, snr, cfg.frames, seed).map_err(|e| e.in_stage("reconciliation"))?;
        println!(
            "snr {snr:.4}: R_eff {:.5}  beta {:.4}  FER {:.3} ({}/{} failed, {} undetected)",
            rep.r_eff, rep.beta, rep.fer, rep.frames_failed, rep.frames_total, rep.undetected_errors
        );
        reports.push(rep);
    }
    let dir = out_dir(&common)?;
    write_recon_reports(create(dir.join("reconcile.csv"))?, &reports)?;
    Ok(())
}

fn trace_gen(common: Common, preset: String, symbols: Option<usize>, csv: bool) -> CliResult {
    let mut cfg = scenario(&common, &preset)?;
    if let Some(n) = symbols {
        cfg.modulation.n_symbols = n;
    }
    let link = simulate_link(&cfg)?;
    let hash = config_hash(&cfg)?;
    let dir = out_dir(&common)?;
    write_columns(create(dir.join("trace.bin"))?, &trace_columns(&link.trace, hash))?;
    write_columns(create(dir.join("frame.bin"))?, &frame_columns(&link.frame, hash))?;
    write_columns(create(dir.join("record.bin"))?, &record_columns(&link.record, hash))?;
    if csv {
        write_trace_csv(create(dir.join("trace.csv"))?, &link.trace)?;
        write_frame_csv(create(dir.join("frame.csv"))?, &link.frame)?;
        write_record_csv(create(dir.join("record.csv"))?, &link.record)?;
    }
    println!("{} slots; config {}; wrote {}", link.trace.len(), hex::encode(hash), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.verb {
        Verb::Simulate { common, preset, print_config } => simulate(common, preset, print_config),
        Verb::ReproduceTable { common, rows } => reproduce(common, rows),
        Verb::Keyrate { common } => keyrate(common),
        Verb::ReconcileBench { common } => bench(common),
        Verb::TraceGen { common, preset, symbols, csv } => trace_gen(common, preset, symbols, csv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.stage, f.message);
            if f.stage == "config" {
                eprintln!("presets: {}", PRESETS.join(", "));
            }
            ExitCode::from(f.code)
        }
    }
}
