//! Evaluates the bundled nine-row summary table through the rate engine and
//! prints computed values next to the reported ones.

use fso_cvqkd::table::{reproduce_table, FixedParams, BUNDLED_TABLE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cmp = reproduce_table(BUNDLED_TABLE.as_bytes(), &FixedParams::default())?;
    println!("{:<16} {:>8} {:>8} {:>9} {:>9} {:>10} {:>10}", "row", "SNR", "ref", "I_AB", "chi_BE", "R (bps)", "ref");
    for r in &cmp.rows {
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>9.6} {:>9.6} {:>10.3} {:>10.3}",
            r.label,
            r.snr,
            r.snr_ref.unwrap_or(f64::NAN),
            r.i_ab,
            r.chi_be,
            r.r_secret,
            r.r_ref.unwrap_or(f64::NAN)
        );
    }
    println!(
        "max |SNR deviation| {:.3}%, max |R deviation| {:.3}%",
        100.0 * cmp.max_abs_snr_dev(),
        100.0 * cmp.max_abs_rate_dev()
    );
    Ok(())
}
