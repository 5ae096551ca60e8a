//! Batch evaluation of summary-table rows: each row's dynamical parameters
//! are fed through the rate engine and compared against the reported
//! columns.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::keyrate::{secret_rate, RateInputs};
use crate::units::{db_to_transmittance, DbLoss};

/// Parameters shared by every row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedParams {
    pub eta: f64,
    pub f: f64,
    pub alpha_overhead: f64,
}

impl Default for FixedParams {
    fn default() -> Self {
        FixedParams {
            eta: 0.375,
            f: 2.5e6,
            alpha_overhead: 0.5,
        }
    }
}

/// One input row. `snr` and `r_bps` are reported reference values and may
/// be left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub loss_db: f64,
    #[serde(default)]
    pub probability: Option<f64>,
    pub v_a: f64,
    pub nu_el: f64,
    #[serde(default)]
    pub snr: Option<f64>,
    pub eps: f64,
    #[serde(default)]
    pub alpha_g: Option<f64>,
    pub beta: f64,
    pub fer: f64,
    #[serde(default)]
    pub r_bps: Option<f64>,
}

impl TableRow {
    pub fn rate_inputs(&self, fixed: &FixedParams) -> Result<RateInputs> {
        let inputs = RateInputs {
            f: fixed.f,
            alpha_overhead: fixed.alpha_overhead,
            beta: self.beta,
            fer: self.fer,
            v_a: self.v_a,
            t: db_to_transmittance(DbLoss::new(self.loss_db)?),
            eps: self.eps,
            eta: fixed.eta,
            nu_el: self.nu_el,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowComparison {
    pub line: usize,
    pub label: String,
    pub snr: f64,
    pub i_ab: f64,
    pub chi_be: f64,
    pub r_secret: f64,
    pub snr_ref: Option<f64>,
    pub r_ref: Option<f64>,
    /// `computed / reference − 1`.
    pub snr_rel_dev: Option<f64>,
    pub r_rel_dev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TableComparison {
    pub rows: Vec<RowComparison>,
    pub errors: Vec<LineError>,
}

impl TableComparison {
    pub fn max_abs_snr_dev(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.snr_rel_dev).fold(0.0, |m, d| m.max(d.abs()))
    }

    pub fn max_abs_rate_dev(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.r_rel_dev).fold(0.0, |m, d| m.max(d.abs()))
    }
}

fn rel_dev(computed: f64, reference: Option<f64>) -> Option<f64> {
    reference.filter(|r| *r != 0.0).map(|r| computed / r - 1.0)
}

/// Parses rows from CSV. Malformed lines are collected rather than aborting
/// the whole batch. Line numbers count the header as line 1.
pub fn parse_rows<R: Read>(input: R) -> Result<(Vec<(usize, TableRow)>, Vec<LineError>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let fallback = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(fallback, |p| p.line() as usize);
                errors.push(LineError { line, reason: e.to_string() });
                continue;
            }
        };
        let line = rec.position().map_or(fallback, |p| p.line() as usize);
        match rec.deserialize::<TableRow>(Some(&headers)) {
            Ok(row) => rows.push((line, row)),
            Err(e) => errors.push(LineError { line, reason: e.to_string() }),
        }
    }
    Ok((rows, errors))
}

/// Evaluates every row. Rows whose parameters are out of range are reported
/// as line errors alongside the parse failures.
pub fn reproduce_table<R: Read>(input: R, fixed: &FixedParams) -> Result<TableComparison> {
    let (rows, mut errors) = parse_rows(input)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let res = row.rate_inputs(fixed).and_then(|inp| secret_rate(&inp));
        match res {
            Ok(r) => out.push(RowComparison {
                line,
                label: row.label.clone(),
                snr: r.snr,
                i_ab: r.i_ab,
                chi_be: r.chi_be,
                r_secret: r.r_secret,
                snr_ref: row.snr,
                r_ref: row.r_bps,
                snr_rel_dev: rel_dev(r.snr, row.snr),
                r_rel_dev: rel_dev(r.r_secret, row.r_bps),
            }),
            Err(e) => errors.push(LineError { line, reason: e.to_string() }),
        }
    }
    errors.sort_by_key(|e| e.line);
    Ok(TableComparison { rows: out, errors })
}

pub fn reproduce_table_file(path: impl AsRef<Path>, fixed: &FixedParams) -> Result<TableComparison> {
    let f = std::fs::File::open(path)?;
    reproduce_table(f, fixed)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with one line per evaluated row followed by nothing else; line
/// errors are written separately by [`write_line_errors`].
pub fn write_comparison<W: Write>(out: W, cmp: &TableComparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "line", "label", "snr", "i_ab", "chi_be", "r_secret", "snr_ref", "r_ref", "snr_rel_dev", "r_rel_dev",
    ])?;
    for r in &cmp.rows {
        w.write_record([
            r.line.to_string(),
            r.label.clone(),
            r.snr.to_string(),
            r.i_ab.to_string(),
            r.chi_be.to_string(),
            r.r_secret.to_string(),
            opt(r.snr_ref),
            opt(r.r_ref),
            opt(r.snr_rel_dev),
            opt(r.r_rel_dev),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_line_errors<W: Write>(out: W, cmp: &TableComparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line", "reason"])?;
    for e in &cmp.errors {
        w.write_record([e.line.to_string(), e.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// The nine published summary rows, bundled with the crate.
pub const BUNDLED_TABLE: &str = include_str!("../data/table1.csv");

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled() -> TableComparison {
        reproduce_table(BUNDLED_TABLE.as_bytes(), &FixedParams::default()).unwrap()
    }

    fn row<'a>(cmp: &'a TableComparison, label: &str) -> &'a RowComparison {
        cmp.rows.iter().find(|r| r.label == label).unwrap()
    }

    #[test]
    fn bundled_rows_parse() {
        let cmp = bundled();
        assert!(cmp.errors.is_empty(), "{:?}", cmp.errors);
        assert_eq!(cmp.rows.len(), 9);
        assert_eq!(cmp.rows[0].line, 2);
    }

    #[test]
    fn sixth_inland_snr() {
        let cmp = bundled();
        let r = row(&cmp, "inland-6 night");
        assert!((r.snr / 0.0651 - 1.0).abs() < 0.01, "{}", r.snr);
    }

    #[test]
    fn second_maritime_snr() {
        let cmp = bundled();
        let r = row(&cmp, "maritime-2 day");
        assert!((r.snr / 0.0283 - 1.0).abs() < 0.01, "{}", r.snr);
    }

    #[test]
    fn every_row_has_positive_rate() {
        for r in &bundled().rows {
            assert!(r.r_secret > 0.0, "{}: {}", r.label, r.r_secret);
        }
    }

    #[test]
    fn malformed_rows_reported_per_line() {
        let text = "label,loss_db,v_a,nu_el,eps,beta,fer\n\
                    ok,16.5,8.9,0.15,0.02,0.95,0.5\n\
                    bad,abc,8.9,0.15,0.02,0.95,0.5\n\
                    short,16.5\n\
                    range,16.5,8.9,0.15,0.02,1.5,0.5\n";
        let cmp = reproduce_table(text.as_bytes(), &FixedParams::default()).unwrap();
        assert_eq!(cmp.rows.len(), 1);
        let lines: Vec<usize> = cmp.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![3, 4, 5]);
        assert!(cmp.rows[0].snr_rel_dev.is_none());
    }

    #[test]
    fn comparison_csv() {
        let cmp = bundled();
        let mut buf = Vec::new();
        write_comparison(&mut buf, &cmp).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("line,label,snr,i_ab,chi_be,r_secret"));
        assert_eq!(text.lines().count(), 10);
    }
}
