//! Sparse parity-check codes, syndrome belief-propagation decoding and rate
//! adaptation by puncturing and shortening.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::units::RngSeed;

/// Magnitude given to shortened (known) positions.
pub const KNOWN_LLR: f64 = 1e4;

/// Parity-check matrix in compressed row form with a column index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityCheck {
    n: usize,
    check_start: Vec<usize>,
    /// Variable of each edge, edges ordered by check.
    edge_var: Vec<u32>,
    var_start: Vec<usize>,
    /// Edge ids grouped by variable.
    var_edges: Vec<u32>,
}

impl ParityCheck {
    /// Builds from the variable list of each check. Duplicate entries and
    /// out-of-range indices are rejected.
    pub fn from_rows(n: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let mut check_start = Vec::with_capacity(rows.len() + 1);
        let mut edge_var = Vec::new();
        check_start.push(0);
        for (c, row) in rows.iter().enumerate() {
            let mut sorted = row.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid("parity check", format!("check {c} repeats a variable")));
            }
            if sorted.last().is_some_and(|&v| v >= n) {
                return Err(Error::invalid("parity check", format!("check {c} references a variable >= {n}")));
            }
            edge_var.extend(sorted.iter().map(|&v| v as u32));
            check_start.push(edge_var.len());
        }
        let mut degree = vec![0usize; n];
        for &v in &edge_var {
            degree[v as usize] += 1;
        }
        let mut var_start = vec![0usize; n + 1];
        for v in 0..n {
            var_start[v + 1] = var_start[v] + degree[v];
        }
        let mut fill = var_start.clone();
        let mut var_edges = vec![0u32; edge_var.len()];
        for (e, &v) in edge_var.iter().enumerate() {
            var_edges[fill[v as usize]] = e as u32;
            fill[v as usize] += 1;
        }
        Ok(ParityCheck {
            n,
            check_start,
            edge_var,
            var_start,
            var_edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.check_start.len() - 1
    }

    pub fn edges(&self) -> usize {
        self.edge_var.len()
    }

    pub fn row(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        self.edge_var[self.check_start[c]..self.check_start[c + 1]]
            .iter()
            .map(|&v| v as usize)
    }

    pub fn var_degree(&self, v: usize) -> usize {
        self.var_start[v + 1] - self.var_start[v]
    }

    pub fn check_degree(&self, c: usize) -> usize {
        self.check_start[c + 1] - self.check_start[c]
    }

    pub fn satisfies(&self, bits: &[u8], syndrome: &[u8]) -> bool {
        (0..self.m()).all(|c| self.row(c).fold(0u8, |acc, v| acc ^ (bits[v] & 1)) == syndrome[c] & 1)
    }

    pub fn syndrome(&self, bits: &[u8]) -> Vec<u8> {
        (0..self.m())
            .map(|c| self.row(c).fold(0u8, |acc, v| acc ^ (bits[v] & 1)))
            .collect()
    }

    /// Parses the alist format: `n m`, `max_col max_row`, the column and
    /// row degree lists, then `n` column lines and `m` row lines of
    /// 1-based indices. Zero entries used as padding are ignored.
    pub fn from_alist(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next_nums = |what: &str| -> Result<(usize, Vec<usize>)> {
            let (ln, l) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("unexpected end of file reading {what}"),
            })?;
            let nums = l
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|e| Error::Parse {
                        line: ln,
                        reason: format!("`{t}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((ln, nums))
        };
        let (ln, dims) = next_nums("dimensions")?;
        let [n, m] = dims[..] else {
            return Err(Error::Parse { line: ln, reason: "expected `n m`".into() });
        };
        next_nums("maximum degrees")?;
        let (_, col_deg) = next_nums("column degrees")?;
        let (_, row_deg) = next_nums("row degrees")?;
        ensure_len("alist column degrees", n, col_deg.len())?;
        ensure_len("alist row degrees", m, row_deg.len())?;
        let mut cols = Vec::with_capacity(n);
        for _ in 0..n {
            cols.push(next_nums("column")?);
        }
        let mut rows = Vec::with_capacity(m);
        for (c, &deg) in row_deg.iter().enumerate() {
            let (ln, r) = next_nums("row")?;
            let r: Vec<usize> = r.into_iter().filter(|&x| x != 0).map(|x| x - 1).collect();
            if r.len() != deg {
                return Err(Error::Parse {
                    line: ln,
                    reason: format!("row {} has {} entries, header says {deg}", c + 1, r.len()),
                });
            }
            rows.push(r);
        }
        let h = ParityCheck::from_rows(n, &rows)?;
        // Column lists must agree with the rows.
        for (v, (ln, col)) in cols.iter().enumerate() {
            let mut listed: Vec<usize> = col.iter().filter(|&&x| x != 0).map(|x| x - 1).collect();
            listed.sort_unstable();
            let mut actual: Vec<usize> = h.var_edges[h.var_start[v]..h.var_start[v + 1]]
                .iter()
                .map(|&e| h.check_of_edge(e as usize))
                .collect();
            actual.sort_unstable();
            if listed != actual || listed.len() != col_deg[v] {
                return Err(Error::Parse {
                    line: *ln,
                    reason: format!("column {} disagrees with the row lists", v + 1),
                });
            }
        }
        Ok(h)
    }

    fn check_of_edge(&self, e: usize) -> usize {
        self.check_start.partition_point(|&s| s <= e) - 1
    }

    pub fn to_alist(&self) -> String {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for c in 0..self.m() {
            for v in self.row(c) {
                cols[v].push(c);
            }
        }
        let max_col = cols.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = (0..self.m()).map(|c| self.check_degree(c)).max().unwrap_or(0);
        let mut s = String::new();
        let join = |xs: &mut dyn Iterator<Item = usize>| xs.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{} {}", self.n, self.m());
        let _ = writeln!(s, "{max_col} {max_row}");
        let _ = writeln!(s, "{}", join(&mut cols.iter().map(Vec::len)));
        let _ = writeln!(s, "{}", join(&mut (0..self.m()).map(|c| self.check_degree(c))));
        for col in &cols {
            let _ = writeln!(s, "{}", join(&mut col.iter().map(|c| c + 1)));
        }
        for c in 0..self.m() {
            let _ = writeln!(s, "{}", join(&mut self.row(c).map(|v| v + 1)));
        }
        s
    }

    pub fn load_alist(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_alist(&std::fs::read_to_string(path)?)
    }
}

/// Multi-edge-type construction for very low rates.
///
/// A small set of high-degree "core" variables is protected by a few
/// core checks; every remaining variable has degree one and hangs off its
/// own check, which also ties together a handful of core variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetParams {
    pub n: usize,
    /// Fraction of variables that are core variables.
    pub core_fraction: f64,
    /// Fraction of core variables with two core-check edges; the rest have
    /// three.
    pub degree_two_fraction: f64,
    /// Edges from each core variable to the degree-one checks.
    pub core_spread: usize,
    pub core_check_degree: usize,
}

impl MetParams {
    /// Mother code used for rates around 0.02 to 0.05.
    pub fn low_rate(n: usize) -> Self {
        MetParams {
            n,
            core_fraction: 0.07,
            degree_two_fraction: 0.6,
            core_spread: 34,
            core_check_degree: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 64 {
            return Err(Error::invalid("n", "block too short"));
        }
        if !(self.core_fraction > 0.0 && self.core_fraction < 0.5) {
            return Err(Error::invalid("core_fraction", "must lie in (0, 0.5)"));
        }
        if !(0.0..=1.0).contains(&self.degree_two_fraction) {
            return Err(Error::invalid("degree_two_fraction", "must lie in [0, 1]"));
        }
        if self.core_spread == 0 || self.core_check_degree < 2 {
            return Err(Error::invalid("core_spread", "degrees must be positive"));
        }
        Ok(())
    }
}

/// Builds a MET-style code by random socket matching. Repeated edges are
/// removed by swapping sockets. Returns the matrix and the number of core
/// variables, which occupy the first columns.
pub fn build_met(params: &MetParams, seed: RngSeed) -> Result<(ParityCheck, usize)> {
    params.validate()?;
    let mut rng = seed.stream("ldpc.met");
    let n = params.n;
    let n_core = ((n as f64) * params.core_fraction).round() as usize;
    let n_deg1 = n - n_core;
    let n_two = ((n_core as f64) * params.degree_two_fraction).round() as usize;

    // Core-check sockets.
    let mut core_sockets: Vec<usize> = Vec::new();
    for v in 0..n_core {
        let d = if v < n_two { 2 } else { 3 };
        core_sockets.extend(std::iter::repeat_n(v, d));
    }
    core_sockets.shuffle(&mut rng);
    let m_core = core_sockets.len().div_ceil(params.core_check_degree);
    let mut core_rows: Vec<Vec<usize>> = vec![Vec::new(); m_core];
    for (i, &v) in core_sockets.iter().enumerate() {
        core_rows[i % m_core].push(v);
    }

    // Spread sockets onto the degree-one checks.
    let mut spread: Vec<usize> = Vec::with_capacity(n_core * params.core_spread);
    for v in 0..n_core {
        spread.extend(std::iter::repeat_n(v, params.core_spread));
    }
    spread.shuffle(&mut rng);
    let mut deg1_rows: Vec<Vec<usize>> = (0..n_deg1).map(|j| vec![n_core + j]).collect();
    for (i, &v) in spread.iter().enumerate() {
        deg1_rows[i % n_deg1].push(v);
    }

    remove_repeats(&mut core_rows, 0, &mut rng);
    // The degree-one variable heads each row and never moves.
    remove_repeats(&mut deg1_rows, 1, &mut rng);
    let mut rows = core_rows;
    rows.extend(deg1_rows);
    Ok((ParityCheck::from_rows(n, &rows)?, n_core))
}

/// Removes repeated variables within a row by swapping sockets with other
/// rows of the same group. Entries before `fixed` in each row stay put.
fn remove_repeats(rows: &mut [Vec<usize>], fixed: usize, rng: &mut impl Rng) {
    let m = rows.len();
    for _pass in 0..50 {
        let mut clean = true;
        for c in 0..m {
            let mut k = fixed;
            while k < rows[c].len() {
                let v = rows[c][k];
                if !rows[c][..k].contains(&v) {
                    k += 1;
                    continue;
                }
                clean = false;
                for _try in 0..100 {
                    let c2 = rng.random_range(0..m);
                    if c2 == c || rows[c2].len() <= fixed {
                        continue;
                    }
                    let k2 = rng.random_range(fixed..rows[c2].len());
                    let w = rows[c2][k2];
                    if w != v && !rows[c2].contains(&v) && !rows[c].contains(&w) {
                        rows[c2][k2] = v;
                        rows[c][k] = w;
                        break;
                    }
                }
                k += 1;
            }
        }
        if clean {
            return;
        }
    }
    // Last resort: drop remaining repeats.
    for row in rows.iter_mut() {
        let mut seen = std::collections::HashSet::new();
        row.retain(|v| seen.insert(*v));
    }
}

/// Check-node rule. Sum-product is the default: at SNRs below 0.1 the
/// min-sum approximation gives up most of the efficiency margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    NormalizedMinSum,
    #[default]
    SumProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub max_iterations: usize,
    pub min_sum_scale: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            kind: DecoderKind::SumProduct,
            max_iterations: 500,
            min_sum_scale: 0.8,
        }
    }
}

/// A mother code plus the puncturing and shortening currently applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpcCode {
    pub h: ParityCheck,
    /// Candidate positions to puncture, in order of use.
    pub puncture_order: Vec<usize>,
    /// Candidate positions to shorten, in order of use.
    pub shorten_order: Vec<usize>,
    pub punctured: usize,
    pub shortened: usize,
    pub decoder: DecoderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    Transmitted,
    Punctured,
    Shortened,
}

impl LdpcCode {
    /// Wraps a matrix. Core variables (the first `n_core` columns) are the
    /// puncturing candidates; the rest are shortening candidates. Both
    /// orders are seeded shuffles.
    pub fn new(h: ParityCheck, n_core: usize, decoder: DecoderConfig, seed: RngSeed) -> Self {
        let mut rng = seed.stream("ldpc.adapt");
        let mut puncture_order: Vec<usize> = (0..n_core).collect();
        let mut shorten_order: Vec<usize> = (n_core..h.n()).collect();
        puncture_order.shuffle(&mut rng);
        shorten_order.shuffle(&mut rng);
        LdpcCode {
            h,
            puncture_order,
            shorten_order,
            punctured: 0,
            shortened: 0,
            decoder,
        }
    }

    pub fn met(params: &MetParams, decoder: DecoderConfig, seed: RngSeed) -> Result<Self> {
        let (h, n_core) = build_met(params, seed)?;
        Ok(Self::new(h, n_core, decoder, seed))
    }

    pub fn n(&self) -> usize {
        self.h.n()
    }

    /// Design dimension `n − m`.
    pub fn k(&self) -> usize {
        self.h.n().saturating_sub(self.h.m())
    }

    pub fn mother_rate(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }

    /// Channel uses per frame.
    pub fn frame_len(&self) -> usize {
        self.n() - self.punctured - self.shortened
    }

    /// `(k − s) / (n − p − s)`.
    pub fn effective_rate(&self) -> f64 {
        (self.k() as f64 - self.shortened as f64) / self.frame_len() as f64
    }

    /// Role of every codeword position under the current adaptation.
    pub fn positions(&self) -> Vec<Position> {
        let mut pos = vec![Position::Transmitted; self.n()];
        for &i in &self.puncture_order[..self.punctured] {
            pos[i] = Position::Punctured;
        }
        for &i in &self.shorten_order[..self.shortened] {
            pos[i] = Position::Shortened;
        }
        pos
    }

    /// Applies the puncturing/shortening that brings the effective rate
    /// closest to `rate`.
    pub fn with_rate(&self, rate: f64) -> Result<LdpcCode> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::UnreachableRate(format!("rate {rate} outside (0, 1)")));
        }
        let (n, k) = (self.n() as f64, self.k() as f64);
        let mut best: Option<(f64, usize, usize)> = None;
        let mut consider = |p: usize, s: usize| {
            if p > self.puncture_order.len() || s > self.shorten_order.len() || s >= self.k() {
                return;
            }
            let r = (k - s as f64) / (n - (p + s) as f64);
            let err = (r - rate).abs();
            if best.is_none_or(|b| err < b.0) {
                best = Some((err, p, s));
            }
        };
        if rate <= k / n {
            let s = (k - rate * n) / (1.0 - rate);
            consider(0, s.floor().max(0.0) as usize);
            consider(0, s.ceil().max(0.0) as usize);
        } else {
            let p = n - k / rate;
            consider(p.floor().max(0.0) as usize, 0);
            consider(p.ceil().max(0.0) as usize, 0);
        }
        let (_, p, s) = best.ok_or_else(|| unreachable(rate, self))?;
        let mut out = self.clone();
        out.punctured = p;
        out.shortened = s;
        let step = 1.0 / out.frame_len() as f64;
        if (out.effective_rate() - rate).abs() > step {
            return Err(unreachable(rate, self));
        }
        Ok(out)
    }

    pub fn decode(&self, llr: &[f64], syndrome: &[u8]) -> Result<DecodeOutcome> {
        ldpc_decode(&self.h, llr, syndrome, &self.decoder)
    }
}

fn unreachable(rate: f64, code: &LdpcCode) -> Error {
    Error::UnreachableRate(format!(
        "rate {rate:.6} not reachable from mother rate {:.6} with {} puncturable and {} shortenable positions",
        code.mother_rate(),
        code.puncture_order.len(),
        code.shorten_order.len()
    ))
}

/// Shannon capacity of the real AWGN channel, bits per use.
pub fn capacity(snr: f64) -> f64 {
    0.5 * (1.0 + snr).log2()
}

/// Picks the adaptation whose effective rate is closest to
/// `beta_target · C(snr)`.
pub fn adapt_rate(code: &LdpcCode, snr: f64, beta_target: f64) -> Result<LdpcCode> {
    if !(snr > 0.0) {
        return Err(Error::invalid("snr", format!("must be > 0, got {snr}")));
    }
    if !(beta_target > 0.9 && beta_target < 1.0) {
        return Err(Error::UnreachableRate(format!(
            "efficiency target {beta_target} outside (0.9, 1)"
        )));
    }
    code.with_rate(beta_target * capacity(snr))
}

/// Reconciliation efficiency actually achieved by a code at `snr`.
pub fn efficiency(code: &LdpcCode, snr: f64) -> f64 {
    code.effective_rate() / capacity(snr)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub bits: Vec<u8>,
    pub iterations: usize,
    pub converged: bool,
}

/// Layered belief propagation that searches for the word with the given
/// syndrome. Positive LLRs favour 0. Success means the hard decision
/// satisfies every check.
pub fn ldpc_decode(h: &ParityCheck, llr: &[f64], syndrome: &[u8], cfg: &DecoderConfig) -> Result<DecodeOutcome> {
    ensure_len("llr", h.n(), llr.len())?;
    ensure_len("syndrome", h.m(), syndrome.len())?;
    let mut post = llr.to_vec();
    let mut msg = vec![0.0f64; h.edges()];
    let max_deg = (0..h.m()).map(|c| h.check_degree(c)).max().unwrap_or(0);
    let mut q = vec![0.0f64; max_deg];
    let mut r = vec![0.0f64; max_deg];
    let mut bits = vec![0u8; h.n()];
    let hard = |post: &[f64], bits: &mut [u8]| {
        for (b, &l) in bits.iter_mut().zip(post) {
            *b = u8::from(l < 0.0);
        }
    };
    hard(&post, &mut bits);
    if h.syndrome(&bits) == syndrome {
        return Ok(DecodeOutcome { bits, iterations: 0, converged: true });
    }
    for it in 1..=cfg.max_iterations {
        for c in 0..h.m() {
            let (lo, hi) = (h.check_start[c], h.check_start[c + 1]);
            let deg = hi - lo;
            for (i, e) in (lo..hi).enumerate() {
                q[i] = post[h.edge_var[e] as usize] - msg[e];
            }
            let flip = syndrome[c] & 1 == 1;
            match cfg.kind {
                DecoderKind::NormalizedMinSum => min_sum_check(&q[..deg], &mut r[..deg], cfg.min_sum_scale, flip),
                DecoderKind::SumProduct => sum_product_check(&mut q[..deg], &mut r[..deg], flip),
            }
            for (i, e) in (lo..hi).enumerate() {
                let v = h.edge_var[e] as usize;
                post[v] += r[i] - msg[e];
                msg[e] = r[i];
            }
        }
        hard(&post, &mut bits);
        if h.satisfies(&bits, syndrome) {
            return Ok(DecodeOutcome { bits, iterations: it, converged: true });
        }
    }
    Ok(DecodeOutcome {
        bits,
        iterations: cfg.max_iterations,
        converged: false,
    })
}

fn min_sum_check(q: &[f64], r: &mut [f64], scale: f64, flip: bool) {
    let mut min1 = f64::INFINITY;
    let mut min2 = f64::INFINITY;
    let mut at = 0;
    let mut neg = flip;
    for (i, &v) in q.iter().enumerate() {
        let a = v.abs();
        if a < min1 {
            min2 = min1;
            min1 = a;
            at = i;
        } else if a < min2 {
            min2 = a;
        }
        neg ^= v < 0.0;
    }
    for (i, &v) in q.iter().enumerate() {
        let mag = scale * if i == at { min2 } else { min1 };
        let s = neg ^ (v < 0.0);
        r[i] = if s { -mag } else { mag };
    }
}

const TANH_CLAMP: f64 = 1.0 - 1e-15;

fn sum_product_check(q: &mut [f64], r: &mut [f64], flip: bool) {
    // Exclusive products by forward and backward passes; `q` is reused to
    // hold the tanh values.
    let n = q.len();
    for v in q.iter_mut() {
        *v = (0.5 * *v).tanh();
    }
    let mut fwd = 1.0;
    for i in 0..n {
        r[i] = fwd;
        fwd *= q[i];
    }
    let mut bwd = 1.0;
    for i in (0..n).rev() {
        let p = (r[i] * bwd).clamp(-TANH_CLAMP, TANH_CLAMP);
        let v = 2.0 * p.atanh();
        r[i] = if flip { -v } else { v };
        bwd *= q[i];
    }
}
