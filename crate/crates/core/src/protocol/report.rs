use std::fmt;
use std::io::Write;

use super::wire::ReportPayload;
use crate::quantum::SecurityQuantities;
use crate::tags::{chsh_from_counts, ChshLayout, CoincidenceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Abort,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Abort => "abort",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Figures for one accumulation block, or for the whole session when
/// `block` is `None`. Undefined quantities are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockReport {
    pub block: Option<u32>,
    pub s: f64,
    pub s_err: f64,
    pub qber: f64,
    pub raw_bits: u64,
    pub raw_bps: f64,
    pub i_ab: f64,
    pub i_eve: f64,
    pub secure_fraction: f64,
    pub secure_bps: f64,
    pub verdict: Verdict,
}

/// Assembles a report. `chsh` is `(S, σ_S)`; a missing S or QBER forces an
/// abort with zero secure rate. The verdict is abort iff
/// `S − abort_sigma·σ_S ≤ 2` or the secure fraction is zero.
pub fn build_report(
    block: Option<u32>,
    chsh: Option<(f64, f64)>,
    qber: Option<f64>,
    raw_bits: u64,
    duration_s: f64,
    abort_sigma: f64,
) -> BlockReport {
    let (s, s_err) = chsh.unwrap_or((f64::NAN, f64::NAN));
    let qber = qber.unwrap_or(f64::NAN);
    let raw_bps = raw_bits as f64 / duration_s;
    let q = SecurityQuantities::evaluate(s, s_err, qber).ok();
    let (i_ab, i_eve, fraction) = q.map_or((f64::NAN, f64::NAN, 0.0), |q| (q.i_ab, q.i_eve, q.secure_fraction));
    let violated = s - abort_sigma * s_err > 2.0;
    let verdict = if violated && fraction > 0.0 {
        Verdict::Accept
    } else {
        Verdict::Abort
    };
    BlockReport {
        block,
        s,
        s_err,
        qber,
        raw_bits,
        raw_bps,
        i_ab,
        i_eve,
        secure_fraction: fraction,
        secure_bps: raw_bps * fraction,
        verdict,
    }
}

impl BlockReport {
    pub fn to_payload(&self) -> ReportPayload {
        ReportPayload {
            block: self.block.unwrap_or(u32::MAX),
            s: self.s,
            s_err: self.s_err,
            qber: self.qber,
            raw_bits: self.raw_bits,
            raw_bps: self.raw_bps,
            i_ab: self.i_ab,
            i_eve: self.i_eve,
            secure_fraction: self.secure_fraction,
            secure_bps: self.secure_bps,
            verdict: match self.verdict {
                Verdict::Accept => 0,
                Verdict::Abort => 1,
            },
        }
    }

    /// Bitwise equality, NaN included.
    pub fn same_as(&self, other: &ReportPayload) -> bool {
        let a = self.to_payload();
        let f = |x: f64, y: f64| x.to_bits() == y.to_bits();
        a.block == other.block
            && f(a.s, other.s)
            && f(a.s_err, other.s_err)
            && f(a.qber, other.qber)
            && a.raw_bits == other.raw_bits
            && f(a.raw_bps, other.raw_bps)
            && f(a.i_ab, other.i_ab)
            && f(a.i_eve, other.i_eve)
            && f(a.secure_fraction, other.secure_fraction)
            && f(a.secure_bps, other.secure_bps)
            && a.verdict == other.verdict
    }

    fn csv_row<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let id = self.block.map_or_else(|| "all".to_string(), |b| b.to_string());
        writeln!(
            out,
            "{id},{},{},{},{},{},{},{},{},{},{}",
            self.s,
            self.s_err,
            self.qber,
            self.raw_bits,
            self.raw_bps,
            self.i_ab,
            self.i_eve,
            self.secure_fraction,
            self.secure_bps,
            self.verdict
        )
    }
}

/// Running totals from which the session aggregate is computed.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    pub matrix: CoincidenceMatrix,
    pub sample_errors: u64,
    pub sample_size: u64,
    pub raw_bits: u64,
    pub duration_s: f64,
}

impl Accumulator {
    pub fn add(&mut self, matrix: &CoincidenceMatrix, errors: u64, sample: u64, raw_bits: u64, duration_s: f64) {
        if self.matrix.counts.is_empty() {
            self.matrix.window_ps = matrix.window_ps;
            self.matrix.delay_ps = matrix.delay_ps;
        }
        self.matrix.merge(matrix);
        self.sample_errors += errors;
        self.sample_size += sample;
        self.raw_bits += raw_bits;
        self.duration_s += duration_s;
    }

    pub fn report(&self, layout: &ChshLayout, abort_sigma: f64) -> BlockReport {
        block_report(
            None,
            &self.matrix,
            layout,
            self.sample_errors,
            self.sample_size,
            self.raw_bits,
            self.duration_s,
            abort_sigma,
        )
    }
}

/// Report from a test-pool matrix and a sample comparison.
#[allow(clippy::too_many_arguments)]
pub fn block_report(
    block: Option<u32>,
    matrix: &CoincidenceMatrix,
    layout: &ChshLayout,
    sample_errors: u64,
    sample_size: u64,
    raw_bits: u64,
    duration_s: f64,
    abort_sigma: f64,
) -> BlockReport {
    let chsh = chsh_from_counts(matrix, layout).ok().map(|c| (c.s, c.std_error));
    let qber = (sample_size > 0).then(|| sample_errors as f64 / sample_size as f64);
    build_report(block, chsh, qber, raw_bits, duration_s, abort_sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecurityReport {
    pub blocks: Vec<BlockReport>,
    pub aggregate: Option<BlockReport>,
}

pub const REPORT_CSV_HEADER: &str =
    "block_id,S,S_err,qber,raw_bits,raw_bps,i_ab,i_eve,secure_fraction,secure_bps,verdict";

impl SecurityReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{REPORT_CSV_HEADER}")?;
        for b in self.blocks.iter().chain(&self.aggregate) {
            b.csv_row(&mut out)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    /// Index of the first aborted block.
    pub fn first_abort(&self) -> Option<u32> {
        self.blocks
            .iter()
            .find(|b| b.verdict == Verdict::Abort)
            .and_then(|b| b.block)
    }

    /// The session verdict: the aggregate's if present.
    pub fn verdict(&self) -> Verdict {
        self.aggregate.map_or(Verdict::Abort, |a| a.verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::TSIRELSON;

    #[test]
    fn report_examples() {
        let r = build_report(Some(0), Some((TSIRELSON, 0.0)), Some(0.0), 1000, 1.0, 0.0);
        assert!((r.secure_bps - 1000.0).abs() < 1e-9);
        assert_eq!(r.verdict, Verdict::Accept);

        let r = build_report(Some(0), Some((2.0, 0.01)), Some(0.0), 1000, 1.0, 0.0);
        assert_eq!(r.secure_bps, 0.0);
        assert_eq!(r.verdict, Verdict::Abort);

        let r = build_report(Some(0), None, Some(0.0), 1000, 1.0, 0.0);
        assert_eq!(r.verdict, Verdict::Abort);
        assert!(r.s.is_nan());
    }

    #[test]
    fn sigma_margin_can_force_abort() {
        let r = build_report(Some(0), Some((2.1, 0.05)), Some(0.01), 1000, 1.0, 0.0);
        assert_eq!(r.verdict, Verdict::Abort); // fraction is zero this close to 2
        let r = build_report(Some(0), Some((2.7, 0.05)), Some(0.01), 1000, 1.0, 0.0);
        assert_eq!(r.verdict, Verdict::Accept);
        let r = build_report(Some(0), Some((2.7, 0.3)), Some(0.01), 1000, 1.0, 3.0);
        assert_eq!(r.verdict, Verdict::Abort);
    }

    #[test]
    fn csv_layout() {
        let r = build_report(Some(3), Some((TSIRELSON, 0.0)), Some(0.0), 10, 1.0, 0.0);
        let rep = SecurityReport {
            blocks: vec![r],
            aggregate: Some(BlockReport { block: None, ..r }),
        };
        let text = rep.to_csv_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_CSV_HEADER);
        assert!(lines[1].starts_with("3,"));
        assert!(lines[2].starts_with("all,"));
        assert!(lines[2].ends_with(",accept"));
    }
}
