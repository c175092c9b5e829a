use std::io::Write;

use super::{build_matrix, match_coincidences, CoincidenceMatrix, TagStream, TagsError};
use crate::par::{self, Execution};
use crate::quantum::{ChshSettings, DetectorId, MeasurementSetting, Outcome, SettingLabel};

/// Correlation estimated from coincidence counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedCorrelation {
    pub value: f64,
    pub std_error: f64,
    pub total_counts: u64,
}

/// Detector pairs whose counts enter one correlation with `+` or `−` sign.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTerm {
    pub alice: SettingLabel,
    pub bob: SettingLabel,
    pub coefficient: f64,
    pub plus: Vec<(DetectorId, DetectorId)>,
    pub minus: Vec<(DetectorId, DetectorId)>,
}

impl CorrelationTerm {
    /// A detector pair counts positively when the product of the two
    /// sign-labeled outcomes is +1.
    pub fn from_settings(a: &MeasurementSetting, b: &MeasurementSetting, coefficient: f64) -> Self {
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for ao in Outcome::BOTH {
            for bo in Outcome::BOTH {
                let pair = (a.port(ao), b.port(bo));
                match a.labeled(ao).times(b.labeled(bo)) {
                    Outcome::Plus => plus.push(pair),
                    Outcome::Minus => minus.push(pair),
                }
            }
        }
        Self {
            alice: a.label,
            bob: b.label,
            coefficient,
            plus,
            minus,
        }
    }

    pub fn name(&self) -> String {
        format!("E({},{})", self.alice, self.bob)
    }
}

/// The four correlation terms of the CHSH combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ChshLayout {
    pub terms: [CorrelationTerm; 4],
}

impl ChshLayout {
    pub fn from_settings(settings: &ChshSettings) -> Self {
        Self {
            terms: settings
                .terms()
                .map(|(a, b, c)| CorrelationTerm::from_settings(&a, &b, c)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChshEstimate {
    pub s: f64,
    pub std_error: f64,
    pub terms: Vec<(String, EstimatedCorrelation)>,
}

/// `(Σplus − Σminus)/(Σplus + Σminus)` with Poisson error
/// `√(4·Σplus·Σminus/(Σplus+Σminus)³)`.
pub fn correlation_from_counts(
    m: &CoincidenceMatrix,
    plus: &[(DetectorId, DetectorId)],
    minus: &[(DetectorId, DetectorId)],
) -> Result<EstimatedCorrelation, TagsError> {
    let mut seen: Vec<&(DetectorId, DetectorId)> = plus.iter().chain(minus).collect();
    seen.sort();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(TagsError::InvalidArgument(
            "detector pairs of a correlation must be disjoint".into(),
        ));
    }
    let p: u64 = plus.iter().map(|&(a, b)| m.get(a, b)).sum();
    let n: u64 = minus.iter().map(|&(a, b)| m.get(a, b)).sum();
    let total = p + n;
    if total == 0 {
        return Err(TagsError::InsufficientStatistics(
            "no coincidences in the correlation's detector pairs".into(),
        ));
    }
    let (pf, nf, tf) = (p as f64, n as f64, total as f64);
    Ok(EstimatedCorrelation {
        value: (pf - nf) / tf,
        std_error: (4.0 * pf * nf / (tf * tf * tf)).sqrt(),
        total_counts: total,
    })
}

/// S with the four term errors added in quadrature.
pub fn chsh_from_counts(m: &CoincidenceMatrix, layout: &ChshLayout) -> Result<ChshEstimate, TagsError> {
    let mut s = 0.0;
    let mut var = 0.0;
    let mut terms = Vec::with_capacity(4);
    for term in &layout.terms {
        let e = correlation_from_counts(m, &term.plus, &term.minus)?;
        s += term.coefficient * e.value;
        var += e.std_error * e.std_error;
        terms.push((term.name(), e));
    }
    Ok(ChshEstimate {
        s,
        std_error: var.sqrt(),
        terms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPoint {
    pub window_ps: u64,
    pub coincidences: u64,
    pub chsh: ChshEstimate,
}

/// Re-matches the same streams at each window and evaluates S.
pub fn window_sweep(
    a: &TagStream,
    b: &TagStream,
    windows: &[u64],
    delay: i64,
    layout: &ChshLayout,
    exec: Execution,
) -> Result<Vec<WindowPoint>, TagsError> {
    if windows.is_empty() {
        return Err(TagsError::InvalidArgument("window list is empty".into()));
    }
    let accumulation = a.duration_ps().min(b.duration_ps());
    par::map_slice(exec, windows, |&w| {
        let pairs = match_coincidences(a, b, w, delay);
        let m = build_matrix(&pairs, w, delay, accumulation);
        Ok(WindowPoint {
            window_ps: w,
            coincidences: m.total(),
            chsh: chsh_from_counts(&m, layout)?,
        })
    })
    .into_iter()
    .collect()
}

/// Expected accidental coincidences per detector pair from singles counts,
/// `n_a · n_b · window / T`. Diagnostic only; estimates are never corrected.
pub fn accidental_coincidences(
    a: &TagStream,
    b: &TagStream,
    window_ps: u64,
) -> Vec<((DetectorId, DetectorId), f64)> {
    let t = a.duration_ps().min(b.duration_ps()).max(1) as f64;
    let mut out = Vec::new();
    for (ca, na) in a.singles() {
        for (cb, nb) in b.singles() {
            out.push(((ca, cb), na as f64 * nb as f64 * (window_ps + 1) as f64 / t));
        }
    }
    out
}

/// `term,value,std_error` rows for each correlation followed by S.
pub fn write_estimates_csv<W: Write>(est: &ChshEstimate, mut out: W) -> std::io::Result<()> {
    writeln!(out, "term,value,std_error")?;
    for (name, e) in &est.terms {
        writeln!(out, "{name},{},{}", e.value, e.std_error)?;
    }
    writeln!(out, "S,{},{}", est.s, est.std_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::SettingSet;

    fn d(i: u16) -> DetectorId {
        DetectorId(i)
    }

    #[test]
    fn perfect_correlation_has_zero_error() {
        let mut m = CoincidenceMatrix::empty(64, 0, 1);
        m.add(d(3), d(1), 100);
        m.add(d(4), d(2), 100);
        let e = correlation_from_counts(&m, &[(d(3), d(1)), (d(4), d(2))], &[(d(3), d(2)), (d(4), d(1))])
            .unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn uniform_counts() {
        let mut m = CoincidenceMatrix::empty(64, 0, 1);
        for (a, b) in [(3, 1), (4, 2), (3, 2), (4, 1)] {
            m.add(d(a), d(b), 50);
        }
        let e = correlation_from_counts(&m, &[(d(3), d(1)), (d(4), d(2))], &[(d(3), d(2)), (d(4), d(1))])
            .unwrap();
        assert_eq!(e.value, 0.0);
        assert!((e.std_error - 1.0 / 200f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_and_overlap() {
        let m = CoincidenceMatrix::empty(64, 0, 1);
        assert!(matches!(
            correlation_from_counts(&m, &[(d(1), d(1))], &[(d(2), d(2))]),
            Err(TagsError::InsufficientStatistics(_))
        ));
        assert!(matches!(
            correlation_from_counts(&m, &[(d(1), d(1))], &[(d(1), d(1))]),
            Err(TagsError::InvalidArgument(_))
        ));
    }

    #[test]
    fn layout_reproduces_count_formulas() {
        let layout = ChshLayout::from_settings(&SettingSet::standard().chsh());
        let sorted = |mut v: Vec<(DetectorId, DetectorId)>| {
            v.sort();
            v
        };
        let t = &layout.terms;
        assert_eq!(sorted(t[0].plus.clone()), vec![(d(3), d(1)), (d(4), d(2))]);
        assert_eq!(sorted(t[1].plus.clone()), vec![(d(3), d(3)), (d(4), d(4))]);
        assert_eq!(sorted(t[2].plus.clone()), vec![(d(5), d(2)), (d(6), d(1))]);
        assert_eq!(sorted(t[2].minus.clone()), vec![(d(5), d(1)), (d(6), d(2))]);
        assert_eq!(sorted(t[3].plus.clone()), vec![(d(5), d(4)), (d(6), d(3))]);
        assert_eq!(t[3].coefficient, -1.0);
    }

    fn matrix_for(es: [f64; 4], n: u64, layout: &ChshLayout) -> CoincidenceMatrix {
        let mut m = CoincidenceMatrix::empty(64, 0, 1);
        for (term, e) in layout.terms.iter().zip(es) {
            let plus = ((1.0 + e) / 2.0 * n as f64).round() as u64;
            let minus = n - plus;
            m.add(term.plus[0].0, term.plus[0].1, plus);
            m.add(term.minus[0].0, term.minus[0].1, minus);
        }
        m
    }

    #[test]
    fn chsh_examples() {
        let layout = ChshLayout::from_settings(&SettingSet::standard().chsh());
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let m = matrix_for([r, r, r, -r], 1_000_000, &layout);
        let s = chsh_from_counts(&m, &layout).unwrap();
        assert!((s.s - 2.8284).abs() < 1e-4, "{}", s.s);

        let m = matrix_for([0.0; 4], 1000, &layout);
        assert_eq!(chsh_from_counts(&m, &layout).unwrap().s, 0.0);
    }

    #[test]
    fn estimates_csv() {
        let layout = ChshLayout::from_settings(&SettingSet::standard().chsh());
        let m = matrix_for([0.0; 4], 1000, &layout);
        let mut buf = Vec::new();
        write_estimates_csv(&chsh_from_counts(&m, &layout).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("term,value,std_error\nE(a0,b0),0,"));
        assert_eq!(text.lines().count(), 6);
    }
}
