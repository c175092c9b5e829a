use serde::{Deserialize, Serialize};

use super::{TagStream, TagsError};
use crate::par::{self, Execution};

/// Default histogram bin, a quarter of the 64 ps coincidence window.
pub const DEFAULT_DELAY_BIN_PS: u64 = 16;

/// Histograms wider than this are searched coarse-to-fine.
const MAX_DIRECT_BINS: usize = 1 << 20;
const COARSE_BINS: usize = 1 << 16;
const SHARDS: usize = 64;

/// Parameters of the cross-correlation delay search. Delays are
/// `t_bob − t_alice` in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelaySearch {
    pub min_delay_ps: i64,
    pub max_delay_ps: i64,
    pub bin_ps: u64,
    /// Cap on the reference (Alice) tags used for the wide first pass.
    pub max_reference_tags: usize,
}

impl DelaySearch {
    pub fn symmetric(range_ps: u64, bin_ps: u64) -> Self {
        Self {
            min_delay_ps: -(range_ps as i64),
            max_delay_ps: range_ps as i64,
            bin_ps,
            max_reference_tags: 1 << 17,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub delay_ps: i64,
    pub peak_counts: u64,
    pub mean_counts: f64,
}

/// Peak of the `t_b − t_a` histogram over `[−search_range, search_range]`.
pub fn estimate_delay(
    a: &TagStream,
    b: &TagStream,
    search_range: u64,
    bin_width: u64,
) -> Result<i64, TagsError> {
    let search = DelaySearch::symmetric(search_range, bin_width);
    estimate_delay_times(&a.times(), &b.times(), &search, Execution::default()).map(|e| e.delay_ps)
}

/// Delay search over sorted time lists. Ties resolve to the smaller delay;
/// the result does not depend on `exec`.
pub fn estimate_delay_times(
    a: &[u64],
    b: &[u64],
    search: &DelaySearch,
    exec: Execution,
) -> Result<DelayEstimate, TagsError> {
    if a.is_empty() || b.is_empty() {
        return Err(TagsError::InsufficientData("empty tag stream".into()));
    }
    if search.bin_ps == 0 || search.max_delay_ps < search.min_delay_ps {
        return Err(TagsError::InvalidArgument(format!("bad delay search {search:?}")));
    }
    let span = (search.max_delay_ps - search.min_delay_ps) as u64 + 1;
    let fine_bins = span.div_ceil(search.bin_ps) as usize;
    let reference = &a[..a.len().min(search.max_reference_tags.max(1))];

    if fine_bins <= MAX_DIRECT_BINS {
        let hist = histogram(reference, b, search.min_delay_ps, search.bin_ps, fine_bins, exec);
        let (idx, peak, mean) = significant_peak(&hist)?;
        let center = bin_center(search.min_delay_ps, search.bin_ps, idx);
        return Ok(DelayEstimate {
            delay_ps: refine(a, b, center, peak_width(&hist, idx, mean, search.bin_ps)),
            peak_counts: peak,
            mean_counts: mean,
        });
    }

    let factor = fine_bins.div_ceil(COARSE_BINS) as u64;
    let coarse_bin = search.bin_ps * factor;
    let coarse_n = span.div_ceil(coarse_bin) as usize;
    let coarse = histogram(reference, b, search.min_delay_ps, coarse_bin, coarse_n, exec);
    let (cidx, _, _) = significant_peak(&coarse)?;

    // refine over the peak coarse bin and its neighbours using every tag
    let lo = search.min_delay_ps + (cidx as i64 - 1).max(0) * coarse_bin as i64;
    let n = (3 * factor) as usize;
    let fine = histogram(a, b, lo, search.bin_ps, n, exec);
    let (idx, peak, mean) = argmax(&fine);
    let center = bin_center(lo, search.bin_ps, idx);
    Ok(DelayEstimate {
        delay_ps: refine(a, b, center, peak_width(&fine, idx, mean, search.bin_ps)),
        peak_counts: peak,
        mean_counts: mean,
    })
}

fn bin_center(lo: i64, bin: u64, idx: usize) -> i64 {
    lo + (idx as u64 * bin + bin / 2) as i64
}

/// Full width at half maximum of the peak above the flat background, at
/// least 1.5 bins.
fn peak_width(hist: &[u64], idx: usize, mean: f64, bin: u64) -> i64 {
    let level = (hist[idx] as f64 + mean) / 2.0;
    let mut lo = idx;
    while lo > 0 && hist[lo - 1] as f64 >= level {
        lo -= 1;
    }
    let mut hi = idx;
    while hi + 1 < hist.len() && hist[hi + 1] as f64 >= level {
        hi += 1;
    }
    ((hi - lo + 1) as u64 * bin).max(3 * bin / 2) as i64
}

/// Mean shift over differences within `half` of the current estimate, so the
/// result is neither quantized to the histogram grid nor pulled by noise in
/// the peak bin of a broad peak.
fn refine(a: &[u64], b: &[u64], center: i64, half: i64) -> i64 {
    let mut c = center;
    for _ in 0..8 {
        let next = window_mean(a, b, c - half, c + half).unwrap_or(c);
        if next == c {
            break;
        }
        c = next;
    }
    c
}

fn window_mean(a: &[u64], b: &[u64], lo: i64, hi: i64) -> Option<i64> {
    let mut sum: i128 = 0;
    let mut n: i128 = 0;
    let mut j = 0usize;
    for &ta in a {
        let ta = ta as i64;
        while j < b.len() && (b[j] as i64) - ta < lo {
            j += 1;
        }
        let mut k = j;
        while k < b.len() {
            let d = b[k] as i64 - ta;
            if d > hi {
                break;
            }
            sum += d as i128;
            n += 1;
            k += 1;
        }
    }
    if n == 0 {
        return None;
    }
    // round half away from zero
    let q = sum / n;
    let r = sum % n;
    Some((q + if 2 * r.abs() >= n { r.signum() } else { 0 }) as i64)
}

fn argmax(hist: &[u64]) -> (usize, u64, f64) {
    let mut best = 0;
    for (i, &c) in hist.iter().enumerate() {
        if c > hist[best] {
            best = i;
        }
    }
    let total: u64 = hist.iter().sum();
    (best, hist[best], total as f64 / hist.len() as f64)
}

/// Peak must clear the mean by 5σ (Poisson), raised to a look-elsewhere
/// corrected level for histograms with many bins.
fn significant_peak(hist: &[u64]) -> Result<(usize, u64, f64), TagsError> {
    let (idx, peak, mean) = argmax(hist);
    let z = 5.0f64.max((2.0 * (hist.len() as f64).ln()).sqrt() + 1.0);
    let threshold = mean + z * mean.max(1.0).sqrt();
    if (peak as f64) < threshold {
        return Err(TagsError::NoCorrelation {
            peak,
            mean,
            threshold,
        });
    }
    Ok((idx, peak, mean))
}

fn histogram(a: &[u64], b: &[u64], lo: i64, bin: u64, nbins: usize, exec: Execution) -> Vec<u64> {
    let hi = lo + (bin * nbins as u64) as i64; // exclusive
    let chunk = a.len().div_ceil(SHARDS).max(1);
    par::map_chunks_reduce(
        exec,
        a,
        chunk,
        |shard| {
            let mut hist = vec![0u64; nbins];
            let Some(&first) = shard.first() else {
                return hist;
            };
            let start = (first as i64 + lo).max(0) as u64;
            let mut j = b.partition_point(|&t| t < start);
            for &ta in shard {
                let ta = ta as i64;
                while j < b.len() && (b[j] as i64) - ta < lo {
                    j += 1;
                }
                let mut k = j;
                while k < b.len() {
                    let d = b[k] as i64 - ta;
                    if d >= hi {
                        break;
                    }
                    hist[((d - lo) as u64 / bin) as usize] += 1;
                    k += 1;
                }
            }
            hist
        },
        vec![0u64; nbins],
        |mut acc, part| {
            for (x, y) in acc.iter_mut().zip(part) {
                *x += y;
            }
            acc
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{DetectorId, Party};
    use crate::tags::TimeTag;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_times(rng: &mut ChaCha8Rng, n: usize, span: u64) -> Vec<u64> {
        let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
        v.sort_unstable();
        v
    }

    fn stream(party: Party, times: &[u64]) -> TagStream {
        let tags = times.iter().map(|&t| TimeTag::new(DetectorId(1), t)).collect();
        TagStream::from_unsorted(party, tags, u64::MAX)
    }

    #[test]
    fn recovers_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_times(&mut rng, 2000, 1_000_000_000);
        let b: Vec<u64> = a.iter().map(|t| t + 102_000).collect();
        let d = estimate_delay(&stream(Party::Alice, &a), &stream(Party::Bob, &b), 200_000, 16)
            .unwrap();
        assert!((d - 102_000).abs() <= 8, "{d}");
    }

    #[test]
    fn recovers_shift_coarse_to_fine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_times(&mut rng, 5000, 100_000_000_000);
        let b: Vec<u64> = a.iter().map(|t| t + 107_800_123).collect();
        let search = DelaySearch::symmetric(200_000_000, 16);
        let est = estimate_delay_times(&a, &b, &search, Execution::Sequential).unwrap();
        assert!((est.delay_ps - 107_800_123).abs() <= 8, "{est:?}");
    }

    #[test]
    fn negative_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_times(&mut rng, 2000, 1_000_000_000);
        let a: Vec<u64> = b.iter().map(|t| t + 5_000).collect();
        let search = DelaySearch::symmetric(100_000, 16);
        let est = estimate_delay_times(&a, &b, &search, Execution::Sequential).unwrap();
        assert!((est.delay_ps + 5_000).abs() <= 8);
    }

    #[test]
    fn independent_streams_have_no_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_times(&mut rng, 20_000, 10_000_000_000);
        let b = random_times(&mut rng, 20_000, 10_000_000_000);
        let r = estimate_delay(&stream(Party::Alice, &a), &stream(Party::Bob, &b), 1_000_000, 16);
        assert!(matches!(r, Err(TagsError::NoCorrelation { .. })), "{r:?}");
    }

    #[test]
    fn empty_stream_is_insufficient() {
        let a = stream(Party::Alice, &[]);
        let b = stream(Party::Bob, &[1, 2, 3]);
        assert!(matches!(
            estimate_delay(&a, &b, 1000, 16),
            Err(TagsError::InsufficientData(_))
        ));
    }

    #[test]
    fn shard_count_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_times(&mut rng, 3000, 1_000_000_000);
        let b: Vec<u64> = a.iter().map(|t| t + 40_000 + (t % 7)).collect();
        let search = DelaySearch::symmetric(100_000, 16);
        let s = estimate_delay_times(&a, &b, &search, Execution::Sequential).unwrap();
        let p = estimate_delay_times(&a, &b, &search, Execution::Parallel).unwrap();
        assert_eq!(s, p);
    }
}
