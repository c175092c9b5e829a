use std::collections::BTreeMap;
use std::io::Write;

use super::{TagStream, TimeTag};
use crate::quantum::DetectorId;

/// A matched Alice/Bob detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoincidencePair {
    pub alice: TimeTag,
    pub bob: TimeTag,
}

/// Pairs `a[i]` with `b[j]` when `|a[i] − (b[j] − delay)| ≤ window/2`.
///
/// The result is a maximum matching with the least total time distance, each
/// tag used at most once. Tags with a single candidate partner are paired
/// directly; groups of tags competing for partners are solved exactly with
/// shortest augmenting paths. Among equally good matchings the earlier
/// partner wins. Returned index pairs are sorted by Alice index. Inputs must
/// be sorted.
pub fn match_times(a: &[u64], b: &[u64], window: u64, delay: i64) -> Vec<(usize, usize)> {
    let half = (window / 2) as i64;
    let mut pairs = Vec::new();
    // candidates of the current connected group, in (i, j) order
    let mut group: Vec<Edge> = Vec::new();
    let mut group_max_j = 0u32;
    let mut j0 = 0usize;
    for (i, &ta) in a.iter().enumerate() {
        let ta = ta as i64;
        while j0 < b.len() && (b[j0] as i64 - delay) < ta - half {
            j0 += 1;
        }
        let mut j = j0;
        while j < b.len() {
            let tb = b[j] as i64 - delay;
            if tb > ta + half {
                break;
            }
            // candidate ranges only move forward, so a group is closed once
            // a new tag's first candidate lies past every partner it holds
            if j == j0 && !group.is_empty() && j as u32 > group_max_j {
                solve_group(&group, &mut pairs);
                group.clear();
            }
            group.push(Edge {
                i: i as u32,
                j: j as u32,
                cost: (tb - ta).unsigned_abs(),
            });
            group_max_j = group_max_j.max(j as u32);
            j += 1;
        }
    }
    solve_group(&group, &mut pairs);
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    i: u32,
    j: u32,
    cost: u64,
}

fn solve_group(edges: &[Edge], out: &mut Vec<(usize, usize)>) {
    match edges {
        [] => {}
        [e] => out.push((e.i as usize, e.j as usize)),
        _ => out.extend(min_cost_matching(edges)),
    }
}

/// Maximum-cardinality matching of least total cost by successive shortest
/// augmenting paths (Bellman-Ford on the residual graph).
fn min_cost_matching(edges: &[Edge]) -> Vec<(usize, usize)> {
    let i0 = edges.iter().map(|e| e.i).min().unwrap_or(0);
    let j0 = edges.iter().map(|e| e.j).min().unwrap_or(0);
    let na = (edges.iter().map(|e| e.i).max().unwrap_or(0) - i0 + 1) as usize;
    let nb = (edges.iter().map(|e| e.j).max().unwrap_or(0) - j0 + 1) as usize;
    let local: Vec<(usize, usize, i64)> = edges
        .iter()
        .map(|e| ((e.i - i0) as usize, (e.j - j0) as usize, e.cost as i64))
        .collect();
    let mut mate_a: Vec<Option<usize>> = vec![None; na];
    let mut mate_b: Vec<Option<usize>> = vec![None; nb];
    // edge index of each a-node's matched edge
    let mut via: Vec<usize> = vec![usize::MAX; na];

    loop {
        // da: distance to reach a-node a as the tail of a path; db likewise
        // for b-nodes, with the edge used to get there
        let mut da: Vec<Option<i64>> = mate_a.iter().map(|m| if m.is_none() { Some(0) } else { None }).collect();
        let mut db: Vec<Option<(i64, usize)>> = vec![None; nb];
        let mut changed = true;
        while changed {
            changed = false;
            for (k, &(ia, jb, c)) in local.iter().enumerate() {
                if mate_a[ia] == Some(jb) {
                    continue;
                }
                if let Some(d) = da[ia] {
                    if db[jb].is_none_or(|(old, _)| d + c < old) {
                        db[jb] = Some((d + c, k));
                        changed = true;
                    }
                }
            }
            for (jb, m) in mate_b.iter().enumerate() {
                if let (Some(ia), Some((d, _))) = (*m, db[jb]) {
                    let back = d - local[via[ia]].2;
                    if da[ia].is_none_or(|old| back < old) {
                        da[ia] = Some(back);
                        changed = true;
                    }
                }
            }
        }
        let target = (0..nb)
            .filter(|&jb| mate_b[jb].is_none())
            .filter_map(|jb| db[jb].map(|(d, _)| (d, jb)))
            .min();
        let Some((_, mut jb)) = target else { break };
        // walk back, flipping matched and unmatched edges
        loop {
            let (_, k) = db[jb].expect("reached node has a label");
            let (ia, _, _) = local[k];
            let prev = mate_a[ia];
            mate_a[ia] = Some(jb);
            mate_b[jb] = Some(ia);
            via[ia] = k;
            match prev {
                Some(pb) => jb = pb,
                None => break,
            }
        }
    }
    mate_a
        .iter()
        .enumerate()
        .filter_map(|(ia, m)| m.map(|jb| ((ia as u32 + i0) as usize, (jb as u32 + j0) as usize)))
        .collect()
}

/// Windowed coincidences between two streams, sorted by Alice time.
pub fn match_coincidences(
    a: &TagStream,
    b: &TagStream,
    window: u64,
    delay: i64,
) -> Vec<CoincidencePair> {
    let pairs = match_times(&a.times(), &b.times(), window, delay);
    pairs
        .into_iter()
        .map(|(i, j)| CoincidencePair {
            alice: a.tags()[i],
            bob: b.tags()[j],
        })
        .collect()
}

/// Coincidence counts `n_{i,j}` between Alice detector `i` and Bob detector `j`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoincidenceMatrix {
    pub counts: BTreeMap<(DetectorId, DetectorId), u64>,
    pub window_ps: u64,
    pub delay_ps: i64,
    pub accumulation_ps: u64,
}

impl CoincidenceMatrix {
    pub fn empty(window_ps: u64, delay_ps: i64, accumulation_ps: u64) -> Self {
        Self {
            counts: BTreeMap::new(),
            window_ps,
            delay_ps,
            accumulation_ps,
        }
    }

    pub fn get(&self, alice: DetectorId, bob: DetectorId) -> u64 {
        self.counts.get(&(alice, bob)).copied().unwrap_or(0)
    }

    pub fn add(&mut self, alice: DetectorId, bob: DetectorId, n: u64) {
        *self.counts.entry((alice, bob)).or_insert(0) += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Adds another matrix's counts and accumulation time.
    pub fn merge(&mut self, other: &CoincidenceMatrix) {
        for (&(a, b), &n) in &other.counts {
            self.add(a, b, n);
        }
        self.accumulation_ps += other.accumulation_ps;
    }

    /// `alice_det,bob_det,count`, one row per nonzero cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "alice_det,bob_det,count")?;
        for (&(a, b), &n) in &self.counts {
            writeln!(out, "{},{},{}", a.0, b.0, n)?;
        }
        Ok(())
    }
}

pub fn build_matrix(
    pairs: &[CoincidencePair],
    window_ps: u64,
    delay_ps: i64,
    accumulation_ps: u64,
) -> CoincidenceMatrix {
    let mut m = CoincidenceMatrix::empty(window_ps, delay_ps, accumulation_ps);
    for p in pairs {
        m.add(p.alice.channel, p.bob.channel, 1);
    }
    m
}
