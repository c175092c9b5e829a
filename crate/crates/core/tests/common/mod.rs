//! Reference computations for the integration tests. None of these go
//! through the library's own state or matching code.

#![allow(dead_code)]

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Mat2 = [[Complex64; 2]; 2];
type Mat4 = [[Complex64; 4]; 4];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Pauli matrices σx, σy, σz.
fn pauli() -> [Mat2; 3] {
    let (o, l, i) = (c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
    [[[o, l], [l, o]], [[o, -i], [i, o]], [[l, o], [o, -l]]]
}

/// `(I + sign·n·σ)/2`.
pub fn projector(n: [f64; 3], sign: f64) -> Mat2 {
    let p = pauli();
    let mut m = [[c(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for col in 0..2 {
            let mut v = if r == col { c(1.0, 0.0) } else { c(0.0, 0.0) };
            for k in 0..3 {
                v += p[k][r][col] * (sign * n[k]);
            }
            m[r][col] = v * 0.5;
        }
    }
    m
}

fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut m = [[c(0.0, 0.0); 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    m[2 * i + k][2 * j + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    m
}

/// `Tr(|ψ⟩⟨ψ| · P_a ⊗ P_b)`, amplitudes ordered with Alice as the major index.
pub fn joint_probability(psi: &[Complex64; 4], a: [f64; 3], a_sign: f64, b: [f64; 3], b_sign: f64) -> f64 {
    let op = kron(&projector(a, a_sign), &projector(b, b_sign));
    let mut rho = [[c(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            rho[i][j] = psi[i] * psi[j].conj();
        }
    }
    let mut tr = c(0.0, 0.0);
    for i in 0..4 {
        for k in 0..4 {
            tr += rho[i][k] * op[k][i];
        }
    }
    tr.re
}

/// `Σ s_a·s_b·P(s_a, s_b)` over the four projector outcomes.
pub fn correlation(psi: &[Complex64; 4], a: [f64; 3], b: [f64; 3]) -> f64 {
    let mut e = 0.0;
    for sa in [1.0, -1.0] {
        for sb in [1.0, -1.0] {
            e += sa * sb * joint_probability(psi, a, sa, b, sb);
        }
    }
    e
}

/// `(|H0⟩ + e^{iφ}|V1⟩)/√2`.
pub fn hybrid(phase: f64) -> [Complex64; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), Complex64::from_polar(h, phase)]
}

/// Bloch direction of a polarizer at physical angle `deg` degrees.
pub fn polarizer(deg: f64) -> [f64; 3] {
    let t = 2.0 * deg.to_radians();
    [t.sin(), 0.0, t.cos()]
}

/// CHSH value for the standard analyzers: a0 at −22.5°, a1 at −67.5° with
/// its outcome labels swapped, b0 = σz, b1 = σx.
pub fn standard_chsh(psi: &[Complex64; 4]) -> f64 {
    let a0 = polarizer(-22.5);
    let a1 = polarizer(-67.5);
    let b0 = [0.0, 0.0, 1.0];
    let b1 = [1.0, 0.0, 0.0];
    correlation(psi, a0, b0) + correlation(psi, a0, b1) - correlation(psi, a1, b0) + correlation(psi, a1, b1)
}

/// Shannon entropy straight from the definition.
pub fn entropy(p: f64) -> f64 {
    let t = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    t(p) + t(1.0 - p)
}

/// Correlated pairs with Gaussian jitter plus uncorrelated noise on both
/// sides, `rate` events per ps on each.
pub fn instance(seed: u64, n: usize, rate: f64, sigma: f64, delay: i64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (n as f64 / rate) as u64 + 1;
    let jitter = Normal::new(0.0, sigma.max(1e-9)).unwrap();
    let base = 1_000_000u64;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let t = (base + rng.random_range(0..span)) as f64;
        match rng.random_range(0..4) {
            0 => a.push(t as u64),
            1 => b.push((t + delay as f64) as u64),
            _ => {
                a.push((t + jitter.sample(&mut rng)) as u64);
                b.push((t + delay as f64 + jitter.sample(&mut rng)) as u64);
            }
        }
    }
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Best matching objective: maximum number of pairs, then minimum total
/// `|t_a − (t_b − delay)|`. Pairs are allowed when that distance is at
/// most `window / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchScore {
    pub pairs: usize,
    pub total_distance: u64,
}

impl MatchScore {
    fn better_than(&self, other: &MatchScore) -> bool {
        (self.pairs, std::cmp::Reverse(self.total_distance)) > (other.pairs, std::cmp::Reverse(other.total_distance))
    }
}

pub fn distance(ta: u64, tb: u64, delay: i64) -> u64 {
    (tb as i64 - delay - ta as i64).unsigned_abs()
}

/// Score of a given matching.
pub fn score(a: &[u64], b: &[u64], pairs: &[(usize, usize)], delay: i64) -> MatchScore {
    MatchScore {
        pairs: pairs.len(),
        total_distance: pairs.iter().map(|&(i, j)| distance(a[i], b[j], delay)).sum(),
    }
}

/// Exhaustive optimum, solved independently per connected component of the
/// candidate graph. Also returns the size of the largest component (in
/// edges) so callers can see how much work the search actually did.
pub fn optimal_matching(a: &[u64], b: &[u64], window: u64, delay: i64) -> (MatchScore, usize) {
    let half = window / 2;
    let mut edges: Vec<(usize, usize, u64)> = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        for (j, &tb) in b.iter().enumerate() {
            let d = distance(ta, tb, delay);
            if d <= half {
                edges.push((i, j, d));
            }
        }
    }
    components(a.len(), b.len(), &edges)
}

/// Same as [`optimal_matching`] but finds edges with a sorted sweep, for
/// inputs too large for the quadratic scan. Both inputs must be sorted.
pub fn optimal_matching_sorted(a: &[u64], b: &[u64], window: u64, delay: i64) -> (MatchScore, usize) {
    let half = (window / 2) as i64;
    let mut edges = Vec::new();
    let mut start = 0;
    for (i, &ta) in a.iter().enumerate() {
        let ta = ta as i64;
        while start < b.len() && (b[start] as i64 - delay) < ta - half {
            start += 1;
        }
        for (j, &tb) in b.iter().enumerate().skip(start) {
            let shifted = tb as i64 - delay;
            if shifted > ta + half {
                break;
            }
            edges.push((i, j, (shifted - ta).unsigned_abs()));
        }
    }
    components(a.len(), b.len(), &edges)
}

fn components(na: usize, nb: usize, edges: &[(usize, usize, u64)]) -> (MatchScore, usize) {
    // union-find over a-nodes 0..na and b-nodes na..na+nb
    let mut parent: Vec<usize> = (0..na + nb).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for &(i, j, _) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, na + j));
        if ri != rj {
            parent[ri] = rj;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize, u64)>> = Default::default();
    for &e in edges {
        let root = find(&mut parent, e.0);
        groups.entry(root).or_default().push(e);
    }
    let mut total = MatchScore {
        pairs: 0,
        total_distance: 0,
    };
    let mut largest = 0;
    for group in groups.values() {
        largest = largest.max(group.len());
        let s = exhaustive(group);
        total.pairs += s.pairs;
        total.total_distance += s.total_distance;
    }
    (total, largest)
}

/// Tries every matching of one component.
fn exhaustive(edges: &[(usize, usize, u64)]) -> MatchScore {
    assert!(edges.len() <= 40, "component with {} edges is too large to enumerate", edges.len());
    let alice: BTreeSet<usize> = edges.iter().map(|e| e.0).collect();
    let alice: Vec<usize> = alice.into_iter().collect();
    let zero = MatchScore {
        pairs: 0,
        total_distance: 0,
    };
    let mut best = zero;
    let mut used = BTreeSet::new();
    fn go(
        k: usize,
        alice: &[usize],
        edges: &[(usize, usize, u64)],
        used: &mut BTreeSet<usize>,
        cur: MatchScore,
        best: &mut MatchScore,
    ) {
        if k == alice.len() {
            if cur.better_than(best) {
                *best = cur;
            }
            return;
        }
        go(k + 1, alice, edges, used, cur, best);
        for &(_, j, d) in edges.iter().filter(|e| e.0 == alice[k]) {
            if used.insert(j) {
                let next = MatchScore {
                    pairs: cur.pairs + 1,
                    total_distance: cur.total_distance + d,
                };
                go(k + 1, alice, edges, used, next, best);
                used.remove(&j);
            }
        }
    }
    go(0, &alice, edges, &mut used, zero, &mut best);
    best
}
