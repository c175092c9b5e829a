use num_complex::Complex64;
use rand::Rng;

use super::{OpticsError, SplittingRatios};
use crate::quantum::{
    outcome_distribution, BlochVector, Outcome, SettingLabel, SettingSet, TwoQubitState,
};

/// Arrival slot of Bob's photon relative to the slot that carries the
/// entangled state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimeBin {
    Early,
    Central,
    Late,
}

impl TimeBin {
    pub fn offset_ps(self, separation_ps: u64) -> u64 {
        match self {
            TimeBin::Early => 0,
            TimeBin::Central => separation_ps,
            TimeBin::Late => 2 * separation_ps,
        }
    }

    /// Early and late slots each take a quarter of the pairs.
    pub fn probability(self) -> f64 {
        match self {
            TimeBin::Central => 0.5,
            _ => 0.25,
        }
    }

    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u: f64 = rng.random();
        if u < 0.25 {
            TimeBin::Early
        } else if u < 0.75 {
            TimeBin::Central
        } else {
            TimeBin::Late
        }
    }

    /// State seen in a satellite slot; `None` for the central one.
    pub fn satellite_state(self) -> Option<TwoQubitState> {
        match self {
            TimeBin::Early => Some(TwoQubitState::v0()),
            TimeBin::Central => None,
            TimeBin::Late => Some(TwoQubitState::h1()),
        }
    }
}

/// Settings, physical outcomes and time slot of one emitted pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub alice_setting: SettingLabel,
    pub alice_outcome: Outcome,
    pub bob_setting: SettingLabel,
    pub bob_outcome: Outcome,
    pub bin: TimeBin,
}

type Eigen = [[Complex64; 2]; 2];
type Table = [[[f64; 4]; 2]; 3];

/// Draws pair outcomes for a fixed setting set and splitting ratios.
/// Eigenvectors and satellite distributions are computed once; the central
/// distribution is cached for one phase at a time.
#[derive(Debug, Clone)]
pub struct PairSampler {
    alice_labels: [SettingLabel; 3],
    bob_labels: [SettingLabel; 2],
    alice_cdf: [f64; 2],
    bob_cut: f64,
    alice_eig: [Eigen; 3],
    bob_eig: [Eigen; 2],
    alice_bloch: [BlochVector; 3],
    bob_bloch: [BlochVector; 2],
    early: Table,
    late: Table,
    cached: Option<(f64, Table)>,
}

impl PairSampler {
    pub fn new(settings: &SettingSet, ratios: &SplittingRatios) -> Result<Self, OpticsError> {
        settings.validate()?;
        let mut issues = Vec::new();
        ratios.validate(&mut issues);
        if !issues.is_empty() {
            return Err(OpticsError::Config(issues));
        }
        let eig = |s: &crate::quantum::MeasurementSetting| {
            [s.bloch.eigenvector(Outcome::Plus), s.bloch.eigenvector(Outcome::Minus)]
        };
        let table_for = |state: &TwoQubitState| {
            let mut t = [[[0.0; 4]; 2]; 3];
            for (i, a) in settings.alice.iter().enumerate() {
                for (j, b) in settings.bob.iter().enumerate() {
                    t[i][j] = outcome_distribution(state, &a.bloch, &b.bloch);
                }
            }
            t
        };
        Ok(Self {
            alice_labels: settings.alice.map(|s| s.label),
            bob_labels: settings.bob.map(|s| s.label),
            alice_cdf: [ratios.alice[0], ratios.alice[0] + ratios.alice[1]],
            bob_cut: ratios.bob[0],
            alice_eig: settings.alice.map(|s| eig(&s)),
            bob_eig: settings.bob.map(|s| eig(&s)),
            alice_bloch: settings.alice.map(|s| s.bloch),
            bob_bloch: settings.bob.map(|s| s.bloch),
            early: table_for(&TwoQubitState::v0()),
            late: table_for(&TwoQubitState::h1()),
            cached: None,
        })
    }

    /// Precomputes the central distributions for `phase`.
    pub fn fix_phase(&mut self, phase: f64) {
        let mut t = [[[0.0; 4]; 2]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.hybrid_distribution(phase, i, j);
            }
        }
        self.cached = Some((phase, t));
    }

    fn hybrid_distribution(&self, phase: f64, i: usize, j: usize) -> [f64; 4] {
        // ψ = (|H0⟩ + e^{iφ}|V1⟩)/√2, only components 00 and 11 are nonzero
        let c0 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let c3 = Complex64::from_polar(std::f64::consts::FRAC_1_SQRT_2, phase);
        let mut p = [0.0; 4];
        for ao in 0..2 {
            let ea = self.alice_eig[i][ao];
            for bo in 0..2 {
                let eb = self.bob_eig[j][bo];
                let amp = (ea[0] * eb[0]).conj() * c0 + (ea[1] * eb[1]).conj() * c3;
                p[2 * ao + bo] = amp.norm_sqr();
            }
        }
        p
    }

    fn choose_settings<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u: f64 = rng.random();
        let i = if u < self.alice_cdf[0] {
            0
        } else if u < self.alice_cdf[1] {
            1
        } else {
            2
        };
        let j = if rng.random::<f64>() < self.bob_cut { 0 } else { 1 };
        (i, j)
    }

    fn finish<R: Rng + ?Sized>(&self, i: usize, j: usize, bin: TimeBin, p: &[f64; 4], rng: &mut R) -> PairSample {
        let k = sample_index(p, rng);
        PairSample {
            alice_setting: self.alice_labels[i],
            alice_outcome: Outcome::BOTH[k / 2],
            bob_setting: self.bob_labels[j],
            bob_outcome: Outcome::BOTH[k % 2],
            bin,
        }
    }

    /// One pair from the hybrid source at relative phase `phase`.
    pub fn sample<R: Rng + ?Sized>(&self, phase: f64, rng: &mut R) -> PairSample {
        let (i, j) = self.choose_settings(rng);
        let bin = TimeBin::sample(rng);
        let p = match bin {
            TimeBin::Early => self.early[i][j],
            TimeBin::Late => self.late[i][j],
            TimeBin::Central => match &self.cached {
                Some((cached, t)) if *cached == phase => t[i][j],
                _ => self.hybrid_distribution(phase, i, j),
            },
        };
        self.finish(i, j, bin, &p, rng)
    }

    /// One pair whose central-slot state is `state` instead of the hybrid
    /// state.
    pub fn sample_state<R: Rng + ?Sized>(&self, state: &TwoQubitState, rng: &mut R) -> PairSample {
        let (i, j) = self.choose_settings(rng);
        let bin = TimeBin::sample(rng);
        let p = match bin {
            TimeBin::Early => self.early[i][j],
            TimeBin::Late => self.late[i][j],
            TimeBin::Central => outcome_distribution(state, &self.alice_bloch[i], &self.bob_bloch[j]),
        };
        self.finish(i, j, bin, &p, rng)
    }
}

fn sample_index<R: Rng + ?Sized>(p: &[f64; 4], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &pk) in p.iter().enumerate().take(3) {
        if u < pk {
            return k;
        }
        u -= pk;
    }
    3
}

/// Samples one pair whose central-slot state is `state` (satellite slots use
/// their fixed product states).
pub fn sample_pair_outcome<R: Rng + ?Sized>(
    state: &TwoQubitState,
    settings: &SettingSet,
    ratios: &SplittingRatios,
    rng: &mut R,
) -> Result<PairSample, OpticsError> {
    Ok(PairSampler::new(settings, ratios)?.sample_state(state, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cached_and_direct_agree() {
        let settings = SettingSet::standard();
        let mut s = PairSampler::new(&settings, &SplittingRatios::default()).unwrap();
        let state = TwoQubitState::hybrid(1.3).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let direct = outcome_distribution(&state, &settings.alice[i].bloch, &settings.bob[j].bloch);
                let fast = s.hybrid_distribution(1.3, i, j);
                for k in 0..4 {
                    assert!((direct[k] - fast[k]).abs() < 1e-12);
                }
            }
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let uncached: Vec<_> = (0..1000).map(|_| s.sample(1.3, &mut r1)).collect();
        s.fix_phase(1.3);
        let cached: Vec<_> = (0..1000).map(|_| s.sample(1.3, &mut r2)).collect();
        assert_eq!(uncached, cached);
    }

    #[test]
    fn key_basis_is_anticorrelated_at_central_slot() {
        // (a2, b0) on |H0⟩+|V1⟩: H ↔ |0⟩, V ↔ |1⟩, physical outcomes agree
        let settings = SettingSet::standard();
        let s = PairSampler::new(&settings, &SplittingRatios::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = 0;
        for _ in 0..20_000 {
            let p = s.sample(0.4, &mut rng);
            if p.bin == TimeBin::Central && p.alice_setting == SettingLabel::A2 && p.bob_setting == SettingLabel::B0 {
                assert_eq!(p.alice_outcome, p.bob_outcome);
                seen += 1;
            }
        }
        assert!(seen > 2000);
    }

    #[test]
    fn rejects_bad_ratios() {
        let ratios = SplittingRatios {
            alice: [0.3, 0.3, 0.3],
            bob: [0.5, 0.5],
        };
        assert!(matches!(
            PairSampler::new(&SettingSet::standard(), &ratios),
            Err(OpticsError::Config(_))
        ));
    }
}
