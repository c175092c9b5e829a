mod common;

use e91_core::quantum::{
    binary_entropy, chsh_value, correlation, holevo_bound, joint_probability, mutual_information, secure_fraction,
    BlochVector, DetectorId, MeasurementSetting, Outcome, Party, SettingLabel, SettingSet, TwoQubitState, TSIRELSON,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn unit_vector() -> impl Strategy<Value = [f64; 3]> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, az)| {
        let r = (1.0 - z * z).sqrt();
        [r * az.cos(), r * az.sin(), z]
    })
}

fn state() -> impl Strategy<Value = [Complex64; 4]> {
    prop::array::uniform4((-1.0f64..1.0, -1.0f64..1.0))
        .prop_filter("nonzero", |a| a.iter().map(|(x, y)| x * x + y * y).sum::<f64>() > 1e-3)
        .prop_map(|a| {
            let n = a.iter().map(|(x, y)| x * x + y * y).sum::<f64>().sqrt();
            a.map(|(x, y)| Complex64::new(x / n, y / n))
        })
}

fn setting(label: SettingLabel, n: [f64; 3]) -> MeasurementSetting {
    let bloch = BlochVector::new(n[0], n[1], n[2]).unwrap();
    let (p, m) = if label.party() == Party::Alice { (3, 4) } else { (1, 2) };
    MeasurementSetting::new(label, bloch, DetectorId(p), DetectorId(m), Outcome::Plus).unwrap()
}

proptest! {
    #[test]
    fn born_probabilities_match_the_projector_oracle(psi in state(), a in unit_vector(), b in unit_vector()) {
        let st = TwoQubitState::new(psi).unwrap();
        let (sa, sb) = (setting(SettingLabel::A0, a), setting(SettingLabel::B1, b));
        let mut total = 0.0;
        for ao in Outcome::BOTH {
            for bo in Outcome::BOTH {
                let p = joint_probability(&st, &sa, &sb, ao, bo).unwrap();
                let expected = common::joint_probability(&psi, a, ao.value(), b, bo.value());
                prop_assert!((p - expected).abs() < 1e-9, "{p} vs {expected}");
                total += p;
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-9);
        let e = correlation(&st, &sa, &sb).unwrap();
        prop_assert!((e - common::correlation(&psi, a, b)).abs() < 1e-9);
    }

    #[test]
    fn chsh_of_the_hybrid_state_follows_the_cosine(phase in -10.0f64..10.0) {
        let s = chsh_value(&TwoQubitState::hybrid(phase).unwrap(), &SettingSet::standard().chsh()).unwrap();
        let oracle = common::standard_chsh(&common::hybrid(phase));
        prop_assert!((s - oracle).abs() < 1e-9);
        prop_assert!((s - std::f64::consts::SQRT_2 * (1.0 - phase.cos())).abs() < 1e-9);
    }

    #[test]
    fn chsh_never_exceeds_tsirelson(psi in state()) {
        let s = chsh_value(&TwoQubitState::new(psi).unwrap(), &SettingSet::standard().chsh()).unwrap();
        prop_assert!(s.abs() <= TSIRELSON + 1e-9);
    }

    #[test]
    fn entropy_matches_definition(p in 0.0f64..=1.0) {
        prop_assert!((binary_entropy(p).unwrap() - common::entropy(p)).abs() < 1e-12);
    }

    #[test]
    fn leakage_falls_as_s_rises(s1 in 2.0f64..TSIRELSON, s2 in 2.0f64..TSIRELSON) {
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(holevo_bound(hi).unwrap() <= holevo_bound(lo).unwrap() + 1e-12);
    }

    #[test]
    fn secure_fraction_is_never_negative(s in -TSIRELSON..TSIRELSON, q in 0.0f64..0.5) {
        let f = secure_fraction(s, q).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }
}

#[test]
fn key_basis_is_phase_insensitive() {
    let settings = SettingSet::standard();
    let (a2, b0) = (settings.get(SettingLabel::A2), settings.get(SettingLabel::B0));
    for phase in [0.0, 1.0, 2.5, std::f64::consts::PI] {
        let e = correlation(&TwoQubitState::hybrid(phase).unwrap(), a2, b0).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mutual_information_reference_points() {
    assert!((mutual_information(0.0371).unwrap() - (1.0 - common::entropy(0.0371))).abs() < 1e-12);
    assert_eq!(mutual_information(0.5).unwrap(), 0.0);
    assert_eq!(mutual_information(0.0).unwrap(), 1.0);
    assert!(mutual_information(0.6).is_err());
}
