use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::quantum::{DetectorId, Outcome, Party, SettingLabel, SettingSet};
use crate::tags::{CoincidenceMatrix, TagsError};

/// What a matched pair is used for, given the two settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairRole {
    Key,
    Test,
    Discard,
}

/// `(a2, b0)` makes key; the four `(a0|a1, b0|b1)` combinations feed the
/// CHSH test; `(a2, b1)` has no use.
pub fn classify(alice: SettingLabel, bob: SettingLabel) -> PairRole {
    use SettingLabel::*;
    match (alice, bob) {
        (A2, B0) => PairRole::Key,
        (A0 | A1, B0 | B1) => PairRole::Test,
        _ => PairRole::Discard,
    }
}

/// Key bit of a key-basis outcome: H and `|0⟩` give 0, V and `|1⟩` give 1.
pub fn key_bit(outcome: Outcome) -> u8 {
    match outcome {
        Outcome::Plus => 0,
        Outcome::Minus => 1,
    }
}

pub fn outcome_bit(outcome: Outcome) -> u8 {
    key_bit(outcome)
}

pub fn bit_outcome(bit: u8) -> Option<Outcome> {
    match bit {
        0 => Some(Outcome::Plus),
        1 => Some(Outcome::Minus),
        _ => None,
    }
}

/// Identifier of a matched pair: block in the high half, Bob's tag index
/// within the block in the low half.
pub fn pair_id(block: u32, bob_index: u32) -> u64 {
    (u64::from(block) << 32) | u64::from(bob_index)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftedKey {
    pub bits: Vec<u8>,
    pub pair_ids: Vec<u64>,
    pub block: u32,
}

impl SiftedKey {
    pub fn new(block: u32) -> Self {
        Self {
            block,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn push(&mut self, bit: u8, id: u64) {
        self.bits.push(bit);
        self.pair_ids.push(id);
    }

    /// Bits at the given sorted positions.
    pub fn bits_at(&self, positions: &[u32]) -> Vec<u8> {
        positions.iter().map(|&p| self.bits[p as usize]).collect()
    }

    /// The key without the given sorted positions.
    pub fn without(&self, positions: &[u32]) -> SiftedKey {
        let mut out = SiftedKey::new(self.block);
        let mut skip = positions.iter().peekable();
        for (k, (&b, &id)) in self.bits.iter().zip(&self.pair_ids).enumerate() {
            if skip.peek() == Some(&&(k as u32)) {
                skip.next();
                continue;
            }
            out.push(b, id);
        }
        out
    }
}

/// A matched pair with both detector ids, for offline sifting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchedPair {
    pub alice: DetectorId,
    pub bob: DetectorId,
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftResult {
    pub alice: SiftedKey,
    pub bob: SiftedKey,
    pub test: Vec<MatchedPair>,
    pub discarded: usize,
}

impl SiftResult {
    /// Coincidence counts of the test pool.
    pub fn test_matrix(&self, window_ps: u64, delay_ps: i64, accumulation_ps: u64) -> CoincidenceMatrix {
        let mut m = CoincidenceMatrix::empty(window_ps, delay_ps, accumulation_ps);
        for p in &self.test {
            m.add(p.alice, p.bob, 1);
        }
        m
    }
}

/// Splits matched pairs into key bits, the test pool and discards.
pub fn sift(pairs: &[MatchedPair], settings: &SettingSet, block: u32) -> Result<SiftResult, ProtocolError> {
    let lookup = |party: Party, ch: DetectorId| {
        settings
            .lookup(party, ch)
            .ok_or(ProtocolError::Tags(TagsError::UnknownChannel { party, channel: ch }))
    };
    let mut out = SiftResult {
        alice: SiftedKey::new(block),
        bob: SiftedKey::new(block),
        test: Vec::new(),
        discarded: 0,
    };
    for p in pairs {
        let (sa, oa) = lookup(Party::Alice, p.alice)?;
        let (sb, ob) = lookup(Party::Bob, p.bob)?;
        match classify(sa, sb) {
            PairRole::Key => {
                out.alice.push(key_bit(oa), p.id);
                out.bob.push(key_bit(ob), p.id);
            }
            PairRole::Test => out.test.push(*p),
            PairRole::Discard => out.discarded += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QberMode {
    /// Disclose a random fraction of the key.
    #[default]
    Sample,
    /// Compare every key bit (offline evaluation; leaves no key).
    All,
}

impl QberMode {
    pub fn code(self) -> u8 {
        match self {
            QberMode::Sample => 0,
            QberMode::All => 1,
        }
    }
}

/// Sorted key positions to disclose. Sample mode needs at least
/// `1/fraction` bits.
pub fn choose_sample_positions<R: Rng + ?Sized>(
    n: usize,
    mode: QberMode,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<u32>, ProtocolError> {
    match mode {
        QberMode::All => {
            if n == 0 {
                return Err(ProtocolError::InsufficientKey { have: 0, need: 1 });
            }
            Ok((0..n as u32).collect())
        }
        QberMode::Sample => {
            let need = (1.0 / fraction).ceil() as usize;
            if n < need {
                return Err(ProtocolError::InsufficientKey { have: n, need });
            }
            let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
            let mut pos: Vec<u32> = rand::seq::index::sample(rng, n, k)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            pos.sort_unstable();
            Ok(pos)
        }
    }
}

pub fn count_mismatches(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct QberEstimate {
    pub qber: f64,
    pub errors: u64,
    pub positions: Vec<u32>,
    pub alice: SiftedKey,
    pub bob: SiftedKey,
}

/// Discloses and compares a subset of the key, returning the error rate and
/// the keys with the disclosed positions removed.
pub fn estimate_qber<R: Rng + ?Sized>(
    alice: &SiftedKey,
    bob: &SiftedKey,
    mode: QberMode,
    fraction: f64,
    rng: &mut R,
) -> Result<QberEstimate, ProtocolError> {
    if alice.len() != bob.len() {
        return Err(ProtocolError::Violation(format!(
            "key lengths differ: {} vs {}",
            alice.len(),
            bob.len()
        )));
    }
    let positions = choose_sample_positions(alice.len(), mode, fraction, rng)?;
    let errors = count_mismatches(&alice.bits_at(&positions), &bob.bits_at(&positions));
    Ok(QberEstimate {
        qber: errors as f64 / positions.len() as f64,
        errors,
        alice: alice.without(&positions),
        bob: bob.without(&positions),
        positions,
    })
}
