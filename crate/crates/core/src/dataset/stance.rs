use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot::NUM_LEGS;

pub const NUM_STANCES: u8 = 8;

/// Leg indices in crawl swing order: LH, LF, RH, RF.
pub const SWING_ORDER: [usize; 4] = [2, 0, 3, 1];

/// One of the eight crawl-gait phases.
///
/// Even ids `2k` are all-contact phases; odd ids `2k + 1` swing the `k`-th
/// foot of [`SWING_ORDER`] between all-contact phases `k` and `k + 1 (mod 4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct StanceId(u8);

impl StanceId {
    pub fn new(id: u8) -> Result<Self> {
        if id < NUM_STANCES {
            Ok(Self(id))
        } else {
            Err(Error::BadInput(format!("stance id {id} outside 0..8")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn is_all_contact(self) -> bool {
        self.0.is_multiple_of(2)
    }

    /// Position in the cycle of all-contact phases this stance starts from.
    pub fn phase(self) -> usize {
        (self.0 / 2) as usize
    }

    pub fn swing_foot(self) -> Option<usize> {
        (!self.is_all_contact()).then(|| SWING_ORDER[self.phase()])
    }

    pub fn contact_flags(self) -> [bool; NUM_LEGS] {
        let mut flags = [true; NUM_LEGS];
        if let Some(f) = self.swing_foot() {
            flags[f] = false;
        }
        flags
    }

    pub fn successor(self) -> Self {
        Self((self.0 + 1) % NUM_STANCES)
    }

    pub fn all() -> impl Iterator<Item = StanceId> {
        (0..NUM_STANCES).map(StanceId)
    }
}

impl TryFrom<u8> for StanceId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StanceId> for u8 {
    fn from(s: StanceId) -> u8 {
        s.0
    }
}

impl std::fmt::Display for StanceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-hot (all-contact) or cyclic two-hot (swing) stance label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceEncoding(pub [f64; 4]);

pub fn stance_encoding(stance: StanceId) -> StanceEncoding {
    let k = stance.phase();
    let mut s = [0.0; 4];
    s[k] = 1.0;
    if !stance.is_all_contact() {
        s[(k + 1) % 4] = 1.0;
    }
    StanceEncoding(s)
}

/// Inverse of [`stance_encoding`] for thresholded predictions; `None` if the
/// pattern is not a valid stance label.
pub fn decode_stance(bits: [bool; 4]) -> Option<StanceId> {
    StanceId::all().find(|s| stance_encoding(*s).0.map(|v| v > 0.5) == bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings() {
        let enc = |i| stance_encoding(StanceId::new(i).unwrap()).0;
        assert_eq!(enc(0), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(enc(1), [1.0, 1.0, 0.0, 0.0]);
        assert_eq!(enc(6), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(enc(7), [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn invariants_hold_for_all_stances() {
        for s in StanceId::all() {
            let ones = stance_encoding(s).0.iter().filter(|v| **v == 1.0).count();
            assert_eq!(ones, if s.is_all_contact() { 1 } else { 2 });
            assert_eq!(s.swing_foot().is_some(), s.id() % 2 == 1);
            assert_eq!(decode_stance(stance_encoding(s).0.map(|v| v > 0.5)), Some(s));
            let contacts = s.contact_flags().iter().filter(|c| **c).count();
            assert_eq!(contacts, if s.is_all_contact() { 4 } else { 3 });
        }
        assert_eq!(StanceId::new(7).unwrap().successor().id(), 0);
        assert!(StanceId::new(8).is_err());
        assert_eq!(decode_stance([true, false, true, false]), None);
    }

    #[test]
    fn swing_order_visits_each_leg_once() {
        let mut legs: Vec<usize> = (0..4)
            .map(|k| StanceId::new(2 * k + 1).unwrap().swing_foot().unwrap())
            .collect();
        assert_eq!(legs, vec![2, 0, 3, 1]);
        legs.sort();
        assert_eq!(legs, vec![0, 1, 2, 3]);
    }
}
