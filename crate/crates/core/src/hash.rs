//! Seeded 64-bit hashing used for bucket, sign and level assignment.
//!
//! Every hash function in the crate is a deterministic function of a
//! [`SketchSeed`] and a purpose tag, so two structures built from the same
//! master seed and shape agree on every coordinate. The mixer is the
//! SplitMix64 finalizer, which is a bijection on `u64`.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a derived sub-seed is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Bucket = 1,
    Sign = 2,
    Level = 3,
    Zeta = 4,
    Child = 5,
}

/// Master seed from which all per-row and per-purpose hash seeds derive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SketchSeed(u64);

impl SketchSeed {
    pub const fn new(master: u64) -> Self {
        Self(master)
    }

    pub const fn master(self) -> u64 {
        self.0
    }

    /// Sub-seed for `(row, purpose)`.
    ///
    /// The pair is packed injectively into a `u64`, multiplied by an odd
    /// constant and offset by the master seed before mixing. All three steps
    /// are bijections, so distinct pairs always get distinct sub-seeds.
    pub fn derive(self, row: u32, purpose: Purpose) -> u64 {
        let tag = ((purpose as u64) << 32) | u64::from(row);
        mix64(self.0.wrapping_add(GOLDEN.wrapping_mul(tag.wrapping_add(1))))
    }

    /// An independent seed for a nested structure, e.g. one table of a stack.
    pub fn child(self, index: u32) -> SketchSeed {
        SketchSeed(self.derive(index, Purpose::Child))
    }

    /// A uniform draw in `[0, 1)` determined by this seed and `purpose`.
    pub fn unit(self, purpose: Purpose) -> f64 {
        (self.derive(0, purpose) >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl From<u64> for SketchSeed {
    fn from(master: u64) -> Self {
        Self(master)
    }
}

/// Hash of coordinate `index` under `sub_seed`.
#[inline]
pub fn hash_index(sub_seed: u64, index: u64) -> u64 {
    mix64(sub_seed ^ mix64(index.wrapping_add(GOLDEN)))
}

/// Maps a 64-bit hash onto `[0, range)` by multiply-shift.
#[inline]
pub fn reduce(hash: u64, range: u64) -> u64 {
    ((u128::from(hash) * u128::from(range)) >> 64) as u64
}
