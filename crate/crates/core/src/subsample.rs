//! Nested geometric subsampling of coordinates.
//!
//! Coordinate `i` gets a level `λ(i) ∈ [0, L]` from the number of leading zero
//! bits of a seeded hash, so `Pr[λ(i) ≥ ℓ] = 2^(−ℓ)` for `ℓ ≤ L`. Level `ℓ`'s
//! Count-Sketch sees exactly the updates to coordinates with `λ(i) ≥ ℓ`, which
//! makes the survivor sets nested and every table a linear sketch of its own
//! substream.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::hash::{hash_index, Purpose, SketchSeed};
use crate::sketch::{CountSketchTable, Update};

/// Smallest `L` with `2^L ≥ n`.
pub fn default_max_level(universe: u64) -> u32 {
    if universe <= 1 {
        0
    } else {
        64 - (universe - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelAssignment {
    seed: SketchSeed,
    max_level: u32,
    level_seed: u64,
}

impl LevelAssignment {
    pub fn new(seed: SketchSeed, max_level: u32) -> Result<Self> {
        if max_level > 63 {
            return Err(SketchError::param("max_level", "at most 63 levels are supported"));
        }
        Ok(Self {
            seed,
            max_level,
            level_seed: seed.derive(0, Purpose::Level),
        })
    }

    pub fn seed(&self) -> SketchSeed {
        self.seed
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    #[inline]
    pub fn level_of(&self, index: u64) -> u32 {
        hash_index(self.level_seed, index)
            .leading_zeros()
            .min(self.max_level)
    }

    /// Whether coordinate `index` takes part in level `level`'s substream.
    #[inline]
    pub fn survives(&self, index: u64, level: u32) -> bool {
        self.level_of(index) >= level
    }
}

/// Shape shared by every table of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackShape {
    pub universe: u64,
    pub rows: usize,
    pub buckets: usize,
    pub max_level: u32,
}

impl StackShape {
    pub fn new(universe: u64, rows: usize, buckets: usize) -> Self {
        Self {
            universe,
            rows,
            buckets,
            max_level: default_max_level(universe),
        }
    }

    pub fn with_max_level(mut self, max_level: u32) -> Self {
        self.max_level = max_level;
        self
    }

    pub fn levels(&self) -> usize {
        self.max_level as usize + 1
    }

    /// Counters across all levels.
    pub fn total_buckets(&self) -> usize {
        self.levels() * self.rows * self.buckets
    }
}

/// One Count-Sketch per subsampling level plus the set of coordinates that
/// were touched by the stream.
///
/// The observed set is stored once; level `ℓ`'s observed set is the subset of
/// coordinates surviving level `ℓ`, which keeps the sets nested by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsampledSketchStack {
    shape: StackShape,
    seed: SketchSeed,
    assignment: LevelAssignment,
    tables: Vec<CountSketchTable>,
    observed: BTreeSet<u64>,
}

const MAGIC: &[u8; 4] = b"TSSS";
const VERSION: u16 = 1;

impl SubsampledSketchStack {
    pub fn new(shape: StackShape, seed: SketchSeed) -> Result<Self> {
        let assignment = LevelAssignment::new(seed, shape.max_level)?;
        let tables = (0..=shape.max_level)
            .map(|level| {
                CountSketchTable::new(shape.rows, shape.buckets, shape.universe, seed.child(level))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape,
            seed,
            assignment,
            tables,
            observed: BTreeSet::new(),
        })
    }

    pub fn shape(&self) -> StackShape {
        self.shape
    }

    pub fn seed(&self) -> SketchSeed {
        self.seed
    }

    pub fn assignment(&self) -> &LevelAssignment {
        &self.assignment
    }

    pub fn levels(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, level: usize) -> &CountSketchTable {
        &self.tables[level]
    }

    pub fn tables(&self) -> &[CountSketchTable] {
        &self.tables
    }

    /// Every coordinate the stream has touched, ascending.
    pub fn observed_all(&self) -> impl Iterator<Item = u64> + '_ {
        self.observed.iter().copied()
    }

    /// Touched coordinates that survive `level`, ascending.
    pub fn observed(&self, level: usize) -> impl Iterator<Item = u64> + '_ {
        let level = level as u32;
        self.observed
            .iter()
            .copied()
            .filter(move |&i| self.assignment.survives(i, level))
    }

    pub fn observed_len(&self) -> usize {
        self.observed.len()
    }

    /// Routes `update` into every level its coordinate survives.
    ///
    /// On error the stack is unchanged.
    pub fn update(&mut self, update: Update) -> Result<()> {
        if update.index >= self.shape.universe {
            return Err(SketchError::IndexOutOfRange {
                index: update.index,
                universe: self.shape.universe,
            });
        }
        let top = self.assignment.level_of(update.index) as usize;
        for level in 0..=top {
            if let Err(e) = self.tables[level].update(update) {
                let undo = Update::new(update.index, -update.delta);
                for applied in &mut self.tables[..level] {
                    applied.update(undo).expect("reverting an applied update cannot overflow");
                }
                return Err(e);
            }
        }
        self.observed.insert(update.index);
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Update>>(&mut self, updates: I) -> Result<()> {
        for u in updates {
            self.update(u)?;
        }
        Ok(())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(SketchError::Incompatible(format!(
                "stack shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        if self.seed != other.seed {
            return Err(SketchError::Incompatible(format!(
                "stack seeds differ: {} vs {}",
                self.seed.master(),
                other.seed.master()
            )));
        }
        Ok(())
    }

    /// Table-wise sum with the observed sets unioned.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        let merged = self
            .tables
            .iter()
            .zip(&other.tables)
            .map(|(a, b)| CountSketchTable::merged(a, b))
            .collect::<Result<Vec<_>>>()?;
        self.tables = merged;
        self.observed.extend(other.observed.iter().copied());
        Ok(())
    }

    pub fn merged(a: &Self, b: &Self) -> Result<Self> {
        let mut out = a.clone();
        out.merge(b)?;
        Ok(out)
    }

    /// Header (magic, version, level count, master seed), then each level's
    /// table encoding, then the observed coordinates as a count followed by
    /// ascending indices. All integers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tables.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.master().to_le_bytes());
        for t in &self.tables {
            out.extend_from_slice(&t.to_bytes());
        }
        out.extend_from_slice(&(self.observed.len() as u64).to_le_bytes());
        for i in &self.observed {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| SketchError::Decode(m.to_string());
        if bytes.len() < 18 || &bytes[..4] != MAGIC {
            return Err(err("bad stack header"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(SketchError::Decode(format!("unsupported stack version {version}")));
        }
        let levels = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        if levels == 0 || levels > 64 {
            return Err(err("level count out of range"));
        }
        let seed = SketchSeed::new(u64::from_le_bytes(bytes[10..18].try_into().unwrap()));
        let mut pos = 18;
        let mut tables = Vec::with_capacity(levels as usize);
        for level in 0..levels {
            let (table, used) = CountSketchTable::decode_prefix(&bytes[pos..])?;
            if table.seed() != seed.child(level) {
                return Err(err("table seed does not match stack seed"));
            }
            pos += used;
            tables.push(table);
        }
        let first = &tables[0];
        let shape = StackShape {
            universe: first.universe(),
            rows: first.rows(),
            buckets: first.buckets(),
            max_level: levels - 1,
        };
        if tables.iter().any(|t| {
            (t.universe(), t.rows(), t.buckets()) != (shape.universe, shape.rows, shape.buckets)
        }) {
            return Err(err("levels disagree on table shape"));
        }
        let count_bytes = bytes.get(pos..pos + 8).ok_or_else(|| err("truncated observed count"))?;
        let count = u64::from_le_bytes(count_bytes.try_into().unwrap()) as usize;
        pos += 8;
        let body = count
            .checked_mul(8)
            .and_then(|len| bytes.get(pos..pos + len))
            .ok_or_else(|| err("truncated observed list"))?;
        if pos + body.len() != bytes.len() {
            return Err(err("trailing bytes after stack"));
        }
        let mut observed = BTreeSet::new();
        for chunk in body.chunks_exact(8) {
            let i = u64::from_le_bytes(chunk.try_into().unwrap());
            if i >= shape.universe {
                return Err(err("observed index out of range"));
            }
            observed.insert(i);
        }
        Ok(Self {
            shape,
            seed,
            assignment: LevelAssignment::new(seed, shape.max_level)?,
            tables,
            observed,
        })
    }
}
