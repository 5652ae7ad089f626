//! Count-Sketch counter table with point queries, heavy-hitter extraction
//! and exact linear merging.
//!
//! Each row `r` hashes a coordinate to a bucket `h_r(i)` and a sign
//! `g_r(i) ∈ {-1, +1}`; the table stores `C[r][b] = Σ_{h_r(i)=b} g_r(i)·x_i`.
//! Counters are 64-bit and every update is checked, so the table always holds
//! the exact integer image of the net stream.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::hash::{hash_index, reduce, Purpose, SketchSeed};

/// One turnstile event: add `delta` to coordinate `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Update {
    pub index: u64,
    pub delta: i64,
}

impl Update {
    pub const fn new(index: u64, delta: i64) -> Self {
        Self { index, delta }
    }
}

const MAGIC: &[u8; 4] = b"TSCS";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone)]
pub struct CountSketchTable {
    rows: usize,
    buckets: usize,
    universe: u64,
    seed: SketchSeed,
    counters: Vec<i64>,
    bucket_seeds: Vec<u64>,
    sign_seeds: Vec<u64>,
}

impl PartialEq for CountSketchTable {
    fn eq(&self, other: &Self) -> bool {
        self.same_shape(other) && self.counters == other.counters
    }
}

impl Eq for CountSketchTable {}

impl CountSketchTable {
    pub fn new(rows: usize, buckets: usize, universe: u64, seed: SketchSeed) -> Result<Self> {
        if rows == 0 {
            return Err(SketchError::param("rows", "must be positive"));
        }
        if buckets == 0 {
            return Err(SketchError::param("buckets", "must be positive"));
        }
        if universe == 0 {
            return Err(SketchError::param("universe", "must be positive"));
        }
        if rows > u32::MAX as usize || buckets > u32::MAX as usize {
            return Err(SketchError::param("shape", "rows and buckets must fit in 32 bits"));
        }
        let cells = rows
            .checked_mul(buckets)
            .ok_or_else(|| SketchError::param("shape", "rows × buckets overflows"))?;
        let bucket_seeds = (0..rows as u32).map(|r| seed.derive(r, Purpose::Bucket)).collect();
        let sign_seeds = (0..rows as u32).map(|r| seed.derive(r, Purpose::Sign)).collect();
        Ok(Self {
            rows,
            buckets,
            universe,
            seed,
            counters: vec![0; cells],
            bucket_seeds,
            sign_seeds,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn universe(&self) -> u64 {
        self.universe
    }

    pub fn seed(&self) -> SketchSeed {
        self.seed
    }

    /// Row-major view of the counters.
    pub fn counters(&self) -> &[i64] {
        &self.counters
    }

    pub fn is_zero(&self) -> bool {
        self.counters.iter().all(|&c| c == 0)
    }

    #[inline]
    pub fn bucket_of(&self, row: usize, index: u64) -> usize {
        reduce(hash_index(self.bucket_seeds[row], index), self.buckets as u64) as usize
    }

    #[inline]
    pub fn sign_of(&self, row: usize, index: u64) -> i64 {
        if hash_index(self.sign_seeds[row], index) >> 63 == 0 {
            1
        } else {
            -1
        }
    }

    fn check_index(&self, index: u64) -> Result<()> {
        if index >= self.universe {
            return Err(SketchError::IndexOutOfRange {
                index,
                universe: self.universe,
            });
        }
        Ok(())
    }

    /// Applies one update to every row.
    ///
    /// The update is all-or-nothing: on overflow no counter is modified.
    /// Counters are kept within `[-i64::MAX, i64::MAX]` so that sign flips
    /// never overflow.
    pub fn update(&mut self, update: Update) -> Result<()> {
        self.check_index(update.index)?;
        if update.delta == 0 {
            return Ok(());
        }
        if update.delta == i64::MIN {
            return Err(SketchError::CounterOverflow {
                row: 0,
                bucket: self.bucket_of(0, update.index),
            });
        }
        let mut cells = Vec::with_capacity(self.rows);
        for row in 0..self.rows {
            let bucket = self.bucket_of(row, update.index);
            let cell = row * self.buckets + bucket;
            let step = if self.sign_of(row, update.index) > 0 {
                Some(update.delta)
            } else {
                update.delta.checked_neg()
            };
            match step
                .and_then(|s| self.counters[cell].checked_add(s))
                .filter(|&v| v != i64::MIN)
            {
                Some(next) => {
                    cells.push((cell, self.counters[cell]));
                    self.counters[cell] = next;
                }
                None => {
                    for &(cell, old) in cells.iter().rev() {
                        self.counters[cell] = old;
                    }
                    return Err(SketchError::CounterOverflow { row, bucket });
                }
            }
        }
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Update>>(&mut self, updates: I) -> Result<()> {
        for u in updates {
            self.update(u)?;
        }
        Ok(())
    }

    /// Median over rows of `g_r(i)·C[r][h_r(i)]`; for an even row count the
    /// lower of the two middle values.
    pub fn estimate(&self, index: u64) -> Result<i64> {
        self.check_index(index)?;
        Ok(self.estimate_unchecked(index))
    }

    pub(crate) fn estimate_unchecked(&self, index: u64) -> i64 {
        let mut values = self.row_values_unchecked(index);
        values.sort_unstable();
        values[(self.rows - 1) / 2]
    }

    /// Per-row estimates `g_r(i)·C[r, h_r(i)]`, in row order.
    pub fn row_values(&self, index: u64) -> Result<Vec<i64>> {
        self.check_index(index)?;
        Ok(self.row_values_unchecked(index))
    }

    fn row_values_unchecked(&self, index: u64) -> Vec<i64> {
        (0..self.rows)
            .map(|row| {
                let bucket = self.bucket_of(row, index);
                self.sign_of(row, index) * self.counters[row * self.buckets + bucket]
            })
            .collect()
    }

    /// Largest group of row estimates lying within `tolerance·max(|lo|, |hi|)`
    /// of each other. Ties go to the tighter group, then the larger magnitude.
    pub fn consensus(&self, index: u64, tolerance: f64) -> Result<Consensus> {
        self.consensus_within(index, tolerance, |_| true)
    }

    /// [`consensus`](Self::consensus) restricted to the rows for which
    /// `usable(row)` holds.
    pub fn consensus_within<F: Fn(usize) -> bool>(&self, index: u64, tolerance: f64, usable: F) -> Result<Consensus> {
        let values = self.row_values(index)?;
        let mut c = consensus_of(
            &values.iter().enumerate().filter(|&(r, _)| usable(r)).map(|(_, &v)| v).collect::<Vec<_>>(),
            tolerance,
        );
        // Map positions among the usable rows back to row numbers.
        let usable_rows: Vec<usize> = (0..values.len()).filter(|&r| usable(r)).collect();
        for r in &mut c.rows {
            *r = usable_rows[*r];
        }
        Ok(c)
    }

    /// Estimate of `‖x‖₂` from the counters alone: the median over rows of
    /// the row's Euclidean norm (each row is an unbiased `F₂` estimator).
    pub fn norm_estimate(&self) -> f64 {
        let mut energies: Vec<f64> = self
            .counters
            .chunks_exact(self.buckets)
            .map(|row| row.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>())
            .collect();
        energies.sort_by(f64::total_cmp);
        energies[(self.rows - 1) / 2].sqrt()
    }

    /// Reports every candidate whose point estimate has magnitude at least
    /// `(9/10)·θ·tail_norm_hint`. Candidates with a zero estimate are never
    /// reported. Duplicate candidates are collapsed; entries come back sorted
    /// by index.
    pub fn heavy_hitters<I>(
        &self,
        candidates: I,
        theta: f64,
        k: usize,
        tail_norm_hint: f64,
    ) -> Result<HeavyHitterReport>
    where
        I: IntoIterator<Item = u64>,
    {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(SketchError::param("theta", format!("must lie in (0, 1], got {theta}")));
        }
        if !(tail_norm_hint >= 0.0 && tail_norm_hint.is_finite()) {
            return Err(SketchError::param(
                "tail_norm_hint",
                format!("must be a finite nonnegative number, got {tail_norm_hint}"),
            ));
        }
        let cutoff = 0.9 * theta * tail_norm_hint;
        let mut indices: Vec<u64> = candidates.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        let mut entries = Vec::new();
        for index in indices {
            self.check_index(index)?;
            let estimate = self.estimate_unchecked(index);
            if estimate != 0 && estimate.unsigned_abs() as f64 >= cutoff {
                entries.push(HeavyHitter { index, estimate });
            }
        }
        Ok(HeavyHitterReport { entries, theta, k })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.buckets == other.buckets
            && self.universe == other.universe
            && self.seed == other.seed
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.buckets != other.buckets || self.universe != other.universe
        {
            return Err(SketchError::Incompatible(format!(
                "shape {}x{} over n={} vs {}x{} over n={}",
                self.rows, self.buckets, self.universe, other.rows, other.buckets, other.universe
            )));
        }
        if self.seed != other.seed {
            return Err(SketchError::Incompatible(format!(
                "seed {} vs {}",
                self.seed.master(),
                other.seed.master()
            )));
        }
        Ok(())
    }

    /// Adds `other` into `self` coordinate-wise. Nothing is modified on error.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        let mut merged = self.counters.clone();
        for (cell, (acc, &add)) in merged.iter_mut().zip(&other.counters).enumerate() {
            *acc = acc
                .checked_add(add)
                .filter(|&v| v != i64::MIN)
                .ok_or(SketchError::CounterOverflow {
                    row: cell / self.buckets,
                    bucket: cell % self.buckets,
                })?;
        }
        self.counters = merged;
        Ok(())
    }

    pub fn merged(a: &Self, b: &Self) -> Result<Self> {
        let mut out = a.clone();
        out.merge(b)?;
        Ok(out)
    }

    /// Versioned little-endian layout: magic, version, rows, buckets,
    /// universe, master seed, then the counters row by row.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.counters.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.buckets as u32).to_le_bytes());
        out.extend_from_slice(&self.universe.to_le_bytes());
        out.extend_from_slice(&self.seed.master().to_le_bytes());
        for c in &self.counters {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (table, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(SketchError::Decode(format!(
                "{} trailing bytes after table",
                bytes.len() - used
            )));
        }
        Ok(table)
    }

    /// Decodes one table from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub(crate) fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(SketchError::Decode("truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(SketchError::Decode("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(SketchError::Decode(format!("unsupported version {version}")));
        }
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let buckets = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let universe = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
        let master = u64::from_le_bytes(bytes[22..30].try_into().unwrap());
        let mut table = Self::new(rows, buckets, universe, SketchSeed::new(master))
            .map_err(|e| SketchError::Decode(e.to_string()))?;
        let body = table.counters.len() * 8;
        let end = HEADER_LEN
            .checked_add(body)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| SketchError::Decode("truncated counters".into()))?;
        for (slot, chunk) in table
            .counters
            .iter_mut()
            .zip(bytes[HEADER_LEN..end].chunks_exact(8))
        {
            let value = i64::from_le_bytes(chunk.try_into().unwrap());
            if value == i64::MIN {
                return Err(SketchError::Decode("counter out of range".into()));
            }
            *slot = value;
        }
        Ok((table, end))
    }
}

fn within(lo: i64, hi: i64, tolerance: f64) -> bool {
    let scale = lo.unsigned_abs().max(hi.unsigned_abs()) as f64;
    (hi as f64 - lo as f64) <= tolerance * scale
}

/// Largest agreeing group among `values`; `rows` are positions in `values`.
pub fn consensus_of(values: &[i64], tolerance: f64) -> Consensus {
    let mut sorted: Vec<(i64, usize)> = values.iter().enumerate().map(|(r, &v)| (v, r)).collect();
    sorted.sort_unstable();
    let mut best = Consensus {
        value: 0,
        rows: Vec::new(),
        spread: 0,
    };
    for start in 0..sorted.len() {
        let stop = (start..sorted.len())
            .rev()
            .find(|&e| within(sorted[start].0, sorted[e].0, tolerance))
            .unwrap_or(start);
        let group = &sorted[start..=stop];
        let size = group.len();
        let spread = group[size - 1].0.abs_diff(group[0].0);
        let value = group[(size - 1) / 2].0;
        let better = size > best.rows.len()
            || (size == best.rows.len()
                && (spread < best.spread
                    || (spread == best.spread && value.unsigned_abs() > best.value.unsigned_abs())));
        if better {
            let mut rows: Vec<usize> = group.iter().map(|&(_, r)| r).collect();
            rows.sort_unstable();
            best = Consensus { value, rows, spread };
        }
    }
    best
}

/// Agreement among a coordinate's row estimates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Consensus {
    /// Lower median of the group.
    pub value: i64,
    /// Rows in the agreeing group, ascending.
    pub rows: Vec<usize>,
    /// Largest minus smallest value in the group.
    pub spread: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeavyHitter {
    pub index: u64,
    pub estimate: i64,
}

/// Candidates whose estimated magnitude cleared the heavy-hitter cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyHitterReport {
    pub entries: Vec<HeavyHitter>,
    pub theta: f64,
    pub k: usize,
}

impl HeavyHitterReport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, index: u64) -> bool {
        self.entries
            .binary_search_by_key(&index, |h| h.index)
            .is_ok()
    }

    /// Keeps only the `limit` entries of largest magnitude (ties by index).
    pub fn retain_largest(&mut self, limit: usize) {
        if self.entries.len() <= limit {
            return;
        }
        self.entries
            .sort_by(|a, b| b.estimate.unsigned_abs().cmp(&a.estimate.unsigned_abs()).then(a.index.cmp(&b.index)));
        self.entries.truncate(limit);
        self.entries.sort_by_key(|h| h.index);
    }
}
