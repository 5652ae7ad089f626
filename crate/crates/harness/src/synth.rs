//! Synthetic planted vectors: `k` heavy coordinates over a light tail.

use std::ops::RangeInclusive;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trimsketch::Update;

use crate::error::{HarnessError, Result};
use crate::stream::StreamFile;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedSpec {
    pub universe: u64,
    pub heavy_count: u64,
    pub heavy: RangeInclusive<u64>,
    pub tail: RangeInclusive<u64>,
}

impl PlantedSpec {
    /// Heavy values in `[10⁴, 10⁵]`, tail values in `[1, 100]`.
    pub fn standard(universe: u64, heavy_count: u64) -> Self {
        Self {
            universe,
            heavy_count,
            heavy: 10_000..=100_000,
            tail: 1..=100,
        }
    }
}

/// Insert-only stream, one update per coordinate in index order.
pub fn gen_planted(spec: &PlantedSpec, seed: u64) -> Result<StreamFile> {
    if spec.heavy_count >= spec.universe {
        return Err(HarnessError::invalid(
            "k",
            format!("need k < n, got k = {} and n = {}", spec.heavy_count, spec.universe),
        ));
    }
    if spec.heavy.is_empty() || spec.tail.is_empty() || *spec.tail.start() == 0 {
        return Err(HarnessError::invalid("value ranges", "must be nonempty and positive"));
    }
    let n = usize::try_from(spec.universe).map_err(|_| HarnessError::invalid("n", "too large"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heavy = vec![false; n];
    for i in index::sample(&mut rng, n, spec.heavy_count as usize) {
        heavy[i] = true;
    }
    let updates = heavy
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let range = if h { spec.heavy.clone() } else { spec.tail.clone() };
            Update::new(i as u64, rng.gen_range(range) as i64)
        })
        .collect();
    let m = *spec.heavy.end().max(spec.tail.end());
    StreamFile::new(spec.universe, m, updates)
}

pub fn gen_synthetic(universe: u64, heavy_count: u64, seed: u64) -> Result<StreamFile> {
    gen_planted(&PlantedSpec::standard(universe, heavy_count), seed)
}
