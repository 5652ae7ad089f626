//! Exact reference computations over a fully materialized frequency vector.
//!
//! Everything here is brute force with arbitrary-precision integers. Moments
//! are taken with integer exponents so the results are exact; `0^0` is treated
//! as `0`, i.e. zero coordinates never contribute.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Result, SketchError};
use crate::sketch::Update;

/// Sparse exact frequency vector over `[0, n)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExactVector {
    universe: u64,
    entries: BTreeMap<u64, i64>,
}

impl ExactVector {
    pub fn new(universe: u64) -> Self {
        Self {
            universe,
            entries: BTreeMap::new(),
        }
    }

    /// Dense input; the universe is the slice length.
    pub fn from_dense(values: &[i64]) -> Self {
        let mut x = Self::new(values.len() as u64);
        for (i, &v) in values.iter().enumerate() {
            if v != 0 {
                x.entries.insert(i as u64, v);
            }
        }
        x
    }

    pub fn from_updates<I: IntoIterator<Item = Update>>(universe: u64, updates: I) -> Result<Self> {
        let mut x = Self::new(universe);
        for u in updates {
            x.apply(u)?;
        }
        Ok(x)
    }

    pub fn apply(&mut self, update: Update) -> Result<()> {
        if update.index >= self.universe {
            return Err(SketchError::IndexOutOfRange {
                index: update.index,
                universe: self.universe,
            });
        }
        let current = self.entries.get(&update.index).copied().unwrap_or(0);
        let next = current
            .checked_add(update.delta)
            .ok_or(SketchError::CounterOverflow { row: 0, bucket: 0 })?;
        if next == 0 {
            self.entries.remove(&update.index);
        } else {
            self.entries.insert(update.index, next);
        }
        Ok(())
    }

    pub fn universe(&self) -> u64 {
        self.universe
    }

    pub fn get(&self, index: u64) -> i64 {
        self.entries.get(&index).copied().unwrap_or(0)
    }

    /// Number of nonzero coordinates.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, i64)> + '_ {
        self.entries.iter().map(|(&i, &v)| (i, v))
    }

    pub fn max_magnitude(&self) -> u64 {
        self.entries.values().map(|v| v.unsigned_abs()).max().unwrap_or(0)
    }

    /// Nonzero coordinates ordered by decreasing magnitude, ties by
    /// increasing index.
    pub fn sorted(&self) -> Vec<(u64, u64)> {
        let mut out: Vec<(u64, u64)> = self.iter().map(|(i, v)| (i, v.unsigned_abs())).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Magnitudes in nonincreasing order (nonzeros only).
    pub fn magnitudes(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.entries.values().map(|v| v.unsigned_abs()).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    pub fn scaled(&self, factor: i64) -> Option<Self> {
        let mut out = Self::new(self.universe);
        if factor == 0 {
            return Some(out);
        }
        for (i, v) in self.iter() {
            out.entries.insert(i, v.checked_mul(factor)?);
        }
        Some(out)
    }
}

fn power(magnitude: u64, p: u32) -> BigUint {
    if magnitude == 0 {
        BigUint::zero()
    } else {
        BigUint::from(magnitude).pow(p)
    }
}

fn prefix_moment(magnitudes: &[u64], count: u64, p: u32) -> BigUint {
    let take = count.min(magnitudes.len() as u64) as usize;
    magnitudes[..take].iter().map(|&m| power(m, p)).sum()
}

/// `|a_rank|` for a 1-based rank; ranks past the nonzeros give 0 and rank 0
/// is clamped to 1.
pub fn magnitude_at_rank(x: &ExactVector, rank: u64) -> u64 {
    let rank = rank.max(1);
    x.magnitudes().get(rank as usize - 1).copied().unwrap_or(0)
}

pub fn full_moment(x: &ExactVector, p: u32) -> BigUint {
    x.entries.values().map(|v| power(v.unsigned_abs(), p)).sum()
}

/// `Σ_{i ≤ k} |a_i|^p`.
pub fn exact_top_k(x: &ExactVector, k: u64, p: u32) -> BigUint {
    prefix_moment(&x.magnitudes(), k, p)
}

/// `‖x₋ₖ‖_p^p`: the moment of everything outside the top `k`.
pub fn residual_norm(x: &ExactVector, k: u64, p: u32) -> BigUint {
    let mags = x.magnitudes();
    let skip = k.min(mags.len() as u64) as usize;
    mags[skip..].iter().map(|&m| power(m, p)).sum()
}

/// `Σ_{i=k+1}^{n−k} |a_i|^p`, with zero coordinates ranked last.
pub fn exact_trimmed(x: &ExactVector, k: u64, p: u32) -> Result<BigUint> {
    if k.saturating_mul(2) > x.universe {
        return Err(SketchError::param(
            "k",
            format!("trimming {k} from each end needs k ≤ n/2 (n = {})", x.universe),
        ));
    }
    let mags = x.magnitudes();
    Ok(prefix_moment(&mags, x.universe - k, p) - prefix_moment(&mags, k, p))
}

/// Moment of the coordinates with `|x_i| ≥ threshold`.
pub fn exact_sum_above(x: &ExactVector, threshold: u64, p: u32) -> BigUint {
    x.entries
        .values()
        .map(|v| v.unsigned_abs())
        .filter(|&m| m >= threshold)
        .map(|m| power(m, p))
        .sum()
}

/// Largest `k` with `|a_k| ≥ k`.
pub fn exact_h_index(x: &ExactVector) -> u64 {
    x.magnitudes()
        .iter()
        .enumerate()
        .take_while(|&(i, &m)| m > i as u64)
        .count() as u64
}

/// Largest `k ≤ n` with `Σ_{i ≤ k} |a_i|^p ≥ k^(p+1)`.
///
/// The prefix moment is concave in `k` and `k^(p+1)` convex, so the feasible
/// ranks form an interval starting at 0. Past the nonzeros the prefix is
/// constant and the bound is an integer root.
pub fn exact_g_index(x: &ExactVector, p: u32) -> u64 {
    let mags = x.magnitudes();
    let mut prefix = BigUint::zero();
    for (i, &m) in mags.iter().enumerate() {
        let k = i as u64 + 1;
        if k > x.universe {
            return x.universe;
        }
        prefix += power(m, p);
        if prefix < BigUint::from(k).pow(p + 1) {
            return k - 1;
        }
    }
    let root = prefix.nth_root(p + 1).to_u64().unwrap_or(u64::MAX);
    root.max(mags.len() as u64).min(x.universe)
}

/// Both sides of the top-k accuracy hypothesis, evaluated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub holds: bool,
    pub lhs: BigRational,
    pub rhs: BigRational,
}

/// Evaluates `a_k² ≥ (ε/log n)^c·‖x₋ₖ‖₂²/k` (or, for `p > 2`,
/// `|a_k|^p ≥ (ε/log n)^c·‖x₋ₖ‖_p^p/k`).
///
/// `log` is base 2, floored at 1. The factor `(ε/log n)^c` is computed in
/// double precision and then converted exactly, so the comparison itself
/// never rounds.
pub fn check_condition(x: &ExactVector, k: u64, eps: f64, c: f64, p: u32) -> Result<ConditionReport> {
    if k == 0 {
        return Err(SketchError::param("k", "must be at least 1"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(SketchError::param("eps", format!("must lie in (0, 1], got {eps}")));
    }
    let norm_p = if p > 2 { p } else { 2 };
    let log_n = (x.universe as f64).log2().max(1.0);
    let factor = BigRational::from_float((eps / log_n).powf(c))
        .ok_or_else(|| SketchError::param("c", "factor is not finite"))?;
    let head = power(magnitude_at_rank(x, k), norm_p);
    let tail = residual_norm(x, k, norm_p);
    let lhs = BigRational::from_integer(head.into());
    let rhs = factor * BigRational::new(tail.into(), BigUint::from(k).into());
    Ok(ConditionReport {
        holds: lhs >= rhs,
        lhs,
        rhs,
    })
}

pub fn to_f64(value: &BigUint) -> f64 {
    value.to_f64().unwrap_or(f64::INFINITY)
}
