//! Statistics computed from estimated band sizes.
//!
//! Every estimator treats the band sizes as a step function: `s̃_0`
//! coordinates of value `ζ(1+ε)^t`, then `s̃_1` of value `ζ(1+ε)^(t−1)`, and so
//! on. Ranks beyond `Σ s̃_j` are treated as zeros and contribute nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::levelset::{LevelSetSizes, SizeSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    TopK,
    TrimmedK,
    SumAboveThreshold,
    GIndex,
    HIndexMoment,
}

impl QueryKind {
    pub fn name(self) -> &'static str {
        match self {
            QueryKind::TopK => "top_k",
            QueryKind::TrimmedK => "trimmed_k",
            QueryKind::SumAboveThreshold => "sum_above_threshold",
            QueryKind::GIndex => "g_index",
            QueryKind::HIndexMoment => "h_index_moment",
        }
    }
}

/// A statistic to evaluate together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentQuery {
    pub kind: QueryKind,
    pub k: Option<u64>,
    pub threshold: Option<u64>,
    pub p: f64,
    pub eps: f64,
}

impl MomentQuery {
    pub fn top_k(k: u64, p: f64, eps: f64) -> Self {
        Self { kind: QueryKind::TopK, k: Some(k), threshold: None, p, eps }
    }

    pub fn trimmed_k(k: u64, p: f64, eps: f64) -> Self {
        Self { kind: QueryKind::TrimmedK, k: Some(k), threshold: None, p, eps }
    }

    pub fn sum_above(threshold: u64, p: f64, eps: f64) -> Self {
        Self { kind: QueryKind::SumAboveThreshold, k: None, threshold: Some(threshold), p, eps }
    }

    pub fn g_index(p: f64, eps: f64) -> Self {
        Self { kind: QueryKind::GIndex, k: None, threshold: None, p, eps }
    }

    pub fn h_index(p: f64, eps: f64) -> Self {
        Self { kind: QueryKind::HIndexMoment, k: None, threshold: None, p, eps }
    }

    pub fn validate(&self, universe: u64) -> Result<()> {
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(SketchError::param("p", format!("must be finite and nonnegative, got {}", self.p)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(SketchError::param("eps", format!("must lie in (0, 1], got {}", self.eps)));
        }
        match self.kind {
            QueryKind::TopK | QueryKind::TrimmedK if self.k.is_none() => {
                Err(SketchError::param("k", "required for this query"))
            }
            QueryKind::TrimmedK if self.k.unwrap().saturating_mul(2) > universe => Err(SketchError::param(
                "k",
                format!("trimming needs k ≤ n/2 (k = {}, n = {universe})", self.k.unwrap()),
            )),
            QueryKind::SumAboveThreshold if self.threshold.is_none() => {
                Err(SketchError::param("threshold", "required for this query"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Subsampling levels whose counts fed the bands that were summed.
    pub levels_used: Vec<u32>,
    /// Whether any summed band was counted directly at level 0.
    pub direct_used: bool,
    /// Fraction of the cut band that was taken.
    pub partial_fraction: Option<f64>,
    /// Second cut band (trimmed queries).
    pub upper_cut_index: Option<usize>,
    /// Estimated index `k̃` (g- and h-index queries).
    pub index: Option<u64>,
}

/// Estimator output.
///
/// `guarantee_flag` is false when the query falls outside the published
/// regime (exponent range, or a rank that no detected band reaches); the
/// value is still returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub kind: QueryKind,
    pub k: Option<u64>,
    pub p: f64,
    pub epsilon: f64,
    pub threshold: Option<u64>,
    pub value: f64,
    pub cut_index: Option<usize>,
    pub seed: u64,
    pub guarantee_flag: bool,
    pub diagnostics: Diagnostics,
}

/// `v^p` with `0^0 = 0`.
fn pow_p(value: f64, p: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else {
        value.powf(p)
    }
}

fn weights(sizes: &LevelSetSizes, p: f64) -> Vec<f64> {
    (0..sizes.sizes.len())
        .map(|j| pow_p(sizes.config.set_value(j), p))
        .collect()
}

/// Sum over the first `rank` entries of the step function.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PrefixSum {
    value: f64,
    /// Band containing rank `rank`, if any band reaches it.
    cut: Option<usize>,
    partial: Option<f64>,
}

fn prefix_sum(sizes: &LevelSetSizes, weights: &[f64], rank: f64) -> PrefixSum {
    let mut value = 0.0;
    let mut before = 0.0;
    if rank <= 0.0 {
        return PrefixSum { value: 0.0, cut: None, partial: None };
    }
    for (j, (&s, &w)) in sizes.sizes.iter().zip(weights).enumerate() {
        let s = s as f64;
        if before + s >= rank {
            let take = (rank - before).max(0.0);
            value += take * w;
            return PrefixSum {
                value,
                cut: Some(j),
                partial: Some(if s > 0.0 { take / s } else { 0.0 }),
            };
        }
        value += s * w;
        before += s;
    }
    PrefixSum { value, cut: None, partial: None }
}

fn levels_through(sizes: &LevelSetSizes, last: Option<usize>) -> (Vec<u32>, bool) {
    let end = last.map_or(sizes.sizes.len(), |j| j + 1);
    let mut levels = Vec::new();
    let mut direct = false;
    for (src, &s) in sizes.sources[..end].iter().zip(&sizes.sizes) {
        match src {
            SizeSource::Level(l) if s > 0 => levels.push(*l),
            SizeSource::Direct if s > 0 => direct = true,
            _ => {}
        }
    }
    levels.sort_unstable();
    levels.dedup();
    (levels, direct)
}

fn in_published_range(sizes: &LevelSetSizes, p: f64) -> bool {
    if p <= 2.0 {
        return true;
    }
    let c = sizes.config.constants.theta_exponent;
    configure_for_large_p(sizes.config.universe, p, sizes.config.eps, c)
        .is_ok_and(|needed| sizes.buckets as u64 >= needed)
}

fn result(
    sizes: &LevelSetSizes,
    kind: QueryKind,
    p: f64,
    value: f64,
    cut: Option<usize>,
    guarantee: bool,
    diagnostics: Diagnostics,
) -> QueryResult {
    QueryResult {
        kind,
        k: None,
        p,
        epsilon: sizes.config.eps,
        threshold: None,
        value,
        cut_index: cut,
        seed: sizes.config.seed,
        guarantee_flag: guarantee,
        diagnostics,
    }
}

/// Moment of the `k` largest estimated magnitudes.
pub fn top_k_moment(sizes: &LevelSetSizes, k: u64, p: f64) -> QueryResult {
    let w = weights(sizes, p);
    let sum = prefix_sum(sizes, &w, k as f64);
    let (levels_used, direct_used) = levels_through(sizes, sum.cut);
    let covered = k == 0 || sum.cut.is_some();
    let mut out = result(
        sizes,
        QueryKind::TopK,
        p,
        sum.value,
        sum.cut,
        covered && in_published_range(sizes, p),
        Diagnostics {
            levels_used,
            direct_used,
            partial_fraction: sum.partial,
            ..Diagnostics::default()
        },
    );
    out.k = Some(k);
    out
}

/// Moment of ranks `k+1 ..= n−k`, as the difference of two prefix sums.
pub fn trimmed_k_moment(sizes: &LevelSetSizes, k: u64, p: f64) -> Result<QueryResult> {
    let n = sizes.config.universe;
    if k.saturating_mul(2) > n {
        return Err(SketchError::param(
            "k",
            format!("trimming needs k ≤ n/2 (k = {k}, n = {n})"),
        ));
    }
    let w = weights(sizes, p);
    let low = prefix_sum(sizes, &w, k as f64);
    let high = prefix_sum(sizes, &w, (n - k) as f64);
    let (levels_used, direct_used) = levels_through(sizes, high.cut);
    let mut out = result(
        sizes,
        QueryKind::TrimmedK,
        p,
        high.value - low.value,
        low.cut,
        (k == 0 || low.cut.is_some()) && in_published_range(sizes, p),
        Diagnostics {
            levels_used,
            direct_used,
            partial_fraction: low.partial,
            upper_cut_index: high.cut,
            ..Diagnostics::default()
        },
    );
    out.k = Some(k);
    Ok(out)
}

/// Moment of the bands whose upper boundary is at least `threshold`.
pub fn sum_above_threshold(sizes: &LevelSetSizes, threshold: u64, p: f64) -> QueryResult {
    let cfg = &sizes.config;
    let t = threshold as f64;
    // Upper boundaries decrease with j, so the qualifying bands are a prefix.
    let last = (0..cfg.sets).take_while(|&j| cfg.set_value(j) >= t).last();
    let w = weights(sizes, p);
    let value = last.map_or(0.0, |i| {
        sizes.sizes[..=i]
            .iter()
            .zip(&w)
            .map(|(&s, &w)| s as f64 * w)
            .sum()
    });
    let (levels_used, direct_used) = match last {
        Some(i) => levels_through(sizes, Some(i)),
        None => (Vec::new(), false),
    };
    let mut out = result(
        sizes,
        QueryKind::SumAboveThreshold,
        p,
        value,
        last,
        in_published_range(sizes, p),
        Diagnostics {
            levels_used,
            direct_used,
            ..Diagnostics::default()
        },
    );
    out.threshold = Some(threshold);
    out
}

/// Largest `k̃ ≤ n` whose estimated top-`k̃` moment is at least `k̃^(p+1)`.
///
/// The estimated prefix moment is piecewise linear with nonincreasing
/// slopes, so `top(k) − k^(p+1)` is concave and the feasible ranks form an
/// interval starting at zero. Bands are scanned in order; inside the band
/// where feasibility ends, the last feasible rank is found by bisection.
pub fn g_index(sizes: &LevelSetSizes, p: f64) -> QueryResult {
    let n = sizes.config.universe;
    let w = weights(sizes, p);
    let feasible = |before: u64, acc: f64, weight: f64, k: u64| {
        acc + (k - before) as f64 * weight >= (k as f64).powf(p + 1.0)
    };
    let mut acc = 0.0;
    let mut before = 0u64;
    let mut best = 0u64;
    let mut cut = None;
    let mut done = false;
    for (j, (&s, &weight)) in sizes.sizes.iter().zip(&w).enumerate() {
        if s == 0 {
            continue;
        }
        let end = (before + s).min(n);
        if end <= before {
            break;
        }
        if feasible(before, acc, weight, end) {
            best = end;
            cut = Some(j);
        } else {
            let (mut lo, mut hi) = (before, end);
            // Invariant: lo feasible (or the previous band's end), hi infeasible.
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if feasible(before, acc, weight, mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if lo > before {
                best = lo;
                cut = Some(j);
            }
            done = true;
            break;
        }
        acc += (end - before) as f64 * weight;
        before = end;
        if before >= n {
            done = true;
            break;
        }
    }
    if !done && best == before {
        // Past every band the prefix stays at `acc`: largest k with acc ≥ k^(p+1).
        let mut k = acc.powf(1.0 / (p + 1.0)).floor() as u64;
        while k > 0 && (k as f64).powf(p + 1.0) > acc {
            k -= 1;
        }
        while ((k + 1) as f64).powf(p + 1.0) <= acc {
            k += 1;
        }
        best = best.max(k.min(n));
    }
    let (levels_used, direct_used) = levels_through(sizes, cut);
    result(
        sizes,
        QueryKind::GIndex,
        p,
        best as f64,
        cut,
        (1.0..=2.0).contains(&p),
        Diagnostics {
            levels_used,
            direct_used,
            index: Some(best),
            ..Diagnostics::default()
        },
    )
}

/// Largest `k̃` with `f_k̃ ≥ k̃` on the estimated step function, and the
/// moment of the top `k̃` entries. With `p = 0` the value is `k̃` itself.
///
/// The sizes should come from a level-set estimate at a tenth of the target
/// accuracy.
pub fn h_index_moment(sizes: &LevelSetSizes, p: f64) -> QueryResult {
    let mut before = 0u64;
    let mut best = 0u64;
    let mut cut = None;
    for (j, &s) in sizes.sizes.iter().enumerate() {
        if s == 0 {
            continue;
        }
        let value = sizes.config.set_value(j).floor() as u64;
        if value <= before {
            break;
        }
        let reach = (before + s).min(value);
        if reach > best {
            best = reach;
            cut = Some(j);
        }
        before += s;
    }
    let w = weights(sizes, p);
    let sum = prefix_sum(sizes, &w, best as f64);
    let (levels_used, direct_used) = levels_through(sizes, cut);
    result(
        sizes,
        QueryKind::HIndexMoment,
        p,
        sum.value,
        cut,
        in_published_range(sizes, p),
        Diagnostics {
            levels_used,
            direct_used,
            partial_fraction: sum.partial,
            index: Some(best),
            ..Diagnostics::default()
        },
    )
}

/// Buckets per row needed for `p > 2`: `⌈(log n/ε)^(c+6)·n^(1−2/p)⌉`.
pub fn configure_for_large_p(universe: u64, p: f64, eps: f64, c: f64) -> Result<u64> {
    if !(p > 2.0) {
        return Err(SketchError::param("p", format!("large-p configuration needs p > 2, got {p}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(SketchError::param("eps", format!("must lie in (0, 1], got {eps}")));
    }
    if universe == 0 {
        return Err(SketchError::param("universe", "must be positive"));
    }
    let n = universe as f64;
    let log_n = n.log2().max(1.0);
    let buckets = ((log_n / eps).powf(c + 6.0) * n.powf(1.0 - 2.0 / p)).ceil();
    if !buckets.is_finite() || buckets > u64::MAX as f64 {
        return Err(SketchError::param("p", "bucket count does not fit in 64 bits"));
    }
    Ok(buckets as u64)
}

/// Evaluates `query` against frozen sizes. `h_sizes` must be the estimate at
/// `ε/10` used by h-index queries; other kinds ignore it.
pub fn evaluate(query: &MomentQuery, sizes: &LevelSetSizes, h_sizes: Option<&LevelSetSizes>) -> Result<QueryResult> {
    query.validate(sizes.config.universe)?;
    let p = query.p;
    let mut out = match query.kind {
        QueryKind::TopK => top_k_moment(sizes, query.k.unwrap(), p),
        QueryKind::TrimmedK => trimmed_k_moment(sizes, query.k.unwrap(), p)?,
        QueryKind::SumAboveThreshold => sum_above_threshold(sizes, query.threshold.unwrap(), p),
        QueryKind::GIndex => g_index(sizes, p),
        QueryKind::HIndexMoment => h_index_moment(h_sizes.unwrap_or(sizes), p),
    };
    out.epsilon = query.eps;
    Ok(out)
}
