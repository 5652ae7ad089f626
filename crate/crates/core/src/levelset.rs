//! Geometric level sets and their size estimates.
//!
//! Magnitudes are binned into `t` bands `S_j = [ζ(1+ε)^(t−j−1), ζ(1+ε)^(t−j))`
//! with a random shift `ζ ∈ [1/2, 1]`. Band sizes are read off the heavy
//! hitters of the subsampled Count-Sketch stack: the top `t₀ + 1` bands are
//! counted directly from the full stream's heavy hitters, every other band
//! from the deepest level that still holds at least `z` of its members,
//! rescaled by `2^ℓ`.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::hash::{Purpose, SketchSeed};
use crate::oracle::{self, ExactVector};
use crate::sketch::{consensus_of, Consensus, CountSketchTable, HeavyHitter};
use crate::subsample::SubsampledSketchStack;

fn log2_floor1(v: f64) -> f64 {
    v.log2().max(1.0)
}

/// Tunable constants behind the asymptotic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetConstants {
    /// `K` in `t₀ = K·log(ε⁻¹·log m)`.
    pub direct_factor: f64,
    /// `C_z` in `z = ⌈C_z·log n/ε²⌉`.
    pub quorum_factor: f64,
    /// `c` in `θ = (ε/log n)^(c+4)`.
    pub theta_exponent: f64,
}

impl Default for LevelSetConstants {
    fn default() -> Self {
        Self {
            direct_factor: 4.0,
            quorum_factor: 2.0,
            theta_exponent: 1.0,
        }
    }
}

/// Row-agreement filter applied to heavy hitters before binning.
///
/// A candidate whose largest group of mutually close row estimates (see
/// [`CountSketchTable::consensus`](crate::sketch::CountSketchTable::consensus))
/// has fewer than `rows` members is dropped; otherwise it is binned by that
/// group's value instead of the plain median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRule {
    pub rows: usize,
    /// Relative spread allowed within the group.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetConfig {
    pub eps: f64,
    /// Upper bound `m` on every coordinate's magnitude.
    pub max_magnitude: u64,
    pub universe: u64,
    pub constants: LevelSetConstants,
    /// Number of bands `t`.
    pub sets: usize,
    /// Last band counted directly (`t₀`).
    pub direct_sets: usize,
    /// Survivor quorum `z`.
    pub quorum: usize,
    pub zeta: f64,
    /// Heavy-hitter parameter `θ`.
    pub theta: f64,
    /// Keep at most this many heavy hitters per level, largest first.
    pub retained: Option<usize>,
    /// When set, a heavy hitter counts only if enough rows agree on its value.
    pub consensus: Option<ConsensusRule>,
    pub seed: u64,
    quorum_override: Option<usize>,
    direct_override: Option<usize>,
    theta_override: Option<f64>,
}

impl LevelSetConfig {
    /// Configuration with default constants; `ζ` is drawn from `seed`.
    pub fn new(eps: f64, max_magnitude: u64, universe: u64, seed: SketchSeed) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(SketchError::param("eps", format!("must lie in (0, 1], got {eps}")));
        }
        if max_magnitude == 0 {
            return Err(SketchError::param("max_magnitude", "must be positive"));
        }
        if universe == 0 {
            return Err(SketchError::param("universe", "must be positive"));
        }
        let mut cfg = Self {
            eps,
            max_magnitude,
            universe,
            constants: LevelSetConstants::default(),
            sets: 0,
            direct_sets: 0,
            quorum: 0,
            zeta: 0.5 + 0.5 * seed.unit(Purpose::Zeta),
            theta: 0.0,
            retained: None,
            consensus: None,
            seed: seed.master(),
            quorum_override: None,
            direct_override: None,
            theta_override: None,
        };
        cfg.derive();
        Ok(cfg)
    }

    fn derive(&mut self) {
        let growth = 1.0 + self.eps;
        let m = self.max_magnitude as f64;
        // ⌊log_{1+ε} m⌋, corrected against rounding in the logarithm.
        let mut e = (m.ln() / growth.ln()).floor() as i32;
        while e > 0 && growth.powi(e) > m {
            e -= 1;
        }
        while growth.powi(e + 1) <= m {
            e += 1;
        }
        self.sets = e as usize + 1;

        let log_m = log2_floor1(m);
        let log_n = log2_floor1(self.universe as f64);
        let direct = self
            .direct_override
            .unwrap_or_else(|| (self.constants.direct_factor * (log_m / self.eps).log2()).max(0.0).floor() as usize);
        self.direct_sets = direct.min(self.sets - 1);
        self.quorum = self.quorum_override.unwrap_or_else(|| {
            (self.constants.quorum_factor * log_n / (self.eps * self.eps)).ceil().max(1.0) as usize
        });
        self.theta = self
            .theta_override
            .unwrap_or_else(|| (self.eps / log_n).powf(self.constants.theta_exponent + 4.0).min(1.0));
    }

    pub fn with_constants(mut self, constants: LevelSetConstants) -> Self {
        self.constants = constants;
        self.derive();
        self
    }

    /// Same `ζ` and constants at a different accuracy.
    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(SketchError::param("eps", format!("must lie in (0, 1], got {eps}")));
        }
        self.eps = eps;
        self.derive();
        Ok(self)
    }

    /// Pins the survivor quorum instead of deriving it from `C_z`.
    pub fn with_quorum(mut self, quorum: usize) -> Self {
        self.quorum_override = Some(quorum.max(1));
        self.derive();
        self
    }

    /// Pins `t₀` instead of deriving it from `K`.
    pub fn with_direct_sets(mut self, direct_sets: usize) -> Self {
        self.direct_override = Some(direct_sets);
        self.derive();
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(SketchError::param("theta", format!("must lie in (0, 1], got {theta}")));
        }
        self.theta_override = Some(theta);
        self.derive();
        Ok(self)
    }

    pub fn with_retained(mut self, retained: Option<usize>) -> Self {
        self.retained = retained;
        self
    }

    /// Overrides the random boundary shift; meant for deterministic tests.
    pub fn with_consensus(mut self, rule: Option<ConsensusRule>) -> Result<Self> {
        if let Some(r) = rule {
            if r.rows == 0 || !(r.tolerance >= 0.0 && r.tolerance.is_finite()) {
                return Err(SketchError::param("consensus", format!("need rows ≥ 1 and finite tolerance ≥ 0, got {r:?}")));
            }
        }
        self.consensus = rule;
        Ok(self)
    }

    pub fn with_zeta(mut self, zeta: f64) -> Result<Self> {
        if !(0.5..=1.0).contains(&zeta) {
            return Err(SketchError::param("zeta", format!("must lie in [1/2, 1], got {zeta}")));
        }
        self.zeta = zeta;
        Ok(self)
    }

    /// `ζ(1+ε)^e`.
    #[inline]
    pub fn boundary(&self, exponent: i64) -> f64 {
        self.zeta * (1.0 + self.eps).powi(exponent as i32)
    }

    /// `[lower, upper)` of band `j`.
    pub fn set_bounds(&self, j: usize) -> (f64, f64) {
        let e = self.sets as i64 - j as i64;
        (self.boundary(e - 1), self.boundary(e))
    }

    /// Representative value of band `j`: its upper boundary `ζ(1+ε)^(t−j)`.
    pub fn set_value(&self, j: usize) -> f64 {
        self.set_bounds(j).1
    }

    /// Band containing magnitude `v`.
    ///
    /// Returns `Ok(None)` for `v ≥ ζ(1+ε)^t`; magnitudes below the lowest
    /// boundary fall into the last band.
    pub fn level_index(&self, v: f64) -> Result<Option<usize>> {
        if !(v > 0.0) {
            return Err(SketchError::NonPositiveMagnitude(v));
        }
        let growth = 1.0 + self.eps;
        let mut e = ((v / self.zeta).ln() / growth.ln()).floor() as i64;
        let t = self.sets as i64;
        e = e.clamp(-1, t);
        while e >= 0 && self.boundary(e) > v {
            e -= 1;
        }
        while e < t && self.boundary(e + 1) <= v {
            e += 1;
        }
        if e >= t {
            return Ok(None);
        }
        let e = e.max(0);
        Ok(Some((t - 1 - e) as usize))
    }

    /// Band used when binning an estimate: out-of-range values are clamped
    /// into the first band.
    fn bin(&self, magnitude: u64) -> usize {
        self.level_index(magnitude as f64)
            .expect("magnitude is positive")
            .unwrap_or(0)
    }
}

/// Where a band's size estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeSource {
    /// Counted among the full stream's heavy hitters.
    Direct,
    /// Survivor count at this subsampling level, rescaled by `2^level`.
    Level(u32),
    /// No level reached the quorum; the estimate is zero.
    None,
}

impl Serialize for SizeSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SizeSource::Direct => s.serialize_str("direct"),
            SizeSource::None => s.serialize_str("none"),
            SizeSource::Level(l) => s.serialize_u32(*l),
        }
    }
}

impl<'de> Deserialize<'de> for SizeSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct SourceVisitor;
        impl Visitor<'_> for SourceVisitor {
            type Value = SizeSource;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"direct\", \"none\" or a level number")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<SizeSource, E> {
                u32::try_from(v)
                    .map(SizeSource::Level)
                    .map_err(|_| E::custom("level out of range"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<SizeSource, E> {
                match v {
                    "direct" => Ok(SizeSource::Direct),
                    "none" => Ok(SizeSource::None),
                    other => Err(E::unknown_variant(other, &["direct", "none"])),
                }
            }
        }
        d.deserialize_any(SourceVisitor)
    }
}

/// Estimated band sizes `s̃_j` for one frozen stack.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetSizes {
    pub sizes: Vec<u64>,
    pub sources: Vec<SizeSource>,
    pub config: LevelSetConfig,
    /// Buckets per row of the stack the sizes were read from.
    pub buckets: usize,
}

#[derive(Serialize, Deserialize)]
struct SizesJson {
    zeta: f64,
    eps: f64,
    t: usize,
    t0: usize,
    sizes: Vec<u64>,
    source_levels: Vec<SizeSource>,
}

impl LevelSetSizes {
    pub fn total(&self) -> u64 {
        self.sizes.iter().sum()
    }

    /// `{zeta, eps, t, t0, sizes, source_levels}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SizesJson {
            zeta: self.config.zeta,
            eps: self.config.eps,
            t: self.config.sets,
            t0: self.config.direct_sets,
            sizes: self.sizes.clone(),
            source_levels: self.sources.clone(),
        })
        .expect("plain data serializes")
    }

    /// Builds sizes from explicit values, e.g. to replay a saved estimate.
    pub fn from_parts(config: LevelSetConfig, sizes: Vec<u64>, sources: Vec<SizeSource>) -> Result<Self> {
        if sizes.len() != config.sets || sources.len() != config.sets {
            return Err(SketchError::param(
                "sizes",
                format!("expected {} bands, got {} sizes and {} sources", config.sets, sizes.len(), sources.len()),
            ));
        }
        Ok(Self {
            sizes,
            sources,
            config,
            buckets: 0,
        })
    }
}

/// Per-level heavy-hitter counts per band, before the quorum rule is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandCounts {
    /// `counts[level][band]`.
    pub counts: Vec<Vec<u64>>,
}

/// Bins every level's heavy hitters into bands.
///
/// Each level's tail-norm hint is the table's own `‖·‖₂` estimate.
pub fn band_counts(stack: &SubsampledSketchStack, cfg: &LevelSetConfig) -> Result<BandCounts> {
    let levels = stack.levels();
    let mut candidates: Vec<Vec<u64>> = vec![Vec::new(); levels];
    for index in stack.observed_all() {
        let top = stack.assignment().level_of(index) as usize;
        for level in candidates.iter_mut().take(top + 1) {
            level.push(index);
        }
    }
    let mut counts = vec![vec![0u64; cfg.sets]; levels];
    for (level, cands) in candidates.into_iter().enumerate() {
        let table = stack.table(level);
        let mut report = table.heavy_hitters(cands, cfg.theta, 0, table.norm_estimate())?;
        if let Some(limit) = cfg.retained {
            report.retain_largest(limit);
        }
        match cfg.consensus {
            None => {
                for hit in &report.entries {
                    counts[level][cfg.bin(hit.estimate.unsigned_abs())] += 1;
                }
            }
            Some(rule) => {
                for value in agreed_values(table, &report.entries, rule)? {
                    counts[level][cfg.bin(value)] += 1;
                }
            }
        }
    }
    Ok(BandCounts { counts })
}

/// Magnitudes of the heavy hitters that pass the consensus rule.
///
/// Decoding peels: candidates are visited strongest group first, each
/// accepted one has its agreed value subtracted from a residual copy of the
/// counters, and passes repeat until nothing new is accepted. A light
/// coordinate that only echoed other coordinates' buckets loses its support
/// once those are subtracted, and a heavy one hidden by a collision can
/// surface in a later pass.
fn agreed_values(table: &CountSketchTable, hits: &[HeavyHitter], rule: ConsensusRule) -> Result<Vec<u64>> {
    let rows = table.rows();
    let buckets = table.buckets();
    let mut residual = table.counters().to_vec();
    let mut pending: Vec<u64> = hits.iter().map(|h| h.index).collect();
    let mut values = Vec::new();
    let group_of = |residual: &[i64], index: u64| {
        let row_values: Vec<i64> = (0..rows)
            .map(|r| table.sign_of(r, index) * residual[r * buckets + table.bucket_of(r, index)])
            .collect();
        consensus_of(&row_values, rule.tolerance)
    };
    loop {
        let mut ranked: Vec<(u64, Consensus)> = pending
            .iter()
            .map(|&i| (i, group_of(&residual, i)))
            .filter(|(_, c)| c.rows.len() >= rule.rows && c.value != 0)
            .collect();
        if ranked.is_empty() {
            break;
        }
        ranked.sort_by(|(ia, a), (ib, b)| {
            b.rows
                .len()
                .cmp(&a.rows.len())
                .then(a.spread.cmp(&b.spread))
                .then(ia.cmp(ib))
        });
        let mut accepted = Vec::new();
        for (index, _) in ranked {
            let c = group_of(&residual, index);
            if c.rows.len() < rule.rows || c.value == 0 {
                continue;
            }
            for r in 0..rows {
                residual[r * buckets + table.bucket_of(r, index)] -= table.sign_of(r, index) * c.value;
            }
            values.push(c.value.unsigned_abs());
            accepted.push(index);
        }
        if accepted.is_empty() {
            break;
        }
        accepted.sort_unstable();
        pending.retain(|i| accepted.binary_search(i).is_err());
    }
    Ok(values)
}

/// Applies the direct-count and quorum rules to per-level band counts.
pub fn sizes_from_counts(counts: &BandCounts, cfg: &LevelSetConfig) -> Vec<(u64, SizeSource)> {
    (0..cfg.sets)
        .map(|j| {
            if j <= cfg.direct_sets {
                return (counts.counts[0][j], SizeSource::Direct);
            }
            counts
                .counts
                .iter()
                .enumerate()
                .rev()
                .find(|(_, per_band)| per_band[j] >= cfg.quorum as u64)
                .map(|(level, per_band)| (per_band[j] << level, SizeSource::Level(level as u32)))
                .unwrap_or((0, SizeSource::None))
        })
        .collect()
}

/// Estimates every band size from a quiesced stack.
pub fn estimate_level_sizes(stack: &SubsampledSketchStack, cfg: &LevelSetConfig) -> Result<LevelSetSizes> {
    if stack.shape().universe != cfg.universe {
        return Err(SketchError::param(
            "universe",
            format!("stack covers n = {}, config says {}", stack.shape().universe, cfg.universe),
        ));
    }
    let counts = band_counts(stack, cfg)?;
    let (sizes, sources) = sizes_from_counts(&counts, cfg).into_iter().unzip();
    Ok(LevelSetSizes {
        sizes,
        sources,
        config: cfg.clone(),
        buckets: stack.shape().buckets,
    })
}

/// Which target a band's mass is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContributionTarget {
    /// `Σ_{i ≤ k} |a_i|^p`.
    TopK,
    /// `Σ_{i=k+1}^{n−k} |a_i|^p + k·|a_k|^p`.
    Trimmed,
}

/// Exact band sizes of `x` (diagnostic; magnitudes above the top boundary
/// belong to no band).
pub fn exact_set_sizes(x: &ExactVector, cfg: &LevelSetConfig) -> Vec<u64> {
    let mut sizes = vec![0u64; cfg.sets];
    for (_, v) in x.iter() {
        if let Ok(Some(j)) = cfg.level_index(v.unsigned_abs() as f64) {
            sizes[j] += 1;
        }
    }
    sizes
}

/// Whether band `j` of the exact vector carries at least an `ε²/log m`
/// fraction of the target mass.
pub fn contributes(
    j: usize,
    x: &ExactVector,
    k: u64,
    p: u32,
    cfg: &LevelSetConfig,
    target: ContributionTarget,
) -> bool {
    let mass: f64 = x
        .iter()
        .map(|(_, v)| v.unsigned_abs())
        .filter(|&m| matches!(cfg.level_index(m as f64), Ok(Some(band)) if band == j))
        .map(|m| (m as f64).powi(p as i32))
        .sum();
    let reference = match target {
        ContributionTarget::TopK => oracle::to_f64(&oracle::exact_top_k(x, k, p)),
        ContributionTarget::Trimmed => {
            let trimmed = oracle::exact_trimmed(x, k.min(x.universe() / 2), p)
                .map(|v| oracle::to_f64(&v))
                .unwrap_or(0.0);
            trimmed + k as f64 * (oracle::magnitude_at_rank(x, k) as f64).powi(p as i32)
        }
    };
    let log_m = log2_floor1(cfg.max_magnitude as f64);
    mass > 0.0 && mass >= cfg.eps * cfg.eps / log_m * reference
}
