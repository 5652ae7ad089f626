//! Equal-budget comparison of the level-set estimator against a plain
//! Count-Sketch on top-k moment queries.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trimsketch::oracle::{exact_top_k, to_f64};
use trimsketch::{
    top_k_moment, ConsensusRule, CountSketchTable, LevelSetConfig, LevelSetConstants, MomentSketch, SketchSeed, StackShape,
};

use crate::error::{HarnessError, Result};
use crate::stream::StreamFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ours,
    CountSketch,
}

/// Layout and level-set tuning of the subsampled estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OursConfig {
    /// Number of subsampling levels, i.e. tables in the stack.
    pub levels: usize,
    /// Repetitions `q` per table.
    pub rows: usize,
    pub eps: f64,
    pub constants: LevelSetConstants,
    pub quorum: Option<usize>,
    pub direct_sets: Option<usize>,
    pub theta: Option<f64>,
    pub retained: Option<usize>,
    pub consensus: Option<ConsensusRule>,
}

impl Default for OursConfig {
    /// Tuned for top-k queries on the planted synthetic vectors at total
    /// budgets of 10⁴ to 5·10⁴ buckets: one level, every band above the
    /// tail counted directly, and row consensus with peeling to keep tail
    /// coordinates that collide with heavy ones from being counted.
    fn default() -> Self {
        Self {
            levels: 1,
            rows: 5,
            eps: 0.05,
            constants: LevelSetConstants {
                direct_factor: 8.0,
                ..LevelSetConstants::default()
            },
            quorum: None,
            direct_sets: None,
            theta: Some(0.003),
            retained: None,
            consensus: Some(ConsensusRule {
                rows: 3,
                tolerance: 0.1,
            }),
        }
    }
}

impl OursConfig {
    /// Buckets per row for a total budget; the split must be exact.
    pub fn buckets_for(&self, budget: u64) -> Result<usize> {
        let cells = (self.levels * self.rows) as u64;
        if cells == 0 {
            return Err(HarnessError::invalid("layout", "levels and rows must be positive"));
        }
        if budget < cells || !budget.is_multiple_of(cells) {
            return Err(HarnessError::invalid(
                "budget",
                format!("{budget} does not split evenly over {} levels × {} rows", self.levels, self.rows),
            ));
        }
        Ok((budget / cells) as usize)
    }

    pub fn level_config(&self, universe: u64, max_magnitude: u64, seed: SketchSeed) -> Result<LevelSetConfig> {
        // Doubling m keeps the largest value inside the top band for any shift.
        let mut cfg = LevelSetConfig::new(self.eps, max_magnitude.max(1).saturating_mul(2), universe, seed)?
            .with_constants(self.constants)
            .with_retained(self.retained)
            .with_consensus(self.consensus)?;
        if let Some(q) = self.quorum {
            cfg = cfg.with_quorum(q);
        }
        if let Some(d) = self.direct_sets {
            cfg = cfg.with_direct_sets(d);
        }
        if let Some(theta) = self.theta {
            cfg = cfg.with_theta(theta)?;
        }
        Ok(cfg)
    }

    /// Sketches the stream with `budget` total buckets.
    pub fn sketch(&self, stream: &StreamFile, budget: u64, seed: u64) -> Result<MomentSketch> {
        let buckets = self.buckets_for(budget)?;
        let seed = SketchSeed::new(seed);
        let shape = StackShape::new(stream.universe, self.rows, buckets).with_max_level(self.levels as u32 - 1);
        let cfg = self.level_config(stream.universe, stream.max_magnitude, seed)?;
        let mut sketch = MomentSketch::new(shape, seed, cfg)?;
        sketch.extend(stream.updates.iter().copied())?;
        Ok(sketch)
    }
}

/// Top-k moment estimate of the level-set estimator.
pub fn ours_top_k(stream: &StreamFile, cfg: &OursConfig, budget: u64, seed: u64, k: u64, p: f64) -> Result<f64> {
    let sketch = cfg.sketch(stream, budget, seed)?;
    let sizes = sketch.sizes(cfg.eps)?;
    Ok(top_k_moment(&sizes, k, p).value)
}

/// Sum of the `k` largest `|estimate|^p` over the observed indices of one
/// Count-Sketch table.
pub fn countsketch_top_k(stream: &StreamFile, rows: usize, buckets: usize, seed: u64, k: u64, p: f64) -> Result<f64> {
    let mut table = CountSketchTable::new(rows, buckets, stream.universe, SketchSeed::new(seed))?;
    table.extend(stream.updates.iter().copied())?;
    let mut observed: Vec<u64> = stream.updates.iter().map(|u| u.index).collect();
    observed.sort_unstable();
    observed.dedup();
    let mut estimates = observed
        .into_iter()
        .map(|i| table.estimate(i).map(|e| e.unsigned_abs()))
        .collect::<trimsketch::Result<Vec<u64>>>()?;
    estimates.sort_unstable_by(|a, b| b.cmp(a));
    Ok(estimates
        .iter()
        .take(k as usize)
        .filter(|&&e| e > 0)
        .map(|&e| (e as f64).powf(p))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: String,
    pub k: u64,
    /// Integer moment order, so the ground truth is exact.
    pub p: u32,
    /// Strictly increasing total bucket counts.
    pub budgets: Vec<u64>,
    /// Baseline repetition counts tried, `min..=max`.
    pub reps: (usize, usize),
    pub ours: OursConfig,
    pub seeds: Vec<u64>,
    /// Record wall-clock time; off keeps the output byte-reproducible.
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.budgets[0] == 0 || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::invalid("budgets", "must be positive and strictly increasing"));
        }
        if self.reps.0 == 0 || self.reps.0 > self.reps.1 {
            return Err(HarnessError::invalid("reps", format!("need 1 ≤ min ≤ max, got {:?}", self.reps)));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::invalid("seeds", "need at least one"));
        }
        for &b in &self.budgets {
            self.ours.buckets_for(b)?;
            if !(self.reps.0..=self.reps.1).any(|r| b % r as u64 == 0) {
                return Err(HarnessError::invalid(
                    "budget",
                    format!("{b} is not divisible by any baseline repetition count"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: Method,
    pub total_buckets: u64,
    pub reps: usize,
    pub relative_error: f64,
    pub seed: u64,
    pub wall_ms: u64,
}

fn relative_error(estimate: f64, exact: f64) -> f64 {
    (estimate - exact).abs() / exact
}

fn elapsed_ms(start: Instant, timing: bool) -> u64 {
    if timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Runs every (budget, seed) cell, ours first then the baseline.
pub fn run_experiment(spec: &ExperimentSpec, stream: &StreamFile) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let exact = to_f64(&exact_top_k(&stream.vector(), spec.k, spec.p));
    if exact <= 0.0 {
        return Err(HarnessError::invalid("dataset", "exact top-k moment is zero"));
    }
    let p = spec.p as f64;
    let cells: Vec<(u64, u64)> = spec
        .budgets
        .iter()
        .flat_map(|&b| spec.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(budget, seed)| -> Result<[ResultRow; 2]> {
            let start = Instant::now();
            let est = ours_top_k(stream, &spec.ours, budget, seed, spec.k, p)?;
            let ours = ResultRow {
                dataset: spec.dataset.clone(),
                method: Method::Ours,
                total_buckets: budget,
                reps: spec.ours.rows,
                relative_error: relative_error(est, exact),
                seed,
                wall_ms: elapsed_ms(start, spec.timing),
            };

            let start = Instant::now();
            let mut best: Option<(f64, usize)> = None;
            for r in spec.reps.0..=spec.reps.1 {
                if budget % r as u64 != 0 {
                    continue;
                }
                let est = countsketch_top_k(stream, r, (budget / r as u64) as usize, seed, spec.k, p)?;
                let err = relative_error(est, exact);
                if best.is_none_or(|(e, _)| err < e) {
                    best = Some((err, r));
                }
            }
            let (err, r) = best.expect("validated: some repetition count divides the budget");
            let baseline = ResultRow {
                dataset: spec.dataset.clone(),
                method: Method::CountSketch,
                total_buckets: budget,
                reps: r,
                relative_error: err,
                seed,
                wall_ms: elapsed_ms(start, spec.timing),
            };
            Ok([ours, baseline])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub const CSV_HEADER: &str = "dataset,method,total_buckets,reps,relative_error,seed,wall_ms";

pub fn render_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes the CSV next to `path` and renames it into place.
pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let text = render_csv(rows)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_synthetic;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            dataset: "synthetic".into(),
            k: 5,
            p: 1,
            budgets: vec![200, 400],
            reps: (1, 10),
            ours: OursConfig::default(),
            seeds: vec![1, 2],
            timing: false,
        }
    }

    #[test]
    fn budget_split_is_exact() {
        let cfg = OursConfig { levels: 4, rows: 5, ..OursConfig::default() };
        assert_eq!(cfg.buckets_for(10_000).unwrap(), 500);
        assert!(cfg.buckets_for(10_001).is_err());
        assert!(cfg.buckets_for(10).is_err());
    }

    #[test]
    fn rows_come_in_cell_order_with_header() {
        let stream = gen_synthetic(500, 5, 3).unwrap();
        let rows = run_experiment(&small_spec(), &stream).unwrap();
        let order: Vec<(u64, u64, Method)> = rows.iter().map(|r| (r.total_buckets, r.seed, r.method)).collect();
        assert_eq!(
            order,
            vec![
                (200, 1, Method::Ours),
                (200, 1, Method::CountSketch),
                (200, 2, Method::Ours),
                (200, 2, Method::CountSketch),
                (400, 1, Method::Ours),
                (400, 1, Method::CountSketch),
                (400, 2, Method::Ours),
                (400, 2, Method::CountSketch),
            ]
        );
        for r in &rows {
            assert!(r.relative_error >= 0.0);
            assert_eq!(r.total_buckets % r.reps as u64, 0);
        }
        let csv = render_csv(&rows).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), 9);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small_spec();
        s.budgets = vec![400, 200];
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.reps = (0, 3);
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.budgets = vec![3];
        assert!(s.validate().is_err());
    }

    #[test]
    fn baseline_is_exact_when_rows_are_collision_free() {
        // Every index gets its own bucket in a table with one bucket per index.
        let stream = StreamFile::new(
            4,
            9,
            vec![
                trimsketch::Update::new(0, 9),
                trimsketch::Update::new(1, -4),
                trimsketch::Update::new(2, 6),
                trimsketch::Update::new(3, 1),
            ],
        )
        .unwrap();
        let seed = (0..10_000u64)
            .find(|&s| {
                let t = CountSketchTable::new(3, 64, 4, SketchSeed::new(s)).unwrap();
                (0..3).all(|r| {
                    let mut b: Vec<usize> = (0..4).map(|i| t.bucket_of(r, i)).collect();
                    b.sort_unstable();
                    b.dedup();
                    b.len() == 4
                })
            })
            .unwrap();
        assert_eq!(countsketch_top_k(&stream, 3, 64, seed, 2, 1.0).unwrap(), 15.0);
        assert_eq!(countsketch_top_k(&stream, 3, 64, seed, 2, 2.0).unwrap(), 117.0);
    }
}
