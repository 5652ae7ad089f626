//! Linear sketches for trimmed frequency statistics over turnstile streams.
//!
//! The building blocks are a Count-Sketch table ([`CountSketchTable`]), a
//! stack of tables over nested geometric subsamples of the coordinates
//! ([`SubsampledSketchStack`]), and a level-set estimator that turns the
//! stack's heavy hitters into approximate counts of coordinates per
//! magnitude band ([`LevelSetSizes`]). The [`estimators`] module reads
//! top-k, trimmed, threshold and impact-index statistics off those counts;
//! [`oracle`] computes the same quantities exactly for testing.
//!
//! ```
//! use trimsketch::{LevelSetConfig, MomentQuery, MomentSketch, SketchSeed, StackShape, Update};
//!
//! let seed = SketchSeed::new(7);
//! let shape = StackShape::new(1 << 10, 5, 256);
//! let levels = LevelSetConfig::new(0.1, 1 << 12, 1 << 10, seed).unwrap();
//! let mut sketch = MomentSketch::new(shape, seed, levels).unwrap();
//! for i in 0..4 {
//!     sketch.update(Update::new(i, 1000)).unwrap();
//! }
//! let top2 = sketch.query(&MomentQuery::top_k(2, 1.0, 0.1)).unwrap();
//! assert!((top2.value - 2000.0).abs() <= 0.25 * 2000.0);
//! ```

pub mod error;
pub mod estimators;
pub mod hash;
pub mod levelset;
pub mod moment;
pub mod oracle;
pub mod sketch;
pub mod subsample;

pub use error::{Result, SketchError};
pub use estimators::{
    configure_for_large_p, g_index, h_index_moment, sum_above_threshold, top_k_moment,
    trimmed_k_moment, MomentQuery, QueryKind, QueryResult,
};
pub use hash::SketchSeed;
pub use levelset::{estimate_level_sizes, ConsensusRule, LevelSetConfig, LevelSetConstants, LevelSetSizes, SizeSource};
pub use moment::MomentSketch;
pub use oracle::ExactVector;
pub use sketch::{Consensus, CountSketchTable, HeavyHitter, HeavyHitterReport, Update};
pub use subsample::{LevelAssignment, StackShape, SubsampledSketchStack};
