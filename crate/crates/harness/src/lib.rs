//! Stream files, synthetic and key-count datasets, and the equal-budget
//! experiment comparing the level-set estimator with a plain Count-Sketch.

pub mod error;
pub mod experiment;
pub mod keycount;
pub mod stream;
pub mod synth;

pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentSpec, Method, OursConfig, ResultRow};
pub use keycount::{ingest_keycounts, parse_keycounts, KeyCounts};
pub use stream::StreamFile;
pub use synth::{gen_planted, gen_synthetic, PlantedSpec};
