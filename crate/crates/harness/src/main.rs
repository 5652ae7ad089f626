use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_traits::ToPrimitive;
use serde_json::{json, Value};
use trimsketch::oracle::{self, ExactVector};
use trimsketch::subsample::default_max_level;
use trimsketch::{ConsensusRule, LevelSetConstants, MomentQuery};
use trimsketch_harness::experiment::{run_experiment, write_csv, ExperimentSpec, OursConfig};
use trimsketch_harness::{gen_synthetic, ingest_keycounts, StreamFile};

#[derive(Parser)]
#[command(name = "trimsketch", version, about = "Trimmed frequency statistics from turnstile sketches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic stream.
    Gen(GenArgs),
    /// Convert a key-count file into a stream file.
    Ingest(IngestArgs),
    /// Sketch a stream and answer one query as JSON.
    Query(QueryArgs),
    /// Compare against a plain Count-Sketch over bucket budgets; writes CSV.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: u64,
    /// Number of heavy coordinates.
    #[arg(long)]
    k: u64,
    #[arg(long, env = "TRIMSKETCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Output path; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the `id<TAB>key` mapping.
    #[arg(long)]
    keys: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    TopK,
    Trimmed,
    SumAbove,
    GIndex,
    HIndex,
}

/// Estimator layout shared by `query` and `experiment`; unset flags keep the
/// command's defaults.
#[derive(Args, Clone)]
struct LayoutArgs {
    /// Subsampling levels (tables in the stack).
    #[arg(long)]
    levels: Option<usize>,
    /// Repetitions per table.
    #[arg(long)]
    rows: Option<usize>,
    /// Multiplier `K` on the number of directly counted bands.
    #[arg(long)]
    direct_factor: Option<f64>,
    /// Multiplier `C_z` on the survivor quorum.
    #[arg(long)]
    quorum_factor: Option<f64>,
    /// Exponent `c` in the heavy-hitter threshold `(ε/log n)^(c+4)`.
    #[arg(long)]
    theta_exponent: Option<f64>,
    /// Heavy-hitter threshold, replacing the formula.
    #[arg(long)]
    theta: Option<f64>,
    /// Count a heavy hitter only if this many rows agree on its value; 0 disables.
    #[arg(long)]
    consensus_rows: Option<usize>,
    /// Relative spread allowed among agreeing rows.
    #[arg(long)]
    consensus_tolerance: Option<f64>,
}

impl LayoutArgs {
    fn apply(&self, mut cfg: OursConfig) -> OursConfig {
        cfg.levels = self.levels.unwrap_or(cfg.levels);
        cfg.rows = self.rows.unwrap_or(cfg.rows);
        let c = &mut cfg.constants;
        c.direct_factor = self.direct_factor.unwrap_or(c.direct_factor);
        c.quorum_factor = self.quorum_factor.unwrap_or(c.quorum_factor);
        c.theta_exponent = self.theta_exponent.unwrap_or(c.theta_exponent);
        if self.theta.is_some() {
            cfg.theta = self.theta;
        }
        match self.consensus_rows {
            Some(0) => cfg.consensus = None,
            Some(rows) => {
                let tolerance = cfg.consensus.map_or(0.1, |r| r.tolerance);
                cfg.consensus = Some(ConsensusRule { rows, tolerance });
            }
            None => {}
        }
        if let (Some(t), Some(rule)) = (self.consensus_tolerance, cfg.consensus.as_mut()) {
            rule.tolerance = t;
        }
        cfg
    }
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    k: Option<u64>,
    #[arg(long)]
    threshold: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    #[arg(long, env = "TRIMSKETCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Total buckets across levels and rows; must split evenly.
    #[arg(long)]
    budget: Option<u64>,
    #[command(flatten)]
    layout: LayoutArgs,
    /// Also report the exact value.
    #[arg(long)]
    with_oracle: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Key-count file to use instead of a synthetic vector.
    #[arg(long)]
    keycounts: Option<PathBuf>,
    /// Synthetic universe size.
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    /// Heavy coordinates in the synthetic vector, and the k of the top-k query.
    #[arg(long, default_value_t = 1000)]
    k: u64,
    #[arg(long, default_value_t = 1)]
    p: u32,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [10_000u64, 20_000, 30_000, 50_000])]
    budgets: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    min_reps: usize,
    #[arg(long, default_value_t = 10)]
    max_reps: usize,
    #[command(flatten)]
    layout: LayoutArgs,
    /// Sketch seeds, one row pair per budget and seed.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    /// Seed of the synthetic vector.
    #[arg(long, env = "TRIMSKETCH_SEED", default_value_t = 0)]
    data_seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Record wall-clock milliseconds (makes the CSV nondeterministic).
    #[arg(long)]
    timing: bool,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let stream = gen_synthetic(a.n, a.k, a.seed)?;
    emit(&stream.render(), a.out.as_ref())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let kc = ingest_keycounts(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if let Some(keys) = &a.keys {
        fs::write(keys, kc.render_mapping()).with_context(|| format!("writing {}", keys.display()))?;
    }
    emit(&kc.stream.render(), a.out.as_ref())
}

fn build_query(a: &QueryArgs) -> Result<MomentQuery> {
    let takes_k = matches!(a.kind, Kind::TopK | Kind::Trimmed);
    let takes_threshold = a.kind == Kind::SumAbove;
    if a.k.is_some() && !takes_k {
        bail!("--k only applies to top-k and trimmed queries");
    }
    if a.threshold.is_some() && !takes_threshold {
        bail!("--threshold only applies to sum-above queries");
    }
    let need = |v: Option<u64>, flag: &str| v.with_context(|| format!("this query needs {flag}"));
    Ok(match a.kind {
        Kind::TopK => MomentQuery::top_k(need(a.k, "--k")?, a.p, a.eps),
        Kind::Trimmed => MomentQuery::trimmed_k(need(a.k, "--k")?, a.p, a.eps),
        Kind::SumAbove => MomentQuery::sum_above(need(a.threshold, "--threshold")?, a.p, a.eps),
        Kind::GIndex => MomentQuery::g_index(a.p, a.eps),
        Kind::HIndex => MomentQuery::h_index(a.p, a.eps),
    })
}

fn oracle_value(kind: Kind, query: &MomentQuery, x: &ExactVector) -> Result<Value> {
    if query.p.fract() != 0.0 || query.p > u32::MAX as f64 {
        bail!("--with-oracle needs an integer p");
    }
    let p = query.p as u32;
    let exact = match kind {
        Kind::TopK => oracle::exact_top_k(x, query.k.unwrap_or(0), p),
        Kind::Trimmed => oracle::exact_trimmed(x, query.k.unwrap_or(0), p)?,
        Kind::SumAbove => oracle::exact_sum_above(x, query.threshold.unwrap_or(0), p),
        Kind::GIndex => oracle::exact_g_index(x, p).into(),
        Kind::HIndex => {
            let h = oracle::exact_h_index(x);
            if p == 0 {
                h.into()
            } else {
                oracle::exact_top_k(x, h, p)
            }
        }
    };
    Ok(match exact.to_u64() {
        Some(v) => json!(v),
        None => json!(oracle::to_f64(&exact)),
    })
}

fn query(a: QueryArgs) -> Result<()> {
    let q = build_query(&a)?;
    let stream = StreamFile::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    // An empty key-count file yields n = 0; sketch it over a one-slot universe.
    let stream = if stream.universe == 0 {
        StreamFile::new(1, stream.max_magnitude, stream.updates)?
    } else {
        stream
    };
    let base = OursConfig {
        levels: default_max_level(stream.universe) as usize + 1,
        rows: 5,
        eps: a.eps,
        constants: LevelSetConstants::default(),
        quorum: None,
        direct_sets: None,
        theta: None,
        retained: None,
        consensus: None,
    };
    let cfg = a.layout.apply(base);
    let budget = match a.budget {
        Some(b) => b,
        None => {
            let buckets = (4 * stream.universe).clamp(16, 1 << 14);
            buckets * (cfg.levels * cfg.rows) as u64
        }
    };
    let sketch = cfg.sketch(&stream, budget, a.seed)?;
    let result = sketch.query(&q)?;
    let mut out = serde_json::to_value(&result)?;
    if a.with_oracle {
        out["oracle"] = oracle_value(a.kind, &q, &stream.vector())?;
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let (dataset, stream) = match &a.keycounts {
        Some(path) => {
            let kc = ingest_keycounts(path).with_context(|| format!("reading {}", path.display()))?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (name, kc.stream)
        }
        None => ("synthetic".to_owned(), gen_synthetic(a.n, a.k, a.data_seed)?),
    };
    let spec = ExperimentSpec {
        dataset,
        k: a.k,
        p: a.p,
        budgets: a.budgets.clone(),
        reps: (a.min_reps, a.max_reps),
        ours: a.layout.apply(OursConfig {
            eps: a.eps,
            ..OursConfig::default()
        }),
        seeds: a.seeds.clone(),
        timing: a.timing,
    };
    let rows = run_experiment(&spec, &stream)?;
    write_csv(&rows, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
