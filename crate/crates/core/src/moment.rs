//! A subsampled sketch stack bundled with its level-set configuration.

use crate::error::{Result, SketchError};
use crate::estimators::{self, MomentQuery, QueryKind, QueryResult};
use crate::hash::SketchSeed;
use crate::levelset::{estimate_level_sizes, LevelSetConfig, LevelSetSizes};
use crate::sketch::Update;
use crate::subsample::{StackShape, SubsampledSketchStack};

#[derive(Debug, Clone)]
pub struct MomentSketch {
    stack: SubsampledSketchStack,
    levels: LevelSetConfig,
}

impl MomentSketch {
    /// `levels` must describe the same universe as `shape`; its `ε` is only a
    /// default, since every query carries its own accuracy.
    pub fn new(shape: StackShape, seed: SketchSeed, levels: LevelSetConfig) -> Result<Self> {
        if levels.universe != shape.universe {
            return Err(SketchError::param(
                "universe",
                format!("stack covers n = {}, level sets expect {}", shape.universe, levels.universe),
            ));
        }
        Ok(Self {
            stack: SubsampledSketchStack::new(shape, seed)?,
            levels,
        })
    }

    pub fn update(&mut self, update: Update) -> Result<()> {
        self.stack.update(update)
    }

    pub fn extend<I: IntoIterator<Item = Update>>(&mut self, updates: I) -> Result<()> {
        self.stack.extend(updates)
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.stack.merge(&other.stack)
    }

    pub fn stack(&self) -> &SubsampledSketchStack {
        &self.stack
    }

    pub fn level_config(&self) -> &LevelSetConfig {
        &self.levels
    }

    /// Band sizes at accuracy `eps`.
    pub fn sizes(&self, eps: f64) -> Result<LevelSetSizes> {
        let cfg = self.levels.clone().with_eps(eps)?;
        estimate_level_sizes(&self.stack, &cfg)
    }

    pub fn query(&self, query: &MomentQuery) -> Result<QueryResult> {
        query.validate(self.stack.shape().universe)?;
        let sizes = self.sizes(query.eps)?;
        let refined = match query.kind {
            QueryKind::HIndexMoment => Some(self.sizes(query.eps / 10.0)?),
            _ => None,
        };
        estimators::evaluate(query, &sizes, refined.as_ref())
    }
}
