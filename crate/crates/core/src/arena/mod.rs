//! Pairwise-preference arenas.
//!
//! An [`Arena`] is an immutable, ordered collection of decisive matchups
//! between registered models. The position of a matchup in the arena is its
//! canonical identity: drop sets, reports and refits all refer to matchups by
//! that index.
//!
//! Model 0 is always the reference model. Its score is pinned to zero when the
//! Bradley-Terry model is fitted, so only the remaining `M - 1` scores are free
//! parameters.

mod elo;
mod ingest;
mod schema;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use elo::{elo_transform, EloParams};
pub use ingest::{ingest, ingest_path, IngestStats};
pub use schema::{Format, OutcomeSpec, Schema};

/// Dense model index. `ModelId(0)` is the reference model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub usize);

impl ModelId {
    pub const REFERENCE: ModelId = ModelId(0);

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_reference(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Name <-> index mapping for the models of an arena.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelRegistry {
    names: Vec<String>,
    lookup: HashMap<String, ModelId>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry from names in index order. Names must be unique and non-empty.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut registry = Self::new();
        for name in names {
            let name = name.into();
            if registry.get(&name).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate model name {name:?}")));
            }
            registry.intern(&name)?;
        }
        Ok(registry)
    }

    /// Returns the id for `name`, registering it if it is new.
    pub fn intern(&mut self, name: &str) -> Result<ModelId> {
        if name.is_empty() {
            return Err(Error::InvalidArgument("model names must be non-empty".into()));
        }
        if let Some(&id) = self.lookup.get(name) {
            return Ok(id);
        }
        let id = ModelId(self.names.len());
        self.names.push(name.to_owned());
        self.lookup.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn get(&self, name: &str) -> Option<ModelId> {
        self.lookup.get(name).copied()
    }

    pub fn resolve(&self, name: &str) -> Result<ModelId> {
        self.get(name).ok_or_else(|| Error::UnknownModel(name.to_owned()))
    }

    pub fn name(&self, id: ModelId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, id: ModelId) -> bool {
        id.0 < self.names.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = ModelId> {
        (0..self.names.len()).map(ModelId)
    }
}

/// One decisive evaluation: side `a` against side `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matchup {
    pub a: ModelId,
    pub b: ModelId,
    /// True when side `a` was preferred.
    pub a_won: bool,
}

impl Matchup {
    pub fn new(a: ModelId, b: ModelId, a_won: bool) -> Self {
        Self { a, b, a_won }
    }

    /// The binary outcome as a real number.
    pub fn y(&self) -> f64 {
        if self.a_won {
            1.0
        } else {
            0.0
        }
    }

    pub fn involves(&self, m: ModelId) -> bool {
        self.a == m || self.b == m
    }

    pub fn winner(&self) -> ModelId {
        if self.a_won {
            self.a
        } else {
            self.b
        }
    }

    pub fn loser(&self) -> ModelId {
        if self.a_won {
            self.b
        } else {
            self.a
        }
    }

    /// The same evaluation seen from the other side.
    pub fn flipped(&self) -> Self {
        Self { a: self.b, b: self.a, a_won: !self.a_won }
    }
}

/// Opaque per-matchup metadata (prompt, responses, judge, ...), in schema column order.
pub type Metadata = Vec<(String, String)>;

/// Design encoding of a matchup: +1 for `plus`, -1 for `minus`, 0 elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignRow {
    pub plus: ModelId,
    pub minus: ModelId,
}

impl DesignRow {
    /// Assembles the row in the `M - 1` dimensional parameter space, where
    /// coordinate `c` belongs to model `c + 1` and the reference model has no column.
    pub fn dense(&self, models: usize) -> Vec<f64> {
        let mut row = vec![0.0; models.saturating_sub(1)];
        if !self.plus.is_reference() {
            row[self.plus.0 - 1] += 1.0;
        }
        if !self.minus.is_reference() {
            row[self.minus.0 - 1] -= 1.0;
        }
        row
    }

    /// `x^T theta` for a full score vector.
    pub fn dot(&self, theta: &[f64]) -> f64 {
        theta[self.plus.0] - theta[self.minus.0]
    }
}

/// The design row is independent of the outcome: side `a` always takes the +1.
pub fn design_row(m: &Matchup) -> DesignRow {
    DesignRow { plus: m.a, minus: m.b }
}

#[derive(Debug, Clone)]
pub struct Arena {
    registry: ModelRegistry,
    matchups: Vec<Matchup>,
    metadata: Option<Vec<Metadata>>,
    stats: IngestStats,
}

impl Arena {
    pub fn new(registry: ModelRegistry, matchups: Vec<Matchup>) -> Result<Self> {
        let stats = IngestStats {
            source_rows: matchups.len(),
            decisive: matchups.len(),
            ..IngestStats::default()
        };
        Self::with_parts(registry, matchups, None, stats)
    }

    pub(crate) fn with_parts(
        registry: ModelRegistry,
        matchups: Vec<Matchup>,
        metadata: Option<Vec<Metadata>>,
        stats: IngestStats,
    ) -> Result<Self> {
        if matchups.is_empty() {
            return Err(Error::NoDecisiveMatchups);
        }
        if registry.len() < 2 {
            return Err(Error::TooFewModels(registry.len()));
        }
        for (n, m) in matchups.iter().enumerate() {
            if !registry.contains(m.a) || !registry.contains(m.b) {
                return Err(Error::InvalidArgument(format!(
                    "matchup {n} references an unregistered model"
                )));
            }
            if m.a == m.b {
                return Err(Error::InvalidArgument(format!(
                    "matchup {n} pits a model against itself"
                )));
            }
        }
        if let Some(meta) = &metadata {
            debug_assert_eq!(meta.len(), matchups.len());
        }
        Ok(Self { registry, matchups, metadata, stats })
    }

    /// Convenience constructor from `(model_a, model_b, a_won)` triples, registering
    /// models in first-appearance order.
    pub fn from_records<'a, I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, bool)>,
    {
        let mut registry = ModelRegistry::new();
        let mut matchups = Vec::new();
        for (a, b, a_won) in records {
            let a = registry.intern(a)?;
            let b = registry.intern(b)?;
            matchups.push(Matchup::new(a, b, a_won));
        }
        Self::new(registry, matchups)
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn models(&self) -> usize {
        self.registry.len()
    }

    pub fn matchups(&self) -> &[Matchup] {
        &self.matchups
    }

    pub fn matchup(&self, n: usize) -> &Matchup {
        &self.matchups[n]
    }

    pub fn len(&self) -> usize {
        self.matchups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matchups.is_empty()
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn metadata(&self, n: usize) -> Option<&Metadata> {
        self.metadata.as_ref().map(|m| &m[n])
    }

    pub fn has_metadata(&self) -> bool {
        self.metadata.is_some()
    }

    pub fn name(&self, id: ModelId) -> &str {
        self.registry.name(id)
    }

    /// Number of matchups each model took part in. Sums to `2N`.
    pub fn appearances(&self) -> Vec<usize> {
        let mut counts = vec![0; self.models()];
        for m in &self.matchups {
            counts[m.a.0] += 1;
            counts[m.b.0] += 1;
        }
        counts
    }

    pub fn summary(&self) -> ArenaSummary {
        ArenaSummary {
            models: self.models(),
            matchups: self.len(),
            ties_dropped: self.stats.ties,
            malformed_skipped: self.stats.malformed_skipped,
            source_rows: self.stats.source_rows,
            reference_model: self.registry.name(ModelId::REFERENCE).to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaSummary {
    pub models: usize,
    pub matchups: usize,
    pub ties_dropped: usize,
    pub malformed_skipped: usize,
    pub source_rows: usize,
    pub reference_model: String,
}
