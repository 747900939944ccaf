//! Robustness auditing for Bradley-Terry leaderboards.
//!
//! Fits a Bradley-Terry model to pairwise matchups, scores how much each
//! matchup moves a pair of scores, and checks whether dropping a small set of
//! matchups can reorder the pair or change the top-k.

pub mod arena;
pub mod bt;
pub mod error;
pub mod influence;
pub mod oracle;
pub mod robustness;

pub use arena::{Arena, Matchup, ModelId, ModelRegistry};
pub use bt::{fit, fit_full, refit_without, BtFit, FitOptions, Weighting};
pub use error::{Error, Result};
pub use influence::{ScoreConvention, ScoreMethod};
pub use robustness::{check_pair, check_topk, min_drop_search, CheckOptions, DropBudget, Verdict};
