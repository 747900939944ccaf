use serde::{Deserialize, Serialize};

use super::ModelId;
use crate::error::{Error, Result};

/// Affine display map `scale * theta + init_rating + shift`.
///
/// When an anchor model is set, `shift` is chosen so the anchor displays
/// exactly `anchor_score`; otherwise `shift` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloParams {
    pub scale: f64,
    pub init_rating: f64,
    pub anchor_model: Option<ModelId>,
    pub anchor_score: f64,
}

impl Default for EloParams {
    fn default() -> Self {
        Self { scale: 400.0, init_rating: 1000.0, anchor_model: None, anchor_score: 1114.0 }
    }
}

impl EloParams {
    pub fn with_anchor(mut self, anchor: ModelId) -> Self {
        self.anchor_model = Some(anchor);
        self
    }

    /// The additive shift applied on top of `init_rating` for these scores.
    pub fn shift(&self, theta: &[f64]) -> Result<f64> {
        match self.anchor_model {
            None => Ok(0.0),
            Some(anchor) => {
                let t = theta.get(anchor.0).ok_or_else(|| {
                    Error::InvalidArgument(format!("anchor model {anchor} is not registered"))
                })?;
                Ok(self.anchor_score - (self.scale * t + self.init_rating))
            }
        }
    }
}

pub fn elo_transform(theta: &[f64], params: &EloParams) -> Result<Vec<f64>> {
    if !(params.scale > 0.0 && params.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Elo scale must be positive, got {}",
            params.scale
        )));
    }
    let shift = params.shift(theta)?;
    Ok(theta.iter().map(|t| params.scale * t + params.init_rating + shift).collect())
}
