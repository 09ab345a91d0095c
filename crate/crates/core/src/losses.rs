//! Reference training losses. No gradients; these are plain forward formulas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{MappingLabels, PredictionTargets};
use crate::Real;

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{what}: expected {expected} entries, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("discount must lie in (0, 1), got {0}")]
    BadDiscount(f64),
    #[error("loss weights must be non-negative")]
    NegativeWeight,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_discount: f64,
    pub w_score: f64,
    pub w_map: f64,
    pub w_pred: f64,
    pub w_bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_discount: 0.1, w_score: 1.0, w_map: 2.0, w_pred: 1.0, w_bce: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda_discount > 0.0 && self.lambda_discount < 1.0) {
            return Err(LossError::BadDiscount(self.lambda_discount));
        }
        if [self.w_score, self.w_map, self.w_pred, self.w_bce].iter().any(|w| !(*w >= 0.0)) {
            return Err(LossError::NegativeWeight);
        }
        Ok(())
    }
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), LossError> {
    if expected == got {
        Ok(())
    } else {
        Err(LossError::Shape { what, expected, got })
    }
}

/// Discounted minimum-over-N L1 imitation loss.
///
/// `per_iter[k][n]` is proposal `n` of iteration `k`, compared entrywise
/// against `expert`. Later iterations weigh more: `lambda^(K-1-k)`.
pub fn mon_proposal_loss<T: Real>(per_iter: &[Vec<Vec<[T; 3]>>], expert: &[[T; 3]], lambda: T) -> Result<T, LossError> {
    let l = lambda.as_f64();
    if !(l > 0.0 && l < 1.0) {
        return Err(LossError::BadDiscount(l));
    }
    let k_len = per_iter.len();
    let mut total = T::zero();
    for (k, proposals) in per_iter.iter().enumerate() {
        let mut best: Option<T> = None;
        for p in proposals {
            check("proposal steps", expert.len(), p.len())?;
            let d: T = p.iter().zip(expert).map(|(a, b)| (0..3).map(|i| (a[i] - b[i]).abs()).sum::<T>()).sum();
            best = Some(best.map_or(d, |b| b.min(d)));
        }
        let best = best.ok_or(LossError::Shape { what: "proposals per iteration", expected: 1, got: 0 })?;
        total = total + lambda.powi((k_len - 1 - k) as i32) * best;
    }
    Ok(total)
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce<T: Real>(pred: &[T], target: &[T]) -> Result<T, LossError> {
    check("bce targets", pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let eps = T::lit(BCE_EPS);
    let sum: T = pred
        .iter()
        .zip(target)
        .map(|(&x, &y)| {
            let x = x.max(eps).min(T::one() - eps);
            -(y * x.ln()) - (T::one() - y) * (T::one() - x).ln()
        })
        .sum();
    Ok(sum / T::lit(pred.len() as f64))
}

pub fn score_loss<T: Real>(scores: &[T], targets: &[T]) -> Result<T, LossError> {
    bce(scores, targets)
}

/// BCE of `N x T x 2` on-road/on-route probabilities against the labels.
pub fn map_loss<T: Real>(probs: &[T], labels: &MappingLabels) -> Result<T, LossError> {
    check("map probabilities", labels.n * labels.t * 2, probs.len())?;
    let target: Vec<T> = labels.as_f64().into_iter().map(T::lit).collect();
    bce(probs, &target)
}

/// Validity-masked mean L1 over corner coordinates plus `w_bce` times the
/// validity BCE. With no valid targets the L1 term is zero.
pub fn pred_loss<T: Real>(corners: &[T], validity: &[T], targets: &PredictionTargets, w_bce: T) -> Result<T, LossError> {
    let slots = targets.n * targets.t * 2;
    check("corner predictions", slots * 8, corners.len())?;
    check("validity predictions", slots, validity.len())?;
    let truth = targets.corners_flat();
    let mask = targets.validity_flat();
    let mut l1 = T::zero();
    let mut count = 0usize;
    for (slot, &valid) in mask.iter().enumerate() {
        if !valid {
            continue;
        }
        for i in slot * 8..slot * 8 + 8 {
            l1 = l1 + (corners[i] - T::lit(truth[i])).abs();
        }
        count += 8;
    }
    let l1 = if count > 0 { l1 / T::lit(count as f64) } else { T::zero() };
    let v_target: Vec<T> = mask.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
    Ok(l1 + w_bce * bce(validity, &v_target)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts<T> {
    pub proposal: T,
    pub score: T,
    pub map: T,
    pub pred: T,
}

pub fn total_loss<T: Real>(parts: &LossParts<T>, w: &LossWeights) -> T {
    parts.proposal + T::lit(w.w_score) * parts.score + T::lit(w.w_map) * parts.map + T::lit(w.w_pred) * parts.pred
}
