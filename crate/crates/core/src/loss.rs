//! Weighted soft-margin triplet loss.

use crate::error::{Error, Result};
use crate::feat::{make_descriptor, FeatureVolume};
use crate::scalar::Real;

/// Weight used by the reference training setup.
pub const DEFAULT_ALPHA: f64 = 10.0;

/// One anchor/positive/negative distance pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletTerm<T> {
    pub d_pos: T,
    pub d_neg: T,
    pub alpha: T,
}

impl<T: Real> TripletTerm<T> {
    pub fn new(d_pos: T, d_neg: T, alpha: T) -> Result<Self> {
        if !(d_pos >= T::zero() && d_neg >= T::zero()) {
            return Err(Error::invalid("triplet distances must be non-negative"));
        }
        if !(alpha > T::zero()) {
            return Err(Error::invalid("triplet weight alpha must be positive"));
        }
        Ok(Self { d_pos, d_neg, alpha })
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + exp(alpha * (d_pos - d_neg)))`.
pub fn soft_margin<T: Real>(term: &TripletTerm<T>) -> T {
    softplus(term.alpha * (term.d_pos - term.d_neg))
}

/// Derivative of [`soft_margin`] with respect to `d_pos`; the `d_neg` derivative is its negation.
pub fn soft_margin_grad<T: Real>(term: &TripletTerm<T>) -> T {
    term.alpha * sigmoid(term.alpha * (term.d_pos - term.d_neg))
}

/// Three-term loss over the ground-half, whole-image and concatenated descriptors.
///
/// `ground_bottom` / `ground_whole` are the query volumes; the `pos_*` volumes come
/// from the matching satellite image and the `neg_*` ones from a non-matching one,
/// already aligned and cropped.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Real>(
    ground_bottom: &FeatureVolume<T>,
    ground_whole: &FeatureVolume<T>,
    pos_proj: &FeatureVolume<T>,
    pos_polar: &FeatureVolume<T>,
    neg_proj: &FeatureVolume<T>,
    neg_polar: &FeatureVolume<T>,
    alpha: T,
) -> Result<T> {
    let ground = make_descriptor(ground_bottom, ground_whole)?;
    let pos = make_descriptor(pos_proj, pos_polar)?;
    let neg = make_descriptor(neg_proj, neg_polar)?;
    let terms = [
        (ground_bottom.distance(pos_proj)?, ground_bottom.distance(neg_proj)?),
        (ground_whole.distance(pos_polar)?, ground_whole.distance(neg_polar)?),
        (
            ground.volume().distance(pos.volume())?,
            ground.volume().distance(neg.volume())?,
        ),
    ];
    terms.into_iter().try_fold(T::zero(), |acc, (p, n)| {
        Ok(acc + soft_margin(&TripletTerm::new(p, n, alpha)?))
    })
}

/// Triplets produced by exhaustive mini-batch mining: `2 B (B - 1)`.
pub fn exhaustive_triplet_count(batch: usize) -> Result<u64> {
    if batch < 2 {
        return Err(Error::invalid(format!(
            "exhaustive mining needs a batch of at least 2, got {batch}"
        )));
    }
    let b = batch as u64;
    Ok(2 * b * (b - 1))
}
