//! Triplet hinge losses, the unit-norm regularizer, their closed-form
//! gradients, and the triplet-satisfaction score.
//!
//! With `D_ab = ||Wa - Wb||^2`:
//!
//! - `SingleMargin`: `max(0, D_qp - D_qn + alpha)`
//! - `TwoMargin`: `max(0, D_qp - alpha_p) + max(alpha_n - D_qn, 0)`
//! - `TwoMarginFull`: `TwoMargin + max(alpha_n - D_pn, 0)`
//!
//! The regularizer is `sum_{i in q,p,n} (||W x_i||^2 - 1)^2` and the total is
//! `L_t + lambda * L_r`, both summed over a triplet set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::FeatureStore;
use crate::types::{reweighted_sqnorm, sqdist_unchecked, HyperParams, Triplet, WeightVector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    SingleMargin,
    TwoMargin,
    #[default]
    TwoMarginFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub triplet_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
}

impl LossReport {
    pub const ZERO: LossReport = LossReport {
        triplet_loss: 0.0,
        reg_loss: 0.0,
        total: 0.0,
    };
}

pub(crate) fn check_dims(w: &WeightVector, store: &FeatureStore) -> Result<()> {
    if w.dim() != store.dim() {
        return Err(Error::DimMismatch {
            expected: store.dim(),
            got: w.dim(),
        });
    }
    Ok(())
}

pub(crate) fn check_triplets(store: &FeatureStore, triplets: &[Triplet]) -> Result<()> {
    if triplets.is_empty() {
        return Err(Error::EmptyTriplets);
    }
    triplets.iter().try_for_each(|t| t.validate(store.len()))
}

#[inline]
fn hinge(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

pub(crate) fn triplet_loss_unchecked(
    variant: LossVariant,
    w: &[f64],
    store: &FeatureStore,
    t: Triplet,
    hp: &HyperParams,
) -> f64 {
    let (xq, xp, xn) = (store.row(t.q), store.row(t.p), store.row(t.n));
    let d_qp = sqdist_unchecked(w, xq, xp);
    let d_qn = sqdist_unchecked(w, xq, xn);
    match variant {
        LossVariant::SingleMargin => hinge(d_qp - d_qn + hp.alpha),
        LossVariant::TwoMargin => hinge(d_qp - hp.alpha_p) + hinge(hp.alpha_n - d_qn),
        LossVariant::TwoMarginFull => {
            let d_pn = sqdist_unchecked(w, xp, xn);
            hinge(d_qp - hp.alpha_p) + (hinge(hp.alpha_n - d_qn) + hinge(hp.alpha_n - d_pn))
        }
    }
}

pub(crate) fn reg_loss_unchecked(w: &[f64], store: &FeatureStore, t: Triplet) -> f64 {
    [t.q, t.p, t.n]
        .iter()
        .map(|&i| {
            let r = reweighted_sqnorm(w, store.row(i)) - 1.0;
            r * r
        })
        .sum()
}

/// Hinge loss of one triplet under `variant`.
pub fn triplet_loss(
    variant: LossVariant,
    w: &WeightVector,
    store: &FeatureStore,
    t: Triplet,
    hp: &HyperParams,
) -> Result<f64> {
    check_dims(w, store)?;
    t.validate(store.len())?;
    Ok(triplet_loss_unchecked(variant, w.as_slice(), store, t, hp))
}

/// Unit-norm regularizer of one triplet.
pub fn reg_loss(w: &WeightVector, store: &FeatureStore, t: Triplet) -> Result<f64> {
    check_dims(w, store)?;
    t.validate(store.len())?;
    Ok(reg_loss_unchecked(w.as_slice(), store, t))
}

pub(crate) fn total_loss_unchecked(
    variant: LossVariant,
    w: &[f64],
    store: &FeatureStore,
    triplets: &[Triplet],
    hp: &HyperParams,
) -> LossReport {
    let mut lt = 0.0;
    let mut lr = 0.0;
    for &t in triplets {
        lt += triplet_loss_unchecked(variant, w, store, t, hp);
        lr += reg_loss_unchecked(w, store, t);
    }
    LossReport {
        triplet_loss: lt,
        reg_loss: lr,
        total: lt + hp.lambda * lr,
    }
}

/// `L_t + lambda * L_r` summed over `triplets`.
pub fn total_loss(
    variant: LossVariant,
    w: &WeightVector,
    store: &FeatureStore,
    triplets: &[Triplet],
    hp: &HyperParams,
) -> Result<LossReport> {
    check_dims(w, store)?;
    check_triplets(store, triplets)?;
    Ok(total_loss_unchecked(variant, w.as_slice(), store, triplets, hp))
}

/// Adds `sign * 2 w_j (a_j - b_j)^2` to `grad`.
#[inline]
fn add_dist_grad(grad: &mut [f64], w: &[f64], a: &[f64], b: &[f64], sign: f64) {
    for j in 0..grad.len() {
        let d = a[j] - b[j];
        grad[j] += sign * 2.0 * w[j] * d * d;
    }
}

pub(crate) fn gradient_unchecked(
    variant: LossVariant,
    w: &[f64],
    store: &FeatureStore,
    triplets: &[Triplet],
    hp: &HyperParams,
    grad: &mut [f64],
) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    for &t in triplets {
        let (xq, xp, xn) = (store.row(t.q), store.row(t.p), store.row(t.n));
        let d_qp = sqdist_unchecked(w, xq, xp);
        let d_qn = sqdist_unchecked(w, xq, xn);
        match variant {
            LossVariant::SingleMargin => {
                if d_qp - d_qn + hp.alpha > 0.0 {
                    add_dist_grad(grad, w, xq, xp, 1.0);
                    add_dist_grad(grad, w, xq, xn, -1.0);
                }
            }
            LossVariant::TwoMargin | LossVariant::TwoMarginFull => {
                if d_qp - hp.alpha_p > 0.0 {
                    add_dist_grad(grad, w, xq, xp, 1.0);
                }
                if hp.alpha_n - d_qn > 0.0 {
                    add_dist_grad(grad, w, xq, xn, -1.0);
                }
                if variant == LossVariant::TwoMarginFull
                    && hp.alpha_n - sqdist_unchecked(w, xp, xn) > 0.0
                {
                    add_dist_grad(grad, w, xp, xn, -1.0);
                }
            }
        }
        if hp.lambda != 0.0 {
            for x in [xq, xp, xn] {
                let r = reweighted_sqnorm(w, x) - 1.0;
                let c = hp.lambda * 4.0 * r;
                for j in 0..grad.len() {
                    grad[j] += c * w[j] * x[j] * x[j];
                }
            }
        }
    }
}

/// Closed-form (sub)gradient of [`total_loss`] with respect to `w`.
///
/// A hinge at exactly zero contributes nothing.
pub fn gradient(
    variant: LossVariant,
    w: &WeightVector,
    store: &FeatureStore,
    triplets: &[Triplet],
    hp: &HyperParams,
) -> Result<Vec<f64>> {
    check_dims(w, store)?;
    check_triplets(store, triplets)?;
    let mut grad = vec![0.0; w.dim()];
    gradient_unchecked(variant, w.as_slice(), store, triplets, hp, &mut grad);
    Ok(grad)
}

/// How well `w` satisfies the triplet `(q, p, n)`; lower is better.
///
/// Identical to the two-margin full hinge loss.
pub fn score(
    w: &WeightVector,
    store: &FeatureStore,
    q: usize,
    p: usize,
    n: usize,
    hp: &HyperParams,
) -> Result<f64> {
    triplet_loss(LossVariant::TwoMarginFull, w, store, Triplet::new(q, p, n), hp)
}
