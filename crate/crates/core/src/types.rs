use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row indices of a (query, positive, negative) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub q: usize,
    pub p: usize,
    pub n: usize,
}

impl Triplet {
    pub fn new(q: usize, p: usize, n: usize) -> Self {
        Triplet { q, p, n }
    }

    /// Checks distinctness and bounds against a store of `len` rows.
    pub fn validate(&self, len: usize) -> Result<()> {
        for index in [self.q, self.p, self.n] {
            if index >= len {
                return Err(Error::IndexOutOfRange { index, len });
            }
        }
        if self.q == self.p || self.q == self.n || self.p == self.n {
            return Err(Error::InvalidTriplet {
                q: self.q,
                p: self.p,
                n: self.n,
            });
        }
        Ok(())
    }
}

/// Diagonal feature weights `w`; the reweighting matrix is `diag(w)`.
///
/// Entries may be negative or zero. Every loss depends on `w` only through
/// `w_j^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn ones(dim: usize) -> Self {
        WeightVector(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        WeightVector(v)
    }
}

/// `sum_j w_j^2 (a_j - b_j)^2`, i.e. `||Wa - Wb||^2`.
pub fn reweighted_sqdist(w: &WeightVector, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != w.dim() {
        return Err(Error::DimMismatch {
            expected: w.dim(),
            got: a.len(),
        });
    }
    if b.len() != w.dim() {
        return Err(Error::DimMismatch {
            expected: w.dim(),
            got: b.len(),
        });
    }
    Ok(sqdist_unchecked(&w.0, a, b))
}

#[inline]
pub(crate) fn sqdist_unchecked(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter()
        .zip(a.iter().zip(b))
        .map(|(w, (a, b))| {
            let d = w * (a - b);
            d * d
        })
        .sum()
}

/// `||Wx||^2`.
#[inline]
pub(crate) fn reweighted_sqnorm(w: &[f64], x: &[f64]) -> f64 {
    w.iter()
        .zip(x)
        .map(|(w, x)| {
            let v = w * x;
            v * v
        })
        .sum()
}

/// Plain squared Euclidean distance.
#[inline]
pub fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Learning and pipeline hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Margin of the single-margin ranking loss.
    pub alpha: f64,
    /// Inner margin: q and p stop being pulled together below this distance.
    pub alpha_p: f64,
    /// Outer margin: negatives stop being pushed away beyond this distance.
    pub alpha_n: f64,
    /// Weight of the unit-norm regularizer.
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Absolute loss-change stopping tolerance.
    pub tol: f64,
    /// Pair-selection distance threshold for discovery sampling.
    pub theta1: f64,
    /// Complete-linkage stopping threshold.
    pub theta2: f64,
    /// Negatives per sampled (query, positive) pair.
    pub m: usize,
    pub min_cluster_size: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 1.0,
            alpha_p: 0.5,
            alpha_n: 2.0,
            lambda: 1.0,
            learning_rate: 0.1,
            max_iters: 200,
            tol: 1e-6,
            theta1: 1.1,
            theta2: 1.0,
            m: 10,
            min_cluster_size: 30,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        fn finite(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(field, "must be finite"))
            }
        }
        finite("alpha", self.alpha)?;
        finite("alpha_p", self.alpha_p)?;
        finite("alpha_n", self.alpha_n)?;
        finite("lambda", self.lambda)?;
        finite("learning_rate", self.learning_rate)?;
        finite("tol", self.tol)?;
        finite("theta1", self.theta1)?;
        finite("theta2", self.theta2)?;
        if self.alpha_p < 0.0 {
            return Err(Error::param("alpha_p", "must be >= 0"));
        }
        if self.alpha_n < 0.0 {
            return Err(Error::param("alpha_n", "must be >= 0"));
        }
        if self.alpha_p >= self.alpha_n {
            return Err(Error::param("alpha_p", "must be smaller than alpha_n"));
        }
        if self.lambda < 0.0 {
            return Err(Error::param("lambda", "must be >= 0"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be positive"));
        }
        if self.tol <= 0.0 {
            return Err(Error::param("tol", "must be > 0"));
        }
        if self.theta1 <= 0.0 {
            return Err(Error::param("theta1", "must be > 0"));
        }
        if self.theta2 <= 0.0 {
            return Err(Error::param("theta2", "must be > 0"));
        }
        if self.m == 0 {
            return Err(Error::param("m", "must be positive"));
        }
        if self.min_cluster_size == 0 {
            return Err(Error::param("min_cluster_size", "must be positive"));
        }
        Ok(())
    }
}
