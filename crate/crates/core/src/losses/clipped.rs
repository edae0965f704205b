//! Gradient clipping baseline.
//!
//! Clipping rescales each per-sample gradient to a norm cap. It bounds
//! sensitivity like a Mallows weight does, but it acts on the residual part
//! of the score as well as the covariates, so for asymmetric models such as
//! logistic regression the clipped estimating equation is no longer unbiased
//! at the truth. [`ClippedLogistic`] exists to measure that bias against
//! [`LogisticMallows`](crate::losses::LogisticMallows).

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::logistic::{build_logistic_model, LogisticMallows};
use crate::losses::LossModel;

/// `g * min(1, c/||g||)`: the multivariate Huber function. Norm of the output
/// is at most `c` and the direction of `g` is preserved. Requires `c > 0`.
pub fn clipped_gradient(g: &DVector<f64>, c: f64) -> DVector<f64> {
    debug_assert!(c > 0.0, "clip threshold must be positive");
    let norm = g.norm();
    if norm <= c {
        g.clone()
    } else {
        g * (c / norm)
    }
}

pub struct ClippedLogistic {
    inner: LogisticMallows,
    clip: f64,
}

/// Logistic regression with per-sample gradient clipping at norm `clip`.
/// The inner score is the plain (unweighted) logistic score, recovered by
/// taking the Mallows cap large enough that no weight ever binds.
pub fn build_clipped_logistic_model(clip: f64) -> Result<ClippedLogistic> {
    if !clip.is_finite() || clip <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "clip threshold must be positive, got {clip}"
        )));
    }
    let inner = build_logistic_model(f64::MAX)?;
    Ok(ClippedLogistic { inner, clip })
}

impl ClippedLogistic {
    pub fn clip(&self) -> f64 {
        self.clip
    }
}

impl LossModel for ClippedLogistic {
    fn param_dim(&self, n_features: usize) -> usize {
        n_features
    }

    /// Unclipped cross-entropy. The clipped score is not its gradient; the
    /// mismatch is the bias this model exists to expose.
    fn loss(&self, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
        self.inner.loss(data, theta)
    }

    fn sample_score(
        &self,
        data: &Dataset,
        i: usize,
        theta: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        self.inner.sample_score(data, i, theta, out)?;
        let norm = out.norm();
        if norm > self.clip {
            *out *= self.clip / norm;
        }
        Ok(())
    }

    fn hessian_factor(
        &self,
        _data: &Dataset,
        _i: usize,
        _theta: &DVector<f64>,
        _out: &mut DVector<f64>,
    ) -> Result<()> {
        Err(Error::InvalidInput(
            "clipped-gradient model has no Hessian factorization; use gradient descent".into(),
        ))
    }

    fn score_bound(&self) -> f64 {
        self.clip
    }

    fn hessian_bound(&self, _theta: &DVector<f64>) -> Result<f64> {
        Err(Error::InvalidInput(
            "clipped-gradient model has no Hessian sensitivity bound".into(),
        ))
    }

    fn self_concordance(&self) -> Option<f64> {
        None
    }
}
