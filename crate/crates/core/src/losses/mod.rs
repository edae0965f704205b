//! Robust loss models with bounded-sensitivity scores.
//!
//! A [`LossModel`] packages everything the private optimizers and the
//! sandwich-variance release need: per-sample scores with a global norm
//! bound, per-sample Hessian factors `a_i` with `hessian = (1/n) sum a_i a_i^T`
//! and a bound on `||a_i||^2`, and (where available) a self-concordance
//! parameter for the Newton phase switch.

pub mod clipped;
pub mod linear;
pub mod logistic;
pub mod quadrature;
pub mod scalar;
pub mod schweppe;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use clipped::{build_clipped_logistic_model, clipped_gradient, ClippedLogistic};
pub use linear::{build_linear_huber_model, LinearHuberMallows};
pub use logistic::{build_logistic_model, LogisticMallows};
pub use quadrature::{consistency_kappa, gauss_hermite, kappa_for, normal_expectation};
pub use scalar::{smoothed_huber_coeffs, ScalarLoss, SelfConcordance};
pub use schweppe::{build_schweppe_model, schweppe_default_weight, SchweppeLinear};

/// Mallows weight `min(1, b / ||x||^2)`, which caps the weighted squared
/// leverage `w(x) ||x||^2` at `b`. Returns 1 for `x = 0`.
pub fn mallows_weight(x_norm_sq: f64, b: f64) -> f64 {
    debug_assert!(b > 0.0);
    if x_norm_sq <= b {
        1.0
    } else {
        b / x_norm_sq
    }
}

/// Matrices backing the private low-curvature Newton switch, released once
/// per fit through the matrix Gaussian mechanism.
#[derive(Clone, Debug)]
pub struct LscRelease {
    /// Curvature lower-bound matrix: its smallest eigenvalue estimates the
    /// local strong-convexity constant.
    pub lower: DMatrix<f64>,
    /// Row norm bound certifying the sensitivity of `lower`.
    pub lower_row_bound: f64,
    /// Third-moment style matrix: its largest eigenvalue, times `psi2_sup`,
    /// estimates the Hessian Lipschitz constant.
    pub curvature: DMatrix<f64>,
    pub curvature_row_bound: f64,
    /// Supremum of `|psi''|` for the model's scalar loss.
    pub psi2_sup: f64,
}

/// A loss model over a [`Dataset`], with the constants needed to calibrate
/// private releases of its gradient and Hessian.
pub trait LossModel: Send + Sync {
    /// Parameter dimension for a design with `n_features` columns.
    fn param_dim(&self, n_features: usize) -> usize;

    /// Mean loss `(1/n) sum_i loss_i(theta)`.
    fn loss(&self, data: &Dataset, theta: &DVector<f64>) -> Result<f64>;

    /// Per-sample score (gradient of `loss_i`) written into `out`.
    fn sample_score(
        &self,
        data: &Dataset,
        i: usize,
        theta: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()>;

    /// Per-sample Hessian factor `a_i` with `hessian_i = a_i a_i^T`, written
    /// into `out`. Models without usable second derivatives return an error.
    fn hessian_factor(
        &self,
        data: &Dataset,
        i: usize,
        theta: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()>;

    /// Half the global sensitivity of the summed score: the constant `B` such
    /// that replacing one observation moves `sum_i psi_i` by at most `2B`.
    fn score_bound(&self) -> f64;

    /// Bound on `||a_i||^2` at `theta`, certifying the sensitivity of a
    /// Hessian release. Constant for most models; concomitant-scale models
    /// scale it by the current scale parameter.
    fn hessian_bound(&self, theta: &DVector<f64>) -> Result<f64>;

    /// Effective `(gamma, 2)` self-concordance parameter for the Newton
    /// decrement switch, when the loss has one.
    fn self_concordance(&self) -> Option<f64>;

    /// Matrices for the private low-curvature switch; `None` when the model
    /// does not support that heuristic.
    fn lsc_release(&self, _data: &Dataset, _theta: &DVector<f64>) -> Result<Option<LscRelease>> {
        Ok(None)
    }

    /// Mean score `(1/n) sum_i psi_i`.
    fn mean_score(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let p = check_theta(self, data, theta)?;
        let mut acc = DVector::zeros(p);
        let mut buf = DVector::zeros(p);
        for i in 0..data.n() {
            self.sample_score(data, i, theta, &mut buf)?;
            acc += &buf;
        }
        Ok(acc / data.n() as f64)
    }

    /// Mean Hessian `(1/n) sum_i a_i a_i^T`.
    fn hessian(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = check_theta(self, data, theta)?;
        let mut acc = DMatrix::zeros(p, p);
        let mut buf = DVector::zeros(p);
        for i in 0..data.n() {
            self.hessian_factor(data, i, theta, &mut buf)?;
            acc.ger(1.0, &buf, &buf, 1.0);
        }
        Ok(acc / data.n() as f64)
    }

    /// Mean outer product of scores `(1/n) sum_i psi_i psi_i^T` (the
    /// sandwich "meat").
    fn score_outer_mean(&self, data: &Dataset, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = check_theta(self, data, theta)?;
        let mut acc = DMatrix::zeros(p, p);
        let mut buf = DVector::zeros(p);
        for i in 0..data.n() {
            self.sample_score(data, i, theta, &mut buf)?;
            acc.ger(1.0, &buf, &buf, 1.0);
        }
        Ok(acc / data.n() as f64)
    }

    /// Allocating convenience wrapper around [`LossModel::sample_score`].
    fn score_at(&self, data: &Dataset, i: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.param_dim(data.dim()));
        self.sample_score(data, i, theta, &mut out)?;
        Ok(out)
    }
}

/// Shared entry validation: `theta` must be finite with the model's dimension.
/// Returns the parameter dimension.
pub(crate) fn check_theta(
    model: &(impl LossModel + ?Sized),
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<usize> {
    let p = model.param_dim(data.dim());
    if theta.len() != p {
        return Err(Error::InvalidInput(format!(
            "theta has dimension {}, model needs {p}",
            theta.len()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("theta contains non-finite entries".into()));
    }
    Ok(p)
}
