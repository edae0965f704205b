//! Linear regression with Schweppe weights.
//!
//! The loss `L_n(theta) = (1/n) sum_i rho((y_i - x_i.theta) v(x_i))` rescales
//! the residual rather than the summand, so self-concordance constants of the
//! scalar survive unbounded covariates: if `rho` is `(gamma, 2)`-self-
//! concordant and `||v(x) x|| <= C`, the sample loss is `(gamma C, 2)`-self-
//! concordant.
//!
//! Weights are evaluated once at construction against a concrete dataset and
//! the bound `||v(x_i) x_i|| <= C` is verified on every row; the model is
//! then bound to datasets of that size. The scale is fixed (no concomitant
//! sigma), so the estimate is equivariant only under the supplied weights.

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::scalar::ScalarLoss;
use crate::losses::{check_theta, LossModel};

#[derive(Debug)]
pub struct SchweppeLinear {
    scalar: ScalarLoss,
    bound: f64,
    /// Per-row weights `v(x_i)` for the dataset supplied at construction.
    weights: Vec<f64>,
}

/// The usual choice `v(x) = min(1, c/||x||)`, which satisfies
/// `||v(x) x|| <= c` for every `x`.
pub fn schweppe_default_weight(c: f64) -> impl Fn(&DVector<f64>) -> f64 {
    move |x: &DVector<f64>| {
        let norm = x.norm();
        if norm <= c {
            1.0
        } else {
            c / norm
        }
    }
}

pub fn build_schweppe_model(
    scalar: ScalarLoss,
    bound: f64,
    weight: impl Fn(&DVector<f64>) -> f64,
    data: &Dataset,
) -> Result<SchweppeLinear> {
    if !bound.is_finite() || bound <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "Schweppe bound C must be positive, got {bound}"
        )));
    }
    let mut weights = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let xi = data.design().row(i).transpose();
        let v = weight(&xi);
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidWeight(format!(
                "weight at row {i} is {v}, must be finite and nonnegative"
            )));
        }
        let reach = v * xi.norm();
        if reach > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidWeight(format!(
                "row {i} has ||v(x) x|| = {reach} > C = {bound}"
            )));
        }
        weights.push(v);
    }
    Ok(SchweppeLinear {
        scalar,
        bound,
        weights,
    })
}

impl SchweppeLinear {
    pub fn scalar(&self) -> &ScalarLoss {
        &self.scalar
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Curvature diagnostic `C^2 psi'(0) / 2`, an upper-bound candidate for
    /// the smoothness constant. Reported for inspection, never enforced.
    pub fn smoothness_diagnostic(&self) -> f64 {
        0.5 * self.bound * self.bound * self.scalar.psi_prime(0.0)
    }

    fn check_binding(&self, data: &Dataset) -> Result<()> {
        if data.n() != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "Schweppe weights were built for {} rows, dataset has {}",
                self.weights.len(),
                data.n()
            )));
        }
        Ok(())
    }
}

impl LossModel for SchweppeLinear {
    fn param_dim(&self, n_features: usize) -> usize {
        n_features
    }

    fn loss(&self, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
        check_theta(self, data, theta)?;
        self.check_binding(data)?;
        let mut acc = 0.0;
        for i in 0..data.n() {
            let r = data.response()[i] - data.row_dot(i, theta);
            acc += self.scalar.rho(r * self.weights[i]);
        }
        Ok(acc / data.n() as f64)
    }

    fn sample_score(
        &self,
        data: &Dataset,
        i: usize,
        theta: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        self.check_binding(data)?;
        let v = self.weights[i];
        let r = data.response()[i] - data.row_dot(i, theta);
        let coef = -self.scalar.psi(r * v) * v;
        for j in 0..theta.len() {
            out[j] = coef * data.design()[(i, j)];
        }
        Ok(())
    }

    fn hessian_factor(
        &self,
        data: &Dataset,
        i: usize,
        theta: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        self.check_binding(data)?;
        let v = self.weights[i];
        let r = data.response()[i] - data.row_dot(i, theta);
        // psi' of every supported scalar lies in [0, 1].
        let c = self.scalar.psi_prime(r * v).max(0.0).sqrt() * v;
        for j in 0..theta.len() {
            out[j] = c * data.design()[(i, j)];
        }
        Ok(())
    }

    fn score_bound(&self) -> f64 {
        self.scalar.psi_sup() * self.bound
    }

    fn hessian_bound(&self, _theta: &DVector<f64>) -> Result<f64> {
        // ||a_i||^2 = psi'(r v) ||v x||^2 <= C^2 since psi' <= 1.
        Ok(self.bound * self.bound)
    }

    fn self_concordance(&self) -> Option<f64> {
        match self.scalar.self_concordance() {
            Some(sc) if sc.nu == 2.0 => Some(sc.gamma * self.bound),
            _ => None,
        }
    }
}
