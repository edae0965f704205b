//! Logistic regression with Mallows weights.
//!
//! Weighted cross-entropy `L(beta) = (1/n) sum_i CE(y_i, sigmoid(x_i.beta)) w(x_i)`
//! with `w(x) = min(1, b/||x||^2)`. The weight caps the per-sample gradient
//! norm at `sqrt(b)` without any response clipping, so the score stays an
//! unbiased estimating equation: `E[(sigmoid(x.beta0) - y) w(x) x] = 0` at the
//! truth for any weight function.

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{check_theta, mallows_weight, LossModel};

#[derive(Clone, Debug)]
pub struct LogisticMallows {
    b: f64,
}

/// Default leverage cap for the logistic model.
pub const DEFAULT_LOGISTIC_LEVERAGE: f64 = 25.0;

pub fn build_logistic_model(b: f64) -> Result<LogisticMallows> {
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "leverage cap b must be positive, got {b}"
        )));
    }
    Ok(LogisticMallows { b })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_binary(y: f64) -> Result<()> {
    if y != 0.0 && y != 1.0 {
        return Err(Error::InvalidInput(format!(
            "logistic response must be 0 or 1, got {y}"
        )));
    }
    Ok(())
}

impl LogisticMallows {
    pub fn leverage_cap(&self) -> f64 {
        self.b
    }
}

impl LossModel for LogisticMallows {
    fn param_dim(&self, n_features: usize) -> usize {
        n_features
    }

    fn loss(&self, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
        check_theta(self, data, theta)?;
        let mut acc = 0.0;
        for i in 0..data.n() {
            let y = data.response()[i];
            check_binary(y)?;
            let z = data.row_dot(i, theta);
            let w = mallows_weight(data.row_norm_sq(i), self.b);
            acc += w * (softplus(z) - y * z);
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
        let y = data.response()[i];
        check_binary(y)?;
        let s = sigmoid(data.row_dot(i, theta));
        let w = mallows_weight(data.row_norm_sq(i), self.b);
        let coef = (s - y) * w;
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
        let s = sigmoid(data.row_dot(i, theta));
        let w = mallows_weight(data.row_norm_sq(i), self.b);
        let c = (s * (1.0 - s) * w).sqrt();
        for j in 0..theta.len() {
            out[j] = c * data.design()[(i, j)];
        }
        Ok(())
    }

    fn score_bound(&self) -> f64 {
        // |s - y| <= 1 and w ||x|| <= sqrt(b).
        self.b.sqrt()
    }

    fn hessian_bound(&self, _theta: &DVector<f64>) -> Result<f64> {
        // s(1-s) <= 1/4 and w ||x||^2 <= b.
        Ok(self.b / 4.0)
    }

    fn self_concordance(&self) -> Option<f64> {
        // The scalar cross-entropy is (1, 2)-self-concordant; the Mallows
        // weight caps the effective covariate norm at sqrt(b).
        Some(self.b.sqrt())
    }
}
