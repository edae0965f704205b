//! Quadrature rules for standard normal expectations.
//!
//! [`normal_expectation`] uses Gauss-Hermite, which is spectrally accurate
//! for smooth integrands only. The consistency constant `kappa` integrates
//! functions with kinks at the Huber knots, so [`kappa_for`] instead uses
//! composite Gauss-Legendre with panel edges at the knots, which restores
//! spectral accuracy on each panel.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::losses::scalar::ScalarLoss;

/// Golub-Welsch: eigendecompose the symmetric Jacobi matrix with the given
/// off-diagonal, returning sorted nodes and `total * v0^2` weights.
fn golub_welsch(off_diag: &[f64], total_weight: f64) -> (Vec<f64>, Vec<f64>) {
    let n = off_diag.len() + 1;
    let mut jacobi = DMatrix::zeros(n, n);
    for (k, &off) in off_diag.iter().enumerate() {
        jacobi[(k, k + 1)] = off;
        jacobi[(k + 1, k)] = off;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let first = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j], total_weight * first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    pairs.into_iter().unzip()
}

/// Nodes and weights of the `n`-point Gauss-Hermite rule for the weight
/// `exp(-x^2)`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidInput("quadrature order must be >= 1".into()));
    }
    let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    Ok(golub_welsch(&off, std::f64::consts::PI.sqrt()))
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidInput("quadrature order must be >= 1".into()));
    }
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    Ok(golub_welsch(&off, 2.0))
}

/// `E[f(Z)]` for `Z ~ N(0,1)` using the 64-point Gauss-Hermite rule.
/// Accurate to near machine precision for smooth `f` with moderate growth;
/// do not use for kinked integrands.
pub fn normal_expectation(f: impl Fn(f64) -> f64) -> Result<f64> {
    let (nodes, weights) = gauss_hermite(64)?;
    let scale = std::f64::consts::PI.sqrt();
    Ok(nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| w * f(std::f64::consts::SQRT_2 * x))
        .sum::<f64>()
        / scale)
}

/// Fisher-consistency constant for a concomitant-scale M-loss:
/// `kappa = 2 E[Z psi(Z) - rho(Z)]` under standard normal errors, which makes
/// the scale score mean zero at the true parameters.
pub fn kappa_for(scalar: &ScalarLoss) -> Result<f64> {
    // The integrand is even and saturates to a constant past the last knot,
    // so the tail beyond t = 9 contributes below 1e-18.
    let limit = 9.0;
    let knots: Vec<f64> = match scalar {
        ScalarLoss::Huber { c } => vec![*c],
        ScalarLoss::SmoothedHuber { c, h } => vec![*c, *c + *h],
        ScalarLoss::LogCosh { .. } | ScalarLoss::SqrtHuber { .. } | ScalarLoss::Sc3Huber { .. } => {
            Vec::new()
        }
    };
    let mut edges: Vec<f64> = (0..=limit as usize).map(|k| k as f64).collect();
    edges.extend(knots.into_iter().filter(|&k| k > 0.0 && k < limit));
    edges.sort_by(|a, b| a.partial_cmp(b).expect("finite edges"));
    edges.dedup();

    let (nodes, weights) = gauss_legendre(40)?;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut integral = 0.0;
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for (&x, &w) in nodes.iter().zip(&weights) {
            let t = mid + half * x;
            integral += w * half * 2.0 * (t * scalar.psi(t) - scalar.rho(t)) * phi(t);
        }
    }
    Ok(2.0 * integral)
}

/// [`kappa_for`] specialized to the Huber loss with tuning constant `c`.
pub fn consistency_kappa(c: f64) -> Result<f64> {
    kappa_for(&ScalarLoss::huber(c)?)
}
