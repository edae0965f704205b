//! Private sandwich variance estimation and confidence intervals.
//!
//! The asymptotic variance of an M-estimator is `V = M^{-1} Q M^{-1}` with
//! `M` the mean score derivative and `Q` the score second moment. Both
//! matrices are released through the matrix Gaussian mechanism, floored to be
//! positive definite, and recombined; together with the fit that produced
//! `theta`, the pipeline composes to `sqrt(3) mu`-GDP when all three stages
//! use the same `mu`.
//!
//! Confidence intervals come in a basic form, which treats `theta` as if it
//! were the nonprivate estimate, and corrected forms, which inflate the
//! variance by the optimizer's injected noise. The corrected interval always
//! contains the basic one at matched inputs.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::privacy::{matrix_gaussian_mechanism, psd_project, PrivacyBudget};
use crate::rng::SeedTree;

/// Which optimizer's noise a corrected interval accounts for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Gd,
    Newton,
}

#[derive(Clone, Debug)]
pub struct SandwichConfig {
    /// GDP budget for each of the two matrix releases.
    pub mu: f64,
    /// Eigenvalue floor for both projections; `None` uses
    /// `1e-6 * max(hessian_bound(theta), score_bound^2)`.
    pub eps_proj: Option<f64>,
    pub noise_enabled: bool,
}

impl SandwichConfig {
    pub fn new(mu: f64) -> Self {
        SandwichConfig {
            mu,
            eps_proj: None,
            noise_enabled: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NoisySandwich {
    /// Projected private mean score derivative; `lambda_min >= eps_proj`.
    pub m_plus: DMatrix<f64>,
    /// Projected private score second moment; `lambda_min >= eps_proj`.
    pub q_plus: DMatrix<f64>,
    /// `m_plus^{-1} q_plus m_plus^{-1}`, symmetrized.
    pub v: DMatrix<f64>,
    pub eps_proj: f64,
    /// Composed GDP of the two releases, `sqrt(2) mu` when noise is on.
    pub mu_spent: f64,
    pub budget: PrivacyBudget,
}

/// Floor both raw matrices at `eps_proj` and combine them into the sandwich
/// variance. Noise-free core of [`private_sandwich`], exposed for testing
/// and for callers that already hold released matrices.
pub fn assemble_sandwich(
    m_tilde: &DMatrix<f64>,
    q_tilde: &DMatrix<f64>,
    eps_proj: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if !eps_proj.is_finite() || eps_proj <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "projection floor must be positive, got {eps_proj}"
        )));
    }
    let m_plus = psd_project(m_tilde, eps_proj)?;
    let q_plus = psd_project(q_tilde, eps_proj)?;
    let chol = Cholesky::new(m_plus.clone()).ok_or_else(|| {
        Error::NotPositiveDefinite("projected sandwich bread failed to factorize".into())
    })?;
    // V = M+^{-1} Q+ M+^{-1}, computed by two triangular solves and
    // symmetrized against factorization round-off.
    let half = chol.solve(&q_plus);
    let v_raw = chol.solve(&half.transpose());
    let v = 0.5 * (&v_raw + v_raw.transpose());
    Ok((m_plus, q_plus, v))
}

pub fn private_sandwich<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &DVector<f64>,
    cfg: &SandwichConfig,
    seed: &SeedTree,
) -> Result<NoisySandwich> {
    if !cfg.mu.is_finite() || cfg.mu <= 0.0 {
        return Err(Error::InvalidBudget(format!(
            "sandwich mu must be positive, got {}",
            cfg.mu
        )));
    }
    let b = model.score_bound();
    let hbar = model.hessian_bound(theta)?;
    let eps_proj = match cfg.eps_proj {
        Some(e) if e.is_finite() && e > 0.0 => e,
        Some(e) => {
            return Err(Error::InvalidInput(format!(
                "projection floor must be positive, got {e}"
            )))
        }
        None => 1e-6 * hbar.max(b * b),
    };

    let m_raw = model.hessian(data, theta)?;
    let q_raw = model.score_outer_mean(data, theta)?;
    let mut budget = PrivacyBudget::new(cfg.mu * std::f64::consts::SQRT_2)?;
    let (m_tilde, q_tilde) = if cfg.noise_enabled {
        let m_tilde = matrix_gaussian_mechanism(
            &m_raw,
            hbar.sqrt(),
            data.n(),
            cfg.mu,
            &mut budget,
            "sandwich/m",
            &mut seed.rng("sandwich/m"),
        )?;
        let q_tilde = matrix_gaussian_mechanism(
            &q_raw,
            b,
            data.n(),
            cfg.mu,
            &mut budget,
            "sandwich/q",
            &mut seed.rng("sandwich/q"),
        )?;
        (m_tilde, q_tilde)
    } else {
        (m_raw, q_raw)
    };
    let (m_plus, q_plus, v) = assemble_sandwich(&m_tilde, &q_tilde, eps_proj)?;
    Ok(NoisySandwich {
        m_plus,
        q_plus,
        v,
        eps_proj,
        mu_spent: budget.spent(),
        budget,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ConfInterval {
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage, e.g. 0.95.
    pub level: f64,
    pub corrected: bool,
    /// Present on corrected intervals; `None` for the basic form.
    pub method: Option<Method>,
}

impl ConfInterval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

/// Standard normal quantile, accurate to better than 1e-8: library inverse
/// CDF polished by one Newton step on `Phi(z) = p`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile level must lie in (0, 1), got {p}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut z = normal.inverse_cdf(p);
    let density = normal.pdf(z);
    if density > 0.0 {
        z -= (normal.cdf(z) - p) / density;
    }
    Ok(z)
}

fn check_ci_inputs(theta_j: f64, v_jj: f64, n: usize, alpha: f64) -> Result<f64> {
    if !theta_j.is_finite() {
        return Err(Error::InvalidInput(format!(
            "estimate must be finite, got {theta_j}"
        )));
    }
    if !v_jj.is_finite() || v_jj < 0.0 {
        return Err(Error::InvalidInput(format!(
            "variance must be nonnegative, got {v_jj}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    normal_quantile(1.0 - alpha / 2.0)
}

/// `theta_j +/- sqrt(V_jj / n) z_{1 - alpha/2}`.
pub fn ci_basic(theta_j: f64, v_jj: f64, n: usize, alpha: f64) -> Result<ConfInterval> {
    let z = check_ci_inputs(theta_j, v_jj, n, alpha)?;
    let half = (v_jj / n as f64).sqrt() * z;
    Ok(ConfInterval {
        lower: theta_j - half,
        upper: theta_j + half,
        level: 1.0 - alpha,
        corrected: false,
        method: None,
    })
}

/// Gradient-descent corrected interval: the iterate noise contributes
/// `2 (2 eta B sqrt(K) / (n mu))^2` extra variance inside the half-width,
/// which vanishes as `n` grows at fixed `K`, `mu`.
#[allow(clippy::too_many_arguments)]
pub fn ci_corrected_gd(
    theta_j: f64,
    v_jj: f64,
    n: usize,
    alpha: f64,
    eta: f64,
    b: f64,
    iters: usize,
    mu: f64,
) -> Result<ConfInterval> {
    let z = check_ci_inputs(theta_j, v_jj, n, alpha)?;
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "eta must be positive, got {eta}"
        )));
    }
    if !b.is_finite() || b < 0.0 {
        return Err(Error::InvalidInput(format!(
            "gradient bound must be nonnegative, got {b}"
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidInput("iteration count must be >= 1".into()));
    }
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::InvalidBudget(format!(
            "mu must be positive, got {mu}"
        )));
    }
    let noise_sd = 2.0 * eta * b * (iters as f64).sqrt() / (n as f64 * mu);
    let half = (v_jj / n as f64 + 2.0 * noise_sd * noise_sd).sqrt() * z;
    Ok(ConfInterval {
        lower: theta_j - half,
        upper: theta_j + half,
        level: 1.0 - alpha,
        corrected: true,
        method: Some(Method::Gd),
    })
}

/// Newton-corrected variance matrix `V_hat = V_tilde + n C` with
/// `C = eta^2 s^2 H^{-2}` and `s = 2 B sqrt(2K) / (mu n)` the per-iteration
/// gradient noise sd. `h_tilde` is the already-privatized floored Hessian at
/// the final iterate, so no fresh budget is spent. Interval half-widths for a
/// coordinate are `sqrt(V_hat_jj / n) z`.
#[allow(clippy::too_many_arguments)]
pub fn corrected_variance_newton(
    sandwich: &NoisySandwich,
    h_tilde: &DMatrix<f64>,
    eta: f64,
    b: f64,
    iters: usize,
    mu: f64,
    n: usize,
) -> Result<DMatrix<f64>> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "eta must be positive, got {eta}"
        )));
    }
    if !b.is_finite() || b < 0.0 {
        return Err(Error::InvalidInput(format!(
            "gradient bound must be nonnegative, got {b}"
        )));
    }
    if iters == 0 || n == 0 {
        return Err(Error::InvalidInput(
            "iteration count and sample size must be >= 1".into(),
        ));
    }
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::InvalidBudget(format!(
            "mu must be positive, got {mu}"
        )));
    }
    let chol = Cholesky::new(h_tilde.clone()).ok_or_else(|| {
        Error::NotPositiveDefinite("newton correction needs a positive definite Hessian".into())
    })?;
    let inv = chol.inverse();
    let noise_sd = 2.0 * b * (2.0 * iters as f64).sqrt() / (mu * n as f64);
    let correction = eta * eta * noise_sd * noise_sd * (&inv * &inv);
    let v_hat = &sandwich.v + n as f64 * correction;
    Ok(0.5 * (&v_hat + v_hat.transpose()))
}

/// Basic-formula interval over a Newton-corrected variance entry, tagged as
/// corrected.
pub fn ci_corrected_newton(
    theta_j: f64,
    vhat_jj: f64,
    n: usize,
    alpha: f64,
) -> Result<ConfInterval> {
    let ci = ci_basic(theta_j, vhat_jj, n, alpha)?;
    Ok(ConfInterval {
        corrected: true,
        method: Some(Method::Newton),
        ..ci
    })
}

#[derive(Clone, Debug)]
pub struct WaldRow {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
    /// Set when the standard error degenerated to zero with a nonzero
    /// estimate; the reported z is signed infinite and p is 0.
    pub flagged: bool,
}

/// Per-coordinate Wald tests: `se = sqrt(V_hat_jj / n)`, `z = estimate / se`,
/// two-sided normal p-value.
pub fn wald_table(
    names: &[String],
    theta: &DVector<f64>,
    v_hat: &DMatrix<f64>,
    n: usize,
) -> Result<Vec<WaldRow>> {
    let p = theta.len();
    if names.len() != p || v_hat.nrows() != p || v_hat.ncols() != p {
        return Err(Error::InvalidInput(format!(
            "wald table needs matching dimensions, got {} names, {p} estimates, {}x{} variance",
            names.len(),
            v_hat.nrows(),
            v_hat.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be >= 1".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(p);
    for j in 0..p {
        let v_jj = v_hat[(j, j)];
        if !v_jj.is_finite() || v_jj < 0.0 {
            return Err(Error::InvalidInput(format!(
                "variance diagonal must be nonnegative, got {v_jj} at {j}"
            )));
        }
        let estimate = theta[j];
        let std_error = (v_jj / n as f64).sqrt();
        let (z_value, p_value, flagged) = if estimate == 0.0 {
            (0.0, 1.0, false)
        } else if std_error == 0.0 {
            (estimate.signum() * f64::INFINITY, 0.0, true)
        } else {
            let z = estimate / std_error;
            (z, 2.0 * (1.0 - normal.cdf(z.abs())), false)
        };
        rows.push(WaldRow {
            term: names[j].clone(),
            estimate,
            std_error,
            z_value,
            p_value,
            flagged,
        });
    }
    Ok(rows)
}

/// Serialize a Wald table as CSV with the exact header
/// `term,estimate,std_error,z_value,p_value`.
pub fn write_wald_csv<W: Write>(rows: &[WaldRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["term", "estimate", "std_error", "z_value", "p_value"])?;
    for row in rows {
        out.write_record(&[
            row.term.clone(),
            row.estimate.to_string(),
            row.std_error.to_string(),
            row.z_value.to_string(),
            row.p_value.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_linear, LinearDesign};
    use crate::losses::build_linear_huber_model;
    use crate::privacy::compose_gdp;
    use approx::assert_relative_eq;

    fn spectral_norm(m: &DMatrix<f64>) -> f64 {
        m.clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    #[test]
    fn scalar_sandwich_arithmetic() {
        let m = DMatrix::from_diagonal_element(3, 3, 2.0);
        let q = DMatrix::from_diagonal_element(3, 3, 4.0);
        let (_, _, v) = assemble_sandwich(&m, &q, 1e-9).unwrap();
        assert_relative_eq!(
            spectral_norm(&(v - DMatrix::identity(3, 3))),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn reconstruction_identity_holds() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.8]);
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 0.5]);
        let (m_plus, q_plus, v) = assemble_sandwich(&m, &q, 1e-8).unwrap();
        let inv = m_plus.clone().try_inverse().unwrap();
        let direct = &inv * &q_plus * &inv;
        assert!(spectral_norm(&(v.clone() - direct)) < 1e-10);
        // Symmetry on the nose.
        assert!(spectral_norm(&(v.clone() - v.transpose())) < 1e-10);
    }

    fn linear_problem() -> (Dataset, impl LossModel, DVector<f64>) {
        let design = LinearDesign::default();
        let data = simulate_linear(500, &design, &SeedTree::from_seed(23)).unwrap();
        let model = build_linear_huber_model(1.345, 0.0, 2.0).unwrap();
        let mut theta = DVector::from_vec(design.beta.clone());
        theta = theta.push(design.sigma);
        (data, model, theta)
    }

    #[test]
    fn noise_free_sandwich_equals_plugin() {
        let (data, model, theta) = linear_problem();
        let mut cfg = SandwichConfig::new(1.0);
        cfg.noise_enabled = false;
        let sandwich = private_sandwich(&model, &data, &theta, &cfg, &SeedTree::from_seed(1)).unwrap();
        let m = model.hessian(&data, &theta).unwrap();
        let q = model.score_outer_mean(&data, &theta).unwrap();
        let inv = m.try_inverse().unwrap();
        let direct = &inv * &q * &inv;
        let rel = spectral_norm(&(sandwich.v.clone() - &direct)) / spectral_norm(&direct);
        assert!(rel < 1e-10, "relative error {rel}");
        assert_eq!(sandwich.mu_spent, 0.0);
    }

    #[test]
    fn sandwich_spends_compose_with_fit_to_sqrt3() {
        let (data, model, theta) = linear_problem();
        let cfg = SandwichConfig::new(0.7);
        let sandwich = private_sandwich(&model, &data, &theta, &cfg, &SeedTree::from_seed(2)).unwrap();
        assert_eq!(sandwich.budget.entries().len(), 2);
        assert_relative_eq!(
            sandwich.mu_spent,
            0.7 * std::f64::consts::SQRT_2,
            epsilon = 1e-12
        );
        // A fit worth mu, composed with the two releases: sqrt(3) mu.
        let mus = [0.7, 0.7, 0.7];
        assert_relative_eq!(
            compose_gdp(mus).unwrap(),
            0.7 * 3.0f64.sqrt(),
            epsilon = 1e-12
        );
        // Both projected matrices respect the floor.
        for m in [&sandwich.m_plus, &sandwich.q_plus] {
            let min = m.clone().symmetric_eigen().eigenvalues.min();
            assert!(min >= sandwich.eps_proj * (1.0 - 1e-9));
        }
    }

    #[test]
    fn quantile_is_accurate() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-6, 0.025, 0.5, 0.8, 0.975, 1.0 - 1e-6] {
            let z = normal_quantile(p).unwrap();
            assert!((normal.cdf(z) - p).abs() < 1e-8, "p = {p}");
        }
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn ci_basic_examples() {
        let degenerate = ci_basic(1.5, 0.0, 10, 0.05).unwrap();
        assert_eq!((degenerate.lower, degenerate.upper), (1.5, 1.5));
        let ci = ci_basic(0.0, 1.0, 100, 0.05).unwrap();
        assert_relative_eq!(ci.half_width(), 0.1 * 1.959963985, epsilon = 1e-7);
        assert_relative_eq!(ci.level, 0.95, epsilon = 1e-15);
        let wide = ci_basic(0.0, 1.0, 100, 0.05).unwrap();
        let narrow = ci_basic(0.0, 1.0, 100, 0.5).unwrap();
        assert!(narrow.half_width() < wide.half_width());
        assert!(ci_basic(0.0, -1.0, 100, 0.05).is_err());
        assert!(ci_basic(0.0, 1.0, 100, 0.0).is_err());
    }

    #[test]
    fn gd_correction_contains_and_scales() {
        let basic = ci_basic(0.3, 2.0, 1000, 0.05).unwrap();
        // B = 0: no privacy noise, identical to basic.
        let same = ci_corrected_gd(0.3, 2.0, 1000, 0.05, 0.5, 0.0, 100, 0.25).unwrap();
        assert_relative_eq!(same.lower, basic.lower, epsilon = 1e-14);
        assert_relative_eq!(same.upper, basic.upper, epsilon = 1e-14);
        // B > 0: strictly wider, same center.
        let corr = ci_corrected_gd(0.3, 2.0, 1000, 0.05, 0.5, 1.95, 100, 0.25).unwrap();
        assert!(corr.lower < basic.lower && corr.upper > basic.upper);
        assert_relative_eq!(
            corr.lower + corr.upper,
            basic.lower + basic.upper,
            epsilon = 1e-12
        );
        assert!(corr.contains(basic.lower) && corr.contains(basic.upper));
        // Doubling mu quarters the correction term.
        let z = normal_quantile(0.975).unwrap();
        let term = |mu: f64| {
            let ci = ci_corrected_gd(0.0, 2.0, 1000, 0.05, 0.5, 1.95, 100, mu).unwrap();
            (ci.half_width() / z).powi(2) - 2.0 / 1000.0
        };
        assert_relative_eq!(term(0.25) / term(0.5), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn newton_correction_matches_oracle() {
        let v = DMatrix::from_diagonal_element(2, 2, 3.0);
        let sandwich = NoisySandwich {
            m_plus: DMatrix::identity(2, 2),
            q_plus: v.clone(),
            v,
            eps_proj: 1e-6,
            mu_spent: 0.0,
            budget: PrivacyBudget::new(1.0).unwrap(),
        };
        let (eta, iters, mu, n) = (1.0, 8usize, 0.5, 400usize);
        // B = 0: correction vanishes.
        let same =
            corrected_variance_newton(&sandwich, &DMatrix::identity(2, 2), eta, 0.0, iters, mu, n)
                .unwrap();
        assert_relative_eq!(spectral_norm(&(same - &sandwich.v)), 0.0, epsilon = 1e-14);
        // Identity Hessian: V + n (eta s)^2 I.
        let b = 2.0;
        let got =
            corrected_variance_newton(&sandwich, &DMatrix::identity(2, 2), eta, b, iters, mu, n)
                .unwrap();
        let s = 2.0 * b * (2.0 * iters as f64).sqrt() / (mu * n as f64);
        let want = &sandwich.v + n as f64 * s * s * DMatrix::identity(2, 2);
        assert!(spectral_norm(&(got - want)) < 1e-12);
        // Random SPD Hessian vs explicit inverse.
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.1]);
        let got = corrected_variance_newton(&sandwich, &h, 0.8, b, iters, mu, n).unwrap();
        let inv = h.clone().try_inverse().unwrap();
        let want = &sandwich.v + n as f64 * 0.8 * 0.8 * s * s * (&inv * &inv);
        assert!(spectral_norm(&(got.clone() - want)) < 1e-10);
        // The corrected interval contains the basic one.
        let basic = ci_basic(0.2, sandwich.v[(0, 0)], n, 0.05).unwrap();
        let corrected = ci_corrected_newton(0.2, got[(0, 0)], n, 0.05).unwrap();
        assert!(corrected.lower <= basic.lower && basic.upper <= corrected.upper);
        assert!(corrected.corrected && corrected.method == Some(Method::Newton));
        // Indefinite Hessian: error.
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(corrected_variance_newton(&sandwich, &indef, eta, b, iters, mu, n).is_err());
    }

    #[test]
    fn correction_vanishes_at_large_n() {
        let n = 1_000_000;
        let basic = ci_basic(0.0, 2.5, n, 0.05).unwrap();
        let corr = ci_corrected_gd(0.0, 2.5, n, 0.05, 0.5, 2.0, 100, 0.25).unwrap();
        let ratio = corr.half_width() / basic.half_width();
        assert!(ratio > 1.0 && ratio < 1.01, "ratio {ratio}");
    }

    #[test]
    fn wald_rows_and_edge_cases() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let theta = DVector::from_vec(vec![0.0, 1.96, 3.0]);
        let mut v = DMatrix::zeros(3, 3);
        v[(0, 0)] = 1.0;
        v[(1, 1)] = 400.0; // se = sqrt(400/400) = 1
        v[(2, 2)] = 0.0;
        let rows = wald_table(&names, &theta, &v, 400).unwrap();
        assert_eq!(rows[0].z_value, 0.0);
        assert_eq!(rows[0].p_value, 1.0);
        assert!(!rows[0].flagged);
        assert_relative_eq!(rows[1].z_value, 1.96, epsilon = 1e-12);
        assert!((rows[1].p_value - 0.05).abs() < 1e-3);
        assert!(rows[2].z_value.is_infinite() && rows[2].z_value > 0.0);
        assert_eq!(rows[2].p_value, 0.0);
        assert!(rows[2].flagged);
        // p monotone decreasing in |z|.
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut last = 1.0;
        for k in 1..20 {
            let p = 2.0 * (1.0 - normal.cdf(0.3 * k as f64));
            assert!(p < last);
            last = p;
        }
        // Negative variance diagonal rejected.
        let mut bad = v.clone();
        bad[(0, 0)] = -1.0;
        assert!(wald_table(&names, &theta, &bad, 400).is_err());
    }

    #[test]
    fn wald_csv_header_is_exact() {
        let names = vec!["intercept".to_string()];
        let theta = DVector::from_vec(vec![1.5]);
        let v = DMatrix::from_element(1, 1, 4.0);
        let rows = wald_table(&names, &theta, &v, 100).unwrap();
        let mut buf = Vec::new();
        write_wald_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "term,estimate,std_error,z_value,p_value");
        let row = lines.next().unwrap();
        assert!(row.starts_with("intercept,1.5,0.2,"));
        assert!(lines.next().is_none());
    }
}
