//! Privacy-calibrated iterative optimizers.
//!
//! Two algorithms, both under a total Gaussian-DP budget `mu` that is fixed
//! before the run together with the iteration count `K`:
//!
//! - noisy full-gradient descent: each step perturbs the mean score with the
//!   Gaussian mechanism at per-step budget `mu/sqrt(K)`, so the iterate noise
//!   has standard deviation `2 eta B sqrt(K) / (mu n)` per coordinate;
//! - noisy Newton: each step privatizes both the mean score and the Hessian
//!   (via its factor-norm sensitivity) at per-step budget `mu/sqrt(2K)`,
//!   floors the noisy Hessian to be positive definite, and takes a damped
//!   step that switches permanently to a pure step (`eta = 1`) once the
//!   configured rule fires.
//!
//! The full `K`-step schedule always runs even if the iterates have long
//! converged: the noise was calibrated to `K` draws, and stopping early would
//! surrender accuracy without refunding budget. Early stopping exists only as
//! the post-hoc diagnostic [`practical_stop_index`].

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::privacy::{gaussian_mechanism, matrix_gaussian_mechanism, psd_project, PrivacyBudget};
use crate::rng::SeedTree;

/// Iterates beyond this magnitude (or non-finite) abort with a divergence
/// error carrying the trajectory prefix.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Stepsize regime of a Newton iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Damped,
    Pure,
}

/// Rule deciding when noisy Newton moves from damped to pure steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwitchRule {
    /// Fire once the rescaled private Newton decrement satisfies
    /// `lambda_min(H)^(-1/2) lambda <= 1/(16 gamma)`. Uses only quantities
    /// already privatized for the step, so it costs no extra budget.
    SelfConcordant,
    /// Fire once `||noisy grad|| <= tau1^2 / L`, with `tau1` and `L` released
    /// privately one time from the model's curvature bounds. Reserves
    /// `lsc_budget_frac` of the total budget for those two releases.
    LscHeuristic,
    /// Never switch; run with the configured stepsize throughout.
    FixedEta,
}

#[derive(Clone, Debug)]
pub struct GdConfig {
    pub eta: f64,
    pub iters: usize,
    pub mu: f64,
    pub theta0: DVector<f64>,
    /// False runs classical full-gradient descent (nothing is spent and the
    /// result is not private); intended for testing and calibration.
    pub noise_enabled: bool,
}

impl GdConfig {
    pub fn new(eta: f64, iters: usize, mu: f64, theta0: DVector<f64>) -> Self {
        GdConfig {
            eta,
            iters,
            mu,
            theta0,
            noise_enabled: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonConfig {
    /// Stepsize in (0, 1] used until the switch rule fires.
    pub eta_damped: f64,
    pub iters: usize,
    pub mu: f64,
    pub theta0: DVector<f64>,
    /// Eigenvalue floor for the noisy Hessian; `None` uses
    /// `1e-4 * hessian_bound(theta0)`.
    pub eps_floor: Option<f64>,
    pub switch_rule: SwitchRule,
    pub noise_enabled: bool,
    /// Fraction of `mu` reserved for the one-time private releases of the
    /// `LscHeuristic` rule, split evenly between its two matrices. The main
    /// loop then runs on `mu sqrt(1 - frac^2)` so everything composes to `mu`.
    pub lsc_budget_frac: f64,
}

impl NewtonConfig {
    pub fn new(eta_damped: f64, iters: usize, mu: f64, theta0: DVector<f64>) -> Self {
        NewtonConfig {
            eta_damped,
            iters,
            mu,
            theta0,
            eps_floor: None,
            switch_rule: SwitchRule::FixedEta,
            noise_enabled: true,
            lsc_budget_frac: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Final iterate, equal to `trajectory[iters]`.
    pub theta: DVector<f64>,
    /// All iterates `theta^(0) ..= theta^(K)`; length `iters + 1`.
    pub trajectory: Vec<DVector<f64>>,
    /// Noisy gradient norm observed at each iteration; length `iters`.
    pub grad_norm_trace: Vec<f64>,
    /// Stepsize regime per iteration (Newton); empty for gradient descent.
    pub phase_trace: Vec<Phase>,
    /// Per-coordinate standard deviation of the additive gradient noise at
    /// each iteration (zero when noise is disabled). The iterate-level noise
    /// of gradient descent is `eta` times this.
    pub noise_scale: Vec<f64>,
    /// Entry scale of the symmetric Hessian noise per iteration (Newton).
    pub hessian_noise_scale: Vec<f64>,
    /// Composed GDP spend recorded in the ledger; equals `mu` for noisy runs
    /// and 0 for noise-free ones.
    pub mu_spent: f64,
    /// The full allocation ledger.
    pub budget: PrivacyBudget,
    /// Fingerprint of the seed tree the run drew from.
    pub seed: u64,
    /// Iteration at which the switch rule fired, if it did.
    pub switch_iteration: Option<usize>,
    /// Eigenvalue floor actually applied (Newton).
    pub eps_floor: Option<f64>,
    /// Floored privatized Hessian solved at the final iteration (Newton).
    /// Already paid for, so variance corrections may reuse it freely.
    pub final_hessian: Option<DMatrix<f64>>,
}

fn validate_run(
    eta: f64,
    iters: usize,
    mu: f64,
    theta0: &DVector<f64>,
    p: usize,
) -> Result<()> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "stepsize must be positive, got {eta}"
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidInput("iteration budget must be >= 1".into()));
    }
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::InvalidBudget(format!(
            "privacy budget mu must be positive, got {mu}"
        )));
    }
    if theta0.len() != p {
        return Err(Error::InvalidInput(format!(
            "theta0 has dimension {}, model needs {p}",
            theta0.len()
        )));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("theta0 must be finite".into()));
    }
    Ok(())
}

fn within_limits(theta: &DVector<f64>) -> bool {
    theta.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT)
}

/// A model error at iteration `k > 0` means a noisy step left the parameter
/// domain (for concomitant-scale models, sigma driven nonpositive): report it
/// as divergence with the trajectory so far. At `k = 0` the caller supplied a
/// bad starting point and the original error stands.
fn escalate_model_error(err: Error, k: usize, trajectory: &[DVector<f64>]) -> Error {
    match err {
        Error::InvalidParameter(_) if k > 0 => Error::Diverged {
            iteration: k,
            trajectory: trajectory.to_vec(),
        },
        other => other,
    }
}

pub fn noisy_gd<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &GdConfig,
    seed: &SeedTree,
) -> Result<FitResult> {
    let p = model.param_dim(data.dim());
    validate_run(cfg.eta, cfg.iters, cfg.mu, &cfg.theta0, p)?;
    let n = data.n() as f64;
    let b = model.score_bound();
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "model gradient bound must be positive and finite, got {b}"
        )));
    }
    let k_total = cfg.iters as f64;
    let mu_iter = cfg.mu / k_total.sqrt();
    let grad_sd = if cfg.noise_enabled {
        2.0 * b * k_total.sqrt() / (cfg.mu * n)
    } else {
        0.0
    };

    let mut budget = PrivacyBudget::new(cfg.mu)?;
    let mut theta = cfg.theta0.clone();
    let mut trajectory = Vec::with_capacity(cfg.iters + 1);
    trajectory.push(theta.clone());
    let mut grad_norms = Vec::with_capacity(cfg.iters);
    let mut noise_scale = Vec::with_capacity(cfg.iters);

    for k in 0..cfg.iters {
        let g = model
            .mean_score(data, &theta)
            .map_err(|e| escalate_model_error(e, k, &trajectory))?;
        let g_tilde = if cfg.noise_enabled {
            let label = format!("gd/{k}/grad");
            let mut rng = seed.rng(&label);
            gaussian_mechanism(&g, 2.0 * b / n, mu_iter, &mut budget, &label, &mut rng)?
        } else {
            g
        };
        grad_norms.push(g_tilde.norm());
        noise_scale.push(grad_sd);
        theta.axpy(-cfg.eta, &g_tilde, 1.0);
        trajectory.push(theta.clone());
        if !within_limits(&theta) {
            return Err(Error::Diverged {
                iteration: k + 1,
                trajectory,
            });
        }
    }

    Ok(FitResult {
        theta,
        trajectory,
        grad_norm_trace: grad_norms,
        phase_trace: Vec::new(),
        noise_scale,
        hessian_noise_scale: Vec::new(),
        mu_spent: budget.spent(),
        budget,
        seed: seed.fingerprint(),
        switch_iteration: None,
        eps_floor: None,
        final_hessian: None,
    })
}

pub fn noisy_newton<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &NewtonConfig,
    seed: &SeedTree,
) -> Result<FitResult> {
    let p = model.param_dim(data.dim());
    validate_run(cfg.eta_damped, cfg.iters, cfg.mu, &cfg.theta0, p)?;
    if cfg.eta_damped > 1.0 {
        return Err(Error::InvalidInput(format!(
            "damped stepsize must lie in (0, 1], got {}",
            cfg.eta_damped
        )));
    }
    let n = data.n() as f64;
    let b = model.score_bound();
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "model gradient bound must be positive and finite, got {b}"
        )));
    }
    let gamma = match cfg.switch_rule {
        SwitchRule::SelfConcordant => Some(model.self_concordance().ok_or_else(|| {
            Error::InvalidInput(
                "self-concordant switch rule needs a model self-concordance constant".into(),
            )
        })?),
        _ => None,
    };
    if cfg.switch_rule == SwitchRule::LscHeuristic
        && !(cfg.lsc_budget_frac > 0.0 && cfg.lsc_budget_frac < 1.0)
    {
        return Err(Error::InvalidBudget(format!(
            "lsc_budget_frac must lie in (0, 1), got {}",
            cfg.lsc_budget_frac
        )));
    }

    // The two one-time LSC releases take frac*mu/sqrt(2) each; the main loop
    // runs on the remainder so that everything composes to exactly mu.
    let (mu_main, mu_release) = if cfg.switch_rule == SwitchRule::LscHeuristic {
        let frac = cfg.lsc_budget_frac;
        (
            cfg.mu * (1.0 - frac * frac).sqrt(),
            cfg.mu * frac / std::f64::consts::SQRT_2,
        )
    } else {
        (cfg.mu, 0.0)
    };
    let k_total = cfg.iters as f64;
    let mu_iter = mu_main / (2.0 * k_total).sqrt();
    let grad_sd = if cfg.noise_enabled {
        2.0 * b * (2.0 * k_total).sqrt() / (mu_main * n)
    } else {
        0.0
    };
    let eps_floor = match cfg.eps_floor {
        Some(e) if e.is_finite() && e > 0.0 => e,
        Some(e) => {
            return Err(Error::InvalidInput(format!(
                "eps_floor must be positive, got {e}"
            )))
        }
        None => 1e-4 * model.hessian_bound(&cfg.theta0)?,
    };
    let release_iter = (cfg.iters / 5).max(1);

    let mut budget = PrivacyBudget::new(cfg.mu)?;
    let mut theta = cfg.theta0.clone();
    let mut trajectory = Vec::with_capacity(cfg.iters + 1);
    trajectory.push(theta.clone());
    let mut grad_norms = Vec::with_capacity(cfg.iters);
    let mut noise_scale = Vec::with_capacity(cfg.iters);
    let mut hess_scale = Vec::with_capacity(cfg.iters);
    let mut phases = Vec::with_capacity(cfg.iters);
    let mut eta = cfg.eta_damped;
    let mut switch_iteration = None;
    let mut lsc_bounds: Option<(f64, f64)> = None;
    let mut final_hessian = None;

    for k in 0..cfg.iters {
        if cfg.switch_rule == SwitchRule::LscHeuristic && k == release_iter {
            let release = model
                .lsc_release(data, &theta)
                .map_err(|e| escalate_model_error(e, k, &trajectory))?
                .ok_or_else(|| {
                    Error::InvalidInput(
                        "lsc_heuristic switch rule needs model lsc release matrices".into(),
                    )
                })?;
            let (lower, curvature) = if cfg.noise_enabled {
                let lower = matrix_gaussian_mechanism(
                    &release.lower,
                    release.lower_row_bound,
                    data.n(),
                    mu_release,
                    &mut budget,
                    "newton/lsc/lower",
                    &mut seed.rng("newton/lsc/lower"),
                )?;
                let curvature = matrix_gaussian_mechanism(
                    &release.curvature,
                    release.curvature_row_bound,
                    data.n(),
                    mu_release,
                    &mut budget,
                    "newton/lsc/curvature",
                    &mut seed.rng("newton/lsc/curvature"),
                )?;
                (lower, curvature)
            } else {
                (release.lower, release.curvature)
            };
            let tau1 = lower.symmetric_eigen().eigenvalues.min();
            let l_hat = curvature.symmetric_eigen().eigenvalues.max() * release.psi2_sup;
            // Nonpositive private estimates simply disable the switch.
            lsc_bounds = Some((tau1, l_hat));
        }

        let g = model
            .mean_score(data, &theta)
            .map_err(|e| escalate_model_error(e, k, &trajectory))?;
        let hbar = model
            .hessian_bound(&theta)
            .map_err(|e| escalate_model_error(e, k, &trajectory))?;
        let h = model
            .hessian(data, &theta)
            .map_err(|e| escalate_model_error(e, k, &trajectory))?;

        let (g_tilde, h_tilde, h_sd) = if cfg.noise_enabled {
            let glabel = format!("newton/{k}/grad");
            let g_tilde = gaussian_mechanism(
                &g,
                2.0 * b / n,
                mu_iter,
                &mut budget,
                &glabel,
                &mut seed.rng(&glabel),
            )?;
            let hlabel = format!("newton/{k}/hess");
            let h_tilde = matrix_gaussian_mechanism(
                &h,
                hbar.sqrt(),
                data.n(),
                mu_iter,
                &mut budget,
                &hlabel,
                &mut seed.rng(&hlabel),
            )?;
            (g_tilde, h_tilde, 2.0 * hbar / (mu_iter * n))
        } else {
            (g, h, 0.0)
        };
        let h_floored = psd_project(&h_tilde, eps_floor)?;

        if switch_iteration.is_none() {
            let fire = match cfg.switch_rule {
                SwitchRule::SelfConcordant => {
                    sc_switch_check(&g_tilde, &h_floored, gamma.expect("validated above"))?
                }
                SwitchRule::LscHeuristic => match lsc_bounds {
                    Some((tau1, l_hat)) if tau1 > 0.0 && l_hat > 0.0 => {
                        lsc_switch_check(g_tilde.norm(), tau1, l_hat)?
                    }
                    _ => false,
                },
                SwitchRule::FixedEta => false,
            };
            if fire {
                switch_iteration = Some(k);
                eta = 1.0;
            }
        }

        grad_norms.push(g_tilde.norm());
        noise_scale.push(grad_sd);
        hess_scale.push(h_sd);
        phases.push(if eta == 1.0 { Phase::Pure } else { Phase::Damped });

        let chol = Cholesky::new(h_floored.clone()).ok_or_else(|| {
            Error::NotPositiveDefinite("floored Hessian failed to factorize".into())
        })?;
        if k + 1 == cfg.iters {
            final_hessian = Some(h_floored);
        }
        let direction = chol.solve(&g_tilde);
        theta.axpy(-eta, &direction, 1.0);
        trajectory.push(theta.clone());
        if !within_limits(&theta) {
            return Err(Error::Diverged {
                iteration: k + 1,
                trajectory,
            });
        }
    }

    Ok(FitResult {
        theta,
        trajectory,
        grad_norm_trace: grad_norms,
        phase_trace: phases,
        noise_scale,
        hessian_noise_scale: hess_scale,
        mu_spent: budget.spent(),
        budget,
        seed: seed.fingerprint(),
        switch_iteration,
        eps_floor: Some(eps_floor),
        final_hessian,
    })
}

/// Newton decrement `sqrt(g^T H^{-1} g)` for positive definite `H`.
pub fn newton_decrement(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Result<f64> {
    if hess.nrows() != hess.ncols() || hess.nrows() != grad.len() {
        return Err(Error::InvalidInput(format!(
            "newton decrement needs square {0}x{0} Hessian for gradient of length {0}, got {1}x{2}",
            grad.len(),
            hess.nrows(),
            hess.ncols()
        )));
    }
    let chol = Cholesky::new(hess.clone()).ok_or_else(|| {
        Error::NotPositiveDefinite("newton decrement needs a positive definite Hessian".into())
    })?;
    let solved = chol.solve(grad);
    Ok(grad.dot(&solved).max(0.0).sqrt())
}

/// Self-concordant switch: true iff
/// `lambda_min(H)^(-1/2) * lambda(g, H) <= 1/(16 gamma)` (inclusive), with
/// `g`, `H` the already-privatized gradient and floored Hessian, so the check
/// costs no additional privacy budget.
pub fn sc_switch_check(
    noisy_grad: &DVector<f64>,
    floored_hess: &DMatrix<f64>,
    gamma: f64,
) -> Result<bool> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "self-concordance gamma must be positive, got {gamma}"
        )));
    }
    let decrement = newton_decrement(noisy_grad, floored_hess)?;
    let lambda_min = floored_hess.clone().symmetric_eigen().eigenvalues.min();
    if lambda_min <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "switch check needs a positive definite Hessian, lambda_min = {lambda_min}"
        )));
    }
    Ok(decrement / lambda_min.sqrt() <= 1.0 / (16.0 * gamma))
}

/// Locally-strongly-convex switch: true iff
/// `noisy_grad_norm <= tau1_hat^2 / l_hat`, with both curvature estimates
/// produced privately by the caller.
pub fn lsc_switch_check(noisy_grad_norm: f64, tau1_hat: f64, l_hat: f64) -> Result<bool> {
    if !noisy_grad_norm.is_finite() || noisy_grad_norm < 0.0 {
        return Err(Error::InvalidInput(format!(
            "gradient norm must be nonnegative, got {noisy_grad_norm}"
        )));
    }
    if !tau1_hat.is_finite() || tau1_hat <= 0.0 || !l_hat.is_finite() || l_hat <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "curvature estimates must be positive, got tau1 = {tau1_hat}, L = {l_hat}"
        )));
    }
    Ok(noisy_grad_norm <= tau1_hat * tau1_hat / l_hat)
}

/// Recommended count of burn-in noisy-GD steps before starting Newton:
/// `ceil(R^2 / (eta Delta))` for a start at distance `R` from the optimum,
/// stepsize `eta`, and suboptimality scale `Delta`.
pub fn warmstart_length(r: f64, eta: f64, delta: f64) -> Result<usize> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::InvalidInput(format!(
            "radius must be nonnegative, got {r}"
        )));
    }
    if !eta.is_finite() || eta <= 0.0 || !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "eta and Delta must be positive, got eta = {eta}, Delta = {delta}"
        )));
    }
    let raw = r * r / (eta * delta);
    // Forgive float dust before taking the ceiling: 4/0.1 is not 40 in IEEE.
    let nearest = raw.round();
    let steps = if (raw - nearest).abs() < 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    Ok(steps as usize)
}

/// First iteration whose recorded noisy gradient norm drops below
/// `factor * noise_sd * sqrt(p)`; `iters` if none does. Diagnostic only: the
/// budget for all `K` steps is spent regardless.
pub fn stop_index_at(result: &FitResult, factor: f64) -> usize {
    let p = result.trajectory[0].len() as f64;
    for (k, (&gn, &sd)) in result
        .grad_norm_trace
        .iter()
        .zip(&result.noise_scale)
        .enumerate()
    {
        if gn < factor * sd * p.sqrt() {
            return k;
        }
    }
    result.grad_norm_trace.len()
}

/// [`stop_index_at`] with the canonical threshold `noise_sd * sqrt(p)`.
pub fn practical_stop_index(result: &FitResult) -> usize {
    stop_index_at(result, 1.0)
}

/// Certificate that a run of gradient norms obeys the pure-Newton quadratic
/// recursion `norm[k+1] <= constant * norm[k]^2`.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticCertificate {
    /// Index of the first norm below the entry threshold.
    pub start: usize,
    /// Smallest single constant bounding every counted transition. Linear
    /// convergence inflates this like `rate/norm`, so a moderate value is
    /// evidence of a genuinely quadratic tail.
    pub constant: f64,
    /// Number of consecutive transitions certified.
    pub steps: usize,
}

/// Fit the quadratic-rate certificate to the tail of `norms` starting at the
/// first entry below `entry`. Transitions into norms at or below `floor`
/// count as converged (the quadratic target is beneath numerical resolution).
/// Returns `None` when fewer than `min_steps` transitions are available.
pub fn quadratic_rate_certificate(
    norms: &[f64],
    entry: f64,
    floor: f64,
    min_steps: usize,
) -> Option<QuadraticCertificate> {
    let start = norms.iter().position(|&g| g < entry)?;
    let mut constant: f64 = 0.0;
    let mut steps = 0;
    for k in start..norms.len().saturating_sub(1) {
        let (g0, g1) = (norms[k], norms[k + 1]);
        if g0 > floor && g1 > floor {
            constant = constant.max(g1 / (g0 * g0));
        }
        steps += 1;
    }
    (steps >= min_steps).then_some(QuadraticCertificate {
        start,
        constant,
        steps,
    })
}
