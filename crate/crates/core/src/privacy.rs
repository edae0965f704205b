//! Gaussian differential privacy primitives.
//!
//! Budgets are expressed on the GDP scale: a mechanism with parameter `mu`
//! composes with others by the root sum of squares rule, so a ledger of spends
//! `mu_1..mu_k` certifies `sqrt(sum mu_i^2)`-GDP overall. The two mechanisms
//! here perturb a bounded-sensitivity vector and a Gram-style symmetric matrix;
//! both record their spend in a caller-owned [`PrivacyBudget`] so a pipeline
//! can prove, after the fact, that it stayed inside its declared budget.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Relative slack when checking the ledger against its total: splitting a
/// budget into many exact shares must not trip the check through rounding.
const BUDGET_SLACK: f64 = 1e-9;

/// One recorded mechanism invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub label: String,
    pub mu: f64,
}

/// A GDP budget with an append-only spend ledger.
///
/// Invariant: the composition of all entries never exceeds the declared total
/// (up to floating-point slack). Attempted overspends fail before any noise
/// is drawn.
#[derive(Clone, Debug)]
pub struct PrivacyBudget {
    total: f64,
    entries: Vec<LedgerEntry>,
}

impl PrivacyBudget {
    pub fn new(total_mu: f64) -> Result<Self> {
        if !total_mu.is_finite() || total_mu <= 0.0 {
            return Err(Error::InvalidBudget(format!(
                "total mu must be positive and finite, got {total_mu}"
            )));
        }
        Ok(Self {
            total: total_mu,
            entries: Vec::new(),
        })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// GDP parameter certified by the ledger so far.
    pub fn spent(&self) -> f64 {
        compose_gdp(self.entries.iter().map(|e| e.mu)).expect("ledger entries are valid")
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Record a spend of `mu`, failing if the composed total would exceed the budget.
    pub fn spend(&mut self, label: &str, mu: f64) -> Result<()> {
        if !mu.is_finite() || mu <= 0.0 {
            return Err(Error::InvalidBudget(format!(
                "spend mu must be positive and finite, got {mu}"
            )));
        }
        let composed = compose_gdp(self.entries.iter().map(|e| e.mu).chain(std::iter::once(mu)))?;
        if composed > self.total * (1.0 + BUDGET_SLACK) {
            return Err(Error::BudgetExceeded {
                composed,
                total: self.total,
            });
        }
        self.entries.push(LedgerEntry {
            label: label.to_string(),
            mu,
        });
        Ok(())
    }

    /// Composition of the entries added after `mark` (a previous `entries().len()`).
    pub fn spent_since(&self, mark: usize) -> f64 {
        compose_gdp(self.entries.iter().skip(mark).map(|e| e.mu))
            .expect("ledger entries are valid")
    }
}

/// Compose GDP parameters: `sqrt(sum mu_i^2)`. Empty input composes to 0.
pub fn compose_gdp(mus: impl IntoIterator<Item = f64>) -> Result<f64> {
    let mut sum_sq = 0.0;
    for mu in mus {
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::InvalidBudget(format!(
                "composition requires finite nonnegative mu, got {mu}"
            )));
        }
        sum_sq += mu * mu;
    }
    Ok(sum_sq.sqrt())
}

/// Release `g + (sensitivity / mu) Z` with `Z` i.i.d. standard normal.
///
/// `sensitivity` is the L2 global sensitivity of `g` as a function of one
/// record. The spend is recorded in `budget` under `label` before sampling.
/// `sensitivity == 0` returns the input exactly (noise scale 0).
pub fn gaussian_mechanism<R: Rng + ?Sized>(
    g: &DVector<f64>,
    sensitivity: f64,
    mu: f64,
    budget: &mut PrivacyBudget,
    label: &str,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !sensitivity.is_finite() || sensitivity < 0.0 {
        return Err(Error::InvalidInput(format!(
            "sensitivity must be finite and nonnegative, got {sensitivity}"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("gaussian_mechanism: non-finite input".into()));
    }
    budget.spend(label, mu)?;
    let scale = sensitivity / mu;
    let noisy = g.map(|v| {
        let z: f64 = rng.sample(StandardNormal);
        v + scale * z
    });
    Ok(noisy)
}

/// A symmetric noise matrix whose upper triangle, diagonal included, is
/// i.i.d. `N(0, scale^2)`; the lower triangle mirrors it.
#[derive(Clone, Debug)]
pub struct SymmetricNoise {
    matrix: DMatrix<f64>,
}

impl SymmetricNoise {
    pub fn sample<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if !scale.is_finite() || scale < 0.0 {
            return Err(Error::InvalidInput(format!(
                "noise scale must be finite and nonnegative, got {scale}"
            )));
        }
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let z: f64 = rng.sample(StandardNormal);
                let v = scale * z;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(Self { matrix: m })
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }
}

/// Privatize a Gram-style statistic `h = (1/n) A^T A` whose rows satisfy
/// `||a_i||_2 <= row_norm_bound`, by adding a [`SymmetricNoise`] draw with
/// entry scale `2 * row_norm_bound^2 / (mu * n)`.
///
/// Replacing one row moves `h` by at most `2 * row_norm_bound^2 / n` in
/// Frobenius norm, so this calibration certifies `mu`-GDP. The output is not
/// projected; compose with [`psd_project`] when a definite matrix is needed.
pub fn matrix_gaussian_mechanism<R: Rng + ?Sized>(
    h: &DMatrix<f64>,
    row_norm_bound: f64,
    n: usize,
    mu: f64,
    budget: &mut PrivacyBudget,
    label: &str,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if h.nrows() != h.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix mechanism needs a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    if !row_norm_bound.is_finite() || row_norm_bound < 0.0 {
        return Err(Error::InvalidInput(format!(
            "row norm bound must be finite and nonnegative, got {row_norm_bound}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("matrix mechanism needs n >= 1".into()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix mechanism: non-finite input".into()));
    }
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::InvalidBudget(format!(
            "matrix mechanism mu must be positive, got {mu}"
        )));
    }
    let scale = 2.0 * row_norm_bound * row_norm_bound / (mu * n as f64);
    matrix_gaussian_with_scale(h, scale, mu, budget, label, rng)
}

/// Raw-scale variant: add symmetric noise with the given entry scale and record
/// the stated spend. Callers are responsible for the scale/sensitivity pairing.
pub fn matrix_gaussian_with_scale<R: Rng + ?Sized>(
    h: &DMatrix<f64>,
    scale: f64,
    mu: f64,
    budget: &mut PrivacyBudget,
    label: &str,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    budget.spend(label, mu)?;
    let noise = SymmetricNoise::sample(h.nrows(), scale, rng)?;
    Ok(h + noise.into_matrix())
}

/// Allowed elementwise asymmetry, relative to the largest entry, before a
/// matrix is rejected rather than silently symmetrized.
const SYMMETRY_TOL: f64 = 1e-9;

/// Project a symmetric matrix onto `{M : M >= eps * I}` by flooring its
/// eigenvalues at `eps`.
///
/// This is the nearest such matrix in Frobenius norm, and its spectral
/// distance to any true matrix `h >= 0` is at most `2 ||input - h||_2 + eps`.
pub fn psd_project(h: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    if h.nrows() != h.ncols() {
        return Err(Error::InvalidInput(format!(
            "psd_project needs a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidInput(format!(
            "eigenvalue floor must be finite and nonnegative, got {eps}"
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("psd_project: non-finite input".into()));
    }
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..h.nrows() {
        for j in (i + 1)..h.ncols() {
            if (h[(i, j)] - h[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidInput(format!(
                    "psd_project: input is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    // Exact symmetry before factoring; asymmetry above was already bounded.
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let floored = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(eps)),
    );
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&floored) * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Convert a GDP parameter into the `delta` of an `(eps, delta)`-DP guarantee
/// with `eps = mu`:
///
/// `delta(mu) = Phi(-1 + mu/2) - exp(mu) * Phi(-1 - mu/2)`
pub fn gdp_to_approx_dp(mu: f64) -> Result<f64> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::InvalidBudget(format!(
            "gdp_to_approx_dp needs mu >= 0, got {mu}"
        )));
    }
    if mu == 0.0 {
        return Ok(0.0);
    }
    // Past this point the exact expression is 1 to within f64 resolution and
    // the naive second term would overflow.
    if mu > 100.0 {
        return Ok(1.0);
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let first = std_normal.cdf(-1.0 + mu / 2.0);
    let second = mu.exp() * std_normal.cdf(-1.0 - mu / 2.0);
    Ok((first - second).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use approx::assert_relative_eq;

    fn budget(total: f64) -> PrivacyBudget {
        PrivacyBudget::new(total).unwrap()
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose_gdp([]).unwrap(), 0.0);
        assert_relative_eq!(compose_gdp([3.0, 4.0]).unwrap(), 5.0);
        // K equal shares of mu/sqrt(K) compose back to mu.
        let k = 80;
        let share = 2.0 / (k as f64).sqrt();
        let total = compose_gdp(std::iter::repeat(share).take(k)).unwrap();
        assert_relative_eq!(total, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn compose_is_permutation_invariant() {
        let a = compose_gdp([0.3, 1.1, 0.05, 2.0]).unwrap();
        let b = compose_gdp([2.0, 0.05, 0.3, 1.1]).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-15);
    }

    #[test]
    fn compose_rejects_negative_and_nan() {
        assert!(compose_gdp([0.5, -0.1]).is_err());
        assert!(compose_gdp([f64::NAN]).is_err());
    }

    #[test]
    fn ledger_blocks_overspend_before_sampling() {
        let mut b = budget(1.0);
        b.spend("a", 0.8).unwrap();
        let err = b.spend("b", 0.8).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
        // The failed spend left no entry behind.
        assert_eq!(b.entries().len(), 1);
    }

    #[test]
    fn ledger_accepts_exact_split() {
        let mut b = budget(1.0);
        let k = 100;
        let share = 1.0 / (k as f64).sqrt();
        for i in 0..k {
            b.spend(&format!("iter/{i}"), share).unwrap();
        }
        assert_relative_eq!(b.spent(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn zero_sensitivity_is_identity() {
        let tree = SeedTree::from_seed(1);
        let mut b = budget(1.0);
        let g = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let out =
            gaussian_mechanism(&g, 0.0, 1.0, &mut b, "noop", &mut tree.rng("noop")).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn mechanism_rejects_bad_inputs() {
        let tree = SeedTree::from_seed(1);
        let mut b = budget(1.0);
        let g = DVector::from_vec(vec![f64::NAN]);
        assert!(gaussian_mechanism(&g, 1.0, 0.5, &mut b, "x", &mut tree.rng("x")).is_err());
        let g = DVector::from_vec(vec![1.0]);
        assert!(gaussian_mechanism(&g, 1.0, 0.0, &mut b, "x", &mut tree.rng("x")).is_err());
        assert!(gaussian_mechanism(&g, -1.0, 0.5, &mut b, "x", &mut tree.rng("x")).is_err());
    }

    #[test]
    fn vector_mechanism_noise_scale() {
        // Sample standard deviation per coordinate close to sensitivity/mu.
        let tree = SeedTree::from_seed(42);
        let mut rng = tree.rng("scale-check");
        let g = DVector::from_vec(vec![0.5, -1.5]);
        let sensitivity = 2.0;
        let mu = 0.5;
        let draws = 10_000;
        let mut sums = [0.0f64; 2];
        let mut sums_sq = [0.0f64; 2];
        for i in 0..draws {
            let mut b = budget(mu);
            let out =
                gaussian_mechanism(&g, sensitivity, mu, &mut b, &format!("d{i}"), &mut rng)
                    .unwrap();
            for j in 0..2 {
                let e = out[j] - g[j];
                sums[j] += e;
                sums_sq[j] += e * e;
            }
        }
        let expect = sensitivity / mu;
        for j in 0..2 {
            let mean = sums[j] / draws as f64;
            let var = sums_sq[j] / draws as f64 - mean * mean;
            assert_relative_eq!(var.sqrt(), expect, max_relative = 0.03);
            assert!(mean.abs() < 4.0 * expect / (draws as f64).sqrt());
        }
    }

    #[test]
    fn vector_mechanism_noise_is_normal_ks() {
        // Kolmogorov-Smirnov against the target normal at level 0.01.
        let tree = SeedTree::from_seed(7);
        let mut rng = tree.rng("ks");
        let g = DVector::from_vec(vec![1.0]);
        let mu = 1.0;
        let sensitivity = 3.0;
        let draws = 10_000;
        let mut xs: Vec<f64> = (0..draws)
            .map(|i| {
                let mut b = budget(mu);
                gaussian_mechanism(&g, sensitivity, mu, &mut b, &format!("d{i}"), &mut rng)
                    .unwrap()[0]
            })
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = Normal::new(g[0], sensitivity / mu).unwrap();
        let n = xs.len() as f64;
        let mut d_stat = 0.0f64;
        for (i, x) in xs.iter().enumerate() {
            let f = normal.cdf(*x);
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            d_stat = d_stat.max((f - lo).abs()).max((hi - f).abs());
        }
        // Asymptotic critical value at alpha = 0.01: sqrt(ln(2/alpha)/2) / sqrt(n).
        let crit = (f64::ln(2.0 / 0.01) / 2.0).sqrt() / n.sqrt();
        assert!(d_stat < crit, "KS statistic {d_stat} >= critical {crit}");
    }

    #[test]
    fn matrix_mechanism_entry_scale_and_symmetry() {
        let tree = SeedTree::from_seed(11);
        let mut rng = tree.rng("mat");
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]));
        // row_norm_bound = 1, n chosen so the entry scale is exactly 1/mu with mu = 1:
        // 2 * 1 / (1 * 2) = 1.
        let draws = 10_000;
        let mut sum_sq_offdiag = 0.0f64;
        let mut sum_sq_diag = 0.0f64;
        for i in 0..draws {
            let mut b = budget(1.0);
            let out =
                matrix_gaussian_mechanism(&h, 1.0, 2, 1.0, &mut b, &format!("d{i}"), &mut rng)
                    .unwrap();
            assert_eq!(out[(0, 1)], out[(1, 0)]);
            assert_eq!(out[(0, 2)], out[(2, 0)]);
            sum_sq_offdiag += out[(0, 1)] * out[(0, 1)];
            sum_sq_diag += (out[(0, 0)] - 1.0) * (out[(0, 0)] - 1.0);
        }
        let sd_offdiag = (sum_sq_offdiag / draws as f64).sqrt();
        let sd_diag = (sum_sq_diag / draws as f64).sqrt();
        // Diagonal and off-diagonal entries share one scale.
        assert_relative_eq!(sd_offdiag, 1.0, max_relative = 0.03);
        assert_relative_eq!(sd_diag, 1.0, max_relative = 0.03);
    }

    #[test]
    fn matrix_noise_entries_are_uncorrelated() {
        let tree = SeedTree::from_seed(13);
        let mut rng = tree.rng("corr");
        let dim = 3;
        let draws = 10_000;
        // Upper triangle including diagonal: 6 entries, 15 pairs.
        let idx: Vec<(usize, usize)> = (0..dim)
            .flat_map(|i| (i..dim).map(move |j| (i, j)))
            .collect();
        let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); idx.len()];
        for _ in 0..draws {
            let w = SymmetricNoise::sample(dim, 1.0, &mut rng).unwrap();
            for (k, &(i, j)) in idx.iter().enumerate() {
                samples[k].push(w.as_matrix()[(i, j)]);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        for a in 0..idx.len() {
            for b in (a + 1)..idx.len() {
                let (ma, mb) = (mean(&samples[a]), mean(&samples[b]));
                let mut cov = 0.0;
                let mut va = 0.0;
                let mut vb = 0.0;
                for t in 0..draws {
                    let da = samples[a][t] - ma;
                    let db = samples[b][t] - mb;
                    cov += da * db;
                    va += da * da;
                    vb += db * db;
                }
                let corr = cov / (va.sqrt() * vb.sqrt());
                assert!(
                    corr.abs() < 0.05,
                    "entries {:?} and {:?} correlated: {corr}",
                    idx[a],
                    idx[b]
                );
            }
        }
    }

    #[test]
    fn psd_project_floors_eigenvalues() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, -0.5]);
        let eps = 1e-4;
        let out = psd_project(&h, eps).unwrap();
        let eig = out.symmetric_eigen();
        for l in eig.eigenvalues.iter() {
            assert!(*l >= eps - 1e-12, "eigenvalue {l} below floor");
        }
    }

    #[test]
    fn psd_project_is_idempotent() {
        let tree = SeedTree::from_seed(5);
        let mut rng = tree.rng("idem");
        for _ in 0..20 {
            let w = SymmetricNoise::sample(4, 1.0, &mut rng).unwrap();
            let once = psd_project(w.as_matrix(), 1e-3).unwrap();
            let twice = psd_project(&once, 1e-3).unwrap();
            let diff = (&once - &twice).norm();
            assert!(diff < 1e-12, "projection not idempotent: {diff}");
        }
    }

    #[test]
    fn psd_project_identity_is_fixed_point() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let out = psd_project(&eye, 1e-6).unwrap();
        assert!((&out - &eye).norm() < 1e-14);
    }

    #[test]
    fn psd_project_rejects_asymmetry() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(psd_project(&h, 0.0).is_err());
    }

    #[test]
    fn psd_project_error_bound() {
        // Spectral distance to the truth at most doubles, plus the floor.
        let tree = SeedTree::from_seed(17);
        let mut rng = tree.rng("bound");
        let eps = 1e-4;
        for _ in 0..200 {
            // Random PSD truth: G G^T / dim.
            let g = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let truth = &g * g.transpose() / 4.0;
            let noise = SymmetricNoise::sample(4, 0.3, &mut rng).unwrap();
            let noisy = &truth + noise.as_matrix();
            let proj = psd_project(&noisy, eps).unwrap();
            let err_in = spectral_norm(&(&noisy - &truth));
            let err_out = spectral_norm(&(&proj - &truth));
            assert!(
                err_out <= 2.0 * err_in + eps + 1e-12,
                "projection bound violated: {err_out} > 2 * {err_in} + {eps}"
            );
        }
    }

    fn spectral_norm(m: &DMatrix<f64>) -> f64 {
        let sym = (m + m.transpose()) * 0.5;
        sym.symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, l| acc.max(l.abs()))
    }

    #[test]
    fn delta_of_zero_is_zero() {
        assert_eq!(gdp_to_approx_dp(0.0).unwrap(), 0.0);
    }

    #[test]
    fn delta_is_monotone_in_mu() {
        let mut last = 0.0;
        for i in 1..=400 {
            let mu = i as f64 * 0.05;
            let d = gdp_to_approx_dp(mu).unwrap();
            assert!(d >= last, "delta not monotone at mu = {mu}");
            assert!((0.0..=1.0).contains(&d));
            last = d;
        }
    }

    #[test]
    fn delta_matches_quadrature_oracle() {
        // Independent check of Phi via Simpson integration of the density.
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = |x: f64| {
            // Integrate from -12 (cdf there is ~1e-33, below our tolerance).
            let (a, b) = (-12.0f64, x);
            let n = 4000;
            let hstep = (b - a) / n as f64;
            let mut acc = phi(a) + phi(b);
            for k in 1..n {
                let t = a + k as f64 * hstep;
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * phi(t);
            }
            acc * hstep / 3.0
        };
        for mu in [0.25, 0.5, 1.0, 2.0, 3.0] {
            let oracle = cdf(-1.0 + mu / 2.0) - mu.exp() * cdf(-1.0 - mu / 2.0);
            let got = gdp_to_approx_dp(mu).unwrap();
            assert!(
                (got - oracle).abs() < 1e-8,
                "mu = {mu}: {got} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn delta_rejects_negative() {
        assert!(gdp_to_approx_dp(-0.1).is_err());
    }
}
