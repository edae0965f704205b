//! Experiment runners: replication fan-out over worker threads, long-format
//! CSV output, and a JSON summary with per-cell statistics.
//!
//! One CSV row per (rep, n, coordinate, metric). Vector-level metrics use
//! coordinate -1. Every rep emits a `diverged` row (0 or 1), so
//! `failed + succeeded = reps` is checkable from the CSV alone. Row order is
//! fixed by (n, rep) regardless of thread count, which keeps reruns of the
//! same config byte-identical.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dpmest::inference::{
    ci_basic, ci_corrected_gd, ci_corrected_newton, corrected_variance_newton, private_sandwich,
    ConfInterval, SandwichConfig,
};
use dpmest::losses::LossModel;
use dpmest::nalgebra::DVector;
use dpmest::optim::{
    noisy_gd, noisy_newton, FitResult, GdConfig, NewtonConfig, Phase, SwitchRule,
};
use dpmest::rand::RngExt;
use dpmest::{Dataset, SeedTree};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{
    iteration_schedule, Algo, ExperimentConfig, ExperimentKind, ModelSpec, SwitchRuleSpec,
};
use crate::CliError;

#[derive(Clone, Debug)]
pub struct Row {
    pub rep: usize,
    pub n: usize,
    /// Design coordinate, or -1 for a whole-vector metric.
    pub coordinate: i64,
    pub metric: String,
    pub value: f64,
}

impl Row {
    fn vector(rep: usize, n: usize, metric: impl Into<String>, value: f64) -> Row {
        Row {
            rep,
            n,
            coordinate: -1,
            metric: metric.into(),
            value,
        }
    }

    fn coord(rep: usize, n: usize, j: usize, metric: impl Into<String>, value: f64) -> Row {
        Row {
            rep,
            n,
            coordinate: j as i64,
            metric: metric.into(),
            value,
        }
    }
}

pub struct RunArtifacts {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub summary: serde_json::Value,
}

/// Resolved per-run optimizer settings.
struct Plan {
    algo: Algo,
    eta: f64,
    iters: usize,
    mu: f64,
    switch_rule: SwitchRule,
    eps_floor: Option<f64>,
    noise: bool,
}

impl Plan {
    fn resolve(cfg: &ExperimentConfig, model: &dyn LossModel, n: usize) -> Plan {
        let algo = cfg.optimizer.algo;
        let switch_rule = match cfg.optimizer.switch_rule {
            SwitchRuleSpec::Auto => {
                if model.self_concordance().is_some() {
                    SwitchRule::SelfConcordant
                } else {
                    SwitchRule::FixedEta
                }
            }
            SwitchRuleSpec::SelfConcordant => SwitchRule::SelfConcordant,
            SwitchRuleSpec::LscHeuristic => SwitchRule::LscHeuristic,
            SwitchRuleSpec::FixedEta => SwitchRule::FixedEta,
        };
        Plan {
            algo,
            eta: cfg.optimizer.eta.unwrap_or_else(|| cfg.model.default_eta(algo)),
            iters: cfg.optimizer.iters.unwrap_or_else(|| iteration_schedule(n)),
            mu: cfg.optimizer.mu,
            switch_rule,
            eps_floor: cfg.optimizer.eps_floor,
            noise: cfg.noise,
        }
    }

    fn fit(
        &self,
        model: &dyn LossModel,
        data: &Dataset,
        theta0: DVector<f64>,
        seed: &SeedTree,
    ) -> Result<FitResult, dpmest::Error> {
        match self.algo {
            Algo::Gd => {
                let mut cfg = GdConfig::new(self.eta, self.iters, self.mu, theta0);
                cfg.noise_enabled = self.noise;
                noisy_gd(model, data, &cfg, seed)
            }
            Algo::Newton => {
                let mut cfg = NewtonConfig::new(self.eta, self.iters, self.mu, theta0);
                cfg.noise_enabled = self.noise;
                cfg.switch_rule = self.switch_rule;
                cfg.eps_floor = self.eps_floor;
                noisy_newton(model, data, &cfg, seed)
            }
        }
    }
}

/// Nonprivate reference solve: damped Newton with noise disabled. Full steps
/// can overshoot concomitant-scale models from far starts, so this stays
/// damped for robustness rather than speed.
fn reference_fit(
    model: &dyn LossModel,
    data: &Dataset,
    theta0: DVector<f64>,
    seed: &SeedTree,
) -> Result<FitResult, dpmest::Error> {
    let mut cfg = NewtonConfig::new(0.5, 80, 1.0, theta0);
    cfg.noise_enabled = false;
    cfg.switch_rule = SwitchRule::FixedEta;
    noisy_newton(model, data, &cfg, seed)
}

fn interval_rows(
    rows: &mut Vec<Row>,
    rep: usize,
    n: usize,
    j: usize,
    basic: &ConfInterval,
    corrected: &ConfInterval,
    truth: Option<f64>,
) {
    rows.push(Row::coord(rep, n, j, "width_basic", basic.upper - basic.lower));
    rows.push(Row::coord(
        rep,
        n,
        j,
        "width_corrected",
        corrected.upper - corrected.lower,
    ));
    if let Some(t) = truth {
        rows.push(Row::coord(
            rep,
            n,
            j,
            "covered_basic",
            basic.contains(t) as u8 as f64,
        ));
        rows.push(Row::coord(
            rep,
            n,
            j,
            "covered_corrected",
            corrected.contains(t) as u8 as f64,
        ));
    }
}

/// Fit plus sandwich plus both interval flavors for every coordinate.
fn ci_rows(
    cfg: &ExperimentConfig,
    plan: &Plan,
    model: &dyn LossModel,
    data: &Dataset,
    rep: usize,
    n: usize,
    rep_tree: &SeedTree,
    truth: Option<&DVector<f64>>,
) -> Result<Vec<Row>, dpmest::Error> {
    let fit = plan.fit(model, data, cfg.model.theta0(data), &rep_tree.branch("fit"))?;
    let mut sandwich_cfg = SandwichConfig::new(plan.mu);
    sandwich_cfg.noise_enabled = plan.noise;
    let sandwich = private_sandwich(
        model,
        data,
        &fit.theta,
        &sandwich_cfg,
        &rep_tree.branch("inference"),
    )?;
    let b = model.score_bound();
    let mut rows = Vec::new();
    match plan.algo {
        Algo::Gd => {
            for j in 0..fit.theta.len() {
                let v_jj = sandwich.v[(j, j)];
                let basic = ci_basic(fit.theta[j], v_jj, n, cfg.alpha)?;
                let corrected = ci_corrected_gd(
                    fit.theta[j],
                    v_jj,
                    n,
                    cfg.alpha,
                    plan.eta,
                    b,
                    plan.iters,
                    plan.mu,
                )?;
                rows.push(Row::coord(rep, n, j, "estimate", fit.theta[j]));
                rows.push(Row::coord(rep, n, j, "std_error", (v_jj / n as f64).sqrt()));
                interval_rows(&mut rows, rep, n, j, &basic, &corrected, truth.map(|t| t[j]));
            }
        }
        Algo::Newton => {
            let h_tilde = fit
                .final_hessian
                .as_ref()
                .expect("newton fits record their final Hessian");
            let eta_final = match fit.phase_trace.last() {
                Some(Phase::Pure) => 1.0,
                _ => plan.eta,
            };
            let v_hat = corrected_variance_newton(
                &sandwich, h_tilde, eta_final, b, plan.iters, plan.mu, n,
            )?;
            for j in 0..fit.theta.len() {
                let basic = ci_basic(fit.theta[j], sandwich.v[(j, j)], n, cfg.alpha)?;
                let corrected = ci_corrected_newton(fit.theta[j], v_hat[(j, j)], n, cfg.alpha)?;
                rows.push(Row::coord(rep, n, j, "estimate", fit.theta[j]));
                rows.push(Row::coord(
                    rep,
                    n,
                    j,
                    "std_error",
                    (sandwich.v[(j, j)] / n as f64).sqrt(),
                ));
                interval_rows(&mut rows, rep, n, j, &basic, &corrected, truth.map(|t| t[j]));
            }
        }
    }
    Ok(rows)
}

fn run_rep(cfg: &ExperimentConfig, n: usize, rep: usize) -> Result<Vec<Row>, dpmest::Error> {
    let rep_tree = SeedTree::from_seed(cfg.seed).branch(&format!("n/{n}/rep/{rep}"));

    // The clipping-bias comparison pins its own logistic design; the
    // configured model family only chooses the clipped arm's threshold.
    if matches!(cfg.experiment, ExperimentKind::ClippingBias) {
        return clipping_bias_rep(cfg, n, rep, &rep_tree);
    }

    let data = cfg.model.simulate(n, &rep_tree.branch("data"))?;
    let model = cfg.model.build(&data)?;
    let plan = Plan::resolve(cfg, model.as_ref(), n);
    let truth = cfg.model.truth();

    match cfg.experiment {
        ExperimentKind::Fit => {
            let fit = plan.fit(
                model.as_ref(),
                &data,
                cfg.model.theta0(&data),
                &rep_tree.branch("fit"),
            )?;
            let mut rows = Vec::new();
            for j in 0..fit.theta.len() {
                rows.push(Row::coord(rep, n, j, "estimate", fit.theta[j]));
            }
            rows.push(Row::vector(
                rep,
                n,
                "final_grad_norm",
                *fit.grad_norm_trace.last().unwrap(),
            ));
            rows.push(Row::vector(rep, n, "mu_spent", fit.mu_spent));
            Ok(rows)
        }
        ExperimentKind::Ci | ExperimentKind::Coverage => ci_rows(
            cfg,
            &plan,
            model.as_ref(),
            &data,
            rep,
            n,
            &rep_tree,
            Some(&truth),
        ),
        ExperimentKind::Trajectory => {
            let fit = plan.fit(
                model.as_ref(),
                &data,
                cfg.model.theta0(&data),
                &rep_tree.branch("fit"),
            )?;
            let mut rows = Vec::new();
            for (k, theta) in fit.trajectory.iter().enumerate() {
                for j in 0..theta.len() {
                    rows.push(Row::coord(rep, n, j, format!("theta_k{k}"), theta[j]));
                }
            }
            for (k, g) in fit.grad_norm_trace.iter().enumerate() {
                rows.push(Row::vector(rep, n, format!("grad_norm_k{k}"), *g));
            }
            for (k, phase) in fit.phase_trace.iter().enumerate() {
                let v = matches!(phase, Phase::Pure) as u8 as f64;
                rows.push(Row::vector(rep, n, format!("phase_k{k}"), v));
            }
            Ok(rows)
        }
        ExperimentKind::Consistency => {
            let reference = reference_fit(
                model.as_ref(),
                &data,
                cfg.model.theta0(&data),
                &rep_tree.branch("reference"),
            )?;
            let fit = plan.fit(
                model.as_ref(),
                &data,
                cfg.model.theta0(&data),
                &rep_tree.branch("fit"),
            )?;
            Ok(vec![
                Row::vector(
                    rep,
                    n,
                    "dist_private_nonprivate",
                    (&fit.theta - &reference.theta).norm(),
                ),
                Row::vector(
                    rep,
                    n,
                    "dist_nonprivate_truth",
                    (&reference.theta - &truth).norm(),
                ),
            ])
        }
        ExperimentKind::ClippingBias => unreachable!("handled before simulation"),
        ExperimentKind::GdVsNewton => {
            let gd_iters = cfg.optimizer.iters.unwrap_or(80);
            let newton_iters = (gd_iters / 10).max(1);
            let mut gd_cfg = GdConfig::new(
                cfg.optimizer.eta.unwrap_or_else(|| cfg.model.default_eta(Algo::Gd)),
                gd_iters,
                plan.mu,
                cfg.model.theta0(&data),
            );
            gd_cfg.noise_enabled = cfg.noise;
            let gd = noisy_gd(model.as_ref(), &data, &gd_cfg, &rep_tree.branch("gd"))?;

            let mut nt_cfg = NewtonConfig::new(
                cfg.model.default_eta(Algo::Newton),
                newton_iters,
                plan.mu,
                cfg.model.theta0(&data),
            );
            nt_cfg.noise_enabled = cfg.noise;
            nt_cfg.switch_rule = plan.switch_rule;
            nt_cfg.eps_floor = plan.eps_floor;
            let newton = noisy_newton(model.as_ref(), &data, &nt_cfg, &rep_tree.branch("newton"))?;

            let mut rows = Vec::new();
            for (k, g) in gd.grad_norm_trace.iter().enumerate() {
                rows.push(Row::vector(rep, n, format!("gd_grad_norm_k{k}"), *g));
            }
            for (k, g) in newton.grad_norm_trace.iter().enumerate() {
                rows.push(Row::vector(rep, n, format!("newton_grad_norm_k{k}"), *g));
            }
            rows.push(Row::vector(
                rep,
                n,
                "final_grad_norm_gd",
                *gd.grad_norm_trace.last().unwrap(),
            ));
            rows.push(Row::vector(
                rep,
                n,
                "final_grad_norm_newton",
                *newton.grad_norm_trace.last().unwrap(),
            ));
            Ok(rows)
        }
    }
}

/// Both arms fit the same simulated logistic data, noise disabled so the
/// comparison isolates the systematic bias of hard clipping from mechanism
/// noise. The robust arm downweights by leverage instead of clipping.
fn clipping_bias_rep(
    cfg: &ExperimentConfig,
    n: usize,
    rep: usize,
    rep_tree: &SeedTree,
) -> Result<Vec<Row>, dpmest::Error> {
    let design = ModelSpec::Logistic { b: 25.0 };
    let data = design.simulate(n, &rep_tree.branch("data"))?;
    let truth = design.truth();
    let clipped_spec = ModelSpec::ClippedLogistic { clip: cfg.clip };

    let mut rows = Vec::new();
    for (spec, tag) in [(design, "mallows"), (clipped_spec, "clipped")] {
        let arm = spec.build(&data)?;
        let mut fit_cfg = GdConfig::new(
            spec.default_eta(Algo::Gd),
            cfg.optimizer.iters.unwrap_or_else(|| iteration_schedule(n)),
            cfg.optimizer.mu,
            spec.theta0(&data),
        );
        fit_cfg.noise_enabled = false;
        let fit = noisy_gd(arm.as_ref(), &data, &fit_cfg, &rep_tree.branch(tag))?;
        for j in 0..fit.theta.len() {
            rows.push(Row::coord(
                rep,
                n,
                j,
                format!("bias_{tag}"),
                fit.theta[j] - truth[j],
            ));
        }
    }
    Ok(rows)
}

fn median_of(sorted: &[f64]) -> f64 {
    sorted[sorted.len() / 2]
}

/// Percentile bootstrap band for the mean: resample with replacement, take
/// 2.5% and 97.5% quantiles of the resampled means. Seeded, so reruns agree.
fn bootstrap_band(values: &[f64], seeds: &SeedTree, label: &str) -> (f64, f64) {
    let mut rng = seeds.rng(label);
    let mut means: Vec<f64> = (0..1000)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..values.len() {
                acc += values[rng.random_range(0..values.len())];
            }
            acc / values.len() as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (means[25], means[974])
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts, CliError> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let name = cfg.experiment.name();

    let mut all_rows: Vec<Row> = Vec::new();
    let mut failed_by_n: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in &cfg.n_grid {
        let results: Vec<Result<Vec<Row>, dpmest::Error>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| run_rep(cfg, n, rep))
            .collect();
        let mut failed = 0usize;
        for (rep, result) in results.into_iter().enumerate() {
            match result {
                Ok(rows) => {
                    all_rows.push(Row::vector(rep, n, "diverged", 0.0));
                    all_rows.extend(rows);
                }
                Err(dpmest::Error::Diverged { .. }) => {
                    failed += 1;
                    all_rows.push(Row::vector(rep, n, "diverged", 1.0));
                }
                Err(other) => return Err(CliError::from(other)),
            }
        }
        failed_by_n.insert(n, failed);
    }

    // Long CSV, ordered by (n, rep, emission order).
    let csv_path = cfg.out.with_extension("csv");
    if let Some(dir) = csv_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(CliError::Io)?;
        }
    }
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| CliError::from(dpmest::Error::from(e)))?;
    writer
        .write_record(["experiment", "rep", "n", "coordinate", "metric", "value"])
        .map_err(|e| CliError::from(dpmest::Error::from(e)))?;
    for row in &all_rows {
        writer
            .write_record(&[
                name.to_string(),
                row.rep.to_string(),
                row.n.to_string(),
                row.coordinate.to_string(),
                row.metric.clone(),
                row.value.to_string(),
            ])
            .map_err(|e| CliError::from(dpmest::Error::from(e)))?;
    }
    writer.flush().map_err(CliError::Io)?;

    // Per-(n, metric, coordinate) cells over completed reps.
    let mut cells: BTreeMap<(usize, String, i64), Vec<f64>> = BTreeMap::new();
    for row in &all_rows {
        if row.metric != "diverged" {
            cells
                .entry((row.n, row.metric.clone(), row.coordinate))
                .or_default()
                .push(row.value);
        }
    }
    let mut cell_json = Vec::new();
    let boot_seeds = SeedTree::from_seed(cfg.seed).branch("bootstrap");
    for ((n, metric, coordinate), mut values) in cells {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let mut cell = json!({
            "n": n,
            "metric": metric,
            "coordinate": coordinate,
            "count": count,
            "mean": mean,
            "median": median_of(&values),
        });
        if cfg.experiment == ExperimentKind::ClippingBias && metric.starts_with("bias_") {
            let label = format!("{n}/{metric}/{coordinate}");
            let (lo, hi) = bootstrap_band(&values, &boot_seeds, &label);
            cell["band_low"] = json!(lo);
            cell["band_high"] = json!(hi);
        }
        if cfg.experiment == ExperimentKind::Coverage && metric.starts_with("covered_") {
            // Rate with the full replication count in the denominator;
            // diverged reps count as non-covered.
            cell["rate"] = json!(values.iter().sum::<f64>() / cfg.reps as f64);
        }
        cell_json.push(cell);
    }

    let failed_json: Vec<serde_json::Value> = failed_by_n
        .iter()
        .map(|(n, failed)| json!({"n": n, "failed": failed, "succeeded": cfg.reps - failed}))
        .collect();
    let summary = json!({
        "experiment": name,
        "reps": cfg.reps,
        "seed": cfg.seed,
        "n_grid": cfg.n_grid,
        "noise": cfg.noise,
        "mu": cfg.optimizer.mu,
        "alpha": cfg.alpha,
        "replications": failed_json,
        "cells": cell_json,
        "runtime_seconds": started.elapsed().as_secs_f64(),
    });
    let json_path = cfg.out.with_extension("json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary).expect("serializable"))
        .map_err(CliError::Io)?;

    Ok(RunArtifacts {
        csv_path,
        json_path,
        summary,
    })
}
