//! `dpmest`: differentially private robust M-estimation from the command
//! line. Subcommands: fit, ci, simulate, experiment.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpmest::data::{load_csv, simulate_linear, simulate_logistic, Dataset, LinearDesign, LogisticDesign};
use dpmest::inference::{
    ci_basic, ci_corrected_gd, ci_corrected_newton, corrected_variance_newton, private_sandwich,
    wald_table, write_wald_csv, ConfInterval, SandwichConfig,
};
use dpmest::losses::LossModel;
use dpmest::nalgebra::DMatrix;
use dpmest::optim::{noisy_gd, noisy_newton, FitResult, GdConfig, NewtonConfig, Phase, SwitchRule};
use dpmest::privacy::compose_gdp;
use dpmest::SeedTree;
use dpmest_cli::config::{iteration_schedule, ExperimentConfig, ModelSpec};
use dpmest_cli::experiments::run_experiment;
use dpmest_cli::CliError;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "dpmest",
    version,
    about = "Differentially private robust M-estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a private M-estimator to a CSV dataset
    Fit(FitArgs),
    /// Fit, then report private sandwich confidence intervals and a Wald table
    Ci(CiArgs),
    /// Write a synthetic dataset as CSV
    Simulate(SimulateArgs),
    /// Run a replication experiment described by a TOML config
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgoArg {
    Gd,
    Newton,
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with a header row
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column
    #[arg(long)]
    response: String,
    /// Prepend an intercept column of ones
    #[arg(long)]
    intercept: bool,
    /// Median/MAD-standardize the design columns first (raw MAD, no 1.4826)
    #[arg(long)]
    standardize: bool,
    /// Model family: linear_huber, logistic, schweppe_logcosh, clipped_logistic
    #[arg(long, default_value = "linear_huber")]
    model: String,
    /// Scalar loss tuning constant
    #[arg(long)]
    c: Option<f64>,
    /// Smoothing width for the smoothed Huber ramp
    #[arg(long)]
    h: Option<f64>,
    /// Leverage bound (Mallows b, or the Schweppe norm cap)
    #[arg(long)]
    b: Option<f64>,
    /// Gradient clip threshold for clipped_logistic
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, value_enum, default_value_t = AlgoArg::Gd)]
    algo: AlgoArg,
    /// Total GDP privacy budget of the fit
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Iteration budget; defaults to the sample-size schedule
    #[arg(long)]
    iters: Option<usize>,
    /// Stepsize (GD) or damped stepsize (Newton); family default when absent
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable privacy noise. Testing only: removes every guarantee
    #[arg(long)]
    no_noise: bool,
    /// Write the result here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Two-sided miscoverage level of the intervals
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Linear,
    Logistic,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: SimKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment description
    #[arg(long)]
    config: PathBuf,
    /// Override the config's replication count
    #[arg(long)]
    reps: Option<usize>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output stem
    #[arg(long)]
    out: Option<PathBuf>,
}

fn warn_no_noise() {
    eprintln!(
        "WARNING: privacy noise is DISABLED (--no-noise). Outputs carry no \
         privacy guarantee; use for testing only."
    );
}

struct Prepared {
    data: Dataset,
    spec: ModelSpec,
    model: Box<dyn LossModel>,
    fit: FitResult,
    eta: f64,
    iters: usize,
}

fn run_fit(args: &FitArgs) -> Result<Prepared, CliError> {
    if args.no_noise {
        warn_no_noise();
    }
    let mut data = load_csv(&args.data, &args.response)?;
    if args.intercept {
        data = data.with_intercept()?;
    }
    if args.standardize {
        data = data.standardize()?;
    }
    let spec = ModelSpec::from_cli(&args.model, args.c, args.h, args.b, args.clip)?;
    let model = spec.build(&data)?;
    let iters = args.iters.unwrap_or_else(|| iteration_schedule(data.n()));
    let seed = SeedTree::from_seed(args.seed);
    let theta0 = spec.theta0(&data);
    let fit = match args.algo {
        AlgoArg::Gd => {
            let eta = args.eta.unwrap_or_else(|| spec.default_eta(dpmest_cli::config::Algo::Gd));
            let mut cfg = GdConfig::new(eta, iters, args.mu, theta0);
            cfg.noise_enabled = !args.no_noise;
            noisy_gd(model.as_ref(), &data, &cfg, &seed.branch("fit"))?
        }
        AlgoArg::Newton => {
            let eta = args
                .eta
                .unwrap_or_else(|| spec.default_eta(dpmest_cli::config::Algo::Newton));
            let mut cfg = NewtonConfig::new(eta, iters, args.mu, theta0);
            cfg.noise_enabled = !args.no_noise;
            cfg.switch_rule = if model.self_concordance().is_some() {
                SwitchRule::SelfConcordant
            } else {
                SwitchRule::FixedEta
            };
            noisy_newton(model.as_ref(), &data, &cfg, &seed.branch("fit"))?
        }
    };
    let eta = match args.algo {
        AlgoArg::Gd => args.eta.unwrap_or_else(|| spec.default_eta(dpmest_cli::config::Algo::Gd)),
        AlgoArg::Newton => match fit.phase_trace.last() {
            Some(Phase::Pure) => 1.0,
            _ => args
                .eta
                .unwrap_or_else(|| spec.default_eta(dpmest_cli::config::Algo::Newton)),
        },
    };
    Ok(Prepared {
        data,
        spec,
        model,
        fit,
        eta,
        iters,
    })
}

fn emit(out: &Option<PathBuf>, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(CliError::Io),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let run = run_fit(&args)?;
    let names = run.spec.param_names(&run.data);
    let result = json!({
        "terms": names,
        "estimate": run.fit.theta.as_slice(),
        "final_grad_norm": run.fit.grad_norm_trace.last(),
        "iters": run.iters,
        "mu_spent": run.fit.mu_spent,
        "switch_iteration": run.fit.switch_iteration,
    });
    emit(&args.out, &result)
}

fn interval_json(ci: &ConfInterval) -> serde_json::Value {
    json!({"lower": ci.lower, "upper": ci.upper, "level": ci.level, "corrected": ci.corrected})
}

fn cmd_ci(args: CiArgs) -> Result<(), CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Config(format!(
            "alpha must lie in (0, 1), got {}",
            args.alpha
        )));
    }
    let out = args.fit.out.clone().ok_or_else(|| {
        CliError::Config("ci requires --out for the Wald table CSV".into())
    })?;
    let run = run_fit(&args.fit)?;
    let n = run.data.n();
    let mut sandwich_cfg = SandwichConfig::new(args.fit.mu);
    sandwich_cfg.noise_enabled = !args.fit.no_noise;
    let seed = SeedTree::from_seed(args.fit.seed);
    let sandwich = private_sandwich(
        run.model.as_ref(),
        &run.data,
        &run.fit.theta,
        &sandwich_cfg,
        &seed.branch("inference"),
    )?;

    // Noise-corrected variance: inflate per the optimizer that produced theta.
    let b = run.model.score_bound();
    let (v_hat, intervals): (DMatrix<f64>, Vec<(ConfInterval, ConfInterval)>) =
        match args.fit.algo {
            AlgoArg::Gd => {
                let step_sd =
                    2.0 * run.eta * b * (run.iters as f64).sqrt() / (n as f64 * args.fit.mu);
                let extra = 2.0 * step_sd * step_sd * n as f64;
                let v_hat = &sandwich.v + extra * DMatrix::identity(run.fit.theta.len(), run.fit.theta.len());
                let mut pairs = Vec::new();
                for j in 0..run.fit.theta.len() {
                    let basic = ci_basic(run.fit.theta[j], sandwich.v[(j, j)], n, args.alpha)?;
                    let corrected = ci_corrected_gd(
                        run.fit.theta[j],
                        sandwich.v[(j, j)],
                        n,
                        args.alpha,
                        run.eta,
                        b,
                        run.iters,
                        args.fit.mu,
                    )?;
                    pairs.push((basic, corrected));
                }
                (v_hat, pairs)
            }
            AlgoArg::Newton => {
                let h_tilde = run
                    .fit
                    .final_hessian
                    .as_ref()
                    .expect("newton fits record their final Hessian");
                let v_hat = corrected_variance_newton(
                    &sandwich,
                    h_tilde,
                    run.eta,
                    b,
                    run.iters,
                    args.fit.mu,
                    n,
                )?;
                let mut pairs = Vec::new();
                for j in 0..run.fit.theta.len() {
                    let basic = ci_basic(run.fit.theta[j], sandwich.v[(j, j)], n, args.alpha)?;
                    let corrected =
                        ci_corrected_newton(run.fit.theta[j], v_hat[(j, j)], n, args.alpha)?;
                    pairs.push((basic, corrected));
                }
                (v_hat, pairs)
            }
        };

    let names = run.spec.param_names(&run.data);
    let rows = wald_table(&names, &run.fit.theta, &v_hat, n)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(CliError::Io)?;
        }
    }
    let file = std::fs::File::create(&out).map_err(CliError::Io)?;
    write_wald_csv(&rows, file)?;

    let total_mu = compose_gdp(
        run.fit
            .budget
            .entries()
            .iter()
            .chain(sandwich.budget.entries())
            .map(|e| e.mu),
    )?;
    let result = json!({
        "terms": names,
        "estimate": run.fit.theta.as_slice(),
        "basic": intervals.iter().map(|(b, _)| interval_json(b)).collect::<Vec<_>>(),
        "corrected": intervals.iter().map(|(_, c)| interval_json(c)).collect::<Vec<_>>(),
        "mu_total": total_mu,
        "wald_csv": out,
    });
    println!("{}", serde_json::to_string_pretty(&result).expect("serializable"));
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let seeds = SeedTree::from_seed(args.seed);
    let data = match args.kind {
        SimKind::Linear => simulate_linear(args.n, &LinearDesign::default(), &seeds)?,
        SimKind::Logistic => simulate_logistic(args.n, &LogisticDesign::default(), &seeds)?,
    };
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(CliError::Io)?;
        }
    }
    data.write_csv_path(&args.out)?;
    eprintln!("wrote {} rows to {}", data.n(), args.out.display());
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out = out;
    }
    cfg.validate()?;
    if !cfg.noise {
        warn_no_noise();
    }
    let artifacts = run_experiment(&cfg)?;
    eprintln!(
        "wrote {} and {}",
        artifacts.csv_path.display(),
        artifacts.json_path.display()
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&artifacts.summary).expect("serializable")
    );
    Ok(())
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Ci(args) => cmd_ci(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
