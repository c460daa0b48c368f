//! Command-line front end. Exit status: 0 on success, 1 on usage or
//! validation errors, 2 when `--strict` is set and a certificate or bound
//! check fails.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::{spectral_cutoff, ModelSet};
use crate::instances::{generate, CoefficientLaw, GeneratorSpec, SpectrumLaw};
use crate::io::{
    experiment_artifacts, load_experiment, to_json, write_outputs, Artifact, InstanceFile,
};
use crate::montecarlo::{
    certify_lemma3, certify_lemma4, estimate_risks, parse_estimators, run_bound_checks,
    run_experiment, tail_report, with_threads, Estimator, ExperimentConfig, ExperimentReport,
    InstanceSummary, NoiseSpec, RiskEstimate, TailCertificate, TailReport, XiMode, XiSource,
    TAIL_GRID,
};
use crate::noisy_operator::{
    conditional_noise_power, conditional_oracle, conditional_oracle_form1,
    conditional_oracle_form2, kappa, lemma3_bounds, m_set, noisy_threshold_levels,
    oracle_form_degeneracies, theorem2_bound, ContextRecord, TailCertificate2,
};
use crate::oracles::{
    brute_force_oracle_model, exact_filter_risk, exact_model_risk, factor_two_check, oracle_filter,
    oracle_filter_risk_closed_form, oracle_model, oracle_model_risk_closed_form, BoundReport,
    RiskDecomposition, MAX_ENUMERATION_N,
};
use crate::sequence_model::ProblemInstance;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SPECFILTER_THREADS";

/// Standard errors of slack granted to Monte Carlo bound checks.
pub const BOUND_SLACK_Z: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(
    name = "specfilter",
    version,
    about = "Threshold regularization for discrete inverse problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo risk of every configured estimator, plus bound checks.
    Estimate(RunArgs),
    /// Exact oracle sets, oracle risks and the factor-two comparison.
    OracleReport(RunArgs),
    /// Oracle inequalities and per-coordinate bounds.
    CheckBounds(RunArgs),
    /// Conditional analysis for a fixed realization of the eigenvalue noise.
    NoisyOp(RunArgs),
    /// Empirical check of the claimed noise tail constants.
    CertifyTails(TailArgs),
    /// Writes a fully explicit synthetic instance.
    GenInstance(GenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of noise replications.
    #[arg(long)]
    pub replications: Option<u64>,
    /// Overrides the threshold tail constant.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Overrides the eigenvalue gate multiplier.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output directory; the report goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 2 when a bound or certificate check fails.
    #[arg(long)]
    pub strict: bool,
    /// Also write plot-ready CSV tables.
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TailArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Draws per certificate.
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Number of coordinates.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "polynomial")]
    pub spectrum: String,
    /// Spectrum decay exponent.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// polynomial, permutation or sparse-spikes.
    #[arg(long, default_value = "polynomial")]
    pub coefficients: String,
    /// Coefficient decay exponent.
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Comma-separated 0-based spike positions.
    #[arg(long, value_delimiter = ',')]
    pub spikes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    pub spike_count: usize,
    /// Polynomial background under the spikes.
    #[arg(long, default_value_t = 0.0)]
    pub background: f64,
    /// Observation noise level.
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome {
            strict_failure: true,
        }) => 2,
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    strict_failure: bool,
}

/// Worker threads: `SPECFILTER_THREADS` capped at the available parallelism.
pub fn thread_cap() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let requested: usize = raw.trim().parse().ok().filter(|n| *n >= 1).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got `{raw}`"
        ))
    })?;
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    Ok(Some(requested.min(available.max(1))))
}

fn dispatch(command: Command) -> Result<Outcome> {
    let threads = thread_cap()?;
    match command {
        Command::GenInstance(args) => gen_instance(&args),
        Command::Estimate(args) => with_config(&args, threads, estimate),
        Command::OracleReport(args) => with_config(&args, threads, oracle_report),
        Command::CheckBounds(args) => with_config(&args, threads, check_bounds),
        Command::NoisyOp(args) => with_config(&args, threads, noisy_op),
        Command::CertifyTails(args) => {
            let samples = args.samples;
            with_config(&args.run, threads, move |c, i, a| {
                certify_tails(c, i, a, samples)
            })
        }
    }
}

fn apply_overrides(config: &mut ExperimentConfig, args: &RunArgs) -> Result<()> {
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(r) = args.replications {
        config.replications = r;
    }
    if let Some(b) = args.beta {
        config.beta = b;
    }
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    config.validate()
}

fn with_config<F>(args: &RunArgs, threads: Option<usize>, f: F) -> Result<Outcome>
where
    F: FnOnce(&ExperimentConfig, &ProblemInstance, &RunArgs) -> Result<Outcome> + Send,
{
    let (mut config, instance) = load_experiment(&args.config)?;
    apply_overrides(&mut config, args)?;
    with_threads(threads, || f(&config, &instance, args))?
}

/// Writes artifacts under `--out`, or prints the first one to stdout.
fn emit(args_out: Option<&Path>, artifacts: Vec<Artifact>) -> Result<()> {
    match args_out {
        Some(dir) => {
            let manifest = write_outputs(dir, &artifacts)?;
            println!(
                "wrote {} artifacts to {}",
                manifest.artifacts.len() + 1,
                dir.display()
            );
        }
        None => {
            let main = artifacts
                .iter()
                .find(|a| a.name.ends_with(".json"))
                .unwrap_or(&artifacts[0]);
            print!("{}", String::from_utf8_lossy(&main.bytes));
        }
    }
    Ok(())
}

fn report_outcome(report: &ExperimentReport, strict: bool) -> Outcome {
    let failing = report.failing_bounds(BOUND_SLACK_Z);
    for b in &failing {
        eprintln!(
            "bound not satisfied: {} (lhs {:.6e}, rhs {:.6e})",
            b.name, b.lhs, b.rhs
        );
    }
    Outcome {
        strict_failure: strict && !failing.is_empty(),
    }
}

fn estimate(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
    args: &RunArgs,
) -> Result<Outcome> {
    let report = run_experiment(config, instance)?;
    if args.out.is_some() {
        for e in &report.estimates {
            println!("{:<28} {:.6e} +/- {:.2e}", e.id, e.mean, e.stderr);
        }
    }
    emit(
        args.out.as_deref(),
        experiment_artifacts(&report, args.emit_plot_data)?,
    )?;
    Ok(report_outcome(&report, args.strict))
}

fn check_bounds(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
    args: &RunArgs,
) -> Result<Outcome> {
    let report = run_bound_checks(config, instance)?;
    if args.out.is_some() {
        for b in &report.bounds {
            let mark = if b.consistent_within(BOUND_SLACK_Z) {
                "ok  "
            } else {
                "FAIL"
            };
            println!("{mark} {:<24} lhs {:.6e} rhs {:.6e}", b.name, b.lhs, b.rhs);
        }
    }
    emit(
        args.out.as_deref(),
        experiment_artifacts(&report, args.emit_plot_data)?,
    )?;
    Ok(report_outcome(&report, args.strict))
}

#[derive(Debug, Serialize)]
struct CutoffRisk {
    k: usize,
    risk: f64,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    schema: &'static str,
    instance: InstanceSummary,
    oracle_model: ModelSet,
    oracle_model_risk: RiskDecomposition,
    oracle_model_risk_closed_form: f64,
    oracle_model_is_cutoff: bool,
    brute_force_oracle_model: Option<ModelSet>,
    oracle_filter: Vec<f64>,
    oracle_filter_risk: f64,
    oracle_filter_risk_closed_form: f64,
    factor_two: BoundReport,
    cutoff_risks: Vec<CutoffRisk>,
    best_cutoff: CutoffRisk,
}

fn oracle_report(
    _: &ExperimentConfig,
    instance: &ProblemInstance,
    args: &RunArgs,
) -> Result<Outcome> {
    let m = oracle_model(instance);
    let lambda = oracle_filter(instance);
    let cutoff_risks: Vec<CutoffRisk> = (0..=instance.n())
        .map(|k| {
            Ok(CutoffRisk {
                k,
                risk: exact_filter_risk(&spectral_cutoff(k, instance.n())?, instance)?,
            })
        })
        .collect::<Result<_>>()?;
    let best = cutoff_risks
        .iter()
        .min_by(|a, b| a.risk.total_cmp(&b.risk))
        .map(|c| CutoffRisk {
            k: c.k,
            risk: c.risk,
        })
        .expect("at least cut-off 0");
    let report = OracleReport {
        schema: "specfilter/oracle-report/1",
        instance: InstanceSummary::of(instance),
        oracle_model_risk: exact_model_risk(&m, instance)?,
        oracle_model_risk_closed_form: oracle_model_risk_closed_form(instance),
        oracle_model_is_cutoff: m.is_prefix(),
        brute_force_oracle_model: if instance.n() <= MAX_ENUMERATION_N {
            Some(brute_force_oracle_model(instance)?)
        } else {
            None
        },
        oracle_model: m,
        oracle_filter_risk: exact_filter_risk(&lambda, instance)?,
        oracle_filter: lambda.weights().to_vec(),
        oracle_filter_risk_closed_form: oracle_filter_risk_closed_form(instance),
        factor_two: factor_two_check(instance),
        cutoff_risks,
        best_cutoff: best,
    };
    let mut artifacts = vec![Artifact::new("oracle_report.json", to_json(&report)?)];
    if args.emit_plot_data {
        let mut csv = String::from("k,exact\n");
        for c in &report.cutoff_risks {
            csv.push_str(&format!("{},{}\n", c.k, crate::io::format_float(c.risk)));
        }
        artifacts.push(Artifact::new("plot_cutoff_curve.csv", csv));
    }
    emit(args.out.as_deref(), artifacts)?;
    Ok(Outcome {
        strict_failure: args.strict && !report.factor_two.satisfied,
    })
}

#[derive(Debug, Serialize)]
struct NoisyOpReport {
    schema: &'static str,
    seed: u64,
    replications: u64,
    beta: f64,
    alpha: f64,
    k: f64,
    context: ContextRecord,
    plug_in_variances: Vec<f64>,
    conditional_noise_power: Vec<f64>,
    threshold_levels: Vec<f64>,
    conditional_oracle: ModelSet,
    conditional_oracle_form1: ModelSet,
    conditional_oracle_form2: ModelSet,
    form_degeneracies: Vec<usize>,
    m_set: ModelSet,
    kappa: f64,
    lemma3_bounds: Vec<(f64, f64)>,
    estimates: Vec<RiskEstimate>,
    bounds: Vec<BoundReport>,
}

fn noisy_op(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
    args: &RunArgs,
) -> Result<Outcome> {
    let xi = config
        .noise
        .xi
        .as_ref()
        .ok_or_else(|| Error::Config("noisy-op needs `noise.xi`".into()))?;
    if xi.mode != XiMode::Fixed {
        return Err(Error::Config(
            "noisy-op needs `noise.xi.mode` = \"fixed\"".into(),
        ));
    }
    let ctx = config.conditional_context(instance)?.expect("fixed mode");
    let k = config.resolved_k().ok_or_else(|| {
        Error::Config("noisy-op needs `noise.epsilon.k` for non-Gaussian noise".into())
    })?;
    let k_prime = xi.resolved_k_prime().ok_or_else(|| {
        Error::Config("noisy-op needs `noise.xi.k_prime` for non-Gaussian noise".into())
    })?;
    let mc = config.mc_settings();

    let mut estimators = parse_estimators(&config.estimators, instance.n())?;
    for e in [
        Estimator::NoisyThreshold {
            beta: config.beta,
            alpha: config.alpha,
        },
        Estimator::ConditionalOracle,
    ] {
        if !estimators.contains(&e) {
            estimators.push(e);
        }
    }
    let estimates = estimate_risks(instance, &estimators, XiSource::Fixed(&ctx), &mc)?;
    let noisy = &estimates[estimators
        .iter()
        .position(|e| matches!(e, Estimator::NoisyThreshold { beta, alpha } if *beta == config.beta && *alpha == config.alpha))
        .expect("added above")];

    let cert = TailCertificate2::new(k_prime, xi.beta_prime, xi.c.unwrap_or(1.0))?;
    let mut bounds =
        vec![theorem2_bound(&ctx, config.beta, k, &cert, noisy.mean)?.with_stderr(noisy.stderr)];
    bounds.extend(certify_lemma3(&ctx, config.beta, k, &mc)?);
    if instance.n() >= 2 {
        bounds.push(certify_lemma4(
            &xi.spec()?,
            k_prime,
            xi.beta_prime,
            instance.n(),
            config.certification.lemma4_draws,
            config.seed,
        )?);
    }
    let degenerate = oracle_form_degeneracies(&ctx);
    let report = NoisyOpReport {
        schema: "specfilter/noisy-op/1",
        seed: config.seed,
        replications: config.replications,
        beta: config.beta,
        alpha: config.alpha,
        k,
        context: ctx.to_record(),
        plug_in_variances: ctx.plug_in_variances(),
        conditional_noise_power: conditional_noise_power(&ctx),
        threshold_levels: noisy_threshold_levels(ctx.spectrum(), instance.sigma(), config.beta)?,
        conditional_oracle: conditional_oracle(&ctx),
        conditional_oracle_form1: conditional_oracle_form1(&ctx),
        conditional_oracle_form2: conditional_oracle_form2(&ctx),
        form_degeneracies: (0..instance.n()).filter(|i| degenerate[*i]).collect(),
        m_set: m_set(instance.system(), config.alpha, xi.scale),
        kappa: kappa(&ctx, config.beta, k, xi.beta_prime),
        lemma3_bounds: lemma3_bounds(&ctx, config.beta, k)?,
        estimates,
        bounds,
    };
    let failing: Vec<&BoundReport> = report
        .bounds
        .iter()
        .filter(|b| !b.consistent_within(BOUND_SLACK_Z))
        .collect();
    for b in &failing {
        eprintln!("bound not satisfied: {}", b.name);
    }
    let mut artifacts = vec![
        Artifact::new("risks.csv", crate::io::risks_csv(&report.estimates)),
        Artifact::new("noisy_op.json", to_json(&report)?),
    ];
    if args.emit_plot_data {
        artifacts.push(Artifact::new(
            "plot_estimator_risks.csv",
            crate::io::estimator_risks_csv(&report.estimates),
        ));
    }
    emit(args.out.as_deref(), artifacts)?;
    Ok(Outcome {
        strict_failure: args.strict && !failing.is_empty(),
    })
}

#[derive(Debug, Serialize)]
struct TailCertification {
    schema: &'static str,
    epsilon: TailReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    xi: Option<TailReport>,
    passed: bool,
}

fn certify_tails(
    config: &ExperimentConfig,
    instance: &ProblemInstance,
    args: &RunArgs,
    samples: u64,
) -> Result<Outcome> {
    let k = config.resolved_k().ok_or_else(|| {
        Error::Config(format!(
            "no tail constant K: set `noise.epsilon.k` ({} noise with beta = {})",
            config.noise.epsilon.family, config.beta
        ))
    })?;
    let eps = NoiseSpec::new(config.noise.epsilon.family, instance.sigma())?.with_certificate(
        TailCertificate {
            k,
            beta: config.beta,
            c: None,
        },
    );
    let epsilon = tail_report(&eps, samples, config.seed, None, &TAIL_GRID)?;
    let xi = match &config.noise.xi {
        None => None,
        Some(xi) => {
            let k_prime = xi.resolved_k_prime().ok_or_else(|| {
                Error::Config("no tail constant K': set `noise.xi.k_prime`".into())
            })?;
            let spec = xi.spec()?.with_certificate(TailCertificate {
                k: k_prime,
                beta: xi.beta_prime,
                c: xi.c,
            });
            Some(tail_report(
                &spec,
                samples,
                config.seed.wrapping_add(1),
                Some(config.alpha),
                &TAIL_GRID,
            )?)
        }
    };
    let passed = epsilon.passed && xi.as_ref().is_none_or(|r| r.passed);
    for r in std::iter::once(&epsilon).chain(xi.as_ref()) {
        if let Some(v) = r.first_violation() {
            eprintln!("{v}");
        }
    }
    let report = TailCertification {
        schema: "specfilter/tails/1",
        epsilon,
        xi,
        passed,
    };
    emit(
        args.out.as_deref(),
        vec![Artifact::new("tails.json", to_json(&report)?)],
    )?;
    Ok(Outcome {
        strict_failure: args.strict && !passed,
    })
}

fn gen_instance(args: &GenArgs) -> Result<Outcome> {
    let spectrum = match args.spectrum.parse::<SpectrumLaw>()? {
        SpectrumLaw::Polynomial { .. } => SpectrumLaw::Polynomial { p: args.p },
    };
    let coefficients = match args.coefficients.as_str() {
        "polynomial" => CoefficientLaw::Polynomial {
            q: args.q,
            amplitude: args.amplitude,
        },
        "permutation" => CoefficientLaw::Permutation {
            q: args.q,
            amplitude: args.amplitude,
        },
        "sparse-spikes" => CoefficientLaw::SparseSpikes {
            amplitude: args.amplitude,
            positions: args.spikes.clone(),
            count: args.spike_count,
            background: args.background,
            q: args.q,
        },
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    let spec = GeneratorSpec {
        n: args.n,
        sigma: args.sigma,
        spectrum,
        coefficients,
        seed: args.seed,
    };
    let instance = generate(&spec)?;
    let file = InstanceFile::of(&instance, Some(spec));
    let manifest = write_outputs(
        &args.out,
        &[Artifact::new("instance.json", to_json(&file)?)],
    )?;
    println!(
        "wrote {} (n = {}, oracle size {}) to {}",
        manifest.artifacts[0].path,
        instance.n(),
        oracle_model(&instance).len(),
        args.out.display()
    );
    Ok(Outcome::default())
}
