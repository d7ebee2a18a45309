use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use paircal::config::{AnalysisConfig, Calibration, CovarianceMode, Estimator, InputMode};
use paircal::glm::{LinkFunction, SandwichFlavor};
use paircal::io;
use paircal::model::SummaryKind;
use paircal::report::{emit_report, run_analysis, AnalysisInput, EstimateLevel, ReportFormat, RowMethod};
use paircal::result1::{plim_mle, simulate_mle, Result1Config, SignPairing};
use paircal::{Error, Result};

/// Covariate-calibrated effect estimation for matched-pair cluster randomized designs.
#[derive(Parser)]
#[command(name = "paircal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair summaries, effect estimates and diagnostics.
    Analyze(AnalyzeArgs),
    /// Covariate imbalance and the dependence check only.
    Diagnose(DiagnoseArgs),
    /// Randomization test of the average effect.
    Permute(PermuteArgs),
    /// Probability limit and simulation of the weighted MLE under dependence.
    SimulateResult1(SimulateArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Patient-level CSV: pair_id, role, outcome, [weight], covariates...
    #[arg(long, conflicts_with = "summaries", required_unless_present = "summaries")]
    patients: Option<PathBuf>,
    /// Served-population sizes: pair_id, role, n_served.
    #[arg(long, requires = "patients")]
    clusters: Option<PathBuf>,
    /// JSON file fixing covariate types and levels.
    #[arg(long, requires = "patients")]
    schema: Option<PathBuf>,
    /// Per-pair summaries: pair_id, delta, sqrt_v or variance, kind.
    #[arg(long)]
    summaries: Option<PathBuf>,
    /// Analysis configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OutputArgs {
    /// json, text or csv-bundle.
    #[arg(long, default_value = "text")]
    format: String,
    /// Output file (directory for csv-bundle); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkArg {
    Identity,
    Logit,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovarianceArg {
    Diagonal,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum SandwichArg {
    #[value(name = "HC0", alias = "hc0")]
    Hc0,
    #[value(name = "HC1", alias = "hc1")]
    Hc1,
}

#[derive(Args)]
struct ModelOverrides {
    #[arg(long, value_enum)]
    calibration: Option<OnOff>,
    #[arg(long, value_enum)]
    link: Option<LinkArg>,
    #[arg(long, value_enum)]
    covariance: Option<CovarianceArg>,
    #[arg(long, value_enum)]
    sandwich: Option<SandwichArg>,
    /// Map outcomes from [LO, HI] onto [0, 1] for the logit link.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    outcome_range: Option<Vec<f64>>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    model: ModelOverrides,
    /// Comma-separated: first_level, two_level, profile, bayes, permutation_exact, permutation_mc.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Seed for Monte Carlo permutation; mandatory when permutation_mc is selected.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mc_draws: Option<u64>,
    /// Refit the outcome model for every label swap.
    #[arg(long)]
    permutation_refit: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatisticArg {
    Mean,
    TwoLevel,
}

#[derive(Args)]
struct PermuteArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelOverrides,
    #[arg(long, value_enum, default_value = "mean")]
    statistic: StatisticArg,
    /// Restrict to crude or calibrated differences.
    #[arg(long)]
    kind: Option<String>,
    /// Sample sign flips instead of enumerating them.
    #[arg(long, requires = "seed")]
    monte_carlo: bool,
    #[arg(long)]
    draws: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    permutation_refit: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Result1Config as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Patients per arm.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    pairs: Option<u64>,
    #[arg(long)]
    var_delta: Option<f64>,
    /// Give type 1 pairs the positive difference.
    #[arg(long)]
    reverse_signs: bool,
    #[arg(long, required = true)]
    seed: u64,
}

fn read_config(path: Option<&Path>) -> Result<Option<AnalysisConfig>> {
    path.map(|p| {
        let bytes = std::fs::read(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        AnalysisConfig::from_json(&bytes)
    })
    .transpose()
}

/// Loads the input and a config whose mode matches it. Summary input turns
/// calibration off unless a flag asks for it.
fn load(input: &InputArgs, model: &ModelOverrides) -> Result<(AnalysisInput, AnalysisConfig)> {
    let mut cfg = read_config(input.config.as_deref())?.unwrap_or_default();
    let data = match (&input.patients, &input.summaries) {
        (Some(p), _) => {
            cfg.mode = InputMode::PatientLevel;
            AnalysisInput::Patients(io::load_patient_csv(p, input.clusters.as_deref(), input.schema.as_deref())?)
        }
        (None, Some(s)) => {
            cfg.mode = InputMode::SummaryLevel;
            cfg.calibration = Calibration::Off;
            AnalysisInput::Summaries(io::load_summary_csv(s)?)
        }
        (None, None) => return Err(Error::Config("give --patients or --summaries".into())),
    };
    if let Some(c) = model.calibration {
        cfg.calibration = match c {
            OnOff::On => Calibration::On,
            OnOff::Off => Calibration::Off,
        };
    }
    if let Some(l) = model.link {
        cfg.link = match l {
            LinkArg::Identity => LinkFunction::Identity,
            LinkArg::Logit => LinkFunction::Logit,
        };
    }
    if let Some(c) = model.covariance {
        cfg.covariance_mode = match c {
            CovarianceArg::Diagonal => CovarianceMode::Diagonal,
            CovarianceArg::Full => CovarianceMode::Full,
        };
    }
    if let Some(s) = model.sandwich {
        cfg.sandwich = match s {
            SandwichArg::Hc0 => SandwichFlavor::HC0,
            SandwichArg::Hc1 => SandwichFlavor::HC1,
        };
    }
    if let Some(r) = &model.outcome_range {
        cfg.outcome_range = Some([r[0], r[1]]);
    }
    Ok((data, cfg))
}

fn write_output(output: &OutputArgs, report: &paircal::report::AnalysisReport) -> Result<()> {
    let format: ReportFormat = output.format.parse()?;
    let files = emit_report(report, format)?;
    match (&output.out, format) {
        (Some(dir), ReportFormat::CsvBundle) => {
            std::fs::create_dir_all(dir)?;
            for f in files {
                std::fs::write(dir.join(&f.name), &f.bytes)?;
            }
        }
        (None, ReportFormat::CsvBundle) => return Err(Error::Config("csv-bundle needs --out <directory>".into())),
        (Some(path), _) => std::fs::write(path, &files[0].bytes)?,
        (None, _) => {
            use std::io::Write;
            std::io::stdout().write_all(&files[0].bytes)?;
        }
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let (input, mut cfg) = load(&args.input, &args.model)?;
    if let Some(list) = &args.estimators {
        cfg.estimators = list
            .iter()
            .filter(|s| !s.trim().is_empty())
            .map(|s| Estimator::parse(s).ok_or_else(|| Error::Config(format!("unknown estimator {s:?}"))))
            .collect::<Result<_>>()?;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if let Some(m) = args.mc_draws {
        cfg.mc_draws = m;
    }
    cfg.permutation_refit |= args.permutation_refit;
    let report = run_analysis(&input, &cfg)?;
    write_output(&args.output, &report)
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let (input, mut cfg) = load(&args.input, &args.model)?;
    cfg.estimators.clear();
    cfg.permutation_refit = false;
    let report = run_analysis(&input, &cfg)?;
    write_output(&args.output, &report)
}

fn permute(args: PermuteArgs) -> Result<()> {
    let (input, mut cfg) = load(&args.input, &args.model)?;
    let kind = args
        .kind
        .as_deref()
        .map(|k| SummaryKind::parse(k).ok_or_else(|| Error::Config(format!("unknown kind {k:?}"))))
        .transpose()?;
    let perm = if args.monte_carlo { Estimator::PermutationMc } else { Estimator::PermutationExact };
    let level = match args.statistic {
        StatisticArg::Mean => {
            cfg.estimators = vec![perm];
            EstimateLevel::FirstLevel
        }
        StatisticArg::TwoLevel => {
            cfg.estimators = vec![Estimator::TwoLevel, perm];
            EstimateLevel::TwoLevel
        }
    };
    cfg.seed = args.seed.or(cfg.seed);
    if let Some(d) = args.draws {
        cfg.mc_draws = d;
    }
    cfg.permutation_refit = args.permutation_refit && level == EstimateLevel::FirstLevel;
    let report = run_analysis(&input, &cfg)?;
    let rows: Vec<_> = report
        .effect_table
        .iter()
        .filter(|r| r.method == RowMethod::Permutation && r.level == level && kind.is_none_or(|k| r.kind == k))
        .collect();
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::Numerical(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_slice::<Result1Config>(&bytes).map_err(|e| Error::Config(e.to_string()))?
        }
        None => Result1Config::default(),
    };
    cfg.seed = args.seed;
    if let Some(v) = args.sigma2 {
        cfg.sigma2 = v;
    }
    if let Some(v) = args.n {
        cfg.n_per_arm = v;
    }
    if let Some(v) = args.pairs {
        cfg.num_pairs = v;
    }
    if let Some(v) = args.var_delta {
        cfg.var_delta = v;
    }
    if args.reverse_signs {
        cfg.sign_pairing = SignPairing::Type1Positive;
    }
    let sim = simulate_mle(&cfg)?;
    let out = serde_json::json!({ "config": cfg, "plim": plim_mle(&cfg), "simulation": sim });
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Error::Numerical(e.to_string()))?);
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PAIRCAL_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("PAIRCAL_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let run = configure_threads().and_then(|()| match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Permute(a) => permute(a),
        Command::SimulateResult1(a) => simulate(a),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
