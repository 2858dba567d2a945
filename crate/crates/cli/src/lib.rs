//! Command surface of the `fna` binary.
//!
//! Every command writes one JSON report `{config, results, warnings, timing}`
//! to stdout (or `--report`); tabular outputs go to `--output` as CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use fna_core::bounds::{
    fh_bounds, general_bounds, lower_bound_decomposed, mean_bounds, odds_ratio_ay, rho_feasible_range,
    rho_star_threshold, upper_bound_caps, BoundPair, MarginalPair, RhoInterval,
};
use fna_core::estimators::{
    dr_ate, estimate_beta, fh_bound_estimates, rho_upper_selection, sensitivity_curve, EstimateReport,
};
use fna_core::io::{load_csv, write_csv, write_curve, write_metrics, Report, Timing};
use fna_core::nuisance::{cross_fit, CrossFitOptions, Dataset, ModelSpec, NuisanceFit};
use fna_core::simulation::{generate, run_study, CaseId, DgpSpec, LatentIntegration, StudyConfig, TruthOptions};
use fna_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "config_error",
        }
    }

    /// Machine-readable error object printed on failure.
    pub fn to_json(&self) -> Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser, Serialize)]
#[command(name = "fna", version, about = "Bounds and estimators for the fraction negatively affected")]
pub struct Cli {
    #[command(subcommand)]
    #[serde(flatten)]
    pub command: Command,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub report: Option<PathBuf>,
    /// Record wall-clock time in the report (makes output run-dependent).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub timing: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Closed-form bounds at given marginals, or averaged over fitted marginals.
    Bounds(BoundsArgs),
    /// Per-unit feasible correlation ranges and a quantile-based rho_u.
    RhoRange(RhoRangeArgs),
    /// Point estimate of the FNA bound at one rho.
    Estimate(EstimateArgs),
    /// Estimates over a rho grid, as CSV.
    Curve(CurveArgs),
    /// Doubly robust average treatment effect.
    Ate(DataArgs),
    /// Replication study over the built-in cases.
    Simulate(SimulateArgs),
    /// Draw a dataset from a built-in case.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV with columns `y`, `a` and covariates.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated covariate columns (default: all but `y` and `a`).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long, env = "FNA_FOLDS", default_value_t = 2)]
    pub folds: usize,
    /// `plain`, `l1-cv`, `l1-cv:K` or `l1:LAMBDA`.
    #[arg(long, default_value = "plain", value_parser = parse_model)]
    pub model: ModelSpec,
    #[arg(long, env = "FNA_LEVEL", default_value_t = 0.95)]
    pub level: f64,
    /// Seed for fold assignment; drawn from entropy and reported when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundsArgs {
    /// P(Y=1 | do(A=0)) at a single covariate value.
    #[arg(long, requires = "mu1", conflicts_with = "input")]
    pub mu0: Option<f64>,
    /// P(Y=1 | do(A=1)) at a single covariate value.
    #[arg(long, requires = "mu0", conflicts_with = "input")]
    pub mu1: Option<f64>,
    /// Lower end of the assumed correlation interval.
    #[arg(long, allow_hyphen_values = true)]
    pub rho_l: Option<f64>,
    /// Upper end of the assumed correlation interval.
    #[arg(long, allow_hyphen_values = true)]
    pub rho_u: Option<f64>,
    /// Data CSV; bounds are then averaged over cross-fitted marginals.
    #[arg(long, required_unless_present = "mu0")]
    pub input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long, env = "FNA_FOLDS", default_value_t = 2)]
    pub folds: usize,
    #[arg(long, default_value = "plain", value_parser = parse_model)]
    pub model: ModelSpec,
    #[arg(long, env = "FNA_LEVEL", default_value_t = 0.95)]
    pub level: f64,
    /// Seed for fold assignment; drawn from entropy and reported when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RhoRangeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Quantile of the per-unit upper ends used as rho_u.
    #[arg(long, default_value_t = 0.95)]
    pub quantile: f64,
    /// Per-unit table `unit,rho_lower,rho_upper` as CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Correlation between the potential outcomes.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CurveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// `start:stop:step` or a comma-separated ascending list.
    #[arg(long, default_value = "0:0.3:0.05", value_parser = parse_grid, allow_hyphen_values = true)]
    pub rho_grid: Grid,
    /// Curve table as CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Case to run (C1-C6); repeatable.
    #[arg(long = "case", required = true, value_parser = parse_case)]
    pub cases: Vec<CaseId>,
    /// Correlation to evaluate; repeatable.
    #[arg(long = "rho", required = true, allow_hyphen_values = true)]
    pub rhos: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Replications per case.
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    /// Master seed; drawn from entropy and reported when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "FNA_FOLDS", default_value_t = 2)]
    pub folds: usize,
    /// Nuisance learner; defaults to the case's own (plain for C1-C3, l1-cv for C4-C6).
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelSpec>,
    #[arg(long, env = "FNA_LEVEL", default_value_t = 0.95)]
    pub level: f64,
    /// Outer draws for the true beta.
    #[arg(long, default_value_t = 100_000)]
    pub truth_outer: usize,
    /// Latent draws per outer draw for the true beta.
    #[arg(long, default_value_t = 1000)]
    pub truth_inner: usize,
    /// Metrics table as CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    /// One of C1-C6.
    #[arg(long = "case", value_parser = parse_case)]
    pub case: CaseId,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Drawn from entropy and reported when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: PathBuf,
}

/// Ascending correlation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Grid(pub Vec<f64>);

pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let values: Vec<f64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(format!("expected start:stop:step, got `{s}`"));
        };
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step.is_nan() || step <= 0.0 || b < a {
            return Err(format!("grid `{s}` must have step > 0 and stop >= start"));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize;
        (0..=count)
            .map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12)
            .collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(format!("grid `{s}` must be nonempty and strictly ascending"));
    }
    if values.iter().any(|v| v.abs() > 1.0 + 1e-12) {
        return Err(format!("grid `{s}` leaves [-1, 1]"));
    }
    Ok(Grid(values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect()))
}

pub fn parse_model(s: &str) -> Result<ModelSpec, String> {
    let s = s.trim().to_ascii_lowercase();
    if s == "plain" {
        return Ok(ModelSpec::Plain);
    }
    if s == "l1-cv" {
        return Ok(ModelSpec::L1Cv { folds: 5 });
    }
    if let Some(k) = s.strip_prefix("l1-cv:") {
        let folds = k.parse().map_err(|_| format!("`{k}` is not a fold count"))?;
        if folds < 2 {
            return Err("L1 cross-validation needs at least 2 folds".into());
        }
        return Ok(ModelSpec::L1Cv { folds });
    }
    if let Some(l) = s.strip_prefix("l1:") {
        let lambda: f64 = l.parse().map_err(|_| format!("`{l}` is not a penalty"))?;
        if lambda.is_nan() || lambda < 0.0 {
            return Err("penalty must be nonnegative".into());
        }
        return Ok(ModelSpec::L1Fixed { lambda });
    }
    Err(format!("unknown model `{s}` (plain, l1-cv, l1-cv:K, l1:LAMBDA)"))
}

fn parse_case(s: &str) -> Result<CaseId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn check_level(level: f64) -> CliResult<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("level {level} must lie in (0, 1)")))
    }
}

fn check_folds(folds: usize) -> CliResult<()> {
    if folds >= 2 {
        Ok(())
    } else {
        Err(CliError::Config(format!("folds = {folds}, need at least 2")))
    }
}

fn check_path(path: &Path) -> CliResult<()> {
    if path.as_os_str().is_empty() {
        Err(CliError::Config("empty path".into()))
    } else {
        Ok(())
    }
}

fn resolve_seed(seed: &mut Option<u64>, warnings: &mut Vec<String>) -> u64 {
    *seed.get_or_insert_with(|| {
        warnings.push("no --seed given; drew one from system entropy (recorded in config)".into());
        rand::random()
    })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

struct Fitted {
    data: Dataset,
    fit: NuisanceFit,
    summary: Value,
}

fn load_and_fit(args: &DataArgs, seed: u64, warnings: &mut Vec<String>) -> CliResult<Fitted> {
    check_folds(args.folds)?;
    check_level(args.level)?;
    check_path(&args.input)?;
    let data = load_csv(&args.input, args.covariates.as_deref())?;
    let opts = CrossFitOptions {
        folds: args.folds,
        model: args.model,
        seed,
        ..Default::default()
    };
    let fit = cross_fit(&data, &opts)?;
    if fit.fallbacks > 0 {
        warnings.push(format!(
            "{} nuisance fits hit separation and were refitted with the cross-validated L1 learner",
            fit.fallbacks
        ));
    }
    let summary = json!({
        "input": args.input,
        "n": data.n(),
        "p": data.p(),
        "treated": data.treated_count(),
        "control": data.n() - data.treated_count(),
        "covariates": data.names(),
    });
    Ok(Fitted { data, fit, summary })
}

fn estimate_warnings(r: &EstimateReport, rho: f64, warnings: &mut Vec<String>) {
    if r.units_above_fh_cap > 0 {
        warnings.push(format!(
            "rho = {rho}: {} units imply a harm probability above the Frechet-Hoeffding upper bound; \
             the estimand is uncapped there",
            r.units_above_fh_cap
        ));
    }
}

fn interval(rho_l: Option<f64>, rho_u: Option<f64>) -> CliResult<Option<RhoInterval>> {
    match (rho_l, rho_u) {
        (None, None) => Ok(None),
        (l, u) => Ok(Some(RhoInterval::new(l.unwrap_or(-1.0), u.unwrap_or(1.0))?)),
    }
}

fn pointwise_bounds(m: MarginalPair, ri: Option<RhoInterval>) -> CliResult<Value> {
    let feasible = rho_feasible_range(m).ok();
    let threshold = rho_star_threshold(m).ok();
    let mut out = json!({
        "mu0": m.mu0(),
        "mu1": m.mu1(),
        "tau": m.tau(),
        "fh": fh_bounds(m),
        "line": { "intercept": m.independence_fna(), "slope": -m.sd_product() },
        "feasible_rho": feasible,
        "rho_star": threshold,
        "odds_ratio_ay": odds_ratio_ay(m).ok(),
        "caps": upper_bound_caps(m),
    });
    if let Some(ri) = ri {
        out["rho_interval"] = json!(ri);
        out["bounds"] = json!(general_bounds(m, ri)?);
        if ri.upper() >= 0.0 {
            if let Ok(d) = lower_bound_decomposed(m, ri.upper().min(feasible.map_or(0.0, |f| f.upper()))) {
                out["harmful_best_case"] = json!(d.harmful_best_case);
            }
        }
    }
    Ok(out)
}

fn population_bounds(args: &BoundsArgs, path: &Path, seed: u64, warnings: &mut Vec<String>) -> CliResult<Value> {
    let data_args = DataArgs {
        input: path.to_path_buf(),
        covariates: args.covariates.clone(),
        folds: args.folds,
        model: args.model,
        level: args.level,
        seed: Some(seed),
    };
    let f = load_and_fit(&data_args, seed, warnings)?;
    let ri = interval(args.rho_l, args.rho_u)?.unwrap_or_else(RhoInterval::full);
    let mut empty = 0;
    let plug_in: Option<BoundPair> = mean_bounds(f.fit.marginals().map(|m| {
        general_bounds(m, ri).unwrap_or_else(|_| {
            // The interval misses this unit's feasible range: fall back to FH.
            empty += 1;
            fh_bounds(m)
        })
    }));
    if empty > 0 {
        warnings.push(format!(
            "{empty} units have no joint distribution compatible with the rho interval; their plug-in bounds use the Frechet-Hoeffding envelope"
        ));
    }
    let lower = estimate_beta(&f.data, &f.fit, ri.upper(), args.level)?;
    let upper = estimate_beta(&f.data, &f.fit, ri.lower(), args.level)?;
    estimate_warnings(&upper, ri.lower(), warnings);
    Ok(json!({
        "data": f.summary,
        "rho_interval": ri,
        "plug_in": plug_in,
        "estimated": { "lower": lower, "upper": upper },
        "fh_estimated": fh_bound_estimates(&f.data, &f.fit, args.level)?,
    }))
}

/// Run one parsed command, writing the JSON report to `out` unless `--report`
/// redirects it.
pub fn run_command(mut cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let mut warnings = Vec::new();
    let results: Value = match &mut cli.command {
        Command::Bounds(args) => {
            check_level(args.level)?;
            match (&args.input, args.mu0, args.mu1) {
                (Some(path), _, _) => {
                    let path = path.clone();
                    let seed = resolve_seed(&mut args.seed, &mut warnings);
                    population_bounds(args, &path, seed, &mut warnings)?
                }
                (None, Some(mu0), Some(mu1)) => {
                    let m = MarginalPair::new(mu0, mu1)?;
                    pointwise_bounds(m, interval(args.rho_l, args.rho_u)?)?
                }
                _ => return Err(CliError::Config("give --mu0 and --mu1, or --input".into())),
            }
        }
        Command::RhoRange(args) => {
            let seed = resolve_seed(&mut args.data.seed, &mut warnings);
            let f = load_and_fit(&args.data, seed, &mut warnings)?;
            let sel = rho_upper_selection(&f.fit, args.quantile)?;
            if sel.skipped > 0 {
                warnings.push(format!("{} units with degenerate marginals skipped", sel.skipped));
            }
            if let Some(path) = &args.output {
                let mut w = create(path)?;
                let io = |e: std::io::Error| CliError::Core(e.into());
                writeln!(w, "unit,rho_lower,rho_upper").map_err(io)?;
                for (i, (l, u)) in sel.per_unit_lower.iter().zip(&sel.per_unit_upper).enumerate() {
                    let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    writeln!(w, "{},{},{}", i + 1, cell(l), cell(u)).map_err(io)?;
                }
                w.flush().map_err(io)?;
            }
            json!({
                "data": f.summary,
                "rho_u": sel.rho_u,
                "quantile": sel.quantile,
                "coverage": sel.coverage,
                "skipped": sel.skipped,
                "upper_central_95": sel.upper_central_range(0.95),
                "lower_central_95": sel.lower_central_range(0.95),
            })
        }
        Command::Estimate(args) => {
            let seed = resolve_seed(&mut args.data.seed, &mut warnings);
            let f = load_and_fit(&args.data, seed, &mut warnings)?;
            let r = estimate_beta(&f.data, &f.fit, args.rho, args.data.level)?;
            estimate_warnings(&r, args.rho, &mut warnings);
            json!({ "data": f.summary, "rho": args.rho, "estimate": r })
        }
        Command::Curve(args) => {
            let seed = resolve_seed(&mut args.data.seed, &mut warnings);
            let f = load_and_fit(&args.data, seed, &mut warnings)?;
            let curve = sensitivity_curve(&f.data, &f.fit, &args.rho_grid.0, args.data.level)?;
            let fh = fh_bound_estimates(&f.data, &f.fit, args.data.level)?;
            if let Some(path) = &args.output {
                let mut w = create(path)?;
                write_curve(&mut w, &curve, &fh)?;
            }
            json!({ "data": f.summary, "curve": curve, "fh_estimated": fh })
        }
        Command::Ate(args) => {
            let seed = resolve_seed(&mut args.seed, &mut warnings);
            let f = load_and_fit(args, seed, &mut warnings)?;
            json!({ "data": f.summary, "ate": dr_ate(&f.data, &f.fit, args.level)? })
        }
        Command::Simulate(args) => {
            check_level(args.level)?;
            check_folds(args.folds)?;
            let seed = resolve_seed(&mut args.seed, &mut warnings);
            let mut rows = Vec::new();
            for &case in &args.cases {
                let spec = DgpSpec::case(case)?;
                let mut config = StudyConfig::for_case(&spec, args.rhos.clone(), seed);
                config.n = args.n;
                config.replications = args.reps;
                config.folds = args.folds;
                config.level = args.level;
                if let Some(model) = args.model {
                    config.model = model;
                }
                config.truth = TruthOptions {
                    n_outer: args.truth_outer,
                    integration: LatentIntegration::MonteCarlo { draws: args.truth_inner },
                    ..TruthOptions::default()
                };
                rows.extend(run_study(&spec, &config)?);
            }
            if let Some(path) = &args.output {
                let mut w = create(path)?;
                write_metrics(&mut w, &rows)?;
            }
            json!({ "rows": rows })
        }
        Command::Generate(args) => {
            check_path(&args.output)?;
            let seed = resolve_seed(&mut args.seed, &mut warnings);
            let spec = DgpSpec::case(args.case)?;
            let g = generate(&spec, args.n, seed)?;
            write_csv(&args.output, &g.data)?;
            json!({
                "case": args.case,
                "n": args.n,
                "treated": g.data.treated_count(),
                "empirical_fna": g.latent.empirical_fna(),
                "empirical_ate": g.latent.empirical_ate(),
                "output": args.output,
            })
        }
    };

    let report = Report {
        config: &cli,
        results,
        warnings,
        timing: cli.timing.then(|| Timing {
            elapsed_seconds: start.elapsed().as_secs_f64(),
        }),
    };
    let text = report.to_json()?;
    let io = |e: std::io::Error| CliError::Core(e.into());
    match &cli.report {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}").map_err(io)?;
            w.flush().map_err(io)?;
        }
        None => writeln!(out, "{text}").map_err(io)?,
    }
    Ok(())
}
