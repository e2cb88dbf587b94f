use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use robust_irt::simulation::{GuessType, Mechanism, Scenario};
use robust_irt::{
    fit, influence_table, run_study, sandwich_covariance, true_difficulties, FitConfig, FitResult,
    Hyperparameter, InfluenceReport, ItemBank, Method, QuadratureGrid, ResponseMatrix,
    SandwichCovariance, ScenarioSpec, StudyReport,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::format::{percent3, sig6};
use crate::io::parse_responses;
use crate::manifest::{Report, RunManifest};

/// Methods reported when none are requested.
pub const DEFAULT_METHODS: &str = "mmle,dpd:0.1,dpd:0.3,dpd:0.5,gamma:0.1,gamma:0.3,gamma:0.5";

#[derive(Debug, Parser)]
#[command(
    name = "robust-irt",
    version,
    about = "Robust item difficulty estimation for the Rasch model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate item difficulties from a response file.
    Fit(FitArgs),
    /// Sandwich standard errors and covariance at fitted or supplied difficulties.
    Se(SeArgs),
    /// Monte-Carlo bias and RMSE study under a contamination scenario.
    Simulate(SimulateArgs),
    /// Influence-function norms for every response pattern.
    Influence(InfluenceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mmle,
    Dpd,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EstimationArgs {
    /// Delimited 0/1 response file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Robustness parameter, 0 < alpha <= 1 (required for dpd and gamma).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gauss–Hermite nodes.
    #[arg(long, default_value_t = 21)]
    pub nodes: usize,
    /// Convergence tolerance on the largest difficulty change.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub estimation: EstimationArgs,
    /// Also report sandwich standard errors.
    #[arg(long)]
    pub se: bool,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SeArgs {
    #[command(flatten)]
    pub estimation: EstimationArgs,
    /// Comma-separated difficulties to evaluate at instead of fitting.
    #[arg(long, allow_hyphen_values = true)]
    pub difficulties: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Flat JSON scenario and method configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replications (overrides the configuration).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (all cores when omitted); never changes results.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write samples of both guessing-probability curves to this file.
    #[arg(long)]
    pub dump_mechanism: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    /// Comma-separated true difficulties.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "j")]
    pub btrue: Option<String>,
    /// Number of items, evenly spaced over [-2, 2].
    #[arg(long)]
    pub j: Option<usize>,
    /// Respondents per replication.
    #[arg(long, default_value_t = 2000)]
    pub i: usize,
    /// Comma-separated methods, e.g. `mmle,dpd:0.5,gamma:0.1`.
    #[arg(long, default_value = DEFAULT_METHODS)]
    pub methods: String,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 21)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(rendered.as_bytes())
            } else {
                stdout.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a, stdout, stderr),
        Command::Se(a) => cmd_se(&a, stdout, stderr),
        Command::Simulate(a) => cmd_simulate(&a, stdout, stderr),
        Command::Influence(a) => cmd_influence(&a, stdout, stderr),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(output: &OutputArgs, body: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match &output.out {
        Some(path) => fs::write(path, body).map_err(|e| CliError::io(path, e)),
        None => stdout
            .write_all(body.as_bytes())
            .map_err(|e| CliError::io("<stdout>", e)),
    }
}

fn json<S: Serialize>(value: &S) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Input(e.to_string()))
}

fn hyperparameter(method: MethodArg, alpha: Option<f64>) -> CliResult<Hyperparameter> {
    let method = match method {
        MethodArg::Mmle => Method::Mmle,
        MethodArg::Dpd => Method::Dpd,
        MethodArg::Gamma => Method::Gamma,
    };
    match (method, alpha) {
        (Method::Mmle, Some(_)) => Err(CliError::Usage(
            "--alpha applies only to --method dpd or gamma".into(),
        )),
        (Method::Mmle, None) => Ok(Hyperparameter::mmle()),
        (m, None) => Err(CliError::Usage(format!(
            "--method {m} requires --alpha with 0 < alpha <= 1"
        ))),
        (m, Some(a)) => Hyperparameter::new(m, a).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn parse_list(flag: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{flag}: `{}` is not a number", t.trim())))
        })
        .collect()
}

fn parse_methods(s: &str) -> CliResult<Vec<Hyperparameter>> {
    let methods = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|e: robust_irt::IrtError| CliError::Usage(format!("--methods: {e}")))
        })
        .collect::<CliResult<Vec<Hyperparameter>>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage(
            "--methods: at least one method is required".into(),
        ));
    }
    Ok(methods)
}

fn fit_config(hyper: Hyperparameter, nodes: usize, tol: f64, max_iter: usize) -> FitConfig<f64> {
    let mut cfg = FitConfig::new(hyper);
    cfg.nodes = nodes;
    cfg.tol = tol;
    cfg.max_iter = max_iter;
    cfg
}

/// Settings shared by `fit` and `se`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationSettings {
    pub input: String,
    pub input_sha256: String,
    pub method: Hyperparameter,
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

fn load_input(args: &EstimationArgs) -> CliResult<(ResponseMatrix, EstimationSettings)> {
    let hyper = hyperparameter(args.method, args.alpha)?;
    let bytes = fs::read(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Input(format!("{}: not valid UTF-8", args.input.display())))?;
    let data = parse_responses(&text)?;
    let settings = EstimationSettings {
        input: args.input.display().to_string(),
        input_sha256: hex::encode(Sha256::digest(&bytes)),
        method: hyper,
        nodes: args.nodes,
        tol: args.tol,
        max_iter: args.max_iter,
    };
    Ok((data, settings))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitSettings {
    #[serde(flatten)]
    pub estimation: EstimationSettings,
    pub se: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemEstimate {
    pub item: String,
    pub difficulty: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitOutput {
    pub respondents: usize,
    pub items: Vec<ItemEstimate>,
    pub converged: bool,
    pub iterations: usize,
    pub last_step: f64,
    pub stationarity_norm: f64,
    pub objective: Option<f64>,
    pub clamped_items: Vec<String>,
    pub warnings: Vec<String>,
}

fn fit_output(data: &ResponseMatrix, result: &FitResult<f64>) -> FitOutput {
    let se = result.standard_errors();
    let labels = data.item_labels();
    FitOutput {
        respondents: data.n_respondents(),
        items: labels
            .iter()
            .enumerate()
            .map(|(j, l)| ItemEstimate {
                item: l.clone(),
                difficulty: result.difficulties[j],
                se: se.as_ref().map(|s| s[j]),
            })
            .collect(),
        converged: result.converged,
        iterations: result.iterations,
        last_step: result.last_step,
        stationarity_norm: result.stationarity_norm,
        objective: result.objective_trace.last().copied(),
        clamped_items: result
            .clamped_items
            .iter()
            .map(|&j| labels[j].clone())
            .collect(),
        warnings: result.warnings.clone(),
    }
}

fn fit_csv(manifest: &RunManifest, out: &FitOutput) -> CliResult<String> {
    let mut body = manifest.comment_lines();
    body += &format!(
        "# converged={}\n# iterations={}\n# respondents={}\n",
        out.converged, out.iterations, out.respondents
    );
    let with_se = out.items.iter().any(|i| i.se.is_some());
    let mut rows = vec![if with_se {
        vec!["item".to_string(), "difficulty".into(), "se".into()]
    } else {
        vec!["item".to_string(), "difficulty".into()]
    }];
    for it in &out.items {
        let mut r = vec![it.item.clone(), sig6(it.difficulty)];
        if let Some(se) = it.se {
            r.push(sig6(se));
        }
        rows.push(r);
    }
    body += &csv_rows(&rows)?;
    Ok(body)
}

pub(crate) fn csv_rows(rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    for r in rows {
        w.write_record(r)
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Input(e.to_string()))
}

fn note_warnings(result: &FitResult<f64>, stderr: &mut dyn Write) {
    for w in &result.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    if !result.converged {
        let _ = writeln!(
            stderr,
            "warning: not converged after {} iterations (last step {})",
            result.iterations,
            sig6(result.last_step)
        );
    }
}

pub fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<i32> {
    let (data, estimation) = load_input(&args.estimation)?;
    let mut cfg = fit_config(
        estimation.method,
        estimation.nodes,
        estimation.tol,
        estimation.max_iter,
    );
    cfg.compute_covariance = args.se;
    let result = fit(&data, &cfg)?;
    note_warnings(&result, stderr);
    let settings = FitSettings {
        estimation,
        se: args.se,
    };
    let manifest = RunManifest::new("fit", &settings, None)?;
    let results = fit_output(&data, &result);
    let body = match args.format {
        Format::Json => json(&Report {
            manifest,
            settings,
            results,
        })?,
        Format::Csv => fit_csv(&manifest, &results)?,
    };
    emit(&args.output, &body, stdout)?;
    Ok(if result.converged { 0 } else { 2 })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeSettings {
    #[serde(flatten)]
    pub estimation: EstimationSettings,
    pub difficulties: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeOutput {
    pub respondents: usize,
    pub items: Vec<ItemEstimate>,
    pub covariance: Vec<Vec<f64>>,
    pub condition_number: f64,
    /// `None` when difficulties were supplied rather than fitted.
    pub converged: Option<bool>,
}

pub fn cmd_se(args: &SeArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<i32> {
    let (data, estimation) = load_input(&args.estimation)?;
    let supplied = args
        .difficulties
        .as_deref()
        .map(|s| parse_list("--difficulties", s))
        .transpose()?;
    let (b_hat, converged) = match &supplied {
        Some(b) => {
            if b.len() != data.n_items() {
                return Err(CliError::Usage(format!(
                    "--difficulties has {} values but the file has {} items",
                    b.len(),
                    data.n_items()
                )));
            }
            (b.clone(), None)
        }
        None => {
            let cfg = fit_config(
                estimation.method,
                estimation.nodes,
                estimation.tol,
                estimation.max_iter,
            );
            let r = fit(&data, &cfg)?;
            note_warnings(&r, stderr);
            (r.difficulties, Some(r.converged))
        }
    };
    let grid = QuadratureGrid::gauss_hermite(estimation.nodes)?;
    let bank = ItemBank::new(b_hat.clone())?;
    let sandwich: SandwichCovariance<f64> =
        sandwich_covariance(estimation.method, &bank, &data, &grid)?;
    let se = sandwich.standard_errors();
    let j = data.n_items();
    let results = SeOutput {
        respondents: data.n_respondents(),
        items: data
            .item_labels()
            .iter()
            .enumerate()
            .map(|(k, l)| ItemEstimate {
                item: l.clone(),
                difficulty: b_hat[k],
                se: Some(se[k]),
            })
            .collect(),
        covariance: (0..j)
            .map(|r| (0..j).map(|c| sandwich.cov[(r, c)]).collect())
            .collect(),
        condition_number: sandwich.condition,
        converged,
    };
    let settings = SeSettings {
        estimation,
        difficulties: supplied,
    };
    let manifest = RunManifest::new("se", &settings, None)?;
    let body = match args.format {
        Format::Json => json(&Report {
            manifest,
            settings,
            results,
        })?,
        Format::Csv => {
            let mut body = manifest.comment_lines();
            let mut rows = vec![["item", "difficulty", "se"]
                .into_iter()
                .map(String::from)
                .chain(data.item_labels().iter().map(|l| format!("cov:{l}")))
                .collect::<Vec<_>>()];
            for (k, it) in results.items.iter().enumerate() {
                let mut r = vec![it.item.clone(), sig6(it.difficulty), sig6(se[k])];
                r.extend(results.covariance[k].iter().map(|&c| sig6(c)));
                rows.push(r);
            }
            body += &csv_rows(&rows)?;
            body
        }
    };
    emit(&args.output, &body, stdout)?;
    Ok(if converged == Some(false) { 2 } else { 0 })
}

/// Flat simulation configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub guess_type: GuessType,
    #[serde(default)]
    pub prevalence: f64,
    #[serde(default)]
    pub severity: f64,
    #[serde(default)]
    pub mechanism: Mechanism,
    #[serde(alias = "I")]
    pub respondents: usize,
    #[serde(alias = "J")]
    pub items: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_methods() -> Vec<String> {
    DEFAULT_METHODS.split(',').map(String::from).collect()
}

fn default_nodes() -> usize {
    21
}

fn default_tol() -> f64 {
    1e-4
}

fn default_max_iter() -> usize {
    1000
}

pub fn load_simulate_config(path: &Path) -> CliResult<SimulateConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        if field == "." {
            CliError::Config(e.inner().to_string())
        } else {
            CliError::Config(format!("field `{field}`: {}", e.inner()))
        }
    })
}

/// Resolved study settings; the digest covers exactly these fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSettings {
    pub scenario: ScenarioSpec,
    pub methods: Vec<Hyperparameter>,
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub replications: usize,
    pub seed: u64,
}

impl SimulateSettings {
    pub fn resolve(
        cfg: &SimulateConfig,
        reps: Option<usize>,
        seed: Option<u64>,
    ) -> CliResult<Self> {
        let scenario = ScenarioSpec {
            scenario: cfg.scenario,
            guess_type: cfg.guess_type,
            prevalence: cfg.prevalence,
            severity: cfg.severity,
            mechanism: cfg.mechanism,
            respondents: cfg.respondents,
            items: cfg.items,
        };
        scenario.validate()?;
        let methods = cfg
            .methods
            .iter()
            .map(|m| {
                m.parse().map_err(|e: robust_irt::IrtError| {
                    CliError::Config(format!("field `methods`: {e}"))
                })
            })
            .collect::<CliResult<Vec<Hyperparameter>>>()?;
        Ok(Self {
            scenario,
            methods,
            nodes: cfg.nodes,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            replications: reps.or(cfg.replications).unwrap_or(100),
            seed: seed.or(cfg.seed).unwrap_or(0),
        })
    }
}

fn mechanism_csv() -> CliResult<String> {
    let r1 = Mechanism::R1.curve(-4.0, 4.0, 161);
    let r2 = Mechanism::R2.curve(-4.0, 4.0, 161);
    let mut rows = vec![vec!["theta".to_string(), "R1".into(), "R2".into()]];
    for (a, b) in r1.iter().zip(&r2) {
        rows.push(vec![sig6(a.0), sig6(a.1), sig6(b.1)]);
    }
    csv_rows(&rows)
}

fn study_csv(
    manifest: &RunManifest,
    s: &SimulateSettings,
    report: &StudyReport<f64>,
) -> CliResult<String> {
    let mut body = manifest.comment_lines();
    let spec = &s.scenario;
    let guess = spec.scenario != Scenario::Clean;
    let uniform = spec.scenario == Scenario::UniformGuess;
    let settings = vec![
        config_name(&spec.scenario),
        if guess {
            config_name(&spec.guess_type)
        } else {
            String::new()
        },
        if uniform {
            sig6(spec.prevalence)
        } else {
            String::new()
        },
        if uniform {
            sig6(spec.severity)
        } else {
            String::new()
        },
        if spec.scenario == Scenario::AbilityDependent {
            spec.mechanism.to_string()
        } else {
            String::new()
        },
        spec.respondents.to_string(),
        spec.items.to_string(),
        s.replications.to_string(),
    ];
    let mut header: Vec<String> = [
        "scenario",
        "guess_type",
        "prevalence",
        "severity",
        "mechanism",
        "I",
        "J",
        "replications",
        "metric",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    for m in &report.methods {
        header.push(m.method.clone());
        header.push(format!("{}_se", m.method));
    }
    let mut rows = vec![header];
    type Pick = fn(&robust_irt::MethodSummary<f64>) -> (String, String);
    let metrics: [(&str, Pick); 4] = [
        ("bias", |m| (sig6(m.metrics.bias), sig6(m.bias_se))),
        ("rmse", |m| (sig6(m.metrics.rmse), sig6(m.rmse_se))),
        ("failures", |m| (m.failures.to_string(), String::new())),
        ("non_converged", |m| {
            (m.non_converged.to_string(), String::new())
        }),
    ];
    for (name, pick) in metrics {
        let mut r = settings.clone();
        r.push(name.to_string());
        for m in &report.methods {
            let (v, se) = pick(m);
            r.push(v);
            r.push(se);
        }
        rows.push(r);
    }
    body += &csv_rows(&rows)?;
    Ok(body)
}

/// Configuration spelling of a unit enum value (`UNIFORM_GUESS`, `BIASED`).
fn config_name<S: Serialize>(v: &S) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

pub fn cmd_simulate(
    args: &SimulateArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CliResult<i32> {
    if let Some(path) = &args.dump_mechanism {
        fs::write(path, mechanism_csv()?).map_err(|e| CliError::io(path, e))?;
    }
    let Some(config_path) = &args.config else {
        if args.dump_mechanism.is_some() {
            return Ok(0);
        }
        return Err(CliError::Usage(
            "simulate requires --config (or only --dump-mechanism)".into(),
        ));
    };
    let cfg = load_simulate_config(config_path)?;
    let settings = SimulateSettings::resolve(&cfg, args.reps, args.seed)?;
    let methods: Vec<FitConfig<f64>> = settings
        .methods
        .iter()
        .map(|&h| fit_config(h, settings.nodes, settings.tol, settings.max_iter))
        .collect();
    let report = run_study(
        &settings.scenario,
        &methods,
        settings.replications,
        settings.seed,
        args.workers,
    )?;
    for m in &report.methods {
        if m.failures > 0 || m.non_converged > 0 {
            let _ = writeln!(
                stderr,
                "warning: {}: {} failed and {} non-converged replications",
                m.method, m.failures, m.non_converged
            );
        }
    }
    let manifest = RunManifest::new("simulate", &settings, Some(settings.seed))?;
    let body = match args.format {
        Format::Json => json(&Report {
            manifest,
            settings,
            results: report,
        })?,
        Format::Csv => study_csv(&manifest, &settings, &report)?,
    };
    emit(&args.output, &body, stdout)?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfluenceSettings {
    pub true_difficulties: Vec<f64>,
    pub respondents: usize,
    pub methods: Vec<Hyperparameter>,
    pub replications: usize,
    pub seed: u64,
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

fn influence_csv(manifest: &RunManifest, report: &InfluenceReport<f64>) -> CliResult<String> {
    let mut body = manifest.comment_lines();
    body += &format!(
        "# respondents={}\n# replications={}\n# failures={}\n",
        report.respondents, report.replications, report.failures
    );
    let mut header = vec!["response".to_string(), "prob_pct".to_string()];
    header.extend(report.methods.iter().map(|m| m.method.clone()));
    let mut rows = vec![header];
    for (p, (u, prob)) in report
        .patterns
        .iter()
        .zip(&report.probabilities)
        .enumerate()
    {
        let mut r = vec![u.to_string(), percent3(*prob)];
        r.extend(report.methods.iter().map(|m| sig6(m.norms[p])));
        rows.push(r);
    }
    let mut ges = vec!["gross_error_sensitivity".to_string(), String::new()];
    ges.extend(
        report
            .methods
            .iter()
            .map(|m| sig6(m.gross_error_sensitivity)),
    );
    rows.push(ges);
    body += &csv_rows(&rows)?;
    Ok(body)
}

pub fn cmd_influence(
    args: &InfluenceArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CliResult<i32> {
    let bank: ItemBank<f64> = match (&args.btrue, args.j) {
        (Some(list), _) => ItemBank::new(parse_list("--btrue", list)?)?,
        (None, Some(j)) => true_difficulties(j)?,
        (None, None) => return Err(CliError::Usage("influence requires --btrue or --j".into())),
    };
    if bank.len() > robust_irt::MAX_ENUMERATED_ITEMS {
        return Err(robust_irt::IrtError::EnumerationCap {
            items: bank.len(),
            cap: robust_irt::MAX_ENUMERATED_ITEMS,
        }
        .into());
    }
    let settings = InfluenceSettings {
        true_difficulties: bank.difficulties().to_vec(),
        respondents: args.i,
        methods: parse_methods(&args.methods)?,
        replications: args.reps,
        seed: args.seed,
        nodes: args.nodes,
        tol: args.tol,
        max_iter: args.max_iter,
    };
    let configs: Vec<FitConfig<f64>> = settings
        .methods
        .iter()
        .map(|&h| fit_config(h, settings.nodes, settings.tol, settings.max_iter))
        .collect();
    let report = influence_table(&bank, args.i, &configs, args.reps, args.seed, args.workers)?;
    if report.failures > 0 {
        let _ = writeln!(stderr, "warning: {} replications skipped", report.failures);
    }
    let manifest = RunManifest::new("influence", &settings, Some(settings.seed))?;
    let body = match args.format {
        Format::Json => json(&Report {
            manifest,
            settings,
            results: report,
        })?,
        Format::Csv => influence_csv(&manifest, &report)?,
    };
    emit(&args.output, &body, stdout)?;
    Ok(0)
}
