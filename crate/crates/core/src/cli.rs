//! Command-line front end. Every subcommand reads a TOML run config whose
//! missing keys take the toy defaults; `--set section.key=value` overrides
//! the file, and dedicated flags override both.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analytics::{coactivation_heatmap, series, Metric, TraceSet};
use crate::error::Error;
use crate::model::ModelConfig;
use crate::objectives::ObjectiveConfig;
use crate::scaling::{
    fit_parametric, isoflop_analysis, isoflop_grid, noisy_points, optimal_allocation, read_points, write_points,
    Allocation, FitGrid, FitOptions, IsoflopReport, LawParams, ParametricFit, FIXTURE_BUDGETS,
    REFERENCE_ISOFLOP_EXPONENTS,
};
use crate::trainer::{load_corpus, synthetic_corpus, train, write_corpus, RunManifest, TrainConfig, TrainSpec};

pub const EFFECTIVE_CONFIG: &str = "config.toml";
pub const LOCK_FILE: &str = ".moelab.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsConfig {
    /// Tokens tracked per expert in specialization series.
    pub top_n: usize,
    /// Experts shown in a co-activation heatmap.
    pub coactivation_n: usize,
    pub k_eval: usize,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig {
            top_n: 8,
            coactivation_n: 16,
            k_eval: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub kappa: f64,
    pub huber_delta: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub grid: FitGrid,
    /// Law used by `scaling optimal` when no fit file is given.
    pub law: LawParams,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        let opts = FitOptions::default();
        ScalingConfig {
            kappa: crate::scaling::KAPPA,
            huber_delta: opts.delta,
            max_iter: opts.max_iter,
            grad_tol: opts.grad_tol,
            grid: FitGrid::default(),
            law: LawParams::REFERENCE,
        }
    }
}

impl ScalingConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            delta: self.huber_delta,
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub objective: ObjectiveConfig,
    pub analytics: AnalyticsConfig,
    pub scaling: ScalingConfig,
}

impl Default for RunConfig {
    /// Desk-scale defaults: the toy model and schedule.
    fn default() -> Self {
        let spec = TrainSpec::toy();
        RunConfig {
            model: spec.model,
            train: spec.train,
            objective: spec.objective,
            analytics: AnalyticsConfig::default(),
            scaling: ScalingConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then `text` merged key by key, then each `section.key=value`
    /// override. Unknown keys are rejected.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut base = toml::Value::try_from(RunConfig::default())
            .map_err(|e| CliError::Usage(format!("serializing defaults: {e}")))?;
        let file: toml::Value = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        merge(&mut base, file);
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut base, key.trim(), value)?;
        }
        let cfg: RunConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => {
                require_file(p, "config")?;
                fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?
            }
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train_spec().validate()?;
        for (field, v) in [
            ("analytics.top_n", self.analytics.top_n),
            ("analytics.coactivation_n", self.analytics.coactivation_n),
            ("analytics.k_eval", self.analytics.k_eval),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive").into());
            }
        }
        if !(self.scaling.kappa > 0.0 && self.scaling.huber_delta > 0.0) {
            return Err(Error::config("scaling", "kappa and huber_delta must be positive").into());
        }
        self.scaling.law.validate()?;
        Ok(())
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            model: self.model.clone(),
            train: self.train.clone(),
            objective: self.objective.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// A TOML literal, or a bare string when the text does not parse as one.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override `{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            if !table.contains_key(*part) {
                return Err(CliError::Usage(format!("override `{key}`: unknown key")));
            }
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .get_mut(*part)
            .ok_or_else(|| CliError::Usage(format!("override `{key}`: unknown section `{part}`")))?;
    }
    Err(CliError::Usage("empty override key".into()))
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    /// 2 for bad invocations, configs and inputs; 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e {
                Error::Config { .. }
                | Error::Row { .. }
                | Error::Parse { .. }
                | Error::Undefined(_)
                | Error::Contract(_) => 2,
                _ => 1,
            },
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} file not found: {}", path.display())))
    }
}

/// Exclusive hold on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
    _file: File,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(format!("creating {}", run_dir.display()), e))?;
        let path = run_dir.join(LOCK_FILE);
        let mut file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::io(
                    format!("run directory {} is locked by another command (remove {} if stale)", run_dir.display(), path.display()),
                    e,
                )
            } else {
                Error::io(format!("creating {}", path.display()), e)
            }
        })?;
        let _ = writeln!(file, "{}", std::process::id());
        Ok(RunLock { path, _file: file })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Parser)]
#[command(name = "moelab", version, about = "Train toy MoE transformers, analyze routing traces and fit scaling laws")]
pub struct Cli {
    /// TOML run config; missing keys take the toy defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Markov-chain corpus.
    Corpus(CorpusArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Routing metrics from a run directory's traces.
    Analyze(AnalyzeArgs),
    /// Scaling-law fits and compute-optimal allocation.
    #[command(subcommand)]
    Scaling(ScalingCommand),
    /// Print the effective config as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, default_value_t = 64)]
    pub vocab: u32,
    #[arg(long, default_value_t = 20_000)]
    pub tokens: usize,
    /// Probability that a token is followed by its fixed successor.
    #[arg(long, default_value_t = 0.9)]
    pub p_follow: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides train.total_steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Print every loss row.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeKind {
    Specialization,
    Coactivation,
    Saturation,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub kind: AnalyzeKind,
    #[arg(long)]
    pub run: PathBuf,
    /// Layer index; defaults to every traced layer (coactivation: the first).
    #[arg(long)]
    pub layer: Option<usize>,
    /// Trace step; defaults to every traced step (coactivation: the last).
    #[arg(long)]
    pub step: Option<u64>,
    /// Overrides analytics.k_eval.
    #[arg(long)]
    pub k: Option<usize>,
    /// Overrides analytics.top_n or analytics.coactivation_n.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ScalingCommand {
    /// Per-budget parabola fits and power laws through their vertices.
    Isoflop {
        #[arg(long)]
        input: PathBuf,
        /// JSON report.
        #[arg(long)]
        out: PathBuf,
        /// Per-budget fit table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Huber fit of the parametric loss law from every grid start.
    Parametric {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute-optimal size and tokens for a budget.
    Optimal {
        #[arg(long)]
        flops: f64,
        /// JSON written by `scaling parametric`; defaults to scaling.law.
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Points generated from scaling.law, for testing the fits.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        /// Relative loss noise; 0 gives an exact grid around each optimum.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IsoflopOutput {
    pub report: IsoflopReport,
    pub reference_exponents: (f64, f64),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParametricOutput {
    pub fit: ParametricFit,
    /// `β/(α+β)` of the fitted law.
    pub n_exponent: f64,
    pub optima: Vec<Allocation>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OptimalOutput {
    pub law: LawParams,
    pub kappa: f64,
    pub n_exponent: f64,
    pub allocation: Allocation,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run a parsed command; the result is its one-line summary.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Config => Ok(cfg.to_toml()),
        Command::Corpus(a) => {
            if a.vocab == 0 || !(0.0..=1.0).contains(&a.p_follow) {
                return Err(CliError::Usage("vocab must be positive and p-follow in [0, 1]".into()));
            }
            let corpus = synthetic_corpus(a.vocab, a.tokens, a.p_follow, a.seed);
            ensure_parent(&a.out)?;
            write_corpus(&a.out, &corpus)?;
            Ok(format!("wrote {} tokens (vocab {}) to {}", corpus.len(), a.vocab, a.out.display()))
        }
        Command::Train(a) => {
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            if let Some(s) = a.steps {
                cfg.train.total_steps = s;
            }
            cfg.validate()?;
            require_file(&a.corpus, "corpus")?;
            let corpus = load_corpus(&a.corpus)?;
            let _lock = RunLock::acquire(&a.out)?;
            write_text(&a.out.join(EFFECTIVE_CONFIG), &cfg.to_toml())?;
            let verbose = a.verbose;
            let summary = train(&cfg.train_spec(), &corpus, &a.out, |row| {
                if verbose {
                    eprintln!("step {} lr {:.3e} ce {:.4} lb {:.4} rz {:.4}", row.step, row.lr, row.ce, row.lb, row.rz);
                }
            })?;
            let last = summary.losses.last();
            Ok(format!(
                "trained {} steps; final ce {:.4} lb {:.4}; {} checkpoints in {}",
                summary.manifest.steps_done,
                last.map_or(f64::NAN, |r| r.ce),
                last.map_or(f64::NAN, |r| r.lb),
                summary.manifest.checkpoints.len(),
                a.out.display()
            ))
        }
        Command::Analyze(a) => analyze(a, &cfg),
        Command::Scaling(s) => scaling(s, &cfg),
    }
}

fn analyze(a: &AnalyzeArgs, cfg: &RunConfig) -> Result<String, CliError> {
    let manifest_path = a.run.join(crate::trainer::RUN_MANIFEST);
    require_file(&manifest_path, "run manifest")?;
    let traces = {
        let _lock = RunLock::acquire(&a.run)?;
        RunManifest::load(&a.run)?;
        TraceSet::load_run(&a.run)?
    };
    if traces.is_empty() {
        return Err(Error::Undefined(format!("run {} has no traces", a.run.display())).into());
    }
    if let (Some(l), Some(s)) = (a.layer, a.step) {
        traces.slice(s, l)?;
    }
    let layers = a.layer.map_or_else(|| traces.layers(), |l| vec![l]);
    let steps = a.step.map_or_else(|| traces.steps(), |s| vec![s]);
    let (csv, summary) = match a.kind {
        AnalyzeKind::Coactivation => {
            let layer = a.layer.unwrap_or(layers[0]);
            let step = a.step.or(traces.final_step()).expect("non-empty trace set");
            let n = a.n.unwrap_or(cfg.analytics.coactivation_n);
            let h = coactivation_heatmap(&traces, layer, step, n)?;
            let summary = format!(
                "coactivation layer {layer} step {step}: {} experts{}, peak {}",
                h.experts.len(),
                if h.truncated { " (truncated)" } else { "" },
                h.peak().map_or("undefined".into(), |p| format!("{p:.4}"))
            );
            (h.to_csv(), summary)
        }
        AnalyzeKind::Specialization | AnalyzeKind::Saturation => {
            let metric = if a.kind == AnalyzeKind::Specialization {
                Metric::Specialization {
                    top_n: a.n.unwrap_or(cfg.analytics.top_n),
                }
            } else {
                Metric::Saturation {
                    k_eval: a.k.unwrap_or(cfg.analytics.k_eval),
                }
            };
            let table = series(metric, &traces, &layers, &steps)?;
            if table.rows.is_empty() {
                let avail: Vec<String> = traces.keys().map(|(s, l)| format!("(layer {l}, step {s})")).collect();
                return Err(Error::Undefined(format!(
                    "no traces for the requested selectors; available: {}",
                    avail.join(", ")
                ))
                .into());
            }
            let mean = table.rows.iter().map(|r| r.value).sum::<f64>() / table.rows.len() as f64;
            let summary = format!(
                "{:?}: {} rows over {} layers, mean {mean:.4}{}",
                metric,
                table.rows.len(),
                layers.len(),
                if table.gaps.is_empty() { String::new() } else { format!(", {} gaps", table.gaps.len()) }
            );
            (table.to_csv(), summary)
        }
    };
    write_text(&a.out, &csv)?;
    Ok(summary)
}

fn scaling(cmd: &ScalingCommand, cfg: &RunConfig) -> Result<String, CliError> {
    let sc = &cfg.scaling;
    match cmd {
        ScalingCommand::Isoflop { input, out, csv } => {
            require_file(input, "points")?;
            let points = read_points(input)?;
            let report = isoflop_analysis(&points)?;
            if let Some(csv) = csv {
                write_text(csv, &report.to_csv())?;
            }
            let summary = match &report.n_law {
                Some(l) => format!("{} budgets; N* exponent {:.6}", report.budgets.len(), l.exponent),
                None => format!("1 budget; N* = {:.4e}", report.budgets[0].parabola.n_opt),
            };
            write_json(
                out,
                &IsoflopOutput {
                    report,
                    reference_exponents: REFERENCE_ISOFLOP_EXPONENTS,
                },
            )?;
            Ok(summary)
        }
        ScalingCommand::Parametric { input, out } => {
            require_file(input, "points")?;
            let points = read_points(input)?;
            let fit = fit_parametric(&points, &sc.grid, &sc.fit_options())?;
            let mut budgets: Vec<f64> = points.iter().map(|p| p.c_flops).collect();
            budgets.sort_by(f64::total_cmp);
            budgets.dedup();
            let optima = budgets
                .iter()
                .map(|&c| optimal_allocation(&fit.params, c, sc.kappa))
                .collect::<Result<Vec<_>, _>>()?;
            let p = fit.params;
            let summary = format!(
                "A {:.6} B {:.6} alpha {:.6} beta {:.6} L0 {:.6} (objective {:.3e}, {}/{} starts converged)",
                p.a, p.b, p.alpha, p.beta, p.l0, fit.objective, fit.starts_converged, fit.starts_total
            );
            write_json(
                out,
                &ParametricOutput {
                    n_exponent: p.n_exponent(),
                    fit,
                    optima,
                },
            )?;
            Ok(summary)
        }
        ScalingCommand::Optimal { flops, fit, out } => {
            let law = match fit {
                Some(path) => {
                    require_file(path, "fit")?;
                    let raw = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
                    let parsed: ParametricOutput = serde_json::from_slice(&raw)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                    parsed.fit.params
                }
                None => sc.law,
            };
            let allocation = optimal_allocation(&law, *flops, sc.kappa)?;
            let summary = format!(
                "C {:.4e}: N* {:.6e} D* {:.6e} loss {:.6}",
                allocation.c_flops, allocation.n_opt, allocation.d_opt, allocation.loss
            );
            if let Some(out) = out {
                write_json(
                    out,
                    &OptimalOutput {
                        law,
                        kappa: sc.kappa,
                        n_exponent: law.n_exponent(),
                        allocation,
                    },
                )?;
            }
            Ok(summary)
        }
        ScalingCommand::Fixture { out, noise, seed } => {
            let points = if *noise == 0.0 {
                isoflop_grid(&sc.law, &FIXTURE_BUDGETS, 6, 0.5)?
            } else {
                noisy_points(&sc.law, &FIXTURE_BUDGETS, 32, (1e7, 1e10), *noise, *seed)?
            };
            ensure_parent(out)?;
            write_points(out, &points)?;
            Ok(format!("wrote {} points to {}", points.len(), out.display()))
        }
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    json.push('\n');
    write_text(path, &json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), cfg);
    }

    #[test]
    fn file_then_overrides() {
        let cfg = RunConfig::from_toml(
            "[train]\nseed = 5\ntotal_steps = 40\n[scaling.grid]\nl0 = [2.0]\n",
            &["train.seed=9".into(), "model.shared_gating=router_scored".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.total_steps, 40);
        assert_eq!(cfg.scaling.grid.l0, vec![2.0]);
        assert_eq!(cfg.scaling.grid.alpha, FitGrid::default().alpha);
        assert_eq!(cfg.model.shared_gating, crate::model::SharedGating::RouterScored);
    }

    #[test]
    fn unknown_and_invalid_keys_are_usage_errors() {
        for (text, sets) in [
            ("[train]\nsede = 1\n", vec![]),
            ("[nope]\n", vec![]),
            ("", vec!["train.nope=1".to_string()]),
            ("[train]\nmax_lr = -1.0\n", vec![]),
        ] {
            let e = RunConfig::from_toml(text, &sets).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{e}");
        }
        let e = RunConfig::from_toml("[train]\nmax_lr = -1.0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("max_lr"), "{e}");
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let first = RunLock::acquire(dir.path()).unwrap();
        let second = RunLock::acquire(dir.path()).err().unwrap();
        assert_eq!(second.exit_code(), 1);
        drop(first);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
