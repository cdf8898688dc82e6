//! Command-line driver.
//!
//! Every subcommand resolves its configuration as module defaults, then the
//! `--config` JSON file, then explicit flags, and writes its artifacts plus a
//! `manifest.json` into `--out`. A manifest can be passed back as `--config`
//! to replay the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapt::{self, AdaptationConfig, TrainingReport};
use crate::density::{self, FitSettings, SampleSet, DEFAULT_KERNEL_VARIANCE};
use crate::divergence::{self, Alpha, BoundInputs, Direction, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nnet::{
    finite_diff_check, save_checkpoint, softmax_floor_rows, Classifier, Dense, Gradients, Mlp,
    Tape, DEFAULT_P_MIN,
};
use crate::rng::{self, ExperimentRng};
use crate::synthbench::{generate_pair, load_dataset, save_dataset, DomainSpec, Mode};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "alpha-uda", version, about = "Alpha-divergence domain adaptation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact or Monte-Carlo α-divergence with Rényi and KL companions.
    Estimate(EstimateArgs),
    /// Robust Gaussian fit by α-divergence minimization.
    FitDensity(FitDensityArgs),
    /// Train encoder and classifier on a domain pair.
    Train(TrainArgs),
    /// Largest α that keeps the outlier gradient within a bound.
    TuneAlpha(TuneAlphaArgs),
    /// Check the target-loss bound on random discrete instances.
    CheckBound(CheckBoundArgs),
    /// Generate a synthetic domain pair.
    GenData(GenDataArgs),
    /// Compare analytic gradients with central differences.
    GradCheck(GradCheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::FitDensity(_) => "fit-density",
            Command::Train(_) => "train",
            Command::TuneAlpha(_) => "tune-alpha",
            Command::CheckBound(_) => "check-bound",
            Command::GenData(_) => "gen-data",
            Command::GradCheck(_) => "grad-check",
        }
    }
}

/// Written once per run next to the artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub status: String,
    pub duration_secs: f64,
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect()
}

/// Reads a config file; manifests contribute their `config` object.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>, subcommand: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object() {
        if let (Some(name), Some(config)) = (obj.get("subcommand"), obj.get("config")) {
            if name != subcommand {
                return Err(Error::ConfigInvalid(format!(
                    "{}: manifest belongs to `{name}`, not `{subcommand}`",
                    path.display()
                )));
            }
            value = config.clone();
        }
    }
    serde_json::from_value(value).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

fn field_error(field: &str, e: Error) -> Error {
    Error::ConfigInvalid(format!("{field}: {e}"))
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.artifacts.push(name.to_string());
        Ok(path)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name)?;
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, &text)
    }

    fn finish(
        self,
        subcommand: &str,
        config: &impl Serialize,
        seed: Option<u64>,
        status: &str,
        started: Instant,
    ) -> Result<()> {
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).expect("serializable"),
            seed,
            artifacts: self.artifacts,
            status: status.to_string(),
            duration_secs: started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code, printing errors to stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::FitDensity(a) => cmd_fit_density(a),
        Command::Train(a) => cmd_train(a),
        Command::TuneAlpha(a) => cmd_tune_alpha(a),
        Command::CheckBound(a) => cmd_check_bound(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::GradCheck(a) => cmd_grad_check(a),
    }
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Discrete distribution, comma-separated.
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub q: Option<String>,
    /// Sample CSV defining the kernel mixture p.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Sample CSV defining the kernel mixture q.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub direction: Option<Direction>,
}

impl clap::ValueEnum for Direction {
    fn value_variants<'a>() -> &'a [Self] {
        &[Direction::Forward, Direction::Reverse]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }))
    }
}

impl clap::ValueEnum for Mode {
    fn value_variants<'a>() -> &'a [Self] {
        &[Mode::Osda, Mode::Pda]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Mode::Osda => "osda",
            Mode::Pda => "pda",
        }))
    }
}

/// Discrete inputs: forward is `D_α(p‖q)`, reverse `D_α(q‖p)`.
/// Sample inputs: forward evaluates `D_α(q‖p)` at the target samples,
/// reverse evaluates `D_α(p‖q)` at the source samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub alpha: f64,
    pub p: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub sigma2: f64,
    pub direction: Direction,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            alpha: 0.5,
            p: None,
            q: None,
            source: None,
            target: None,
            sigma2: DEFAULT_KERNEL_VARIANCE,
            direction: Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub value: f64,
    pub alpha: f64,
    pub direction: Direction,
    pub n_points: usize,
    /// Rényi divergence of the same order and pair, for α in (0, 1).
    pub renyi: Option<f64>,
    pub kl: f64,
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: EstimateConfig = load_config(a.common.config.as_deref(), "estimate")?;
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = &a.p {
        cfg.p = Some(parse_list(v).map_err(|e| Error::ConfigInvalid(format!("p: {e}")))?);
    }
    if let Some(v) = &a.q {
        cfg.q = Some(parse_list(v).map_err(|e| Error::ConfigInvalid(format!("q: {e}")))?);
    }
    if a.source.is_some() {
        cfg.source = a.source;
    }
    if a.target.is_some() {
        cfg.target = a.target;
    }
    if let Some(v) = a.sigma2 {
        cfg.sigma2 = v;
    }
    if let Some(d) = a.direction {
        cfg.direction = d;
    }
    let report = estimate(&cfg)?;
    let mut out = Output::create(&a.common.out)?;
    out.write_json("estimate.json", &report)?;
    out.finish("estimate", &cfg, None, "ok", started)
}

pub fn estimate(cfg: &EstimateConfig) -> Result<EstimateReport> {
    let alpha = Alpha::new(cfg.alpha).map_err(|e| field_error("alpha", e))?;
    let renyi_of = |value: f64| {
        if cfg.alpha > 0.0 && cfg.alpha < 1.0 {
            divergence::renyi_from_alpha_divergence(value, cfg.alpha).ok()
        } else {
            None
        }
    };
    match (&cfg.p, &cfg.q, &cfg.source, &cfg.target) {
        (Some(p), Some(q), None, None) => {
            let p = DiscreteDistribution::new(p.clone()).map_err(|e| field_error("p", e))?;
            let q = DiscreteDistribution::new(q.clone()).map_err(|e| field_error("q", e))?;
            let (a, b) = match cfg.direction {
                Direction::Forward => (&p, &q),
                Direction::Reverse => (&q, &p),
            };
            let value = divergence::exact_alpha_divergence(a, b, alpha)?;
            Ok(EstimateReport {
                value,
                alpha: cfg.alpha,
                direction: cfg.direction,
                n_points: p.len(),
                renyi: renyi_of(value),
                kl: divergence::kl_divergence(a, b)?,
            })
        }
        (None, None, Some(source), Some(target)) => {
            let s = SampleSet::load_csv(source)?;
            let t = SampleSet::load_csv(target)?;
            if s.dim() != t.dim() {
                return Err(Error::DimensionMismatch {
                    expected: s.dim(),
                    got: t.dim(),
                });
            }
            if !(cfg.sigma2 > 0.0) {
                return Err(Error::ConfigInvalid(format!("sigma2: must be positive, got {}", cfg.sigma2)));
            }
            let p = density::KernelMixture::new(s.samples().clone(), cfg.sigma2)?;
            let q = density::KernelMixture::new(t.samples().clone(), cfg.sigma2)?;
            let log_p = |z: &[f64]| p.log_density(z).unwrap_or(f64::NAN);
            let log_q = |z: &[f64]| q.log_density(z).unwrap_or(f64::NAN);
            let (est, points) = match cfg.direction {
                Direction::Forward => (
                    divergence::mc_alpha_divergence(t.samples(), log_p, log_q, alpha)?,
                    t.samples(),
                ),
                Direction::Reverse => (
                    divergence::mc_reverse_alpha_divergence(s.samples(), log_p, log_q, alpha)?,
                    s.samples(),
                ),
            };
            // KL of the evaluation-point density from the other one.
            type LogDensity<'a> = &'a dyn Fn(&[f64]) -> f64;
            let (own, other): (LogDensity, LogDensity) = match cfg.direction {
                Direction::Forward => (&log_q, &log_p),
                Direction::Reverse => (&log_p, &log_q),
            };
            let mut kl = 0.0;
            for z in points.iter_rows() {
                kl += own(z) - other(z);
            }
            kl /= points.rows() as f64;
            Ok(EstimateReport {
                value: est.value,
                alpha: cfg.alpha,
                direction: cfg.direction,
                n_points: est.n_points,
                renyi: renyi_of(est.value),
                kl,
            })
        }
        _ => Err(Error::ConfigInvalid(
            "p/q: give either both discrete distributions or both source and target sample files".into(),
        )),
    }
}

// ------------------------------------------------------------- fit-density

#[derive(Debug, Clone, Args)]
pub struct FitDensityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// One-dimensional sample CSV; without it a contaminated sample is drawn.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitDensityConfig {
    pub alpha: f64,
    pub input: Option<PathBuf>,
    /// Size of the drawn `0.8·N(0,1) + 0.2·N(4, 0.01)` sample.
    pub n_samples: usize,
    pub seed: u64,
    pub fit: FitSettings,
}

impl Default for FitDensityConfig {
    fn default() -> Self {
        FitDensityConfig {
            alpha: 0.5,
            input: None,
            n_samples: 10_000,
            seed: 0,
            fit: FitSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FitReport<'a> {
    mean: &'a [f64],
    variance: &'a [f64],
    converged: bool,
    iterations: usize,
    objective: f64,
}

fn cmd_fit_density(a: FitDensityArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: FitDensityConfig = load_config(a.common.config.as_deref(), "fit-density")?;
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if a.input.is_some() {
        cfg.input = a.input;
    }
    if let Some(v) = a.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.step {
        cfg.fit.step = v;
    }
    if let Some(v) = a.max_iters {
        cfg.fit.max_iters = v;
    }
    if let Some(v) = a.tolerance {
        cfg.fit.tolerance = v;
    }
    let alpha = Alpha::training(cfg.alpha).map_err(|e| field_error("alpha", e))?;
    let samples = match &cfg.input {
        Some(path) => SampleSet::load_csv(path)?,
        None => density::contaminated_sample(cfg.seed, cfg.n_samples)?,
    };
    let fit = density::fit_robust_gaussian(&samples, alpha, &cfg.fit)?;

    let mut out = Output::create(&a.common.out)?;
    out.write_json(
        "model.json",
        &FitReport {
            mean: &fit.model.mean,
            variance: &fit.model.variance,
            converged: fit.converged,
            iterations: fit.iterations,
            objective: fit.objective,
        },
    )?;
    let mut trace = String::from("iteration,objective,mean,variance\n");
    for it in &fit.trace {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        trace.push_str(&format!(
            "{},{},{},{}\n",
            it.iteration,
            it.objective,
            join(&it.mean),
            join(&it.variance)
        ));
    }
    out.write("trace.csv", &trace)?;
    let seed = cfg.input.is_none().then_some(cfg.seed);
    if fit.converged {
        out.finish("fit-density", &cfg, seed, "ok", started)
    } else {
        let err = Error::NonConvergence {
            iterations: fit.iterations,
        };
        out.finish("fit-density", &cfg, seed, &err.to_string(), started)?;
        Err(err)
    }
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub leave_one_out: bool,
    /// Labelled source dataset CSV (defaults to the synthetic benchmark).
    #[arg(long, requires = "target")]
    pub source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    pub target: Option<PathBuf>,
    /// Train once per α on an evenly spaced grid, `alpha=START:END:COUNT`.
    #[arg(long)]
    pub sweep: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub adapt: AdaptationConfig,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Benchmark spec used when no dataset files are given; `None` means
    /// the default benchmark for the mode with the run seed.
    pub spec: Option<DomainSpec>,
    pub sweep: Option<Vec<f64>>,
}

/// Parses `alpha=START:END:COUNT` into `COUNT` evenly spaced values.
pub fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::ConfigInvalid(format!("sweep: expected alpha=START:END:COUNT, got `{s}`"));
    let grid = s.strip_prefix("alpha=").ok_or_else(bad)?;
    let parts: Vec<&str> = grid.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let end: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    match count {
        0 => Err(bad()),
        1 => Ok(vec![start]),
        _ => Ok((0..count)
            .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
            .collect()),
    }
}

fn epochs_jsonl(report: &TrainingReport) -> String {
    let mut s = String::new();
    for r in &report.epochs {
        s.push_str(&serde_json::to_string(r).expect("serializable"));
        s.push('\n');
    }
    s
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    seed: u64,
    config: &'a AdaptationConfig,
    shared_classes: &'a [usize],
    final_epoch: Option<&'a adapt::EpochRecord>,
    final_os_star: Option<&'a adapt::OsStarResult>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: TrainConfig = load_config(a.common.config.as_deref(), "train")?;
    let ad = &mut cfg.adapt;
    if let Some(v) = a.alpha {
        ad.alpha = Alpha::training(v).map_err(|e| field_error("alpha", e))?;
    }
    if let Some(v) = a.gamma {
        ad.gamma = v;
    }
    if let Some(v) = a.sigma2 {
        ad.sigma2 = v;
    }
    if let Some(v) = a.epochs {
        ad.epochs = v;
    }
    if let Some(v) = a.batch_size {
        ad.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        ad.learning_rate = v;
    }
    if let Some(v) = a.mode {
        ad.mode = v;
    }
    if a.leave_one_out {
        ad.leave_one_out = true;
    }
    if let Some(v) = a.common.seed {
        ad.seed = v;
    }
    if a.source.is_some() {
        cfg.source = a.source;
        cfg.target = a.target;
    }
    if let Some(s) = &a.sweep {
        cfg.sweep = Some(parse_sweep(s)?);
    }
    ad.validate()?;
    let sweep_alphas = match &cfg.sweep {
        Some(grid) => grid
            .iter()
            .map(|&v| Alpha::training(v).map_err(|e| field_error("sweep", e)))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    let (source, target) = match (&cfg.source, &cfg.target) {
        (Some(s), Some(t)) => (load_dataset(s)?, load_dataset(t)?),
        (None, None) => {
            if cfg.spec.is_none() {
                cfg.spec = Some(DomainSpec::default_benchmark(cfg.adapt.mode, cfg.adapt.seed));
            }
            generate_pair(cfg.spec.as_ref().expect("set above"), cfg.adapt.mode)?
        }
        _ => return Err(Error::ConfigInvalid("source/target: give both dataset files or neither".into())),
    };

    let mut out = Output::create(&a.common.out)?;
    if sweep_alphas.is_empty() {
        train_one(&cfg.adapt, &source, &target, &mut out, "")?;
    } else {
        let mut table = String::from("alpha,os_star,final_divergence,final_classification_loss\n");
        for (i, &alpha) in sweep_alphas.iter().enumerate() {
            let run_cfg = AdaptationConfig {
                alpha,
                ..cfg.adapt.clone()
            };
            let report = train_one(&run_cfg, &source, &target, &mut out, &format!("sweep-{i:02}/"))?;
            let last = report.epochs.last().expect("epochs >= 1");
            let os = report.final_os_star.as_ref().map_or(f64::NAN, |r| r.mean);
            table.push_str(&format!(
                "{},{},{},{}\n",
                alpha, os, last.divergence, last.classification_loss
            ));
        }
        out.write("sweep.csv", &table)?;
    }
    let seed = cfg.adapt.seed;
    out.finish("train", &cfg, Some(seed), "ok", started)
}

fn train_one(
    cfg: &AdaptationConfig,
    source: &crate::synthbench::Dataset,
    target: &crate::synthbench::Dataset,
    out: &mut Output,
    prefix: &str,
) -> Result<TrainingReport> {
    let outcome = adapt::train(cfg, source, target)?;
    let report = outcome.report;
    out.write(&format!("{prefix}epochs.jsonl"), &epochs_jsonl(&report))?;
    out.write_json(
        &format!("{prefix}summary.json"),
        &TrainSummary {
            seed: report.seed,
            config: &report.config,
            shared_classes: &report.shared_classes,
            final_epoch: report.epochs.last(),
            final_os_star: report.final_os_star.as_ref(),
        },
    )?;
    let path = out.path(&format!("{prefix}checkpoint.csv"))?;
    save_checkpoint(&path, &outcome.encoder, &outcome.classifier)?;
    Ok(report)
}

// -------------------------------------------------------------- tune-alpha

#[derive(Debug, Clone, Args)]
pub struct TuneAlphaArgs {
    #[command(flatten)]
    pub common: Common,
    /// Density ratio below which a sample counts as a severe outlier.
    #[arg(long)]
    pub r_threshold: Option<f64>,
    /// Bound on the gradient magnitude at that ratio.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneAlphaConfig {
    pub r_threshold: f64,
    pub rho: f64,
    pub alpha_max: f64,
    pub tolerance: f64,
}

impl Default for TuneAlphaConfig {
    fn default() -> Self {
        TuneAlphaConfig {
            r_threshold: 0.01,
            rho: 20.0,
            alpha_max: 0.999,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneAlphaReport {
    pub alpha: f64,
    pub r_threshold: f64,
    pub rho: f64,
    pub grad_magnitude: f64,
}

fn cmd_tune_alpha(a: TuneAlphaArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: TuneAlphaConfig = load_config(a.common.config.as_deref(), "tune-alpha")?;
    if let Some(v) = a.r_threshold {
        cfg.r_threshold = v;
    }
    if let Some(v) = a.rho {
        cfg.rho = v;
    }
    if let Some(v) = a.alpha_max {
        cfg.alpha_max = v;
    }
    match divergence::tune_alpha(cfg.r_threshold, cfg.rho, cfg.alpha_max, cfg.tolerance) {
        Ok(alpha) => {
            let mut out = Output::create(&a.common.out)?;
            out.write_json(
                "tune.json",
                &TuneAlphaReport {
                    alpha: alpha.value(),
                    r_threshold: cfg.r_threshold,
                    rho: cfg.rho,
                    grad_magnitude: divergence::grad_magnitude(cfg.r_threshold, alpha)?,
                },
            )?;
            out.finish("tune-alpha", &cfg, None, "ok", started)
        }
        Err(e @ Error::NoFeasibleAlpha { .. }) => {
            let out = Output::create(&a.common.out)?;
            out.finish("tune-alpha", &cfg, None, &e.to_string(), started)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

// ------------------------------------------------------------- check-bound

#[derive(Debug, Clone, Args)]
pub struct CheckBoundArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub instances: Option<usize>,
    /// Single order to check; by default 0.1, 0.2, …, 0.9.
    #[arg(long)]
    pub alpha_prime: Option<f64>,
    /// Use the source joint as the target joint.
    #[arg(long)]
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckBoundConfig {
    pub instances: usize,
    pub alpha_primes: Vec<f64>,
    /// Support sizes of the feature and the label.
    pub features: usize,
    pub classes: usize,
    pub p_min: f64,
    pub identical: bool,
    pub seed: u64,
}

impl Default for CheckBoundConfig {
    fn default() -> Self {
        CheckBoundConfig {
            instances: 100,
            alpha_primes: (1..10).map(|k| k as f64 / 10.0).collect(),
            features: 4,
            classes: 3,
            p_min: DEFAULT_P_MIN,
            identical: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInstance {
    pub instance: usize,
    pub alpha_prime: f64,
    pub source_loss: f64,
    pub target_loss: f64,
    pub divergence: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub checks: usize,
    pub violations: usize,
    pub min_slack: f64,
}

/// Random joint over `features × classes` cells, every cell positive.
fn random_joint(rng: &mut ExperimentRng, cells: usize) -> Result<DiscreteDistribution> {
    use rand::Rng;
    let w: Vec<f64> = (0..cells).map(|_| rng.random_range(0.01..1.0)).collect();
    DiscreteDistribution::from_weights(&w)
}

/// Expected floored cross-entropy `Σ_(z,y) joint(z,y)·(−ln h(y|z))`.
fn expected_loss(joint: &DiscreteDistribution, h: &Matrix) -> f64 {
    let k = h.cols();
    let mut loss = 0.0;
    for (cell, &w) in joint.probs().iter().enumerate() {
        loss -= w * h.get(cell / k, cell % k).ln();
    }
    loss
}

pub fn check_bound(cfg: &CheckBoundConfig) -> Result<(Vec<BoundInstance>, BoundSummary)> {
    for &a in &cfg.alpha_primes {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::ConfigInvalid(format!("alpha_prime: {a} outside (0, 1)")));
        }
    }
    if cfg.alpha_primes.is_empty() || cfg.features == 0 || cfg.classes < 2 {
        return Err(Error::ConfigInvalid("alpha_primes, features and classes must be non-trivial".into()));
    }
    if !(cfg.p_min > 0.0 && cfg.p_min < 1.0 / cfg.classes as f64) {
        return Err(Error::ConfigInvalid(format!("p_min: {} outside (0, 1/classes)", cfg.p_min)));
    }
    let mut rng = rng::seeded(cfg.seed);
    let cells = cfg.features * cfg.classes;
    let m = -cfg.p_min.ln();
    let mut rows = Vec::new();
    for instance in 0..cfg.instances {
        let p = random_joint(&mut rng, cells)?;
        let q = if cfg.identical { p.clone() } else { random_joint(&mut rng, cells)? };
        let logits = Matrix::from_vec(
            cfg.features,
            cfg.classes,
            (0..cells).map(|_| 4.0 * rng::standard_normal(&mut rng)).collect(),
        )?;
        let h = softmax_floor_rows(&logits, cfg.p_min)?;
        let source_loss = expected_loss(&p, &h);
        let target_loss = expected_loss(&q, &h);
        for &alpha_prime in &cfg.alpha_primes {
            let d = divergence::exact_alpha_divergence(&p, &q, Alpha::new(alpha_prime)?)?;
            let bound = divergence::target_loss_bound(&BoundInputs {
                source_loss,
                loss_cap_m: m,
                alpha_prime,
                divergence: d,
            })?;
            rows.push(BoundInstance {
                instance,
                alpha_prime,
                source_loss,
                target_loss,
                divergence: d,
                bound,
                slack: bound - target_loss,
            });
        }
    }
    let summary = BoundSummary {
        checks: rows.len(),
        violations: rows.iter().filter(|r| r.slack < 0.0).count(),
        min_slack: rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
    };
    Ok((rows, summary))
}

fn cmd_check_bound(a: CheckBoundArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: CheckBoundConfig = load_config(a.common.config.as_deref(), "check-bound")?;
    if let Some(v) = a.instances {
        cfg.instances = v;
    }
    if let Some(v) = a.alpha_prime {
        cfg.alpha_primes = vec![v];
    }
    if a.identical {
        cfg.identical = true;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    let (rows, summary) = check_bound(&cfg)?;
    let mut out = Output::create(&a.common.out)?;
    let mut csv = String::from("instance,alpha_prime,source_loss,target_loss,divergence,bound,slack\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.instance, r.alpha_prime, r.source_loss, r.target_loss, r.divergence, r.bound, r.slack
        ));
    }
    out.write("bound.csv", &csv)?;
    out.write_json("bound_summary.json", &summary)?;
    out.finish("check-bound", &cfg, Some(cfg.seed), "ok", started)
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub mode: Mode,
    /// `None` means the default benchmark for the mode.
    pub spec: Option<DomainSpec>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            mode: Mode::Osda,
            spec: None,
        }
    }
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: GenDataConfig = load_config(a.common.config.as_deref(), "gen-data")?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    let mut spec = cfg
        .spec
        .clone()
        .unwrap_or_else(|| DomainSpec::default_benchmark(cfg.mode, 0));
    if let Some(seed) = a.common.seed {
        spec.seed = seed;
    }
    let (source, target) = generate_pair(&spec, cfg.mode)?;
    cfg.spec = Some(spec);
    let mut out = Output::create(&a.common.out)?;
    let path = out.path("source.csv")?;
    save_dataset(&source, &path)?;
    let path = out.path("target.csv")?;
    save_dataset(&target, &path)?;
    let seed = cfg.spec.as_ref().map(|s| s.seed);
    out.finish("gen-data", &cfg, seed, "ok", started)
}

// -------------------------------------------------------------- grad-check

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GradFixture {
    /// Encoder + classifier + divergence objective on random batches.
    Objective,
    /// `p²` at `p = 1`.
    Quadratic,
    /// A tape containing an operation without registered derivatives.
    Opaque,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub fixture: Option<GradFixture>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub fixture: GradFixture,
    pub mode: Mode,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma2: f64,
    pub batch: usize,
    pub encoder_sizes: Vec<usize>,
    pub classes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            fixture: GradFixture::Objective,
            mode: Mode::Osda,
            alpha: 0.7,
            gamma: 0.5,
            sigma2: 1.0,
            batch: 8,
            encoder_sizes: vec![2, 6, 3],
            classes: 3,
            step: 1e-6,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOutput {
    pub fixture: GradFixture,
    pub max_rel_error: f64,
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

fn rebuild(sizes: &[usize], p_min: f64, params: &[Matrix]) -> Result<(Mlp, Classifier)> {
    let mut layers: Vec<Dense> = params
        .chunks(2)
        .map(|wb| Dense {
            weight: wb[0].clone(),
            bias: wb[1].clone(),
        })
        .collect();
    let head = layers.pop().expect("classifier layer");
    let encoder = Mlp::from_layers(layers)?;
    if encoder.sizes() != sizes {
        return Err(Error::ShapeMismatch("rebuilt encoder has different sizes".into()));
    }
    Ok((encoder, Classifier::from_layer(head, p_min)?))
}

pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckOutput> {
    if !(cfg.step > 0.0) {
        return Err(Error::ConfigInvalid(format!("step: must be positive, got {}", cfg.step)));
    }
    let report = match cfg.fixture {
        GradFixture::Quadratic => {
            let p = vec![Matrix::scalar(1.0)];
            let mut tape = Tape::new();
            let x = tape.leaf(p[0].clone());
            let y = tape.matmul(x, x)?;
            let g = tape.backward(y)?.wrt(x);
            finite_diff_check(|ps| Ok(ps[0].data()[0].powi(2)), &p, &[g], cfg.step)?
        }
        GradFixture::Opaque => {
            let mut tape = Tape::new();
            let x = tape.leaf(Matrix::scalar(1.5));
            let y = tape.opaque("cube", &[x], Matrix::scalar(1.5f64.powi(3)));
            tape.backward(y)?;
            unreachable!("opaque nodes are not differentiable")
        }
        GradFixture::Objective => {
            let alpha = Alpha::training(cfg.alpha).map_err(|e| field_error("alpha", e))?;
            if cfg.batch < 2 {
                return Err(Error::ConfigInvalid("batch: must be at least 2".into()));
            }
            let adapt_cfg = AdaptationConfig {
                alpha,
                gamma: cfg.gamma,
                sigma2: cfg.sigma2,
                mode: cfg.mode,
                encoder_sizes: cfg.encoder_sizes.clone(),
                ..AdaptationConfig::default()
            };
            adapt_cfg.validate()?;
            let mut rng = rng::seeded(cfg.seed);
            let m = cfg.encoder_sizes[0];
            let encoder = Mlp::new(&cfg.encoder_sizes, &mut rng)?;
            let classifier = Classifier::new(encoder.output_dim(), cfg.classes, DEFAULT_P_MIN, &mut rng)?;
            let mut normal = |n: usize, shift: f64| {
                Matrix::from_vec(n, m, (0..n * m).map(|_| rng::standard_normal(&mut rng) + shift).collect())
            };
            let xs = normal(cfg.batch, 0.0)?;
            let xt = normal(cfg.batch, 0.7)?;
            let ys: Vec<usize> = (0..cfg.batch).map(|i| i % cfg.classes).collect();

            let mut tape = Tape::new();
            let vars = adapt::ModelVars::record(&mut tape, &encoder, &classifier);
            let obj = adapt::record_objective(&mut tape, &encoder, &classifier, &vars, &xs, &ys, &xt, &adapt_cfg)?;
            let analytic = Gradients::from_tape(&tape.backward(obj.total)?, &vars.flat()).tensors;
            let params: Vec<Matrix> = encoder
                .params()
                .into_iter()
                .chain(classifier.params())
                .cloned()
                .collect();
            finite_diff_check(
                |ps| {
                    let (e, c) = rebuild(&cfg.encoder_sizes, DEFAULT_P_MIN, ps)?;
                    Ok(adapt::joint_objective(&e, &c, &xs, &ys, &xt, &adapt_cfg)?.total)
                },
                &params,
                &analytic,
                cfg.step,
            )?
        }
    };
    Ok(GradCheckOutput {
        fixture: cfg.fixture,
        max_rel_error: report.max_rel_error,
        tensor: report.tensor,
        index: report.index,
        analytic: report.analytic,
        numeric: report.numeric,
        passed: report.max_rel_error <= cfg.tolerance,
    })
}

fn cmd_grad_check(a: GradCheckArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: GradCheckConfig = load_config(a.common.config.as_deref(), "grad-check")?;
    if let Some(v) = a.fixture {
        cfg.fixture = v;
    }
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.step {
        cfg.step = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    let report = grad_check(&cfg)?;
    let mut out = Output::create(&a.common.out)?;
    out.write_json("gradcheck.json", &report)?;
    out.finish("grad-check", &cfg, Some(cfg.seed), "ok", started)
}
