//! Command-line entry points. Every command writes one JSON artifact and
//! prints its path; failures print `{code, message, detail}` to stderr.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{generate_synthetic, jackknife, NllScope, PlanConfig, SyntheticSpec};
use crate::io::{
    self, kind, load_dataset, resolve_output, Artifact, CurveBody, DatasetFile, DatasetFormat, Histogram,
    PlanBody, PriorBody, ReportBody, RunConfig, WscBody,
};
use crate::model::{FrequencyGrid, LabelSet, TransferMatrix};
use crate::planner::{
    estimate_wsc, exact_wsc, greedy_plan, predictive_variance, restricted_posterior, Direction, PlannerModel,
    SpreadMeasure,
};
use crate::sbl::{fit_sparse_prior, prune, DenominatorForm, EmConfig, UpdateVariant};
use crate::service::{self, SessionStore};

#[derive(Debug, Parser)]
#[command(name = "labelwise", version, about = "Sparse frequency priors and labeling plans for periodic series")]
pub struct Cli {
    /// Directory for relative output paths (default: $LABELWISE_OUT_DIR, else the working directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit and prune a frequency prior.
    FitPrior(FitArgs),
    /// Compute a labeling order from a prior.
    PlanLabels(PlanArgs),
    /// Posterior curve and band for a set of labels.
    Predict(PredictArgs),
    /// Leave-one-slice-out evaluation against random baselines.
    Evaluate(EvaluateArgs),
    /// Weak-submodularity constant of the trace objective.
    Wsc(WscArgs),
    /// Start the labeling session service.
    Serve(ServeArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct RunArgs {
    /// Run configuration file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<DatasetFormat>,
    #[arg(long)]
    pub frame_rate: Option<f64>,
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub sigma2_init: Option<f64>,
    #[arg(long)]
    pub alpha_init: Option<f64>,
    #[arg(long)]
    pub eps_min: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub k_order: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    pub update_variant: Option<UpdateVariant>,
    #[arg(long, value_parser = parse_denominator)]
    pub denominator: Option<DenominatorForm>,
    #[arg(long)]
    pub prune_ratio: Option<f64>,
}

fn parse_variant(s: &str) -> std::result::Result<UpdateVariant, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("expected row-sum or paired-sum, got {s:?}"))
}

fn parse_denominator(s: &str) -> std::result::Result<DenominatorForm, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("expected per-row or single, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Prior artifact from `fit-prior`.
    #[arg(long)]
    pub prior: PathBuf,
    /// Series length (default: the length the prior was fitted on).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub frame_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value = "trace")]
    pub measure: SpreadMeasure,
    #[arg(long, default_value = "minimize")]
    pub direction: Direction,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON file `{"labels": [{"index": i, "value": v}, ...]}`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Half-width of the band in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    pub band_k: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub measure: Option<SpreadMeasure>,
    #[arg(long)]
    pub unlabeled_only: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WscArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Enumerate all nested pairs (N <= 14).
    #[arg(long, conflicts_with_all = ["samples", "seed"])]
    pub exact: bool,
    #[arg(long, required_unless_present = "exact")]
    pub samples: Option<usize>,
    #[arg(long, required_unless_present = "exact")]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Append-only journal, replayed on start.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Static files served outside /v1.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Custom generator spec (JSON); defaults to the two-tone preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

impl RunArgs {
    /// Builds the run configuration from `--config` (if any) and the flags.
    pub fn resolve(&self, seed: Option<u64>, out_dir: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let data = self
                    .data
                    .clone()
                    .ok_or_else(|| Error::validation("either --config or --data is required"))?;
                RunConfig {
                    dataset: data,
                    format: None,
                    frame_rate: None,
                    m_max: 100,
                    spacing: 0.075,
                    em: EmConfig::default(),
                    prune_ratio: crate::sbl::DEFAULT_PRUNE_RATIO,
                    measure: SpreadMeasure::Trace,
                    k_max: 15,
                    draws: 1000,
                    seed: seed.unwrap_or(0),
                    nll_scope: NllScope::AllPoints,
                    output_dir: None,
                }
            }
        };
        if let Some(d) = &self.data {
            cfg.dataset = d.clone();
        }
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        if self.format.is_some() {
            cfg.format = self.format;
        }
        if self.frame_rate.is_some() {
            cfg.frame_rate = self.frame_rate;
        }
        set!(self.m_max, cfg.m_max);
        set!(self.spacing, cfg.spacing);
        set!(self.sigma2_init, cfg.em.sigma2_init);
        set!(self.alpha_init, cfg.em.alpha_init);
        set!(self.eps_min, cfg.em.eps_min);
        set!(self.max_iter, cfg.em.max_iter);
        set!(self.update_variant, cfg.em.update_variant);
        set!(self.denominator, cfg.em.denominator);
        set!(self.prune_ratio, cfg.prune_ratio);
        set!(seed, cfg.seed);
        if self.k_order.is_some() {
            cfg.em.k_order = self.k_order;
        }
        if let Some(d) = out_dir {
            cfg.output_dir = Some(d.to_path_buf());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_prior(args: &ModelArgs) -> Result<(Artifact<PriorBody>, PlannerModel)> {
    let prior = Artifact::<PriorBody>::read(&args.prior, kind::PRIOR)?;
    let n = args.n.unwrap_or(prior.body.n);
    let fps = args.frame_rate.unwrap_or(prior.body.frame_rate);
    let model = prior.body.pruned.planner_model(n, fps)?;
    Ok((prior, model))
}

#[derive(Serialize)]
struct ModelConfig<'a, T: Serialize> {
    prior: &'a Path,
    n: usize,
    frame_rate: f64,
    #[serde(flatten)]
    extra: T,
}

fn model_config<'a, T: Serialize>(args: &'a ModelArgs, model: &PlannerModel, extra: T) -> ModelConfig<'a, T> {
    ModelConfig {
        prior: &args.prior,
        n: model.n(),
        frame_rate: model.transfer().time_grid().frame_rate(),
        extra,
    }
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn fit_prior(args: &FitArgs, out_dir: Option<&Path>) -> Result<PathBuf> {
    let cfg = args.run.resolve(None, out_dir)?;
    let data = load_dataset(&cfg.dataset, cfg.format, cfg.frame_rate)?;
    let grid = FrequencyGrid::uniform(cfg.m_max, cfg.spacing)?;
    let a = TransferMatrix::new(data.time_grid(), &grid);
    let fit = fit_sparse_prior(&data, &a, &cfg.em)?;
    let pruned = prune(&fit, &a, cfg.prune_ratio)?;
    let body = PriorBody::new(&data, &grid, &fit, &pruned);
    let art = Artifact::new(kind::PRIOR, &cfg, BTreeMap::new(), body)?;
    let path = resolve_output(args.out.as_deref(), "prior.json", cfg.output_dir.as_deref());
    art.write(&path)?;
    Ok(path)
}

fn plan_labels(args: &PlanArgs, out_dir: Option<&Path>) -> Result<PathBuf> {
    let (_, model) = load_prior(&args.model)?;
    let plan = greedy_plan(&model, args.k, args.measure, args.direction)?;
    let body = PlanBody {
        n: model.n(),
        frame_rate: model.transfer().time_grid().frame_rate(),
        measure: plan.measure,
        direction: plan.direction,
        times: plan.indices.iter().map(|&i| model.times()[i]).collect(),
        indices: plan.indices,
        prior_spread: plan.prior_spread,
        spreads: plan.spreads,
        gains: plan.gains,
    };
    let config = model_config(
        &args.model,
        &model,
        serde_json::json!({"k": args.k, "measure": args.measure, "direction": args.direction}),
    );
    let art = Artifact::new(kind::PLAN, &config, BTreeMap::new(), body)?;
    let path = resolve_output(args.out.as_deref(), "plan.json", out_dir);
    art.write(&path)?;
    Ok(path)
}

fn predict(args: &PredictArgs, out_dir: Option<&Path>) -> Result<PathBuf> {
    let (_, model) = load_prior(&args.model)?;
    let labels = io::read_labels(&args.labels)?;
    let set = LabelSet::new(labels.labels.iter().map(|p| p.index).collect(), model.n())?;
    let values: Vec<f64> = labels.labels.iter().map(|p| p.value).collect();
    let rp = restricted_posterior(&model, &set, Some(&values))?;
    let mean: Vec<f64> = (model.a() * &rp.mean).iter().copied().collect();
    let std: Vec<f64> = predictive_variance(&model, &rp.covariance).into_iter().map(f64::sqrt).collect();
    let body = CurveBody {
        times: model.times().to_vec(),
        lower: mean.iter().zip(&std).map(|(m, s)| m - args.band_k * s).collect(),
        upper: mean.iter().zip(&std).map(|(m, s)| m + args.band_k * s).collect(),
        mean,
        std,
        band_k: args.band_k,
        labeled: labels.labels,
        spread: model.trace_of(&rp.covariance),
    };
    let config = model_config(
        &args.model,
        &model,
        serde_json::json!({"labels": args.labels, "band_k": args.band_k}),
    );
    let art = Artifact::new(kind::CURVE, &config, BTreeMap::new(), body)?;
    let path = resolve_output(args.out.as_deref(), "curve.json", out_dir);
    art.write(&path)?;
    Ok(path)
}

fn evaluate(args: &EvaluateArgs, out_dir: Option<&Path>) -> Result<PathBuf> {
    if args.seed.is_none() && args.run.config.is_none() {
        return Err(Error::validation("evaluate needs --seed (or a config file with a seed)"));
    }
    let mut cfg = args.run.resolve(args.seed, out_dir)?;
    if let Some(k) = args.k_max {
        cfg.k_max = k;
    }
    if let Some(d) = args.draws {
        cfg.draws = d;
    }
    if let Some(m) = args.measure {
        cfg.measure = m;
    }
    if args.unlabeled_only {
        cfg.nll_scope = NllScope::Unlabeled;
    }
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset, cfg.format, cfg.frame_rate)?;
    let grid = FrequencyGrid::uniform(cfg.m_max, cfg.spacing)?;
    let a = TransferMatrix::new(data.time_grid(), &grid);
    let plan_cfg = PlanConfig {
        measure: cfg.measure,
        k_max: cfg.k_max,
        draws: cfg.draws,
        seed: cfg.seed,
        prune_ratio: cfg.prune_ratio,
        nll_scope: cfg.nll_scope,
        include_worst: true,
    };
    let reports = jackknife(&data, &a, &cfg.em, &plan_cfg)?;
    let body = ReportBody {
        dataset: cfg.dataset.display().to_string(),
        reports,
    };
    let art = Artifact::new(kind::REPORT, &cfg, seeds(&[("baseline", cfg.seed)]), body)?;
    let path = resolve_output(args.out.as_deref(), "report.json", cfg.output_dir.as_deref());
    art.write(&path)?;
    Ok(path)
}

fn wsc(args: &WscArgs, out_dir: Option<&Path>) -> Result<PathBuf> {
    let (_, model) = load_prior(&args.model)?;
    let (body, seed_map) = if args.exact {
        let e = exact_wsc(&model)?;
        (
            WscBody::Exact {
                constant: e.constant,
                triples: e.triples,
                argmax_x: e.argmax_x,
                argmax_y: e.argmax_y,
                argmax_i: e.argmax_i,
            },
            BTreeMap::new(),
        )
    } else {
        let samples = args.samples.ok_or_else(|| Error::validation("--samples is required"))?;
        let seed = args.seed.ok_or_else(|| Error::validation("--seed is required"))?;
        let est = estimate_wsc(&model, samples, seed)?;
        (
            WscBody::Estimate {
                max_ratio: est.max_ratio,
                fraction_above_one: est.fraction_above_one,
                sample_count: est.sample_count,
                histogram: Histogram::of(&est.samples, args.bins),
                samples: est.samples,
            },
            seeds(&[("wsc", seed)]),
        )
    };
    let config = model_config(
        &args.model,
        &model,
        serde_json::json!({"exact": args.exact, "samples": args.samples, "bins": args.bins}),
    );
    let art = Artifact::new(kind::WSC, &config, seed_map, body)?;
    let path = resolve_output(args.out.as_deref(), "wsc.json", out_dir);
    art.write(&path)?;
    Ok(path)
}

fn synth(args: &SynthArgs, out_dir: Option<&Path>) -> Result<PathBuf> {
    let mut spec = match &args.spec {
        Some(p) => serde_json::from_str::<SyntheticSpec>(&std::fs::read_to_string(p)?)?,
        None => SyntheticSpec::two_tone(args.seed.ok_or_else(|| Error::validation("--seed is required"))?),
    };
    if let (Some(seed), Some(_)) = (args.seed, &args.spec) {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    let path = resolve_output(Some(&args.out), "synthetic.csv", out_dir);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    match DatasetFormat::from_path(&path)? {
        DatasetFormat::Csv => io::write_csv_dataset(&data, std::fs::File::create(&path)?)?,
        DatasetFormat::Json => {
            let mut text = serde_json::to_string_pretty(&DatasetFile::from_dataset(&data))?;
            text.push('\n');
            std::fs::write(&path, text)?;
        }
    }
    Ok(path)
}

fn serve(args: &ServeArgs) -> Result<()> {
    let store = match &args.journal {
        Some(p) => SessionStore::with_journal(p)?,
        None => SessionStore::new(),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(service::serve(args.addr, Arc::new(store), args.assets.clone()))?;
    Ok(())
}

/// Runs one parsed command, returning the artifact path when one is written.
pub fn run(cli: &Cli) -> Result<Option<PathBuf>> {
    let out_dir = cli.out_dir.as_deref();
    match &cli.command {
        Command::FitPrior(a) => fit_prior(a, out_dir).map(Some),
        Command::PlanLabels(a) => plan_labels(a, out_dir).map(Some),
        Command::Predict(a) => predict(a, out_dir).map(Some),
        Command::Evaluate(a) => evaluate(a, out_dir).map(Some),
        Command::Wsc(a) => wsc(a, out_dir).map(Some),
        Command::Synth(a) => synth(a, out_dir).map(Some),
        Command::Serve(a) => serve(a).map(|_| None),
    }
}

/// Machine-readable error body for stderr.
pub fn error_json(code: &str, message: &str, detail: serde_json::Value) -> String {
    serde_json::json!({"code": code, "message": message, "detail": detail}).to_string()
}

pub fn error_detail(e: &Error) -> serde_json::Value {
    match e {
        Error::Parse { line, .. } => serde_json::json!({ "line": line }),
        Error::Fit { iteration, .. } => serde_json::json!({ "iteration": iteration }),
        Error::Fold { slice_id, .. } => serde_json::json!({ "slice_id": slice_id }),
        _ => serde_json::Value::Null,
    }
}

/// Parses `argv`, runs it and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim(), serde_json::Value::Null));
            return 2;
        }
    };
    match run(&cli) {
        Ok(Some(path)) => {
            println!("{}", path.display());
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("{}", error_json(e.code(), &e.to_string(), error_detail(&e)));
            1
        }
    }
}
