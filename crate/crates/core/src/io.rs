//! Dataset files and JSON artifacts.
//!
//! CSV series have a first column `t` (seconds) or `frame` (index) and one
//! column per slice, headed by the slice id. Files are UTF-8 with `.` as the
//! decimal separator. Every derived artifact is a JSON object carrying
//! `schema_version`, `kind`, `toolkit_version`, the producing `config` and its
//! `seeds`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::model::{Dataset, FrequencyGrid, TimeGrid};
use crate::planner::PlannerModel;
use crate::sbl::{EmConfig, PriorFit, PrunedModel, DEFAULT_PRUNE_RATIO};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LABELWISE_OUT_DIR";

/// Relative tolerance on the spacing of times read from files.
pub const FILE_EQUIDISTANT_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Json,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Self::Csv),
            Some("json") => Ok(Self::Json),
            _ => Err(Error::validation(format!(
                "cannot tell the format of {}; use a .csv or .json extension",
                path.display()
            ))),
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::validation(format!("unknown dataset format {other:?}"))),
        }
    }
}

/// Loads a dataset. `frame_rate` is required for CSV files indexed by
/// `frame` and for single-row files; otherwise it is inferred and, when
/// given, checked against the data.
pub fn load_dataset(path: &Path, format: Option<DatasetFormat>, frame_rate: Option<f64>) -> Result<Dataset> {
    let format = match format {
        Some(f) => f,
        None => DatasetFormat::from_path(path)?,
    };
    let file = fs::File::open(path)?;
    match format {
        DatasetFormat::Csv => read_csv_dataset(file, frame_rate),
        DatasetFormat::Json => read_json_dataset(file),
    }
}

fn snap_frame_rate(fps: f64) -> f64 {
    let snapped = (fps * 1e6).round() / 1e6;
    if ((snapped - fps) / fps).abs() <= FILE_EQUIDISTANT_RTOL {
        snapped
    } else {
        fps
    }
}

pub fn read_csv_dataset(reader: impl Read, frame_rate: Option<f64>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| Error::parse(Some(1), e.to_string()))?,
        None => return Err(Error::parse(None, "empty file")),
    };
    let first = header.get(0).map(str::trim).unwrap_or_default();
    let by_frame = match first {
        "t" => false,
        "frame" => true,
        other => {
            return Err(Error::parse(
                Some(1),
                format!("first column must be headed `t` or `frame`, found {other:?}"),
            ))
        }
    };
    let ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if ids.is_empty() {
        return Err(Error::parse(Some(1), "no slice columns"));
    }
    for (i, id) in ids.iter().enumerate() {
        if id.is_empty() {
            return Err(Error::parse(Some(1), format!("slice column {} has an empty id", i + 1)));
        }
        if ids[..i].contains(id) {
            return Err(Error::parse(Some(1), format!("duplicate slice id {id:?}")));
        }
    }

    let mut stamps: Vec<(f64, usize)> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for record in records {
        let record = record.map_err(|e| Error::parse(e.position().map(|p| p.line() as usize), e.to_string()))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record.get(0).map(str::trim) == Some("") {
            continue;
        }
        if record.len() != ids.len() + 1 {
            return Err(Error::parse(
                Some(line),
                format!("expected {} fields, found {}", ids.len() + 1, record.len()),
            ));
        }
        let mut fields = record.iter().map(str::trim);
        let stamp: f64 = parse_number(fields.next().unwrap_or_default(), line)?;
        stamps.push((stamp, line));
        for field in fields {
            values.push(parse_number(field, line)?);
        }
    }
    if stamps.is_empty() {
        return Err(Error::parse(None, "no data rows"));
    }
    for w in stamps.windows(2) {
        if !(w[1].0 > w[0].0) {
            let what = if w[1].0 == w[0].0 { "duplicate" } else { "decreasing" };
            return Err(Error::parse(Some(w[1].1), format!("{what} time {}", w[1].0)));
        }
    }
    let n = stamps.len();
    let step = if n >= 2 {
        Some(stamps[1].0 - stamps[0].0)
    } else {
        None
    };
    if let Some(step) = step {
        for w in stamps.windows(2) {
            if ((w[1].0 - w[0].0 - step) / step).abs() > FILE_EQUIDISTANT_RTOL {
                return Err(Error::parse(
                    Some(w[1].1),
                    format!("rows are not equidistant: step {} vs {step}", w[1].0 - w[0].0),
                ));
            }
        }
    }
    // Average spacing, so rounding in printed times does not bias the rate.
    let step = step.map(|_| (stamps[n - 1].0 - stamps[0].0) / (n - 1) as f64);
    let fps = if by_frame {
        if let Some(step) = step {
            if (step - 1.0).abs() > FILE_EQUIDISTANT_RTOL {
                return Err(Error::parse(None, "frame indices must increase by 1"));
            }
        }
        frame_rate.ok_or_else(|| Error::validation("a frame-indexed file needs an explicit frame rate"))?
    } else {
        let inferred = step.map(|s| snap_frame_rate(1.0 / s));
        match (inferred, frame_rate) {
            (Some(i), Some(given)) if ((i - given) / given).abs() > FILE_EQUIDISTANT_RTOL => {
                return Err(Error::validation(format!(
                    "frame rate {given} disagrees with the file's spacing ({i})"
                )))
            }
            (_, Some(given)) => given,
            (Some(i), None) => i,
            (None, None) => return Err(Error::validation("a single-row file needs an explicit frame rate")),
        }
    };
    let t0 = if by_frame { stamps[0].0 / fps } else { stamps[0].0 };
    let times = (0..n).map(|k| t0 + k as f64 / fps).collect();
    let tg = TimeGrid::from_times(times, fps)?;
    let matrix = DMatrix::from_row_slice(n, ids.len(), &values);
    Dataset::new(matrix, tg, ids)
}

fn parse_number(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(Some(line), format!("{field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(Some(line), format!("non-finite value {field:?}")));
    }
    Ok(v)
}

pub fn write_csv_dataset(dataset: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(dataset.slice_ids().iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for (k, t) in dataset.time_grid().times().iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(dataset.values().row(k).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(None, format!("{other:?}")),
    }
}

/// JSON dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub schema_version: u32,
    pub frame_rate: f64,
    /// Time of the first frame in seconds.
    #[serde(default)]
    pub t0: f64,
    pub slices: Vec<SliceFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceFile {
    pub id: String,
    pub values: Vec<f64>,
}

impl DatasetFile {
    pub fn from_dataset(d: &Dataset) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            frame_rate: d.time_grid().frame_rate(),
            t0: d.time_grid().times()[0],
            slices: d
                .slice_ids()
                .iter()
                .enumerate()
                .map(|(l, id)| SliceFile {
                    id: id.clone(),
                    values: d.slice(l),
                })
                .collect(),
        }
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        check_schema(self.schema_version)?;
        let n = self.slices.first().map(|s| s.values.len()).unwrap_or(0);
        if let Some(s) = self.slices.iter().find(|s| s.values.len() != n) {
            return Err(Error::parse(
                None,
                format!("slice {:?} has {} values, expected {n}", s.id, s.values.len()),
            ));
        }
        let times = (0..n).map(|k| self.t0 + k as f64 / self.frame_rate).collect();
        let tg = TimeGrid::from_times(times, self.frame_rate)?;
        let l = self.slices.len();
        let values = DMatrix::from_fn(n, l, |k, c| self.slices[c].values[k]);
        Dataset::new(values, tg, self.slices.into_iter().map(|s| s.id).collect())
    }
}

pub fn read_json_dataset(reader: impl Read) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_reader(reader)?;
    file.into_dataset()
}

fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::parse(
            None,
            format!("schema version {version} is not supported (expected {SCHEMA_VERSION})"),
        ));
    }
    Ok(())
}

/// Common header of every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: u32,
    pub kind: String,
    pub toolkit_version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
}

impl Envelope {
    pub fn new(kind: &str, config: &impl Serialize, seeds: BTreeMap<String, u64>) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config: serde_json::to_value(config)?,
            seeds,
        })
    }

    fn check(&self, kind: &str) -> Result<()> {
        check_schema(self.schema_version)?;
        if self.kind != kind {
            return Err(Error::parse(None, format!("expected a {kind} artifact, found {:?}", self.kind)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub body: T,
}

impl<T: Serialize + DeserializeOwned> Artifact<T> {
    pub fn new(kind: &str, config: &impl Serialize, seeds: BTreeMap<String, u64>, body: T) -> Result<Self> {
        Ok(Self {
            envelope: Envelope::new(kind, config, seeds)?,
            body,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, kind: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        a.envelope.check(kind)?;
        Ok(a)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?, kind)
    }
}

pub mod kind {
    pub const PRIOR: &str = "prior";
    pub const PLAN: &str = "plan";
    pub const CURVE: &str = "curve";
    pub const REPORT: &str = "evaluation-report";
    pub const WSC: &str = "wsc";
}

/// Fitted and pruned prior with the variance spectrum as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBody {
    pub frame_rate: f64,
    pub n: usize,
    pub slice_ids: Vec<String>,
    pub frequencies: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma2: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub final_epsilon: f64,
    pub evidence_trace: Vec<f64>,
    pub pruned: PrunedPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedPrior {
    pub threshold_ratio: f64,
    pub kept_indices: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma2: f64,
}

impl PrunedPrior {
    pub fn from_model(p: &PrunedModel) -> Self {
        Self {
            threshold_ratio: p.threshold_ratio,
            kept_indices: p.kept_frequency_indices.clone(),
            frequencies: p.kept_frequencies().to_vec(),
            alpha: p.hyper.alpha.clone(),
            sigma2: p.hyper.sigma2,
        }
    }

    /// Planner model on the grid `t_k = k / frame_rate`, `k < n`.
    pub fn planner_model(&self, n: usize, frame_rate: f64) -> Result<PlannerModel> {
        if self.frequencies.len() != self.alpha.len() {
            return Err(Error::parse(
                None,
                format!(
                    "{} frequencies but {} variances",
                    self.frequencies.len(),
                    self.alpha.len()
                ),
            ));
        }
        let tg = TimeGrid::new(n, frame_rate)?;
        PlannerModel::from_frequencies(&tg, self.frequencies.clone(), self.alpha.clone(), self.sigma2)
    }
}

impl PriorBody {
    pub fn new(dataset: &Dataset, grid: &FrequencyGrid, fit: &PriorFit, pruned: &PrunedModel) -> Self {
        Self {
            frame_rate: dataset.time_grid().frame_rate(),
            n: dataset.n(),
            slice_ids: dataset.slice_ids().to_vec(),
            frequencies: grid.frequencies().to_vec(),
            alpha: fit.hyper.alpha.clone(),
            sigma2: fit.hyper.sigma2,
            iterations_used: fit.iterations_used,
            converged: fit.converged,
            final_epsilon: fit.final_epsilon,
            evidence_trace: fit.evidence_trace.clone(),
            pruned: PrunedPrior::from_model(pruned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanBody {
    pub n: usize,
    pub frame_rate: f64,
    pub measure: crate::planner::SpreadMeasure,
    pub direction: crate::planner::Direction,
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    pub prior_spread: f64,
    pub spreads: Vec<f64>,
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub index: usize,
    pub value: f64,
}

/// Labels file: `{"labels": [{"index": 3, "value": 1.2}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsFile {
    pub labels: Vec<LabeledPoint>,
}

pub fn read_labels(path: &Path) -> Result<LabelsFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Posterior curve as columns, with the `±band_k` std band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBody {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub band_k: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub labeled: Vec<LabeledPoint>,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub dataset: String,
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]`; the top edge is inclusive.
    pub fn of(values: &[f64], bins: usize) -> Self {
        if values.is_empty() || bins == 0 {
            return Self {
                edges: vec![],
                counts: vec![],
            };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|b| lo + b as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum WscBody {
    Exact {
        constant: f64,
        triples: u64,
        argmax_x: Vec<usize>,
        argmax_y: Vec<usize>,
        argmax_i: usize,
    },
    Estimate {
        max_ratio: f64,
        fraction_above_one: f64,
        sample_count: usize,
        histogram: Histogram,
        samples: Vec<f64>,
    },
}

/// Settings of a fit or evaluation run, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub format: Option<DatasetFormat>,
    #[serde(default)]
    pub frame_rate: Option<f64>,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default = "default_prune_ratio")]
    pub prune_ratio: f64,
    #[serde(default)]
    pub measure: crate::planner::SpreadMeasure,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub nll_scope: crate::eval::NllScope,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_m_max() -> usize {
    100
}

fn default_spacing() -> f64 {
    0.075
}

fn default_prune_ratio() -> f64 {
    DEFAULT_PRUNE_RATIO
}

fn default_k_max() -> usize {
    15
}

fn default_draws() -> usize {
    1000
}

impl RunConfig {
    /// Reads a config; relative paths resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.dataset.is_relative() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.is_file() {
            return Err(Error::validation(format!("dataset {} does not exist", self.dataset.display())));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::validation(format!("spacing must be positive, got {}", self.spacing)));
        }
        if !(self.prune_ratio.is_finite() && (0.0..=1.0).contains(&self.prune_ratio)) {
            return Err(Error::validation(format!(
                "prune ratio must be in [0, 1], got {}",
                self.prune_ratio
            )));
        }
        if self.k_max == 0 {
            return Err(Error::validation("k_max must be at least 1"));
        }
        if self.draws == 0 {
            return Err(Error::validation("draws must be at least 1"));
        }
        self.em.validate()
    }
}

/// Output location: absolute paths as given, relative ones under
/// `out_dir`, else `$LABELWISE_OUT_DIR`, else the working directory.
pub fn resolve_output(path: Option<&Path>, default_name: &str, out_dir: Option<&Path>) -> PathBuf {
    let file = path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(default_name));
    if file.is_absolute() {
        return file;
    }
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
    match dir {
        Some(d) => d.join(file),
        None => file,
    }
}
