//! End-to-end analysis runs driven by one serializable configuration.
//!
//! A [`RunConfig`] describes a single country: where the panel comes from
//! (a CSV file or the synthetic generator), how to bin each dimension,
//! the period boundaries, every numerical knob, and which stages to
//! write. [`run_pipeline`] executes the requested stages in dependency
//! order and drops one JSON artifact (plus a CSV for grid-shaped output)
//! per stage under `out/<country>/`. [`compare_countries`] runs several
//! configurations through the same analysis and aligns the headline
//! numbers into one table.
//!
//! Artifacts are reproducible: identical config and inputs produce
//! byte-identical files. Nothing here records timestamps or hostnames,
//! every collection serializes in a deterministic order, and floats are
//! printed in the shortest form that round-trips. Each artifact embeds
//! the configuration hash, the crate version, and the shared numeric
//! parameters so downstream tooling can verify that two files came from
//! the same run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::{
    bootstrap_uncertainty, estimate_mle, homogeneity_check, memory_length_comparison,
    HomogeneityReport, MemoryReport, TransitionModel, TransitionModelData, DEFAULT_ETA,
};
use crate::interventions::{retention_curve, run_arms, welfare_rank, PovertyDef};
use crate::landscape::{compute_landscape, stationary_of_matrix, Neighborhood};
use crate::metrics::{
    compute_metrics, escape_time_distribution, mfpt_set, mixing_time, EscapeDistribution,
    MetricsOptions, MetricsReport, MixingNorm, MixingTime, SetWeighting, MIXING_CAP,
    MIXING_EPSILON, TAU_MIX_RATE,
};
use crate::panel::{
    extract_transitions, load_panel, write_panel_csv, IngestReport, PanelDataset, Schema,
    TransitionRecord,
};
use crate::shock::{shock_report, ShockOptions, ShockReport, RECOVERY_CAP, RECOVERY_EPSILON,
    SHOCK_APPLICATIONS};
use crate::state_space::{fit_equidistant, fit_ordinal, fit_percentile, StateSpace};
use crate::synth::{generate_panel, SynthOutput, SynthSpec};

/// Crate version stamped into every artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default policy horizon in waves (the conventional five-year window).
pub const DEFAULT_HORIZON: usize = 5;

/// Default length of the first-passage distribution written by the
/// escape stage.
pub const DEFAULT_ESCAPE_HORIZON: usize = 200;

/// Holdout sequences scored per order by the memory-length comparison.
const MEMORY_HOLDOUT: usize = 256;

// ---------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------

/// Binning request for one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BinningConfig {
    /// Equal-width bins over the observed range.
    Equidistant { k: usize },
    /// Equal-mass bins from sample quantiles.
    Percentile { k: usize },
    /// One bin per distinct observed value.
    Ordinal,
}

/// One dimension of the state space: the panel column and how to bin it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionConfig {
    pub name: String,
    #[serde(flatten)]
    pub binning: BinningConfig,
}

/// Numeric knobs shared by every stage and stamped into every artifact.
/// Two countries are comparable only when these match exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    /// Mixing-time threshold.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Decay rate of the bounded mixing transform.
    #[serde(default = "default_rate")]
    pub k: f64,
    /// Regularization mass added to every transition count.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Policy horizon in waves (return risk, retention).
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Distance used by mixing-time searches.
    #[serde(default)]
    pub norm: MixingNorm,
}

fn default_epsilon() -> f64 {
    MIXING_EPSILON
}

fn default_rate() -> f64 {
    TAU_MIX_RATE
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            k: default_rate(),
            eta: default_eta(),
            horizon: default_horizon(),
            norm: MixingNorm::default(),
        }
    }
}

/// Household-subsampling settings for the estimate stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub omit_fraction: f64,
}

/// Which period plays the pre-shock kernel and which the shocked one,
/// as zero-based indices into the periods cut by
/// [`RunConfig::period_boundaries`]. Equal indices give a null shock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockSplit {
    pub pre_period: usize,
    pub shock_period: usize,
    /// Divergence threshold that counts as recovered.
    #[serde(default = "default_recovery_epsilon")]
    pub epsilon: f64,
    /// How many times the shocked kernel displaces the stationary state.
    #[serde(default = "default_applications")]
    pub applications: u32,
    /// Iteration cap for the relaxation.
    #[serde(default = "default_recovery_cap")]
    pub cap: u64,
}

fn default_recovery_epsilon() -> f64 {
    RECOVERY_EPSILON
}

fn default_applications() -> u32 {
    SHOCK_APPLICATIONS
}

fn default_recovery_cap() -> u64 {
    RECOVERY_CAP
}

/// Settings for the counterfactual intervention stage. Dimensions are
/// named, not indexed, so configs survive reordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterveneConfig {
    pub income: String,
    pub health: String,
    /// Income percentile the single and combined arms start from.
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    /// Boost sizes in percentile fractions for the retention curves.
    #[serde(default = "default_boosts")]
    pub boosts: Vec<f64>,
}

fn default_percentile() -> f64 {
    0.25
}

fn default_boosts() -> Vec<f64> {
    vec![0.05, 0.10, 0.20, 0.40]
}

/// Pipeline stages. The declaration order is the dependency order, so
/// sorting a stage list schedules it correctly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Ingest,
    Bins,
    Estimate,
    Landscape,
    Metrics,
    Escape,
    Shock,
    Intervene,
}

impl Stage {
    /// Stable lowercase name used for artifact files and error labels.
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Bins => "bins",
            Stage::Estimate => "estimate",
            Stage::Landscape => "landscape",
            Stage::Metrics => "metrics",
            Stage::Escape => "escape",
            Stage::Shock => "shock",
            Stage::Intervene => "intervene",
        }
    }
}

/// Everything one country's analysis needs. Fully serializable; the
/// sha-256 of the serialized form (minus the output directory, which is
/// pure plumbing) is the run's identity and is embedded in every
/// artifact the run writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Country key (ISO 3166-1 alpha-2 in real runs); names the output
    /// subdirectory.
    pub country: String,
    /// Stages to write artifacts for. Prerequisites of a requested stage
    /// run implicitly without writing their own files.
    pub stages: Vec<Stage>,
    /// Panel CSV path. Mutually exclusive with `synth`.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Synthetic panel in place of a CSV input.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    /// Column mapping for CSV input.
    #[serde(default)]
    pub schema: Schema,
    /// State-space dimensions, a subset of the panel's columns.
    pub dimensions: Vec<DimensionConfig>,
    /// Waves splitting the span into periods; each boundary wave closes
    /// one period and opens the next.
    #[serde(default)]
    pub period_boundaries: Vec<i32>,
    #[serde(default)]
    pub params: MetricParams,
    /// Markov order of the estimated chain.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub bootstrap: Option<BootstrapConfig>,
    /// Interval length in waves for the time-homogeneity diagnostic.
    #[serde(default)]
    pub homogeneity_interval: Option<usize>,
    /// Candidate orders for the memory-length comparison; empty skips it.
    #[serde(default)]
    pub memory_orders: Vec<usize>,
    /// Poverty region used by the escape and shock stages and by
    /// cross-country comparison.
    #[serde(default)]
    pub poverty: PovertyDef,
    /// Length of the first-passage distribution the escape stage writes.
    #[serde(default = "default_escape_horizon")]
    pub escape_horizon: usize,
    #[serde(default)]
    pub shock: Option<ShockSplit>,
    #[serde(default)]
    pub intervene: Option<InterveneConfig>,
    /// Seed for everything stochastic (synthetic data, bootstrap,
    /// memory holdouts).
    #[serde(default)]
    pub seed: u64,
    /// Output root; artifacts land in `out/<country>/`.
    pub out: PathBuf,
}

fn default_order() -> usize {
    1
}

fn default_escape_horizon() -> usize {
    DEFAULT_ESCAPE_HORIZON
}

/// Hash of the canonical JSON form of the config, with the output
/// directory excluded so relocating a run does not change its identity.
pub fn config_hash(config: &RunConfig) -> Result<String> {
    let mut value = serde_json::to_value(config)?;
    if let Some(map) = value.as_object_mut() {
        map.remove("out");
    }
    let canonical = serde_json::to_string(&value)?;
    Ok(hex_digest(canonical.as_bytes()))
}

/// Hash of a state-space definition, recorded on estimated models so
/// consumers can detect a model applied to the wrong binning.
pub fn space_fingerprint(space: &StateSpace) -> Result<String> {
    let canonical = serde_json::to_string(space)?;
    Ok(hex_digest(canonical.as_bytes()))
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

// ---------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------

/// Envelope every stage artifact is wrapped in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_hash: String,
    pub tool_version: String,
    pub country: String,
    pub stage: String,
    pub params: MetricParams,
    pub seed: u64,
    pub body: T,
}

/// Body of `synth.json`: the generating spec, the ground-truth kernels,
/// and the ingest summary of the emitted panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthStage {
    pub spec: SynthSpec,
    pub truth: TransitionModelData,
    pub shock_truth: Option<TransitionModelData>,
    pub report: IngestReport,
}

/// Body of `ingest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestStage {
    /// `"synth"` or the input path as given.
    pub source: String,
    pub schema: Schema,
    pub report: IngestReport,
}

/// Body of `bins.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinsStage {
    pub fingerprint: String,
    pub space: StateSpace,
}

/// Entrywise spread of the bootstrap replicates, shaped for artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapStats {
    pub replicates: usize,
    pub omit_fraction: f64,
    pub max_std: f64,
    pub mean_std: f64,
    pub std: Vec<Vec<f64>>,
}

/// One per-period estimate with its wave window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodModel {
    pub start_wave: i32,
    pub end_wave: i32,
    pub model: TransitionModelData,
}

/// Body of `estimate.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateStage {
    /// Full-span regularized estimate.
    pub model: TransitionModelData,
    pub bootstrap: Option<BootstrapStats>,
    pub homogeneity: Option<HomogeneityReport>,
    pub memory: Option<MemoryReport>,
    pub periods: Vec<PeriodModel>,
}

/// One marginal chain's mixing summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalMixing {
    pub name: String,
    pub mixing: MixingTime,
    pub tau_mix: f64,
}

/// Body of `metrics.json`: joint-chain metrics plus the mixing time of
/// each dimension analyzed on its own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsStage {
    pub joint: MetricsReport,
    pub marginals: Vec<MarginalMixing>,
}

/// Body of `escape.json`: expected and distributional first passage out
/// of the poverty region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EscapeStage {
    /// Poverty region as base-state indices.
    pub poverty: Vec<usize>,
    /// Stationary mass of the poverty region.
    pub poverty_rate: f64,
    /// Stationary-weighted expected passage time out of the region.
    pub escape_time: f64,
    pub distribution: EscapeDistribution,
}

/// Body of `shock.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShockStage {
    pub pre_window: (i32, i32),
    pub shock_window: (i32, i32),
    pub report: ShockReport,
}

/// Body of `intervene.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterveneStage {
    pub arms: crate::interventions::InterventionReport,
    pub retention: crate::interventions::RetentionCurves,
}

/// What [`run_pipeline`] hands back: the run identity and every file it
/// wrote, in write order.
#[derive(Debug, Clone)]
pub struct RunBundle {
    pub config_hash: String,
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
}

// ---------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------

fn validate(config: &RunConfig) -> Result<()> {
    if config.country.is_empty() {
        return Err(Error::Param("country key must not be empty".into()));
    }
    if config.stages.is_empty() {
        return Err(Error::Param("stages: at least one stage is required".into()));
    }
    if config.dimensions.is_empty() {
        return Err(Error::Param("dimensions: at least one dimension is required".into()));
    }
    if config.order == 0 {
        return Err(Error::Param("order: model order must be at least 1".into()));
    }
    match (&config.input, &config.synth) {
        (Some(_), Some(_)) => {
            return Err(Error::Param(
                "input and synth are mutually exclusive; configure one panel source".into(),
            ));
        }
        (None, None) => {
            return Err(Error::Param(
                "no panel source: configure either input or synth".into(),
            ));
        }
        _ => {}
    }
    // Dimensions must name columns the panel will actually carry.
    let available: Vec<String> = match &config.synth {
        Some(spec) => spec.kernel.dim_names(),
        None => config.schema.dims.clone(),
    };
    for dim in &config.dimensions {
        if !available.contains(&dim.name) {
            return Err(Error::Param(format!(
                "dimensions: unknown dimension name '{}'; the panel carries {:?}",
                dim.name, available
            )));
        }
        match dim.binning {
            BinningConfig::Equidistant { k } | BinningConfig::Percentile { k } => {
                if k < 2 {
                    return Err(Error::Param(format!(
                        "dimensions: '{}' needs at least 2 bins, got {k}",
                        dim.name
                    )));
                }
            }
            BinningConfig::Ordinal => {}
        }
    }
    let mut sorted = config.period_boundaries.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != config.period_boundaries.len() || sorted != config.period_boundaries {
        return Err(Error::Param(
            "period_boundaries must be strictly increasing".into(),
        ));
    }
    if config.stages.contains(&Stage::Synth) && config.synth.is_none() {
        return Err(Error::Param(
            "synth stage requested without a synth spec".into(),
        ));
    }
    if config.stages.contains(&Stage::Shock) && config.shock.is_none() {
        return Err(Error::Param(
            "shock stage requested without a shock split".into(),
        ));
    }
    if config.stages.contains(&Stage::Intervene) && config.intervene.is_none() {
        return Err(Error::Param(
            "intervene stage requested without intervention settings".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Shared computation state
// ---------------------------------------------------------------------

/// Per-period wave windows paired with the models fitted inside them.
type PeriodFits = (Vec<(i32, i32)>, Vec<TransitionModel>);

/// Lazily computed products shared by the stages, so one run never
/// ingests, bins, or estimates twice.
struct Ctx<'c> {
    cfg: &'c RunConfig,
    panel: Option<PanelDataset>,
    synth: Option<SynthOutput>,
    space: Option<StateSpace>,
    records: Option<Vec<TransitionRecord>>,
    model: Option<TransitionModel>,
    periods: Option<PeriodFits>,
}

impl<'c> Ctx<'c> {
    fn new(cfg: &'c RunConfig) -> Self {
        Self {
            cfg,
            panel: None,
            synth: None,
            space: None,
            records: None,
            model: None,
            periods: None,
        }
    }

    fn ensure_panel(&mut self) -> Result<()> {
        if self.panel.is_some() {
            return Ok(());
        }
        match (&self.cfg.synth, &self.cfg.input) {
            (Some(spec), _) => {
                let mut spec = spec.clone();
                spec.seed = self.cfg.seed;
                let out = generate_panel(&spec)?;
                self.panel = Some(out.panel.clone());
                self.synth = Some(out);
            }
            (None, Some(path)) => {
                self.panel = Some(load_panel(path, &self.cfg.schema)?);
            }
            (None, None) => unreachable!("validate() requires a panel source"),
        }
        Ok(())
    }

    fn ensure_space(&mut self) -> Result<()> {
        if self.space.is_some() {
            return Ok(());
        }
        self.ensure_panel()?;
        let panel = self.panel.as_ref().unwrap();
        let mut dims = Vec::with_capacity(self.cfg.dimensions.len());
        for dim in &self.cfg.dimensions {
            let values = panel.dim_values(&dim.name)?;
            let spec = match dim.binning {
                BinningConfig::Equidistant { k } => fit_equidistant(&dim.name, &values, k)?,
                BinningConfig::Percentile { k } => fit_percentile(&dim.name, &values, k)?,
                BinningConfig::Ordinal => fit_ordinal(&dim.name, &values)?,
            };
            dims.push(spec);
        }
        self.space = Some(StateSpace::new(dims)?);
        Ok(())
    }

    fn ensure_model(&mut self) -> Result<()> {
        if self.model.is_some() {
            return Ok(());
        }
        self.ensure_space()?;
        let panel = self.panel.as_ref().unwrap();
        let space = self.space.as_ref().unwrap();
        let records = extract_transitions(panel, space, None)?;
        let model = estimate_mle(&records, space, self.cfg.order)?
            .regularize_irreducible(self.cfg.params.eta)?;
        self.records = Some(records);
        self.model = Some(model);
        Ok(())
    }

    /// Cut the observed wave span at the configured boundaries and fit a
    /// regularized model per period on the shared space. A boundary wave
    /// closes one period and opens the next.
    fn ensure_periods(&mut self) -> Result<()> {
        if self.periods.is_some() {
            return Ok(());
        }
        self.ensure_space()?;
        let panel = self.panel.as_ref().unwrap();
        let space = self.space.as_ref().unwrap();
        let (w0, w1) = match (panel.report.wave_min, panel.report.wave_max) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Param("panel has no observations".into())),
        };
        for &b in &self.cfg.period_boundaries {
            if b <= w0 || b >= w1 {
                return Err(Error::Param(format!(
                    "period boundary {b} outside the observed wave span {w0}..{w1}"
                )));
            }
        }
        let mut edges = vec![w0];
        edges.extend(&self.cfg.period_boundaries);
        edges.push(w1);
        let mut windows = Vec::with_capacity(edges.len() - 1);
        let mut models = Vec::with_capacity(edges.len() - 1);
        for w in edges.windows(2) {
            let window = (w[0], w[1]);
            let records = extract_transitions(panel, space, Some(window))?;
            let model = estimate_mle(&records, space, self.cfg.order)?
                .regularize_irreducible(self.cfg.params.eta)?
                .with_period(format!("{}..{}", window.0, window.1));
            windows.push(window);
            models.push(model);
        }
        self.periods = Some((windows, models));
        Ok(())
    }

    /// Base poverty states and their complement on the fitted space.
    fn poverty_sets(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let space = self.space.as_ref().unwrap();
        let poverty = self.cfg.poverty.resolve(space)?;
        let complement: Vec<usize> =
            (0..space.n_states()).filter(|s| !poverty.contains(s)).collect();
        if complement.is_empty() {
            return Err(Error::Param(
                "poverty region covers the whole state space; nothing to escape to".into(),
            ));
        }
        Ok((poverty, complement))
    }
}

// ---------------------------------------------------------------------
// Stage execution
// ---------------------------------------------------------------------

fn staged<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.name(),
            source: Box::new(other),
        },
    })
}

/// Run one country's configured stages and write their artifacts under
/// `out/<country>/`. Stages run in dependency order regardless of the
/// order requested; duplicates collapse. Any failure is labeled with the
/// stage it happened in.
pub fn run_pipeline(config: &RunConfig) -> Result<RunBundle> {
    validate(config)?;
    let hash = config_hash(config)?;
    let dir = config.out.join(&config.country);
    fs::create_dir_all(&dir)?;

    let mut stages = config.stages.clone();
    stages.sort_unstable();
    stages.dedup();

    let mut ctx = Ctx::new(config);
    let mut written = Vec::new();
    for stage in stages {
        let files = staged(stage, execute_stage(stage, &mut ctx, &hash, &dir))?;
        written.extend(files);
    }
    Ok(RunBundle {
        config_hash: hash,
        dir,
        written,
    })
}

fn execute_stage(stage: Stage, ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    match stage {
        Stage::Synth => run_synth(ctx, hash, dir),
        Stage::Ingest => run_ingest(ctx, hash, dir),
        Stage::Bins => run_bins(ctx, hash, dir),
        Stage::Estimate => run_estimate(ctx, hash, dir),
        Stage::Landscape => run_landscape(ctx, hash, dir),
        Stage::Metrics => run_metrics(ctx, hash, dir),
        Stage::Escape => run_escape(ctx, hash, dir),
        Stage::Shock => run_shock(ctx, hash, dir),
        Stage::Intervene => run_intervene(ctx, hash, dir),
    }
}

fn envelope<T>(ctx: &Ctx, hash: &str, stage: Stage, body: T) -> Artifact<T> {
    Artifact {
        config_hash: hash.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        country: ctx.cfg.country.clone(),
        stage: stage.name().to_string(),
        params: ctx.cfg.params,
        seed: ctx.cfg.seed,
        body,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Numerical(format!("csv buffer: {e}")))?;
    fs::write(path, bytes)?;
    Ok(())
}

fn run_synth(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_panel()?;
    let out = ctx
        .synth
        .as_ref()
        .expect("validate() ties the synth stage to a synth spec");
    let fingerprint = space_fingerprint(&out.space)?;
    let mut spec = ctx.cfg.synth.clone().unwrap();
    spec.seed = ctx.cfg.seed;
    let body = SynthStage {
        spec,
        truth: TransitionModelData::from_model(&out.truth, Some(fingerprint.clone())),
        shock_truth: out
            .shock_truth
            .as_ref()
            .map(|m| TransitionModelData::from_model(m, Some(fingerprint))),
        report: out.panel.report.clone(),
    };
    let json = dir.join("synth.json");
    write_json(&json, &envelope(ctx, hash, Stage::Synth, body))?;

    let schema = Schema {
        weight: Some("weight".into()),
        dims: out.panel.dims.clone(),
        ..ctx.cfg.schema.clone()
    };
    let mut buf = Vec::new();
    write_panel_csv(&out.panel, &schema, &mut buf)?;
    let csv_path = dir.join("synth.csv");
    fs::write(&csv_path, buf)?;
    Ok(vec![json, csv_path])
}

fn run_ingest(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_panel()?;
    let panel = ctx.panel.as_ref().unwrap();
    let source = match (&ctx.cfg.synth, &ctx.cfg.input) {
        (Some(_), _) => "synth".to_string(),
        (None, Some(path)) => path.display().to_string(),
        (None, None) => unreachable!(),
    };
    let body = IngestStage {
        source,
        schema: ctx.cfg.schema.clone(),
        report: panel.report.clone(),
    };
    let json = dir.join("ingest.json");
    write_json(&json, &envelope(ctx, hash, Stage::Ingest, body))?;
    Ok(vec![json])
}

fn run_bins(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_space()?;
    let space = ctx.space.as_ref().unwrap();
    let body = BinsStage {
        fingerprint: space_fingerprint(space)?,
        space: space.clone(),
    };
    let json = dir.join("bins.json");
    write_json(&json, &envelope(ctx, hash, Stage::Bins, body))?;
    Ok(vec![json])
}

/// History label for one conditional row: base-state labels oldest to
/// newest, joined by `>`.
fn history_label(space: &StateSpace, row: usize, order: usize) -> String {
    let n = space.n_states();
    let mut digits = Vec::with_capacity(order);
    let mut r = row;
    for _ in 0..order {
        digits.push(r % n);
        r /= n;
    }
    digits.reverse();
    digits
        .iter()
        .map(|&s| space.label(s))
        .collect::<Vec<_>>()
        .join(" > ")
}

fn run_estimate(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_model()?;
    if !ctx.cfg.period_boundaries.is_empty() {
        ctx.ensure_periods()?;
    }
    let space = ctx.space.as_ref().unwrap();
    let model = ctx.model.as_ref().unwrap();
    let records = ctx.records.as_ref().unwrap();
    let panel = ctx.panel.as_ref().unwrap();
    let fingerprint = space_fingerprint(space)?;

    let bootstrap = match ctx.cfg.bootstrap {
        Some(b) => {
            let s = bootstrap_uncertainty(
                records,
                space,
                b.omit_fraction,
                b.replicates,
                ctx.cfg.seed,
            )?;
            Some(BootstrapStats {
                replicates: s.replicates,
                omit_fraction: s.omit_fraction,
                max_std: s.max_std,
                mean_std: s.mean_std,
                std: (0..s.std.nrows())
                    .map(|i| (0..s.std.ncols()).map(|j| s.std[(i, j)]).collect())
                    .collect(),
            })
        }
        None => None,
    };
    let homogeneity = match ctx.cfg.homogeneity_interval {
        Some(interval) => Some(homogeneity_check(panel, space, interval)?),
        None => None,
    };
    let memory = if ctx.cfg.memory_orders.is_empty() {
        None
    } else {
        Some(memory_length_comparison(
            panel,
            space,
            &ctx.cfg.memory_orders,
            MEMORY_HOLDOUT,
            ctx.cfg.seed,
        )?)
    };
    let periods = match &ctx.periods {
        Some((windows, models)) => windows
            .iter()
            .zip(models)
            .map(|(&(a, b), m)| PeriodModel {
                start_wave: a,
                end_wave: b,
                model: TransitionModelData::from_model(m, Some(fingerprint.clone())),
            })
            .collect(),
        None => Vec::new(),
    };
    let body = EstimateStage {
        model: TransitionModelData::from_model(model, Some(fingerprint)),
        bootstrap,
        homogeneity,
        memory,
        periods,
    };
    let json = dir.join("estimate.json");
    write_json(&json, &envelope(ctx, hash, Stage::Estimate, body))?;

    let p = model.p();
    let mut header = vec!["history".to_string()];
    header.extend((0..model.base_n()).map(|j| space.label(j)));
    let rows: Vec<Vec<String>> = (0..p.nrows())
        .map(|i| {
            let mut row = vec![history_label(space, i, model.order())];
            row.extend((0..p.ncols()).map(|j| p[(i, j)].to_string()));
            row
        })
        .collect();
    let csv_path = dir.join("estimate.csv");
    write_csv(&csv_path, &header, &rows)?;
    Ok(vec![json, csv_path])
}

fn run_landscape(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_model()?;
    let space = ctx.space.as_ref().unwrap();
    let model = ctx.model.as_ref().unwrap();
    let report = compute_landscape(model, space, Neighborhood::Four)?;

    let mut header: Vec<String> = ["state", "label", "pi", "phi"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if report.basins.is_some() {
        header.push("basin".to_string());
    }
    let rows: Vec<Vec<String>> = (0..report.pi.len())
        .map(|s| {
            let mut row = vec![
                s.to_string(),
                space.label(s),
                report.pi[s].to_string(),
                report.phi[s].to_string(),
            ];
            if let Some(b) = &report.basins {
                row.push(b.basin[s].to_string());
            }
            row
        })
        .collect();

    let json = dir.join("landscape.json");
    write_json(&json, &envelope(ctx, hash, Stage::Landscape, report))?;
    let csv_path = dir.join("landscape.csv");
    write_csv(&csv_path, &header, &rows)?;
    Ok(vec![json, csv_path])
}

/// Fit an order-1 chain to a single dimension of the panel and measure
/// its mixing time. The paper-style 1D-versus-joint comparison comes
/// from analyzing each dimension in isolation, not from marginalizing
/// the joint kernel.
fn marginal_mixing(ctx: &Ctx, name: &str) -> Result<MarginalMixing> {
    let panel = ctx.panel.as_ref().unwrap();
    let space = ctx.space.as_ref().unwrap();
    let sub = space.project(&[name])?;
    let records = extract_transitions(panel, &sub, None)?;
    let model = estimate_mle(&records, &sub, 1)?.regularize_irreducible(ctx.cfg.params.eta)?;
    let mixing = mixing_time(
        model.p(),
        ctx.cfg.params.epsilon,
        MIXING_CAP,
        ctx.cfg.params.norm,
    )?;
    let tau = mixing.tau(ctx.cfg.params.k)?;
    Ok(MarginalMixing {
        name: name.to_string(),
        mixing,
        tau_mix: tau,
    })
}

fn run_metrics(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_model()?;
    let model = ctx.model.as_ref().unwrap();
    let options = MetricsOptions {
        epsilon: ctx.cfg.params.epsilon,
        cap: MIXING_CAP,
        norm: ctx.cfg.params.norm,
        k: ctx.cfg.params.k,
    };
    let joint = compute_metrics(&model.augmented()?, &options)?;
    let names: Vec<String> = ctx.cfg.dimensions.iter().map(|d| d.name.clone()).collect();
    let marginals = names
        .iter()
        .map(|n| marginal_mixing(ctx, n))
        .collect::<Result<Vec<_>>>()?;
    let body = MetricsStage { joint, marginals };

    let mut header = vec!["from".to_string()];
    header.extend((0..body.joint.mfpt.len()).map(|j| format!("to_{j}")));
    let rows: Vec<Vec<String>> = body
        .joint
        .mfpt
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = vec![i.to_string()];
            r.extend(row.iter().map(|v| v.to_string()));
            r
        })
        .collect();

    let json = dir.join("metrics.json");
    write_json(&json, &envelope(ctx, hash, Stage::Metrics, body))?;
    let csv_path = dir.join("metrics.csv");
    write_csv(&csv_path, &header, &rows)?;
    Ok(vec![json, csv_path])
}

fn run_escape(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_model()?;
    let model = ctx.model.as_ref().unwrap();
    let (poverty, complement) = ctx.poverty_sets()?;
    let aug = model.augmented()?;
    let from = model.expanded_states(&poverty)?;
    let targets = model.expanded_states(&complement)?;
    let pi = stationary_of_matrix(&aug)?;
    let poverty_rate: f64 = from.iter().map(|&s| pi[s]).sum();
    let escape_time = mfpt_set(&aug, &from, &targets, SetWeighting::Stationary)?;
    let distribution = escape_time_distribution(
        &aug,
        &from,
        &targets,
        SetWeighting::Stationary,
        ctx.cfg.escape_horizon,
    )?;
    let body = EscapeStage {
        poverty,
        poverty_rate,
        escape_time,
        distribution,
    };

    let mut cdf = 0.0;
    let rows: Vec<Vec<String>> = body
        .distribution
        .pmf
        .iter()
        .enumerate()
        .map(|(t, &m)| {
            cdf += m;
            vec![t.to_string(), m.to_string(), cdf.to_string()]
        })
        .collect();
    let header = vec!["t".to_string(), "pmf".to_string(), "cdf".to_string()];

    let json = dir.join("escape.json");
    write_json(&json, &envelope(ctx, hash, Stage::Escape, body))?;
    let csv_path = dir.join("escape.csv");
    write_csv(&csv_path, &header, &rows)?;
    Ok(vec![json, csv_path])
}

fn run_shock(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_periods()?;
    let split = ctx.cfg.shock.as_ref().unwrap();
    let (windows, models) = ctx.periods.as_ref().unwrap();
    let n = models.len();
    if split.pre_period >= n || split.shock_period >= n {
        return Err(Error::Param(format!(
            "shock split indexes period {} but only {n} periods are configured",
            split.pre_period.max(split.shock_period)
        )));
    }
    let pre = &models[split.pre_period];
    let shocked = &models[split.shock_period];
    let space = ctx.space.as_ref().unwrap();
    let (poverty, complement) = ctx.poverty_sets()?;
    let rank = welfare_rank(space, None)?;
    let options = ShockOptions {
        epsilon: split.epsilon,
        applications: split.applications,
        cap: split.cap,
    };
    let report = shock_report(
        pre,
        shocked,
        &options,
        Some((&poverty, &complement)),
        Some(&rank),
    )?;
    let body = ShockStage {
        pre_window: windows[split.pre_period],
        shock_window: windows[split.shock_period],
        report,
    };
    let json = dir.join("shock.json");
    write_json(&json, &envelope(ctx, hash, Stage::Shock, body))?;
    Ok(vec![json])
}

fn run_intervene(ctx: &mut Ctx, hash: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    ctx.ensure_model()?;
    let spec = ctx.cfg.intervene.as_ref().unwrap();
    let space = ctx.space.as_ref().unwrap();
    let model = ctx.model.as_ref().unwrap();
    let income = space
        .dim(&spec.income)
        .ok_or_else(|| Error::Param(format!("intervene: unknown dimension '{}'", spec.income)))?
        .0;
    let health = space
        .dim(&spec.health)
        .ok_or_else(|| Error::Param(format!("intervene: unknown dimension '{}'", spec.health)))?
        .0;
    let arms = run_arms(
        model,
        space,
        income,
        health,
        &ctx.cfg.poverty,
        spec.percentile,
        ctx.cfg.params.horizon,
    )?;
    let retention = retention_curve(
        model,
        space,
        income,
        health,
        &spec.boosts,
        ctx.cfg.params.horizon,
    )?;
    let body = InterveneStage { arms, retention };

    let mut header = vec!["health_quintile".to_string()];
    header.extend(body.retention.boosts.iter().map(|b| format!("boost_{b}")));
    let rows: Vec<Vec<String>> = body
        .retention
        .values
        .iter()
        .enumerate()
        .map(|(q, row)| {
            let mut r = vec![(q + 1).to_string()];
            r.extend(row.iter().map(|v| v.to_string()));
            r
        })
        .collect();

    let json = dir.join("intervene.json");
    write_json(&json, &envelope(ctx, hash, Stage::Intervene, body))?;
    let csv_path = dir.join("intervene.csv");
    write_csv(&csv_path, &header, &rows)?;
    Ok(vec![json, csv_path])
}

// ---------------------------------------------------------------------
// Cross-country comparison
// ---------------------------------------------------------------------

/// One country's headline numbers, aligned for scatter plots of escape
/// time against an external deprivation rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub country: String,
    /// Stationary mass of the poverty region (model-implied deprivation).
    pub poverty_rate: f64,
    /// Expected passage time out of the poverty region.
    pub escape_time: f64,
    pub mixing_joint: MixingTime,
    pub marginal_mixing: Vec<MarginalMixing>,
    pub shorrocks: f64,
    /// Recovery steps of the configured shock; `None` when the config
    /// has no shock split or the relaxation hit its cap.
    pub recovery_steps: Option<u64>,
    /// Externally supplied deprivation rate (e.g. AROPE), when given.
    pub deprivation_rate: Option<f64>,
}

/// Comparison output: the shared parameters and one row per country in
/// input order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareTable {
    pub tool_version: String,
    pub params: MetricParams,
    pub rows: Vec<CompareRow>,
}

fn compare_row(
    cfg: &RunConfig,
    deprivation: Option<&BTreeMap<String, f64>>,
) -> Result<CompareRow> {
    validate(cfg)?;
    let mut ctx = Ctx::new(cfg);
    ctx.ensure_model()?;
    let model = ctx.model.as_ref().unwrap();
    let aug = model.augmented()?;
    let (poverty, complement) = ctx.poverty_sets()?;
    let from = model.expanded_states(&poverty)?;
    let targets = model.expanded_states(&complement)?;
    let pi = stationary_of_matrix(&aug)?;
    let poverty_rate: f64 = from.iter().map(|&s| pi[s]).sum();
    let escape_time = mfpt_set(&aug, &from, &targets, SetWeighting::Stationary)?;
    let mixing_joint = mixing_time(&aug, cfg.params.epsilon, MIXING_CAP, cfg.params.norm)?;
    let marginal = cfg
        .dimensions
        .iter()
        .map(|d| marginal_mixing(&ctx, &d.name))
        .collect::<Result<Vec<_>>>()?;
    let shorrocks = crate::metrics::shorrocks(&aug)?.raw;
    let recovery_steps = match cfg.shock {
        Some(split) => {
            ctx.ensure_periods()?;
            let (_, models) = ctx.periods.as_ref().unwrap();
            let n = models.len();
            if split.pre_period >= n || split.shock_period >= n {
                return Err(Error::Param(format!(
                    "shock split indexes period {} but only {n} periods are configured",
                    split.pre_period.max(split.shock_period)
                )));
            }
            let options = ShockOptions {
                epsilon: split.epsilon,
                applications: split.applications,
                cap: split.cap,
            };
            crate::shock::recovery_time(
                &models[split.pre_period],
                &models[split.shock_period],
                &options,
            )?
            .steps
        }
        None => None,
    };
    Ok(CompareRow {
        country: cfg.country.clone(),
        poverty_rate,
        escape_time,
        mixing_joint,
        marginal_mixing: marginal,
        shorrocks,
        recovery_steps,
        deprivation_rate: deprivation.and_then(|m| m.get(&cfg.country).copied()),
    })
}

/// Analyze each configured country and align the headline numbers into
/// one table. All configs must share metric parameters and model order;
/// `deprivation` optionally joins an external rate (e.g. AROPE) by
/// country key, with misses left null.
pub fn compare_countries(
    configs: &[RunConfig],
    deprivation: Option<&BTreeMap<String, f64>>,
) -> Result<CompareTable> {
    if configs.len() < 2 {
        return Err(Error::Param(format!(
            "comparison needs at least 2 countries, got {}",
            configs.len()
        )));
    }
    let reference = &configs[0];
    for cfg in &configs[1..] {
        if cfg.params != reference.params || cfg.order != reference.order {
            return Err(Error::Param(format!(
                "countries are not comparable: metric parameters differ between '{}' and '{}'",
                reference.country, cfg.country
            )));
        }
    }
    let rows: Vec<CompareRow> = configs
        .par_iter()
        .map(|cfg| compare_row(cfg, deprivation))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareTable {
        tool_version: TOOL_VERSION.to_string(),
        params: reference.params,
        rows,
    })
}

/// Write `compare.json` and `compare.csv` under `dir`; returns the paths.
pub fn write_compare(dir: &Path, table: &CompareTable) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json = dir.join("compare.json");
    write_json(&json, table)?;

    let mut header: Vec<String> = [
        "country",
        "poverty_rate",
        "escape_time",
        "mixing_joint",
        "shorrocks",
        "recovery_steps",
        "deprivation_rate",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let dim_names: Vec<String> = table
        .rows
        .first()
        .map(|r| r.marginal_mixing.iter().map(|m| m.name.clone()).collect())
        .unwrap_or_default();
    for name in &dim_names {
        header.push(format!("mixing_{name}"));
    }
    let fmt_steps = |s: Option<u64>| s.map(|v| v.to_string()).unwrap_or_default();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.country.clone(),
                r.poverty_rate.to_string(),
                r.escape_time.to_string(),
                fmt_steps(r.mixing_joint.steps),
                r.shorrocks.to_string(),
                fmt_steps(r.recovery_steps),
                r.deprivation_rate.map(|v| v.to_string()).unwrap_or_default(),
            ];
            for m in &r.marginal_mixing {
                row.push(fmt_steps(m.mixing.steps));
            }
            row
        })
        .collect();
    let csv_path = dir.join("compare.csv");
    write_csv(&csv_path, &header, &rows)?;
    Ok(vec![json, csv_path])
}
