//! Longitudinal panel ingestion.
//!
//! Input is household-by-wave CSV in the usual survey layout: one row per
//! (household, year) with one column per welfare dimension and an optional
//! sampling weight. Rows with unparseable fields or duplicate
//! (household, wave) keys are rejected and counted; empty value cells are
//! missing values, which keep the observation but exclude it from any
//! transition touching it. Transitions are only formed between consecutive
//! waves (t to t+1); gaps in a household's wave coverage produce none.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state_space::StateSpace;

/// Column mapping for a panel CSV. Deserializing fills omitted fields
/// with the EU-SILC-like defaults of [`Schema::default_columns`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_household_column")]
    pub household: String,
    #[serde(default = "default_wave_column")]
    pub wave: String,
    /// Weight column. The default name is tolerated when absent (weights
    /// become 1.0); a non-default name must exist in the header.
    #[serde(default = "default_weight_column")]
    pub weight: Option<String>,
    /// Dimension columns, in state-space order.
    #[serde(default = "default_dim_columns")]
    pub dims: Vec<String>,
}

fn default_household_column() -> String {
    "household_id".into()
}

fn default_wave_column() -> String {
    "year".into()
}

fn default_weight_column() -> Option<String> {
    Some(DEFAULT_WEIGHT_COLUMN.into())
}

fn default_dim_columns() -> Vec<String> {
    vec!["income".into(), "health".into(), "education".into()]
}

impl Default for Schema {
    fn default() -> Self {
        Self::default_columns()
    }
}

impl Schema {
    /// The EU-SILC-like default: `household_id, year, income, health,
    /// education[, weight]`.
    pub fn default_columns() -> Self {
        Schema {
            household: "household_id".into(),
            wave: "year".into(),
            weight: Some("weight".into()),
            dims: vec!["income".into(), "health".into(), "education".into()],
        }
    }

    pub fn with_dims(dims: &[&str]) -> Self {
        Schema {
            dims: dims.iter().map(|s| s.to_string()).collect(),
            ..Self::default_columns()
        }
    }
}

const DEFAULT_WEIGHT_COLUMN: &str = "weight";

/// One household-wave observation. `values[d]` is `None` when the cell for
/// dimension `d` was empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub wave: i32,
    pub values: Vec<Option<f64>>,
    pub weight: f64,
}

impl Observation {
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_some())
    }
}

/// All observations of one household, sorted by wave.
#[derive(Debug, Clone, PartialEq)]
pub struct Household {
    pub id: String,
    pub obs: Vec<Observation>,
}

/// Ingest summary attached to every loaded panel.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub households: usize,
    pub observations: usize,
    pub complete_observations: usize,
    /// (dimension name, count of observations missing it)
    pub missing_by_dim: Vec<(String, usize)>,
    pub duplicate_rows: usize,
    pub rejected_rows: usize,
    /// Up to five human-readable reasons for rejected rows.
    pub reject_examples: Vec<String>,
    pub wave_min: Option<i32>,
    pub wave_max: Option<i32>,
    /// Whether a weight column was present and used.
    pub weighted: bool,
}

/// A loaded panel: households with wave-sorted observations plus the ingest
/// report describing what was kept and dropped.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub dims: Vec<String>,
    pub households: Vec<Household>,
    pub report: IngestReport,
}

/// One observed state transition between consecutive waves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRecord {
    /// Index into [`PanelDataset::households`].
    pub household: usize,
    pub from_wave: i32,
    pub from_state: usize,
    pub to_state: usize,
    /// Weight of the origin observation.
    pub weight: f64,
}

/// A maximal run of consecutive complete observations, already assigned to
/// flat states. Runs are the unit higher-order estimation and sequence
/// scoring work on; pairwise transitions are their length-2 windows.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRun {
    pub household: usize,
    pub start_wave: i32,
    pub states: Vec<usize>,
    /// Per-observation weights aligned with `states`.
    pub weights: Vec<f64>,
}

/// Outcome of assigning a panel against a state space.
#[derive(Debug, Clone, Default)]
pub struct RunExtract {
    pub runs: Vec<StateRun>,
    /// Individual values clamped into range during assignment.
    pub clamped_values: usize,
    pub assigned_observations: usize,
}

/// Load a panel CSV from disk. See [`from_reader`] for the format rules.
pub fn load_panel(path: impl AsRef<Path>, schema: &Schema) -> Result<PanelDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    from_reader(file, schema)
}

/// Load a panel from any reader. Header row is required; column order is
/// free. Extra columns are ignored.
pub fn from_reader(reader: impl Read, schema: &Schema) -> Result<PanelDataset> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let hh_col = col(&schema.household).ok_or_else(|| {
        Error::Schema(format!("missing household column '{}'", schema.household))
    })?;
    let wave_col = col(&schema.wave)
        .ok_or_else(|| Error::Schema(format!("missing wave column '{}'", schema.wave)))?;
    let mut dim_cols = Vec::with_capacity(schema.dims.len());
    for d in &schema.dims {
        dim_cols.push(
            col(d).ok_or_else(|| Error::Schema(format!("missing dimension column '{d}'")))?,
        );
    }
    let weight_col = match &schema.weight {
        Some(name) => match col(name) {
            Some(c) => Some(c),
            None if name == DEFAULT_WEIGHT_COLUMN => None,
            None => {
                return Err(Error::Schema(format!("missing weight column '{name}'")));
            }
        },
        None => None,
    };

    let mut report = IngestReport {
        weighted: weight_col.is_some(),
        missing_by_dim: schema.dims.iter().map(|d| (d.clone(), 0)).collect(),
        ..IngestReport::default()
    };
    let mut order: Vec<String> = Vec::new();
    let mut by_household: HashMap<String, HashMap<i32, Observation>> = HashMap::new();
    let reject = |report: &mut IngestReport, reason: String| {
        report.rejected_rows += 1;
        if report.reject_examples.len() < 5 {
            report.reject_examples.push(reason);
        }
    };

    for (line, record) in csv.records().enumerate() {
        let record = record?;
        report.rows_read += 1;
        let row = line + 2; // header is line 1
        let hh = record.get(hh_col).unwrap_or("").to_string();
        if hh.is_empty() {
            reject(&mut report, format!("row {row}: empty household id"));
            continue;
        }
        let wave: i32 = match record.get(wave_col).unwrap_or("").parse() {
            Ok(w) => w,
            Err(_) => {
                reject(
                    &mut report,
                    format!("row {row}: unparseable wave '{}'", record.get(wave_col).unwrap_or("")),
                );
                continue;
            }
        };
        let mut values = Vec::with_capacity(dim_cols.len());
        let mut bad = None;
        for (d, &c) in dim_cols.iter().enumerate() {
            let cell = record.get(c).unwrap_or("");
            if cell.is_empty() {
                values.push(None);
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(Some(v)),
                    _ => {
                        bad = Some(format!(
                            "row {row}: unparseable value '{cell}' for '{}'",
                            schema.dims[d]
                        ));
                        break;
                    }
                }
            }
        }
        if let Some(reason) = bad {
            reject(&mut report, reason);
            continue;
        }
        let weight = match weight_col {
            Some(c) => {
                let cell = record.get(c).unwrap_or("");
                match cell.parse::<f64>() {
                    Ok(w) if w.is_finite() && w >= 0.0 => w,
                    _ => {
                        reject(&mut report, format!("row {row}: bad weight '{cell}'"));
                        continue;
                    }
                }
            }
            None => 1.0,
        };

        let entry = by_household.entry(hh.clone()).or_insert_with(|| {
            order.push(hh.clone());
            HashMap::new()
        });
        if entry.contains_key(&wave) {
            report.duplicate_rows += 1;
            reject(
                &mut report,
                format!("row {row}: duplicate (household={hh}, wave={wave}); first kept"),
            );
            continue;
        }
        entry.insert(wave, Observation { wave, values, weight });
    }

    let mut households = Vec::with_capacity(order.len());
    for id in order {
        let mut obs: Vec<Observation> = by_household.remove(&id).unwrap().into_values().collect();
        obs.sort_by_key(|o| o.wave);
        households.push(Household { id, obs });
    }

    for hh in &households {
        for o in &hh.obs {
            report.observations += 1;
            if o.is_complete() {
                report.complete_observations += 1;
            }
            for (d, v) in o.values.iter().enumerate() {
                if v.is_none() {
                    report.missing_by_dim[d].1 += 1;
                }
            }
            report.wave_min = Some(report.wave_min.map_or(o.wave, |m| m.min(o.wave)));
            report.wave_max = Some(report.wave_max.map_or(o.wave, |m| m.max(o.wave)));
        }
    }
    report.households = households.len();

    Ok(PanelDataset {
        dims: schema.dims.clone(),
        households,
        report,
    })
}

/// Write a panel as CSV in the same format [`from_reader`] parses:
/// household and wave columns named by the schema, one column per
/// dimension, missing values as empty cells, and a weight column when the
/// schema names one. Floats use the shortest round-trip representation,
/// so writing and re-reading is lossless and byte-deterministic.
pub fn write_panel_csv(
    panel: &PanelDataset,
    schema: &Schema,
    out: impl std::io::Write,
) -> Result<()> {
    if schema.dims != panel.dims {
        return Err(Error::Schema(format!(
            "schema dimensions {:?} do not match panel dimensions {:?}",
            schema.dims, panel.dims
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![schema.household.clone(), schema.wave.clone()];
    if let Some(weight) = &schema.weight {
        header.push(weight.clone());
    }
    header.extend(schema.dims.iter().cloned());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for hh in &panel.households {
        for o in &hh.obs {
            row.clear();
            row.push(hh.id.clone());
            row.push(o.wave.to_string());
            if schema.weight.is_some() {
                row.push(o.weight.to_string());
            }
            for v in &o.values {
                row.push(v.map(|x| x.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

impl PanelDataset {
    /// Build a panel directly from in-memory households (used by the
    /// synthetic generator and tests). Observations get sorted by wave.
    pub fn from_households(dims: Vec<String>, mut households: Vec<Household>) -> Self {
        let mut report = IngestReport {
            weighted: true,
            missing_by_dim: dims.iter().map(|d| (d.clone(), 0)).collect(),
            ..IngestReport::default()
        };
        for hh in &mut households {
            hh.obs.sort_by_key(|o| o.wave);
            for o in &hh.obs {
                report.rows_read += 1;
                report.observations += 1;
                if o.is_complete() {
                    report.complete_observations += 1;
                }
                for (d, v) in o.values.iter().enumerate() {
                    if v.is_none() {
                        report.missing_by_dim[d].1 += 1;
                    }
                }
                report.wave_min = Some(report.wave_min.map_or(o.wave, |m| m.min(o.wave)));
                report.wave_max = Some(report.wave_max.map_or(o.wave, |m| m.max(o.wave)));
            }
        }
        report.households = households.len();
        PanelDataset { dims, households, report }
    }

    /// All non-missing values of one dimension, for fitting bin edges.
    pub fn dim_values(&self, dim: &str) -> Result<Vec<f64>> {
        let d = self
            .dims
            .iter()
            .position(|n| n == dim)
            .ok_or_else(|| Error::Param(format!("unknown dimension '{dim}'")))?;
        Ok(self
            .households
            .iter()
            .flat_map(|hh| hh.obs.iter())
            .filter_map(|o| o.values[d])
            .collect())
    }

    /// Values of the given dimensions per observation, only for
    /// observations complete in those dimensions.
    fn scoped_values<'a>(&'a self, dim_idx: &'a [usize], o: &'a Observation) -> Option<Vec<f64>> {
        let mut vals = Vec::with_capacity(dim_idx.len());
        for &d in dim_idx {
            vals.push(o.values[d]?);
        }
        Some(vals)
    }
}

fn dim_indices(panel: &PanelDataset, space: &StateSpace) -> Result<Vec<usize>> {
    space
        .dims()
        .iter()
        .map(|d| {
            panel
                .dims
                .iter()
                .position(|n| *n == d.name)
                .ok_or_else(|| Error::Param(format!("panel has no dimension '{}'", d.name)))
        })
        .collect()
}

/// Assign every household's observations and cut them into maximal runs of
/// consecutive complete waves. `window = (start, end)` keeps only
/// observations with `start <= wave <= end`; a wave on a period boundary
/// thus serves as both the end of the earlier period and the start of the
/// later one.
pub fn state_runs(
    panel: &PanelDataset,
    space: &StateSpace,
    window: Option<(i32, i32)>,
) -> Result<RunExtract> {
    if let Some((s, e)) = window {
        if s > e {
            return Err(Error::Param(format!("window start {s} after end {e}")));
        }
    }
    let dim_idx = dim_indices(panel, space)?;
    let mut out = RunExtract::default();
    for (h, hh) in panel.households.iter().enumerate() {
        let mut current: Option<StateRun> = None;
        for o in &hh.obs {
            if let Some((s, e)) = window {
                if o.wave < s || o.wave > e {
                    continue;
                }
            }
            let values = panel.scoped_values(&dim_idx, o);
            let assigned = match values {
                Some(v) => {
                    let a = space.assign(&v)?;
                    out.assigned_observations += 1;
                    out.clamped_values += a.clamped.count_ones() as usize;
                    Some(a.state)
                }
                None => None,
            };
            match assigned {
                None => {
                    if let Some(run) = current.take() {
                        out.runs.push(run);
                    }
                }
                Some(state) => {
                    let extend = matches!(
                        &current,
                        Some(run) if run.start_wave + run.states.len() as i32 == o.wave
                    );
                    if extend {
                        let run = current.as_mut().unwrap();
                        run.states.push(state);
                        run.weights.push(o.weight);
                    } else {
                        if let Some(run) = current.take() {
                            out.runs.push(run);
                        }
                        current = Some(StateRun {
                            household: h,
                            start_wave: o.wave,
                            states: vec![state],
                            weights: vec![o.weight],
                        });
                    }
                }
            }
        }
        if let Some(run) = current.take() {
            out.runs.push(run);
        }
    }
    Ok(out)
}

/// Pairwise transitions between consecutive complete waves, restricted to
/// an optional inclusive wave window. The transition weight is the origin
/// observation's weight.
pub fn extract_transitions(
    panel: &PanelDataset,
    space: &StateSpace,
    window: Option<(i32, i32)>,
) -> Result<Vec<TransitionRecord>> {
    let extract = state_runs(panel, space, window)?;
    let mut records = Vec::new();
    for run in &extract.runs {
        for t in 0..run.states.len().saturating_sub(1) {
            records.push(TransitionRecord {
                household: run.household,
                from_wave: run.start_wave + t as i32,
                from_state: run.states[t],
                to_state: run.states[t + 1],
                weight: run.weights[t],
            });
        }
    }
    Ok(records)
}

/// Split a panel at the given boundary waves into `boundaries.len() + 1`
/// sub-panels. A boundary wave belongs to both adjacent periods (it closes
/// the earlier one and opens the later one), so transitions straddling a
/// boundary land in the earlier period and each period still spans
/// consecutive waves internally.
pub fn split_periods(panel: &PanelDataset, boundaries: &[i32]) -> Result<Vec<PanelDataset>> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Param(format!(
            "period boundaries must be strictly increasing, got {boundaries:?}"
        )));
    }
    let mut spans: Vec<(Option<i32>, Option<i32>)> = Vec::with_capacity(boundaries.len() + 1);
    let mut prev: Option<i32> = None;
    for &b in boundaries {
        spans.push((prev, Some(b)));
        prev = Some(b);
    }
    spans.push((prev, None));

    let mut panels = Vec::with_capacity(spans.len());
    for (start, end) in spans {
        let households: Vec<Household> = panel
            .households
            .iter()
            .map(|hh| Household {
                id: hh.id.clone(),
                obs: hh
                    .obs
                    .iter()
                    .filter(|o| start.is_none_or(|s| o.wave >= s) && end.is_none_or(|e| o.wave <= e))
                    .cloned()
                    .collect(),
            })
            .filter(|hh| !hh.obs.is_empty())
            .collect();
        panels.push(PanelDataset::from_households(panel.dims.clone(), households));
    }
    Ok(panels)
}
