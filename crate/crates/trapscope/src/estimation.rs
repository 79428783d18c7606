//! Transition-model estimation.
//!
//! Models are row-stochastic matrices over a discrete joint state space,
//! estimated by weighted maximum likelihood from observed transitions. An
//! order-`k` model conditions on the last `k` states; rather than storing
//! the full `N^k x N^k` augmented matrix we keep the conditional form
//! `N^k x N` (row = history tuple, column = next state) and materialize
//! the square augmented matrix only on demand.
//!
//! Estimation returns the raw MLE: rows with zero observed departures are
//! filled uniformly and reported, and no smoothing is applied. Analyses
//! that need irreducibility (stationary distributions, passage times)
//! regularize explicitly via [`TransitionModel::regularize_irreducible`].

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{state_runs, PanelDataset, StateRun, TransitionRecord};
use crate::rng;
use crate::state_space::StateSpace;

/// Default smoothing mass for [`TransitionModel::regularize_irreducible`].
pub const DEFAULT_ETA: f64 = 1e-8;

/// Largest `N^k * N` we will allocate for a conditional matrix (two copies
/// are held: counts and probabilities).
const MAX_MATRIX_CELLS: usize = 1 << 26;

/// Stream tags keeping this module's RNG draws disjoint from other users
/// of the same seed.
const STREAM_BOOTSTRAP: u64 = 1;
const STREAM_MEMORY: u64 = 2;

/// A fitted discrete-state transition model in conditional form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    base_n: usize,
    order: usize,
    /// `N^k x N` weighted transition counts.
    counts: DMatrix<f64>,
    /// `N^k x N` row-stochastic conditional probabilities.
    p: DMatrix<f64>,
    /// Smoothing mass applied, if any. `None` marks a raw MLE.
    eta: Option<f64>,
    /// Rows with zero observed departures, filled uniformly.
    uniform_rows: Vec<usize>,
    total_weight: f64,
    n_transitions: usize,
    /// Optional human-readable label for the estimation period.
    period: Option<String>,
}

impl TransitionModel {
    /// Wrap an explicit row-stochastic matrix as an order-1 model. Counts
    /// are set to the probabilities themselves (unit mass per row), so the
    /// model behaves like one estimated from one observation per row.
    pub fn from_matrix(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() == 0 || p.nrows() != p.ncols() {
            return Err(Error::Param(format!(
                "transition matrix must be square and nonempty, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        for i in 0..p.nrows() {
            let mut sum = 0.0;
            for j in 0..p.ncols() {
                let v = p[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Param(format!(
                        "transition matrix entry ({i}, {j}) = {v} is not a probability"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Param(format!(
                    "transition matrix row {i} sums to {sum}, expected 1"
                )));
            }
        }
        let n = p.nrows();
        Ok(Self {
            base_n: n,
            order: 1,
            counts: p.clone(),
            p,
            eta: None,
            uniform_rows: Vec::new(),
            total_weight: n as f64,
            n_transitions: n,
            period: None,
        })
    }

    /// Convenience wrapper over [`TransitionModel::from_matrix`] for
    /// row-major nested slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Param("transition rows must form a square matrix".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_matrix(DMatrix::from_row_slice(n, n, &flat))
    }

    /// Wrap an explicit conditional matrix (`base_n^order` history rows by
    /// `base_n` columns) as an order-`order` model. Counts mirror the
    /// probabilities, as in [`TransitionModel::from_matrix`].
    pub fn from_conditional(base_n: usize, order: usize, p: DMatrix<f64>) -> Result<Self> {
        if base_n == 0 || order == 0 {
            return Err(Error::Param(
                "state count and order must both be positive".into(),
            ));
        }
        let rows = base_n
            .checked_pow(u32::try_from(order).map_err(|_| {
                Error::Param(format!("order {order} is out of range"))
            })?)
            .ok_or_else(|| {
                Error::Param(format!("{base_n}^{order} history rows overflow"))
            })?;
        if p.nrows() != rows || p.ncols() != base_n {
            return Err(Error::Param(format!(
                "conditional matrix must be {rows}x{base_n} for {base_n} states \
                 at order {order}, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        for i in 0..p.nrows() {
            let mut sum = 0.0;
            for j in 0..p.ncols() {
                let v = p[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Param(format!(
                        "conditional matrix entry ({i}, {j}) = {v} is not a probability"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Param(format!(
                    "conditional matrix row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            base_n,
            order,
            counts: p.clone(),
            p,
            eta: None,
            uniform_rows: Vec::new(),
            total_weight: rows as f64,
            n_transitions: rows,
            period: None,
        })
    }

    /// Number of states of the underlying (unaugmented) space.
    pub fn base_n(&self) -> usize {
        self.base_n
    }

    /// Conditioning depth `k`; 1 is an ordinary Markov chain.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of history rows, `base_n ^ order`.
    pub fn n_rows(&self) -> usize {
        self.p.nrows()
    }

    /// Conditional probabilities, `n_rows() x base_n()`.
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Weighted transition counts, same shape as [`TransitionModel::p`].
    pub fn counts(&self) -> &DMatrix<f64> {
        &self.counts
    }

    /// Smoothing mass applied by regularization, if any.
    pub fn eta(&self) -> Option<f64> {
        self.eta
    }

    /// Rows that had no observed departures and were filled uniformly.
    pub fn uniform_rows(&self) -> &[usize] {
        &self.uniform_rows
    }

    /// Total weight over all counted transitions.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Number of transitions counted (unweighted).
    pub fn n_transitions(&self) -> usize {
        self.n_transitions
    }

    /// Label for the estimation period, if one was attached.
    pub fn period(&self) -> Option<&str> {
        self.period.as_deref()
    }

    /// Attach a period label (builder style).
    pub fn with_period(mut self, period: impl Into<String>) -> Self {
        self.period = Some(period.into());
        self
    }

    /// The square transition matrix this model induces. Order 1 returns the
    /// conditional matrix itself; higher orders return the `N^k x N^k`
    /// matrix over history tuples, where the tuple `(s_1, ..., s_k)` moves
    /// to `(s_2, ..., s_k, j)` with probability `p[(s_1..s_k), j]`.
    pub fn augmented(&self) -> Result<DMatrix<f64>> {
        let rows = self.n_rows();
        if self.order == 1 {
            return Ok(self.p.clone());
        }
        if rows.checked_mul(rows).is_none_or(|c| c > MAX_MATRIX_CELLS) {
            return Err(Error::Param(format!(
                "augmented matrix would need {rows}x{rows} entries"
            )));
        }
        let mut a = DMatrix::zeros(rows, rows);
        let tail_size = rows / self.base_n;
        for r in 0..rows {
            let tail = r % tail_size;
            for j in 0..self.base_n {
                a[(r, tail * self.base_n + j)] = self.p[(r, j)];
            }
        }
        Ok(a)
    }

    /// Smoothed copy guaranteeing strictly positive entries:
    /// `p'_ij = (p_ij + eta) / sum_j (p_ij + eta)`. Counts and diagnostics
    /// are preserved; `eta` is recorded on the result.
    pub fn regularize_irreducible(&self, eta: f64) -> Result<Self> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::Param(format!(
                "regularization mass must be positive and finite, got {eta}"
            )));
        }
        let mut out = self.clone();
        for i in 0..out.p.nrows() {
            let mut sum = 0.0;
            for j in 0..out.p.ncols() {
                sum += self.p[(i, j)] + eta;
            }
            for j in 0..out.p.ncols() {
                out.p[(i, j)] = (self.p[(i, j)] + eta) / sum;
            }
        }
        out.eta = Some(eta);
        Ok(out)
    }

    /// Flat row index of a history tuple (most recent state last).
    pub fn tuple_index(&self, history: &[usize]) -> Result<usize> {
        tuple_index(history, self.base_n, self.order)
    }

    /// States of the augmented chain whose current (most recent) base
    /// state lies in `base_states`. First-order models return the set
    /// itself; higher orders return every history tuple ending there.
    pub fn expanded_states(&self, base_states: &[usize]) -> Result<Vec<usize>> {
        let mut member = vec![false; self.base_n];
        for &s in base_states {
            if s >= self.base_n {
                return Err(Error::Param(format!(
                    "state {s} out of range for {}-state space",
                    self.base_n
                )));
            }
            member[s] = true;
        }
        if self.order == 1 {
            return Ok(base_states.to_vec());
        }
        Ok((0..self.n_rows())
            .filter(|r| member[r % self.base_n])
            .collect())
    }
}

fn tuple_index(history: &[usize], base_n: usize, order: usize) -> Result<usize> {
    if history.len() != order {
        return Err(Error::Param(format!(
            "history length {} does not match model order {order}",
            history.len()
        )));
    }
    let mut idx = 0usize;
    for &s in history {
        if s >= base_n {
            return Err(Error::Param(format!(
                "state {s} out of range for {base_n}-state space"
            )));
        }
        idx = idx * base_n + s;
    }
    Ok(idx)
}

/// Serializable form of a [`TransitionModel`]. Matrices are row-major
/// nested arrays so artifacts stay readable and language-neutral.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionModelData {
    pub n: usize,
    pub order: usize,
    pub p: Vec<Vec<f64>>,
    pub counts: Vec<Vec<f64>>,
    pub eta: Option<f64>,
    pub uniform_rows: Vec<usize>,
    pub total_weight: f64,
    pub n_transitions: usize,
    pub period: Option<String>,
    /// Hash of the state-space definition the model was fitted on, when
    /// produced by the pipeline; lets consumers detect mismatched spaces.
    pub space_hash: Option<String>,
}

impl TransitionModelData {
    pub fn from_model(model: &TransitionModel, space_hash: Option<String>) -> Self {
        let to_rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect()
        };
        Self {
            n: model.base_n,
            order: model.order,
            p: to_rows(&model.p),
            counts: to_rows(&model.counts),
            eta: model.eta,
            uniform_rows: model.uniform_rows.clone(),
            total_weight: model.total_weight,
            n_transitions: model.n_transitions,
            period: model.period.clone(),
            space_hash,
        }
    }

    pub fn into_model(self) -> Result<TransitionModel> {
        if self.n == 0 || self.order == 0 {
            return Err(Error::Schema("model requires n >= 1 and order >= 1".into()));
        }
        let rows = self
            .n
            .checked_pow(self.order as u32)
            .ok_or_else(|| Error::Schema("model dimensions overflow".into()))?;
        let parse = |nested: &[Vec<f64>], what: &str| -> Result<DMatrix<f64>> {
            if nested.len() != rows || nested.iter().any(|r| r.len() != self.n) {
                return Err(Error::Schema(format!(
                    "{what} must be {rows}x{} for n={} order={}",
                    self.n, self.n, self.order
                )));
            }
            let flat: Vec<f64> = nested.iter().flatten().copied().collect();
            Ok(DMatrix::from_row_slice(rows, self.n, &flat))
        };
        let p = parse(&self.p, "probability matrix")?;
        let counts = parse(&self.counts, "count matrix")?;
        for i in 0..rows {
            let sum: f64 = (0..self.n).map(|j| p[(i, j)]).sum();
            if (sum - 1.0).abs() > 1e-6 || (0..self.n).any(|j| p[(i, j)] < 0.0) {
                return Err(Error::Schema(format!(
                    "probability row {i} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(TransitionModel {
            base_n: self.n,
            order: self.order,
            counts,
            p,
            eta: self.eta,
            uniform_rows: self.uniform_rows,
            total_weight: self.total_weight,
            n_transitions: self.n_transitions,
            period: self.period,
        })
    }
}

/// Weighted maximum-likelihood estimate of an order-`order` model from
/// transition records (`order = 1` is the common case). Higher orders
/// reassemble each household's consecutive-wave chains from the records
/// and count tuple transitions, so a chain must span at least `order + 1`
/// waves to contribute. Rows with zero departures are filled uniformly
/// and listed in [`TransitionModel::uniform_rows`].
pub fn estimate_mle(
    records: &[TransitionRecord],
    space: &StateSpace,
    order: usize,
) -> Result<TransitionModel> {
    let base_n = space.n_states();
    estimate_mle_n(records, base_n, order)
}

/// [`estimate_mle`] for callers that know only the state count.
pub fn estimate_mle_n(
    records: &[TransitionRecord],
    base_n: usize,
    order: usize,
) -> Result<TransitionModel> {
    if order == 0 {
        return Err(Error::Param("model order must be at least 1".into()));
    }
    if base_n == 0 {
        return Err(Error::Param("state space has no states".into()));
    }
    let rows = base_n
        .checked_pow(order as u32)
        .filter(|r| r.checked_mul(base_n).is_some_and(|c| c <= MAX_MATRIX_CELLS))
        .ok_or_else(|| {
            Error::Param(format!(
                "order {order} over {base_n} states needs more than {MAX_MATRIX_CELLS} matrix cells"
            ))
        })?;
    for r in records {
        if r.from_state >= base_n || r.to_state >= base_n {
            return Err(Error::Param(format!(
                "record state {} -> {} out of range for {base_n}-state space",
                r.from_state, r.to_state
            )));
        }
        if !r.weight.is_finite() || r.weight <= 0.0 {
            return Err(Error::Param(format!(
                "transition weight {} must be positive and finite",
                r.weight
            )));
        }
    }

    let mut counts = DMatrix::zeros(rows, base_n);
    let mut total_weight = 0.0;
    let mut n_transitions = 0usize;
    if order == 1 {
        for r in records {
            counts[(r.from_state, r.to_state)] += r.weight;
            total_weight += r.weight;
            n_transitions += 1;
        }
    } else {
        for chain in assemble_chains(records) {
            // chain.states has one more entry than chain.weights; weight[t]
            // belongs to the transition leaving position t.
            let m = chain.states.len();
            for t in order..m {
                let row = tuple_index(&chain.states[t - order..t], base_n, order)?;
                let w = chain.weights[t - 1];
                counts[(row, chain.states[t])] += w;
                total_weight += w;
                n_transitions += 1;
            }
        }
    }

    let mut p = DMatrix::zeros(rows, base_n);
    let mut uniform_rows = Vec::new();
    for i in 0..rows {
        let row_sum: f64 = (0..base_n).map(|j| counts[(i, j)]).sum();
        if row_sum > 0.0 {
            for j in 0..base_n {
                p[(i, j)] = counts[(i, j)] / row_sum;
            }
        } else {
            uniform_rows.push(i);
            for j in 0..base_n {
                p[(i, j)] = 1.0 / base_n as f64;
            }
        }
    }
    Ok(TransitionModel {
        base_n,
        order,
        counts,
        p,
        eta: None,
        uniform_rows,
        total_weight,
        n_transitions,
        period: None,
    })
}

struct Chain {
    states: Vec<usize>,
    weights: Vec<f64>,
}

/// Rebuild per-household consecutive-wave chains from pairwise records.
/// A chain breaks whenever the next record is not the immediate successor
/// wave continuing from the previous record's destination state.
fn assemble_chains(records: &[TransitionRecord]) -> Vec<Chain> {
    let mut by_household: BTreeMap<usize, Vec<&TransitionRecord>> = BTreeMap::new();
    for r in records {
        by_household.entry(r.household).or_default().push(r);
    }
    let mut chains = Vec::new();
    for (_, mut recs) in by_household {
        recs.sort_by_key(|r| r.from_wave);
        let mut current: Option<(Chain, i32)> = None;
        for r in recs {
            let extends = matches!(
                &current,
                Some((chain, last_wave)) if *last_wave + 1 == r.from_wave
                    && *chain.states.last().unwrap() == r.from_state
            );
            if extends {
                let (chain, last_wave) = current.as_mut().unwrap();
                chain.states.push(r.to_state);
                chain.weights.push(r.weight);
                *last_wave = r.from_wave;
            } else {
                if let Some((chain, _)) = current.take() {
                    chains.push(chain);
                }
                current = Some((
                    Chain {
                        states: vec![r.from_state, r.to_state],
                        weights: vec![r.weight],
                    },
                    r.from_wave,
                ));
            }
        }
        if let Some((chain, _)) = current.take() {
            chains.push(chain);
        }
    }
    chains
}

/// Per-entry spread of the estimated transition matrix under household
/// subsampling.
#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub omit_fraction: f64,
    /// Entrywise mean of the replicate estimates.
    pub mean: DMatrix<f64>,
    /// Entrywise sample standard deviation of the replicate estimates.
    pub std: DMatrix<f64>,
    pub max_std: f64,
    pub mean_std: f64,
}

/// Estimate the sampling spread of the order-1 MLE by repeatedly omitting
/// a random fraction of households and re-estimating. Replicates draw
/// independent streams from `seed`, so results are reproducible and
/// independent of execution order.
pub fn bootstrap_uncertainty(
    records: &[TransitionRecord],
    space: &StateSpace,
    omit_fraction: f64,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    let base_n = space.n_states();
    if replicates < 2 {
        return Err(Error::Param(format!(
            "bootstrap needs at least 2 replicates to measure spread, got {replicates}"
        )));
    }
    if !(0.0..1.0).contains(&omit_fraction) || !omit_fraction.is_finite() {
        return Err(Error::Param(format!(
            "omit fraction must lie in [0, 1), got {omit_fraction}"
        )));
    }
    if records.is_empty() {
        return Err(Error::Param("no transitions to bootstrap".into()));
    }

    let mut by_household: BTreeMap<usize, Vec<&TransitionRecord>> = BTreeMap::new();
    for r in records {
        by_household.entry(r.household).or_default().push(r);
    }
    let households: Vec<&Vec<&TransitionRecord>> = by_household.values().collect();
    let n_households = households.len();
    let n_omit = ((n_households as f64) * omit_fraction).floor() as usize;
    let n_keep = (n_households - n_omit).max(1);

    let estimates: Vec<Result<DMatrix<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, rep as u64, 0, STREAM_BOOTSTRAP);
            // Partial Fisher-Yates: after k swaps the first k slots hold a
            // uniform without-replacement sample.
            let mut idx: Vec<usize> = (0..n_households).collect();
            for i in 0..n_keep.min(n_households - 1) {
                let j = i + rng::below(&mut rng, n_households - i);
                idx.swap(i, j);
            }
            let kept: Vec<TransitionRecord> = idx[..n_keep]
                .iter()
                .flat_map(|&h| households[h].iter().map(|&&r| r))
                .collect();
            Ok(estimate_mle_n(&kept, base_n, 1)?.p)
        })
        .collect();

    let mut mean = DMatrix::zeros(base_n, base_n);
    let mut m2 = DMatrix::zeros(base_n, base_n);
    let mut seen = 0.0;
    for est in estimates {
        let est = est?;
        seen += 1.0;
        for i in 0..base_n {
            for j in 0..base_n {
                let d = est[(i, j)] - mean[(i, j)];
                mean[(i, j)] += d / seen;
                m2[(i, j)] += d * (est[(i, j)] - mean[(i, j)]);
            }
        }
    }
    let std = m2.map(|v: f64| (v / (replicates as f64 - 1.0)).sqrt());
    let max_std = std.iter().copied().fold(0.0, f64::max);
    let mean_std = std.iter().sum::<f64>() / (base_n * base_n) as f64;
    Ok(BootstrapSummary {
        replicates,
        omit_fraction,
        mean,
        std,
        max_std,
        mean_std,
    })
}

/// Frobenius distance between the probability matrices of two models of
/// identical shape.
pub fn frobenius_distance(a: &TransitionModel, b: &TransitionModel) -> Result<f64> {
    if a.base_n != b.base_n || a.order != b.order {
        return Err(Error::Param(format!(
            "cannot compare a {}-state order-{} model with a {}-state order-{} model",
            a.base_n, a.order, b.base_n, b.order
        )));
    }
    Ok((&a.p - &b.p).norm())
}

/// One interval of a time-homogeneity check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomogeneityInterval {
    /// Inclusive range of origin waves whose transitions were counted.
    pub from_wave_start: i32,
    pub from_wave_end: i32,
    pub n_transitions: usize,
}

/// Result of [`homogeneity_check`]: interval models are compared pairwise
/// by Frobenius distance. Large distances between specific interval pairs
/// localize a structural break.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub intervals: Vec<HomogeneityInterval>,
    /// `(earlier interval, later interval, distance)` for every pair.
    pub pairwise: Vec<(usize, usize, f64)>,
    pub max_distance: f64,
    pub mean_distance: f64,
    /// Set when the trailing interval covers fewer origin waves than the
    /// requested length.
    pub partial_tail: bool,
    /// Set when fewer than two intervals fit in the observed wave range.
    pub warning: Option<String>,
}

/// Test time-homogeneity by splitting the panel's origin waves into
/// consecutive intervals of `interval_years` waves, estimating an order-1
/// model per interval, and comparing the estimates pairwise.
pub fn homogeneity_check(
    panel: &PanelDataset,
    space: &StateSpace,
    interval_years: usize,
) -> Result<HomogeneityReport> {
    if interval_years == 0 {
        return Err(Error::Param("interval length must be at least 1 wave".into()));
    }
    let records = crate::panel::extract_transitions(panel, space, None)?;
    if records.is_empty() {
        return Err(Error::Param("panel has no transitions".into()));
    }
    let w0 = records.iter().map(|r| r.from_wave).min().unwrap();
    let w1 = records.iter().map(|r| r.from_wave).max().unwrap();
    let span = (w1 - w0 + 1) as usize;
    let n_intervals = span.div_ceil(interval_years);
    let partial_tail = !span.is_multiple_of(interval_years);

    let mut intervals = Vec::with_capacity(n_intervals);
    let mut models = Vec::with_capacity(n_intervals);
    for i in 0..n_intervals {
        let start = w0 + (i * interval_years) as i32;
        let end = (start + interval_years as i32 - 1).min(w1);
        let sub: Vec<TransitionRecord> = records
            .iter()
            .filter(|r| r.from_wave >= start && r.from_wave <= end)
            .copied()
            .collect();
        intervals.push(HomogeneityInterval {
            from_wave_start: start,
            from_wave_end: end,
            n_transitions: sub.len(),
        });
        models.push(estimate_mle(&sub, space, 1)?);
    }

    let mut pairwise = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            pairwise.push((i, j, frobenius_distance(&models[i], &models[j])?));
        }
    }
    let max_distance = pairwise.iter().map(|&(_, _, d)| d).fold(0.0, f64::max);
    let mean_distance = if pairwise.is_empty() {
        0.0
    } else {
        pairwise.iter().map(|&(_, _, d)| d).sum::<f64>() / pairwise.len() as f64
    };
    let warning = (models.len() < 2).then(|| {
        format!(
            "only one interval fits the observed origin waves {w0}..{w1}; \
             homogeneity cannot be assessed"
        )
    });
    Ok(HomogeneityReport {
        intervals,
        pairwise,
        max_distance,
        mean_distance,
        partial_tail,
        warning,
    })
}

/// Mean per-transition log-likelihood of each candidate order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryReport {
    pub orders: Vec<usize>,
    /// Mean log-likelihood per scored transition, aligned with `orders`.
    pub mean_log_likelihood: Vec<f64>,
    /// Transitions scored per resampled sequence set (same for all orders).
    pub scored_transitions: usize,
    /// Order with the highest mean log-likelihood.
    pub best_order: usize,
}

/// Compare candidate Markov orders on the same panel. Each order is fitted
/// on all eligible chains, then scored on `holdout_sequences` chains drawn
/// with replacement (seeded). Scoring starts at position `max(orders)`
/// within each chain so every order predicts exactly the same transitions;
/// chains shorter than `max(orders) + 1` states are never sampled.
pub fn memory_length_comparison(
    panel: &PanelDataset,
    space: &StateSpace,
    orders: &[usize],
    holdout_sequences: usize,
    seed: u64,
) -> Result<MemoryReport> {
    if orders.is_empty() {
        return Err(Error::Param("no candidate orders given".into()));
    }
    if orders.contains(&0) {
        return Err(Error::Param("model order must be at least 1".into()));
    }
    if holdout_sequences == 0 {
        return Err(Error::Param("holdout sequence count must be positive".into()));
    }
    let max_order = *orders.iter().max().unwrap();
    let extract = state_runs(panel, space, None)?;
    let eligible: Vec<&StateRun> = extract
        .runs
        .iter()
        .filter(|r| r.states.len() > max_order)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Param(format!(
            "no household runs span {} consecutive waves; cannot compare order {max_order}",
            max_order + 1
        )));
    }
    let records = crate::panel::extract_transitions(panel, space, None)?;

    let mut models = Vec::with_capacity(orders.len());
    for &k in orders {
        models.push(estimate_mle(&records, space, k)?.regularize_irreducible(DEFAULT_ETA)?);
    }

    let mut rng = rng::stream(seed, 0, 0, STREAM_MEMORY);
    let sampled: Vec<&StateRun> = (0..holdout_sequences)
        .map(|_| eligible[rng::below(&mut rng, eligible.len())])
        .collect();

    let mut scored_transitions = 0usize;
    let mut totals = vec![0.0f64; orders.len()];
    for run in &sampled {
        for t in max_order..run.states.len() {
            scored_transitions += 1;
            for (oi, model) in models.iter().enumerate() {
                let row = model.tuple_index(&run.states[t - model.order()..t])?;
                totals[oi] += model.p()[(row, run.states[t])].ln();
            }
        }
    }
    let mean_log_likelihood: Vec<f64> =
        totals.iter().map(|t| t / scored_transitions as f64).collect();
    let best = mean_log_likelihood
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| orders[i])
        .unwrap();
    Ok(MemoryReport {
        orders: orders.to_vec(),
        mean_log_likelihood,
        scored_transitions,
        best_order: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Household, Observation};
    use crate::state_space::StateSpace;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_state_space() -> StateSpace {
        let dim = crate::state_space::fit_ordinal("x", &[0.0, 1.0]).unwrap();
        StateSpace::new(vec![dim]).unwrap()
    }

    fn rec(household: usize, from_wave: i32, from: usize, to: usize, w: f64) -> TransitionRecord {
        TransitionRecord {
            household,
            from_wave,
            from_state: from,
            to_state: to,
            weight: w,
        }
    }

    /// Households that each contribute one observed chain of states over
    /// consecutive waves, for panel-level checks.
    fn panel_of_chains(chains: &[&[usize]]) -> PanelDataset {
        let households = chains
            .iter()
            .enumerate()
            .map(|(h, states)| Household {
                id: format!("h{h}"),
                obs: states
                    .iter()
                    .enumerate()
                    .map(|(t, &s)| Observation {
                        wave: 2000 + t as i32,
                        values: vec![Some(s as f64)],
                        weight: 1.0,
                    })
                    .collect(),
            })
            .collect();
        PanelDataset::from_households(vec!["x".into()], households)
    }

    #[test]
    fn mle_matches_hand_counted_frequencies() {
        let space = two_state_space();
        let records = vec![
            rec(0, 2000, 0, 1, 1.0),
            rec(1, 2000, 0, 1, 1.0),
            rec(2, 2000, 0, 1, 1.0),
            rec(3, 2000, 0, 0, 1.0),
        ];
        let m = estimate_mle(&records, &space, 1).unwrap();
        assert_abs_diff_eq!(m.p()[(0, 0)], 0.25);
        assert_abs_diff_eq!(m.p()[(0, 1)], 0.75);
        assert_eq!(m.uniform_rows(), &[1]);
        assert_abs_diff_eq!(m.p()[(1, 0)], 0.5);
        assert_abs_diff_eq!(m.p()[(1, 1)], 0.5);
        assert_eq!(m.n_transitions(), 4);
        assert_eq!(m.eta(), None);
    }

    #[test]
    fn weights_scale_counts() {
        let space = two_state_space();
        let records = vec![rec(0, 2000, 0, 1, 3.0), rec(1, 2000, 0, 0, 1.0)];
        let m = estimate_mle(&records, &space, 1).unwrap();
        assert_abs_diff_eq!(m.p()[(0, 1)], 0.75);
        assert_abs_diff_eq!(m.p()[(0, 0)], 0.25);
        assert_abs_diff_eq!(m.total_weight(), 4.0);
    }

    #[test]
    fn deterministic_cycle_recovers_permutation_matrix() {
        let space = two_state_space();
        let records = vec![
            rec(0, 2000, 0, 1, 1.0),
            rec(0, 2001, 1, 0, 1.0),
            rec(0, 2002, 0, 1, 1.0),
            rec(0, 2003, 1, 0, 1.0),
        ];
        let m = estimate_mle(&records, &space, 1).unwrap();
        assert_eq!(m.p()[(0, 1)], 1.0);
        assert_eq!(m.p()[(1, 0)], 1.0);
        assert_eq!(m.p()[(0, 0)], 0.0);
        assert!(m.uniform_rows().is_empty());
    }

    #[test]
    fn regularize_spreads_eta_over_identity() {
        let m = TransitionModel::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let eta = 1e-8;
        let r = m.regularize_irreducible(eta).unwrap();
        let expected_off = eta / (1.0 + 2.0 * eta);
        assert_abs_diff_eq!(r.p()[(0, 1)], expected_off, epsilon = 1e-20);
        assert_abs_diff_eq!(r.p()[(1, 0)], expected_off, epsilon = 1e-20);
        let max_shift = (r.p() - m.p()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max_shift <= 2.0 * eta);
        assert_eq!(r.eta(), Some(eta));
        for i in 0..2 {
            let sum: f64 = r.p().row(i).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn regularize_rejects_nonpositive_eta() {
        let m = TransitionModel::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(m.regularize_irreducible(0.0).is_err());
        assert!(m.regularize_irreducible(-1e-8).is_err());
        assert!(m.regularize_irreducible(f64::NAN).is_err());
    }

    #[test]
    fn from_matrix_rejects_bad_rows() {
        assert!(TransitionModel::from_rows(&[vec![0.6, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(TransitionModel::from_rows(&[vec![1.2, -0.2], vec![0.5, 0.5]]).is_err());
        assert!(TransitionModel::from_rows(&[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn order_two_counts_tuple_transitions() {
        let space = two_state_space();
        // One household observed as 0,0,1,0,0,1,0,0,1 over consecutive waves.
        let states = [0, 0, 1, 0, 0, 1, 0, 0, 1];
        let records: Vec<_> = (0..states.len() - 1)
            .map(|t| rec(0, 2000 + t as i32, states[t], states[t + 1], 1.0))
            .collect();
        let m = estimate_mle(&records, &space, 2).unwrap();
        // Histories: (0,0) always moves to 1, (0,1) always to 0, (1,0) always to 0.
        let r00 = m.tuple_index(&[0, 0]).unwrap();
        let r01 = m.tuple_index(&[0, 1]).unwrap();
        let r10 = m.tuple_index(&[1, 0]).unwrap();
        let r11 = m.tuple_index(&[1, 1]).unwrap();
        assert_eq!(m.p()[(r00, 1)], 1.0);
        assert_eq!(m.p()[(r01, 0)], 1.0);
        assert_eq!(m.p()[(r10, 0)], 1.0);
        assert_eq!(m.uniform_rows(), &[r11]);
        assert_eq!(m.n_transitions(), 7);
    }

    #[test]
    fn order_two_does_not_bridge_wave_gaps() {
        let space = two_state_space();
        // Two disjoint two-wave stints: no run spans three waves, so an
        // order-2 model sees no tuple transitions at all.
        let records = vec![rec(0, 2000, 0, 1, 1.0), rec(0, 2005, 0, 1, 1.0)];
        let m = estimate_mle(&records, &space, 2).unwrap();
        assert_eq!(m.n_transitions(), 0);
        assert_eq!(m.uniform_rows().len(), 4);
    }

    #[test]
    fn augmented_matrix_routes_tuple_histories() {
        let space = two_state_space();
        let states = [0, 0, 1, 0, 0, 1, 0, 0, 1];
        let records: Vec<_> = (0..states.len() - 1)
            .map(|t| rec(0, 2000 + t as i32, states[t], states[t + 1], 1.0))
            .collect();
        let m = estimate_mle(&records, &space, 2).unwrap();
        let a = m.augmented().unwrap();
        assert_eq!(a.nrows(), 4);
        let r00 = m.tuple_index(&[0, 0]).unwrap();
        let r01 = m.tuple_index(&[0, 1]).unwrap();
        // From history (0,0), moving to state 1 lands in history (0,1).
        assert_eq!(a[(r00, r01)], 1.0);
        for i in 0..4 {
            let sum: f64 = a.row(i).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn model_data_roundtrip_preserves_model() {
        let space = two_state_space();
        let records = vec![rec(0, 2000, 0, 1, 1.0), rec(1, 2000, 0, 0, 2.0)];
        let m = estimate_mle(&records, &space, 1)
            .unwrap()
            .regularize_irreducible(DEFAULT_ETA)
            .unwrap()
            .with_period("2000-2001");
        let data = TransitionModelData::from_model(&m, Some("abc".into()));
        let json = serde_json::to_string(&data).unwrap();
        let back: TransitionModelData = serde_json::from_str(&json).unwrap();
        let m2 = back.into_model().unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn bootstrap_requires_two_replicates() {
        let space = two_state_space();
        let records = vec![rec(0, 2000, 0, 1, 1.0)];
        let err = bootstrap_uncertainty(&records, &space, 0.1, 1, 7);
        assert!(matches!(err, Err(Error::Param(_))));
    }

    #[test]
    fn bootstrap_rejects_bad_omit_fraction() {
        let space = two_state_space();
        let records = vec![rec(0, 2000, 0, 1, 1.0)];
        assert!(bootstrap_uncertainty(&records, &space, 1.0, 10, 7).is_err());
        assert!(bootstrap_uncertainty(&records, &space, -0.1, 10, 7).is_err());
    }

    #[test]
    fn bootstrap_on_identical_households_has_zero_spread() {
        let space = two_state_space();
        // Every household contributes the same deterministic chain, so any
        // subsample estimates exactly the same matrix.
        let mut records = Vec::new();
        for h in 0..40 {
            records.push(rec(h, 2000, 0, 1, 1.0));
            records.push(rec(h, 2001, 1, 0, 1.0));
        }
        let b = bootstrap_uncertainty(&records, &space, 0.25, 50, 99).unwrap();
        assert_eq!(b.max_std, 0.0);
        assert_abs_diff_eq!(b.mean[(0, 1)], 1.0);
    }

    #[test]
    fn bootstrap_is_seed_reproducible() {
        let space = two_state_space();
        let mut records = Vec::new();
        for h in 0..60usize {
            let to = h % 3 != 0;
            records.push(rec(h, 2000, 0, to as usize, 1.0));
            records.push(rec(h, 2001, to as usize, 0, 1.0));
        }
        let a = bootstrap_uncertainty(&records, &space, 0.2, 40, 1234).unwrap();
        let b = bootstrap_uncertainty(&records, &space, 0.2, 40, 1234).unwrap();
        let c = bootstrap_uncertainty(&records, &space, 0.2, 40, 4321).unwrap();
        assert_eq!(a.std, b.std);
        assert_eq!(a.mean, b.mean);
        assert_ne!(a.std, c.std);
    }

    #[test]
    fn bootstrap_spread_grows_with_omitted_fraction() {
        let space = two_state_space();
        let mut records = Vec::new();
        for h in 0..80usize {
            let to = h % 3 != 0;
            records.push(rec(h, 2000, 0, to as usize, 1.0));
        }
        let mut last = -1.0;
        for omit in [0.05, 0.2, 0.5] {
            let b = bootstrap_uncertainty(&records, &space, omit, 120, 7).unwrap();
            assert!(
                b.mean_std >= last,
                "spread should not shrink as more households are omitted \
                 (omit={omit}, got {} after {last})",
                b.mean_std
            );
            last = b.mean_std;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn homogeneity_warns_on_single_interval() {
        let space = two_state_space();
        let panel = panel_of_chains(&[&[0, 1, 0], &[1, 0, 1]]);
        let r = homogeneity_check(&panel, &space, 10).unwrap();
        assert_eq!(r.intervals.len(), 1);
        assert!(r.pairwise.is_empty());
        assert!(r.warning.is_some());
        assert_eq!(r.max_distance, 0.0);
    }

    #[test]
    fn homogeneity_rejects_zero_interval() {
        let space = two_state_space();
        let panel = panel_of_chains(&[&[0, 1, 0]]);
        assert!(homogeneity_check(&panel, &space, 0).is_err());
    }

    #[test]
    fn homogeneity_sees_identical_dynamics_as_close() {
        let space = two_state_space();
        // Deterministic alternation in every wave: each interval estimates
        // exactly the same permutation matrix.
        let chains: Vec<Vec<usize>> = (0..30)
            .map(|h| (0..9).map(|t| (t + h) % 2).collect())
            .collect();
        let refs: Vec<&[usize]> = chains.iter().map(|c| c.as_slice()).collect();
        let panel = panel_of_chains(&refs);
        let r = homogeneity_check(&panel, &space, 4).unwrap();
        assert_eq!(r.intervals.len(), 2);
        assert_eq!(r.max_distance, 0.0);
        assert!(r.warning.is_none());
    }

    #[test]
    fn homogeneity_flags_partial_tail() {
        let space = two_state_space();
        // 9 observations give 8 origin waves; intervals of 3 leave a
        // 2-wave tail.
        let chains: Vec<Vec<usize>> = (0..10)
            .map(|h| (0..9).map(|t| (t + h) % 2).collect())
            .collect();
        let refs: Vec<&[usize]> = chains.iter().map(|c| c.as_slice()).collect();
        let panel = panel_of_chains(&refs);
        let r = homogeneity_check(&panel, &space, 3).unwrap();
        assert_eq!(r.intervals.len(), 3);
        assert!(r.partial_tail);
        assert_eq!(r.intervals[2].from_wave_end - r.intervals[2].from_wave_start, 1);
    }

    #[test]
    fn memory_orders_agree_on_first_order_data() {
        let space = two_state_space();
        // Draw chains from a genuine order-1 kernel; higher orders should
        // not gain: mean log-likelihoods stay within 10% of order 1's.
        let p = [[0.7, 0.3], [0.4, 0.6]];
        let mut chains = Vec::new();
        let mut r = crate::rng::stream(5, 0, 0, 0);
        for _ in 0..400 {
            let mut s = crate::rng::below(&mut r, 2);
            let mut chain = vec![s];
            for _ in 0..7 {
                s = usize::from(crate::rng::unit(&mut r) < p[s][1]);
                chain.push(s);
            }
            chains.push(chain);
        }
        let refs: Vec<&[usize]> = chains.iter().map(|c| c.as_slice()).collect();
        let panel = panel_of_chains(&refs);
        let rep = memory_length_comparison(&panel, &space, &[1, 2, 3], 2000, 11).unwrap();
        let base = rep.mean_log_likelihood[0];
        for (k, ll) in rep.orders.iter().zip(&rep.mean_log_likelihood) {
            assert!(
                (ll - base).abs() <= 0.10 * base.abs(),
                "order {k} log-likelihood {ll} strays from order-1 {base}"
            );
        }
    }

    #[test]
    fn memory_prefers_second_order_on_two_step_data() {
        let space = two_state_space();
        // Next state is the complement of the state two steps back (with
        // 5% noise): invisible to an order-1 model, plain to order 2.
        let mut chains = Vec::new();
        let mut r = crate::rng::stream(6, 0, 0, 0);
        for _ in 0..400 {
            let mut chain = vec![crate::rng::below(&mut r, 2), crate::rng::below(&mut r, 2)];
            for t in 2..8 {
                let target = 1 - chain[t - 2];
                let flip = crate::rng::unit(&mut r) < 0.05;
                chain.push(if flip { 1 - target } else { target });
            }
            chains.push(chain);
        }
        let refs: Vec<&[usize]> = chains.iter().map(|c| c.as_slice()).collect();
        let panel = panel_of_chains(&refs);
        let rep = memory_length_comparison(&panel, &space, &[1, 2], 2000, 12).unwrap();
        assert!(
            rep.mean_log_likelihood[1] > rep.mean_log_likelihood[0],
            "order 2 should dominate: {:?}",
            rep.mean_log_likelihood
        );
        assert_eq!(rep.best_order, 2);
    }

    #[test]
    fn memory_comparison_rejects_short_runs() {
        let space = two_state_space();
        let panel = panel_of_chains(&[&[0, 1], &[1, 0]]);
        assert!(memory_length_comparison(&panel, &space, &[1, 2, 3], 100, 1).is_err());
    }

    proptest! {
        #[test]
        fn estimated_rows_are_distributions(
            transitions in proptest::collection::vec((0usize..4, 0usize..4, 1u8..4), 1..60),
        ) {
            let dim = crate::state_space::fit_ordinal("x", &[0.0, 1.0, 2.0, 3.0]).unwrap();
            let space = StateSpace::new(vec![dim]).unwrap();
            let records: Vec<_> = transitions
                .iter()
                .enumerate()
                .map(|(i, &(f, t, w))| rec(i, 2000, f, t, w as f64))
                .collect();
            let m = estimate_mle(&records, &space, 1).unwrap();
            for i in 0..4 {
                let sum: f64 = m.p().row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                for j in 0..4 {
                    prop_assert!(m.p()[(i, j)] >= 0.0);
                }
            }
        }

        #[test]
        fn regularized_rows_are_strictly_positive_distributions(
            transitions in proptest::collection::vec((0usize..3, 0usize..3), 1..40),
            eta_exp in 1u8..12,
        ) {
            let dim = crate::state_space::fit_ordinal("x", &[0.0, 1.0, 2.0]).unwrap();
            let space = StateSpace::new(vec![dim]).unwrap();
            let records: Vec<_> = transitions
                .iter()
                .enumerate()
                .map(|(i, &(f, t))| rec(i, 2000, f, t, 1.0))
                .collect();
            let eta = 10f64.powi(-(eta_exp as i32));
            let m = estimate_mle(&records, &space, 1)
                .unwrap()
                .regularize_irreducible(eta)
                .unwrap();
            for i in 0..3 {
                let sum: f64 = m.p().row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                for j in 0..3 {
                    prop_assert!(m.p()[(i, j)] > 0.0);
                    prop_assert!(m.p()[(i, j)] >= eta / (1.0 + 3.0 * eta) * (1.0 - 1e-12));
                }
            }
        }
    }
}
