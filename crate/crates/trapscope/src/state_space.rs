//! Discretization of welfare dimensions into a product state space.
//!
//! Each dimension is cut into `k` bins by one of three rules:
//!
//! * equidistant: equal-width bins over the observed range,
//! * percentile: equal-mass bins with edges at empirical quantiles,
//! * ordinal: pass-through of small integer codes (e.g. self-reported
//!   health 1..5), one bin per code over the observed span.
//!
//! Bin intervals are half-open `[e_i, e_{i+1})` except the last, which is
//! right-closed so the maximum falls in the top bin. Values outside the
//! fitted range clamp to the first or last bin; assignment never panics on
//! finite input. A multidimensional state is the row-major flat index over
//! the per-dimension bins, which keeps transition matrices plain `N x N`
//! arrays downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for treating an ordinal value as an integer code.
const ORDINAL_INT_TOL: f64 = 1e-9;

/// Largest ordinal code span we accept before concluding the column is not
/// actually ordinal (e.g. raw income passed by mistake).
const ORDINAL_MAX_SPAN: usize = 64;

/// How a dimension's continuous values map to bin indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningMode {
    /// Equal-width bins over `[min, max]`.
    Equidistant,
    /// Equal-mass bins with edges at empirical quantiles of the fit sample.
    Percentile,
    /// One bin per integer code; values must be integers.
    Ordinal,
}

/// A fitted binning for one dimension: `k + 1` strictly increasing edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub name: String,
    pub mode: BinningMode,
    /// Strictly increasing edges; bin `i` covers `[edges[i], edges[i+1])`,
    /// the last bin is right-closed.
    pub edges: Vec<f64>,
}

impl DimensionSpec {
    /// Number of bins.
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Midpoint of bin `i`, used when decoding synthetic states to values.
    pub fn midpoint(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Width of bin `i`.
    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// Map a value to its bin, clamping out-of-range values to the first or
    /// last bin. Returns `(bin, clamped)`. Non-finite values and non-integer
    /// ordinal values are errors; they should have been filtered as missing
    /// or rejected upstream.
    pub fn assign(&self, value: f64) -> Result<(usize, bool)> {
        if !value.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite value {value} for dimension '{}'",
                self.name
            )));
        }
        if self.mode == BinningMode::Ordinal && (value - value.round()).abs() > ORDINAL_INT_TOL {
            return Err(Error::Schema(format!(
                "non-integer value {value} for ordinal dimension '{}'",
                self.name
            )));
        }
        let last = self.edges.len() - 1;
        if value < self.edges[0] {
            return Ok((0, true));
        }
        if value >= self.edges[last] {
            // The maximum itself belongs to the top bin; only values strictly
            // beyond it count as clamped.
            return Ok((self.bins() - 1, value > self.edges[last]));
        }
        let idx = self.edges.partition_point(|&e| e <= value) - 1;
        Ok((idx, false))
    }

    /// Empirical mass per bin of `values` under this spec (missing and
    /// non-finite entries are the caller's problem; this is a diagnostic).
    pub fn occupancy(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut counts = vec![0.0; self.bins()];
        for &v in values {
            let (b, _) = self.assign(v)?;
            counts[b] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        if total > 0.0 {
            for c in &mut counts {
                *c /= total;
            }
        }
        Ok(counts)
    }
}

fn check_fit_sample(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Param(format!(
            "cannot fit dimension '{name}' on an empty sample"
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite value {bad} in fit sample for dimension '{name}'"
        )));
    }
    Ok(())
}

fn check_edges(name: &str, edges: &[f64]) -> Result<()> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Resolution(format!(
            "dimension '{name}': computed edges are not strictly increasing ({edges:?}); \
             the sample does not support this many bins"
        )));
    }
    Ok(())
}

/// Fit `k` equal-width bins over the observed range of `values`.
pub fn fit_equidistant(name: &str, values: &[f64], k: usize) -> Result<DimensionSpec> {
    if k == 0 {
        return Err(Error::Param(format!(
            "dimension '{name}': bin count must be at least 1"
        )));
    }
    check_fit_sample(name, values)?;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::Resolution(format!(
            "dimension '{name}': all values equal ({min}); zero spread cannot be binned"
        )));
    }
    let mut edges: Vec<f64> = (0..=k)
        .map(|i| min + (max - min) * i as f64 / k as f64)
        .collect();
    edges[0] = min;
    edges[k] = max;
    check_edges(name, &edges)?;
    Ok(DimensionSpec {
        name: name.to_string(),
        mode: BinningMode::Equidistant,
        edges,
    })
}

/// Fit `k` equal-mass bins with edges at empirical quantiles `i/k`.
///
/// Quantiles use the inverse empirical CDF with midpoint interpolation at
/// jump points: when `i*n/k` lands exactly on an order statistic, the edge
/// is the midpoint of that order statistic and the next one. Samples with
/// too few distinct values to separate the requested edges fail with a
/// resolution error.
pub fn fit_percentile(name: &str, values: &[f64], k: usize) -> Result<DimensionSpec> {
    if k == 0 {
        return Err(Error::Param(format!(
            "dimension '{name}': bin count must be at least 1"
        )));
    }
    check_fit_sample(name, values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();

    let mut distinct = 1usize;
    for w in sorted.windows(2) {
        if w[1] > w[0] {
            distinct += 1;
        }
    }
    if distinct < k {
        return Err(Error::Resolution(format!(
            "dimension '{name}': {distinct} distinct values cannot support {k} percentile bins"
        )));
    }

    let mut edges = Vec::with_capacity(k + 1);
    edges.push(sorted[0]);
    for i in 1..k {
        let h = i as f64 * n as f64 / k as f64;
        let edge = if (h - h.round()).abs() < 1e-9 {
            // Exactly on an order statistic: split the tie by the midpoint
            // between it and the next one.
            let m = h.round() as usize; // 1-indexed
            if m >= n {
                sorted[n - 1]
            } else {
                0.5 * (sorted[m - 1] + sorted[m])
            }
        } else {
            sorted[h.ceil() as usize - 1]
        };
        edges.push(edge);
    }
    edges.push(sorted[n - 1]);
    check_edges(name, &edges)?;
    Ok(DimensionSpec {
        name: name.to_string(),
        mode: BinningMode::Percentile,
        edges,
    })
}

/// Fit an ordinal passthrough: one bin per integer code across the observed
/// span, so code `c` maps to bin `c - min_code` even if some intermediate
/// code never occurs in the sample.
pub fn fit_ordinal(name: &str, values: &[f64]) -> Result<DimensionSpec> {
    check_fit_sample(name, values)?;
    for &v in values {
        if (v - v.round()).abs() > ORDINAL_INT_TOL {
            return Err(Error::Schema(format!(
                "non-integer value {v} in ordinal dimension '{name}'"
            )));
        }
    }
    let min = values.iter().map(|v| v.round() as i64).min().unwrap();
    let max = values.iter().map(|v| v.round() as i64).max().unwrap();
    let span = (max - min) as usize + 1;
    if span > ORDINAL_MAX_SPAN {
        return Err(Error::Resolution(format!(
            "dimension '{name}': ordinal span {span} exceeds {ORDINAL_MAX_SPAN}; \
             this column does not look like ordinal codes"
        )));
    }
    // Edges centered on the codes, so midpoints decode back to the codes.
    let edges: Vec<f64> = (0..=span).map(|i| min as f64 - 0.5 + i as f64).collect();
    Ok(DimensionSpec {
        name: name.to_string(),
        mode: BinningMode::Ordinal,
        edges,
    })
}

/// Result of assigning one multidimensional observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assigned {
    /// Row-major flat state index.
    pub state: usize,
    /// Bitmask of dimensions whose value was clamped into range.
    pub clamped: u32,
}

/// Product state space over fitted dimensions, with a row-major flat index
/// codec (`flat = (..(i_0 * k_1 + i_1) * k_2 + i_2 ..)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    dims: Vec<DimensionSpec>,
}

impl StateSpace {
    pub fn new(dims: Vec<DimensionSpec>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Param("state space needs at least one dimension".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            if dims[..i].iter().any(|e| e.name == d.name) {
                return Err(Error::Param(format!("duplicate dimension name '{}'", d.name)));
            }
        }
        let mut n: usize = 1;
        for d in &dims {
            n = n.checked_mul(d.bins()).ok_or_else(|| {
                Error::Param("state space size overflows usize".into())
            })?;
        }
        if n > 1 << 22 {
            return Err(Error::Param(format!(
                "state space has {n} states; transition matrices this large are not tractable"
            )));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[DimensionSpec] {
        &self.dims
    }

    pub fn dim(&self, name: &str) -> Option<(usize, &DimensionSpec)> {
        self.dims.iter().enumerate().find(|(_, d)| d.name == name)
    }

    /// Total number of states (product of per-dimension bin counts).
    pub fn n_states(&self) -> usize {
        self.dims.iter().map(|d| d.bins()).product()
    }

    /// Row-major flat index of a multi-index.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.dims.len());
        let mut flat = 0;
        for (i, d) in self.dims.iter().enumerate() {
            debug_assert!(multi[i] < d.bins());
            flat = flat * d.bins() + multi[i];
        }
        flat
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        debug_assert!(flat < self.n_states());
        let mut rest = flat;
        let mut multi = vec![0; self.dims.len()];
        for (i, d) in self.dims.iter().enumerate().rev() {
            multi[i] = rest % d.bins();
            rest /= d.bins();
        }
        multi
    }

    /// Assign a complete observation (one value per dimension, in order).
    pub fn assign(&self, values: &[f64]) -> Result<Assigned> {
        if values.len() != self.dims.len() {
            return Err(Error::Param(format!(
                "expected {} values, got {}",
                self.dims.len(),
                values.len()
            )));
        }
        let mut multi = Vec::with_capacity(values.len());
        let mut clamped = 0u32;
        for (i, (d, &v)) in self.dims.iter().zip(values).enumerate() {
            let (bin, cl) = d.assign(v)?;
            if cl {
                clamped |= 1 << i;
            }
            multi.push(bin);
        }
        Ok(Assigned {
            state: self.flat_index(&multi),
            clamped,
        })
    }

    /// Convenience wrapper returning only the flat state index.
    pub fn assign_state(&self, values: &[f64]) -> Result<usize> {
        Ok(self.assign(values)?.state)
    }

    /// Human-readable label for a flat state, e.g. `income=2|health=0`.
    pub fn label(&self, flat: usize) -> String {
        let multi = self.multi_index(flat);
        self.dims
            .iter()
            .zip(&multi)
            .map(|(d, b)| format!("{}={b}", d.name))
            .collect::<Vec<_>>()
            .join("|")
    }

    /// A reduced space over a subset of this space's dimensions, in the
    /// given order. Used for per-scope analyses (1D income, 2D income x
    /// health) sharing one fitted set of edges.
    pub fn project(&self, names: &[&str]) -> Result<StateSpace> {
        let mut dims = Vec::with_capacity(names.len());
        for name in names {
            let (_, d) = self
                .dim(name)
                .ok_or_else(|| Error::Param(format!("unknown dimension '{name}'")))?;
            dims.push(d.clone());
        }
        StateSpace::new(dims)
    }
}
