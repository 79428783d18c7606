//! Counterfactual interventions: move population mass in the state
//! space, propagate it under the estimated kernel, and measure what the
//! move buys.
//!
//! The engine works with expected-household semantics: an intervention
//! relocates a probability mass point, propagation is exact matrix
//! arithmetic, and every reported number is deterministic. The central
//! quantities are the poverty-return risk (probability of falling back
//! into a poverty set within a horizon), its reduction per intervention
//! arm, the super-additivity gap between a combined intervention and the
//! sum of its parts, and retention curves (probability of sitting above
//! median welfare after an income boost, stratified by health).
//!
//! All entry points require first-order models: interventions start at a
//! concrete state, which a history-conditioned chain cannot represent
//! without inventing a history.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::TransitionModel;
use crate::landscape::stationary_distribution;
use crate::metrics::escape_distribution_from;
use crate::state_space::StateSpace;

/// Default horizon, in waves, for return risk and retention.
pub const INTERVENTION_HORIZON: usize = 5;

/// Default percentile an intervention arm boosts a dimension to.
pub const BOOST_PERCENTILE: f64 = 0.25;

/// Per-state welfare rank: weighted mean of normalized bin indices
/// across dimensions, in [0, 1] and monotone in every dimension. A
/// single-bin dimension contributes rank 0. `weights` must sum to one;
/// `None` means equal weights.
pub fn welfare_rank(space: &StateSpace, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let d = space.dims().len();
    let w: Vec<f64> = match weights {
        None => vec![1.0 / d as f64; d],
        Some(w) => {
            if w.len() != d {
                return Err(Error::Param(format!(
                    "{} rank weights for {} dimensions",
                    w.len(),
                    d
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Param("rank weights must be nonnegative".into()));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Param(format!("rank weights sum to {sum}, expected 1")));
            }
            w.to_vec()
        }
    };
    let mut rank = Vec::with_capacity(space.n_states());
    for flat in 0..space.n_states() {
        let multi = space.multi_index(flat);
        let mut r = 0.0;
        for (d, &idx) in multi.iter().enumerate() {
            let k = space.dims()[d].bins();
            if k > 1 {
                r += w[d] * idx as f64 / (k - 1) as f64;
            }
        }
        rank.push(r);
    }
    Ok(rank)
}

/// Mass-weighted median of `values`: the smallest value whose cumulative
/// mass reaches one half.
pub fn weighted_median(values: &[f64], mass: &[f64]) -> Result<f64> {
    if values.is_empty() || values.len() != mass.len() {
        return Err(Error::Param("median needs matching nonempty vectors".into()));
    }
    let total: f64 = mass.iter().sum();
    if mass.iter().any(|&m| !m.is_finite() || m < 0.0) || total <= 0.0 {
        return Err(Error::Param("median weights must be nonnegative with positive sum".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut cum = 0.0;
    for &i in &order {
        cum += mass[i] / total;
        if cum >= 0.5 {
            return Ok(values[i]);
        }
    }
    Ok(values[order[order.len() - 1]])
}

/// How the poverty region is defined over a state space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum PovertyDef {
    /// The single state with every dimension at its lowest bin.
    LowestState,
    /// Every state whose given dimension sits at its lowest bin
    /// (e.g. income-poor regardless of the other dimensions).
    DimensionFloor(usize),
    /// An explicit set of flat state indices.
    Explicit(Vec<usize>),
}

/// Income-floor poverty by convention: the first dimension is income in
/// every bundled space, and a floor on it keeps the poverty set nonempty
/// along the other dimensions.
impl Default for PovertyDef {
    fn default() -> Self {
        PovertyDef::DimensionFloor(0)
    }
}

impl PovertyDef {
    /// Flat state indices the definition selects on `space`.
    pub fn resolve(&self, space: &StateSpace) -> Result<Vec<usize>> {
        match self {
            PovertyDef::LowestState => {
                Ok(vec![space.flat_index(&vec![0; space.dims().len()])])
            }
            PovertyDef::DimensionFloor(d) => {
                if *d >= space.dims().len() {
                    return Err(Error::Param(format!(
                        "poverty floor dimension {d} out of range"
                    )));
                }
                Ok((0..space.n_states())
                    .filter(|&s| space.multi_index(s)[*d] == 0)
                    .collect())
            }
            PovertyDef::Explicit(states) => {
                if states.is_empty() {
                    return Err(Error::Param("explicit poverty set is empty".into()));
                }
                for &s in states {
                    if s >= space.n_states() {
                        return Err(Error::Param(format!(
                            "poverty state {s} out of range"
                        )));
                    }
                }
                Ok(states.clone())
            }
        }
    }
}

fn require_first_order(model: &TransitionModel) -> Result<()> {
    if model.order() != 1 {
        return Err(Error::Param(format!(
            "interventions need a first-order model, got order {}",
            model.order()
        )));
    }
    Ok(())
}

/// Probability that a chain started at `start` visits `poverty` within
/// `horizon` steps, computed exactly by absorbing the poverty set. A
/// start already inside the set has risk 1 (entry at step zero).
pub fn poverty_return_risk(
    model: &TransitionModel,
    start: usize,
    poverty: &[usize],
    horizon: usize,
) -> Result<f64> {
    require_first_order(model)?;
    let n = model.base_n();
    if start >= n {
        return Err(Error::Param(format!("start state {start} out of range")));
    }
    let mut start_vec = vec![0.0; n];
    start_vec[start] = 1.0;
    let dist = escape_distribution_from(model.p(), &start_vec, poverty, horizon)?;
    Ok(dist.absorbed)
}

/// One intervention arm: where it starts and what it risks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub name: String,
    /// Flat state index the arm starts from.
    pub start_state: usize,
    /// Poverty-return risk within the horizon.
    pub risk: f64,
    /// Risk reduction relative to baseline.
    pub delta: f64,
}

/// Outcome of the full arm comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    /// Return risk of the untreated baseline (which starts inside the
    /// poverty set, so this is 1 by the step-zero convention).
    pub r_baseline: f64,
    /// The income-only, health-only, and combined arms, in that order.
    pub arms: Vec<ArmOutcome>,
    /// Combined-arm reduction minus the sum of single-arm reductions;
    /// positive values mean the joint intervention beats its parts.
    pub super_additivity_gap: f64,
    pub percentile: f64,
    pub horizon: usize,
    /// Resolved poverty set the risks were measured against.
    pub poverty_set: Vec<usize>,
}

/// Smallest bin whose cumulative marginal mass reaches `q`.
fn bin_of_percentile(marginal: &[f64], q: f64) -> usize {
    let mut cum = 0.0;
    for (b, &m) in marginal.iter().enumerate() {
        cum += m;
        if cum >= q {
            return b;
        }
    }
    marginal.len() - 1
}

fn marginal_of(pi: &DVector<f64>, space: &StateSpace, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; space.dims()[dim].bins()];
    for s in 0..space.n_states() {
        out[space.multi_index(s)[dim]] += pi[s];
    }
    out
}

/// Compare intervention arms that lift a household out of the lowest
/// welfare state.
///
/// The baseline starts with every dimension at bin 0. Each treatment arm
/// overrides the treated dimension(s) to the bin containing `percentile`
/// of that dimension's marginal stationary distribution, leaving the
/// rest at the baseline bin; arms are income-only, health-only, and
/// combined. Risks are poverty-return probabilities within `horizon`
/// steps against the resolved `poverty` set.
pub fn run_arms(
    model: &TransitionModel,
    space: &StateSpace,
    income_dim: usize,
    health_dim: usize,
    poverty: &PovertyDef,
    percentile: f64,
    horizon: usize,
) -> Result<InterventionReport> {
    require_first_order(model)?;
    if model.base_n() != space.n_states() {
        return Err(Error::Param(format!(
            "model has {} states but the space has {}",
            model.base_n(),
            space.n_states()
        )));
    }
    let d = space.dims().len();
    if income_dim >= d || health_dim >= d || income_dim == health_dim {
        return Err(Error::Param(format!(
            "treated dimensions ({income_dim}, {health_dim}) must be distinct \
             and within {d} dimensions"
        )));
    }
    if percentile.is_nan() || percentile <= 0.0 || percentile >= 1.0 {
        return Err(Error::Param(format!(
            "boost percentile must lie strictly between 0 and 1, got {percentile}"
        )));
    }
    let poverty_set = poverty.resolve(space)?;
    let pi = stationary_distribution(model)?;
    let boost_bin = |dim: usize| bin_of_percentile(&marginal_of(&pi, space, dim), percentile);
    let income_bin = boost_bin(income_dim);
    let health_bin = boost_bin(health_dim);

    let start_state = |overrides: &[(usize, usize)]| {
        let mut multi = vec![0usize; d];
        for &(dim, bin) in overrides {
            multi[dim] = bin;
        }
        space.flat_index(&multi)
    };
    let baseline_state = start_state(&[]);
    let r_baseline = poverty_return_risk(model, baseline_state, &poverty_set, horizon)?;

    let mut arms = Vec::with_capacity(3);
    let arm_specs: [(&str, Vec<(usize, usize)>); 3] = [
        ("income_only", vec![(income_dim, income_bin)]),
        ("health_only", vec![(health_dim, health_bin)]),
        (
            "combined",
            vec![(income_dim, income_bin), (health_dim, health_bin)],
        ),
    ];
    for (name, overrides) in arm_specs {
        let s = start_state(&overrides);
        let risk = poverty_return_risk(model, s, &poverty_set, horizon)?;
        arms.push(ArmOutcome {
            name: name.to_string(),
            start_state: s,
            risk,
            delta: r_baseline - risk,
        });
    }
    let gap = arms[2].delta - arms[0].delta - arms[1].delta;
    Ok(InterventionReport {
        r_baseline,
        arms,
        super_additivity_gap: gap,
        percentile,
        horizon,
        poverty_set,
    })
}

/// Retention probabilities after income boosts, stratified by starting
/// health.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionCurves {
    /// Boost sizes in percentile fractions, as given.
    pub boosts: Vec<f64>,
    /// `values[q][b]`: probability of sitting strictly above median
    /// welfare rank at the horizon, starting from health quintile `q + 1`
    /// and the income bin implied by boost `b`.
    pub values: Vec<Vec<f64>>,
    /// Income bin each boost lands in.
    pub start_bins: Vec<usize>,
    /// Whether a boost overshot the top percentile and was clamped.
    pub clamped: Vec<bool>,
    /// Baseline income percentile the boosts are added to (midpoint of
    /// the lowest bin's stationary mass).
    pub baseline_percentile: f64,
    /// Mass-weighted median welfare rank of the stationary distribution.
    pub median_rank: f64,
    pub horizon: usize,
}

/// Retention curves: for each starting health quintile and each income
/// boost, the probability that the chain sits strictly above the median
/// welfare rank exactly `horizon` steps after starting at the boosted
/// income bin. Boosts are percentile fractions added to the baseline
/// income percentile (the midpoint of the lowest bin's stationary mass);
/// a boost beyond the top percentile clamps to the top bin and is
/// flagged. Dimensions other than income and health start at bin 0.
pub fn retention_curve(
    model: &TransitionModel,
    space: &StateSpace,
    income_dim: usize,
    health_dim: usize,
    boosts: &[f64],
    horizon: usize,
) -> Result<RetentionCurves> {
    require_first_order(model)?;
    if model.base_n() != space.n_states() {
        return Err(Error::Param(format!(
            "model has {} states but the space has {}",
            model.base_n(),
            space.n_states()
        )));
    }
    let d = space.dims().len();
    if income_dim >= d || health_dim >= d || income_dim == health_dim {
        return Err(Error::Param(format!(
            "income/health dimensions ({income_dim}, {health_dim}) must be \
             distinct and within {d} dimensions"
        )));
    }
    let quintiles = space.dims()[health_dim].bins();
    if quintiles != 5 {
        return Err(Error::Param(format!(
            "retention stratifies by health quintile and needs 5 health bins, \
             got {quintiles}"
        )));
    }
    if boosts.is_empty() || boosts.iter().any(|b| !b.is_finite() || *b <= 0.0) {
        return Err(Error::Param(
            "boost sizes must be a nonempty list of positive fractions".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::Param("horizon must be at least 1 step".into()));
    }

    let pi = stationary_distribution(model)?;
    let rank = welfare_rank(space, None)?;
    let median_rank = weighted_median(&rank, pi.as_slice())?;
    let marginal = marginal_of(&pi, space, income_dim);
    let baseline_percentile = marginal[0] / 2.0;
    let top_bin = space.dims()[income_dim].bins() - 1;

    let mut start_bins = Vec::with_capacity(boosts.len());
    let mut clamped = Vec::with_capacity(boosts.len());
    for &s in boosts {
        let q = baseline_percentile + s;
        if q > 1.0 {
            start_bins.push(top_bin);
            clamped.push(true);
        } else {
            start_bins.push(bin_of_percentile(&marginal, q));
            clamped.push(false);
        }
    }

    let p = model.p();
    let n = space.n_states();
    let mut values = vec![vec![0.0; boosts.len()]; quintiles];
    for (quintile, row) in values.iter_mut().enumerate() {
        for (b, &bin) in start_bins.iter().enumerate() {
            let mut multi = vec![0usize; d];
            multi[income_dim] = bin;
            multi[health_dim] = quintile;
            let mut v = DVector::zeros(n);
            v[space.flat_index(&multi)] = 1.0;
            for _ in 0..horizon {
                v = p.tr_mul(&v);
            }
            let retained: f64 = (0..n)
                .filter(|&s| rank[s] > median_rank)
                .map(|s| v[s])
                .sum();
            row[b] = retained;
        }
    }
    Ok(RetentionCurves {
        boosts: boosts.to_vec(),
        values,
        start_bins,
        clamped,
        baseline_percentile,
        median_rank,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::{BinningMode, DimensionSpec};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn ordinal_dim(name: &str, k: usize) -> DimensionSpec {
        DimensionSpec {
            name: name.into(),
            mode: BinningMode::Ordinal,
            edges: (0..=k).map(|i| i as f64 - 0.5).collect(),
        }
    }

    fn space_2d(k_income: usize, k_health: usize) -> StateSpace {
        StateSpace::new(vec![
            ordinal_dim("income", k_income),
            ordinal_dim("health", k_health),
        ])
        .unwrap()
    }

    /// Joint kernel where the income row may depend on the health bin.
    fn joint_kernel(
        space: &StateSpace,
        income_rows: impl Fn(usize, usize) -> Vec<f64>,
        health_rows: impl Fn(usize) -> Vec<f64>,
    ) -> TransitionModel {
        let n = space.n_states();
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            let m = space.multi_index(s);
            let (i, h) = (m[0], m[1]);
            let a = income_rows(i, h);
            let b = health_rows(h);
            for (j, &aj) in a.iter().enumerate() {
                for (g, &bg) in b.iter().enumerate() {
                    p[(s, space.flat_index(&[j, g]))] = aj * bg;
                }
            }
        }
        TransitionModel::from_matrix(p).unwrap()
    }

    fn sticky_income(k: usize, up: f64, down: f64) -> impl Fn(usize, usize) -> Vec<f64> {
        move |i, _h| {
            let mut row = vec![0.0; k];
            let u = if i + 1 < k { up } else { 0.0 };
            let d = if i > 0 { down } else { 0.0 };
            row[i] = 1.0 - u - d;
            if i + 1 < k {
                row[i + 1] = u;
            }
            if i > 0 {
                row[i - 1] = d;
            }
            row
        }
    }

    fn memoryless_health(k: usize) -> impl Fn(usize) -> Vec<f64> {
        move |_h| vec![1.0 / k as f64; k]
    }

    #[test]
    fn rank_is_mean_of_normalized_indices() {
        let space = space_2d(3, 5);
        let rank = welfare_rank(&space, None).unwrap();
        assert_eq!(rank[space.flat_index(&[0, 0])], 0.0);
        assert_eq!(rank[space.flat_index(&[2, 4])], 1.0);
        assert_abs_diff_eq!(
            rank[space.flat_index(&[1, 2])],
            0.5,
            epsilon = 1e-15
        );
        // Monotone in each dimension.
        for i in 0..2 {
            for h in 0..5 {
                assert!(
                    rank[space.flat_index(&[i + 1, h])] > rank[space.flat_index(&[i, h])]
                );
            }
        }
    }

    #[test]
    fn rank_accepts_custom_weights_and_rejects_bad_ones() {
        let space = space_2d(3, 5);
        let rank = welfare_rank(&space, Some(&[1.0, 0.0])).unwrap();
        assert_eq!(rank[space.flat_index(&[2, 0])], 1.0);
        assert_eq!(rank[space.flat_index(&[0, 4])], 0.0);
        assert!(welfare_rank(&space, Some(&[1.0])).is_err());
        assert!(welfare_rank(&space, Some(&[0.7, 0.7])).is_err());
        assert!(welfare_rank(&space, Some(&[-0.5, 1.5])).is_err());
    }

    #[test]
    fn single_bin_dimension_contributes_zero_rank() {
        let space = StateSpace::new(vec![ordinal_dim("income", 4), ordinal_dim("flag", 1)])
            .unwrap();
        let rank = welfare_rank(&space, None).unwrap();
        assert_eq!(rank[space.flat_index(&[3, 0])], 0.5);
    }

    #[test]
    fn weighted_median_matches_hand_computation() {
        // Mass 0.3 at 0.0, 0.3 at 0.5, 0.4 at 1.0: cumulative reaches
        // one half at 0.5.
        let m = weighted_median(&[0.0, 0.5, 1.0], &[0.3, 0.3, 0.4]).unwrap();
        assert_eq!(m, 0.5);
        let m = weighted_median(&[1.0, 0.0], &[0.1, 0.9]).unwrap();
        assert_eq!(m, 0.0);
        assert!(weighted_median(&[], &[]).is_err());
        assert!(weighted_median(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn poverty_definitions_resolve_to_expected_states() {
        let space = space_2d(3, 2);
        assert_eq!(
            PovertyDef::LowestState.resolve(&space).unwrap(),
            vec![space.flat_index(&[0, 0])]
        );
        let floor = PovertyDef::DimensionFloor(0).resolve(&space).unwrap();
        let expected: Vec<usize> = (0..2).map(|h| space.flat_index(&[0, h])).collect();
        assert_eq!(floor, expected);
        assert_eq!(
            PovertyDef::Explicit(vec![1, 3]).resolve(&space).unwrap(),
            vec![1, 3]
        );
        assert!(PovertyDef::DimensionFloor(7).resolve(&space).is_err());
        assert!(PovertyDef::Explicit(vec![99]).resolve(&space).is_err());
        assert!(PovertyDef::Explicit(vec![]).resolve(&space).is_err());
    }

    #[test]
    fn start_inside_poverty_has_unit_risk() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let model = TransitionModel::from_matrix(p).unwrap();
        let risk = poverty_return_risk(&model, 0, &[0], 5).unwrap();
        assert_eq!(risk, 1.0);
    }

    #[test]
    fn geometric_return_matches_closed_form() {
        // Return to poverty (state 0) with probability 0.3 per step.
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.7]);
        let model = TransitionModel::from_matrix(p).unwrap();
        let risk = poverty_return_risk(&model, 1, &[0], 5).unwrap();
        assert_abs_diff_eq!(risk, 1.0 - 0.7f64.powi(5), epsilon = 1e-12);
    }

    #[test]
    fn unreachable_poverty_has_zero_risk() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let model = TransitionModel::from_matrix(p).unwrap();
        let risk = poverty_return_risk(&model, 1, &[0], 5).unwrap();
        assert_eq!(risk, 0.0);
    }

    #[test]
    fn risk_rejects_bad_arguments() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let model = TransitionModel::from_matrix(p).unwrap();
        assert!(poverty_return_risk(&model, 5, &[0], 5).is_err());
        assert!(poverty_return_risk(&model, 1, &[0], 0).is_err());
        assert!(poverty_return_risk(&model, 1, &[], 5).is_err());
    }

    #[test]
    fn factorized_kernel_has_no_super_additivity() {
        let space = space_2d(3, 5);
        // Income dynamics identical for every health bin; health mixes
        // on its own. Poverty = income floor, so health cannot matter.
        let model = joint_kernel(
            &space,
            sticky_income(3, 0.25, 0.3),
            |h| {
                let mut row = vec![0.0; 5];
                row[h] = 0.6;
                if h > 0 {
                    row[h - 1] += 0.2;
                } else {
                    row[h] += 0.2;
                }
                if h < 4 {
                    row[h + 1] += 0.2;
                } else {
                    row[h] += 0.2;
                }
                row
            },
        );
        let report = run_arms(
            &model,
            &space,
            0,
            1,
            &PovertyDef::DimensionFloor(0),
            0.5,
            5,
        )
        .unwrap();
        assert_eq!(report.r_baseline, 1.0);
        // Health-only starts income-poor, so its risk stays 1.
        assert_eq!(report.arms[1].risk, 1.0);
        assert_eq!(report.arms[1].delta, 0.0);
        assert!(report.arms[0].delta > 0.0, "income arm should reduce risk");
        assert!(
            report.super_additivity_gap.abs() < 1e-9,
            "factorized kernel should be additive, gap = {}",
            report.super_additivity_gap
        );
        for arm in &report.arms {
            assert!(arm.risk >= 0.0 && arm.risk <= 1.0);
            assert!(arm.delta <= report.r_baseline);
        }
    }

    #[test]
    fn health_income_interaction_is_super_additive() {
        let space = space_2d(3, 5);
        // Low health multiplies downward income flow; good health damps
        // it. The health boost alone cannot leave the income floor, but
        // it protects the income boost, so the combination beats the sum.
        let model = joint_kernel(
            &space,
            |i, h| {
                let f = h as f64 / 4.0;
                let down = 0.5 - 0.4 * f;
                let up = 0.1 + 0.2 * f;
                let mut row = vec![0.0; 3];
                let u = if i + 1 < 3 { up } else { 0.0 };
                let d = if i > 0 { down } else { 0.0 };
                row[i] = 1.0 - u - d;
                if i + 1 < 3 {
                    row[i + 1] = u;
                }
                if i > 0 {
                    row[i - 1] = d;
                }
                row
            },
            |h| {
                let mut row = vec![0.0; 5];
                row[h] = 0.7;
                if h > 0 {
                    row[h - 1] += 0.15;
                } else {
                    row[h] += 0.15;
                }
                if h < 4 {
                    row[h + 1] += 0.15;
                } else {
                    row[h] += 0.15;
                }
                row
            },
        );
        let report = run_arms(
            &model,
            &space,
            0,
            1,
            &PovertyDef::DimensionFloor(0),
            0.5,
            5,
        )
        .unwrap();
        assert!(
            report.super_additivity_gap > 0.01,
            "interaction kernel should be super-additive, gap = {}",
            report.super_additivity_gap
        );
    }

    #[test]
    fn run_arms_validates_inputs() {
        let space = space_2d(3, 5);
        let model = joint_kernel(&space, sticky_income(3, 0.2, 0.2), memoryless_health(5));
        let pov = PovertyDef::DimensionFloor(0);
        assert!(run_arms(&model, &space, 0, 0, &pov, 0.25, 5).is_err());
        assert!(run_arms(&model, &space, 0, 5, &pov, 0.25, 5).is_err());
        assert!(run_arms(&model, &space, 0, 1, &pov, 0.0, 5).is_err());
        assert!(run_arms(&model, &space, 0, 1, &pov, 1.0, 5).is_err());
        let small = TransitionModel::from_matrix(DMatrix::from_row_slice(
            2,
            2,
            &[0.5, 0.5, 0.5, 0.5],
        ))
        .unwrap();
        assert!(run_arms(&small, &space, 0, 1, &pov, 0.25, 5).is_err());
    }

    #[test]
    fn health_neutral_kernel_gives_coinciding_retention_curves() {
        let space = space_2d(5, 5);
        // Memoryless health: one step erases the starting quintile, so
        // every quintile's curve is the same number.
        let model = joint_kernel(&space, sticky_income(5, 0.3, 0.2), memoryless_health(5));
        let curves =
            retention_curve(&model, &space, 0, 1, &[0.05, 0.2, 0.4], 5).unwrap();
        for b in 0..3 {
            for q in 1..5 {
                assert!(
                    (curves.values[q][b] - curves.values[0][b]).abs() < 1e-12,
                    "quintile {q} boost {b} diverged: {} vs {}",
                    curves.values[q][b],
                    curves.values[0][b]
                );
            }
        }
    }

    #[test]
    fn interaction_kernel_orders_retention_by_quintile() {
        let space = space_2d(5, 5);
        let model = joint_kernel(
            &space,
            |i, h| {
                let f = h as f64 / 4.0;
                sticky_income(5, 0.15 + 0.2 * f, 0.4 - 0.3 * f)(i, h)
            },
            |h| {
                let mut row = vec![0.0; 5];
                row[h] = 0.8;
                if h > 0 {
                    row[h - 1] += 0.1;
                } else {
                    row[h] += 0.1;
                }
                if h < 4 {
                    row[h + 1] += 0.1;
                } else {
                    row[h] += 0.1;
                }
                row
            },
        );
        let curves =
            retention_curve(&model, &space, 0, 1, &[0.1, 0.3, 0.5], 5).unwrap();
        for b in 0..3 {
            for q in 1..5 {
                assert!(
                    curves.values[q][b] > curves.values[q - 1][b],
                    "boost {b}: quintile {q} not above quintile {}",
                    q - 1
                );
            }
        }
    }

    #[test]
    fn retention_is_nondecreasing_in_boost_for_monotone_kernel() {
        let space = space_2d(5, 5);
        let model = joint_kernel(&space, sticky_income(5, 0.3, 0.2), memoryless_health(5));
        let curves = retention_curve(
            &model,
            &space,
            0,
            1,
            &[0.05, 0.15, 0.3, 0.5, 0.7],
            5,
        )
        .unwrap();
        for q in 0..5 {
            for b in 1..5 {
                assert!(
                    curves.values[q][b] >= curves.values[q][b - 1] - 1e-12,
                    "quintile {q}: retention dropped from boost {} to {}",
                    b - 1,
                    b
                );
            }
        }
        // Start bins are nondecreasing in the boost size.
        for b in 1..5 {
            assert!(curves.start_bins[b] >= curves.start_bins[b - 1]);
        }
    }

    #[test]
    fn oversized_boost_clamps_to_top_bin_and_flags() {
        let space = space_2d(5, 5);
        let model = joint_kernel(&space, sticky_income(5, 0.3, 0.2), memoryless_health(5));
        let curves = retention_curve(&model, &space, 0, 1, &[0.2, 2.0], 5).unwrap();
        assert!(!curves.clamped[0]);
        assert!(curves.clamped[1]);
        assert_eq!(curves.start_bins[1], 4);
    }

    #[test]
    fn retention_validates_inputs() {
        let space = space_2d(5, 5);
        let model = joint_kernel(&space, sticky_income(5, 0.3, 0.2), memoryless_health(5));
        assert!(retention_curve(&model, &space, 0, 1, &[], 5).is_err());
        assert!(retention_curve(&model, &space, 0, 1, &[-0.1], 5).is_err());
        assert!(retention_curve(&model, &space, 0, 1, &[0.2], 0).is_err());
        assert!(retention_curve(&model, &space, 0, 0, &[0.2], 5).is_err());
        // Health must have exactly five bins.
        let bad_space = space_2d(5, 4);
        let bad_model =
            joint_kernel(&bad_space, sticky_income(5, 0.3, 0.2), memoryless_health(4));
        assert!(retention_curve(&bad_model, &bad_space, 0, 1, &[0.2], 5).is_err());
    }

    #[test]
    fn higher_order_models_are_rejected() {
        let p = DMatrix::from_row_slice(
            4,
            2,
            &[0.8, 0.2, 0.6, 0.4, 0.3, 0.7, 0.1, 0.9],
        );
        let model = TransitionModel::from_conditional(2, 2, p).unwrap();
        assert!(poverty_return_risk(&model, 0, &[1], 5).is_err());
    }
}
