//! Persistence and mobility metrics of a transition kernel.
//!
//! Everything here quantifies how quickly (or whether) a chain forgets
//! its starting state: mixing times toward the stationary distribution,
//! mean first-passage times between states and from one state set into
//! another, escape-time distributions, the Shorrocks mobility index, and
//! supporting divergences. All functions take explicit square kernels;
//! higher-order models supply their augmented matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::stationary_of_matrix;

/// Default distance threshold for mixing.
pub const MIXING_EPSILON: f64 = 0.05;

/// Default step cap beyond which a chain is declared non-mixing.
pub const MIXING_CAP: u64 = 1_000_000;

/// Default decay rate mapping mixing steps onto the unit interval.
pub const TAU_MIX_RATE: f64 = 0.1;

/// Largest kernel side accepted by the passage-time solvers.
const MFPT_MAX_N: usize = 1024;

fn check_kernel(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() == 0 || p.nrows() != p.ncols() {
        return Err(Error::Param(format!(
            "expected a square nonempty kernel, got {}x{}",
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
                    "kernel entry ({i}, {j}) = {v} is not a probability"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!("kernel row {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// Total variation distance between two mass vectors of equal length.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Distance used when testing closeness to stationarity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingNorm {
    /// Total variation (half the L1 distance); the default.
    #[default]
    TotalVariation,
    L1,
    L2,
}

fn row_distance(row: &[f64], pi: &DVector<f64>, norm: MixingNorm) -> f64 {
    match norm {
        MixingNorm::TotalVariation => {
            0.5 * row.iter().zip(pi.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
        }
        MixingNorm::L1 => row.iter().zip(pi.iter()).map(|(a, b)| (a - b).abs()).sum(),
        MixingNorm::L2 => row
            .iter()
            .zip(pi.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
    }
}

/// Worst-start distance from stationarity, `pt` holding `P^t`.
fn worst_distance(pt: &DMatrix<f64>, pi: &DVector<f64>, norm: MixingNorm) -> f64 {
    let n = pt.ncols();
    let mut row = vec![0.0f64; n];
    let mut worst = 0.0f64;
    for x in 0..pt.nrows() {
        for j in 0..n {
            row[j] = pt[(x, j)];
        }
        worst = worst.max(row_distance(&row, pi, norm));
    }
    worst
}

/// Result of a mixing-time search. `steps` is `None` when the chain did
/// not come within `epsilon` of stationarity inside `cap` steps (periodic
/// or effectively frozen chains).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingTime {
    pub steps: Option<u64>,
    pub epsilon: f64,
    pub cap: u64,
    pub norm: MixingNorm,
}

impl MixingTime {
    /// Map onto (0, 1]: `1 - exp(-k t)`, with non-mixing chains mapping
    /// to exactly 1.
    pub fn tau(&self, k: f64) -> Result<f64> {
        match self.steps {
            Some(t) => tau_mix(t as f64, k),
            None => tau_mix(f64::INFINITY, k),
        }
    }
}

/// Smallest `t >= 1` with `max_x dist(P^t(x, .), pi) < epsilon`. The
/// worst-start distance is non-increasing in `t` (each row of `P^(t+1)`
/// is a convex combination of rows of `P^t`), so the search doubles `t`
/// until the threshold is crossed and then binary-searches the crossing;
/// cost is a handful of matrix squarings.
pub fn mixing_time(
    p: &DMatrix<f64>,
    epsilon: f64,
    cap: u64,
    norm: MixingNorm,
) -> Result<MixingTime> {
    check_kernel(p)?;
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::Param(format!(
            "mixing threshold must be positive, got {epsilon}"
        )));
    }
    if cap == 0 {
        return Err(Error::Param("step cap must be positive".into()));
    }
    let pi = stationary_of_matrix(p)?;
    let result = |steps| MixingTime {
        steps,
        epsilon,
        cap,
        norm,
    };

    // Powers P^(2^k) by repeated squaring.
    let mut powers: Vec<DMatrix<f64>> = vec![p.clone()];
    if worst_distance(&powers[0], &pi, norm) < epsilon {
        return Ok(result(Some(1)));
    }
    let mut t: u64 = 1;
    loop {
        if t >= cap {
            return Ok(result(None));
        }
        let last = powers.last().unwrap();
        let next = last * last;
        t = t.saturating_mul(2);
        let d = worst_distance(&next, &pi, norm);
        powers.push(next);
        if d < epsilon {
            break;
        }
    }
    if t > cap && worst_distance(&power_at(&powers, cap), &pi, norm) >= epsilon {
        return Ok(result(None));
    }

    // Invariant: lo fails, hi passes.
    let mut lo = t / 2;
    let mut hi = t;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if worst_distance(&power_at(&powers, mid), &pi, norm) < epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi > cap {
        return Ok(result(None));
    }
    Ok(result(Some(hi)))
}

/// `P^t` assembled from the binary expansion of `t` over precomputed
/// squarings `powers[k] = P^(2^k)`.
fn power_at(powers: &[DMatrix<f64>], t: u64) -> DMatrix<f64> {
    debug_assert!(t >= 1);
    let n = powers[0].nrows();
    let mut acc: Option<DMatrix<f64>> = None;
    for (k, pk) in powers.iter().enumerate() {
        if t & (1u64 << k) != 0 {
            acc = Some(match acc {
                None => pk.clone(),
                Some(a) => a * pk,
            });
        }
    }
    acc.unwrap_or_else(|| DMatrix::identity(n, n))
}

/// `1 - exp(-k t)` for `t` in steps; `t = inf` maps to exactly 1. The
/// rate `k` must be positive.
pub fn tau_mix(t: f64, k: f64) -> Result<f64> {
    if !k.is_finite() || k <= 0.0 {
        return Err(Error::Param(format!("decay rate must be positive, got {k}")));
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::Param(format!("step count must be nonnegative, got {t}")));
    }
    if t.is_infinite() {
        return Ok(1.0);
    }
    Ok(1.0 - (-k * t).exp())
}

/// Mean first-passage times and the Kemeny self-check.
#[derive(Debug, Clone, PartialEq)]
pub struct Mfpt {
    /// `m[(i, j)]`: expected steps from `i` until the first visit to `j`;
    /// the diagonal is 0 by convention.
    pub m: DMatrix<f64>,
    /// Kemeny constant `sum_j pi_j m[(i, j)]`, averaged over starts `i`.
    pub kemeny: f64,
    /// Largest deviation of any start's Kemeny sum from the mean. For an
    /// exact solve this is zero; it measures accumulated solver error and
    /// should be checked against the caller's tolerance.
    pub kemeny_spread: f64,
}

/// Mean first-passage times between all state pairs via one linear solve
/// per target column: `(I - P_{-j,-j}) m_j = 1`. Requires every state to
/// reach every other (regularize first); an unreachable target makes the
/// system singular.
pub fn mfpt(p: &DMatrix<f64>) -> Result<Mfpt> {
    check_kernel(p)?;
    let n = p.nrows();
    if n > MFPT_MAX_N {
        return Err(Error::Param(format!(
            "first-passage solver limited to {MFPT_MAX_N} states, got {n}"
        )));
    }
    let pi = stationary_of_matrix(p)?;
    let columns: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
            let k = others.len();
            let mut a = DMatrix::zeros(k, k);
            for (r, &i) in others.iter().enumerate() {
                for (c, &l) in others.iter().enumerate() {
                    a[(r, c)] = f64::from(r == c) - p[(i, l)];
                }
            }
            let b = DVector::from_element(k, 1.0);
            let sol = a.lu().solve(&b).ok_or_else(|| {
                Error::Numerical(format!(
                    "first-passage system for target {j} is singular; some state \
                     cannot reach it (regularize the model first)"
                ))
            })?;
            let mut col = vec![0.0; n];
            for (r, &i) in others.iter().enumerate() {
                col[i] = sol[r];
            }
            Ok(col)
        })
        .collect();

    let mut m = DMatrix::zeros(n, n);
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }

    let kemeny_by_start: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| pi[j] * m[(i, j)]).sum())
        .collect();
    let kemeny = kemeny_by_start.iter().sum::<f64>() / n as f64;
    let kemeny_spread = kemeny_by_start
        .iter()
        .map(|k| (k - kemeny).abs())
        .fold(0.0, f64::max);
    Ok(Mfpt {
        m,
        kemeny,
        kemeny_spread,
    })
}

/// How mass is spread over the start set `A` in set-passage questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetWeighting {
    /// Stationary mass restricted to `A`, renormalized: the long-run
    /// occupancy profile within the set. The default.
    Stationary,
    /// Uniform over `A`.
    Uniform,
}

fn set_masks(n: usize, from: &[usize], targets: &[usize]) -> Result<(Vec<bool>, Vec<bool>)> {
    if from.is_empty() || targets.is_empty() {
        return Err(Error::Param("start and target sets must be nonempty".into()));
    }
    let mut fm = vec![false; n];
    let mut tm = vec![false; n];
    for &s in from {
        if s >= n {
            return Err(Error::Param(format!("start state {s} out of range")));
        }
        fm[s] = true;
    }
    for &t in targets {
        if t >= n {
            return Err(Error::Param(format!("target state {t} out of range")));
        }
        tm[t] = true;
    }
    if (0..n).any(|i| fm[i] && tm[i]) {
        return Err(Error::Param("start and target sets overlap".into()));
    }
    Ok((fm, tm))
}

fn set_start_vector(
    p: &DMatrix<f64>,
    from_mask: &[bool],
    weighting: SetWeighting,
) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut w = vec![0.0f64; n];
    match weighting {
        SetWeighting::Uniform => {
            let k = from_mask.iter().filter(|&&f| f).count();
            for i in 0..n {
                if from_mask[i] {
                    w[i] = 1.0 / k as f64;
                }
            }
        }
        SetWeighting::Stationary => {
            let pi = stationary_of_matrix(p)?;
            let mut mass = 0.0;
            for i in 0..n {
                if from_mask[i] {
                    w[i] = pi[i];
                    mass += pi[i];
                }
            }
            if mass <= 0.0 {
                return Err(Error::Param(
                    "start set carries zero stationary mass; use uniform weighting \
                     or regularize the model"
                        .into(),
                ));
            }
            for v in &mut w {
                *v /= mass;
            }
        }
    }
    Ok(w)
}

/// Expected steps until the chain, started in `from` (weighted by
/// `weighting`), first enters `targets`. Solves `(I - Q) m = 1` with the
/// target set absorbing. The sets must be nonempty and disjoint.
pub fn mfpt_set(
    p: &DMatrix<f64>,
    from: &[usize],
    targets: &[usize],
    weighting: SetWeighting,
) -> Result<f64> {
    check_kernel(p)?;
    let n = p.nrows();
    if n > MFPT_MAX_N {
        return Err(Error::Param(format!(
            "first-passage solver limited to {MFPT_MAX_N} states, got {n}"
        )));
    }
    let (fm, tm) = set_masks(n, from, targets)?;
    let others: Vec<usize> = (0..n).filter(|&i| !tm[i]).collect();
    let k = others.len();
    let mut a = DMatrix::zeros(k, k);
    for (r, &i) in others.iter().enumerate() {
        for (c, &l) in others.iter().enumerate() {
            a[(r, c)] = f64::from(r == c) - p[(i, l)];
        }
    }
    let b = DVector::from_element(k, 1.0);
    let sol = a.lu().solve(&b).ok_or_else(|| {
        Error::Numerical(
            "passage system is singular; the target set is unreachable from \
             some start (regularize the model first)"
                .into(),
        )
    })?;
    let w = set_start_vector(p, &fm, weighting)?;
    let mut mean = 0.0;
    for (r, &i) in others.iter().enumerate() {
        mean += w[i] * sol[r];
    }
    Ok(mean)
}

/// Distribution of the first-entry time into a target set, from forward
/// iteration with the target set absorbing. `pmf[t]` is the probability
/// of first entry at exactly step `t` (index 0 is start mass already
/// inside the set). Quantiles are the smallest `t` whose cumulative mass
/// reaches the level; `None` when the horizon truncates too much mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeDistribution {
    pub pmf: Vec<f64>,
    /// Mean entry time with the truncated tail counted at the horizon;
    /// a lower bound that converges as the horizon grows.
    pub mean: f64,
    pub q05: Option<u64>,
    pub q95: Option<u64>,
    /// Mass absorbed within the horizon.
    pub absorbed: f64,
    pub horizon: usize,
}

/// First-entry distribution into `targets` from an explicit start
/// distribution over all states. Mass starting inside the target set is
/// absorbed at step 0.
pub fn escape_distribution_from(
    p: &DMatrix<f64>,
    start: &[f64],
    targets: &[usize],
    horizon: usize,
) -> Result<EscapeDistribution> {
    check_kernel(p)?;
    if horizon == 0 {
        return Err(Error::Param("horizon must be at least 1 step".into()));
    }
    let n = p.nrows();
    if start.len() != n {
        return Err(Error::Param(format!(
            "start distribution length {} does not match {n} states",
            start.len()
        )));
    }
    let sum: f64 = start.iter().sum();
    if start.iter().any(|&v| !v.is_finite() || v < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!(
            "start is not a probability distribution (sum {sum})"
        )));
    }
    if targets.is_empty() {
        return Err(Error::Param("target set is empty".into()));
    }
    let mut mask = vec![false; n];
    for &t in targets {
        if t >= n {
            return Err(Error::Param(format!("target state {t} out of range")));
        }
        mask[t] = true;
    }

    let mut pmf = Vec::with_capacity(horizon + 1);
    let mut alive = start.to_vec();
    let mut absorbed_now = 0.0;
    for i in 0..n {
        if mask[i] {
            absorbed_now += alive[i];
            alive[i] = 0.0;
        }
    }
    pmf.push(absorbed_now);
    for _ in 1..=horizon {
        let mut next = vec![0.0f64; n];
        for i in 0..n {
            let a = alive[i];
            if a > 0.0 {
                for j in 0..n {
                    next[j] += a * p[(i, j)];
                }
            }
        }
        let mut hit = 0.0;
        for j in 0..n {
            if mask[j] {
                hit += next[j];
                next[j] = 0.0;
            }
        }
        pmf.push(hit);
        alive = next;
    }

    let absorbed: f64 = pmf.iter().sum();
    let leftover = (1.0 - absorbed).max(0.0);
    let mean = pmf
        .iter()
        .enumerate()
        .map(|(t, &m)| t as f64 * m)
        .sum::<f64>()
        + leftover * horizon as f64;
    let quantile = |q: f64| -> Option<u64> {
        let mut cum = 0.0;
        for (t, &m) in pmf.iter().enumerate() {
            cum += m;
            if cum >= q {
                return Some(t as u64);
            }
        }
        None
    };
    Ok(EscapeDistribution {
        mean,
        q05: quantile(0.05),
        q95: quantile(0.95),
        absorbed,
        horizon,
        pmf,
    })
}

/// Escape-time distribution from set `A` into set `B` within `horizon`
/// steps; `A` and `B` must be nonempty and disjoint.
pub fn escape_time_distribution(
    p: &DMatrix<f64>,
    from: &[usize],
    targets: &[usize],
    weighting: SetWeighting,
    horizon: usize,
) -> Result<EscapeDistribution> {
    check_kernel(p)?;
    let (fm, _) = set_masks(p.nrows(), from, targets)?;
    let start = set_start_vector(p, &fm, weighting)?;
    escape_distribution_from(p, &start, targets, horizon)
}

/// Shorrocks mobility index `(N - trace P) / (N - 1)`. `raw` may exceed 1
/// for strongly anti-persistent chains; `clamped` is cut to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shorrocks {
    pub raw: f64,
    pub clamped: f64,
}

/// Shorrocks trace index of a kernel; undefined for a single state.
pub fn shorrocks(p: &DMatrix<f64>) -> Result<Shorrocks> {
    check_kernel(p)?;
    let n = p.nrows();
    if n < 2 {
        return Err(Error::Param(
            "the Shorrocks index needs at least two states".into(),
        ));
    }
    let raw = (n as f64 - p.trace()) / (n as f64 - 1.0);
    Ok(Shorrocks {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

/// Kullback-Leibler divergence `sum p ln(p/q)` in nats. Zero mass in `p`
/// contributes zero; positive `p` mass where `q` is zero is a domain
/// error (infinite divergence).
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Param(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    for (name, v) in [("first", p), ("second", q)] {
        let sum: f64 = v.iter().sum();
        if v.iter().any(|&x| !x.is_finite() || x < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Param(format!(
                "{name} argument is not a probability distribution (sum {sum})"
            )));
        }
    }
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::Domain(
                    "divergence is infinite: mass where the reference has none".into(),
                ));
            }
            d += pi * (pi / qi).ln();
        }
    }
    Ok(d.max(0.0))
}

/// Entropy rate `-sum_i pi_i sum_j p_ij ln p_ij` in nats per step.
pub fn entropy_rate(p: &DMatrix<f64>, pi: &DVector<f64>) -> Result<f64> {
    check_kernel(p)?;
    if pi.len() != p.nrows() {
        return Err(Error::Param(format!(
            "stationary vector length {} does not match {} states",
            pi.len(),
            p.nrows()
        )));
    }
    let mut h = 0.0;
    for i in 0..p.nrows() {
        let mut row = 0.0;
        for j in 0..p.ncols() {
            let v = p[(i, j)];
            if v > 0.0 {
                row -= v * v.ln();
            }
        }
        h += pi[i] * row;
    }
    Ok(h)
}

/// Options for the aggregate metrics report. Defaults (`epsilon` 0.05,
/// rate `k` 0.1) are echoed into the report so emitted numbers are
/// self-describing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub epsilon: f64,
    pub cap: u64,
    pub norm: MixingNorm,
    /// Decay rate for the bounded mixing transform.
    pub k: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            epsilon: MIXING_EPSILON,
            cap: MIXING_CAP,
            norm: MixingNorm::TotalVariation,
            k: TAU_MIX_RATE,
        }
    }
}

/// Aggregate persistence metrics of one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mixing: MixingTime,
    /// `1 - exp(-k * mixing steps)`; exactly 1 for non-mixing chains.
    pub tau_mix: f64,
    pub shorrocks: Shorrocks,
    pub entropy_rate: f64,
    pub kemeny: f64,
    pub kemeny_spread: f64,
    /// Row-major mean first-passage times.
    pub mfpt: Vec<Vec<f64>>,
}

/// Compute the full metrics report for a kernel.
pub fn compute_metrics(p: &DMatrix<f64>, options: &MetricsOptions) -> Result<MetricsReport> {
    let mixing = mixing_time(p, options.epsilon, options.cap, options.norm)?;
    let tau = mixing.tau(options.k)?;
    let sh = shorrocks(p)?;
    let pi = stationary_of_matrix(p)?;
    let h = entropy_rate(p, &pi)?;
    let fp = mfpt(p)?;
    let m = (0..p.nrows())
        .map(|i| (0..p.ncols()).map(|j| fp.m[(i, j)]).collect())
        .collect();
    Ok(MetricsReport {
        mixing,
        tau_mix: tau,
        shorrocks: sh,
        entropy_rate: h,
        kemeny: fp.kemeny,
        kemeny_spread: fp.kemeny_spread,
        mfpt: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat)
    }

    fn two_state(a: f64, b: f64) -> DMatrix<f64> {
        mat(&[&[1.0 - a, a], &[b, 1.0 - b]])
    }

    const TV: MixingNorm = MixingNorm::TotalVariation;

    #[test]
    fn periodic_chain_never_mixes() {
        let p = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let m = mixing_time(&p, MIXING_EPSILON, 10_000, TV).unwrap();
        assert_eq!(m.steps, None);
        assert_abs_diff_eq!(m.tau(TAU_MIX_RATE).unwrap(), 1.0);
    }

    #[test]
    fn identical_rows_mix_in_one_step() {
        let p = mat(&[&[0.3, 0.7], &[0.3, 0.7]]);
        let m = mixing_time(&p, MIXING_EPSILON, MIXING_CAP, TV).unwrap();
        assert_eq!(m.steps, Some(1));
    }

    #[test]
    fn mixing_time_matches_exact_two_state_contraction() {
        // For the two-state chain the worst-start TV after t steps is
        // max(a, b) / (a + b) * |1 - a - b|^t exactly.
        let (a, b) = (0.3, 0.1);
        let p = two_state(a, b);
        let m = mixing_time(&p, 0.05, MIXING_CAP, TV).unwrap().steps.unwrap();
        let lambda: f64 = 1.0 - a - b;
        let c = a.max(b) / (a + b);
        let exact = ((0.05f64 / c).ln() / lambda.ln()).ceil() as u64;
        assert_eq!(m, exact);
        let before = c * lambda.powi(m as i32 - 1);
        assert!(before >= 0.05);
    }

    #[test]
    fn mixing_time_is_nonincreasing_in_epsilon() {
        let p = mat(&[&[0.8, 0.15, 0.05], &[0.2, 0.7, 0.1], &[0.1, 0.3, 0.6]]);
        let mut last = u64::MAX;
        for eps in [0.005, 0.05, 0.2, 0.5] {
            let t = mixing_time(&p, eps, MIXING_CAP, TV).unwrap().steps.unwrap();
            assert!(t <= last, "t({eps}) = {t} exceeds t at smaller epsilon {last}");
            last = t;
        }
    }

    #[test]
    fn l1_norm_doubles_tv_threshold_behaviour() {
        let p = mat(&[&[0.8, 0.2], &[0.3, 0.7]]);
        // d_L1 = 2 d_TV, so epsilon in L1 equals epsilon/2 in TV.
        let tv = mixing_time(&p, 0.05, MIXING_CAP, TV).unwrap().steps.unwrap();
        let l1 = mixing_time(&p, 0.1, MIXING_CAP, MixingNorm::L1)
            .unwrap()
            .steps
            .unwrap();
        assert_eq!(tv, l1);
        // L2 on two states: |row - pi| has equal components, L2 = L1/sqrt(2).
        let l2 = mixing_time(&p, 0.1 / 2f64.sqrt(), MIXING_CAP, MixingNorm::L2)
            .unwrap()
            .steps
            .unwrap();
        assert_eq!(tv, l2);
    }

    #[test]
    fn tau_transform_matches_frozen_value() {
        let tau = tau_mix(42.44, 0.1).unwrap();
        assert_abs_diff_eq!(tau, 0.9856498, epsilon = 1e-6);
        assert_eq!(tau_mix(f64::INFINITY, 0.1).unwrap(), 1.0);
        assert!(tau_mix(10.0, 0.0).is_err());
        assert!(tau_mix(10.0, -0.1).is_err());
    }

    #[test]
    fn tau_transform_is_increasing_in_steps() {
        let mut last = -1.0;
        for t in [0.0, 1.0, 5.0, 50.0] {
            let tau = tau_mix(t, 0.1).unwrap();
            assert!(tau > last);
            last = tau;
        }
        assert!(last < 1.0);
    }

    #[test]
    fn two_state_mfpt_is_one_over_rate() {
        let p = two_state(0.2, 0.4);
        let f = mfpt(&p).unwrap();
        assert_abs_diff_eq!(f.m[(0, 1)], 1.0 / 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(f.m[(1, 0)], 1.0 / 0.4, epsilon = 1e-12);
        assert_eq!(f.m[(0, 0)], 0.0);
        assert_eq!(f.m[(1, 1)], 0.0);
    }

    #[test]
    fn identical_rows_mfpt_is_inverse_stationary_mass() {
        let p = mat(&[&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]]);
        let f = mfpt(&p).unwrap();
        for i in 0..3 {
            for (j, mass) in [(0, 0.2), (1, 0.3), (2, 0.5)] {
                if i != j {
                    assert_abs_diff_eq!(f.m[(i, j)], 1.0 / mass, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn kemeny_sum_is_start_independent() {
        let p = mat(&[&[0.5, 0.3, 0.2], &[0.1, 0.6, 0.3], &[0.2, 0.2, 0.6]]);
        let f = mfpt(&p).unwrap();
        assert!(
            f.kemeny_spread < 1e-9,
            "kemeny spread {} too large",
            f.kemeny_spread
        );
        assert!(f.kemeny > 0.0);
    }

    #[test]
    fn mfpt_fails_cleanly_on_unreachable_target() {
        // State 2 is unreachable from 0 and 1.
        let p = mat(&[&[0.5, 0.5, 0.0], &[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(matches!(mfpt(&p), Err(Error::Numerical(_))));
    }

    #[test]
    fn set_passage_reduces_to_single_pair_mfpt() {
        let p = two_state(0.2, 0.4);
        let m = mfpt_set(&p, &[0], &[1], SetWeighting::Stationary).unwrap();
        assert_abs_diff_eq!(m, 5.0, epsilon = 1e-12);
        let mu = mfpt_set(&p, &[0], &[1], SetWeighting::Uniform).unwrap();
        assert_abs_diff_eq!(mu, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn set_passage_matches_hand_solved_identical_rows() {
        // Rows all (0.2, 0.3, 0.5), target {2}: from either other state
        // the passage time solves m = 1 + 0.5 m, so m = 2 = 1 / pi_2.
        let p = mat(&[&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]]);
        for w in [SetWeighting::Stationary, SetWeighting::Uniform] {
            let m = mfpt_set(&p, &[0, 1], &[2], w).unwrap();
            assert_abs_diff_eq!(m, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn set_passage_weightings_differ_when_passage_times_do() {
        // From 0 the target {2} is one hop; from 1 it takes a detour.
        let p = mat(&[
            &[0.1, 0.1, 0.8],
            &[0.8, 0.1, 0.1],
            &[0.4, 0.3, 0.3],
        ]);
        let s = mfpt_set(&p, &[0, 1], &[2], SetWeighting::Stationary).unwrap();
        let u = mfpt_set(&p, &[0, 1], &[2], SetWeighting::Uniform).unwrap();
        assert!((s - u).abs() > 1e-6);
    }

    #[test]
    fn set_passage_rejects_bad_sets() {
        let p = two_state(0.2, 0.4);
        assert!(mfpt_set(&p, &[], &[1], SetWeighting::Uniform).is_err());
        assert!(mfpt_set(&p, &[0], &[], SetWeighting::Uniform).is_err());
        assert!(mfpt_set(&p, &[0, 1], &[1], SetWeighting::Uniform).is_err());
        assert!(mfpt_set(&p, &[0], &[7], SetWeighting::Uniform).is_err());
    }

    #[test]
    fn deterministic_escape_is_a_point_mass_at_one() {
        let p = mat(&[&[0.0, 1.0], &[0.0, 1.0]]);
        let e = escape_time_distribution(&p, &[0], &[1], SetWeighting::Uniform, 50).unwrap();
        assert_abs_diff_eq!(e.pmf[0], 0.0);
        assert_abs_diff_eq!(e.pmf[1], 1.0);
        assert_abs_diff_eq!(e.mean, 1.0, epsilon = 1e-12);
        assert_eq!(e.q05, Some(1));
        assert_eq!(e.q95, Some(1));
        assert_abs_diff_eq!(e.absorbed, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn geometric_escape_matches_closed_form() {
        // Leave state 0 with probability 0.5 per step: P(T = t) = 0.5^t.
        let p = mat(&[&[0.5, 0.5], &[0.0, 1.0]]);
        let e = escape_time_distribution(&p, &[0], &[1], SetWeighting::Uniform, 200).unwrap();
        for t in 1..=10usize {
            assert_abs_diff_eq!(e.pmf[t], 0.5f64.powi(t as i32), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(e.mean, 2.0, epsilon = 1e-9);
        assert_eq!(e.q05, Some(1));
        // CDF(4) = 0.9375 < 0.95 <= CDF(5).
        assert_eq!(e.q95, Some(5));
    }

    #[test]
    fn escape_mean_agrees_with_set_passage_solve() {
        let p = mat(&[
            &[0.6, 0.2, 0.1, 0.1],
            &[0.25, 0.5, 0.15, 0.1],
            &[0.1, 0.2, 0.4, 0.3],
            &[0.05, 0.05, 0.3, 0.6],
        ]);
        let direct = mfpt_set(&p, &[0, 1, 2], &[3], SetWeighting::Stationary).unwrap();
        let e = escape_time_distribution(&p, &[0, 1, 2], &[3], SetWeighting::Stationary, 5_000)
            .unwrap();
        assert_abs_diff_eq!(e.mean, direct, epsilon = 1e-6);
    }

    #[test]
    fn truncated_escape_reports_missing_mass() {
        let p = mat(&[&[0.999, 0.001], &[0.0, 1.0]]);
        let e = escape_time_distribution(&p, &[0], &[1], SetWeighting::Uniform, 10).unwrap();
        assert!(e.absorbed < 0.05);
        assert_eq!(e.q95, None);
        assert_eq!(e.q05, None);
    }

    #[test]
    fn explicit_start_mass_inside_targets_is_absorbed_at_zero() {
        let p = two_state(0.5, 0.5);
        let e = escape_distribution_from(&p, &[0.25, 0.75], &[1], 20).unwrap();
        assert_abs_diff_eq!(e.pmf[0], 0.75);
        assert_abs_diff_eq!(e.pmf[1], 0.125);
    }

    #[test]
    fn shorrocks_frozen_examples() {
        let identity = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(shorrocks(&identity).unwrap().raw, 0.0);

        let anti = mat(&[
            &[0.0, 0.5, 0.5],
            &[0.5, 0.0, 0.5],
            &[0.5, 0.5, 0.0],
        ]);
        let s = shorrocks(&anti).unwrap();
        assert_abs_diff_eq!(s.raw, 1.5);
        assert_abs_diff_eq!(s.clamped, 1.0);

        let flat = mat(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_abs_diff_eq!(shorrocks(&flat).unwrap().raw, 1.0);

        let single = mat(&[&[1.0]]);
        assert!(shorrocks(&single).is_err());
    }

    #[test]
    fn kl_frozen_examples() {
        let d = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(d, 2.0f64.ln(), epsilon = 1e-14);
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(kl_divergence(&[0.7, 0.7], &[0.5, 0.5]).is_err());
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn entropy_rate_frozen_examples() {
        let det = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let pi = DVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(entropy_rate(&det, &pi).unwrap(), 0.0);

        let flat = mat(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_abs_diff_eq!(
            entropy_rate(&flat, &pi).unwrap(),
            2.0f64.ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn metrics_report_is_internally_consistent() {
        let p = mat(&[&[0.8, 0.15, 0.05], &[0.2, 0.7, 0.1], &[0.1, 0.3, 0.6]]);
        let r = compute_metrics(&p, &MetricsOptions::default()).unwrap();
        let steps = r.mixing.steps.unwrap();
        assert_abs_diff_eq!(
            r.tau_mix,
            1.0 - (-0.1 * steps as f64).exp(),
            epsilon = 1e-12
        );
        assert!(r.kemeny_spread < 1e-9);
        assert_eq!(r.mfpt.len(), 3);
        assert!(r.entropy_rate > 0.0);
        assert!(r.shorrocks.raw > 0.0 && r.shorrocks.raw < 1.0);
    }

    proptest! {
        #[test]
        fn worst_start_tv_is_monotone_in_steps(
            raw in proptest::collection::vec(1u8..50, 9),
        ) {
            let mut p = DMatrix::zeros(3, 3);
            for i in 0..3 {
                let row: Vec<f64> = raw[i * 3..(i + 1) * 3].iter().map(|&v| v as f64).collect();
                let sum: f64 = row.iter().sum();
                for j in 0..3 {
                    p[(i, j)] = row[j] / sum;
                }
            }
            let pi = stationary_of_matrix(&p).unwrap();
            let mut pt = p.clone();
            let mut last = worst_distance(&pt, &pi, TV);
            for _ in 0..30 {
                pt = &pt * &p;
                let d = worst_distance(&pt, &pi, TV);
                prop_assert!(d <= last + 1e-12);
                last = d;
            }
        }

        #[test]
        fn shorrocks_is_invariant_under_relabeling(
            raw in proptest::collection::vec(1u8..50, 16),
            swap in (0usize..4, 0usize..4),
        ) {
            let mut p = DMatrix::zeros(4, 4);
            for i in 0..4 {
                let row: Vec<f64> = raw[i * 4..(i + 1) * 4].iter().map(|&v| v as f64).collect();
                let sum: f64 = row.iter().sum();
                for j in 0..4 {
                    p[(i, j)] = row[j] / sum;
                }
            }
            let mut q = p.clone();
            q.swap_rows(swap.0, swap.1);
            q.swap_columns(swap.0, swap.1);
            let a = shorrocks(&p).unwrap();
            let b = shorrocks(&q).unwrap();
            prop_assert!((a.raw - b.raw).abs() < 1e-12);
        }

        #[test]
        fn kl_is_nonnegative(
            raw_p in proptest::collection::vec(1u8..50, 4),
            raw_q in proptest::collection::vec(1u8..50, 4),
        ) {
            let norm = |raw: &[u8]| {
                let s: f64 = raw.iter().map(|&v| v as f64).sum();
                raw.iter().map(|&v| v as f64 / s).collect::<Vec<_>>()
            };
            let d = kl_divergence(&norm(&raw_p), &norm(&raw_q)).unwrap();
            prop_assert!(d >= 0.0);
        }

        #[test]
        fn set_passage_mean_matches_escape_distribution(
            raw in proptest::collection::vec(1u8..50, 9),
        ) {
            let mut p = DMatrix::zeros(3, 3);
            for i in 0..3 {
                let row: Vec<f64> = raw[i * 3..(i + 1) * 3].iter().map(|&v| v as f64).collect();
                let sum: f64 = row.iter().sum();
                for j in 0..3 {
                    p[(i, j)] = row[j] / sum;
                }
            }
            let direct = mfpt_set(&p, &[1, 2], &[0], SetWeighting::Uniform).unwrap();
            let e = escape_time_distribution(&p, &[1, 2], &[0], SetWeighting::Uniform, 3_000)
                .unwrap();
            prop_assert!((e.mean - direct).abs() < 1e-6);
        }
    }
}
