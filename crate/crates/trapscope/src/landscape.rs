//! Potential landscapes over the discrete state space.
//!
//! The stationary distribution `pi` of a fitted model defines a potential
//! `phi_i = -ln pi_i`; low potential marks states where probability mass
//! accumulates. On that surface we locate stable fixed points (potential
//! wells), unstable ones (barriers between wells), basins of attraction
//! on 2D grids, and a curl diagnostic measuring how far the chain is from
//! detailed balance (a genuinely irreversible chain circulates mass and
//! its landscape alone understates the dynamics).
//!
//! Stationary solves are exposed through two independent routes, power
//! iteration and a direct linear solve, so results can be cross-checked;
//! the convenience wrappers try power iteration first and fall back to
//! the direct solve for chains where iteration cannot settle (periodic
//! kernels oscillate forever).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::TransitionModel;
use crate::state_space::StateSpace;

/// Residual threshold the power route must reach to count as converged.
pub const STATIONARY_TOL: f64 = 1e-12;

/// Default iteration budget for the power route.
pub const STATIONARY_MAX_ITER: usize = 100_000;

/// Two potential values within this tolerance count as tied when locating
/// fixed points; tied neighbors merge into one plateau.
pub const PLATEAU_TIE_TOL: f64 = 1e-12;

/// Largest matrix side for which the direct stationary solve is attempted.
const DIRECT_SOLVE_MAX_N: usize = 2048;

fn check_square_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() == 0 || p.nrows() != p.ncols() {
        return Err(Error::Param(format!(
            "stationary solve needs a square nonempty matrix, got {}x{}",
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
                    "matrix entry ({i}, {j}) = {v} is not a probability"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!(
                "matrix row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Stationary distribution by power iteration from the uniform vector.
/// Iterates `pi <- pi P` until the infinity-norm residual `|pi P - pi|`
/// drops below `tol`, polishing further while progress continues. Fails
/// with a numerical error when the residual cannot reach `tol` within
/// `max_iter` sweeps (periodic chains never settle).
pub fn stationary_power(p: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    check_square_stochastic(p)?;
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Param(format!("tolerance must be positive, got {tol}")));
    }
    let n = p.nrows();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    let mut best_residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = p.tr_mul(&pi);
        let residual = (&next - &pi).amax();
        pi = next;
        if residual < best_residual {
            best_residual = residual;
        }
        // Keep polishing well past tol: the extra sweeps are cheap and a
        // near-machine-precision pi keeps downstream flow balances tight.
        if residual < tol * 1e-3 || residual == 0.0 {
            let total: f64 = pi.iter().sum();
            pi /= total;
            return Ok(pi);
        }
    }
    // Accept if the requested tolerance was met even though the polish
    // target was not.
    let residual = (p.tr_mul(&pi) - &pi).amax();
    if residual < tol {
        let total: f64 = pi.iter().sum();
        pi /= total;
        return Ok(pi);
    }
    Err(Error::Numerical(format!(
        "power iteration did not reach residual {tol} in {max_iter} sweeps \
         (best {best_residual:.3e}); the chain may be periodic"
    )))
}

/// Stationary distribution by direct linear solve: the balance equations
/// `(P^T - I) pi = 0` with one equation replaced by the normalization
/// `sum pi = 1`. Handles periodic chains; fails on reducible ones, where
/// the stationary distribution is not unique.
pub fn stationary_direct(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_square_stochastic(p)?;
    let n = p.nrows();
    if n > DIRECT_SOLVE_MAX_N {
        return Err(Error::Param(format!(
            "direct stationary solve limited to {DIRECT_SOLVE_MAX_N} states, got {n}"
        )));
    }
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or_else(|| {
        Error::Numerical(
            "balance equations are singular; the chain is reducible and has \
             no unique stationary distribution"
                .into(),
        )
    })?;
    let mut pi = pi;
    for v in pi.iter_mut() {
        // Clip solver noise; genuine negative mass is a failure.
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::Numerical(format!(
                    "direct solve produced negative stationary mass {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Numerical("direct solve produced zero mass".into()));
    }
    pi /= total;
    Ok(pi)
}

/// Stationary distribution of an explicit transition matrix: power
/// iteration, falling back to the direct solve when iteration cannot
/// settle.
pub fn stationary_of_matrix(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    match stationary_power(p, STATIONARY_TOL, STATIONARY_MAX_ITER) {
        Ok(pi) => Ok(pi),
        Err(Error::Numerical(_)) => stationary_direct(p),
        Err(e) => Err(e),
    }
}

/// Stationary distribution of a model over its base states. Higher-order
/// models are resolved on the augmented tuple chain and marginalized to
/// the most recent state.
pub fn stationary_distribution(model: &TransitionModel) -> Result<DVector<f64>> {
    let a = model.augmented()?;
    let pi_aug = stationary_of_matrix(&a)?;
    if model.order() == 1 {
        return Ok(pi_aug);
    }
    let n = model.base_n();
    let mut pi = DVector::zeros(n);
    for (r, &mass) in pi_aug.iter().enumerate() {
        pi[r % n] += mass;
    }
    Ok(pi)
}

/// Potential `phi_i = -ln pi_i`. States with zero stationary mass get an
/// infinite potential; regularize the model first if that is unwanted.
pub fn potential(pi: &DVector<f64>) -> Vec<f64> {
    pi.iter()
        .map(|&v| if v > 0.0 { -v.ln() } else { f64::INFINITY })
        .collect()
}

/// Fixed points of a 1D potential profile. Bins within
/// [`PLATEAU_TIE_TOL`] of their neighbor merge into plateaus first; each
/// reported index is a plateau's midpoint bin.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPoints {
    /// Potential wells: plateaus strictly below every adjacent bin.
    pub stable: Vec<usize>,
    /// Barriers: interior plateaus strictly above both adjacent bins.
    /// A plateau touching the domain boundary is never a barrier.
    pub unstable: Vec<usize>,
}

/// Locate stable and unstable fixed points of a 1D potential.
pub fn find_fixed_points_1d(phi: &[f64]) -> Result<FixedPoints> {
    if phi.is_empty() {
        return Err(Error::Param("empty potential profile".into()));
    }
    if phi.iter().any(|v| v.is_nan()) {
        return Err(Error::Param("potential profile contains NaN".into()));
    }
    // Collapse tied neighbors into plateau runs [start, end].
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0usize;
    for i in 1..phi.len() {
        let tied = (phi[i] - phi[i - 1]).abs() <= PLATEAU_TIE_TOL;
        if !tied {
            runs.push((start, i - 1));
            start = i;
        }
    }
    runs.push((start, phi.len() - 1));

    let mut out = FixedPoints::default();
    for (ri, &(a, b)) in runs.iter().enumerate() {
        let v = phi[a];
        let left = (ri > 0).then(|| phi[runs[ri - 1].1]);
        let right = (ri + 1 < runs.len()).then(|| phi[runs[ri + 1].0]);
        let mid = (a + b) / 2;
        let below_all = left.is_none_or(|l| v < l) && right.is_none_or(|r| v < r);
        if below_all {
            out.stable.push(mid);
            continue;
        }
        // Interior strict maximum; runs touching either end of the domain
        // cannot be barriers.
        if let (Some(l), Some(r)) = (left, right) {
            if v > l && v > r {
                out.unstable.push(mid);
            }
        }
    }
    Ok(out)
}

/// Neighbor connectivity for 2D basin descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// Edge-adjacent cells only.
    Four,
    /// Edge- and corner-adjacent cells.
    Eight,
}

/// Basin decomposition of a 2D potential grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basins2d {
    /// Grid shape `(rows, cols)`; flat index is `row * cols + col`.
    pub shape: (usize, usize),
    /// For every cell, the flat index of the minimum its steepest-descent
    /// path terminates in.
    pub basin: Vec<usize>,
    /// Distinct basin minima, ascending by flat index.
    pub minima: Vec<usize>,
    /// Interior deciles (10%..90%) of the finite potential values, usable
    /// as contour levels.
    pub contour_levels: Vec<f64>,
    pub neighborhood: Neighborhood,
}

/// Decompose a 2D potential grid into basins of attraction by steepest
/// descent. Moves compare `(phi, flat index)` lexicographically, so
/// descent always terminates and plateaus drain deterministically toward
/// their lowest-indexed cell; a fully flat grid forms one basin rooted at
/// cell 0.
pub fn basins_2d(phi: &[f64], shape: (usize, usize), neighborhood: Neighborhood) -> Result<Basins2d> {
    let (rows, cols) = shape;
    if rows == 0 || cols == 0 || phi.len() != rows * cols {
        return Err(Error::Param(format!(
            "grid shape {rows}x{cols} does not match {} potential values",
            phi.len()
        )));
    }
    if phi.iter().any(|v| v.is_nan()) {
        return Err(Error::Param("potential grid contains NaN".into()));
    }

    let key = |idx: usize| (phi[idx], idx);
    let mut step = vec![usize::MAX; phi.len()];
    for r in 0..rows {
        for c in 0..cols {
            let idx = r * cols + c;
            let mut best = key(idx);
            let mut consider = |rr: i64, cc: i64| {
                if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                    let n = rr as usize * cols + cc as usize;
                    let k = key(n);
                    if k.0 < best.0 || (k.0 == best.0 && k.1 < best.1) {
                        best = k;
                    }
                }
            };
            let (ri, ci) = (r as i64, c as i64);
            consider(ri - 1, ci);
            consider(ri + 1, ci);
            consider(ri, ci - 1);
            consider(ri, ci + 1);
            if neighborhood == Neighborhood::Eight {
                consider(ri - 1, ci - 1);
                consider(ri - 1, ci + 1);
                consider(ri + 1, ci - 1);
                consider(ri + 1, ci + 1);
            }
            step[idx] = best.1;
        }
    }

    // Follow descent chains with memoization; each step strictly decreases
    // the lexicographic key, so chains are acyclic.
    let mut basin = vec![usize::MAX; phi.len()];
    for start in 0..phi.len() {
        if basin[start] != usize::MAX {
            continue;
        }
        let mut path = vec![start];
        let mut cur = start;
        loop {
            let next = step[cur];
            if next == cur {
                break; // local minimum
            }
            if basin[next] != usize::MAX {
                cur = basin[next];
                break;
            }
            path.push(next);
            cur = next;
        }
        let root = cur;
        for visited in path {
            basin[visited] = root;
        }
    }

    let mut minima: Vec<usize> = basin.clone();
    minima.sort_unstable();
    minima.dedup();

    let mut finite: Vec<f64> = phi.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    let contour_levels = if finite.is_empty() {
        Vec::new()
    } else {
        (1..10)
            .map(|d| {
                let pos = d as f64 / 10.0 * (finite.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let frac = pos - lo as f64;
                finite[lo] * (1.0 - frac) + finite[hi] * frac
            })
            .collect()
    };

    Ok(Basins2d {
        shape,
        basin,
        minima,
        contour_levels,
        neighborhood,
    })
}

/// Detailed-balance violation summary. `total` adds up the absolute net
/// probability circulation over unordered state pairs,
/// `|pi_i p_ij - pi_j p_ji|`; `normalized` divides by the total exchanged
/// mass so 0 means reversible and 1 means pure circulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurlDiagnostic {
    pub total: f64,
    pub normalized: f64,
    /// Largest single-pair net flow.
    pub max_pair: f64,
    /// State pair carrying `max_pair`, when any flow exists.
    pub argmax_pair: Option<(usize, usize)>,
}

/// Measure how far a chain is from detailed balance under stationary
/// distribution `pi`.
pub fn curl_diagnostic(p: &DMatrix<f64>, pi: &DVector<f64>) -> Result<CurlDiagnostic> {
    check_square_stochastic(p)?;
    let n = p.nrows();
    if pi.len() != n {
        return Err(Error::Param(format!(
            "stationary vector length {} does not match {n} states",
            pi.len()
        )));
    }
    let mut total = 0.0;
    let mut exchanged = 0.0;
    let mut max_pair = 0.0f64;
    let mut argmax = None;
    for i in 0..n {
        for j in i + 1..n {
            let fwd = pi[i] * p[(i, j)];
            let back = pi[j] * p[(j, i)];
            let net = (fwd - back).abs();
            total += net;
            exchanged += fwd + back;
            if net > max_pair {
                max_pair = net;
                argmax = Some((i, j));
            }
        }
    }
    let normalized = if exchanged > 0.0 { total / exchanged } else { 0.0 };
    Ok(CurlDiagnostic {
        total,
        normalized,
        max_pair,
        argmax_pair: argmax,
    })
}

/// The additive reversibilization `p'_ij = (pi_i p_ij + pi_j p_ji) / (2 pi_i)`:
/// the nearest reversible chain sharing `pi`, against which the original
/// landscape can be compared. Requires strictly positive `pi` and a `pi`
/// that is actually stationary for `p` (otherwise rows cannot stay
/// stochastic).
pub fn reversibilize(p: &DMatrix<f64>, pi: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_square_stochastic(p)?;
    let n = p.nrows();
    if pi.len() != n {
        return Err(Error::Param(format!(
            "stationary vector length {} does not match {n} states",
            pi.len()
        )));
    }
    if pi.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Param(
            "reversibilization needs strictly positive stationary mass; \
             regularize the model first"
                .into(),
        ));
    }
    let residual = (p.tr_mul(pi) - pi).amax();
    if residual > 1e-8 {
        return Err(Error::Param(format!(
            "supplied vector is not stationary for the matrix (residual {residual:.3e})"
        )));
    }
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off_sum = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = (pi[i] * p[(i, j)] + pi[j] * p[(j, i)]) / (2.0 * pi[i]);
            out[(i, j)] = v;
            off_sum += v;
        }
        // Row sums stay 1 because inflow equals outflow at stationarity;
        // assign the diagonal as the exact remainder.
        out[(i, i)] = (1.0 - off_sum).max(0.0);
    }
    Ok(out)
}

/// Marginal landscape of one dimension: stationary mass summed over all
/// other dimensions, its potential, and the 1D fixed points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionLandscape {
    pub name: String,
    pub pi: Vec<f64>,
    pub phi: Vec<f64>,
    pub fixed_points: FixedPoints,
}

/// Full landscape analysis of a model on its state space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandscapeReport {
    /// Stationary mass per joint state (flat indexing of the space).
    pub pi: Vec<f64>,
    /// Potential per joint state.
    pub phi: Vec<f64>,
    pub dimensions: Vec<DimensionLandscape>,
    /// Basin decomposition of the joint grid; present only for spaces
    /// with exactly two dimensions.
    pub basins: Option<Basins2d>,
    pub curl: CurlDiagnostic,
}

/// Compute the landscape of an order-1 view of `model` over `space`:
/// joint stationary distribution and potential, per-dimension marginal
/// landscapes with fixed points, 2D basins when the space is a plane, and
/// the curl diagnostic.
pub fn compute_landscape(
    model: &TransitionModel,
    space: &StateSpace,
    neighborhood: Neighborhood,
) -> Result<LandscapeReport> {
    if model.base_n() != space.n_states() {
        return Err(Error::Param(format!(
            "model has {} states but space has {}",
            model.base_n(),
            space.n_states()
        )));
    }
    let pi = stationary_distribution(model)?;
    let phi = potential(&pi);

    let mut dimensions = Vec::with_capacity(space.dims().len());
    for (d, dim) in space.dims().iter().enumerate() {
        let mut marg = vec![0.0f64; dim.bins()];
        for (flat, &mass) in pi.iter().enumerate() {
            marg[space.multi_index(flat)[d]] += mass;
        }
        let mpi = DVector::from_vec(marg);
        let mphi = potential(&mpi);
        let fixed_points = find_fixed_points_1d(&mphi)?;
        dimensions.push(DimensionLandscape {
            name: dim.name.clone(),
            pi: mpi.iter().copied().collect(),
            phi: mphi,
            fixed_points,
        });
    }

    let basins = if space.dims().len() == 2 {
        let shape = (space.dims()[0].bins(), space.dims()[1].bins());
        Some(basins_2d(&phi, shape, neighborhood)?)
    } else {
        None
    };

    // Curl is defined on the one-step kernel over base states; for
    // higher-order models it applies to the augmented chain instead.
    let curl = if model.order() == 1 {
        curl_diagnostic(model.p(), &pi)?
    } else {
        let a = model.augmented()?;
        let pi_aug = stationary_of_matrix(&a)?;
        curl_diagnostic(&a, &pi_aug)?
    };

    Ok(LandscapeReport {
        pi: pi.iter().copied().collect(),
        phi,
        dimensions,
        basins,
        curl,
    })
}
