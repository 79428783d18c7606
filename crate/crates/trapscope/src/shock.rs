//! Shock impact and recovery analysis.
//!
//! Given a kernel estimated on calm years (`pre`) and one estimated on a
//! disruption window (`shock`), these functions quantify how far the
//! shock displaces the population and how long the calm dynamics take to
//! pull it back: displacement is a few applications of the shock kernel
//! to the pre-shock stationary distribution, recovery is forward
//! iteration under the pre kernel until the divergence from stationarity
//! falls below a threshold. Set-escape ratios and a signed net-mobility
//! statistic summarize direction and intensity of the disruption.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::TransitionModel;
use crate::landscape::stationary_of_matrix;
use crate::metrics::{mfpt_set, SetWeighting};

/// Default divergence threshold declaring the distribution recovered.
pub const RECOVERY_EPSILON: f64 = 1e-3;

/// Default number of shock-kernel applications producing the displaced
/// distribution.
pub const SHOCK_APPLICATIONS: u32 = 3;

/// Default cap on recovery iterations before declaring non-recovery.
pub const RECOVERY_CAP: u64 = 500;

/// Tunables for [`recovery_time`]; all three are echoed into the result
/// so emitted numbers are self-describing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockOptions {
    pub epsilon: f64,
    pub applications: u32,
    pub cap: u64,
}

impl Default for ShockOptions {
    fn default() -> Self {
        Self {
            epsilon: RECOVERY_EPSILON,
            applications: SHOCK_APPLICATIONS,
            cap: RECOVERY_CAP,
        }
    }
}

/// Outcome of a recovery simulation. `steps` is the first iteration `t`
/// (zero included) at which the divergence from the pre-shock stationary
/// distribution drops below `epsilon`; `None` means the cap was reached
/// first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub steps: Option<u64>,
    pub epsilon: f64,
    pub applications: u32,
    pub cap: u64,
    /// Displaced distribution over base states (marginal of the history
    /// chain for higher-order models). Always a probability vector.
    pub perturbed: Vec<f64>,
    /// Divergence from stationarity at t = 0, 1, ... up to the stopping
    /// step. Entries are finite whenever the pre kernel has full support
    /// (regularize first); a support violation shows up as infinity and
    /// simply keeps the iteration going.
    pub kl_trajectory: Vec<f64>,
}

fn check_compatible(pre: &TransitionModel, shock: &TransitionModel) -> Result<()> {
    if pre.base_n() != shock.base_n() || pre.order() != shock.order() {
        return Err(Error::Param(format!(
            "models disagree on state space: {} states order {} vs {} states order {}",
            pre.base_n(),
            pre.order(),
            shock.base_n(),
            shock.order()
        )));
    }
    Ok(())
}

/// `sum p ln(p/q)` with zero `p` mass contributing zero and support
/// violations returning infinity instead of an error, so a recovery
/// iteration can pass through a not-yet-supported point.
fn kl_extended(p: &DVector<f64>, q: &DVector<f64>) -> f64 {
    let mut d = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            if q[i] <= 0.0 {
                return f64::INFINITY;
            }
            d += p[i] * (p[i] / q[i]).ln();
        }
    }
    d.max(0.0)
}

fn marginal_base(v: &DVector<f64>, base_n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; base_n];
    for r in 0..v.len() {
        out[r % base_n] += v[r];
    }
    out
}

/// Displace the pre-shock stationary distribution with `applications`
/// steps of the shock kernel, then iterate under the pre kernel until
/// the divergence from stationarity falls below `epsilon` (or `cap`
/// iterations pass). Divergence direction is fixed: stationary target
/// first, current distribution second.
pub fn recovery_time(
    pre: &TransitionModel,
    shock: &TransitionModel,
    options: &ShockOptions,
) -> Result<Recovery> {
    check_compatible(pre, shock)?;
    if !options.epsilon.is_finite() || options.epsilon <= 0.0 {
        return Err(Error::Param(format!(
            "recovery threshold must be positive, got {}",
            options.epsilon
        )));
    }
    let p_pre = pre.augmented()?;
    let p_shock = shock.augmented()?;
    let pi = stationary_of_matrix(&p_pre)?;

    let mut displaced = pi.clone();
    for _ in 0..options.applications {
        displaced = p_shock.tr_mul(&displaced);
    }
    let perturbed = marginal_base(&displaced, pre.base_n());

    let mut current = displaced;
    let mut kl_trajectory = Vec::new();
    let mut steps = None;
    for t in 0..=options.cap {
        let d = kl_extended(&pi, &current);
        kl_trajectory.push(d);
        if d < options.epsilon {
            steps = Some(t);
            break;
        }
        if t < options.cap {
            current = p_pre.tr_mul(&current);
        }
    }
    Ok(Recovery {
        steps,
        epsilon: options.epsilon,
        applications: options.applications,
        cap: options.cap,
        perturbed,
        kl_trajectory,
    })
}

/// Ratio of set-escape times under the shock and pre kernels: expected
/// steps from `from` into `targets` (both sets of base states, expanded
/// over histories for higher-order models), shock over pre. Values above
/// one mean the shock slowed escape. Starts are weighted by each
/// kernel's own stationary occupancy of the start set.
pub fn mfpt_ratio(
    pre: &TransitionModel,
    shock: &TransitionModel,
    from: &[usize],
    targets: &[usize],
) -> Result<f64> {
    check_compatible(pre, shock)?;
    let from_pre = pre.expanded_states(from)?;
    let targets_pre = pre.expanded_states(targets)?;
    let denom = mfpt_set(
        &pre.augmented()?,
        &from_pre,
        &targets_pre,
        SetWeighting::Stationary,
    )?;
    let numer = mfpt_set(
        &shock.augmented()?,
        &from_pre,
        &targets_pre,
        SetWeighting::Stationary,
    )?;
    Ok(numer / denom)
}

/// Signed, normalized change in net welfare flow between two kernels.
///
/// For each model the stationary flow is scored by the sign of the
/// welfare-rank change, `F(m) = sum_ij pi_i(m) p_ij(m) sign(rank_j -
/// rank_i)`, and the difference `F(shock) - F(pre)` is divided by the
/// total moving mass of both models. Negative values mean the shock
/// tilted flows downward. The symmetric normalizer keeps the statistic
/// antisymmetric under swapping the two models and bounded by 1 in
/// magnitude; two models with no rank-changing flow at all compare as 0.
///
/// `rank` has one entry per base state; ties are deliberate (moves
/// between equally ranked states carry no sign and no mass).
pub fn net_mobility_change(
    pre: &TransitionModel,
    shock: &TransitionModel,
    rank: &[f64],
) -> Result<f64> {
    check_compatible(pre, shock)?;
    if rank.len() != pre.base_n() {
        return Err(Error::Param(format!(
            "rank vector length {} does not match {} states",
            rank.len(),
            pre.base_n()
        )));
    }
    if rank.iter().any(|r| !r.is_finite()) {
        return Err(Error::Param("rank vector must be finite".into()));
    }

    let flow = |model: &TransitionModel| -> Result<(f64, f64)> {
        let p = model.augmented()?;
        let pi = stationary_of_matrix(&p)?;
        let n = model.base_n();
        let mut signed = 0.0;
        let mut moving = 0.0;
        for r in 0..p.nrows() {
            for c in 0..p.ncols() {
                let mass = pi[r] * p[(r, c)];
                if mass == 0.0 {
                    continue;
                }
                let d = rank[c % n] - rank[r % n];
                if d > 0.0 {
                    signed += mass;
                    moving += mass;
                } else if d < 0.0 {
                    signed -= mass;
                    moving += mass;
                }
            }
        }
        Ok((signed, moving))
    };

    let (f_pre, mov_pre) = flow(pre)?;
    let (f_shock, mov_shock) = flow(shock)?;
    let denom = mov_pre + mov_shock;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((f_shock - f_pre) / denom)
}

/// Full shock summary: recovery simulation plus, when the caller supplies
/// them, the set-escape ratio for a trap/escape pair and the net mobility
/// change under a welfare ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockReport {
    pub recovery: Recovery,
    pub mfpt_ratio: Option<f64>,
    pub net_mobility_change: Option<f64>,
}

/// Compose a [`ShockReport`]. `trap` is a (start set, escape set) pair of
/// base states; `rank` is a per-base-state welfare ranking.
pub fn shock_report(
    pre: &TransitionModel,
    shock: &TransitionModel,
    options: &ShockOptions,
    trap: Option<(&[usize], &[usize])>,
    rank: Option<&[f64]>,
) -> Result<ShockReport> {
    let recovery = recovery_time(pre, shock, options)?;
    let ratio = match trap {
        Some((from, targets)) => Some(mfpt_ratio(pre, shock, from, targets)?),
        None => None,
    };
    let net = match rank {
        Some(r) => Some(net_mobility_change(pre, shock, r)?),
        None => None,
    };
    Ok(ShockReport {
        recovery,
        mfpt_ratio: ratio,
        net_mobility_change: net,
    })
}
