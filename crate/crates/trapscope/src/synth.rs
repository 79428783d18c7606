//! Synthetic panel generation from known ground-truth kernels.
//!
//! Every estimator and diagnostic in this crate is validated against
//! panels whose generating kernel is known exactly. This module builds
//! those kernels (birth-death chains, double wells, factorized and
//! interaction products, second-order momentum chains, random stochastic
//! matrices), walks households through them, and decodes the state paths
//! back into dimension values so the full ingestion and binning pipeline
//! is exercised end to end.
//!
//! All randomness is drawn from counter-based streams keyed by (seed,
//! household, wave, purpose), so generation is order-independent and a
//! fixed seed reproduces the output byte for byte.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::TransitionModel;
use crate::landscape::stationary_of_matrix;
use crate::panel::{Household, Observation, PanelDataset, TransitionRecord};
use crate::rng;
use crate::state_space::{BinningMode, DimensionSpec, StateSpace};

/// Default in-bin jitter amplitude as a fraction of the bin width.
pub const DEFAULT_JITTER: f64 = 0.8;

// Stream purposes; estimation reserves 1 and 2.
const STREAM_INIT: u64 = 10;
const STREAM_STEP: u64 = 11;
const STREAM_JITTER: u64 = 12;
const STREAM_MISSING: u64 = 13;
const STREAM_WEIGHT: u64 = 14;
const STREAM_KERNEL: u64 = 15;

/// A single-dimension birth-death chain: per step, move up one bin with
/// probability `up`, down with `down`, else stay. Tridiagonal chains are
/// reversible whatever the rates, so products of these are curl-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimChain {
    pub name: String,
    pub bins: usize,
    pub up: f64,
    pub down: f64,
}

/// Ground-truth kernel families the generator can build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelSpec {
    /// Explicit row-stochastic matrix over a single dimension.
    Explicit { p: Vec<Vec<f64>> },
    /// Rows drawn independently from a flat Dirichlet; strictly positive,
    /// hence irreducible.
    RandomStochastic { states: usize },
    /// Double-well chain; see [`make_double_well`].
    DoubleWell { bins: usize, depth: f64 },
    /// Independent product of per-dimension birth-death chains.
    Factorized { chains: Vec<DimChain> },
    /// Income moves depend on the health bin; see [`interaction_kernel`].
    Interaction {
        income_bins: usize,
        health_bins: usize,
        strength: f64,
    },
    /// Second-order chain whose moves prefer to continue the previous
    /// direction; see [`momentum_kernel`].
    Momentum { bins: usize, momentum: f64 },
}

/// Equal-width state space over `[0, 1]` per dimension; the canonical
/// decoding target for synthetic states.
fn equidistant_space(dims: &[(String, usize)]) -> Result<StateSpace> {
    let mut specs = Vec::with_capacity(dims.len());
    for (name, bins) in dims {
        if *bins < 2 {
            return Err(Error::Param(format!(
                "dimension '{name}' needs at least 2 bins, got {bins}"
            )));
        }
        specs.push(DimensionSpec {
            name: name.clone(),
            mode: BinningMode::Equidistant,
            edges: (0..=*bins).map(|b| b as f64 / *bins as f64).collect(),
        });
    }
    StateSpace::new(specs)
}

/// Birth-death transition matrix of a [`DimChain`].
pub fn birth_death(bins: usize, up: f64, down: f64) -> Result<DMatrix<f64>> {
    if bins < 2 {
        return Err(Error::Param(format!("birth-death chain needs >= 2 bins, got {bins}")));
    }
    if !(0.0..=1.0).contains(&up) || !(0.0..=1.0).contains(&down) || up + down > 1.0 {
        return Err(Error::Param(format!(
            "move probabilities up={up}, down={down} must be nonnegative with sum <= 1"
        )));
    }
    let mut p = DMatrix::zeros(bins, bins);
    for i in 0..bins {
        let u = if i + 1 < bins { up } else { 0.0 };
        let d = if i > 0 { down } else { 0.0 };
        p[(i, i)] = 1.0 - u - d;
        if u > 0.0 {
            p[(i, i + 1)] = u;
        }
        if d > 0.0 {
            p[(i, i - 1)] = d;
        }
    }
    Ok(p)
}

/// Metropolis birth-death chain over `bins >= 5` equal bins of `[0, 1]`
/// whose stationary distribution is bimodal with modes at bins 1 and
/// `bins - 2`; `depth` is exactly the potential barrier between a mode
/// and the midpoint. Zero depth degenerates to a uniform stationary
/// distribution. Metropolis acceptance makes the chain reversible, so
/// its potential landscape is the full description of its dynamics.
pub fn make_double_well(bins: usize, depth: f64) -> Result<DMatrix<f64>> {
    if bins < 5 {
        return Err(Error::Param(format!(
            "a double well needs at least 5 bins, got {bins}"
        )));
    }
    if !depth.is_finite() || depth < 0.0 {
        return Err(Error::Param(format!(
            "well depth must be nonnegative and finite, got {depth}"
        )));
    }
    let x = |i: usize| i as f64 / (bins - 1) as f64;
    let x1 = x(1);
    let x2 = x(bins - 2);
    let well = |v: f64| ((v - x1) * (v - x2)).powi(2);
    let mid = well(0.5);
    let u: Vec<f64> = (0..bins).map(|i| depth * well(x(i)) / mid).collect();

    let mut p = DMatrix::zeros(bins, bins);
    for i in 0..bins {
        let mut stay = 1.0;
        for j in [i.wrapping_sub(1), i + 1] {
            if j < bins && j != i {
                // Propose the neighbor with probability 1/2, accept with
                // the Metropolis ratio.
                let a = 0.5 * (u[i] - u[j]).exp().min(1.0);
                p[(i, j)] = a;
                stay -= a;
            }
        }
        p[(i, i)] = stay;
    }
    Ok(p)
}

/// Row-stochastic matrix with rows drawn from a flat Dirichlet. Entries
/// are strictly positive, so the chain is irreducible and aperiodic.
pub fn random_stochastic(states: usize, seed: u64) -> Result<DMatrix<f64>> {
    if states < 2 {
        return Err(Error::Param(format!("need at least 2 states, got {states}")));
    }
    let mut r = rng::stream(seed, 0, 0, STREAM_KERNEL);
    let mut p = DMatrix::zeros(states, states);
    for i in 0..states {
        let mut sum = 0.0;
        for j in 0..states {
            // Exponential draws normalized across the row are Dirichlet(1).
            let e = -(1.0 - rng::unit(&mut r)).ln();
            p[(i, j)] = e;
            sum += e;
        }
        for j in 0..states {
            p[(i, j)] /= sum;
        }
    }
    Ok(p)
}

/// Kronecker product of per-dimension kernels, laid out to match
/// [`StateSpace::flat_index`] (later dimensions vary fastest).
pub fn kron(kernels: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for k in kernels {
        acc = acc.kronecker(k);
    }
    acc
}

/// Joint income-health kernel where low health amplifies downward income
/// moves. Health evolves as a sticky birth-death chain; the income row
/// interpolates between a favorable and an adverse birth-death chain
/// with weight `strength * (1 - h / (H - 1))`. Zero strength factorizes
/// exactly into (favorable income) x (health).
pub fn interaction_kernel(
    income_bins: usize,
    health_bins: usize,
    strength: f64,
) -> Result<(DMatrix<f64>, StateSpace)> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Param(format!(
            "interaction strength must lie in [0, 1], got {strength}"
        )));
    }
    let good = birth_death(income_bins, 0.3, 0.1)?;
    let bad = birth_death(income_bins, 0.05, 0.5)?;
    let health = birth_death(health_bins, 0.1, 0.1)?;
    let space = equidistant_space(&[
        ("income".to_string(), income_bins),
        ("health".to_string(), health_bins),
    ])?;
    let n = space.n_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        let m = space.multi_index(s);
        let (i, h) = (m[0], m[1]);
        let f = h as f64 / (health_bins - 1) as f64;
        let lambda = strength * (1.0 - f);
        for j in 0..income_bins {
            let a = (1.0 - lambda) * good[(i, j)] + lambda * bad[(i, j)];
            if a == 0.0 {
                continue;
            }
            for g in 0..health_bins {
                let b = health[(h, g)];
                if b > 0.0 {
                    p[(s, space.flat_index(&[j, g]))] = a * b;
                }
            }
        }
    }
    Ok((p, space))
}

/// Second-order chain over `bins` states: a birth-death walk whose up
/// and down rates are tilted by `momentum` toward continuing the
/// previous move's direction. Zero momentum reduces to a first-order
/// walk written as an order-2 conditional matrix.
pub fn momentum_kernel(bins: usize, momentum: f64) -> Result<TransitionModel> {
    if bins < 2 {
        return Err(Error::Param(format!("need at least 2 bins, got {bins}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Param(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    let (up0, down0) = (0.25, 0.25);
    let rows = bins * bins;
    let mut p = DMatrix::zeros(rows, bins);
    for prev in 0..bins {
        for cur in 0..bins {
            let r = prev * bins + cur;
            let (mut up, mut down) = (up0, down0);
            if cur > prev {
                up = up0 * (1.0 + momentum);
                down = down0 * (1.0 - momentum);
            } else if cur < prev {
                up = up0 * (1.0 - momentum);
                down = down0 * (1.0 + momentum);
            }
            if cur + 1 >= bins {
                up = 0.0;
            }
            if cur == 0 {
                down = 0.0;
            }
            p[(r, cur)] = 1.0 - up - down;
            if up > 0.0 {
                p[(r, cur + 1)] = up;
            }
            if down > 0.0 {
                p[(r, cur - 1)] = down;
            }
        }
    }
    TransitionModel::from_conditional(bins, 2, p)
}

impl KernelSpec {
    /// Dimension names of the panel this kernel generates, in state-space
    /// order. Single-dimension families call their axis `income`.
    pub fn dim_names(&self) -> Vec<String> {
        match self {
            KernelSpec::Factorized { chains } => {
                chains.iter().map(|c| c.name.clone()).collect()
            }
            KernelSpec::Interaction { .. } => vec!["income".into(), "health".into()],
            _ => vec!["income".into()],
        }
    }

    /// Build the ground-truth model and the state space its states
    /// decode into. `seed` only matters for the random family.
    pub fn build(&self, seed: u64) -> Result<(TransitionModel, StateSpace)> {
        match self {
            KernelSpec::Explicit { p } => {
                let model = TransitionModel::from_rows(p)?;
                let space =
                    equidistant_space(&[("income".to_string(), model.base_n())])?;
                Ok((model, space))
            }
            KernelSpec::RandomStochastic { states } => {
                let model = TransitionModel::from_matrix(random_stochastic(*states, seed)?)?;
                let space = equidistant_space(&[("income".to_string(), *states)])?;
                Ok((model, space))
            }
            KernelSpec::DoubleWell { bins, depth } => {
                let model = TransitionModel::from_matrix(make_double_well(*bins, *depth)?)?;
                let space = equidistant_space(&[("income".to_string(), *bins)])?;
                Ok((model, space))
            }
            KernelSpec::Factorized { chains } => {
                if chains.is_empty() {
                    return Err(Error::Param("factorized kernel needs at least one chain".into()));
                }
                let mut kernels = Vec::with_capacity(chains.len());
                let mut dims = Vec::with_capacity(chains.len());
                for c in chains {
                    kernels.push(birth_death(c.bins, c.up, c.down)?);
                    dims.push((c.name.clone(), c.bins));
                }
                let model = TransitionModel::from_matrix(kron(&kernels))?;
                Ok((model, equidistant_space(&dims)?))
            }
            KernelSpec::Interaction {
                income_bins,
                health_bins,
                strength,
            } => {
                let (p, space) = interaction_kernel(*income_bins, *health_bins, *strength)?;
                Ok((TransitionModel::from_matrix(p)?, space))
            }
            KernelSpec::Momentum { bins, momentum } => {
                let model = momentum_kernel(*bins, *momentum)?;
                let space = equidistant_space(&[("income".to_string(), *bins)])?;
                Ok((model, space))
            }
        }
    }
}

/// A mid-panel change of dynamics: transitions originating at or after
/// `wave` follow `kernel` instead of the main one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockPhase {
    pub wave: i32,
    pub kernel: KernelSpec,
}

/// Full description of a synthetic panel; serializable so fixtures are
/// regenerable from their manifest alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kernel: KernelSpec,
    pub households: usize,
    pub waves: usize,
    pub seed: u64,
    /// Per-cell probability of blanking a value.
    #[serde(default)]
    pub missingness: f64,
    /// In-bin jitter amplitude as a fraction of bin width, in [0, 1).
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Wave label of the first observation.
    #[serde(default)]
    pub start_wave: i32,
    /// Optional regime switch partway through the panel.
    #[serde(default)]
    pub shock: Option<ShockPhase>,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

/// Everything the generator knows about the panel it produced.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub panel: PanelDataset,
    /// The exact binning the values decode back into.
    pub space: StateSpace,
    /// Ground-truth kernel (the pre-shock one when a shock is present).
    pub truth: TransitionModel,
    pub shock_truth: Option<TransitionModel>,
    /// Every generated transition, before missingness is applied.
    pub log: Vec<TransitionRecord>,
}

/// Generate a synthetic panel. Households start i.i.d. from the
/// ground-truth stationary distribution and evolve under the kernel
/// (switching kernels at the shock wave when one is configured). States
/// decode to bin midpoints plus in-bin jitter; missingness blanks cells
/// uniformly at random. The same spec reproduces the same panel byte for
/// byte.
pub fn generate_panel(spec: &SynthSpec) -> Result<SynthOutput> {
    if spec.households == 0 {
        return Err(Error::Param("need at least one household".into()));
    }
    if spec.waves < 2 {
        return Err(Error::Param(format!(
            "need at least two waves for transitions, got {}",
            spec.waves
        )));
    }
    if !(0.0..1.0).contains(&spec.missingness) {
        return Err(Error::Param(format!(
            "missingness rate must lie in [0, 1), got {}",
            spec.missingness
        )));
    }
    if !(0.0..1.0).contains(&spec.jitter) {
        return Err(Error::Param(format!(
            "jitter must lie in [0, 1), got {}",
            spec.jitter
        )));
    }
    let (truth, space) = spec.kernel.build(spec.seed)?;
    let shock_truth = match &spec.shock {
        Some(phase) => {
            let (m, s) = phase.kernel.build(spec.seed.wrapping_add(1))?;
            if m.base_n() != truth.base_n() || m.order() != truth.order() {
                return Err(Error::Param(
                    "shock kernel must share the main kernel's state space and order".into(),
                ));
            }
            if s.dims().len() != space.dims().len() {
                return Err(Error::Param(
                    "shock kernel must share the main kernel's dimensions".into(),
                ));
            }
            Some(m)
        }
        None => None,
    };
    let switch_wave = spec.shock.as_ref().map(|s| s.wave);
    let order = truth.order();
    if spec.waves <= order {
        return Err(Error::Param(format!(
            "an order-{order} kernel needs more than {order} waves"
        )));
    }

    // Initial histories follow the stationary distribution of the
    // (augmented) ground-truth chain; an order-k model emits its first k
    // states from one stationary draw.
    let pre_augmented = truth.augmented()?;
    let init_dist = stationary_of_matrix(&pre_augmented)?;
    let init_weights: Vec<f64> = init_dist.iter().copied().collect();
    let base_n = truth.base_n();

    let kernel_at = |wave: i32| -> &TransitionModel {
        match (switch_wave, &shock_truth) {
            (Some(sw), Some(m)) if wave >= sw => m,
            _ => &truth,
        }
    };

    let n_dims = space.dims().len();
    let mut households = Vec::with_capacity(spec.households);
    let mut log = Vec::new();
    for h in 0..spec.households {
        let hid = h as u64;
        let weight = 0.5 + rng::unit(&mut rng::stream(spec.seed, hid, 0, STREAM_WEIGHT));

        let mut init = rng::stream(spec.seed, hid, 0, STREAM_INIT);
        let tuple = rng::categorical(&mut init, &init_weights);
        let mut states = Vec::with_capacity(spec.waves);
        let mut digits = Vec::with_capacity(order);
        let mut rest = tuple;
        for _ in 0..order {
            digits.push(rest % base_n);
            rest /= base_n;
        }
        digits.reverse();
        states.extend(digits);

        while states.len() < spec.waves {
            let t = states.len();
            let from_wave = spec.start_wave + t as i32 - 1;
            let model = kernel_at(from_wave);
            let row_idx = model.tuple_index(&states[t - order..])?;
            let row: Vec<f64> = (0..base_n).map(|j| model.p()[(row_idx, j)]).collect();
            let mut step = rng::stream(spec.seed, hid, from_wave as u64 + 1, STREAM_STEP);
            let next = rng::categorical(&mut step, &row);
            log.push(TransitionRecord {
                household: h,
                from_wave,
                from_state: states[t - 1],
                to_state: next,
                weight,
            });
            states.push(next);
        }

        let mut obs = Vec::with_capacity(spec.waves);
        for (t, &s) in states.iter().enumerate() {
            let wave = spec.start_wave + t as i32;
            let multi = space.multi_index(s);
            let mut jitter = rng::stream(spec.seed, hid, wave as u64 + 1, STREAM_JITTER);
            let mut missing = rng::stream(spec.seed, hid, wave as u64 + 1, STREAM_MISSING);
            let mut values = Vec::with_capacity(n_dims);
            for (d, &bin) in multi.iter().enumerate() {
                let dim = &space.dims()[d];
                let u = rng::unit(&mut jitter);
                let value = dim.edges[bin]
                    + dim.width(bin) * (0.5 + spec.jitter * (u - 0.5));
                let blank =
                    spec.missingness > 0.0 && rng::unit(&mut missing) < spec.missingness;
                values.push(if blank { None } else { Some(value) });
            }
            obs.push(Observation { wave, values, weight });
        }
        households.push(Household {
            id: format!("S{h:06}"),
            obs,
        });
    }

    let dims: Vec<String> = space.dims().iter().map(|d| d.name.clone()).collect();
    let panel = PanelDataset::from_households(dims, households);
    Ok(SynthOutput {
        panel,
        space,
        truth,
        shock_truth,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{estimate_mle, frobenius_distance};
    use crate::landscape::{find_fixed_points_1d, potential};
    use crate::metrics::mfpt;
    use crate::panel::{extract_transitions, write_panel_csv, Schema};
    use approx::assert_abs_diff_eq;

    fn base_spec(kernel: KernelSpec) -> SynthSpec {
        SynthSpec {
            kernel,
            households: 50,
            waves: 6,
            seed: 99,
            missingness: 0.0,
            jitter: DEFAULT_JITTER,
            start_wave: 2010,
            shock: None,
        }
    }

    fn panel_csv(out: &SynthOutput) -> String {
        let schema = Schema {
            household: "household".into(),
            wave: "wave".into(),
            weight: Some("weight".into()),
            dims: out.panel.dims.clone(),
        };
        let mut buf = Vec::new();
        write_panel_csv(&out.panel, &schema, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = base_spec(KernelSpec::DoubleWell { bins: 5, depth: 1.0 });
        let a = generate_panel(&spec).unwrap();
        let b = generate_panel(&spec).unwrap();
        assert_eq!(panel_csv(&a), panel_csv(&b));
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn different_seed_changes_the_panel() {
        let spec = base_spec(KernelSpec::DoubleWell { bins: 5, depth: 1.0 });
        let other = SynthSpec { seed: 100, ..spec.clone() };
        let a = generate_panel(&spec).unwrap();
        let b = generate_panel(&other).unwrap();
        assert_ne!(panel_csv(&a), panel_csv(&b));
    }

    #[test]
    fn identity_kernel_freezes_households() {
        let spec = base_spec(KernelSpec::Explicit {
            p: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
        });
        let out = generate_panel(&spec).unwrap();
        assert!(out.log.iter().all(|r| r.from_state == r.to_state));
        for hh in &out.panel.households {
            let bins: Vec<usize> = hh
                .obs
                .iter()
                .map(|o| out.space.assign_state(&[o.values[0].unwrap()]).unwrap())
                .collect();
            assert!(bins.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn initial_states_match_stationary_distribution() {
        let spec = SynthSpec {
            households: 20_000,
            waves: 2,
            ..base_spec(KernelSpec::DoubleWell { bins: 5, depth: 2.0 })
        };
        let out = generate_panel(&spec).unwrap();
        let pi = stationary_of_matrix(out.truth.p()).unwrap();
        let mut freq = [0.0; 5];
        for hh in &out.panel.households {
            let s = out
                .space
                .assign_state(&[hh.obs[0].values[0].unwrap()])
                .unwrap();
            freq[s] += 1.0 / spec.households as f64;
        }
        for i in 0..5 {
            let se = (pi[i] * (1.0 - pi[i]) / spec.households as f64).sqrt();
            assert!(
                (freq[i] - pi[i]).abs() < 4.0 * se + 1e-9,
                "bin {i}: frequency {} vs stationary {}",
                freq[i],
                pi[i]
            );
        }
    }

    #[test]
    fn double_well_is_reversible_and_bimodal_with_exact_barrier() {
        let depth = 1.5;
        let p = make_double_well(5, depth).unwrap();
        let pi = stationary_of_matrix(&p).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(
                    pi[i] * p[(i, j)],
                    pi[j] * p[(j, i)],
                    epsilon = 1e-12
                );
            }
        }
        // Modes at bins 1 and 3.
        assert!(pi[1] > pi[0] && pi[1] > pi[2]);
        assert!(pi[3] > pi[4] && pi[3] > pi[2]);
        // The barrier between mode and midpoint is exactly the depth:
        // bins 1 and 2 sit at the well bottom and the hump of the
        // quartic, where the normalization cancels.
        let phi = potential(&pi);
        assert_abs_diff_eq!(phi[2] - phi[1], depth, epsilon = 1e-12);
    }

    #[test]
    fn zero_depth_flattens_the_landscape() {
        let p = make_double_well(7, 0.0).unwrap();
        let pi = stationary_of_matrix(&p).unwrap();
        for i in 0..7 {
            assert_abs_diff_eq!(pi[i], 1.0 / 7.0, epsilon = 1e-12);
        }
        let fp = find_fixed_points_1d(&potential(&pi)).unwrap();
        assert!(fp.stable.len() <= 1);
        assert!(fp.unstable.is_empty());
    }

    #[test]
    fn deep_wells_yield_two_stable_one_unstable() {
        let p = make_double_well(5, 3.0).unwrap();
        let pi = stationary_of_matrix(&p).unwrap();
        let fp = find_fixed_points_1d(&potential(&pi)).unwrap();
        assert_eq!(fp.stable, vec![1, 3]);
        assert_eq!(fp.unstable, vec![2]);
    }

    #[test]
    fn barrier_crossing_slows_with_depth() {
        let mut last = 0.0;
        for depth in [0.5, 1.0, 1.5, 2.0, 2.5] {
            let p = make_double_well(5, depth).unwrap();
            let m = mfpt(&p).unwrap().m[(1, 3)];
            assert!(
                m > last,
                "depth {depth}: crossing time {m} not above {last}"
            );
            last = m;
        }
    }

    #[test]
    fn random_kernel_is_reproducible_and_stochastic() {
        let a = random_stochastic(6, 7).unwrap();
        let b = random_stochastic(6, 7).unwrap();
        assert_eq!(a, b);
        let c = random_stochastic(6, 8).unwrap();
        assert_ne!(a, c);
        for i in 0..6 {
            let sum: f64 = (0..6).map(|j| a[(i, j)]).sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!((0..6).all(|j| a[(i, j)] > 0.0));
        }
    }

    #[test]
    fn momentum_kernel_prefers_continuing_direction() {
        let m = momentum_kernel(4, 0.5).unwrap();
        let p = m.p();
        let upward = m.tuple_index(&[0, 1]).unwrap();
        let neutral = m.tuple_index(&[1, 1]).unwrap();
        let downward = m.tuple_index(&[2, 1]).unwrap();
        assert!(p[(upward, 2)] > p[(neutral, 2)]);
        assert!(p[(downward, 0)] > p[(neutral, 0)]);
        assert_abs_diff_eq!(p[(neutral, 2)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn zero_strength_interaction_factorizes_exactly() {
        let (p, _) = interaction_kernel(3, 5, 0.0).unwrap();
        let expected = kron(&[
            birth_death(3, 0.3, 0.1).unwrap(),
            birth_death(5, 0.1, 0.1).unwrap(),
        ]);
        assert_eq!(p, expected);
    }

    #[test]
    fn missingness_blanks_roughly_the_requested_share() {
        let spec = SynthSpec {
            households: 2_000,
            waves: 5,
            missingness: 0.3,
            ..base_spec(KernelSpec::Factorized {
                chains: vec![
                    DimChain { name: "income".into(), bins: 3, up: 0.2, down: 0.2 },
                    DimChain { name: "health".into(), bins: 3, up: 0.1, down: 0.1 },
                ],
            })
        };
        let out = generate_panel(&spec).unwrap();
        let (mut blank, mut total) = (0usize, 0usize);
        for hh in &out.panel.households {
            for o in &hh.obs {
                for v in &o.values {
                    total += 1;
                    if v.is_none() {
                        blank += 1;
                    }
                }
            }
        }
        let rate = blank as f64 / total as f64;
        assert!((rate - 0.3).abs() < 0.02, "missingness rate {rate}");
    }

    #[test]
    fn estimation_roundtrip_recovers_the_kernel() {
        let spec = SynthSpec {
            households: 1_000,
            waves: 11,
            ..base_spec(KernelSpec::DoubleWell { bins: 5, depth: 1.0 })
        };
        let out = generate_panel(&spec).unwrap();
        let records = extract_transitions(&out.panel, &out.space, None).unwrap();
        assert_eq!(records.len(), 10_000);
        let est = estimate_mle(&records, &out.space, 1).unwrap();
        let d = frobenius_distance(&est, &out.truth).unwrap();
        assert!(d < 0.05, "round-trip error {d}");
    }

    #[test]
    fn panel_csv_survives_a_read_back() {
        let spec = SynthSpec {
            households: 200,
            waves: 6,
            missingness: 0.1,
            ..base_spec(KernelSpec::Factorized {
                chains: vec![
                    DimChain { name: "income".into(), bins: 5, up: 0.2, down: 0.25 },
                    DimChain { name: "health".into(), bins: 3, up: 0.15, down: 0.15 },
                ],
            })
        };
        let out = generate_panel(&spec).unwrap();
        let csv = panel_csv(&out);
        let schema = Schema {
            household: "household".into(),
            wave: "wave".into(),
            weight: Some("weight".into()),
            dims: out.panel.dims.clone(),
        };
        let back = crate::panel::from_reader(csv.as_bytes(), &schema).unwrap();
        let direct = extract_transitions(&out.panel, &out.space, None).unwrap();
        let reread = extract_transitions(&back, &out.space, None).unwrap();
        assert_eq!(direct.len(), reread.len());
        for (a, b) in direct.iter().zip(&reread) {
            assert_eq!(a.from_state, b.from_state);
            assert_eq!(a.to_state, b.to_state);
            assert_abs_diff_eq!(a.weight, b.weight, epsilon = 0.0);
        }
    }

    #[test]
    fn generated_states_match_the_log() {
        // The jittered, decoded values re-bin to exactly the simulated
        // states for every visible transition.
        let spec = SynthSpec {
            households: 100,
            waves: 8,
            ..base_spec(KernelSpec::DoubleWell { bins: 6, depth: 1.0 })
        };
        let out = generate_panel(&spec).unwrap();
        let records = extract_transitions(&out.panel, &out.space, None).unwrap();
        assert_eq!(records.len(), out.log.len());
        for (r, l) in records.iter().zip(&out.log) {
            assert_eq!(r.household, l.household);
            assert_eq!(r.from_wave, l.from_wave);
            assert_eq!(r.from_state, l.from_state);
            assert_eq!(r.to_state, l.to_state);
        }
    }

    #[test]
    fn regime_switch_changes_transition_statistics() {
        let spec = SynthSpec {
            households: 2_000,
            waves: 11,
            start_wave: 0,
            shock: Some(ShockPhase {
                wave: 5,
                kernel: KernelSpec::Explicit {
                    p: vec![vec![0.95, 0.05], vec![0.9, 0.1]],
                },
            }),
            ..base_spec(KernelSpec::Explicit {
                p: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            })
        };
        let out = generate_panel(&spec).unwrap();
        let rate = |pred: &dyn Fn(&TransitionRecord) -> bool| {
            let subset: Vec<_> = out.log.iter().filter(|r| pred(r)).collect();
            let stay: f64 = subset
                .iter()
                .filter(|r| r.from_state == 0 && r.to_state == 0)
                .count() as f64;
            let from0: f64 =
                subset.iter().filter(|r| r.from_state == 0).count() as f64;
            stay / from0
        };
        let before = rate(&|r| r.from_wave < 5);
        let after = rate(&|r| r.from_wave >= 5);
        assert!((before - 0.5).abs() < 0.05, "pre-switch stay rate {before}");
        assert!((after - 0.95).abs() < 0.05, "post-switch stay rate {after}");
    }

    #[test]
    fn order_two_panel_reassembles_under_the_estimator() {
        let spec = SynthSpec {
            households: 3_000,
            waves: 8,
            ..base_spec(KernelSpec::Momentum { bins: 3, momentum: 0.6 })
        };
        let out = generate_panel(&spec).unwrap();
        let records = extract_transitions(&out.panel, &out.space, None).unwrap();
        let est = estimate_mle(&records, &out.space, 2).unwrap();
        // A one-step walk never produces histories that jump bins, so
        // those rows stay unvisited; compare only reachable histories.
        let mut sq = 0.0;
        for r in 0..est.n_rows() {
            if est.uniform_rows().contains(&r) {
                continue;
            }
            for j in 0..3 {
                sq += (est.p()[(r, j)] - out.truth.p()[(r, j)]).powi(2);
            }
        }
        let d = sq.sqrt();
        assert!(d < 0.08, "order-2 round-trip error {d}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let good = base_spec(KernelSpec::DoubleWell { bins: 5, depth: 1.0 });
        assert!(generate_panel(&SynthSpec { households: 0, ..good.clone() }).is_err());
        assert!(generate_panel(&SynthSpec { waves: 1, ..good.clone() }).is_err());
        assert!(generate_panel(&SynthSpec { missingness: 1.0, ..good.clone() }).is_err());
        assert!(generate_panel(&SynthSpec { jitter: 1.0, ..good.clone() }).is_err());
        assert!(make_double_well(4, 1.0).is_err());
        assert!(make_double_well(5, -1.0).is_err());
        assert!(birth_death(3, 0.7, 0.7).is_err());
        assert!(momentum_kernel(3, 1.0).is_err());
        assert!(interaction_kernel(3, 5, 1.5).is_err());
        // Shock kernel must live on the same space.
        let mismatched = SynthSpec {
            shock: Some(ShockPhase {
                wave: 3,
                kernel: KernelSpec::DoubleWell { bins: 7, depth: 1.0 },
            }),
            ..good
        };
        assert!(generate_panel(&mismatched).is_err());
    }
}
