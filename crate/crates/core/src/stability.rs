//! Local stability of steady states and the critical network-effect strength.
//!
//! State ordering in every Jacobian is `(n_1..n_N, q_1..q_N)`. Rows follow the
//! drifts in [`crate::dynamics`]:
//!
//! ```text
//! ∂ṅ_i/∂x = γ (M ∂P_i/∂x − 1{x = n_i})
//! ∂q̇_i/∂x = η [(1 − τ) R M α_i (1 − 2P_i) ∂P_i/∂x − c''(q_i) 1{x = q_i}]
//! ```
//!
//! Under [`QualityLaw::NewtonNormalized`] the quality rows are divided by
//! `c''(q_i)` and pick up `−η gap_i c'''(q_i) / c''(q_i)²` on the diagonal, which
//! vanishes at a steady state; spectra of the two laws differ by positive row
//! scalings of the quality block.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::eigen;
use crate::equilibrium::{self, EquilibriumConfig};
use crate::error::{MarketError, Result};
use crate::market::{self, MarketParams, MarketState, QualityLaw};
use crate::par;

pub const DEFAULT_TOL_EIG: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMethod {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub tol_eig: f64,
    /// Restrict the analysis to the viewer block (quality held fixed).
    pub quality_frozen: bool,
    pub method: JacobianMethod,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { tol_eig: DEFAULT_TOL_EIG, quality_frozen: false, method: JacobianMethod::Analytic }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub jacobian: Vec<Vec<f64>>,
    /// Sorted by descending real part, serialised as `[re, im]` pairs.
    #[serde(with = "complex_pairs")]
    pub eigenvalues: Vec<Complex64>,
    pub max_real_part: f64,
    pub stable: bool,
    pub method: JacobianMethod,
    pub quality_frozen: bool,
    /// False when the input did not meet the steady-state tolerances; the
    /// spectrum is still computed.
    pub at_steady_state: bool,
}

mod complex_pairs {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

/// Full `2N × 2N` Jacobian of `(ṅ, q̇)` at `state` (any state, not only steady ones).
pub fn jacobian_at(params: &MarketParams, state: &MarketState) -> Result<DMatrix<f64>> {
    let n = state.len();
    let p = market::probabilities(params, state)?;
    let jac = market::jacobians_from_shares(params, &p);
    let gamma = params.viewer_speed;
    let eta = params.quality_speed;
    let m = params.total_viewers;
    let scale = params.streamer_revenue_scale();

    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for k in 0..n {
            j[(i, k)] = gamma * (m * jac.viewers[(i, k)] - if i == k { 1.0 } else { 0.0 });
            j[(i, n + k)] = gamma * m * jac.quality[(i, k)];
        }
        let q = state.quality[i];
        let slope = scale * params.attractiveness[i] * (1.0 - 2.0 * p[i]);
        let c2 = params.cost.curvature(q);
        let (row_scale, diag_extra) = match params.quality_law {
            QualityLaw::Gradient => (eta, 0.0),
            QualityLaw::NewtonNormalized => {
                let gap = market::foc_gap(params, i, q, p[i]);
                (eta / c2, -eta * gap * params.cost.third(q) / (c2 * c2))
            }
        };
        for k in 0..n {
            j[(n + i, k)] = row_scale * slope * jac.viewers[(i, k)];
            let own = if i == k { c2 } else { 0.0 };
            j[(n + i, n + k)] = row_scale * (slope * jac.quality[(i, k)] - own);
        }
        j[(n + i, n + i)] += diag_extra;
    }
    Ok(j)
}

/// Viewer block `γ (M ∂P/∂n − I)`.
pub fn viewer_block(params: &MarketParams, state: &MarketState) -> Result<DMatrix<f64>> {
    let n = state.len();
    let full = jacobian_at(params, state)?;
    Ok(full.view((0, 0), (n, n)).into_owned())
}

/// Central-difference Jacobian of `(ṅ, q̇)` with absolute step `h`.
pub fn jacobian_fd(params: &MarketParams, state: &MarketState, h: f64) -> Result<DMatrix<f64>> {
    let n = state.len();
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for col in 0..2 * n {
        let bump = |sign: f64| -> Result<Vec<f64>> {
            let mut s = state.clone();
            if col < n {
                s.viewers[col] += sign * h;
            } else {
                s.quality[col - n] += sign * h;
            }
            let (dn, dq) = dynamics::drift(params, &s)?;
            Ok(dn.into_iter().chain(dq).collect())
        };
        let plus = bump(1.0)?;
        let minus = bump(-1.0)?;
        for row in 0..2 * n {
            j[(row, col)] = (plus[row] - minus[row]) / (2.0 * h);
        }
    }
    Ok(j)
}

pub fn eigenvalues(matrix: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    eigen::eigenvalues(matrix)
}

pub fn classify_stability(
    params: &MarketParams,
    state: &MarketState,
    cfg: &StabilityConfig,
) -> Result<StabilityReport> {
    params.validate()?;
    state.validate_for(params)?;
    let n = state.len();
    let full = match cfg.method {
        JacobianMethod::Analytic => jacobian_at(params, state)?,
        JacobianMethod::FiniteDifference => jacobian_fd(params, state, 1e-6)?,
    };
    let jac = if cfg.quality_frozen { full.view((0, 0), (n, n)).into_owned() } else { full };
    let eigenvalues = eigen::eigenvalues(&jac)?;
    let max_real_part = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);

    let (rn, rq) = equilibrium::residuals(params, state)?;
    let q_scale = state.quality.iter().copied().fold(1.0, f64::max);
    let at_steady_state = rn <= 1e-8 * params.total_viewers && (cfg.quality_frozen || rq <= 1e-8 * q_scale);

    Ok(StabilityReport {
        jacobian: jac.row_iter().map(|r| r.iter().copied().collect()).collect(),
        eigenvalues,
        max_real_part,
        stable: max_real_part < -cfg.tol_eig,
        method: cfg.method,
        quality_frozen: cfg.quality_frozen,
        at_steady_state,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalBetaReport {
    pub beta_star: f64,
    pub bracket: (f64, f64),
    pub quality_frozen: bool,
    /// `N / M`: where the symmetric difference mode `γ(Mβ/N − 1)` crosses zero.
    /// Reported only for symmetric params with quality frozen.
    pub analytic_reference: Option<f64>,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticalBetaConfig {
    pub bracket: (f64, f64),
    pub tol: f64,
    pub quality_frozen: bool,
    /// Interior points evaluated per round; more points shrink the bracket faster
    /// when evaluations run concurrently.
    pub points_per_round: usize,
}

impl Default for CriticalBetaConfig {
    fn default() -> Self {
        CriticalBetaConfig { bracket: (0.0, 1.0), tol: 1e-9, quality_frozen: true, points_per_round: 7 }
    }
}

/// Largest real part of the spectrum at the steady state re-solved from the
/// symmetric start for the given `β`.
pub fn max_real_part_at(params: &MarketParams, beta: f64, quality_frozen: bool) -> Result<f64> {
    let mut p = params.clone();
    p.network_effect = beta;
    p.validate()?;
    let start = MarketState::symmetric_start(&p);
    let mut cfg = EquilibriumConfig::default().with_tolerances(1e-10 * p.total_viewers, 1e-10);
    cfg.freeze_quality = quality_frozen;
    cfg.max_iter = 100_000;
    let eq = equilibrium::solve_steady_state(&p, &start, &cfg)?;
    if !eq.converged {
        return Err(MarketError::EquilibriumFailed { beta });
    }
    let scfg = StabilityConfig { quality_frozen, ..Default::default() };
    Ok(classify_stability(&p, &eq.state, &scfg)?.max_real_part)
}

/// Bracketing search on the sign of the leading eigenvalue at the symmetric
/// steady state. Each round evaluates `points_per_round` interior β values
/// (concurrently when enabled) and keeps the sub-interval where the sign flips.
pub fn critical_beta(params: &MarketParams, cfg: &CriticalBetaConfig) -> Result<CriticalBetaReport> {
    params.validate()?;
    let (mut lo, mut hi) = cfg.bracket;
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
        return Err(MarketError::InvalidArgument(format!("bad bracket ({lo}, {hi})")));
    }
    if !(cfg.tol > 0.0) {
        return Err(MarketError::InvalidArgument("tolerance must be positive".into()));
    }
    let at_lo = max_real_part_at(params, lo, cfg.quality_frozen)?;
    let at_hi = max_real_part_at(params, hi, cfg.quality_frozen)?;
    if !(at_lo < 0.0 && at_hi > 0.0) {
        return Err(MarketError::BracketDoesNotStraddle { at_lo, at_hi });
    }
    let k = cfg.points_per_round.max(1);
    let mut evaluations = 2;
    while hi - lo > cfg.tol {
        let grid: Vec<f64> = (1..=k).map(|j| lo + (hi - lo) * j as f64 / (k + 1) as f64).collect();
        let signs = par::map(&grid, |&b| max_real_part_at(params, b, cfg.quality_frozen));
        evaluations += grid.len();
        let mut new_lo = lo;
        let mut new_hi = hi;
        for (b, s) in grid.iter().zip(signs) {
            if s? < 0.0 {
                new_lo = *b;
            } else {
                new_hi = *b;
                break;
            }
        }
        if new_lo == lo && new_hi == hi {
            break;
        }
        lo = new_lo;
        hi = new_hi;
    }
    let analytic_reference = (cfg.quality_frozen && params.is_symmetric())
        .then(|| params.n_streamers as f64 / params.total_viewers);
    Ok(CriticalBetaReport {
        beta_star: 0.5 * (lo + hi),
        bracket: (lo, hi),
        quality_frozen: cfg.quality_frozen,
        analytic_reference,
        evaluations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayMeasurement {
    /// Fitted `−d ln‖δ‖/dt`.
    pub rate: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Perturbs `steady` by a relative amount `relative` (random signs and
/// magnitudes from `seed`), integrates, and fits the exponential decay rate of
/// the scaled deviation once the first three decades have passed.
pub fn simulated_decay_rate(
    params: &MarketParams,
    steady: &MarketState,
    relative: f64,
    seed: u64,
) -> Result<DecayMeasurement> {
    let n = steady.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = steady.clone();
    for i in 0..n {
        start.viewers[i] *= 1.0 + relative * rng.gen_range(-1.0..1.0);
        start.quality[i] *= 1.0 + relative * rng.gen_range(-1.0..1.0);
    }
    let m = params.total_viewers;
    let q_scale = steady.quality.iter().copied().fold(1.0, f64::max);
    let norm = |s: &MarketState| -> f64 {
        (0..n)
            .map(|i| {
                let dn = (s.viewers[i] - steady.viewers[i]) / m;
                let dq = (s.quality[i] - steady.quality[i]) / q_scale;
                dn * dn + dq * dq
            })
            .sum::<f64>()
            .sqrt()
    };

    let fastest = params.viewer_speed.max(params.quality_speed * params.cost.curvature(q_scale));
    let h = 0.01 / fastest;
    let mut state = start;
    let d0 = norm(&state);
    let mut t = 0.0;
    let mut pts = Vec::new();
    let t_max = 2000.0 / params.viewer_speed;
    while t < t_max {
        state = dynamics::step(params, &state, h, dynamics::Method::Rk4)?;
        state.quality.iter_mut().for_each(|q| *q = q.max(0.0));
        t += h;
        let d = norm(&state);
        if d <= 1e-3 * d0 {
            pts.push((t, d.ln()));
        }
        if d <= 1e-7 * d0 {
            break;
        }
    }
    if pts.len() < 10 {
        return Err(MarketError::NotConverged("perturbation did not decay".into()));
    }
    let k = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, my) = (st / k, sy / k);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in &pts {
        sxy += (x - mt) * (y - my);
        sxx += (x - mt) * (x - mt);
    }
    Ok(DecayMeasurement {
        rate: -sxy / sxx,
        window: (pts[0].0, pts[pts.len() - 1].0),
        samples: pts.len(),
    })
}
