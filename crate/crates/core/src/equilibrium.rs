//! Steady states `(n*, q*)`: `n_i = M P_i` together with the quality
//! first-order condition, found by damped Gauss–Seidel fixed-point iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, IntegratorConfig};
use crate::error::{MarketError, Result};
use crate::market::{self, MarketParams, MarketState};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumConfig {
    /// Absolute bound on `max |n_i − M P_i|`; defaults to `1e-8 · M`.
    pub tol_n: Option<f64>,
    /// Absolute bound on the FOC residual; defaults to `1e-8 · max(1, max q)`.
    pub tol_q: Option<f64>,
    pub damping: f64,
    pub max_iter: usize,
    /// Hold quality at its starting value and solve only the viewer equation.
    pub freeze_quality: bool,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig { tol_n: None, tol_q: None, damping: 0.5, max_iter: 20_000, freeze_quality: false }
    }
}

impl EquilibriumConfig {
    pub fn with_tolerances(mut self, tol_n: f64, tol_q: f64) -> Self {
        self.tol_n = Some(tol_n);
        self.tol_q = Some(tol_q);
        self
    }

    pub fn frozen(mut self) -> Self {
        self.freeze_quality = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MarketError::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        for t in [self.tol_n, self.tol_q].into_iter().flatten() {
            if !(t.is_finite() && t > 0.0) {
                return Err(MarketError::InvalidArgument("tolerances must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinSample {
    pub start: MarketState,
    pub attained: MarketState,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub state: MarketState,
    pub residual_n: f64,
    pub residual_q: f64,
    pub iterations: usize,
    pub converged: bool,
    pub basin_probe: Vec<BasinSample>,
}

/// `(max |n_i − M P_i|, max |c'(q_i) − (1 − τ) R M α_i P_i (1 − P_i)|)`
pub fn residuals(params: &MarketParams, state: &MarketState) -> Result<(f64, f64)> {
    let p = market::probabilities(params, state)?;
    Ok(residuals_from_shares(params, state, &p))
}

fn residuals_from_shares(params: &MarketParams, state: &MarketState, p: &[f64]) -> (f64, f64) {
    let m = params.total_viewers;
    let rn = (0..p.len()).map(|i| (state.viewers[i] - m * p[i]).abs()).fold(0.0, f64::max);
    let rq = (0..p.len())
        .map(|i| market::foc_gap(params, i, state.quality[i], p[i]).abs())
        .fold(0.0, f64::max);
    (rn, rq)
}

pub fn solve_steady_state(
    params: &MarketParams,
    start: &MarketState,
    cfg: &EquilibriumConfig,
) -> Result<EquilibriumReport> {
    params.validate()?;
    start.validate_for(params)?;
    cfg.validate()?;

    let m = params.total_viewers;
    let d = cfg.damping;
    let tol_n = cfg.tol_n.unwrap_or(1e-8 * m);
    let mut state = start.clone();
    let mut iterations = 0;
    let mut converged = false;
    let (mut rn, mut rq);

    loop {
        let p = market::probabilities(params, &state)?;
        (rn, rq) = residuals_from_shares(params, &state, &p);
        let q_scale = state.quality.iter().copied().fold(1.0, f64::max);
        let tol_q = cfg.tol_q.unwrap_or(1e-8 * q_scale);
        let conserved = (state.total_viewers() - m).abs() <= 1e-9 * m;
        if rn <= tol_n && (cfg.freeze_quality || rq <= tol_q) && conserved {
            converged = true;
            break;
        }
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;

        for (n, pi) in state.viewers.iter_mut().zip(&p) {
            *n = (1.0 - d) * *n + d * m * pi;
        }
        if !cfg.freeze_quality {
            for i in 0..state.len() {
                let br = quality_best_response(params, &state, i);
                state.quality[i] = (1.0 - d) * state.quality[i] + d * br;
            }
        }
    }

    Ok(EquilibriumReport {
        basin_probe: vec![BasinSample {
            start: start.clone(),
            attained: state.clone(),
            converged,
        }],
        state,
        residual_n: rn,
        residual_q: rq,
        iterations,
        converged,
    })
}

/// Self-consistent `q_i ≥ 0` solving `c'(q_i) = (1 − τ) R M α_i P_i(q_i)(1 − P_i(q_i))`
/// with viewers, the other qualities and the allocation taken from `state`.
///
/// The right-hand side never exceeds `(1 − τ) R M α_i / 4`, so the root is
/// bracketed by `[0, c'^{-1}((1 − τ) R M α_i / 2)]` and found by bisection.
pub fn quality_best_response(params: &MarketParams, state: &MarketState, i: usize) -> f64 {
    let scale = params.streamer_revenue_scale() * params.attractiveness[i];
    if scale <= 0.0 || state.len() < 2 {
        return 0.0;
    }
    let v = market::utilities(params, state);
    let own_base = v.0[i] - params.attractiveness[i] * state.quality[i];
    let others: Vec<f64> = v.0.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| *x).collect();
    let rivals = market::log_sum_exp(&others);
    let share = |q: f64| {
        let z = own_base + params.attractiveness[i] * q - rivals;
        1.0 / (1.0 + (-z).exp())
    };
    let gap = |q: f64| {
        let p = share(q);
        params.cost.marginal(q) - scale * p * (1.0 - p)
    };

    let mut lo = 0.0;
    let mut hi = params.cost.inverse_marginal(0.5 * scale);
    if gap(lo) >= 0.0 {
        return 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `count` interior starts: positive viewer counts summing to `M`, qualities
/// drawn in `[0, 2 q_sym]`, and the allocation copied from `template`.
pub fn random_interior_starts(
    params: &MarketParams,
    template: &MarketState,
    count: usize,
    seed: u64,
) -> Vec<MarketState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_streamers;
    (0..count)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            let viewers = w.iter().map(|x| params.total_viewers * x / total).collect();
            let quality = (0..n)
                .map(|i| rng.gen_range(0.0..=2.0) * params.symmetric_quality(i))
                .collect();
            MarketState { viewers, quality, allocation: template.allocation.clone() }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessProbe {
    pub samples: Vec<BasinSample>,
    /// Largest componentwise distance between any attained point and the first one.
    pub max_spread_viewers: f64,
    pub max_spread_quality: f64,
    pub all_converged: bool,
}

impl UniquenessProbe {
    pub fn agrees_within(&self, tol_viewers: f64) -> bool {
        self.all_converged && self.max_spread_viewers <= tol_viewers
    }
}

/// Solves from every start (concurrently when enabled) and measures how far apart
/// the attained fixed points are.
pub fn probe_uniqueness(
    params: &MarketParams,
    starts: &[MarketState],
    cfg: &EquilibriumConfig,
) -> Result<UniquenessProbe> {
    let reports = par::map(starts, |s| solve_steady_state(params, s, cfg));
    let mut samples = Vec::with_capacity(reports.len());
    for r in reports {
        let mut r = r?;
        samples.append(&mut r.basin_probe);
    }
    let (mut sn, mut sq) = (0.0f64, 0.0f64);
    if let Some(first) = samples.first() {
        let reference = &first.attained;
        for s in &samples {
            for i in 0..reference.len() {
                sn = sn.max((s.attained.viewers[i] - reference.viewers[i]).abs());
                sq = sq.max((s.attained.quality[i] - reference.quality[i]).abs());
            }
        }
    }
    Ok(UniquenessProbe {
        all_converged: samples.iter().all(|s| s.converged),
        samples,
        max_spread_viewers: sn,
        max_spread_quality: sq,
    })
}

/// Integrates the dynamics from `start`, then polishes the endpoint with the
/// fixed-point solver. Finds the attractor the dynamics select.
pub fn simulate_then_polish(
    params: &MarketParams,
    start: &MarketState,
    integrator: &IntegratorConfig,
    cfg: &EquilibriumConfig,
) -> Result<EquilibriumReport> {
    let traj = dynamics::integrate(params, start, integrator, None)?;
    let mut report = solve_steady_state(params, traj.final_state(), cfg)?;
    report.basin_probe[0].start = start.clone();
    Ok(report)
}
