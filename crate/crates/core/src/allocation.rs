//! Static traffic allocation: maximise `W(θ) = CS + PS + Π` over the simplex.
//!
//! In the default (uncoupled) reading the base viewers and qualities stay
//! fixed inside the utilities while realised viewers respond as `n_i = M P_i(θ)`:
//!
//! ```text
//! W(θ) = M lse(V⁰ + φθ) + R M Σ_i P_i(θ) − Σ_i c(q_i)
//! ∂W/∂θ_i = M φ P_i + R M Σ_j ∂P_j/∂θ_i
//! ```
//!
//! The second gradient term is assembled column by column and cancels to
//! rounding because there is no outside option. `W` is convex in `θ`, so its
//! maximisers over the simplex sit at vertices; uniform `θ` is stationary for
//! symmetric markets but is not a maximiser there.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{self, EquilibriumConfig};
use crate::error::{MarketError, Result};
use crate::market::{self, MarketParams, MarketState};
use crate::par;
use crate::welfare;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    #[default]
    ExactGradient,
    /// Solves `P_i/φ + R M P_i (1 − P_i) φ = λ` on the interior with the
    /// matching corner inequality.
    PaperFoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationConfig {
    pub mode: AllocationMode,
    /// Re-solve the steady state at every `θ` instead of the one-shot response.
    pub equilibrium_coupled: bool,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting allocation; uniform when absent.
    pub start: Option<Vec<f64>>,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig {
            mode: AllocationMode::ExactGradient,
            equilibrium_coupled: false,
            tol: 1e-10,
            max_iter: 10_000,
            start: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub mu: Vec<f64>,
    /// `∂W/∂θ` in exact-gradient mode, the `g(P)` left-hand side in `PaperFoc` mode.
    pub gradient: Vec<f64>,
    pub welfare: f64,
    pub foc_residual: f64,
    pub active_corners: Vec<usize>,
    pub mode: AllocationMode,
    pub converged: bool,
    /// `PaperFoc` only: some pinned coordinate fails the corner inequality.
    pub infeasible: bool,
    pub iterations: usize,
    pub welfare_history: Vec<f64>,
}

/// Euclidean projection onto `{θ ≥ 0, Σθ = 1}` by sorting.
pub fn simplex_project(y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() || y.iter().any(|x| !x.is_finite()) {
        return Err(MarketError::InvalidArgument("projection needs a finite, non-empty vector".into()));
    }
    if market::check_simplex(y).is_ok() {
        return Ok(y.to_vec());
    }
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            shift = t;
        }
    }
    Ok(y.iter().map(|x| (x - shift).max(0.0)).collect())
}

fn with_allocation(base: &MarketState, theta: &[f64]) -> MarketState {
    MarketState { allocation: theta.to_vec(), ..base.clone() }
}

fn coupled_state(params: &MarketParams, base: &MarketState, theta: &[f64]) -> Result<MarketState> {
    let start = with_allocation(base, theta);
    let cfg = EquilibriumConfig { max_iter: 200_000, ..Default::default() }
        .with_tolerances(1e-12 * params.total_viewers, 1e-12);
    let r = equilibrium::solve_steady_state(params, &start, &cfg)?;
    if !r.converged {
        return Err(MarketError::EquilibriumFailed { beta: params.network_effect });
    }
    Ok(r.state)
}

fn uncoupled_welfare(params: &MarketParams, base: &MarketState, theta: &[f64]) -> Result<f64> {
    let s = with_allocation(base, theta);
    let v = market::utilities(params, &s);
    let p = market::choice_probabilities(&v)?;
    let m = params.total_viewers;
    let cs = m * market::log_sum_exp(v.as_slice());
    let revenue = params.revenue_rate * m * p.iter().sum::<f64>();
    let cost: f64 = s.quality.iter().map(|q| params.cost.value(*q)).sum();
    Ok(cs + revenue - cost)
}

/// Total welfare at allocation `theta`, with viewers and qualities from `base`.
pub fn welfare_of(
    params: &MarketParams,
    base: &MarketState,
    theta: &[f64],
    equilibrium_coupled: bool,
) -> Result<f64> {
    market::check_simplex(theta)?;
    if equilibrium_coupled {
        let s = coupled_state(params, base, theta)?;
        Ok(welfare::WelfareBreakdown::evaluate(params, &s)?.total)
    } else {
        uncoupled_welfare(params, base, theta)
    }
}

/// `∂W/∂θ_i`. Coupled mode uses finite differences along `e_i − θ`, which fixes
/// the gradient only up to a common constant; the simplex geometry is
/// insensitive to that constant.
pub fn gradient(
    params: &MarketParams,
    base: &MarketState,
    theta: &[f64],
    equilibrium_coupled: bool,
) -> Result<Vec<f64>> {
    market::check_simplex(theta)?;
    if equilibrium_coupled {
        return coupled_gradient(params, base, theta);
    }
    let s = with_allocation(base, theta);
    let p = market::probabilities(params, &s)?;
    let jac = market::jacobians_from_shares(params, &p);
    let m = params.total_viewers;
    let r = params.revenue_rate;
    Ok((0..p.len())
        .map(|i| {
            let dn: f64 = (0..p.len()).map(|j| m * jac.allocation[(j, i)]).sum();
            m * params.traffic_sensitivity * p[i] + r * dn
        })
        .collect())
}

fn coupled_gradient(params: &MarketParams, base: &MarketState, theta: &[f64]) -> Result<Vec<f64>> {
    let n = theta.len();
    let h = 1e-5;
    let w0 = welfare_of(params, base, theta, true)?;
    let along = |i: usize, t: f64| -> Result<f64> {
        let moved: Vec<f64> =
            (0..n).map(|k| theta[k] + t * (if k == i { 1.0 } else { 0.0 } - theta[k])).collect();
        welfare_of(params, base, &renormalise(moved), true)
    };
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let back_ok = theta[i] >= h && theta[i] < 1.0;
        let d = if back_ok {
            (along(i, h)? - along(i, -h)?) / (2.0 * h)
        } else if theta[i] < 1.0 {
            (along(i, h)? - w0) / h
        } else {
            0.0
        };
        g.push(d);
    }
    Ok(g)
}

fn renormalise(mut theta: Vec<f64>) -> Vec<f64> {
    theta.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|x| *x /= s);
    theta
}

const ACTIVE_EPS: f64 = 1e-12;

/// `(λ, μ, residual)`: `λ` is the mean gradient over coordinates with
/// `θ_i > 0`, `μ_i = max(0, λ − g_i)` on corners, and the residual is the
/// largest violation of `g_i − λ + μ_i = 0`, `μ_i ≥ 0`.
pub fn kkt_multipliers(theta: &[f64], grad: &[f64]) -> (f64, Vec<f64>, f64) {
    let active: Vec<usize> = (0..theta.len()).filter(|i| theta[*i] > ACTIVE_EPS).collect();
    let lambda = active.iter().map(|i| grad[*i]).sum::<f64>() / active.len().max(1) as f64;
    let mut mu = vec![0.0; theta.len()];
    let mut res = 0.0f64;
    for i in 0..theta.len() {
        if theta[i] > ACTIVE_EPS {
            res = res.max((grad[i] - lambda).abs());
        } else {
            let raw = lambda - grad[i];
            mu[i] = raw.max(0.0);
            res = res.max((-raw).max(0.0));
        }
    }
    (lambda, mu, res)
}

pub fn optimize_allocation(
    params: &MarketParams,
    base: &MarketState,
    cfg: &AllocationConfig,
) -> Result<AllocationSolution> {
    params.validate()?;
    base.validate_for(params)?;
    if !(cfg.tol > 0.0) {
        return Err(MarketError::InvalidArgument("tolerance must be positive".into()));
    }
    let n = params.n_streamers;
    let start = cfg.start.clone().unwrap_or_else(|| market::uniform_allocation(n));
    if start.len() != n {
        return Err(MarketError::InvalidArgument(format!("start has {} entries, expected {n}", start.len())));
    }
    market::check_simplex(&start)?;
    match cfg.mode {
        AllocationMode::ExactGradient => exact_gradient(params, base, &start, cfg),
        AllocationMode::PaperFoc => paper_foc(params, base, cfg),
    }
}

fn exact_gradient(
    params: &MarketParams,
    base: &MarketState,
    start: &[f64],
    cfg: &AllocationConfig,
) -> Result<AllocationSolution> {
    let coupled = cfg.equilibrium_coupled;
    let mut theta = start.to_vec();
    let mut w = welfare_of(params, base, &theta, coupled)?;
    let mut history = vec![w];
    let mut step = f64::NAN;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let g = gradient(params, base, &theta, coupled)?;
        let (_, _, res) = kkt_multipliers(&theta, &g);
        if res <= cfg.tol {
            converged = true;
            break;
        }
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;
        let gmax = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if !step.is_finite() {
            step = 1.0 / gmax.max(f64::MIN_POSITIVE);
        }
        step *= 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
            let cand = simplex_project(&trial)?;
            let dir: f64 = cand.iter().zip(&theta).zip(&g).map(|((c, t), gi)| (c - t) * gi).sum();
            let wc = welfare_of(params, base, &cand, coupled)?;
            if dir > 0.0 && wc >= w + 1e-4 * dir {
                theta = cand;
                w = wc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        history.push(w);
        if !accepted {
            break;
        }
    }
    let g = gradient(params, base, &theta, coupled)?;
    let (lambda, mu, res) = kkt_multipliers(&theta, &g);
    Ok(AllocationSolution {
        active_corners: (0..theta.len()).filter(|i| theta[*i] <= ACTIVE_EPS).collect(),
        theta,
        lambda,
        mu,
        gradient: g,
        welfare: w,
        foc_residual: res,
        mode: AllocationMode::ExactGradient,
        converged: converged || res <= cfg.tol,
        infeasible: false,
        iterations,
        welfare_history: history,
    })
}

/// Closed form of the `PaperFoc` system. The left-hand side
/// `g(P) = P/φ + R M φ P (1 − P)` is shared by every coordinate, so interior
/// coordinates carry a common share `P*` and a common utility level `L`:
/// `L = (φ + Σ_A V⁰_i) / |A|`, `θ_i = (L − V⁰_i)/φ`. Negative entries are
/// pinned to zero and the active set `A` is shrunk until all are feasible.
fn paper_foc(params: &MarketParams, base: &MarketState, cfg: &AllocationConfig) -> Result<AllocationSolution> {
    let phi = params.traffic_sensitivity;
    if phi <= 0.0 {
        return Err(MarketError::InvalidArgument("paper_foc mode needs traffic_sensitivity > 0".into()));
    }
    let n = params.n_streamers;
    let zero = MarketState { allocation: vec![0.0; n], ..base.clone() };
    let v0 = market::utilities(params, &zero).0;
    let mut active = vec![true; n];
    let mut theta = vec![0.0; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let k = active.iter().filter(|a| **a).count();
        let level = (phi + (0..n).filter(|i| active[*i]).map(|i| v0[i]).sum::<f64>()) / k as f64;
        let mut changed = false;
        for i in 0..n {
            theta[i] = if active[i] { (level - v0[i]) / phi } else { 0.0 };
            if active[i] && theta[i] < 0.0 {
                active[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let theta = simplex_project(&theta)?;
    let s = with_allocation(base, &theta);
    let p = market::probabilities(params, &s)?;
    let rm = params.revenue_rate * params.total_viewers;
    let lhs: Vec<f64> = p.iter().map(|pi| pi / phi + rm * phi * pi * (1.0 - pi)).collect();
    let (lambda, mu, res) = kkt_multipliers(&theta, &lhs);
    let infeasible = (0..n).any(|i| theta[i] <= ACTIVE_EPS && lhs[i] - lambda > 0.0);
    let w = welfare_of(params, base, &theta, cfg.equilibrium_coupled)?;
    Ok(AllocationSolution {
        active_corners: (0..n).filter(|i| theta[*i] <= ACTIVE_EPS).collect(),
        theta,
        lambda,
        mu,
        gradient: lhs,
        welfare: w,
        foc_residual: res,
        mode: AllocationMode::PaperFoc,
        converged: !infeasible && res <= 1e-6,
        infeasible,
        iterations,
        welfare_history: vec![w],
    })
}

/// Runs exact-gradient ascent from every start (concurrently when enabled) and
/// keeps the best; ties go to the earliest start.
pub fn optimize_multistart(
    params: &MarketParams,
    base: &MarketState,
    cfg: &AllocationConfig,
    starts: &[Vec<f64>],
) -> Result<AllocationSolution> {
    if starts.is_empty() {
        return Err(MarketError::InvalidArgument("no starting allocations".into()));
    }
    let runs = par::map(starts, |s| {
        let c = AllocationConfig { start: Some(s.clone()), mode: AllocationMode::ExactGradient, ..cfg.clone() };
        optimize_allocation(params, base, &c)
    });
    let mut best: Option<AllocationSolution> = None;
    for r in runs {
        let r = r?;
        if best.as_ref().map_or(true, |b| r.welfare > b.welfare) {
            best = Some(r);
        }
    }
    Ok(best.expect("non-empty"))
}

/// The uniform allocation plus every vertex.
pub fn default_starts(n: usize) -> Vec<Vec<f64>> {
    let mut v = vec![market::uniform_allocation(n)];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        v.push(e);
    }
    v
}
