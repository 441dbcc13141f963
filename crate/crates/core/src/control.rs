//! Finite-horizon dynamic allocation by the forward–backward sweep.
//!
//! The controlled state is `x = n`, or `x = (n, q)` with `joint_quality`.
//! With `W(x, θ) = M lse(V) + R Σ n_i − Σ c(q_i)` and drift `f(x, θ)` the
//! current-value Hamiltonian and costate equation are
//!
//! ```text
//! H = W + ψᵀ f,      ψ̇ = ρ ψ − ∂H/∂x,      ψ(T) = 0
//! ```
//!
//! `θ` is piecewise constant on a uniform grid of `K` cells; node `K` carries
//! its own value, which only enters the terminal welfare sample.

use serde::{Deserialize, Serialize};

use crate::allocation::{kkt_multipliers, simplex_project};
use crate::dynamics::{self, Method};
use crate::error::{MarketError, Result};
use crate::market::{self, MarketParams, MarketState};
use crate::stability;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub horizon: f64,
    pub steps: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Scales every projected-gradient step, in `(0, 1]`.
    pub relaxation: f64,
    /// Carry quality dynamics and their costates; otherwise quality is frozen.
    pub joint_quality: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { horizon: 2.0, steps: 50, tol: 1e-8, max_sweeps: 200, relaxation: 1.0, joint_quality: false }
    }
}

impl ControlConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MarketError::InvalidArgument(m.into()));
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tolerance must be positive");
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSolution {
    pub times: Vec<f64>,
    pub theta_path: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    pub states: Vec<MarketState>,
    /// Undiscounted `W(t)` at each node.
    pub welfare_path: Vec<f64>,
    pub discounted_welfare: f64,
    /// KKT violation of `∂H/∂θ` on the simplex, relative to `max(1, ‖∂H/∂θ‖∞)`.
    pub foc_residual_path: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Discounted welfare after each accepted sweep, starting with the initial path.
    pub objective_history: Vec<f64>,
}

/// `W = M lse(V) + R Σ n_i − Σ c(q_i)`.
pub fn state_welfare(params: &MarketParams, state: &MarketState) -> f64 {
    let v = market::utilities(params, state);
    params.total_viewers * market::log_sum_exp(v.as_slice()) + params.revenue_rate * state.total_viewers()
        - state.quality.iter().map(|q| params.cost.value(*q)).sum::<f64>()
}

fn joint(costate: &[f64], n: usize) -> Result<bool> {
    if costate.len() == n {
        Ok(false)
    } else if costate.len() == 2 * n {
        Ok(true)
    } else {
        Err(MarketError::InvalidArgument(format!("costate must have {n} or {} entries", 2 * n)))
    }
}

/// `H = W + ψᵀ f`; a costate of length `2N` also prices the quality drift.
pub fn hamiltonian(params: &MarketParams, state: &MarketState, costate: &[f64]) -> Result<f64> {
    let n = state.len();
    let with_q = joint(costate, n)?;
    if costate.iter().any(|x| !x.is_finite()) {
        return Err(MarketError::InvalidArgument("costate must be finite".into()));
    }
    let (dn, dq) = dynamics::drift(params, state)?;
    let mut h = state_welfare(params, state);
    h += (0..n).map(|i| costate[i] * dn[i]).sum::<f64>();
    if with_q {
        h += (0..n).map(|i| costate[n + i] * dq[i]).sum::<f64>();
    }
    Ok(h)
}

/// `∂H/∂x` assembled from the analytic choice and drift Jacobians.
pub fn hamiltonian_state_gradient(params: &MarketParams, state: &MarketState, costate: &[f64]) -> Result<Vec<f64>> {
    let n = state.len();
    let with_q = joint(costate, n)?;
    let p = market::probabilities(params, state)?;
    let a = stability::jacobian_at(params, state)?;
    let m = params.total_viewers;
    let dim = costate.len();
    let mut g: Vec<f64> = (0..n).map(|i| m * params.network_effect * p[i] + params.revenue_rate).collect();
    if with_q {
        g.extend((0..n).map(|i| m * params.attractiveness[i] * p[i] - params.cost.marginal(state.quality[i])));
    }
    for (c, gc) in g.iter_mut().enumerate() {
        *gc += (0..dim).map(|r| a[(r, c)] * costate[r]).sum::<f64>();
    }
    Ok(g)
}

/// `∂H/∂θ`.
pub fn hamiltonian_control_gradient(params: &MarketParams, state: &MarketState, costate: &[f64]) -> Result<Vec<f64>> {
    let n = state.len();
    let with_q = joint(costate, n)?;
    let p = market::probabilities(params, state)?;
    let jac = market::jacobians_from_shares(params, &p);
    let m = params.total_viewers;
    let gamma = params.viewer_speed;
    let mut g: Vec<f64> = (0..n).map(|j| m * params.traffic_sensitivity * p[j]).collect();
    for (j, gj) in g.iter_mut().enumerate() {
        *gj += (0..n).map(|i| costate[i] * gamma * m * jac.allocation[(i, j)]).sum::<f64>();
    }
    if with_q {
        let scale = params.streamer_revenue_scale();
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += (0..n)
                .map(|i| {
                    let row = match params.quality_law {
                        market::QualityLaw::Gradient => params.quality_speed,
                        market::QualityLaw::NewtonNormalized => {
                            params.quality_speed / params.cost.curvature(state.quality[i])
                        }
                    };
                    costate[n + i] * row * scale * params.attractiveness[i] * (1.0 - 2.0 * p[i]) * jac.allocation[(i, j)]
                })
                .sum::<f64>();
        }
    }
    Ok(g)
}

/// `ψ̇ = ρ ψ − ∂H/∂x`.
pub fn costate_drift(params: &MarketParams, state: &MarketState, costate: &[f64]) -> Result<Vec<f64>> {
    let g = hamiltonian_state_gradient(params, state, costate)?;
    Ok(costate.iter().zip(g).map(|(l, gi)| params.discount_rate * l - gi).collect())
}

struct Problem<'a> {
    params: MarketParams,
    initial: &'a MarketState,
    cfg: &'a ControlConfig,
    h: f64,
    times: Vec<f64>,
}

struct Forward {
    states: Vec<MarketState>,
    welfare: Vec<f64>,
    objective: f64,
}

impl<'a> Problem<'a> {
    fn new(params: &MarketParams, initial: &'a MarketState, cfg: &'a ControlConfig) -> Self {
        let mut p = params.clone();
        if !cfg.joint_quality {
            p.quality_speed = 0.0;
        }
        let h = cfg.horizon / cfg.steps as f64;
        let times = (0..=cfg.steps).map(|k| k as f64 * h).collect();
        Problem { params: p, initial, cfg, h, times }
    }

    fn advance(&self, state: &MarketState, theta: &[f64], h: f64, t: f64) -> Result<MarketState> {
        let mut s = state.clone();
        s.allocation = theta.to_vec();
        let mut next = dynamics::step(&self.params, &s, h, Method::Rk4)?;
        next.quality.iter_mut().for_each(|q| *q = q.max(0.0));
        if next.viewers.iter().chain(&next.quality).any(|x| !x.is_finite()) {
            return Err(MarketError::Divergence { t: t + h, last_state: Box::new(s) });
        }
        Ok(next)
    }

    fn forward(&self, theta: &[Vec<f64>]) -> Result<Forward> {
        let k = self.cfg.steps;
        let mut states = Vec::with_capacity(k + 1);
        let mut s = self.initial.clone();
        s.allocation = theta[0].clone();
        states.push(s);
        for j in 0..k {
            let mut next = self.advance(&states[j], &theta[j], self.h, self.times[j])?;
            next.allocation = theta[j + 1].clone();
            states.push(next);
        }
        let welfare: Vec<f64> = states.iter().map(|s| state_welfare(&self.params, s)).collect();
        let rho = self.params.discount_rate;
        let objective = (0..=k)
            .map(|j| {
                let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                w * self.h * (-rho * self.times[j]).exp() * welfare[j]
            })
            .sum();
        Ok(Forward { states, welfare, objective })
    }

    fn backward(&self, fwd: &Forward, theta: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let k = self.cfg.steps;
        let n = self.initial.len();
        let dim = if self.cfg.joint_quality { 2 * n } else { n };
        let mut psi = vec![vec![0.0; dim]; k + 1];
        let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
        for j in (0..k).rev() {
            let mut left = fwd.states[j].clone();
            left.allocation = theta[j].clone();
            let mid = self.advance(&left, &theta[j], 0.5 * self.h, self.times[j])?;
            let mut right = fwd.states[j + 1].clone();
            right.allocation = theta[j].clone();
            let h = -self.h;
            let y = &psi[j + 1];
            let k1 = costate_drift(&self.params, &right, y)?;
            let k2 = costate_drift(&self.params, &mid, &axpy(y, 0.5 * h, &k1))?;
            let k3 = costate_drift(&self.params, &mid, &axpy(y, 0.5 * h, &k2))?;
            let k4 = costate_drift(&self.params, &left, &axpy(y, h, &k3))?;
            psi[j] = (0..dim).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
        }
        Ok(psi)
    }

    fn control_gradients(&self, fwd: &Forward, psi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        (0..=self.cfg.steps).map(|j| hamiltonian_control_gradient(&self.params, &fwd.states[j], &psi[j])).collect()
    }
}

fn residual(theta: &[f64], g: &[f64]) -> f64 {
    let (_, _, r) = kkt_multipliers(theta, g);
    r / g.iter().fold(1.0f64, |a, x| a.max(x.abs()))
}

/// Discounted welfare (trapezoid rule) of a given allocation path on `K + 1` nodes.
pub fn evaluate_policy(
    params: &MarketParams,
    initial: &MarketState,
    cfg: &ControlConfig,
    theta_path: &[Vec<f64>],
) -> Result<f64> {
    cfg.validate()?;
    if theta_path.len() != cfg.steps + 1 {
        return Err(MarketError::InvalidArgument(format!("need {} allocation nodes", cfg.steps + 1)));
    }
    for t in theta_path {
        market::check_simplex(t)?;
    }
    Ok(Problem::new(params, initial, cfg).forward(theta_path)?.objective)
}

pub fn solve_fbsm(params: &MarketParams, initial: &MarketState, cfg: &ControlConfig) -> Result<ControlSolution> {
    params.validate()?;
    initial.validate_for(params)?;
    cfg.validate()?;
    let prob = Problem::new(params, initial, cfg);
    let k = cfg.steps;

    let mut theta = vec![initial.allocation.clone(); k + 1];
    let mut fwd = prob.forward(&theta)?;
    let mut history = vec![fwd.objective];
    let mut step_scale = 1.0;
    let mut sweeps = 0;
    let mut converged = false;
    let (mut psi, mut res_path);

    loop {
        sweeps += 1;
        psi = prob.backward(&fwd, &theta)?;
        let grads = prob.control_gradients(&fwd, &psi)?;
        res_path = (0..=k).map(|j| residual(&theta[j], &grads[j])).collect::<Vec<f64>>();
        if res_path.iter().all(|r| *r <= cfg.tol) {
            converged = true;
            break;
        }
        if sweeps >= cfg.max_sweeps {
            break;
        }
        let gmax = grads.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
        step_scale *= 2.0;
        let mut accepted = None;
        for _ in 0..60 {
            let s = cfg.relaxation * step_scale / gmax;
            let cand: Vec<Vec<f64>> = (0..=k)
                .map(|j| {
                    let y: Vec<f64> = theta[j].iter().zip(&grads[j]).map(|(t, g)| t + s * g).collect();
                    simplex_project(&y)
                })
                .collect::<Result<_>>()?;
            let change = cand
                .iter()
                .zip(&theta)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0f64, f64::max);
            if change <= cfg.tol {
                break;
            }
            let f = prob.forward(&cand)?;
            if f.objective > fwd.objective {
                accepted = Some((cand, f));
                break;
            }
            step_scale *= 0.5;
        }
        match accepted {
            Some((cand, f)) => {
                theta = cand;
                fwd = f;
                history.push(fwd.objective);
            }
            None => break,
        }
    }

    Ok(ControlSolution {
        times: prob.times.clone(),
        theta_path: theta,
        costates: psi,
        states: fwd.states,
        welfare_path: fwd.welfare,
        discounted_welfare: fwd.objective,
        foc_residual_path: res_path,
        converged,
        sweeps,
        objective_history: history,
    })
}
