//! Concentration metrics and the welfare decomposition `W = CS + PS + Π`.
//!
//! `CS = M ln Σ_k exp(V_k)` (the Euler–Mascheroni offset is dropped),
//! `PS = Σ_i [(1 − τ) R n_i − c(q_i)]`, `Π = τ R Σ_i n_i`.

use serde::{Deserialize, Serialize};

use crate::dynamics::IntegratorConfig;
use crate::equilibrium::{self, EquilibriumConfig};
use crate::error::{MarketError, Result};
use crate::market::{self, MarketParams, MarketState};
use crate::stability::{self, CriticalBetaConfig};

pub const HEAD_EFFECT_SHARE: f64 = 0.99;

/// `s_i = n_i / M` and `Σ s_i²` without any conservation check.
pub fn raw_shares_and_hhi(viewers: &[f64], total_viewers: f64) -> (Vec<f64>, f64) {
    let s: Vec<f64> = viewers.iter().map(|n| n / total_viewers).collect();
    let hhi = s.iter().map(|x| x * x).sum();
    (s, hhi)
}

pub fn shares_and_hhi(state: &MarketState, total_viewers: f64) -> Result<(Vec<f64>, f64)> {
    let sum = state.total_viewers();
    if (sum - total_viewers).abs() > 1e-3 * total_viewers {
        return Err(MarketError::ConservationViolated { sum, total: total_viewers });
    }
    Ok(raw_shares_and_hhi(&state.viewers, total_viewers))
}

pub fn consumer_surplus(params: &MarketParams, state: &MarketState) -> f64 {
    params.total_viewers * market::log_sum_exp(market::utilities(params, state).as_slice())
}

pub fn producer_surplus(params: &MarketParams, state: &MarketState) -> f64 {
    let keep = (1.0 - params.platform_cut) * params.revenue_rate;
    state
        .viewers
        .iter()
        .zip(&state.quality)
        .map(|(n, q)| keep * n - params.cost.value(*q))
        .sum()
}

pub fn platform_profit(params: &MarketParams, state: &MarketState) -> f64 {
    params.platform_cut * params.revenue_rate * state.total_viewers()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelfareBreakdown {
    pub consumer_surplus: f64,
    pub producer_surplus: f64,
    pub platform_profit: f64,
    pub total: f64,
    /// Normalised by `Σ n_i`, so they sum to one even during transients.
    pub shares: Vec<f64>,
    pub hhi: f64,
    pub head_effect: bool,
}

impl WelfareBreakdown {
    pub fn evaluate(params: &MarketParams, state: &MarketState) -> Result<Self> {
        params.validate()?;
        state.validate_for(params)?;
        let active = vec![true; state.len()];
        Self::evaluate_active(params, state, &active)
    }

    /// Welfare when only the `active` streamers operate: inactive ones leave the
    /// viewers' choice set and bear no cost. Their viewer counts must be zero.
    pub fn evaluate_active(params: &MarketParams, state: &MarketState, active: &[bool]) -> Result<Self> {
        if active.len() != state.len() || !active.iter().any(|a| *a) {
            return Err(MarketError::InvalidArgument("active set must match N and be non-empty".into()));
        }
        if (0..state.len()).any(|i| !active[i] && state.viewers[i] != 0.0) {
            return Err(MarketError::InvalidArgument("inactive streamers cannot hold viewers".into()));
        }
        let sum = state.total_viewers();
        if (sum - params.total_viewers).abs() > 1e-3 * params.total_viewers {
            return Err(MarketError::ConservationViolated { sum, total: params.total_viewers });
        }
        let v = market::utilities(params, state);
        let live: Vec<f64> = (0..state.len()).filter(|i| active[*i]).map(|i| v.0[i]).collect();
        let cs = params.total_viewers * market::log_sum_exp(&live);
        let keep = (1.0 - params.platform_cut) * params.revenue_rate;
        let ps = (0..state.len())
            .filter(|i| active[*i])
            .map(|i| keep * state.viewers[i] - params.cost.value(state.quality[i]))
            .sum::<f64>();
        let pi = platform_profit(params, state);
        let shares: Vec<f64> = state.viewers.iter().map(|n| n / sum).collect();
        let hhi = shares.iter().map(|s| s * s).sum();
        let head_effect = shares.iter().any(|s| *s >= HEAD_EFFECT_SHARE);
        Ok(WelfareBreakdown {
            consumer_surplus: cs,
            producer_surplus: ps,
            platform_profit: pi,
            total: cs + ps + pi,
            shares,
            hhi,
            head_effect,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadEffectConfig {
    /// Multiple of `β*` for the concentrated scenario.
    pub concentrated_factor: f64,
    /// Multiple of `β*` for the balanced scenario; below one keeps it stable.
    pub balanced_factor: f64,
    /// Initial viewer shift toward streamer 0, as a fraction of `M`.
    pub perturbation: f64,
    /// Horizon in units of `1/γ`.
    pub horizon: f64,
    /// Step in units of `1/γ`.
    pub step: f64,
}

impl Default for HeadEffectConfig {
    fn default() -> Self {
        HeadEffectConfig { concentrated_factor: 2.0, balanced_factor: 0.5, perturbation: 1e-3, horizon: 50.0, step: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelfareComparison {
    pub beta_concentrated: f64,
    pub beta_balanced: f64,
    pub concentrated: WelfareBreakdown,
    pub balanced: WelfareBreakdown,
    /// Concentrated minus balanced.
    pub cs_delta: f64,
    pub ps_delta: f64,
}

impl WelfareComparison {
    fn new(beta_c: f64, beta_b: f64, concentrated: WelfareBreakdown, balanced: WelfareBreakdown) -> Self {
        WelfareComparison {
            beta_concentrated: beta_c,
            beta_balanced: beta_b,
            cs_delta: concentrated.consumer_surplus - balanced.consumer_surplus,
            ps_delta: concentrated.producer_surplus - balanced.producer_surplus,
            concentrated,
            balanced,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadEffectReport {
    pub beta_star: f64,
    pub welfare_concentrated: f64,
    pub welfare_balanced: f64,
    pub cs_delta: f64,
    pub ps_delta: f64,
    /// Each state evaluated under its own `β`.
    pub own_beta: WelfareComparison,
    /// Both states at the concentrating `β`: the unstable symmetric point vs the attractor.
    pub fixed_beta: WelfareComparison,
    /// Same `β` and qualities; streamer 0 alone in the market vs all streamers active.
    pub exit: WelfareComparison,
}

pub fn head_effect_comparison(params: &MarketParams, cfg: &HeadEffectConfig) -> Result<HeadEffectReport> {
    params.validate()?;
    if !params.is_symmetric() {
        return Err(MarketError::NotSymmetric);
    }
    let n = params.n_streamers;
    if n < 2 {
        return Err(MarketError::InvalidArgument("need at least two streamers".into()));
    }
    let m = params.total_viewers;
    let upper = 4.0 * n as f64 / m;
    let cb = stability::critical_beta(
        params,
        &CriticalBetaConfig { bracket: (0.0, upper), tol: 1e-10 * upper, ..Default::default() },
    )?;
    let beta_star = cb.beta_star;
    let with_beta = |b: f64| {
        let mut p = params.clone();
        p.network_effect = b;
        p
    };
    let eq_cfg = EquilibriumConfig { max_iter: 200_000, ..Default::default() };

    let bc = cfg.concentrated_factor * beta_star;
    let pc = with_beta(bc);
    let mut start = MarketState::symmetric_start(&pc);
    let shift = (cfg.perturbation * m).min(start.viewers[1]);
    start.viewers[0] += shift;
    start.viewers[1] -= shift;
    let gamma = params.viewer_speed;
    let integ = IntegratorConfig::new(cfg.step / gamma, cfg.horizon / gamma).with_record_every(usize::MAX);
    let conc = equilibrium::simulate_then_polish(&pc, &start, &integ, &eq_cfg)?;
    if !conc.converged {
        return Err(MarketError::EquilibriumFailed { beta: bc });
    }

    let bb = cfg.balanced_factor * beta_star;
    let pb = with_beta(bb);
    let bal = equilibrium::solve_steady_state(&pb, &MarketState::symmetric_start(&pb), &eq_cfg)?;
    if !bal.converged {
        return Err(MarketError::EquilibriumFailed { beta: bb });
    }
    let own = WelfareComparison::new(
        bc,
        bb,
        WelfareBreakdown::evaluate(&pc, &conc.state)?,
        WelfareBreakdown::evaluate(&pb, &bal.state)?,
    );

    let sym = equilibrium::solve_steady_state(&pc, &MarketState::symmetric_start(&pc), &eq_cfg)?;
    if !sym.converged {
        return Err(MarketError::EquilibriumFailed { beta: bc });
    }
    let fixed = WelfareComparison::new(
        bc,
        bc,
        WelfareBreakdown::evaluate(&pc, &conc.state)?,
        WelfareBreakdown::evaluate(&pc, &sym.state)?,
    );

    let mut mono = bal.state.clone();
    mono.viewers = vec![0.0; n];
    mono.viewers[0] = m;
    let mut active = vec![false; n];
    active[0] = true;
    let exit = WelfareComparison::new(
        bb,
        bb,
        WelfareBreakdown::evaluate_active(&pb, &mono, &active)?,
        WelfareBreakdown::evaluate(&pb, &bal.state)?,
    );

    Ok(HeadEffectReport {
        beta_star,
        welfare_concentrated: own.concentrated.total,
        welfare_balanced: own.balanced.total,
        cs_delta: own.cs_delta,
        ps_delta: own.ps_delta,
        own_beta: own,
        fixed_beta: fixed,
        exit,
    })
}
