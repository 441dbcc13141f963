//! Time integration of the coupled viewer/quality system.
//!
//! ```text
//! ṅ_i = γ (M P_i − n_i)
//! q̇_i = η [(1 − τ) R M α_i P_i (1 − P_i) − c'(q_i)]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::market::{self, MarketParams, MarketState};
use crate::welfare;

/// Relative tolerance (of `M`) under which two final viewer counts count as a tie.
pub const TIE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub step: f64,
    pub horizon: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl IntegratorConfig {
    pub fn new(step: f64, horizon: f64) -> Self {
        IntegratorConfig { step, horizon, method: Method::Rk4, record_every: 1 }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn validate(&self, params: &MarketParams) -> Result<()> {
        let bad = |m: String| Err(MarketError::InvalidIntegrator(m));
        if !(self.step.is_finite() && self.step > 0.0) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.step > self.horizon {
            return bad("step exceeds horizon".into());
        }
        if params.viewer_speed * self.step >= 2.0 {
            return bad(format!(
                "γΔt = {} must stay below 2",
                params.viewer_speed * self.step
            ));
        }
        if self.record_every == 0 {
            return bad("record_every must be positive".into());
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        // tolerate horizons that are an integer number of steps up to rounding
        ((self.horizon / self.step) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Sampled path of the market with per-sample shares and HHI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MarketState>,
    pub shares: Vec<Vec<f64>>,
    pub hhi: Vec<f64>,
}

impl Trajectory {
    fn with_capacity(cap: usize) -> Self {
        Trajectory {
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            shares: Vec::with_capacity(cap),
            hhi: Vec::with_capacity(cap),
        }
    }

    fn push(&mut self, t: f64, state: MarketState, total_viewers: f64) {
        let (s, h) = welfare::raw_shares_and_hhi(&state.viewers, total_viewers);
        self.times.push(t);
        self.states.push(state);
        self.shares.push(s);
        self.hhi.push(h);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &MarketState {
        self.states.last().expect("trajectory always holds the initial sample")
    }
}

/// `ṅ_i = γ (M P_i − n_i)`
pub fn viewer_drift(params: &MarketParams, state: &MarketState) -> Result<Vec<f64>> {
    let p = market::probabilities(params, state)?;
    Ok(viewer_drift_from_shares(params, state, &p))
}

fn viewer_drift_from_shares(params: &MarketParams, state: &MarketState, p: &[f64]) -> Vec<f64> {
    let m = params.total_viewers;
    p.iter()
        .zip(&state.viewers)
        .map(|(pi, ni)| params.viewer_speed * (m * pi - ni))
        .collect()
}

/// `(ṅ, q̇)` in one softmax evaluation.
pub fn drift(params: &MarketParams, state: &MarketState) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = market::probabilities(params, state)?;
    Ok((
        viewer_drift_from_shares(params, state, &p),
        market::quality_drift_from_shares(params, state, &p),
    ))
}

/// Allocation as a function of time.
pub trait AllocationSchedule {
    fn allocation_at(&self, t: f64) -> Vec<f64>;
}

impl<F: Fn(f64) -> Vec<f64>> AllocationSchedule for F {
    fn allocation_at(&self, t: f64) -> Vec<f64> {
        self(t)
    }
}

fn offset(base: &MarketState, dn: &[f64], dq: &[f64], h: f64) -> MarketState {
    MarketState {
        viewers: base.viewers.iter().zip(dn).map(|(x, d)| x + h * d).collect(),
        quality: base.quality.iter().zip(dq).map(|(x, d)| x + h * d).collect(),
        allocation: base.allocation.clone(),
    }
}

/// One explicit step with the allocation held fixed. Quality is not clamped here.
pub fn step(params: &MarketParams, state: &MarketState, h: f64, method: Method) -> Result<MarketState> {
    match method {
        Method::Euler => {
            let (dn, dq) = drift(params, state)?;
            Ok(offset(state, &dn, &dq, h))
        }
        Method::Rk4 => {
            let (k1n, k1q) = drift(params, state)?;
            let (k2n, k2q) = drift(params, &offset(state, &k1n, &k1q, 0.5 * h))?;
            let (k3n, k3q) = drift(params, &offset(state, &k2n, &k2q, 0.5 * h))?;
            let (k4n, k4q) = drift(params, &offset(state, &k3n, &k3q, h))?;
            let comb = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
                (0..a.len()).map(|i| (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0).collect()
            };
            Ok(offset(state, &comb(&k1n, &k2n, &k3n, &k4n), &comb(&k1q, &k2q, &k3q, &k4q), h))
        }
    }
}

/// Integrates from `initial` to the configured horizon.
///
/// The allocation is taken from `schedule` at the start of every step (piecewise
/// constant), or held at `initial.allocation` when no schedule is given. Quality
/// is clamped at zero after each step.
pub fn integrate(
    params: &MarketParams,
    initial: &MarketState,
    cfg: &IntegratorConfig,
    schedule: Option<&dyn AllocationSchedule>,
) -> Result<Trajectory> {
    params.validate()?;
    initial.validate_for(params)?;
    cfg.validate(params)?;

    let steps = cfg.steps();
    let mut traj = Trajectory::with_capacity(steps / cfg.record_every + 2);
    let m = params.total_viewers;
    let mut state = initial.clone();
    let mut t = 0.0;
    traj.push(t, state.clone(), m);

    for k in 1..=steps {
        let h = if k == steps { cfg.horizon - t } else { cfg.step };
        if let Some(s) = schedule {
            state.allocation = s.allocation_at(t);
        }
        let next = step(params, &state, h, cfg.method).and_then(|mut next| {
            let finite = next.viewers.iter().chain(&next.quality).all(|x| x.is_finite());
            if !finite {
                return Err(MarketError::InvalidUtility);
            }
            next.quality.iter_mut().for_each(|q| *q = q.max(0.0));
            Ok(next)
        });
        state = match next {
            Ok(s) => s,
            Err(_) => {
                return Err(MarketError::Divergence { t, last_state: Box::new(state) });
            }
        };
        t = if k == steps { cfg.horizon } else { k as f64 * cfg.step };
        if k % cfg.record_every == 0 || k == steps {
            traj.push(t, state.clone(), m);
        }
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDependenceReport {
    pub times: Vec<f64>,
    /// `n_1(t) − n_2(t)`
    pub gap: Vec<f64>,
    /// Largest final viewer count, `None` for a tie within `TIE_TOL · M`.
    pub dominant: Option<usize>,
    pub final_shares: Vec<f64>,
    /// True if the gap ever changed sign.
    pub crossover: bool,
}

/// Two otherwise-identical streamers seeded with `M/N ± ε` viewers; the
/// remaining streamers start at `M/N`. Qualities start at the symmetric
/// first-order condition.
pub fn path_dependence_experiment(
    params: &MarketParams,
    epsilon: f64,
    cfg: &IntegratorConfig,
) -> Result<PathDependenceReport> {
    params.validate()?;
    if params.n_streamers < 2 {
        return Err(MarketError::InvalidArgument("need at least two streamers".into()));
    }
    if !params.is_symmetric() {
        return Err(MarketError::NotSymmetric);
    }
    let fair = params.total_viewers / params.n_streamers as f64;
    if !(epsilon >= 0.0 && epsilon < fair) {
        return Err(MarketError::InvalidArgument(format!(
            "ε must lie in [0, M/N) = [0, {fair}), got {epsilon}"
        )));
    }
    let mut initial = MarketState::symmetric_start(params);
    initial.viewers[0] += epsilon;
    initial.viewers[1] -= epsilon;

    let traj = integrate(params, &initial, cfg, None)?;
    let gap: Vec<f64> = traj.states.iter().map(|s| s.viewers[0] - s.viewers[1]).collect();
    let crossover = gap.windows(2).any(|w| w[0] * w[1] < 0.0)
        || (epsilon > 0.0 && gap.iter().any(|g| *g < 0.0));
    let last = traj.final_state();
    Ok(PathDependenceReport {
        dominant: dominant_index(&last.viewers, params.total_viewers),
        final_shares: last.viewers.iter().map(|n| n / params.total_viewers).collect(),
        times: traj.times,
        gap,
        crossover,
    })
}

/// Index of the largest viewer count, `None` if the top two tie within `TIE_TOL · M`.
pub fn dominant_index(viewers: &[f64], total: f64) -> Option<usize> {
    let mut order: Vec<usize> = (0..viewers.len()).collect();
    order.sort_by(|&a, &b| viewers[b].total_cmp(&viewers[a]));
    match order.as_slice() {
        [] => None,
        [only] => Some(*only),
        [first, second, ..] => {
            if viewers[*first] - viewers[*second] <= TIE_TOL * total {
                None
            } else {
                Some(*first)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym2(beta: f64) -> MarketParams {
        MarketParams::symmetric(2, 100.0, 0.05, 0.0, beta).unwrap()
    }

    #[test]
    fn viewer_drift_examples() {
        let p = sym2(0.0);
        let s = MarketState::new(vec![60.0, 40.0], vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let d = viewer_drift(&p, &s).unwrap();
        assert!((d[0] + 10.0).abs() < 1e-12 && (d[1] - 10.0).abs() < 1e-12);
        assert!(d.iter().sum::<f64>().abs() < 1e-12);

        let s = MarketState::new(vec![50.0, 50.0], vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert!(viewer_drift(&p, &s).unwrap().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn config_guards() {
        let p = sym2(0.0);
        assert!(IntegratorConfig::new(2.0, 10.0).validate(&p).is_err());
        assert!(IntegratorConfig::new(1.0, 0.5).validate(&p).is_err());
        assert!(IntegratorConfig::new(0.1, 1.0).with_record_every(0).validate(&p).is_err());
        assert!(IntegratorConfig::new(0.1, 1.0).validate(&p).is_ok());
    }

    #[test]
    fn steady_state_is_invariant() {
        let p = sym2(0.001);
        let s = MarketState::symmetric_start(&p);
        let traj = integrate(&p, &s, &IntegratorConfig::new(0.05, 5.0), None).unwrap();
        for st in &traj.states {
            for (a, b) in st.viewers.iter().zip(&s.viewers) {
                assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in st.quality.iter().zip(&s.quality) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_and_final_time() {
        let p = sym2(0.0);
        let s = MarketState::symmetric_start(&p);
        let cfg = IntegratorConfig::new(0.03, 1.0).with_record_every(10);
        let traj = integrate(&p, &s, &cfg, None).unwrap();
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(traj.len(), traj.hhi.len());
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = sym2(0.0);
        p.quality_speed = 1e300;
        let mut s = MarketState::symmetric_start(&p);
        s.quality = vec![0.0, 0.0];
        let err = integrate(&p, &s, &IntegratorConfig::new(0.1, 1.0), None).unwrap_err();
        match err {
            MarketError::Divergence { last_state, .. } => assert!(last_state.validate().is_ok()),
            other => panic!("unexpected {other}"),
        }
        assert!(format!("{}", MarketError::Divergence { t: 0.5, last_state: Box::new(s) })
            .starts_with("divergence at t="));
    }

    #[test]
    fn path_dependence_needs_symmetry() {
        let mut p = sym2(0.01);
        p.attractiveness[1] = 0.07;
        let err = path_dependence_experiment(&p, 1.0, &IntegratorConfig::new(0.01, 1.0));
        assert!(matches!(err, Err(MarketError::NotSymmetric)));
    }

    #[test]
    fn zero_epsilon_keeps_gap_zero() {
        let p = sym2(0.05);
        let r = path_dependence_experiment(&p, 0.0, &IntegratorConfig::new(0.01, 5.0)).unwrap();
        assert!(r.gap.iter().all(|g| *g == 0.0));
        assert_eq!(r.dominant, None);
        assert!(!r.crossover);
    }

    #[test]
    fn dominant_ties() {
        assert_eq!(dominant_index(&[50.0, 50.0], 100.0), None);
        assert_eq!(dominant_index(&[60.0, 40.0], 100.0), Some(0));
        assert_eq!(dominant_index(&[1.0, 3.0, 96.0], 100.0), Some(2));
    }
}
