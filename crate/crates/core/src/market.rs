//! Domain types, the logit choice rule and its analytic derivatives.
//!
//! Viewer utility for streamer `i` is
//!
//! ```text
//! V_i = α_i q_i − p_i + β n_i + φ θ_i
//! ```
//!
//! and choice shares are the softmax of `V`. Every other module consumes the
//! probability Jacobians assembled here rather than differentiating on its own.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// Tolerance on `Σ θ_i = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Streamer content cost `c(q)`, strictly convex on `q ≥ 0` with `c(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `c(q) = κ q² / 2`
    Quadratic { kappa: f64 },
    /// `c(q) = a q² + b q³`
    Cubic { a: f64, b: f64 },
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec::Quadratic { kappa: 1.0 }
    }
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            CostSpec::Quadratic { kappa } if ok(kappa) => Ok(()),
            CostSpec::Cubic { a, b } if ok(a) && ok(b) => Ok(()),
            _ => Err(MarketError::param("cost", "coefficients must be positive and finite")),
        }
    }

    pub fn value(&self, q: f64) -> f64 {
        match *self {
            CostSpec::Quadratic { kappa } => 0.5 * kappa * q * q,
            CostSpec::Cubic { a, b } => a * q * q + b * q * q * q,
        }
    }

    /// `c'(q)`
    pub fn marginal(&self, q: f64) -> f64 {
        match *self {
            CostSpec::Quadratic { kappa } => kappa * q,
            CostSpec::Cubic { a, b } => 2.0 * a * q + 3.0 * b * q * q,
        }
    }

    /// `c''(q)`
    pub fn curvature(&self, q: f64) -> f64 {
        match *self {
            CostSpec::Quadratic { kappa } => kappa,
            CostSpec::Cubic { a, b } => 2.0 * a + 6.0 * b * q,
        }
    }

    /// `c'''(q)`
    pub fn third(&self, _q: f64) -> f64 {
        match *self {
            CostSpec::Quadratic { .. } => 0.0,
            CostSpec::Cubic { b, .. } => 6.0 * b,
        }
    }

    /// Solves `c'(q) = x` for `q ≥ 0`; returns 0 for `x ≤ 0`.
    pub fn inverse_marginal(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            CostSpec::Quadratic { kappa } => x / kappa,
            CostSpec::Cubic { a, b } => {
                // 3b q² + 2a q − x = 0, positive root in the cancellation-free form
                2.0 * x / (2.0 * a + (4.0 * a * a + 12.0 * b * x).sqrt())
            }
        }
    }
}

/// How quality responds to the gap in its first-order condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLaw {
    /// `q̇_i = η · gap_i`
    #[default]
    Gradient,
    /// `q̇_i = η · gap_i / c''(q_i)`
    NewtonNormalized,
}

/// Exogenous market constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub n_streamers: usize,
    pub total_viewers: f64,
    pub attractiveness: Vec<f64>,
    pub price: Vec<f64>,
    pub network_effect: f64,
    pub viewer_speed: f64,
    /// `η ≥ 0`; zero freezes quality.
    pub quality_speed: f64,
    pub platform_cut: f64,
    pub revenue_rate: f64,
    /// `φ ≥ 0`; zero disconnects allocation from choice.
    pub traffic_sensitivity: f64,
    pub discount_rate: f64,
    pub cost: CostSpec,
    #[serde(default)]
    pub quality_law: QualityLaw,
}

impl MarketParams {
    /// Identical streamers with unit rates, a 20% platform cut and quadratic cost `κ = 1`.
    pub fn symmetric(
        n_streamers: usize,
        total_viewers: f64,
        attractiveness: f64,
        price: f64,
        network_effect: f64,
    ) -> Result<Self> {
        let params = MarketParams {
            n_streamers,
            total_viewers,
            attractiveness: vec![attractiveness; n_streamers],
            price: vec![price; n_streamers],
            network_effect,
            viewer_speed: 1.0,
            quality_speed: 1.0,
            platform_cut: 0.2,
            revenue_rate: 1.0,
            traffic_sensitivity: 1.0,
            discount_rate: 0.1,
            cost: CostSpec::default(),
            quality_law: QualityLaw::Gradient,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_streamers;
        if n == 0 {
            return Err(MarketError::param("n_streamers", "must be positive"));
        }
        positive("total_viewers", self.total_viewers)?;
        check_vec("attractiveness", &self.attractiveness, n, |x| x > 0.0, "entries must be > 0")?;
        check_vec("price", &self.price, n, |x| x >= 0.0, "entries must be >= 0")?;
        non_negative("network_effect", self.network_effect)?;
        positive("viewer_speed", self.viewer_speed)?;
        non_negative("quality_speed", self.quality_speed)?;
        if !(self.platform_cut.is_finite() && (0.0..1.0).contains(&self.platform_cut)) {
            return Err(MarketError::param("platform_cut", "must lie in [0, 1)"));
        }
        positive("revenue_rate", self.revenue_rate)?;
        non_negative("traffic_sensitivity", self.traffic_sensitivity)?;
        positive("discount_rate", self.discount_rate)?;
        self.cost.validate()
    }

    /// Equal attractiveness and price across streamers.
    pub fn is_symmetric(&self) -> bool {
        let same = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
        same(&self.attractiveness) && same(&self.price)
    }

    /// `(1 − τ) R M`
    pub fn streamer_revenue_scale(&self) -> f64 {
        (1.0 - self.platform_cut) * self.revenue_rate * self.total_viewers
    }

    /// Quality solving the first-order condition when every share equals `1/N`.
    pub fn symmetric_quality(&self, i: usize) -> f64 {
        let share = 1.0 / self.n_streamers as f64;
        let rhs = self.streamer_revenue_scale() * self.attractiveness[i] * share * (1.0 - share);
        self.cost.inverse_marginal(rhs)
    }
}

fn positive(field: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(MarketError::param(field, format!("must be positive, got {x}")))
    }
}

fn non_negative(field: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(MarketError::param(field, format!("must be non-negative, got {x}")))
    }
}

fn check_vec(
    field: &'static str,
    v: &[f64],
    n: usize,
    pred: impl Fn(f64) -> bool,
    msg: &str,
) -> Result<()> {
    if v.len() != n {
        return Err(MarketError::param(field, format!("expected length {n}, got {}", v.len())));
    }
    if v.iter().all(|&x| x.is_finite() && pred(x)) {
        Ok(())
    } else {
        Err(MarketError::param(field, msg))
    }
}

/// Endogenous variables at an instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub viewers: Vec<f64>,
    pub quality: Vec<f64>,
    pub allocation: Vec<f64>,
}

impl MarketState {
    pub fn new(viewers: Vec<f64>, quality: Vec<f64>, allocation: Vec<f64>) -> Result<Self> {
        let state = MarketState { viewers, quality, allocation };
        state.validate()?;
        Ok(state)
    }

    /// `n_i = M/N`, quality at the symmetric first-order condition, uniform allocation.
    pub fn symmetric_start(params: &MarketParams) -> Self {
        let n = params.n_streamers;
        MarketState {
            viewers: vec![params.total_viewers / n as f64; n],
            quality: (0..n).map(|i| params.symmetric_quality(i)).collect(),
            allocation: uniform_allocation(n),
        }
    }

    pub fn len(&self) -> usize {
        self.viewers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.viewers.len();
        if n == 0 || self.quality.len() != n || self.allocation.len() != n {
            return Err(MarketState::bad("viewers, quality and allocation must share a non-zero length"));
        }
        if !self.viewers.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(MarketState::bad("viewer counts must be finite and non-negative"));
        }
        if !self.quality.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(MarketState::bad("quality must be finite and non-negative"));
        }
        check_simplex(&self.allocation)
    }

    pub fn validate_for(&self, params: &MarketParams) -> Result<()> {
        self.validate()?;
        if self.len() != params.n_streamers {
            return Err(MarketState::bad(format!(
                "state has {} streamers, params have {}",
                self.len(),
                params.n_streamers
            )));
        }
        Ok(())
    }

    pub fn total_viewers(&self) -> f64 {
        self.viewers.iter().sum()
    }

    fn bad(msg: impl Into<String>) -> MarketError {
        MarketError::InvalidState(msg.into())
    }
}

pub fn uniform_allocation(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn check_simplex(theta: &[f64]) -> Result<()> {
    if !theta.iter().all(|x| x.is_finite() && *x >= 0.0) {
        return Err(MarketError::InvalidState("allocation entries must be non-negative".into()));
    }
    let sum: f64 = theta.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(MarketError::InvalidState("allocation does not sum to 1".into()));
    }
    Ok(())
}

/// Deterministic viewer utilities.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityVector(pub Vec<f64>);

impl UtilityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn utilities(params: &MarketParams, state: &MarketState) -> UtilityVector {
    let v = (0..state.len())
        .map(|i| {
            params.attractiveness[i] * state.quality[i] - params.price[i]
                + params.network_effect * state.viewers[i]
                + params.traffic_sensitivity * state.allocation[i]
        })
        .collect();
    UtilityVector(v)
}

/// Softmax of the utilities, shifted by the maximum so large magnitudes do not overflow.
pub fn choice_probabilities(v: &UtilityVector) -> Result<Vec<f64>> {
    let v = v.as_slice();
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(MarketError::InvalidUtility);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

/// `ln Σ exp(v_k)`, max-shifted.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn probabilities(params: &MarketParams, state: &MarketState) -> Result<Vec<f64>> {
    choice_probabilities(&utilities(params, state))
}

/// `∂P_i/∂x_j` for `x ∈ {n, q, θ}`, row `i`, column `j`.
#[derive(Clone, Debug)]
pub struct ProbabilityJacobians {
    pub viewers: DMatrix<f64>,
    pub quality: DMatrix<f64>,
    pub allocation: DMatrix<f64>,
}

pub fn probability_jacobians(
    params: &MarketParams,
    state: &MarketState,
) -> Result<ProbabilityJacobians> {
    let p = probabilities(params, state)?;
    Ok(jacobians_from_shares(params, &p))
}

pub(crate) fn jacobians_from_shares(params: &MarketParams, p: &[f64]) -> ProbabilityJacobians {
    let n = p.len();
    // softmax sensitivity S_ij = δ_ij P_i − P_i P_j, scaled per column by the utility slope
    let s = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { p[i] } else { 0.0 };
        d - p[i] * p[j]
    });
    let beta = params.network_effect;
    let phi = params.traffic_sensitivity;
    ProbabilityJacobians {
        viewers: s.map(|x| beta * x),
        quality: DMatrix::from_fn(n, n, |i, j| params.attractiveness[j] * s[(i, j)]),
        allocation: s.map(|x| phi * x),
    }
}

/// `π_i = (1 − τ) R n_i − c(q_i)`
pub fn streamer_profit(params: &MarketParams, state: &MarketState, i: usize) -> Result<f64> {
    if i >= state.len() {
        return Err(MarketError::IndexOutOfRange { index: i, len: state.len() });
    }
    Ok((1.0 - params.platform_cut) * params.revenue_rate * state.viewers[i]
        - params.cost.value(state.quality[i]))
}

/// Gap in the quality first-order condition, `(1 − τ) R M α_i P_i (1 − P_i) − c'(q_i)`.
pub fn foc_gap(params: &MarketParams, i: usize, quality: f64, share: f64) -> f64 {
    params.streamer_revenue_scale() * params.attractiveness[i] * share * (1.0 - share)
        - params.cost.marginal(quality)
}

pub fn quality_drift(params: &MarketParams, state: &MarketState) -> Result<Vec<f64>> {
    let p = probabilities(params, state)?;
    Ok(quality_drift_from_shares(params, state, &p))
}

pub(crate) fn quality_drift_from_shares(
    params: &MarketParams,
    state: &MarketState,
    p: &[f64],
) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let gap = foc_gap(params, i, state.quality[i], p[i]);
            match params.quality_law {
                QualityLaw::Gradient => params.quality_speed * gap,
                QualityLaw::NewtonNormalized => {
                    params.quality_speed * gap / params.cost.curvature(state.quality[i])
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(beta: f64) -> MarketParams {
        MarketParams::symmetric(2, 100.0, 1.0, 0.0, beta).unwrap()
    }

    #[test]
    fn utilities_examples() {
        let mut p = two(0.0);
        p.traffic_sensitivity = 0.0;
        let s = MarketState::new(vec![50.0, 50.0], vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        let v = utilities(&p, &s);
        assert_eq!(v.0, vec![0.0, 0.0]);

        let mut p = two(0.01);
        p.attractiveness = vec![2.0, 1.0];
        p.price = vec![1.0, 0.0];
        p.traffic_sensitivity = 0.0;
        let s = MarketState::new(vec![100.0, 50.0], vec![3.0, 1.0], vec![0.5, 0.5]).unwrap();
        let v = utilities(&p, &s);
        assert!((v.0[0] - 6.0).abs() < 1e-12 && (v.0[1] - 1.5).abs() < 1e-12);

        let mut p = two(0.0);
        p.traffic_sensitivity = 0.5;
        let s = MarketState::new(vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(utilities(&p, &s).0, vec![0.5, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let p = choice_probabilities(&UtilityVector(vec![0.0; 3])).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));

        let p = choice_probabilities(&UtilityVector(vec![2f64.ln(), 0.0])).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);

        let p = choice_probabilities(&UtilityVector(vec![1000.0, 1000.0, 999.0])).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_eq!(p[0], p[1]);
        assert!(p[2] < p[0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let err = choice_probabilities(&UtilityVector(vec![0.0, f64::NAN])).unwrap_err();
        assert_eq!(err.to_string(), "invalid utility");
        assert!(choice_probabilities(&UtilityVector(vec![f64::INFINITY])).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let p = two(0.01);
        let s = MarketState::new(vec![50.0, 50.0], vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let j = probability_jacobians(&p, &s).unwrap();
        assert!((j.viewers[(0, 0)] - 0.0025).abs() < 1e-15);
        assert!((j.viewers[(0, 1)] + 0.0025).abs() < 1e-15);

        let j = probability_jacobians(&two(0.0), &s).unwrap();
        assert!(j.viewers.iter().all(|x| *x == 0.0));
        for c in 0..2 {
            assert!(j.quality.column(c).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn profit_examples() {
        let p = two(0.0);
        let s = MarketState::new(vec![100.0, 0.0], vec![0.0, 10.0], vec![0.5, 0.5]).unwrap();
        assert!((streamer_profit(&p, &s, 0).unwrap() - 80.0).abs() < 1e-12);
        let s = MarketState::new(vec![100.0, 0.0], vec![10.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert!((streamer_profit(&p, &s, 0).unwrap() - 30.0).abs() < 1e-12);
        assert!(matches!(
            streamer_profit(&p, &s, 2),
            Err(MarketError::IndexOutOfRange { index: 2, len: 2 })
        ));
        let mut bad = p.clone();
        bad.platform_cut = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn quality_drift_examples() {
        // τ=0.2, R=1, M=100, α=1, P=0.5, κ=1, q=0 → q̇ = 20η
        let mut p = two(0.0);
        p.quality_speed = 0.7;
        let s = MarketState::new(vec![50.0, 50.0], vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        let qd = quality_drift(&p, &s).unwrap();
        assert!((qd[0] - 20.0 * 0.7).abs() < 1e-12);

        // profit slope at q=0 from a fine grid agrees in sign
        let profit = |q: f64| {
            let st = MarketState::new(vec![50.0, 50.0], vec![q, 0.0], vec![0.5, 0.5]).unwrap();
            let share = probabilities(&p, &st).unwrap()[0];
            0.8 * 100.0 * share - p.cost.value(q)
        };
        assert!(profit(1e-4) > profit(0.0));

        // FOC fixed point: q = 80·P(1−P) = 20 at P = 1/2
        let s = MarketState::new(vec![50.0, 50.0], vec![20.0, 20.0], vec![0.5, 0.5]).unwrap();
        assert!(quality_drift(&p, &s).unwrap().iter().all(|x| x.abs() < 1e-12));

        let s = MarketState::new(vec![50.0, 50.0], vec![1e6, 0.0], vec![0.5, 0.5]).unwrap();
        assert!(quality_drift(&p, &s).unwrap()[0] < 0.0);
    }

    #[test]
    fn cost_invariants() {
        for cost in [CostSpec::Quadratic { kappa: 2.0 }, CostSpec::Cubic { a: 0.5, b: 0.1 }] {
            assert_eq!(cost.value(0.0), 0.0);
            for k in 1..200 {
                let q = k as f64 * 0.37;
                assert!(cost.marginal(q) > 0.0 && cost.curvature(q) > 0.0);
                let back = cost.inverse_marginal(cost.marginal(q));
                assert!((back - q).abs() < 1e-10 * (1.0 + q));
            }
        }
    }

    #[test]
    fn state_validation() {
        let err = MarketState::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![0.6, 0.5]).unwrap_err();
        assert!(err.to_string().contains("allocation does not sum to 1"));
        assert!(MarketState::new(vec![-1.0], vec![0.0], vec![1.0]).is_err());
        let mut p = two(0.0);
        p.network_effect = -0.1;
        assert!(p.validate().unwrap_err().to_string().contains("network_effect"));
    }
}
