//! JSON scenario files.
//!
//! ```json
//! {
//!   "params": {
//!     "n_streamers": 2, "total_viewers": 1000,
//!     "attractiveness": {"uniform": 0.05}, "price": [0, 0.1],
//!     "network_effect": 0.001, "viewer_speed": 1, "quality_speed": 1,
//!     "platform_cut": 0.2, "revenue_rate": 1, "traffic_sensitivity": 1,
//!     "discount_rate": 0.1, "cost": {"quadratic": {"kappa": 1}}
//!   },
//!   "initial": {"viewers": {"symmetric_perturbed": 0.001}, "allocation": "uniform"},
//!   "integrator": {"step": 0.01, "horizon": 50}
//! }
//! ```
//!
//! Vectors accept `{"uniform": x}`. Initial viewers also accept
//! `{"symmetric_perturbed": ε}` (streamer 1 gains `ε·M`, streamer 2 loses it);
//! initial quality defaults to the symmetric first-order condition and the
//! allocation to uniform.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationConfig;
use crate::control::ControlConfig;
use crate::dynamics::IntegratorConfig;
use crate::equilibrium::EquilibriumConfig;
use crate::error::{MarketError, Result};
use crate::market::{self, CostSpec, MarketParams, MarketState, QualityLaw};
use crate::stability::{CriticalBetaConfig, StabilityConfig};
use crate::sweep::SweepConfig;
use crate::welfare::HeadEffectConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Explicit(Vec<f64>),
    Uniform { uniform: f64 },
}

impl VectorSpec {
    fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            VectorSpec::Explicit(v) => v.clone(),
            VectorSpec::Uniform { uniform } => vec![*uniform; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViewerSpec {
    Named(Named),
    Vector(VectorSpec),
    Perturbed { symmetric_perturbed: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Named {
    Uniform,
    Symmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShorthandSpec {
    Named(Named),
    Vector(VectorSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub n_streamers: usize,
    pub total_viewers: f64,
    pub attractiveness: VectorSpec,
    pub price: VectorSpec,
    pub network_effect: f64,
    pub viewer_speed: f64,
    pub quality_speed: f64,
    pub platform_cut: f64,
    pub revenue_rate: f64,
    pub traffic_sensitivity: f64,
    pub discount_rate: f64,
    pub cost: CostSpec,
    #[serde(default)]
    pub quality_law: QualityLaw,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub viewers: Option<ViewerSpec>,
    pub quality: Option<ShorthandSpec>,
    pub allocation: Option<ShorthandSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub starts: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec { starts: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub params: ParamsSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub integrator: Option<IntegratorConfig>,
    pub equilibrium: Option<EquilibriumConfig>,
    pub probe: Option<ProbeSpec>,
    pub stability: Option<StabilityConfig>,
    pub critical_beta: Option<CriticalBetaConfig>,
    pub head_effect: Option<HeadEffectConfig>,
    pub allocation: Option<AllocationConfig>,
    pub control: Option<ControlConfig>,
    pub sweep: Option<SweepConfig>,
}

/// A fully expanded and validated scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub params: MarketParams,
    pub initial: MarketState,
    pub integrator: Option<IntegratorConfig>,
    pub equilibrium: EquilibriumConfig,
    pub probe: ProbeSpec,
    pub stability: StabilityConfig,
    pub critical_beta: CriticalBetaConfig,
    pub head_effect: HeadEffectConfig,
    pub allocation: AllocationConfig,
    pub control: ControlConfig,
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}, column {column}: {message}")]
    Schema { path: String, line: usize, column: usize, message: String },
    #[error("{0}")]
    Invalid(#[from] MarketError),
}

pub fn parse_scenario(path: &Path) -> std::result::Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> std::result::Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner();
        ScenarioError::Schema { path, line: inner.line(), column: inner.column(), message: inner.to_string() }
    })?;
    Ok(expand(file)?)
}

pub fn expand(file: ScenarioFile) -> Result<Scenario> {
    let ps = &file.params;
    let n = ps.n_streamers;
    let params = MarketParams {
        n_streamers: n,
        total_viewers: ps.total_viewers,
        attractiveness: ps.attractiveness.expand(n),
        price: ps.price.expand(n),
        network_effect: ps.network_effect,
        viewer_speed: ps.viewer_speed,
        quality_speed: ps.quality_speed,
        platform_cut: ps.platform_cut,
        revenue_rate: ps.revenue_rate,
        traffic_sensitivity: ps.traffic_sensitivity,
        discount_rate: ps.discount_rate,
        cost: ps.cost,
        quality_law: ps.quality_law,
    };
    params.validate()?;

    let sym = MarketState::symmetric_start(&params);
    let m = params.total_viewers;
    let viewers = match &file.initial.viewers {
        None | Some(ViewerSpec::Named(_)) => sym.viewers.clone(),
        Some(ViewerSpec::Vector(v)) => v.expand(n),
        Some(ViewerSpec::Perturbed { symmetric_perturbed: eps }) => {
            let mut v = sym.viewers.clone();
            let shift = eps * m;
            if n < 2 || !(shift >= 0.0) || shift > v[1] {
                return Err(MarketError::param("initial.viewers", "perturbation must lie in [0, 1/N] and N ≥ 2"));
            }
            v[0] += shift;
            v[1] -= shift;
            v
        }
    };
    let quality = match &file.initial.quality {
        None | Some(ShorthandSpec::Named(Named::Symmetric)) => sym.quality.clone(),
        Some(ShorthandSpec::Named(Named::Uniform)) => {
            return Err(MarketError::param("initial.quality", "use {\"uniform\": x} or \"symmetric\""));
        }
        Some(ShorthandSpec::Vector(v)) => v.expand(n),
    };
    let allocation = match &file.initial.allocation {
        None | Some(ShorthandSpec::Named(Named::Uniform)) => market::uniform_allocation(n),
        Some(ShorthandSpec::Named(Named::Symmetric)) => {
            return Err(MarketError::param("initial.allocation", "use \"uniform\" or an explicit vector"));
        }
        Some(ShorthandSpec::Vector(v)) => v.expand(n),
    };
    let initial = MarketState::new(viewers, quality, allocation)?;
    initial.validate_for(&params)?;
    if let Some(c) = &file.integrator {
        c.validate(&params)?;
    }

    Ok(Scenario {
        params,
        initial,
        integrator: file.integrator,
        equilibrium: file.equilibrium.unwrap_or_default(),
        probe: file.probe.unwrap_or_default(),
        stability: file.stability.unwrap_or_default(),
        critical_beta: file.critical_beta.unwrap_or_default(),
        head_effect: file.head_effect.unwrap_or_default(),
        allocation: file.allocation.unwrap_or_default(),
        control: file.control.unwrap_or_default(),
        sweep: file.sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "params": {
            "n_streamers": 2, "total_viewers": 1000,
            "attractiveness": {"uniform": 1.0}, "price": [0, 0],
            "network_effect": 0.001, "viewer_speed": 1, "quality_speed": 1,
            "platform_cut": 0.2, "revenue_rate": 1, "traffic_sensitivity": 1,
            "discount_rate": 0.1, "cost": {"quadratic": {"kappa": 1}}
        }
    }"#;

    fn with(patch: &str) -> String {
        BASE.replacen("\"params\"", &format!("{patch}, \"params\""), 1)
    }

    #[test]
    fn uniform_shorthand() {
        let s = parse_scenario_str(BASE).unwrap();
        assert_eq!(s.params.attractiveness, vec![1.0, 1.0]);
        assert_eq!(s.initial.viewers, vec![500.0, 500.0]);
        assert_eq!(s.initial.allocation, vec![0.5, 0.5]);
    }

    #[test]
    fn negative_beta_names_field() {
        let text = BASE.replace("\"network_effect\": 0.001", "\"network_effect\": -1");
        let err = parse_scenario_str(&text).unwrap_err().to_string();
        assert!(err.contains("network_effect"), "{err}");
    }

    #[test]
    fn allocation_must_sum_to_one() {
        let err = parse_scenario_str(&with(r#""initial": {"allocation": [0.6, 0.5]}"#)).unwrap_err();
        assert!(err.to_string().contains("allocation does not sum to 1"));
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = BASE.replace("\"viewer_speed\"", "\"viewer_sped\": 1, \"viewer_speed\"");
        match parse_scenario_str(&text).unwrap_err() {
            ScenarioError::Schema { path, message, .. } => {
                assert!(path.starts_with("params"), "{path}");
                assert!(message.contains("viewer_sped"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn named_viewers() {
        let s = parse_scenario_str(&with(r#""initial": {"viewers": "uniform"}"#)).unwrap();
        assert_eq!(s.initial.viewers, vec![500.0, 500.0]);
    }

    #[test]
    fn perturbed_viewers() {
        let s = parse_scenario_str(&with(r#""initial": {"viewers": {"symmetric_perturbed": 0.01}}"#)).unwrap();
        assert_eq!(s.initial.viewers, vec![510.0, 490.0]);
    }

    #[test]
    fn cubic_cost() {
        let text = BASE.replace(r#"{"quadratic": {"kappa": 1}}"#, r#"{"cubic": {"a": 0.5, "b": 0.1}}"#);
        let s = parse_scenario_str(&text).unwrap();
        assert_eq!(s.params.cost, CostSpec::Cubic { a: 0.5, b: 0.1 });
    }
}
