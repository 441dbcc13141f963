//! Parameter grids over one or two parameters with long-format results.
//!
//! Each cell integrates the dynamics from the scenario's initial state, polishes
//! the endpoint into a steady state and records the requested metrics. Cells are
//! independent and run through [`crate::par::map`]; rows come back in grid order.

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, IntegratorConfig};
use crate::equilibrium::{self, EquilibriumConfig};
use crate::error::{MarketError, Result};
use crate::market::{CostSpec, MarketParams, MarketState};
use crate::par;
use crate::stability::{self, StabilityConfig};
use crate::welfare::WelfareBreakdown;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Hhi,
    MaxReLambda,
    Welfare,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Hhi => "hhi",
            Metric::MaxReLambda => "max_re_lambda",
            Metric::Welfare => "welfare",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValues {
    List(Vec<f64>),
    Linspace { start: f64, stop: f64, points: usize },
}

impl AxisValues {
    pub fn values(&self) -> Vec<f64> {
        match self {
            AxisValues::List(v) => v.clone(),
            AxisValues::Linspace { start, stop, points } => match points {
                0 => Vec::new(),
                1 => vec![*start],
                k => (0..*k).map(|i| start + (stop - start) * i as f64 / (k - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: AxisValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<SweepAxis>,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<Metric>,
    /// Simulation used to reach each cell's attractor; defaults to `50/γ` with step `0.01/γ`.
    #[serde(default)]
    pub integrator: Option<IntegratorConfig>,
}

fn all_metrics() -> Vec<Metric> {
    vec![Metric::Hhi, Metric::MaxReLambda, Metric::Welfare]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub coords: Vec<f64>,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub params: Vec<String>,
    pub rows: Vec<SweepRow>,
    /// Cells whose steady-state polish did not converge; their metrics after HHI are NaN.
    pub unconverged: usize,
}

pub fn set_param(params: &mut MarketParams, name: &str, value: f64) -> Result<()> {
    let n = params.n_streamers;
    match name {
        "network_effect" => params.network_effect = value,
        "total_viewers" => params.total_viewers = value,
        "viewer_speed" => params.viewer_speed = value,
        "quality_speed" => params.quality_speed = value,
        "platform_cut" => params.platform_cut = value,
        "revenue_rate" => params.revenue_rate = value,
        "traffic_sensitivity" => params.traffic_sensitivity = value,
        "discount_rate" => params.discount_rate = value,
        "attractiveness" => params.attractiveness = vec![value; n],
        "price" => params.price = vec![value; n],
        "kappa" => params.cost = CostSpec::Quadratic { kappa: value },
        _ => return Err(MarketError::InvalidArgument(format!("cannot sweep `{name}`"))),
    }
    Ok(())
}

fn grid(cfg: &SweepConfig) -> Result<Vec<Vec<f64>>> {
    if cfg.axes.is_empty() || cfg.axes.len() > 2 {
        return Err(MarketError::InvalidArgument("a sweep takes one or two axes".into()));
    }
    let mut cells: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &cfg.axes {
        let vals = axis.values.values();
        if vals.is_empty() {
            return Err(MarketError::InvalidArgument(format!("axis `{}` has no values", axis.param)));
        }
        cells = cells
            .into_iter()
            .flat_map(|c| vals.iter().map(move |v| [c.clone(), vec![*v]].concat()))
            .collect();
    }
    Ok(cells)
}

struct Cell {
    hhi: f64,
    max_re: f64,
    welfare: f64,
    converged: bool,
}

fn evaluate(params: &MarketParams, initial: &MarketState, integ: &IntegratorConfig) -> Result<Cell> {
    params.validate()?;
    let traj = dynamics::integrate(params, initial, integ, None)?;
    let hhi = *traj.hhi.last().expect("trajectory has samples");
    let eq = equilibrium::solve_steady_state(params, traj.final_state(), &EquilibriumConfig::default())?;
    if !eq.converged {
        return Ok(Cell { hhi, max_re: f64::NAN, welfare: f64::NAN, converged: false });
    }
    let st = stability::classify_stability(params, &eq.state, &StabilityConfig::default())?;
    let w = WelfareBreakdown::evaluate(params, &eq.state)?;
    Ok(Cell { hhi, max_re: st.max_real_part, welfare: w.total, converged: true })
}

pub fn run_sweep(params: &MarketParams, initial: &MarketState, cfg: &SweepConfig) -> Result<SweepResult> {
    let cells = grid(cfg)?;
    let mut variants = Vec::with_capacity(cells.len());
    for c in &cells {
        let mut p = params.clone();
        for (axis, v) in cfg.axes.iter().zip(c) {
            set_param(&mut p, &axis.param, *v)?;
        }
        p.validate()?;
        variants.push(p);
    }
    let integ = match &cfg.integrator {
        Some(i) => i.clone(),
        None => IntegratorConfig::new(0.01 / params.viewer_speed, 50.0 / params.viewer_speed)
            .with_record_every(usize::MAX),
    };
    let results = par::map(&variants, |p| {
        let mut start = initial.clone();
        if (start.total_viewers() - p.total_viewers).abs() > 1e-9 * p.total_viewers {
            let scale = p.total_viewers / start.total_viewers();
            start.viewers.iter_mut().for_each(|n| *n *= scale);
        }
        evaluate(p, &start, &integ)
    });
    let mut rows = Vec::new();
    let mut unconverged = 0;
    for (coords, r) in cells.into_iter().zip(results) {
        let cell = r?;
        if !cell.converged {
            unconverged += 1;
        }
        for m in &cfg.metrics {
            let value = match m {
                Metric::Hhi => cell.hhi,
                Metric::MaxReLambda => cell.max_re,
                Metric::Welfare => cell.welfare,
            };
            rows.push(SweepRow { coords: coords.clone(), metric: *m, value });
        }
    }
    Ok(SweepResult { params: cfg.axes.iter().map(|a| a.param.clone()).collect(), rows, unconverged })
}
