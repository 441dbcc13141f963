//! Reference implementations written directly from the model equations,
//! independent of the library's own code paths.
#![allow(dead_code)]

use attention_market::{CostSpec, MarketParams, MarketState};
use rand::Rng;

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn cost(c: &CostSpec, q: f64) -> f64 {
    match *c {
        CostSpec::Quadratic { kappa } => 0.5 * kappa * q * q,
        CostSpec::Cubic { a, b } => a * q * q + b * q * q * q,
    }
}

pub fn cost_prime(c: &CostSpec, q: f64) -> f64 {
    match *c {
        CostSpec::Quadratic { kappa } => kappa * q,
        CostSpec::Cubic { a, b } => 2.0 * a * q + 3.0 * b * q * q,
    }
}

/// Utilities from raw vectors; no simplex or sign checks so finite differences can step anywhere.
pub fn utilities(p: &MarketParams, n: &[f64], q: &[f64], th: &[f64]) -> Vec<f64> {
    (0..n.len())
        .map(|i| p.attractiveness[i] * q[i] - p.price[i] + p.network_effect * n[i] + p.traffic_sensitivity * th[i])
        .collect()
}

pub fn shares(p: &MarketParams, n: &[f64], q: &[f64], th: &[f64]) -> Vec<f64> {
    softmax(&utilities(p, n, q, th))
}

/// `(ṅ, q̇)` under the gradient quality law.
pub fn drift(p: &MarketParams, n: &[f64], q: &[f64], th: &[f64]) -> Vec<f64> {
    let pr = shares(p, n, q, th);
    let m = p.total_viewers;
    let keep = (1.0 - p.platform_cut) * p.revenue_rate * m;
    let mut out: Vec<f64> = (0..n.len()).map(|i| p.viewer_speed * (m * pr[i] - n[i])).collect();
    out.extend((0..n.len()).map(|i| {
        p.quality_speed * (keep * p.attractiveness[i] * pr[i] * (1.0 - pr[i]) - cost_prime(&p.cost, q[i]))
    }));
    out
}

/// Welfare of the state `(n, q, θ)`: `M lse(V) + R Σn − Σc(q)`.
pub fn state_welfare(p: &MarketParams, n: &[f64], q: &[f64], th: &[f64]) -> f64 {
    p.total_viewers * lse(&utilities(p, n, q, th)) + p.revenue_rate * n.iter().sum::<f64>()
        - q.iter().map(|x| cost(&p.cost, *x)).sum::<f64>()
}

/// Static welfare with one-shot viewer response `n = M P(θ)` and base `(n, q)` in the utilities.
pub fn allocation_welfare(p: &MarketParams, base: &MarketState, th: &[f64]) -> f64 {
    let v = utilities(p, &base.viewers, &base.quality, th);
    let pr = softmax(&v);
    let m = p.total_viewers;
    m * lse(&v) + p.revenue_rate * m * pr.iter().sum::<f64>()
        - base.quality.iter().map(|x| cost(&p.cost, *x)).sum::<f64>()
}

pub fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `max |a − b| / max(|a|, |b|)` over all entries; zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |s, x| s.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).fold(0.0f64, |s, (x, y)| s.max((x - y).abs())) / scale
}

pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-3f64..1.0).ln()).collect();
    let s: f64 = w.iter().sum();
    let mut t: Vec<f64> = w.iter().map(|x| x / s).collect();
    let head: f64 = t[..n - 1].iter().sum();
    t[n - 1] = 1.0 - head;
    t
}

pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> (MarketParams, MarketState) {
    let m = 10f64.powf(rng.gen_range(2.0..4.0));
    let mut p = MarketParams::symmetric(n, m, 0.05, 0.0, 0.0).unwrap();
    p.attractiveness = (0..n).map(|_| rng.gen_range(0.01..0.1)).collect();
    p.price = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
    p.network_effect = rng.gen_range(0.0..3.0) * n as f64 / m;
    p.viewer_speed = rng.gen_range(0.5..2.0);
    p.quality_speed = rng.gen_range(0.1..2.0);
    p.platform_cut = rng.gen_range(0.0..0.5);
    p.revenue_rate = rng.gen_range(0.5..2.0);
    p.traffic_sensitivity = rng.gen_range(0.0..2.0);
    p.discount_rate = rng.gen_range(0.01..0.5);
    p.cost = if rng.gen_bool(0.5) {
        CostSpec::Quadratic { kappa: rng.gen_range(0.5..2.0) }
    } else {
        CostSpec::Cubic { a: rng.gen_range(0.2..1.0), b: rng.gen_range(0.001..0.05) }
    };
    p.validate().unwrap();
    let w = random_simplex(rng, n);
    let viewers = w.iter().map(|x| x * m).collect();
    let quality = (0..n).map(|_| rng.gen_range(0.5..20.0)).collect();
    let s = MarketState::new(viewers, quality, random_simplex(rng, n)).unwrap();
    (p, s)
}

/// Classic RK4 with a fixed step for `ẏ = f(y)`.
pub fn rk4<F: Fn(&[f64]) -> Vec<f64>>(f: &F, y: &[f64], h: f64) -> Vec<f64> {
    let add = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, z)| x + s * z).collect() };
    let k1 = f(y);
    let k2 = f(&add(y, 0.5 * h, &k1));
    let k3 = f(&add(y, 0.5 * h, &k2));
    let k4 = f(&add(y, h, &k3));
    (0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}
