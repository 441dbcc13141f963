use attention_market::allocation::{self, AllocationConfig};
use attention_market::dynamics::{self, IntegratorConfig};
use attention_market::equilibrium::{self, EquilibriumConfig};
use attention_market::market::{MarketParams, MarketState};
use attention_market::par;
use attention_market::stability;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn market(n: usize) -> (MarketParams, MarketState) {
    let mut p = MarketParams::symmetric(n, 1000.0, 0.05, 0.5, 0.5 * n as f64 / 1000.0).unwrap();
    p.attractiveness = (0..n).map(|i| 0.04 + 0.01 * (i % 3) as f64).collect();
    let s = MarketState::symmetric_start(&p);
    (p, s)
}

type Mapper = fn(&[usize], &(dyn Fn(&usize) -> f64 + Sync)) -> Vec<f64>;

fn seq(items: &[usize], f: &(dyn Fn(&usize) -> f64 + Sync)) -> Vec<f64> {
    par::map_sequential(items, f)
}

#[cfg(feature = "parallel")]
fn parl(items: &[usize], f: &(dyn Fn(&usize) -> f64 + Sync)) -> Vec<f64> {
    par::map_parallel(items, f)
}

fn mappers() -> Vec<(&'static str, Mapper)> {
    vec![
        ("sequential", seq as Mapper),
        #[cfg(feature = "parallel")]
        ("parallel", parl as Mapper),
    ]
}

fn uniqueness_probe(c: &mut Criterion) {
    let (p, s) = market(6);
    let starts = equilibrium::random_interior_starts(&p, &s, 32, 1);
    let idx: Vec<usize> = (0..starts.len()).collect();
    let cfg = EquilibriumConfig::default();
    let work = |k: &usize| equilibrium::solve_steady_state(&p, &starts[*k], &cfg).unwrap().state.viewers[0];
    let mut g = c.benchmark_group("uniqueness_probe");
    g.sample_size(10);
    for (name, m) in mappers() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &idx, |b, idx| b.iter(|| m(idx, &work)));
    }
    g.finish();
}

fn allocation_multistart(c: &mut Criterion) {
    let (p, s) = market(8);
    let starts = allocation::default_starts(8);
    let idx: Vec<usize> = (0..starts.len()).collect();
    let cfg = AllocationConfig::default();
    let work = |k: &usize| {
        let cfg = AllocationConfig { start: Some(starts[*k].clone()), ..cfg.clone() };
        allocation::optimize_allocation(&p, &s, &cfg).unwrap().welfare
    };
    let mut g = c.benchmark_group("allocation_multistart");
    for (name, m) in mappers() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &idx, |b, idx| b.iter(|| m(idx, &work)));
    }
    g.finish();
}

fn beta_sweep(c: &mut Criterion) {
    let (p, s) = market(4);
    let idx: Vec<usize> = (0..24).collect();
    let integ = IntegratorConfig::new(0.05, 20.0);
    let work = |k: &usize| {
        let mut q = p.clone();
        q.network_effect = *k as f64 * 0.0005;
        let end = dynamics::integrate(&q, &s, &integ, None).unwrap();
        let state = end.states.last().unwrap();
        stability::classify_stability(&q, state, &Default::default()).unwrap().max_real_part
    };
    let mut g = c.benchmark_group("beta_sweep");
    g.sample_size(10);
    for (name, m) in mappers() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &idx, |b, idx| b.iter(|| m(idx, &work)));
    }
    g.finish();
}

criterion_group!(benches, uniqueness_probe, allocation_multistart, beta_sweep);
criterion_main!(benches);
