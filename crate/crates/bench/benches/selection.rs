use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use cvgmm_core::conduct::{solve_equilibrium_prices, MarketPrimitives, Partition};
use cvgmm_core::iv_lab::{build_candidates, generate_iv_data, IvDesign};
use cvgmm_core::selection::{cross_validate, CvConfig};
use cvgmm_core::{estimate, MomentModel, OptimizerConfig, WeightingSpec};

fn iv_design(t: usize) -> IvDesign {
    IvDesign {
        t,
        p2: 9,
        seed: 7,
        ..IvDesign::default()
    }
}

fn bench_estimate(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate");
    for t in [200, 1600] {
        let design = iv_design(t);
        let data = generate_iv_data(&design, 0).to_dataset().unwrap();
        let (_, wide) = build_candidates(design.p1, design.p2, design.c1, design.c2);
        for (label, opt) in [("polish", OptimizerConfig::polish_only()), ("multistart", OptimizerConfig::default())] {
            group.bench_with_input(BenchmarkId::new(label, t), &data, |b, data| {
                b.iter(|| estimate(&wide, black_box(data), &WeightingSpec::InverseInstrumentGram, &opt).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_cross_validate(c: &mut Criterion) {
    let mut group = c.benchmark_group("cross_validate");
    for (r, k) in [(2, 1), (5, 4)] {
        let design = iv_design(400);
        let data = generate_iv_data(&design, 0).to_dataset().unwrap();
        let (m1, m2) = build_candidates(design.p1, design.p2, design.c1, design.c2);
        let models: [&dyn MomentModel; 2] = [&m1, &m2];
        let cfg = CvConfig {
            r,
            k,
            optimizer: OptimizerConfig::polish_only(),
            ..CvConfig::default()
        };
        group.bench_function(BenchmarkId::new("iv-T400", format!("r{r}k{k}")), |b| {
            b.iter(|| cross_validate(&models, black_box(&data), &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_equilibrium(c: &mut Criterion) {
    let m = MarketPrimitives {
        base_utility: DVector::from_vec(vec![2.0, 1.5, 1.0]),
        marginal_cost: DVector::from_vec(vec![1.0, 1.2, 0.8]),
        alpha: -0.3,
        market_size: 1.0,
    };
    let mut group = c.benchmark_group("equilibrium");
    for spec in ["{1}{2}{3}", "{1,2}{3}", "{1,2,3}"] {
        let part = Partition::parse(spec).unwrap();
        group.bench_function(spec, |b| b.iter(|| solve_equilibrium_prices(&part, black_box(&m)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_estimate, bench_cross_validate, bench_equilibrium);
criterion_main!(benches);
