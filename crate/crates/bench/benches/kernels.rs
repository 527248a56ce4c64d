use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use equirate::domain::{make_design, CompactDomain, DesignKind, MeasureQ};
use equirate::equipartition::{log_ratio_any, simulate};
use equirate::function::RegressionFunction;
use equirate::gp::{CoefficientPrior, FeatureKind, GpSpec, Kernel, SigmaPrior};
use equirate::klrate::{kl_rate, Theta, TrueModel};
use equirate::noise::NoiseFamily;
use equirate::posterior::{mcmc_posterior, predictive_distance, ChainConfig, Mixture, ModelPrior, DEFAULT_Y_POINTS};

fn setting(family: NoiseFamily) -> (TrueModel, MeasureQ, Theta) {
    let d = CompactDomain::unit(1);
    let q = MeasureQ::uniform(d.clone());
    let truth = TrueModel::new(RegressionFunction::sinusoid(d.clone(), 0, 1.0, 1.0).unwrap(), 0.5, family).unwrap();
    let theta = Theta::new(truth.eta0().shifted(0.3), 0.8).unwrap();
    (truth, q, theta)
}

fn kl_rates(c: &mut Criterion) {
    let mut g = c.benchmark_group("kl_rate");
    for (name, truth_family, post) in [
        ("normal", NoiseFamily::Normal, NoiseFamily::Normal),
        ("laplace", NoiseFamily::Laplace, NoiseFamily::Laplace),
        ("cross", NoiseFamily::Laplace, NoiseFamily::Normal),
        ("logistic", NoiseFamily::from_name("logistic").unwrap(), NoiseFamily::from_name("logistic").unwrap()),
    ] {
        let (truth, q, theta) = setting(truth_family);
        g.bench_function(name, |b| b.iter(|| kl_rate(black_box(&theta), &post, &truth, &q).unwrap()));
    }
    g.finish();
}

fn log_ratios(c: &mut Criterion) {
    let (truth, q, theta) = setting(NoiseFamily::Normal);
    let mut g = c.benchmark_group("log_ratio");
    for n in [1_000usize, 50_000] {
        let design = make_design(&q, DesignKind::IidFromQ { seed: 1 }, n).unwrap();
        let ds = simulate(&truth, &design, 2).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &ds, |b, ds| {
            b.iter(|| log_ratio_any(black_box(ds), &theta, &NoiseFamily::Normal, &truth).unwrap())
        });
    }
    g.finish();
}

fn sampler(c: &mut Criterion) {
    let (truth, q, _) = setting(NoiseFamily::Normal);
    let spec = GpSpec::centered(CompactDomain::unit(1), Kernel::matern(2.5, 1.0, 0.1).unwrap()).unwrap();
    let prior = ModelPrior {
        coefficients: CoefficientPrior::from_spec(&spec, 32, FeatureKind::Cosine).unwrap(),
        sigma: SigmaPrior::default(),
    };
    let design = make_design(&q, DesignKind::IidFromQ { seed: 3 }, 2000).unwrap();
    let ds = simulate(&truth, &design, 4).unwrap();
    let chain = ChainConfig {
        length: 5_000,
        burnin: 500,
        thin: 10,
        step: 1.0,
    };
    let mut g = c.benchmark_group("mcmc");
    g.sample_size(10);
    g.bench_function("k32_n2000", |b| b.iter(|| mcmc_posterior(&prior, &ds, &NoiseFamily::Normal, chain, 5).unwrap()));
    g.finish();
}

fn predictive(c: &mut Criterion) {
    let (truth, _, _) = setting(NoiseFamily::Normal);
    let mix = Mixture {
        family: NoiseFamily::Normal,
        components: (0..200).map(|i| (0.01 * i as f64, 0.5 + 0.001 * i as f64, 1.0 / 200.0)).collect(),
    };
    let mut g = c.benchmark_group("predictive");
    g.sample_size(10);
    g.bench_function("hellinger_200", |b| {
        b.iter(|| predictive_distance(&truth, &[0.25], black_box(&mix), 0, DEFAULT_Y_POINTS).unwrap())
    });
    g.finish();
}

criterion_group!(benches, kl_rates, log_ratios, sampler, predictive);
criterion_main!(benches);
