use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ccindex::estimators::{estimate_all, Estimator, NaiveOptions, Variant};
use ccindex::exec::Exec;
use ccindex::nuisance::{fit_nuisance, LinearLearner, NuisanceOptions};
use ccindex::simulation::{generate, DgpConfig};

fn full_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_and_estimate");
    group.sample_size(10);
    for n in [300usize, 600] {
        let sim = generate(&DgpConfig::new(n, 7)).unwrap();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let mut opts = NuisanceOptions::default();
            opts.irls.exec = exec;
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), n), &opts, |b, opts| {
                b.iter(|| {
                    let fits = fit_nuisance(&sim.data, &sim.covariates, Arc::new(LinearLearner), opts).unwrap();
                    estimate_all(&fits, &[Estimator::OneStep, Estimator::EstEq], Variant::A1, 0, 0.95, &NaiveOptions::default())
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, full_fit);
criterion_main!(benches);
