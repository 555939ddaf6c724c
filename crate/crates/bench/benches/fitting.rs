use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rainrun_core::fit::{fit_mle, fit_stationary, FitOptions};
use rainrun_core::gev::{nll_stationary, GevParams};
use rainrun_core::link::{nll_linked, CovariateMask};
use rainrun_core::select::{build_ladder, select};
use rainrun_core::synthetic::{dataset_covariates, sample_iid_gev, sample_linked_gev, synthetic_dataset, Preset, SyntheticConfig};

fn linked_table(n_stations: usize) -> rainrun_core::BlockMaximaTable {
    let cfg = SyntheticConfig {
        n_stations,
        n_years: 30,
        model: Preset::Full.model(),
        ..SyntheticConfig::default()
    };
    let rows = dataset_covariates(&synthetic_dataset(&cfg).unwrap()).unwrap();
    sample_linked_gev(&cfg.model, &rows, 7).unwrap()
}

fn nll(c: &mut Criterion) {
    let params = GevParams::new(10.0, 2.0, 0.2).unwrap();
    let data = sample_iid_gev(&params, 10_000, 1).unwrap();
    c.bench_function("nll_stationary_10k", |b| b.iter(|| nll_stationary(black_box(&data), &params)));

    let table = linked_table(40);
    let model = Preset::Full.model();
    c.bench_function("nll_linked_1200_rows", |b| b.iter(|| nll_linked(black_box(&table), &model).unwrap()));
}

fn fits(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for n in [1_000usize, 10_000] {
        let data = sample_iid_gev(&GevParams::new(10.0, 2.0, 0.2).unwrap(), n, 2).unwrap();
        group.bench_with_input(BenchmarkId::new("stationary", n), &data, |b, d| {
            b.iter(|| fit_stationary(d, &FitOptions::default()).unwrap())
        });
    }
    let table = linked_table(20);
    group.bench_function("linked_full_600_rows", |b| {
        b.iter(|| fit_mle(&table, CovariateMask::FULL, None, &FitOptions::default()).unwrap())
    });
    group.bench_function("ladder_600_rows", |b| {
        b.iter(|| select(&table, &build_ladder(), &FitOptions::default()))
    });
    group.finish();
}

criterion_group!(benches, nll, fits);
criterion_main!(benches);
