//! Sequential vs rayon execution of the data-parallel loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpple::bands::{band_cumhaz, BandRequest, BandTarget};
use mpple::simulation::THETAS;
use mpple::{analyze, generate_dataset, run_study, Exec, ScenarioConfig, StudyConfig, TermGrammar};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bands(c: &mut Criterion) {
    let cfg = ScenarioConfig::new(1, 1000, THETAS[0]).unwrap();
    let ds = generate_dataset(&cfg, 0).unwrap();
    let g = TermGrammar::parse(&["1", "t", "z1", "z2"], ds.covariate_names(), &[]).unwrap();
    let an = analyze(&ds, &g, Exec::Sequential).unwrap();
    let req = BandRequest::new(BandTarget::Cumhaz, 0);
    let mut group = c.benchmark_group("multiplier_band_n1000_B1000");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(band_cumhaz(&an.influence, &req, exec).unwrap()))
        });
    }
    group.finish();
}

fn study(c: &mut Criterion) {
    let mut sc = ScenarioConfig::new(1, 400, THETAS[0]).unwrap();
    sc.replicates = 50;
    let cfg = StudyConfig::new(sc);
    let mut group = c.benchmark_group("study_n400_50_replicates");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| black_box(run_study(&cfg, exec).unwrap())));
    }
    group.finish();
}

fn fit(c: &mut Criterion) {
    let cfg = ScenarioConfig::new(1, 6657, THETAS[1]).unwrap();
    let ds = generate_dataset(&cfg, 0).unwrap();
    let g = TermGrammar::parse(&["1", "t", "z1", "z2"], ds.covariate_names(), &[]).unwrap();
    let mut group = c.benchmark_group("analyze_n6657");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| black_box(analyze(&ds, &g, exec).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, bands, study, fit);
criterion_main!(benches);
