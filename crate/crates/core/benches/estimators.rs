use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fans::datasets::{gen_planted_sparse, DataKind, PlantedSpec};
use fans::model::{fit_mlp, ArchSpec, Mlp, ScalarReadout, TrainConfig};
use fans::optimize::{smooth_objective, OptimizeConfig};
use fans::parallel;
use fans::perturb::{Baseline, DimSubset, RelaxedMask};
use fans::pns::{attribution_for_subset, AttributionConfig, Problem};
use fans::sir::{compute_weights, EventParams, SampleSet};
use fans::Side;

struct Fixture {
    model: Mlp,
    samples: SampleSet,
    target: Vec<f64>,
    baseline: Baseline,
}

fn fixture(n: usize, d: usize) -> Fixture {
    let task = gen_planted_sparse(PlantedSpec::new(n, d, 3), 0).unwrap();
    let model = fit_mlp(&task.dataset, &ArchSpec::logistic(), &TrainConfig::default(), 0).unwrap();
    Fixture {
        model,
        target: task.dataset.inputs[0].clone(),
        samples: SampleSet::new(task.dataset.inputs).unwrap(),
        baseline: Baseline::zeros(d),
    }
}

/// Runs `f` once on the rayon pool and once with the sequential fallback.
fn both<F: Fn()>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| {
        b.iter(|| parallel::sequential(&f))
    });
    g.finish();
}

fn benches(c: &mut Criterion) {
    let fx = fixture(1000, 20);
    let problem = Problem::new(&fx.model, &fx.target, &fx.samples, &fx.baseline, ScalarReadout::new(0)).unwrap();
    let s = DimSubset::new(vec![0, 1, 2], 20).unwrap();

    let ctx = fans::sir::WeightContext {
        model: &fx.model,
        target: &fx.target,
        baseline: &fx.baseline,
        readout: ScalarReadout::new(0),
        phi: 0.5,
    };
    let ev = EventParams::new(s.clone(), 2.0, 0.05).unwrap();
    both(c, "compute_weights", || {
        black_box(compute_weights(&ctx, &ev, &fx.samples, Side::Sufficiency, 8, 1).unwrap());
    });

    let cfg = AttributionConfig {
        resample_size: 64,
        ..AttributionConfig::new(2.0, 0.05)
    };
    both(c, "attribution_for_subset", || {
        black_box(attribution_for_subset(&problem, &s, &cfg).unwrap());
    });

    let ocfg = OptimizeConfig {
        resample_size: 16,
        ..OptimizeConfig::for_kind(DataKind::Tabular)
    };
    let mask = RelaxedMask::filled(20, 0.5);
    both(c, "smooth_objective", || {
        black_box(smooth_objective(&mask, &problem, 2.0, 0.05, &ocfg, 0).unwrap());
    });
}

criterion_group!(estimators, benches);
criterion_main!(estimators);
