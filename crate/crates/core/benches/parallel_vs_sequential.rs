use criterion::{criterion_group, criterion_main, Criterion};

use nanowire::conditioning::{detrend, whiten, DetrendMethod};
use nanowire::matched_filter::{filter_trace, BoxcarFilterSpec, PeakParams};
use nanowire::sim::{synthesize_trace, EventSpec, NoiseSpec};
use nanowire::xcorr::pairwise;
use nanowire::Trace;

fn trace(seed: u64) -> Trace {
    let events: Vec<EventSpec> = (0..40)
        .map(|k| EventSpec::binding(500.0 + 1000.0 * k as f64, 20.0, -20.0))
        .collect();
    synthesize_trace(&events, &NoiseSpec::white(2.0, seed), 40_000.0, 1.0).unwrap()
}

fn chain(t: &Trace) -> usize {
    let (d, _) = detrend(t, &DetrendMethod::histogram_default()).unwrap();
    let w = whiten(&d).unwrap();
    filter_trace(&w, &BoxcarFilterSpec::default(), &PeakParams::default())
        .unwrap()
        .events
        .len()
}

fn bench(c: &mut Criterion) {
    let t = trace(1);
    let wires: Vec<Trace> = (0..8).map(trace).collect();
    let mut group = c.benchmark_group("detect-40k");
    group.sample_size(10);
    group.bench_function("pool", |b| b.iter(|| chain(&t)));
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("single-thread", |b| b.iter(|| one.install(|| chain(&t))));
    }
    group.finish();

    let mut group = c.benchmark_group("xcorr-8-wires");
    group.sample_size(10);
    group.bench_function("pool", |b| b.iter(|| pairwise(&wires, 50).unwrap().len()));
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("single-thread", |b| {
            b.iter(|| one.install(|| pairwise(&wires, 50).unwrap().len()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
