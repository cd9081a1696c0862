use bnpmfa::sampler::GibbsSampler;
use bnpmfa::{HyperParams, PriorConfig};
use bnpmfa_bench::{dataset, start_state, Q};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn sweep(c: &mut Criterion, group: &str, sizes: &[(usize, usize)], label: impl Fn(usize, usize) -> usize) {
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    for &(m, p) in sizes {
        let ds = dataset(m, p);
        let hyper = HyperParams::new(Q);
        let prior = PriorConfig::mfm(1.0).with_mrf(1.0);
        let sampler = GibbsSampler::new(&ds.x, &ds.graph, &prior, &hyper, 1).unwrap();
        let mut state = start_state(&ds);
        let mut it = 0;
        g.bench_with_input(BenchmarkId::from_parameter(label(m, p)), &(), |b, _| {
            b.iter(|| {
                it += 1;
                sampler.sweep(&mut state, it).unwrap();
            })
        });
    }
    g.finish();
}

fn by_spots(c: &mut Criterion) {
    sweep(
        c,
        "sweep_vs_n",
        &[(10, 200), (15, 200), (20, 200), (25, 200)],
        |m, _| m * m,
    );
}

fn by_genes(c: &mut Criterion) {
    sweep(c, "sweep_vs_p", &[(20, 100), (20, 200), (20, 400), (20, 800)], |_, p| p);
}

criterion_group!(benches, by_spots, by_genes);
criterion_main!(benches);
