//! Parallel against sequential execution on a generated corpus: decomposition
//! plus automaton construction, then a few EM iterations.

use am_decomp::algebra::{default_sources, gen_random_tree, GeneratorConfig};
use am_decomp::automata::{binarize, build_automaton, TreeAutomaton};
use am_decomp::blobs::BlobHeuristics;
use am_decomp::decompose::{decompose, DecomposeOptions};
use am_decomp::graph::SemanticGraph;
use am_decomp::par::{self, Exec};
use am_decomp::training::{em_fit, EmConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const GRAPHS: u64 = 200;

fn corpus() -> Vec<SemanticGraph> {
    let cfg = GeneratorConfig {
        max_nodes: 12,
        ..Default::default()
    };
    (0..GRAPHS)
        .map(|s| gen_random_tree(&cfg, s).unwrap().evaluate().unwrap())
        .collect()
}

fn automata(exec: Exec, graphs: &[SemanticGraph]) -> Vec<TreeAutomaton> {
    let heur = BlobHeuristics::default();
    let opts = DecomposeOptions::default();
    let sources = default_sources(3);
    par::map(exec, graphs, |g| {
        let t = decompose(g, &heur, &opts).ok()?;
        Some(build_automaton(&binarize(&t).ok()?, &sources))
    })
    .into_iter()
    .flatten()
    .collect()
}

fn modes() -> [(&'static str, Exec); 2] {
    [
        ("parallel", Exec::Parallel),
        ("sequential", Exec::Sequential),
    ]
}

fn bench_build(c: &mut Criterion) {
    let graphs = corpus();
    let mut group = c.benchmark_group("decompose+automata");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| automata(exec, &graphs))
        });
    }
    group.finish();
}

fn bench_em(c: &mut Criterion) {
    let autos = automata(Exec::Parallel, &corpus());
    let mut group = c.benchmark_group("em-5-iterations");
    group.sample_size(10);
    for (name, exec) in modes() {
        let cfg = EmConfig {
            iterations: 5,
            exec,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| em_fit(&autos, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_build, bench_em);
criterion_main!(benches);
