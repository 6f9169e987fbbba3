use std::hint::black_box;

use cdvgae::autodiff::{GradProblem, Objective};
use cdvgae::graph::graph_domain_neighbors;
use cdvgae::model::{Encoder, Noise};
use cdvgae::synthetic::planted_config;
use cdvgae::train::{ReconstructionTarget, ValidationPairs};
use cdvgae::{build_graph, fit, generate, HeteroGraph, ModelParams, PlantedSpec, ProtocolConfig, SeededRng};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn setup(n: usize) -> (HeteroGraph, Encoder, ModelParams, ProtocolConfig) {
    let spec = PlantedSpec::new(n, n, n / 2, 0.15, 0.9, 64, 0.05, 0);
    let planted = generate(&spec).unwrap();
    let cfg = planted_config(&spec);
    let graph = build_graph(
        &planted.dataset,
        planted.dataset.source.relations.pairs(),
        &planted.embeddings,
        &cfg.graph,
    )
    .unwrap();
    let map = graph_domain_neighbors(&graph, cfg.train.dn_keep_fraction, cfg.graph.dn_scope).unwrap();
    let encoder = Encoder::for_graph(&graph, &map, &cfg.train.encoder_options()).unwrap();
    let (h1, h2) = cfg.train.hidden;
    let params = ModelParams::init(spec.feature_dim, h1, h2, &mut SeededRng::new(0));
    (graph, encoder, params, cfg)
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256, 512] {
        let mut rng = SeededRng::new(1);
        let a = rng.normal_matrix(n, n);
        let b = rng.normal_matrix(n, 32);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    group.finish();
}

fn encoder_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder_forward");
    for n in [50, 200] {
        let (_, encoder, params, _) = setup(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(encoder.encode(&params, Noise::Mean).unwrap()))
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_gradients");
    for n in [50, 200] {
        let (graph, encoder, params, _) = setup(n);
        let ns = graph.nodes().n_source();
        let target = ReconstructionTarget::from_adjacency(graph.acs(), None).unwrap();
        let latent = params.latent_dim();
        let problem = GradProblem::new(
            encoder,
            0..ns,
            Objective::Reconstruction(target),
            1.0 / graph.nodes().len() as f64,
            latent,
            0,
            true,
        );
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(problem.gradients(&params).unwrap()))
        });
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("training_epoch");
    group.sample_size(20);
    for n in [50, 200] {
        let (graph, _, _, cfg) = setup(n);
        let map = graph_domain_neighbors(&graph, cfg.train.dn_keep_fraction, cfg.graph.dn_scope).unwrap();
        let mut train = cfg.train.clone();
        train.epochs = 1;
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(fit(&graph, &map, &ValidationPairs::default(), &train).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, encoder_forward, backward, training_epoch);
criterion_main!(benches);
