use std::hint::black_box;

use cprgcn::geometry::{graph_features, prepare_tree, GeometryParams};
use cprgcn::harness::desk_model;
use cprgcn::model::{normalize_adjacency, CprGcnModel, TreeInput};
use cprgcn_bench::sample_trees;
use criterion::{criterion_group, criterion_main, Criterion};

fn geometry(c: &mut Criterion) {
    let spec = cprgcn::cohort::CohortSpec { trees: 1, ..Default::default() };
    let tree = cprgcn::cohort::generate_cohort_tree(&spec, 0).unwrap().tree;
    let params = GeometryParams::default();
    c.bench_function("prepare_tree_and_features", |b| {
        b.iter(|| {
            let g = prepare_tree(black_box(&tree.centerlines.branches), &params).unwrap();
            black_box(graph_features(&g))
        })
    });
}

fn model(c: &mut Criterion) {
    let trees = sample_trees(8);
    let refs: Vec<&TreeInput> = trees.iter().collect();
    let model = CprGcnModel::new(desk_model(), 0).unwrap();
    c.bench_function("normalize_adjacency", |b| {
        b.iter(|| black_box(normalize_adjacency(&trees[0].adjacency, true).unwrap()))
    });
    c.bench_function("predict_one_tree", |b| b.iter(|| black_box(model.predict(&trees[0]).unwrap())));
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("loss_and_gradients_batch8", |b| {
        b.iter(|| black_box(model.loss_and_gradients(&refs).unwrap().0))
    });
    group.finish();
}

criterion_group!(benches, geometry, model);
criterion_main!(benches);
