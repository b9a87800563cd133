use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nodal_core::cubeworld::{build_structure, engulf, CubeStructure, Polarity};
use nodal_core::eigenfield::{sample_rpw, FieldSampleParams};
use nodal_core::nodal::{decompose, marching_simplices, mesh_components, sign_grid, Grid};
use nodal_core::realize::{dirichlet_ground_state, Shape, VoxelDomain};
use nodal_core::tree::{ordered_trees, RootedTree};

fn fields(c: &mut Criterion) {
    let f = sample_rpw(&FieldSampleParams::monochromatic(3, 256, 1)).unwrap();
    let g = Grid::covering(&[-4.0; 3], &[4.0; 3], 0.2).unwrap();
    c.bench_function("sign_grid 41^3, 256 waves", |b| b.iter(|| sign_grid(black_box(&f), &g).unwrap()));
    let sg = sign_grid(&f, &g).unwrap();
    c.bench_function("marching_simplices 41^3", |b| {
        b.iter(|| mesh_components(&marching_simplices(black_box(&sg)).unwrap()))
    });
    c.bench_function("decompose 41^3", |b| b.iter(|| decompose(black_box(&sg))));
}

fn combinatorics(c: &mut Criterion) {
    c.bench_function("engulf twice, n = 3", |b| {
        b.iter(|| engulf(&engulf(&CubeStructure::single(black_box(vec![0, 0, 0]))).unwrap()).unwrap())
    });
    let t = RootedTree::parse("[[[],[]],[]]").unwrap();
    c.bench_function("build_structure 5 nodes", |b| b.iter(|| build_structure(black_box(&t), 3, Polarity::Minus).unwrap()));
    let trees = ordered_trees(7);
    c.bench_function("canonical form, 132 trees", |b| {
        b.iter(|| trees.iter().map(|t| t.canonical().len()).sum::<usize>())
    });
}

fn eigenvalue(c: &mut Criterion) {
    let d = VoxelDomain::from_shape(&Shape::Ball { radius: 1.0 }, 0.1).unwrap();
    let mut g = c.benchmark_group("dirichlet");
    g.sample_size(10);
    g.bench_function("ball h = 0.1", |b| b.iter(|| dirichlet_ground_state(black_box(&d), 1e-6).unwrap()));
    g.finish();
}

criterion_group!(benches, fields, combinatorics, eigenvalue);
criterion_main!(benches);
