//! The labelling of `K` alone decides the nesting: replacing the fitted `f`
//! by `h` itself on `K` (and the exterior constant on the rest of the lattice
//! skeleton) must reproduce every input tree.

use std::f64::consts::PI;

use nodal_core::cubeworld::{build_structure, Polarity};
use nodal_core::nodal::{decompose, nesting_tree, outer_interface, sign_grid_with, trees_isomorphic, Grid};
use nodal_core::perturb::{build_h, exterior_value};
use nodal_core::tree::{unordered_trees, RootedTree};

fn ideal_tree(tree: &RootedTree, polarity: Polarity) -> RootedTree {
    let asm = build_structure(tree, 3, polarity).unwrap();
    let spec = build_h(&asm).unwrap();
    let outside = exterior_value(polarity);
    let (lo, hi) = asm.root().structure.bbox();
    let lo: Vec<i64> = lo.iter().map(|v| v - 1).collect();
    let hi: Vec<i64> = hi.iter().map(|v| v + 2).collect();
    let grid = Grid::lattice_aligned(&lo, &hi, 0.25).unwrap();
    let on_skeleton = |x: &[f64]| spec.value_on_k(x).unwrap_or(outside);
    let sg = sign_grid_with(&grid, |x| {
        let u0: f64 = x.iter().map(|v| (PI * v).sin()).product();
        let off: Vec<f64> = x.iter().map(|v| (v - v.round()).abs()).collect();
        let h = match off.iter().filter(|d| **d < 1e-9).count() {
            0 => 0.0,
            // On a lattice face: continue `h` from the nearest edge.
            1 => {
                let k = (0..3).filter(|&k| off[k] > 1e-9).min_by(|&a, &b| off[a].total_cmp(&off[b])).unwrap();
                let mut y = x.to_vec();
                y[k] = y[k].round();
                on_skeleton(&y)
            }
            _ => on_skeleton(x),
        };
        u0 + 1e-3 * h
    });
    let dec = decompose(&sg);
    let cube = asm.predicted_domain(0).into_iter().next().unwrap();
    let centre: Vec<f64> = cube.iter().map(|&c| c as f64 + 0.5).collect();
    let root = dec.domain_at(&centre).unwrap();
    let iface = outer_interface(&dec, root).expect("root domain is enclosed");
    nesting_tree(&dec, iface).unwrap().tree
}

#[test]
fn ideal_signs_realize_small_trees() {
    for nodes in 1..=5 {
        for t in unordered_trees(nodes) {
            for p in [Polarity::Minus, Polarity::Plus] {
                let got = ideal_tree(&t, p);
                assert!(trees_isomorphic(&got, &t), "{t} ({p:?}) gave {got}");
            }
        }
    }
}
