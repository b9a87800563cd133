use nodal_core::nodal::{ensemble_stats, EnsembleParams};

#[test]
fn planar_ensemble_components_are_loops() {
    let p = EnsembleParams { n: 2, samples: 200, radius: 50.0, seed: 7, ..EnsembleParams::default() };
    let s = ensemble_stats(&p).unwrap();
    eprintln!("{} components\n{}\n{}", s.components, s.topology.to_csv(), s.trees.to_csv().lines().take(8).collect::<Vec<_>>().join("\n"));
    assert!(s.components > 0);
    assert_eq!(s.irregular, 0);
    assert_eq!(s.topology.count("circle"), s.components);
    assert!(s.trees.bins.len() >= 3);
    assert_eq!(s.trees.bins[0].key, "()");
    let total: f64 = s.trees.bins.iter().map(|b| b.frequency).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn spatial_ensemble_prefers_spheres() {
    let p = EnsembleParams { n: 3, samples: 50, radius: 12.0, seed: 7, ..EnsembleParams::default() };
    let s = ensemble_stats(&p).unwrap();
    eprintln!("{} components irregular {}\n{}", s.components, s.irregular, s.topology.to_csv());
    // Report-only: compact components are rare in three dimensions at this
    // radius (the nodal set is dominated by percolating components).
    assert_eq!(s.irregular, 0);
    assert!(s.topology.count("0") >= s.topology.count("1"));
}
