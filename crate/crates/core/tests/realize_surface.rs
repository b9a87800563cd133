use std::f64::consts::PI;

use nodal_core::realize::{realize_component, RealizeComponentParams, Shape, VoxelDomain};

#[test]
fn ball_realizes_a_sphere() {
    let d = VoxelDomain::from_shape(&Shape::Ball { radius: 1.0 }, 0.05).unwrap();
    let r = realize_component(&d, &RealizeComponentParams::default()).unwrap();
    eprintln!("{:#?}", r.report);
    assert!((r.report.eigenvalue - PI * PI).abs() < 0.01 * PI * PI);
    assert_eq!(r.topology.genus, Some(0));
    assert!(r.report.genus_stable && r.report.within_shell && r.report.passed);
    // sin|x|/|x| vanishes on the sphere of radius π.
    let max_r = r.component.cells.iter().flat_map(|&c| r.mesh.cells[c].iter()).map(|&v| {
        r.mesh.vertices[v as usize].iter().map(|x| x * x).sum::<f64>().sqrt()
    });
    let (lo, hi) = max_r.fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    assert!((lo - PI).abs() < 0.1 && (hi - PI).abs() < 0.1, "{lo} {hi}");
}

#[test]
fn solid_torus_realizes_a_torus() {
    let d = VoxelDomain::from_shape(&Shape::Torus { major: 2.0, minor: 0.8 }, 0.05).unwrap();
    let r = realize_component(&d, &RealizeComponentParams::default()).unwrap();
    eprintln!("{:#?}", r.report);
    assert_eq!(r.topology.genus, Some(1));
    assert!(r.report.genus_stable && r.report.within_shell && r.report.passed);
}

#[test]
fn cube_eigenvalue_converges_at_second_order() {
    let lam = |h: f64| {
        let d = VoxelDomain::from_shape(&Shape::Cube { side: 1.0 }, h).unwrap();
        nodal_core::realize::dirichlet_ground_state(&d, 1e-8).unwrap().eigenvalue
    };
    let (a, b, c) = (lam(0.1), lam(0.05), lam(0.025));
    let ratio = (a - b).abs() / (b - c).abs();
    assert!((ratio - 4.0).abs() < 0.3 * 4.0, "ratio {ratio}");
    assert!((c - 3.0 * PI * PI).abs() < 0.01 * 3.0 * PI * PI);
}
