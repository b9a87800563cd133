use nodal_core::cubeworld::{build_structure, Polarity};
use nodal_core::perturb::{
    assemble_u_eps, build_h, choose_epsilon, fit_eigenfunction, verify_local_gradient, EpsilonParams, FitParams,
};
use nodal_core::tree::RootedTree;

#[test]
fn nested_pair_fit_amplitude_and_transversality() {
    let asm = build_structure(&RootedTree::parse("[[]]").unwrap(), 3, Polarity::Minus).unwrap();
    let spec = build_h(&asm).unwrap();

    let (f600, r600) = fit_eigenfunction(&spec, &FitParams::default()).unwrap();
    let (_, r1200) = fit_eigenfunction(&spec, &FitParams { waves: 1200, ..FitParams::default() }).unwrap();
    eprintln!("N=600: {:?}\nN=1200: {:?}", r600, r1200);
    // Nested direction sets: the larger span contains the smaller one.
    assert!(r1200.achieved_sup_c1_error <= 1.05 * r600.achieved_sup_c1_error);
    assert_eq!(r600.target_met, r600.achieved_sup_c1_error <= 0.01);
    assert!(r600.sign_margin > 0.0 && r600.zero_count_mismatches == 0);

    let local = verify_local_gradient(&f600, &spec, 0.5);
    assert!(local.passed, "{local:?}");
    assert!(local.min_tangential.unwrap() > 0.5);

    let params = EpsilonParams { check_h: 0.02, ..EpsilonParams::default() };
    let choice = choose_epsilon(&f600, &asm, &params).unwrap();
    assert!(choice.tube_ratio >= 1.25 && choice.checked_points > 0, "{choice:?}");
    assert!((choice.epsilon - choice.delta * choice.delta / (4.0 * choice.sup_f)).abs() <= 1e-12 * choice.epsilon);
    let u = assemble_u_eps(&f600, choice.epsilon).unwrap();
    assert!(u.value(&[0.5, 0.5, 0.5]).is_finite());
}
