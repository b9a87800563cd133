//! Choosing the perturbation amplitude and checking the zeros of `h`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EdgeRule, PerturbationSpec};
use crate::cubeworld::{Cube, StructureAssembly};
use crate::eigenfield::EigenField;
use crate::error::{Error, Result};
use crate::nodal::Grid;

/// `u_ε = u₀ + ε f`.
pub fn assemble_u_eps(f: &EigenField, epsilon: f64) -> Result<EigenField> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::domain(format!("amplitude {epsilon} must be finite and nonnegative")));
    }
    EigenField::affine(EigenField::ProductSines { n: f.dim() }, f.clone(), epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonParams {
    /// First tube width of the scan; each further step halves it.
    pub delta_start: f64,
    pub halvings: usize,
    /// Spacing of the lattice-aligned check grid.
    pub check_h: f64,
    /// Relative slack every check point must clear.
    pub margin: f64,
    /// Optional cap on `ε ‖f‖_∞`, e.g. to keep `u₀` dominant at the first
    /// off-lattice samples of a sign grid.
    pub max_amplitude: Option<f64>,
}

impl Default for EpsilonParams {
    fn default() -> Self {
        Self {
            delta_start: 0.2,
            halvings: 6,
            check_h: 0.05,
            margin: 0.25,
            max_amplitude: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonChoice {
    pub delta: f64,
    pub epsilon: f64,
    /// `ε = c₁ δ²`.
    pub c1: f64,
    /// `‖f‖_∞` over the check points in `C_∅`.
    pub sup_f: f64,
    /// Smallest of `max(|u₀| / ε|f|, ‖∇u₀‖ / ε‖∇f‖)` over the check points
    /// outside the tube. Above one, `u_ε` either has no zero there or its
    /// zero set is a graph over a cube face.
    pub tube_ratio: f64,
    pub checked_points: usize,
    /// Tube widths tried before `delta`, largest first.
    pub rejected: Vec<f64>,
}

/// Scans `δ = δ₀, δ₀/2, …` and returns the largest width whose
/// `ε = δ² / (4 ‖f‖_∞)` passes the tube check on `C_∅`.
///
/// Outside the tube `u₀` vanishes only on the cube faces, and there its
/// normal derivative does not. A check point passes when `|u₀|` beats
/// `ε|f|`, or `‖∇u₀‖` beats `ε‖∇f‖`, by the factor `1 + margin`.
pub fn choose_epsilon(f: &EigenField, asm: &StructureAssembly, params: &EpsilonParams) -> Result<EpsilonChoice> {
    let n = asm.n;
    if f.dim() != n {
        return Err(Error::domain(format!("field dimension {} vs structure dimension {n}", f.dim())));
    }
    if !(params.delta_start > 0.0 && params.delta_start <= 0.5) {
        return Err(Error::domain("tube width must lie in (0, 1/2]"));
    }
    let cubes = &asm.root().structure.cubes;
    let (lo, hi) = asm.root().structure.bbox();
    let hi: Vec<i64> = hi.iter().map(|v| v + 1).collect();
    let grid = Grid::lattice_aligned(&lo, &hi, params.check_h)?;
    let fv = f.evaluate_grid(&grid.axes());

    // (flat index, distance to K, |u₀|) for every check point in C_∅.
    let points: Vec<(usize, f64, f64)> = (0..grid.len())
        .into_par_iter()
        .filter_map(|i| {
            let x = grid.center(i);
            let dist = distance_to_skeleton(&x, cubes)?;
            let u0: f64 = x.iter().map(|v| (std::f64::consts::PI * v).sin()).product();
            Some((i, dist, u0.abs()))
        })
        .collect();
    let sup_f = points.iter().map(|p| fv[p.0].abs()).fold(0.0f64, f64::max);
    if !(sup_f > 0.0) {
        return Err(Error::domain("perturbation vanishes on the structure"));
    }
    let u0 = EigenField::ProductSines { n };
    let need = 1.0 + params.margin;
    let mut rejected = Vec::new();
    for k in 0..=params.halvings {
        let delta = params.delta_start / 2f64.powi(k as i32);
        let c1 = 1.0 / (4.0 * sup_f);
        let epsilon = c1 * delta * delta;
        if params.max_amplitude.is_some_and(|cap| epsilon * sup_f > cap) {
            rejected.push(delta);
            continue;
        }
        let ratio = points
            .par_iter()
            .filter(|p| p.1 >= delta)
            .map(|&(i, _, a)| {
                let b = epsilon * fv[i].abs();
                if a >= need * b {
                    return if b > 0.0 { a / b } else { f64::INFINITY };
                }
                let x = grid.center(i);
                let g0 = norm(&u0.gradient(&x));
                let g1 = epsilon * norm(&f.gradient(&x));
                let r = if g1 > 0.0 { g0 / g1 } else { f64::INFINITY };
                r.max(if b > 0.0 { a / b } else { f64::INFINITY })
            })
            .reduce(|| f64::INFINITY, f64::min);
        if ratio >= need {
            return Ok(EpsilonChoice {
                delta,
                epsilon,
                c1,
                sup_f,
                tube_ratio: ratio,
                checked_points: points.iter().filter(|p| p.1 >= delta).count(),
                rejected,
            });
        }
        rejected.push(delta);
    }
    Err(Error::NoValidEpsilon)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Distance from `x` to the codimension-2 skeleton of the cubes of `C_∅`
/// whose closure contains it, `None` outside `C_∅`.
fn distance_to_skeleton(x: &[f64], cubes: &std::collections::BTreeSet<Cube>) -> Option<f64> {
    let n = x.len();
    let near = |v: f64| (v - v.round()).abs() < 1e-9;
    // Every cube whose closure holds x: two choices per coordinate on the lattice.
    let mut best: Option<f64> = None;
    let lattice: Vec<bool> = x.iter().map(|&v| near(v)).collect();
    let count = 1usize << lattice.iter().filter(|b| **b).count();
    for mask in 0..count {
        let mut bit = 0;
        let c: Cube = x
            .iter()
            .zip(&lattice)
            .map(|(&v, &on)| {
                if on {
                    let down = (mask >> bit) & 1 == 1;
                    bit += 1;
                    v.round() as i64 - down as i64
                } else {
                    v.floor() as i64
                }
            })
            .collect();
        if !cubes.contains(&c) {
            continue;
        }
        let mut off: Vec<f64> = (0..n).map(|k| (x[k] - c[k] as f64).min(c[k] as f64 + 1.0 - x[k]).max(0.0)).collect();
        off.sort_by(f64::total_cmp);
        let d = if n >= 2 { off[0].hypot(off[1]) } else { off[0] };
        best = Some(best.map_or(d, |b: f64| b.min(d)));
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalGradientReport {
    /// Zeros of `h` on the interior and join edges of `K`.
    pub zero_points: usize,
    /// Smallest `|∂_t f|` along the edge at those zeros, `None` if there are none.
    pub min_tangential: Option<f64>,
    /// Smallest `‖∇f‖` at those zeros.
    pub min_gradient: Option<f64>,
    pub threshold: f64,
    pub passed: bool,
}

/// At every zero of `h` on `K`, checks that `f` crosses transversally:
/// `|∂_t f| ≥ 1 − 1/100 − slack` along the edge.
pub fn verify_local_gradient(f: &EigenField, spec: &PerturbationSpec, slack: f64) -> LocalGradientReport {
    let threshold = 0.99 - slack;
    let zeros: Vec<(Vec<f64>, usize)> = spec
        .edges
        .iter()
        .filter(|(face, rule)| face.free_axes().len() == 1 && !matches!(rule, EdgeRule::ExtConst { .. }))
        .flat_map(|(face, rule)| {
            let k = face.free_axes()[0];
            edge_zeros(face, rule).into_iter().map(move |x| (x, k))
        })
        .collect();
    let (mut tan, mut full) = (f64::INFINITY, f64::INFINITY);
    for (x, k) in &zeros {
        let g = f.gradient(x);
        tan = tan.min(g[*k].abs());
        full = full.min(norm(&g));
    }
    let some = !zeros.is_empty();
    LocalGradientReport {
        zero_points: zeros.len(),
        min_tangential: some.then_some(tan),
        min_gradient: some.then_some(full),
        threshold,
        passed: !some || tan >= threshold,
    }
}

/// Sign changes of `h` along an edge, located by bisection.
fn edge_zeros(face: &crate::cubeworld::Face, rule: &EdgeRule) -> Vec<Vec<f64>> {
    const STEPS: usize = 256;
    let k = face.free_axes()[0];
    let (lo, _) = face.range(k);
    let at = |t: f64| {
        let mut x = face.center();
        x[k] = lo as f64 + t;
        x
    };
    let h = |t: f64| rule.eval(face, &at(t)).0;
    let mut out = Vec::new();
    let mut prev = h(0.0);
    for i in 1..=STEPS {
        let t1 = i as f64 / STEPS as f64;
        let cur = h(t1);
        if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
            let (mut a, mut b) = (t1 - 1.0 / STEPS as f64, t1);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if h(m).signum() == prev.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            out.push(at(0.5 * (a + b)));
        } else if cur == 0.0 && i < STEPS {
            out.push(at(t1));
        }
        if cur != 0.0 {
            prev = cur;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubeworld::{build_structure, Polarity};
    use crate::perturb::build_h;
    use crate::tree::RootedTree;

    fn nested_pair() -> (StructureAssembly, PerturbationSpec) {
        let t: RootedTree = RootedTree::parse("[[]]").unwrap();
        let asm = build_structure(&t, 3, Polarity::Minus).unwrap();
        let spec = build_h(&asm).unwrap();
        (asm, spec)
    }

    #[test]
    fn zero_amplitude_is_u0() {
        let f = EigenField::ProductSines { n: 3 };
        let u = assemble_u_eps(&f, 0.0).unwrap();
        for x in [[0.3, 0.7, 1.2], [2.5, -0.1, 0.4]] {
            assert_eq!(u.value(&x), f.value(&x));
        }
        assert!(assemble_u_eps(&f, -1.0).is_err());
    }

    #[test]
    fn zeros_of_h_sit_where_the_profiles_vanish() {
        let (_, spec) = nested_pair();
        let mut int_zeros = 0;
        for (face, rule) in &spec.edges {
            if face.free_axes().len() != 1 {
                continue;
            }
            let z = edge_zeros(face, rule);
            match rule {
                EdgeRule::ExtConst { .. } => assert!(z.is_empty()),
                EdgeRule::IntTransition { .. } => {
                    assert_eq!(z.len(), 1);
                    // The midpoint of the edge for n = 3.
                    assert!(face.center().iter().zip(&z[0]).all(|(a, b)| (a - b).abs() < 1e-12));
                    int_zeros += 1;
                }
                EdgeRule::JoinBump { .. } => assert_eq!(z.len(), 2),
            }
        }
        assert!(int_zeros >= 8);
    }

    #[test]
    fn vanishing_fit_is_flagged() {
        let (_, spec) = nested_pair();
        let zero = EigenField::plane_wave_sum(3, vec![0.0; 3], vec![]).unwrap();
        let r = verify_local_gradient(&zero, &spec, 0.5);
        assert!(r.zero_points > 0 && !r.passed);
        assert_eq!(r.min_tangential, Some(0.0));
    }

    #[test]
    fn leaf_spec_passes_vacuously() {
        let t: RootedTree = RootedTree::parse("[]").unwrap();
        let asm = build_structure(&t, 3, Polarity::Minus).unwrap();
        let spec = build_h(&asm).unwrap();
        let r = verify_local_gradient(&EigenField::ProductSines { n: 3 }, &spec, 0.5);
        assert_eq!(r.zero_points, 0);
        assert!(r.passed && r.min_tangential.is_none());
    }

    #[test]
    fn skeleton_distance() {
        let cubes: std::collections::BTreeSet<Cube> = [vec![0, 0, 0], vec![1, 0, 0]].into_iter().collect();
        assert!((distance_to_skeleton(&[0.5, 0.5, 0.5], &cubes).unwrap() - 0.5f64.hypot(0.5)).abs() < 1e-12);
        // On the shared face, 0.2 from one edge and 0.5 from the other.
        let d = distance_to_skeleton(&[1.0, 0.2, 0.5], &cubes).unwrap();
        assert!((d - 0.2f64.hypot(0.0)).abs() < 1e-12, "{d}");
        assert_eq!(distance_to_skeleton(&[2.5, 0.5, 0.5], &cubes), None);
    }

    #[test]
    fn product_sines_perturbation_passes_the_tube_check() {
        // f = u₀ itself never beats u₀ away from the faces.
        let (asm, _) = nested_pair();
        let f = EigenField::ProductSines { n: 3 };
        let c = choose_epsilon(&f, &asm, &EpsilonParams::default()).unwrap();
        assert_eq!(c.delta, 0.2);
        assert!((c.epsilon - 0.04 / (4.0 * c.sup_f)).abs() < 1e-15);
        assert!(c.tube_ratio >= 1.25 && c.checked_points > 0);
        let capped = EpsilonParams {
            max_amplitude: Some(0.0026),
            ..EpsilonParams::default()
        };
        let c = choose_epsilon(&f, &asm, &capped).unwrap();
        assert_eq!((c.delta, c.rejected.clone()), (0.1, vec![0.2]));
    }
}
