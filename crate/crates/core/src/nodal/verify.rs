use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::domains::{decompose, domain_nesting_tree, outside_of, NestingTree, NodalDecomposition};
use super::grid::{sign_grid, Grid, SignGrid};
use crate::cubeworld::{build_structure, Cube, Polarity, StructureAssembly};
use crate::eigenfield::EigenField;
use crate::error::{Error, Result};
use crate::perturb::{
    assemble_u_eps, build_h, choose_epsilon, fit_eigenfunction, verify_local_gradient, EpsilonChoice, EpsilonParams,
    FitParams, FitReport, LocalGradientReport, PerturbationSpec,
};
use crate::tree::{canonical_tree, trees_isomorphic, RootedTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizeParams {
    pub n: usize,
    pub polarity: Polarity,
    /// Spacing of the lattice-aligned analysis grid; `1/h` must be an integer.
    pub grid_h: f64,
    pub fit: FitParams,
    pub epsilon: EpsilonParams,
    /// Slack of the transversality check at the zeros of `h`.
    pub gradient_slack: f64,
    /// Also extract the tree at `grid_h / 2`.
    pub refine_check: bool,
}

impl Default for RealizeParams {
    fn default() -> Self {
        Self {
            n: 3,
            polarity: Polarity::Minus,
            grid_h: 0.05,
            fit: FitParams::default(),
            epsilon: EpsilonParams::default(),
            gradient_slack: 0.5,
            refine_check: false,
        }
    }
}

/// Per-node comparison of `Ω_v` with the cube set it should converge to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCheck {
    pub path: Vec<usize>,
    pub domain: u32,
    /// Hausdorff distance between the cells of `Ω_v` and the closed
    /// predicted cubes; infinite beyond the search radius.
    pub hausdorff: f64,
    pub hausdorff_ok: bool,
    /// `Ω_v` with all descendants leaves no bounded hole.
    pub no_bounded_holes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizeReport {
    pub tree: String,
    pub extracted: Option<String>,
    pub passed: bool,
    /// Stage and reason when the extraction did not match.
    pub failure: Option<String>,
    pub fit: FitReport,
    pub epsilon: EpsilonChoice,
    pub local_gradient: LocalGradientReport,
    pub grid_h: f64,
    pub grid_dims: Vec<usize>,
    pub domain_count: usize,
    pub nudged: usize,
    pub nodes: Vec<NodeCheck>,
    /// Every node matched a distinct domain of the extracted tree and passed
    /// both checks.
    pub structure_checks_ok: bool,
    /// Canonical tree at half the spacing, when requested.
    pub refined: Option<String>,
}

/// Everything a realization produces.
#[derive(Debug, Clone)]
pub struct Realization {
    pub report: RealizeReport,
    pub assembly: StructureAssembly,
    pub spec: PerturbationSpec,
    pub f: EigenField,
    pub u_eps: EigenField,
    pub sign_grid: SignGrid,
    pub nesting: Option<NestingTree>,
}

/// Runs the construction for `tree` and checks the nodal nesting of the
/// result against it.
pub fn realize_and_verify(tree: &RootedTree, params: &RealizeParams) -> Result<Realization> {
    let asm = build_structure(tree, params.n, params.polarity)?;
    let spec = build_h(&asm)?;
    let (f, fit) = fit_eigenfunction(&spec, &params.fit)?;
    let local_gradient = verify_local_gradient(&f, &spec, params.gradient_slack);

    // Keep u₀ dominant at every sample off the lattice skeleton, so the
    // grid reads sign(f) exactly where u₀ vanishes and sign(u₀) elsewhere.
    let mut eps_params = params.epsilon.clone();
    let floor = 0.5 * (std::f64::consts::PI * params.grid_h).sin().powi(params.n as i32);
    eps_params.max_amplitude = Some(eps_params.max_amplitude.map_or(floor, |c| c.min(floor)));
    let epsilon = choose_epsilon(&f, &asm, &eps_params)?;
    let u_eps = assemble_u_eps(&f, epsilon.epsilon)?;

    let grid = analysis_grid(&asm, params.grid_h)?;
    let sg = sign_grid(&u_eps, &grid)?;
    let dec = decompose(&sg);
    let extraction = extract(&asm, &dec);

    let mut report = RealizeReport {
        tree: tree.to_string(),
        extracted: None,
        passed: false,
        failure: None,
        fit,
        epsilon,
        local_gradient,
        grid_h: params.grid_h,
        grid_dims: grid.dims.clone(),
        domain_count: dec.domains.count(),
        nudged: sg.nudged,
        nodes: Vec::new(),
        structure_checks_ok: false,
        refined: None,
    };
    let nesting = match extraction {
        Ok(nt) => {
            report.extracted = Some(nt.tree.to_string());
            report.passed = trees_isomorphic(&nt.tree, tree);
            if !report.passed {
                report.failure = Some(format!(
                    "isomorphism: extracted {} but expected {}",
                    canonical_tree(&nt.tree),
                    canonical_tree(tree)
                ));
            } else {
                report.nodes = node_checks(&asm, &dec, &nt, params.grid_h);
                report.structure_checks_ok = report.nodes.len() == asm.nodes.len()
                    && report.nodes.iter().all(|c| c.hausdorff_ok && c.no_bounded_holes);
            }
            Some(nt)
        }
        Err(e) => {
            report.failure = Some(e.to_string());
            None
        }
    };
    if params.refine_check {
        let fine = analysis_grid(&asm, 0.5 * params.grid_h)?;
        let dec = decompose(&sign_grid(&u_eps, &fine)?);
        report.refined = Some(match extract(&asm, &dec) {
            Ok(nt) => canonical_tree(&nt.tree),
            Err(e) => format!("error: {e}"),
        });
    }
    Ok(Realization {
        report,
        assembly: asm,
        spec,
        f,
        u_eps,
        sign_grid: sg,
        nesting,
    })
}

/// Lattice-aligned grid over `C_∅` with one unit of margin.
pub fn analysis_grid(asm: &StructureAssembly, h: f64) -> Result<Grid> {
    let (lo, hi) = asm.root().structure.bbox();
    let lo: Vec<i64> = lo.iter().map(|v| v - 1).collect();
    let hi: Vec<i64> = hi.iter().map(|v| v + 2).collect();
    Grid::lattice_aligned(&lo, &hi, h)
}

fn cube_centre(c: &Cube) -> Vec<f64> {
    c.iter().map(|&v| v as f64 + 0.5).collect()
}

/// Nesting tree below the domain at the centre of a predicted root cube.
fn extract(asm: &StructureAssembly, dec: &NodalDecomposition) -> Result<NestingTree> {
    let cube = asm
        .predicted_domain(0)
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("root has no predicted cubes"))?;
    let root = dec.domain_at(&cube_centre(&cube)).ok_or_else(|| Error::VerificationFailed {
        stage: "root".into(),
        detail: "predicted root cube lies outside the grid".into(),
    })?;
    domain_nesting_tree(dec, root)
}

/// Search radius of the Hausdorff stencil, in cells.
const HAUSDORFF_CELLS: i64 = 4;

fn node_checks(asm: &StructureAssembly, dec: &NodalDecomposition, nt: &NestingTree, h: f64) -> Vec<NodeCheck> {
    let g = &dec.grid;
    let labels = &dec.domains.labels;
    let members: BTreeSet<u32> = nt.domains.iter().copied().collect();
    let domain_of: Vec<Option<u32>> = (0..asm.nodes.len())
        .map(|v| {
            asm.predicted_domain(v)
                .iter()
                .next()
                .and_then(|c| dec.domain_at(&cube_centre(c)))
                .filter(|d| members.contains(d))
        })
        .collect();
    let distinct: BTreeSet<u32> = domain_of.iter().flatten().copied().collect();
    if distinct.len() != asm.nodes.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (v, node) in asm.nodes.iter().enumerate() {
        let d = domain_of[v].expect("checked above");
        let predicted = asm.predicted_domain(v);
        let in_pred: Vec<bool> = (0..g.len()).map(|i| in_closed_cubes(&g.center(i), &predicted)).collect();
        let in_dom: Vec<bool> = labels.iter().map(|&l| l == d).collect();
        let hausdorff = directed(g, &in_dom, &in_pred).max(directed(g, &in_pred, &in_dom));

        let mut subtree = vec![v];
        let mut k = 0;
        while k < subtree.len() {
            subtree.extend(asm.nodes[subtree[k]].children.iter().copied());
            k += 1;
        }
        let ds: BTreeSet<u32> = subtree.iter().map(|&w| domain_of[w].expect("checked above")).collect();
        let star: Vec<bool> = labels.iter().map(|l| ds.contains(l)).collect();
        let outside = outside_of(g, &star);
        let no_bounded_holes = (0..g.len()).all(|i| star[i] || outside[i]);
        out.push(NodeCheck {
            path: node.path.clone(),
            domain: d,
            hausdorff,
            hausdorff_ok: hausdorff <= 2.0 * h + 1e-9,
            no_bounded_holes,
        });
    }
    out
}

fn in_closed_cubes(x: &[f64], cubes: &BTreeSet<Cube>) -> bool {
    let near = |v: f64| (v - v.round()).abs() < 1e-9;
    let on: Vec<bool> = x.iter().map(|&v| near(v)).collect();
    let count = 1usize << on.iter().filter(|b| **b).count();
    (0..count).any(|mask| {
        let mut bit = 0;
        let c: Cube = x
            .iter()
            .zip(&on)
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
        cubes.contains(&c)
    })
}

/// `sup_{a ∈ A} dist(a, B)` over cell centres, searched up to
/// `HAUSDORFF_CELLS` cells away.
fn directed(g: &Grid, a: &[bool], b: &[bool]) -> f64 {
    use rayon::prelude::*;
    let n = g.dim();
    let r = HAUSDORFF_CELLS;
    let mut offsets: Vec<(Vec<i64>, f64)> = Vec::new();
    let side = (2 * r + 1) as usize;
    for idx in 0..side.pow(n as u32) {
        let mut o = Vec::with_capacity(n);
        let mut t = idx;
        for _ in 0..n {
            o.push((t % side) as i64 - r);
            t /= side;
        }
        let d2: i64 = o.iter().map(|v| v * v).sum();
        if d2 <= r * r {
            offsets.push((o, (d2 as f64).sqrt() * g.h));
        }
    }
    offsets.sort_by(|x, y| x.1.total_cmp(&y.1));
    (0..g.len())
        .into_par_iter()
        .filter(|&i| a[i] && !b[i])
        .map(|i| {
            let m = g.unravel(i);
            offsets
                .iter()
                .find(|(o, _)| {
                    let p: Option<Vec<usize>> = (0..n)
                        .map(|k| {
                            let v = m[k] as i64 + o[k];
                            (v >= 0 && (v as usize) < g.dims[k]).then_some(v as usize)
                        })
                        .collect();
                    p.is_some_and(|p| b[g.ravel(&p)])
                })
                .map_or(f64::INFINITY, |(_, d)| *d)
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directed_distance_on_a_line() {
        let g = Grid::covering(&[0.0], &[2.0], 0.1).unwrap();
        let a: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let b: Vec<bool> = (0..20).map(|i| i < 8).collect();
        assert!((directed(&g, &a, &b) - 0.2).abs() < 1e-12);
        assert_eq!(directed(&g, &b, &a), 0.0);
        let far: Vec<bool> = (0..20).map(|i| i == 19).collect();
        assert_eq!(directed(&g, &a, &far), f64::INFINITY);
    }

    #[test]
    fn closed_cube_membership() {
        let cubes: BTreeSet<Cube> = [vec![0, 0], vec![2, 0]].into_iter().collect();
        assert!(in_closed_cubes(&[1.0, 0.5], &cubes));
        assert!(in_closed_cubes(&[2.0, 1.0], &cubes));
        assert!(!in_closed_cubes(&[1.5, 0.5], &cubes));
    }
}
