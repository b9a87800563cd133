//! The target perturbation `h` on the edge grid `K`, its plane-wave fit, and
//! the perturbed field `u_ε = u_0 + ε f`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cubeworld::{classify_all, Face, LatticePoint, Polarity, StructureAssembly};
use crate::eigenfield::{nested_directions, EigenField, PlaneWave};
use crate::error::{Error, Result};

mod amplitude;
pub use amplitude::{
    assemble_u_eps, choose_epsilon, verify_local_gradient, EpsilonChoice, EpsilonParams, LocalGradientReport,
};

/// Transition profile: `−cos(πt)` on `[0, 1]`, `1` beyond.
pub fn chi(t: f64) -> f64 {
    if t >= 1.0 {
        1.0
    } else {
        -(PI * t).cos()
    }
}

pub fn chi_prime(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        PI * (PI * t).sin()
    }
}

/// Constant taken by `h` on the exterior edges of a structure: `+1` for
/// minus polarity, `−1` for plus.
pub fn exterior_value(p: Polarity) -> f64 {
    match p {
        Polarity::Minus => 1.0,
        Polarity::Plus => -1.0,
    }
}

/// How `h` is prescribed on one face of `K`. `node` is the tree node whose
/// classification produced the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EdgeRule {
    /// Exterior edge: constant `value`.
    ExtConst { value: f64, node: usize },
    /// Edge joining a node to a child: `orientation · χ(dist(x, anchors))`, so `h = −orientation` at
    /// the anchors (child side) and `orientation` one unit away. With graded
    /// amplitudes the anchor value is `−child_scale · orientation` instead;
    /// the profile stays monotone with a single zero.
    IntTransition {
        orientation: f64,
        anchors: Vec<LatticePoint>,
        node: usize,
        child: usize,
        #[serde(default = "one")]
        child_scale: f64,
    },
    /// Joining edge: `sign · χ(2|x − midpoint|)`; `−sign` at the midpoint and
    /// `sign` at the (excluded) endpoints.
    JoinBump { sign: f64, midpoint: Vec<f64>, node: usize },
}

impl EdgeRule {
    pub fn node(&self) -> usize {
        match self {
            EdgeRule::ExtConst { node, .. } | EdgeRule::IntTransition { node, .. } | EdgeRule::JoinBump { node, .. } => {
                *node
            }
        }
    }

    /// Smallest plateau amplitude the profile connects.
    pub fn scale(&self) -> f64 {
        match self {
            EdgeRule::ExtConst { value, .. } => value.abs(),
            EdgeRule::IntTransition {
                orientation,
                child_scale,
                ..
            } => orientation.abs() * child_scale.min(1.0),
            EdgeRule::JoinBump { sign, .. } => sign.abs(),
        }
    }

    /// `(h, ∇h)` at a point `x` of `face`. Distances are taken in the free
    /// coordinates of the face, so the gradient has no normal component.
    pub fn eval(&self, face: &Face, x: &[f64]) -> (f64, Vec<f64>) {
        let n = x.len();
        let free = face.free_axes();
        let mut grad = vec![0.0; n];
        match self {
            EdgeRule::ExtConst { value, .. } => (*value, grad),
            EdgeRule::IntTransition {
                orientation,
                anchors,
                child_scale,
                ..
            } => {
                let (d, w) = anchors
                    .iter()
                    .map(|a| {
                        let d2: f64 = free.iter().map(|&k| (x[k] - a[k] as f64).powi(2)).sum();
                        (d2.sqrt(), a)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .expect("anchors are non-empty");
                let (a, b) = (0.5 * (1.0 + child_scale), 0.5 * (1.0 - child_scale));
                if d > 0.0 {
                    let s = orientation * a * chi_prime(d) / d;
                    for &k in &free {
                        grad[k] = s * (x[k] - w[k] as f64);
                    }
                }
                (orientation * (a * chi(d) + b), grad)
            }
            EdgeRule::JoinBump { sign, midpoint, .. } => {
                let d2: f64 = free.iter().map(|&k| (x[k] - midpoint[k]).powi(2)).sum();
                let d = d2.sqrt();
                if d > 0.0 {
                    let s = sign * 2.0 * chi_prime(2.0 * d) / d;
                    for &k in &free {
                        grad[k] = s * (x[k] - midpoint[k]);
                    }
                }
                (sign * chi(2.0 * d), grad)
            }
        }
    }
}

fn one() -> f64 {
    1.0
}

fn check_grading(grading: f64) -> Result<()> {
    if grading > 0.0 && grading <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("grading {grading} must lie in (0, 1]")))
    }
}

/// One fit or check point: position, target value and target gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub h: f64,
    pub grad: Vec<f64>,
    /// Axes along `K` at this point: the free axes of the face, or every
    /// axis at a lattice vertex.
    pub tangent: Vec<usize>,
    /// On a constant piece of `h` (exterior face or lattice vertex).
    pub plateau: bool,
    /// Local amplitude of `h`; fit rows are divided by it so every depth
    /// is matched to the same relative accuracy.
    pub scale: f64,
}

/// `h` on `K`, the codimension-2 faces of the root structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub n: usize,
    pub edges: BTreeMap<Face, EdgeRule>,
    /// Plateau amplitude ratio between consecutive depths; `1` gives the
    /// plain `±1` rules.
    #[serde(default = "one")]
    pub grading: f64,
    /// Depth of every tree node, indexed like the `node` fields of the rules.
    #[serde(default)]
    pub depths: Vec<usize>,
    /// Tube width, once chosen.
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
}

impl PerturbationSpec {
    /// Value of `h` at each lattice vertex of `K`; vertices belong to the
    /// closed faces (join faces are open, but `h` extends continuously).
    pub fn vertex_values(&self) -> Result<BTreeMap<LatticePoint, f64>> {
        let mut out: BTreeMap<LatticePoint, f64> = BTreeMap::new();
        for (face, rule) in &self.edges {
            for p in face.vertices() {
                let x: Vec<f64> = p.iter().map(|&v| v as f64).collect();
                let (h, _) = rule.eval(face, &x);
                match out.get(&p) {
                    Some(&old) if (old - h).abs() > 1e-12 => {
                        return Err(Error::invalid(format!(
                            "h is discontinuous at vertex {p:?}: {old} vs {h} from face {face}"
                        )));
                    }
                    _ => {
                        out.insert(p, h);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `h` at a point of `K`, `None` off `K`.
    pub fn value_on_k(&self, x: &[f64]) -> Option<f64> {
        let on_lattice = |v: f64| (v - v.round()).abs() < 1e-9;
        let fixed = x.iter().filter(|v| on_lattice(**v)).count();
        if fixed < 2 {
            return None;
        }
        if fixed == 2 {
            let key = Face(
                x.iter()
                    .map(|&v| if on_lattice(v) { 2 * v.round() as i64 } else { 2 * v.floor() as i64 + 1 })
                    .collect(),
            );
            return self.edges.get(&key).map(|rule| rule.eval(&key, x).0);
        }
        // A lower-dimensional cell: `h` is continuous there, any face will do.
        self.edges
            .iter()
            .find(|(face, _)| face.distance(x) < 1e-9)
            .map(|(face, rule)| rule.eval(face, x).0)
    }

    /// The same labelling with plateau amplitudes `grading^depth`.
    pub fn regraded(&self, grading: f64) -> Result<Self> {
        check_grading(grading)?;
        let depth = |v: usize| {
            self.depths
                .get(v)
                .map(|&d| d as i32)
                .ok_or_else(|| Error::invalid(format!("no depth recorded for node {v}")))
        };
        let mut edges = BTreeMap::new();
        for (face, rule) in &self.edges {
            let mut rule = rule.clone();
            match &mut rule {
                EdgeRule::ExtConst { value, node } => *value = value.signum() * grading.powi(depth(*node)?),
                EdgeRule::IntTransition {
                    orientation,
                    node,
                    child,
                    child_scale,
                    ..
                } => {
                    *orientation = orientation.signum() * grading.powi(depth(*node)?);
                    *child_scale = grading.powi(depth(*child)? - depth(*node)?);
                }
                EdgeRule::JoinBump { sign, node, .. } => *sign = sign.signum() * grading.powi(depth(*node)?),
            }
            edges.insert(face.clone(), rule);
        }
        let out = Self { edges, grading, ..self.clone() };
        out.vertex_values()?;
        Ok(out)
    }

    /// Samples on the relative interior of every face at `per_unit` points per
    /// unit length (cell centres of a tensor grid over the free axes), plus
    /// every lattice vertex of `K` once.
    pub fn samples(&self, per_unit: usize) -> Result<Vec<Sample>> {
        assert!(per_unit >= 1);
        let mut out = Vec::new();
        let offsets: Vec<f64> = (0..per_unit).map(|i| (i as f64 + 0.5) / per_unit as f64).collect();
        for (face, rule) in &self.edges {
            let free = face.free_axes();
            let base: Vec<f64> = (0..self.n).map(|k| face.range(k).0 as f64).collect();
            let count = per_unit.pow(free.len() as u32);
            for idx in 0..count {
                let mut x = base.clone();
                let mut r = idx;
                for &k in &free {
                    x[k] += offsets[r % per_unit];
                    r /= per_unit;
                }
                let (h, grad) = rule.eval(face, &x);
                out.push(Sample {
                    x,
                    h,
                    grad,
                    tangent: free.clone(),
                    plateau: matches!(rule, EdgeRule::ExtConst { .. }),
                    scale: rule.scale(),
                });
            }
        }
        for (p, h) in self.vertex_values()? {
            out.push(Sample {
                x: p.iter().map(|&v| v as f64).collect(),
                scale: h.abs(),
                h,
                grad: vec![0.0; self.n],
                tangent: (0..self.n).collect(),
                plateau: true,
            });
        }
        Ok(out)
    }

    /// Checks the labelling rules by direct evaluation at `per_unit` points
    /// per unit length: `|h| ≤ 1`, constants on exterior faces, one zero per
    /// interior edge, two zeros and an opposite-sign midpoint per join edge,
    /// and a vanishing gradient at lattice vertices.
    pub fn check(&self, per_unit: usize) -> Result<()> {
        self.vertex_values()?;
        for (face, rule) in &self.edges {
            let fail = |msg: &str| Err(Error::invalid(format!("face {face}: {msg}")));
            for p in face.vertices() {
                let x: Vec<f64> = p.iter().map(|&v| v as f64).collect();
                let (_, g) = rule.eval(face, &x);
                if g.iter().any(|v| v.abs() > 1e-12) {
                    return fail("gradient does not vanish at a vertex");
                }
            }
            let free = face.free_axes();
            if free.len() != 1 {
                continue;
            }
            // Walk the edge including its endpoints.
            let k = free[0];
            let (lo, _) = face.range(k);
            let mut x = face.center();
            let values: Vec<f64> = (0..=per_unit)
                .map(|i| {
                    x[k] = lo as f64 + i as f64 / per_unit as f64;
                    rule.eval(face, &x).0
                })
                .collect();
            if values.iter().any(|v| v.abs() > 1.0 + 1e-12) {
                return fail("|h| exceeds 1");
            }
            let zeros = count_zeros(&values);
            match rule {
                EdgeRule::ExtConst { value, .. } => {
                    let unit = self.grading != 1.0 || value.abs() == 1.0;
                    if !unit || *value == 0.0 || values.iter().any(|v| v != value) {
                        return fail("exterior value is not a nonzero constant (±1 without grading)");
                    }
                }
                EdgeRule::IntTransition { .. } => {
                    if zeros != 1 {
                        return fail(&format!("{zeros} zeros on an interior edge"));
                    }
                }
                EdgeRule::JoinBump { sign, midpoint, .. } => {
                    let (hm, _) = rule.eval(face, midpoint);
                    if zeros != 2 || hm * sign >= 0.0 {
                        return fail("join bump must have two zeros and flip sign at the midpoint");
                    }
                }
            }
        }
        Ok(())
    }

    /// Samples as CSV: `x1..xn, h, dh1..dhn`.
    pub fn samples_csv(&self, samples: &[Sample]) -> String {
        let mut s = String::new();
        let cols: Vec<String> = (1..=self.n)
            .map(|k| format!("x{k}"))
            .chain(std::iter::once("h".to_string()))
            .chain((1..=self.n).map(|k| format!("dh{k}")))
            .collect();
        s.push_str(&cols.join(","));
        s.push('\n');
        for p in samples {
            let row: Vec<String> = p
                .x
                .iter()
                .chain(std::iter::once(&p.h))
                .chain(p.grad.iter())
                .map(|v| format!("{v}"))
                .collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// Sign changes along a sampled profile; an exact zero counts once.
fn count_zeros(values: &[f64]) -> usize {
    let mut zeros = 0;
    let mut last = 0.0f64;
    for &v in values {
        if v == 0.0 {
            zeros += 1;
            last = 0.0;
            continue;
        }
        if last != 0.0 && last.signum() != v.signum() {
            zeros += 1;
        }
        last = v;
    }
    zeros
}

/// Labels every face of `K` as an exterior, connecting or joining edge.
pub fn build_h(asm: &StructureAssembly) -> Result<PerturbationSpec> {
    build_h_graded(asm, 1.0)
}

/// `build_h` with plateau amplitudes `grading^depth` instead of `1`. Signs,
/// zero counts and vertex continuity are unchanged.
pub fn build_h_graded(asm: &StructureAssembly, grading: f64) -> Result<PerturbationSpec> {
    check_grading(grading)?;
    let amp = |v: usize| grading.powi(asm.nodes[v].depth as i32);
    let classes = classify_all(asm)?;
    let mut labels: BTreeMap<Face, EdgeRule> = BTreeMap::new();
    let mut put = |face: &Face, rule: EdgeRule| -> Result<()> {
        if let Some(old) = labels.get(face) {
            if !same_profile(face, old, &rule) {
                return Err(Error::invalid(format!(
                    "face {face} gets conflicting labels from nodes {} and {}",
                    old.node(),
                    rule.node()
                )));
            }
            return Ok(());
        }
        labels.insert(face.clone(), rule);
        Ok(())
    };
    for (v, cls) in classes.iter().enumerate() {
        let value = exterior_value(asm.nodes[v].structure.polarity) * amp(v);
        for f in &cls.ext {
            put(f, EdgeRule::ExtConst { value, node: v })?;
        }
        for (f, &child) in &cls.int {
            let verts = f.vertices();
            let on_child = |p: &LatticePoint| classes[child].surface_points.contains(p);
            let mut anchors: Vec<LatticePoint> =
                verts.iter().filter(|p| on_child(p) && !cls.surface_points.contains(*p)).cloned().collect();
            if anchors.is_empty() {
                anchors = verts.iter().filter(|p| on_child(p)).cloned().collect();
            }
            put(
                f,
                EdgeRule::IntTransition {
                    orientation: value,
                    anchors,
                    node: v,
                    child,
                    child_scale: amp(child) / amp(v),
                },
            )?;
        }
        for f in &cls.join {
            put(
                f,
                EdgeRule::JoinBump {
                    sign: value,
                    midpoint: f.center(),
                    node: v,
                },
            )?;
        }
    }

    let mut edges = BTreeMap::new();
    for c in &asm.root().structure.cubes {
        for f in Face::all_of_cube(c) {
            if edges.contains_key(&f) {
                continue;
            }
            match labels.get(&f) {
                Some(rule) => {
                    edges.insert(f, rule.clone());
                }
                None => return Err(Error::UnlabeledEdge(f.to_string())),
            }
        }
    }
    let spec = PerturbationSpec {
        n: asm.n,
        edges,
        grading,
        depths: asm.nodes.iter().map(|v| v.depth).collect(),
        delta: None,
        epsilon: None,
    };
    spec.vertex_values()?;
    Ok(spec)
}

/// Parameters of the plane-wave least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// Number of direction pairs; the basis has `2 · waves` functions.
    pub waves: usize,
    /// Defaults to the lattice wavenumber `π√n`.
    pub wavenumber: Option<f64>,
    /// Singular values below `svd_cutoff · s_max` are dropped.
    pub svd_cutoff: f64,
    /// Fit samples per unit length; the check set uses four times as many.
    pub per_unit: usize,
    pub value_weight: f64,
    pub grad_weight: f64,
    /// Requested sup C¹ error.
    pub target: f64,
    /// Also fit the gradient components normal to `K` (to zero). With only
    /// the tangential part the fit is free off `K` and grows wildly there.
    pub normal_gradient: bool,
    /// When the least-squares `f` gets the sign pattern of `h` wrong,
    /// replace it by the margin-maximizing sum (see [`crate::lp`]).
    pub sign_refine: bool,
    /// Samples with `|h|` at least this large carry a sign constraint in
    /// the refinement.
    pub sign_threshold: f64,
    /// Amplitude ratio between consecutive depths of the profile the
    /// refinement matches. Deep nodes sit close to their parents' plateaus,
    /// and a uniform margin there costs the outer shell its sign.
    pub sign_grading: f64,
    /// Constraint samples per unit length in the refinement.
    pub sign_per_unit: usize,
    /// The refinement keeps `|∂f|` normal to `K` (every axis at a lattice
    /// vertex) below this multiple of the local amplitude. Without it the
    /// sign-feasible sums blow up just off `K`.
    pub sign_gradient_bound: f64,
    /// Samples per unit length for the gradient bound.
    pub sign_gradient_per_unit: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            waves: 600,
            wavenumber: None,
            svd_cutoff: 1e-10,
            per_unit: 8,
            value_weight: 1.0,
            grad_weight: 1.0,
            target: 0.01,
            normal_gradient: true,
            sign_refine: true,
            sign_threshold: 0.5,
            sign_grading: 0.15,
            sign_per_unit: 16,
            sign_gradient_bound: 2.0 * PI,
            sign_gradient_per_unit: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `sup |f − h| + ‖∇f − ∇h‖` over the check set, the gradient taken
    /// along `K` (all axes if the normal gradient was fitted).
    pub achieved_sup_c1_error: f64,
    pub sup_value_error: f64,
    pub sup_grad_error: f64,
    /// Gradient error including the components normal to `K`.
    pub sup_full_grad_error: f64,
    /// `min f / h` over the plateaus of `h`; positive means `f` has the sign
    /// of `h` on every plateau.
    pub sign_margin: f64,
    pub target: f64,
    pub target_met: bool,
    pub basis_size: usize,
    pub wavenumber: f64,
    pub fit_points: usize,
    pub check_points: usize,
    pub svd_cutoff: f64,
    pub kept_singular_values: usize,
    /// `s_max / s_min` over the kept singular values; absent after a sign
    /// refinement.
    pub condition_estimate: Option<f64>,
    pub coefficient_norm: f64,
    /// Max of `|f|` over the check set.
    pub sup_f_on_k: f64,
    /// Edges on which `f` and `h` have different numbers of zeros (check
    /// density, endpoints included).
    pub zero_count_mismatches: usize,
    /// Whether `f` came from the sign refinement rather than least squares.
    pub sign_refined: bool,
    /// Sign margin of the least-squares solution, kept when it was replaced.
    pub least_squares_sign_margin: f64,
}

impl FitReport {
    /// Whether `f` reproduces the sign pattern of `h` on `K`, which is what
    /// the nodal topology of `u_ε` depends on.
    pub fn sign_pattern_ok(&self) -> bool {
        self.sign_margin > 0.0 && self.zero_count_mismatches == 0
    }
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Rows per block when streaming the design matrix through the QR.
const ROW_BLOCK: usize = 4096;

/// Fits a plane-wave sum of the given wavenumber to `h` and `∇h` on `K` by
/// truncated-SVD least squares. A missed target is reported, not an error.
pub fn fit_eigenfunction(spec: &PerturbationSpec, params: &FitParams) -> Result<(EigenField, FitReport)> {
    if params.per_unit < 8 {
        return Err(Error::domain("fit needs at least 8 samples per unit length"));
    }
    let samples = spec.samples(params.per_unit)?;
    let basis = Basis::new(spec.n, &samples, params)?;
    let (mut f, mut solve) = fit_samples(&basis, &samples, params)?;
    let check = spec.samples(4 * params.per_unit)?;
    let mut errs = c1_errors(&f, &check);
    let mut mismatches = zero_count_mismatches(spec, &f, 4 * params.per_unit);
    let ls_margin = errs.sign_margin;
    let mut refined = false;
    if params.sign_refine && !(errs.sign_margin > 0.0 && mismatches == 0) {
        let (g, s2) = refine_signs(spec, &basis, &samples, params)?;
        let (e2, m2) = (c1_errors(&g, &check), zero_count_mismatches(spec, &g, 4 * params.per_unit));
        if (m2 == 0 && e2.sign_margin > 0.0) || m2 < mismatches {
            (f, solve, errs, mismatches, refined) = (g, s2, e2, m2, true);
        }
    }
    let (c1, grad) = if params.normal_gradient {
        (errs.value + errs.full_grad, errs.full_grad)
    } else {
        (errs.c1, errs.grad)
    };
    let report = FitReport {
        achieved_sup_c1_error: c1,
        sup_value_error: errs.value,
        sup_grad_error: grad,
        sup_full_grad_error: errs.full_grad,
        sign_margin: errs.sign_margin,
        target: params.target,
        target_met: c1 <= params.target,
        basis_size: 2 * params.waves,
        wavenumber: basis.kappa,
        fit_points: samples.len(),
        check_points: check.len(),
        svd_cutoff: params.svd_cutoff,
        kept_singular_values: solve.kept,
        condition_estimate: solve.condition,
        coefficient_norm: solve.coefficient_norm,
        sup_f_on_k: errs.sup_f,
        zero_count_mismatches: mismatches,
        sign_refined: refined,
        least_squares_sign_margin: ls_margin,
    };
    Ok((f, report))
}

/// Outcome of [`fit_to_samples`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFit {
    pub kept_singular_values: usize,
    pub condition_estimate: Option<f64>,
    pub coefficient_norm: f64,
}

/// The plane-wave least squares of [`fit_eigenfunction`] on arbitrary
/// samples. Gradient rows are used along each sample's `tangent` axes (all
/// axes with `normal_gradient`).
pub fn fit_to_samples(n: usize, samples: &[Sample], params: &FitParams) -> Result<(EigenField, SampleFit)> {
    let basis = Basis::new(n, samples, params)?;
    let (f, s) = fit_samples(&basis, samples, params)?;
    Ok((
        f,
        SampleFit {
            kept_singular_values: s.kept,
            condition_estimate: s.condition,
            coefficient_norm: s.coefficient_norm,
        },
    ))
}

/// `(sup |f − h|, sup ‖∇f − ∇h‖)` over `points`, full gradients.
pub fn c1_error_on(f: &EigenField, points: &[Sample]) -> (f64, f64) {
    let e = c1_errors(f, points);
    (e.value, e.full_grad)
}

struct Solve {
    kept: usize,
    condition: Option<f64>,
    coefficient_norm: f64,
}

/// Plane waves of one wavenumber along nested directions, phases measured
/// from the centre of the sample bounding box.
struct Basis {
    n: usize,
    kappa: f64,
    ks: Vec<Vec<f64>>,
    center: Vec<f64>,
}

impl Basis {
    fn new(n: usize, samples: &[Sample], params: &FitParams) -> Result<Self> {
        if params.waves < 2 {
            return Err(Error::domain("fit needs at least 2 waves"));
        }
        if samples.is_empty() {
            return Err(Error::SingularFit);
        }
        let kappa = params.wavenumber.unwrap_or(PI * (n as f64).sqrt());
        let ks = nested_directions(n, params.waves)?
            .iter()
            .map(|d| d.iter().map(|v| v * kappa).collect())
            .collect();
        Ok(Self { n, kappa, ks, center: sample_center(samples, n) })
    }

    fn cols(&self) -> usize {
        2 * self.ks.len()
    }

    /// `(sin, cos)` of every phase at `x`.
    fn phases(&self, x: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
        let shifted: Vec<f64> = x.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        self.ks.iter().map(move |k| k.iter().zip(&shifted).map(|(k, x)| k * x).sum::<f64>().sin_cos())
    }

    fn field(&self, coef: &[f64]) -> Result<EigenField> {
        let terms = self
            .ks
            .iter()
            .enumerate()
            .map(|(j, k)| PlaneWave { k: k.clone(), a: coef[2 * j], b: coef[2 * j + 1] })
            .collect();
        EigenField::plane_wave_sum(self.n, self.center.clone(), terms)
    }
}

/// Least-squares plane-wave fit to arbitrary value and gradient samples.
fn fit_samples(basis: &Basis, samples: &[Sample], params: &FitParams) -> Result<(EigenField, Solve)> {
    use faer::Mat;

    let n = basis.n;
    let cols = basis.cols();
    let rows_per_sample = 1 + n;

    // Stream blocks of [A | b] through QR, keeping only the triangular factor.
    let per_block = (ROW_BLOCK.max(2 * (cols + 1)) / rows_per_sample).max(1);
    let mut r_acc: Option<Mat<f64>> = None;
    for chunk in samples.chunks(per_block) {
        let prev = r_acc.as_ref().map_or(0, |r| r.nrows());
        let m = prev + chunk.len() * rows_per_sample;
        let mut block = Mat::<f64>::zeros(m, cols + 1);
        if let Some(r) = &r_acc {
            for i in 0..prev {
                for j in i..=cols {
                    block[(i, j)] = r[(i, j)];
                }
            }
        }
        for (s_idx, smp) in chunk.iter().enumerate() {
            let row = prev + s_idx * rows_per_sample;
            // Unconstrained gradient rows stay zero.
            let rel = 1.0 / smp.scale;
            let gw: Vec<f64> = (0..n)
                .map(|d| {
                    if params.normal_gradient || smp.tangent.contains(&d) {
                        params.grad_weight * rel
                    } else {
                        0.0
                    }
                })
                .collect();
            let vw = params.value_weight * rel;
            for (j, ((sn, cs), k)) in basis.phases(&smp.x).zip(&basis.ks).enumerate() {
                block[(row, 2 * j)] = vw * cs;
                block[(row, 2 * j + 1)] = vw * sn;
                for d in 0..n {
                    block[(row + 1 + d, 2 * j)] = -gw[d] * sn * k[d];
                    block[(row + 1 + d, 2 * j + 1)] = gw[d] * cs * k[d];
                }
            }
            block[(row, cols)] = vw * smp.h;
            for d in 0..n {
                block[(row + 1 + d, cols)] = gw[d] * smp.grad[d];
            }
        }
        r_acc = Some(block.qr().thin_R().to_owned());
    }
    let r = r_acc.expect("at least one block");
    let kept_rows = r.nrows().min(cols);
    let r11 = Mat::<f64>::from_fn(kept_rows, cols, |i, j| if j >= i { r[(i, j)] } else { 0.0 });
    let rhs: Vec<f64> = (0..kept_rows).map(|i| r[(i, cols)]).collect();

    let svd = r11.thin_svd().map_err(|_| Error::SingularFit)?;
    let sv = svd.S().column_vector();
    let smax = (0..sv.nrows()).map(|i| sv[i]).fold(0.0f64, f64::max);
    if !(smax > 0.0) {
        return Err(Error::SingularFit);
    }
    let keep: Vec<usize> = (0..sv.nrows()).filter(|&i| sv[i] > params.svd_cutoff * smax).collect();
    if keep.is_empty() {
        return Err(Error::SingularFit);
    }
    let smin = keep.iter().map(|&i| sv[i]).fold(f64::INFINITY, f64::min);
    let (u, v) = (svd.U(), svd.V());
    let mut coef = vec![0.0; cols];
    for &i in &keep {
        let proj: f64 = (0..kept_rows).map(|row| u[(row, i)] * rhs[row]).sum::<f64>() / sv[i];
        for (j, c) in coef.iter_mut().enumerate() {
            *c += v[(j, i)] * proj;
        }
    }
    Ok((
        basis.field(&coef)?,
        Solve {
            kept: keep.len(),
            condition: Some(smax / smin),
            coefficient_norm: norm(&coef),
        },
    ))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Maximizes `min f / g` with `f ≤ g` on the samples of the graded profile
/// `g` where it is a plateau or at least `sign_threshold` of its local
/// amplitude, then rescales `f` by the positive factor that best matches
/// `h` in the least-squares sense.
fn refine_signs(
    spec: &PerturbationSpec,
    basis: &Basis,
    samples: &[Sample],
    params: &FitParams,
) -> Result<(EigenField, Solve)> {
    use faer::Mat;

    let graded = spec.regraded(params.sign_grading)?.samples(params.sign_per_unit)?;

    let rows: Vec<&Sample> = graded
        .iter()
        .filter(|s| s.plateau || s.h.abs() >= params.sign_threshold * s.scale)
        .collect();
    let mut d = Mat::<f64>::zeros(rows.len(), basis.cols());
    for (i, s) in rows.iter().enumerate() {
        let sg = 1.0 / s.h;
        for (j, (sn, cs)) in basis.phases(&s.x).enumerate() {
            d[(i, 2 * j)] = sg * cs;
            d[(i, 2 * j + 1)] = sg * sn;
        }
    }
    let regraded = spec.regraded(params.sign_grading)?;
    let coarse = regraded.samples(params.sign_gradient_per_unit)?;
    let mut grad_rows: Vec<Vec<f64>> = Vec::new();
    for s in &coarse {
        let axes: Vec<usize> = if s.tangent.len() == basis.n {
            (0..basis.n).collect()
        } else {
            (0..basis.n).filter(|a| !s.tangent.contains(a)).collect()
        };
        let w = 1.0 / (params.sign_gradient_bound * s.scale);
        let phases: Vec<(f64, f64)> = basis.phases(&s.x).collect();
        for &a in &axes {
            let mut row = vec![0.0; basis.cols()];
            for (j, (sn, cs)) in phases.iter().enumerate() {
                let k = basis.ks[j][a];
                row[2 * j] = -w * k * sn;
                row[2 * j + 1] = w * k * cs;
            }
            grad_rows.push(row.iter().map(|v| -v).collect());
            grad_rows.push(row);
        }
    }
    let mut u = Mat::<f64>::zeros(rows.len() + grad_rows.len(), basis.cols());
    for i in 0..rows.len() {
        for j in 0..basis.cols() {
            u[(i, j)] = d[(i, j)];
        }
    }
    for (i, row) in grad_rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            u[(rows.len() + i, j)] = *v;
        }
    }
    let sol = crate::lp::max_margin(&d, Some(&u), 1e3, 1e-9)?;
    let f = basis.field(&sol.x)?;
    let (fh, ff) = samples.iter().fold((0.0, 0.0), |(a, b), s| {
        let v = f.value(&s.x);
        (a + v * s.h, b + v * v)
    });
    let scale = if fh > 0.0 && ff > 0.0 { fh / ff } else { 1.0 };
    let coef: Vec<f64> = sol.x.iter().map(|c| c * scale).collect();
    Ok((
        basis.field(&coef)?,
        Solve {
            kept: basis.cols(),
            condition: None,
            coefficient_norm: norm(&coef),
        },
    ))
}

/// Edges where `f` and `h` change sign a different number of times.
pub fn zero_count_mismatches(spec: &PerturbationSpec, f: &EigenField, per_unit: usize) -> usize {
    use rayon::prelude::*;
    let edges: Vec<(&Face, &EdgeRule)> = spec.edges.iter().filter(|(face, _)| face.free_axes().len() == 1).collect();
    edges
        .par_iter()
        .filter(|(face, rule)| {
            let k = face.free_axes()[0];
            let (lo, _) = face.range(k);
            let mut x = face.center();
            let (mut hs, mut fs) = (Vec::new(), Vec::new());
            for i in 0..=per_unit {
                x[k] = lo as f64 + i as f64 / per_unit as f64;
                hs.push(rule.eval(face, &x).0);
                fs.push(f.value(&x));
            }
            count_zeros(&hs) != count_zeros(&fs)
        })
        .count()
}

fn sample_center(samples: &[Sample], n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let lo = samples.iter().map(|s| s.x[k]).fold(f64::INFINITY, f64::min);
            let hi = samples.iter().map(|s| s.x[k]).fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lo + hi)
        })
        .collect()
}

struct C1Errors {
    c1: f64,
    value: f64,
    /// Gradient error along `K` only.
    grad: f64,
    full_grad: f64,
    sup_f: f64,
    /// `min f / h` over plateau points.
    sign_margin: f64,
}

fn c1_errors(f: &EigenField, points: &[Sample]) -> C1Errors {
    use rayon::prelude::*;
    let per: Vec<[f64; 6]> = points
        .par_iter()
        .map(|s| {
            let (v, g) = f.value_grad(&s.x);
            let ev = (v - s.h).abs();
            let diff = |d: usize| (g[d] - s.grad[d]).powi(2);
            let eg = s.tangent.iter().map(|&d| diff(d)).sum::<f64>().sqrt();
            let full = (0..g.len()).map(diff).sum::<f64>().sqrt();
            let margin = if s.plateau { v * s.h / (s.h * s.h) } else { f64::INFINITY };
            [ev + eg, ev, eg, full, v.abs(), margin]
        })
        .collect();
    let max = |i: usize| per.iter().map(|e| e[i]).fold(0.0f64, f64::max);
    C1Errors {
        c1: max(0),
        value: max(1),
        grad: max(2),
        full_grad: max(3),
        sup_f: max(4),
        sign_margin: per.iter().map(|e| e[5]).fold(f64::INFINITY, f64::min),
    }
}

/// Whether two labels prescribe the same `h` on `face` (checked at a few points).
fn same_profile(face: &Face, a: &EdgeRule, b: &EdgeRule) -> bool {
    let free = face.free_axes();
    let (lo, _) = if free.is_empty() { (0, 0) } else { face.range(free[0]) };
    (0..=4).all(|i| {
        let mut x = face.center();
        if let Some(&k) = free.first() {
            x[k] = lo as f64 + i as f64 / 4.0;
        }
        let (ha, ga) = a.eval(face, &x);
        let (hb, gb) = b.eval(face, &x);
        (ha - hb).abs() < 1e-12 && ga.iter().zip(&gb).all(|(p, q)| (p - q).abs() < 1e-12)
    })
}
