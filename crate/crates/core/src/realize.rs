//! Zero sets of prescribed shape from Dirichlet ground states.
//!
//! The first Dirichlet eigenfunction of a bounded domain `A` vanishes on
//! `∂A` and nowhere inside. Rescaled by its frequency `λ` it solves
//! `Δh + h = 0` near `λ·∂A`, and a unit-frequency plane-wave sum fitted to
//! it there has a zero-set component of the same type as `∂A`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eigenfield::EigenField;
use crate::error::{Error, Result};
use crate::nodal::{marching_simplices, mesh_components, sign_grid, Grid, MeshComponent, TopologyRecord, ZeroSetMesh};
use crate::perturb::{c1_error_on, fit_to_samples, FitParams, Sample};

/// Analytic domains in ℝ³. `phi` is negative inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Ball {
        #[serde(default = "one")]
        radius: f64,
    },
    /// The cube `(0, side)³`.
    Cube {
        #[serde(default = "one")]
        side: f64,
    },
    /// Solid torus around the z axis.
    Torus {
        #[serde(default = "major")]
        major: f64,
        #[serde(default = "minor")]
        minor: f64,
    },
    /// `Σ |x_i / r_i|^p < 1`.
    Superellipsoid {
        radii: [f64; 3],
        exponent: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn major() -> f64 {
    2.0
}

fn minor() -> f64 {
    0.8
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Ball { radius } => *radius > 0.0,
            Shape::Cube { side } => *side > 0.0,
            Shape::Torus { major, minor } => *minor > 0.0 && major > minor,
            Shape::Superellipsoid { radii, exponent } => radii.iter().all(|r| *r > 0.0) && *exponent >= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid shape parameters: {self:?}")))
        }
    }

    /// Signed distance (exact for ball, torus and inside the cube; a first
    /// order estimate for superellipsoids).
    pub fn phi(&self, y: &[f64]) -> f64 {
        match self {
            Shape::Ball { radius } => norm(y) - radius,
            Shape::Cube { side } => {
                let c = 0.5 * side;
                let q: Vec<f64> = y.iter().map(|v| (v - c).abs() - c).collect();
                let outside = norm(&q.iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
                outside + q.iter().cloned().fold(f64::NEG_INFINITY, f64::max).min(0.0)
            }
            Shape::Torus { major, minor } => {
                let rho = (y[0] * y[0] + y[1] * y[1]).sqrt() - major;
                (rho * rho + y[2] * y[2]).sqrt() - minor
            }
            Shape::Superellipsoid { radii, exponent } => {
                let s: f64 = y.iter().zip(radii).map(|(v, r)| (v / r).abs().powf(*exponent)).sum();
                let rmin = radii.iter().cloned().fold(f64::INFINITY, f64::min);
                (s.powf(1.0 / exponent) - 1.0) * rmin
            }
        }
    }

    pub fn bbox(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Shape::Ball { radius } => (vec![-radius; 3], vec![*radius; 3]),
            Shape::Cube { side } => (vec![0.0; 3], vec![*side; 3]),
            Shape::Torus { major, minor } => {
                let r = major + minor;
                (vec![-r, -r, -minor], vec![r, r, *minor])
            }
            Shape::Superellipsoid { radii, .. } => (radii.iter().map(|r| -r).collect(), radii.to_vec()),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Where the boundary cuts the segment from an inside node to a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub node: usize,
    pub axis: usize,
    /// `+1` or `−1`.
    pub side: i8,
    /// Distance to the boundary in units of `h`, in `(0, 1]`.
    pub theta: f64,
}

/// A domain sampled on the nodes `origin + i·h`. Flat indices run with the
/// last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelDomain {
    pub h: f64,
    pub origin: Vec<f64>,
    pub dims: Vec<usize>,
    pub inside: Vec<bool>,
    /// Signed distance to the boundary at every node, negative inside.
    pub distance: Vec<f64>,
    pub cuts: Vec<Cut>,
    /// Inside nodes form one face-connected set.
    pub connected: bool,
}

/// Header of a voxel mask: `dims.product()` bytes in `data` (relative to the
/// header), nonzero meaning inside, last axis fastest. Node `i` sits at
/// `origin + i·spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub dims: Vec<usize>,
    pub spacing: f64,
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    pub data: String,
}

const PAD: i64 = 2;

impl VoxelDomain {
    /// Samples `shape` on the multiples of `h`, two nodes of margin.
    pub fn from_shape(shape: &Shape, h: f64) -> Result<Self> {
        shape.validate()?;
        if !(h > 0.0) {
            return Err(Error::domain("grid spacing must be positive"));
        }
        let (lo, hi) = shape.bbox();
        let first: Vec<i64> = lo.iter().map(|v| (v / h).floor() as i64 - PAD).collect();
        let last: Vec<i64> = hi.iter().map(|v| (v / h).ceil() as i64 + PAD).collect();
        let dims: Vec<usize> = first.iter().zip(&last).map(|(a, b)| (b - a + 1) as usize).collect();
        let total: usize = dims.iter().product();
        let coord = |m: &[usize]| -> Vec<f64> { m.iter().zip(&first).map(|(&i, &f)| (f + i as i64) as f64 * h).collect() };
        let n = dims.len();
        let mut distance = vec![0.0; total];
        let mut m = vec![0usize; n];
        for d in distance.iter_mut() {
            *d = shape.phi(&coord(&m));
            bump(&mut m, &dims);
        }
        // Nodes within rounding of the boundary count as outside.
        let tiny = 1e-12 * h;
        let inside: Vec<bool> = distance.iter().map(|&d| d < -tiny).collect();
        let strides = strides(&dims);
        let mut cuts = Vec::new();
        for node in 0..total {
            if !inside[node] {
                continue;
            }
            let mi = unravel(node, &dims);
            let x = coord(&mi);
            for axis in 0..n {
                for side in [-1i8, 1] {
                    let nb = node as i64 + side as i64 * strides[axis] as i64;
                    if inside[nb as usize] {
                        continue;
                    }
                    let mut lo_t = 0.0;
                    let mut hi_t = 1.0;
                    let mut y = x.clone();
                    for _ in 0..60 {
                        let mid = 0.5 * (lo_t + hi_t);
                        y[axis] = x[axis] + side as f64 * mid * h;
                        if shape.phi(&y) < 0.0 {
                            lo_t = mid;
                        } else {
                            hi_t = mid;
                        }
                    }
                    cuts.push(Cut { node, axis, side, theta: hi_t.max(1e-6) });
                }
            }
        }
        let origin = coord(&vec![0; n]);
        Self::assemble(h, origin, dims, inside, distance, cuts)
    }

    /// Builds the domain from a mask. The boundary is taken halfway between
    /// inside and outside nodes; distances are chamfer estimates.
    pub fn from_mask(dims: Vec<usize>, spacing: f64, origin: Vec<f64>, mask: &[u8]) -> Result<Self> {
        let total: usize = dims.iter().product();
        if mask.len() != total {
            return Err(Error::Parse(format!("mask has {} bytes, header implies {total}", mask.len())));
        }
        if origin.len() != dims.len() || !(spacing > 0.0) {
            return Err(Error::Parse("mask origin/spacing do not match its dimensions".into()));
        }
        let inside: Vec<bool> = mask.iter().map(|&b| b != 0).collect();
        let to_out = chamfer(&inside.iter().map(|v| !v).collect::<Vec<_>>(), &dims);
        let to_in = chamfer(&inside, &dims);
        let distance = (0..total)
            .map(|i| if inside[i] { -(to_out[i] - 0.5) * spacing } else { (to_in[i] - 0.5) * spacing })
            .collect();
        let strides = strides(&dims);
        let mut cuts = Vec::new();
        for node in (0..total).filter(|&i| inside[i]) {
            let mi = unravel(node, &dims);
            for axis in 0..dims.len() {
                for side in [-1i8, 1] {
                    let at_edge = if side < 0 { mi[axis] == 0 } else { mi[axis] + 1 == dims[axis] };
                    if at_edge {
                        return Err(Error::domain("mask touches the edge of its grid"));
                    }
                    let nb = (node as i64 + side as i64 * strides[axis] as i64) as usize;
                    if !inside[nb] {
                        cuts.push(Cut { node, axis, side, theta: 0.5 });
                    }
                }
            }
        }
        Self::assemble(spacing, origin, dims, inside, distance, cuts)
    }

    /// Reads a mask header (JSON) and its raw bytes.
    pub fn load_mask(header: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(header)?;
        let hdr: MaskHeader = serde_json::from_str(&text)?;
        let data_path = header.parent().unwrap_or(Path::new(".")).join(&hdr.data);
        let bytes = std::fs::read(data_path)?;
        let origin = hdr.origin.clone().unwrap_or_else(|| vec![0.0; hdr.dims.len()]);
        Self::from_mask(hdr.dims, hdr.spacing, origin, &bytes)
    }

    fn assemble(
        h: f64,
        origin: Vec<f64>,
        dims: Vec<usize>,
        inside: Vec<bool>,
        distance: Vec<f64>,
        cuts: Vec<Cut>,
    ) -> Result<Self> {
        if !inside.iter().any(|&v| v) {
            return Err(Error::domain("domain has no inside nodes"));
        }
        let connected = face_components(&inside, &dims) == 1;
        Ok(Self { h, origin, dims, inside, distance, cuts, connected })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn position(&self, node: usize) -> Vec<f64> {
        unravel(node, &self.dims).iter().zip(&self.origin).map(|(&i, o)| o + i as f64 * self.h).collect()
    }

    /// Multilinear interpolation of the node distances, clamped to the grid.
    pub fn signed_distance(&self, y: &[f64]) -> f64 {
        let n = self.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for k in 0..n {
            let t = ((y[k] - self.origin[k]) / self.h).clamp(0.0, (self.dims[k] - 1) as f64);
            let i = (t.floor() as usize).min(self.dims[k].saturating_sub(2));
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let st = strides(&self.dims);
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..n {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + bit.min(self.dims[k] - 1 - base[k])) * st[k];
            }
            acc += w * self.distance[idx];
        }
        acc
    }

    /// Boundary points, one per cut.
    pub fn boundary_points(&self) -> Vec<Vec<f64>> {
        self.cuts
            .iter()
            .map(|c| {
                let mut y = self.position(c.node);
                y[c.axis] += c.side as f64 * c.theta * self.h;
                y
            })
            .collect()
    }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

fn unravel(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut m = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        m[k] = idx % dims[k];
        idx /= dims[k];
    }
    m
}

fn bump(m: &mut [usize], dims: &[usize]) {
    for k in (0..dims.len()).rev() {
        m[k] += 1;
        if m[k] < dims[k] {
            return;
        }
        m[k] = 0;
    }
}

fn face_components(set: &[bool], dims: &[usize]) -> usize {
    let st = strides(dims);
    let mut seen = vec![false; set.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..set.len() {
        if !set[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let m = unravel(i, dims);
            for k in 0..dims.len() {
                if m[k] > 0 && set[i - st[k]] && !seen[i - st[k]] {
                    seen[i - st[k]] = true;
                    stack.push(i - st[k]);
                }
                if m[k] + 1 < dims[k] && set[i + st[k]] && !seen[i + st[k]] {
                    seen[i + st[k]] = true;
                    stack.push(i + st[k]);
                }
            }
        }
    }
    count
}

/// Two-pass chamfer distance (in node units) to the nearest `seed` node,
/// with exact Euclidean weights for the unit stencil.
fn chamfer(seed: &[bool], dims: &[usize]) -> Vec<f64> {
    let n = dims.len();
    let st = strides(dims);
    let mut offsets: Vec<(Vec<i64>, f64)> = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let off: Vec<i64> = (0..n)
            .map(|_| {
                let v = (c % 3) as i64 - 1;
                c /= 3;
                v
            })
            .collect();
        // Keep the offsets that precede the node in raster order.
        let first = off.iter().position(|&v| v != 0);
        if let Some(p) = first {
            if off[p] < 0 {
                let w = (off.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt();
                offsets.push((off, w));
            }
        }
    }
    let mut d: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let pass = |d: &mut Vec<f64>, sign: i64, order: &mut dyn Iterator<Item = usize>| {
        for i in order {
            let m = unravel(i, dims);
            let mut best = d[i];
            for (off, w) in &offsets {
                let mut j = i as i64;
                let mut ok = true;
                for k in 0..n {
                    let mk = m[k] as i64 + sign * off[k];
                    if mk < 0 || mk >= dims[k] as i64 {
                        ok = false;
                        break;
                    }
                    j += sign * off[k] * st[k] as i64;
                }
                if ok {
                    best = best.min(d[j as usize] + w);
                }
            }
            d[i] = best;
        }
    };
    let len = seed.len();
    pass(&mut d, 1, &mut (0..len));
    pass(&mut d, -1, &mut (0..len).rev());
    d
}

/// Smallest eigenvalue `λ²` of the finite-difference Dirichlet Laplacian and
/// its eigenvector (sup-normalized, positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletEigenpair {
    pub lambda: f64,
    pub eigenvalue: f64,
    /// One value per grid node, zero outside.
    pub vector: Vec<f64>,
    /// `‖Av − λ²v‖ / ‖v‖` at exit.
    pub residual: f64,
    pub iterations: usize,
    pub unknowns: usize,
}

/// The discrete operator `−Δ_h` on inside nodes. A neighbour across the
/// boundary at distance `θh` contributes `u/(θh²)`, which keeps the matrix
/// symmetric and second-order accurate in the eigenvalue.
struct Operator {
    diag: Vec<f64>,
    nbrs: Vec<u32>,
    off: f64,
    deg: usize,
}

const NONE: u32 = u32::MAX;

impl Operator {
    fn new(d: &VoxelDomain) -> (Self, Vec<usize>) {
        let n = d.dim();
        let deg = 2 * n;
        let nodes: Vec<usize> = (0..d.inside.len()).filter(|&i| d.inside[i]).collect();
        let mut index = vec![NONE; d.inside.len()];
        for (u, &node) in nodes.iter().enumerate() {
            index[node] = u as u32;
        }
        let st = strides(&d.dims);
        let h2 = d.h * d.h;
        let mut nbrs = vec![NONE; nodes.len() * deg];
        let mut diag = vec![0.0; nodes.len()];
        for (u, &node) in nodes.iter().enumerate() {
            for axis in 0..n {
                for (s, side) in [-1i64, 1].into_iter().enumerate() {
                    let nb = (node as i64 + side * st[axis] as i64) as usize;
                    if d.inside[nb] {
                        nbrs[u * deg + 2 * axis + s] = index[nb];
                        diag[u] += 1.0 / h2;
                    }
                }
            }
        }
        for c in &d.cuts {
            let u = index[c.node] as usize;
            diag[u] += 1.0 / (c.theta * h2);
        }
        (Self { diag, nbrs, off: -1.0 / h2, deg }, nodes)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (u, yu) in y.iter_mut().enumerate() {
            let mut acc = self.diag[u] * x[u];
            for &v in &self.nbrs[u * self.deg..(u + 1) * self.deg] {
                if v != NONE {
                    acc += self.off * x[v as usize];
                }
            }
            *yu = acc;
        }
    }

    /// Jacobi-preconditioned CG from the initial guess in `x`.
    fn solve(&self, b: &[f64], x: &mut [f64], abs_tol: f64, max_iter: usize) -> usize {
        let len = b.len();
        let mut r = vec![0.0; len];
        self.apply(x, &mut r);
        for i in 0..len {
            r[i] = b[i] - r[i];
        }
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut q = vec![0.0; len];
        for it in 0..max_iter {
            if dot(&r, &r).sqrt() <= abs_tol {
                return it;
            }
            self.apply(&p, &mut q);
            let alpha = rz / dot(&p, &q);
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            for i in 0..len {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        max_iter
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const MAX_OUTER: usize = 200;
const MAX_CG: usize = 20_000;

/// Inverse power iteration (shift 0) until `‖A v − μ v‖ ≤ tol·‖v‖`, with
/// `μ` the Rayleigh quotient.
pub fn dirichlet_ground_state(domain: &VoxelDomain, tol: f64) -> Result<DirichletEigenpair> {
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let (op, nodes) = Operator::new(domain);
    let len = nodes.len();
    // Start from the distance to the boundary: positive, and close to the
    // ground state's shape.
    let mut v: Vec<f64> = nodes.iter().map(|&i| -domain.distance[i]).collect();
    normalize(&mut v);
    let mut av = vec![0.0; len];
    let mut mu = 0.0;
    let mut residual = f64::INFINITY;
    for outer in 0..MAX_OUTER {
        op.apply(&v, &mut av);
        mu = dot(&v, &av);
        residual = av.iter().zip(&v).map(|(a, x)| (a - mu * x).powi(2)).sum::<f64>().sqrt();
        if residual <= tol {
            let vector = scatter(domain, &nodes, &v);
            return Ok(DirichletEigenpair {
                lambda: mu.sqrt(),
                eigenvalue: mu,
                vector,
                residual,
                iterations: outer,
                unknowns: len,
            });
        }
        let mut w: Vec<f64> = v.iter().map(|x| x / mu).collect();
        op.solve(&v, &mut w, 1e-3 * tol / mu, MAX_CG);
        v = w;
        normalize(&mut v);
    }
    let _ = mu;
    Err(Error::NonConvergence { iterations: MAX_OUTER, residual })
}

fn normalize(v: &mut [f64]) {
    let s = dot(v, v).sqrt();
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for x in v.iter_mut() {
        *x *= sign / s;
    }
}

fn scatter(domain: &VoxelDomain, nodes: &[usize], v: &[f64]) -> Vec<f64> {
    let sup = v.iter().cloned().fold(0.0f64, f64::max);
    let mut out = vec![0.0; domain.inside.len()];
    for (&node, x) in nodes.iter().zip(v) {
        out[node] = x / sup;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizeComponentParams {
    pub fit: FitParams,
    /// Samples are taken where the distance to `λ·∂A` is at most this
    /// (rescaled units), on the inside.
    pub shell_half_width: f64,
    /// At most one fit sample per cube of this side (rescaled units).
    pub sample_spacing: f64,
    /// Zero-set extraction spacing (rescaled units); the topology is also
    /// extracted at half of it.
    pub extraction_h: f64,
    pub eigen_tol: f64,
    /// Zero sets whose gradient falls below this fraction of the median are
    /// rejected as degenerate.
    pub gradient_tol: f64,
}

impl Default for RealizeComponentParams {
    fn default() -> Self {
        Self {
            fit: FitParams {
                waves: 400,
                wavenumber: Some(1.0),
                normal_gradient: false,
                sign_refine: false,
                target: 0.01,
                ..FitParams::default()
            },
            shell_half_width: 0.5,
            sample_spacing: 0.3,
            extraction_h: 0.2,
            eigen_tol: 1e-5,
            gradient_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub lambda: f64,
    pub eigenvalue: f64,
    pub eigen_iterations: usize,
    pub fit_samples: usize,
    pub check_samples: usize,
    /// `sup |f − h| + sup ‖∇f − ∇h‖` on the check samples.
    pub achieved_sup_c1_error: f64,
    pub sup_value_error: f64,
    pub sup_grad_error: f64,
    pub target: f64,
    pub target_met: bool,
    pub kept_singular_values: usize,
    pub condition_estimate: Option<f64>,
    pub coefficient_norm: f64,
    pub extraction_h: f64,
    /// Closed components lying in the shell.
    pub candidates: usize,
    pub topology: TopologyRecord,
    pub topology_half_h: Option<TopologyRecord>,
    pub genus_stable: bool,
    pub hausdorff: f64,
    pub within_shell: bool,
    pub min_gradient_ratio: f64,
    pub passed: bool,
}

/// Result of [`realize_component`]; `f` lives in rescaled coordinates.
#[derive(Debug, Clone)]
pub struct RealizedComponent {
    pub f: EigenField,
    pub topology: TopologyRecord,
    pub report: ComponentReport,
    pub eigenpair: DirichletEigenpair,
    pub mesh: ZeroSetMesh,
    pub component: MeshComponent,
}

/// Fits a unit-frequency eigenfunction to the rescaled ground state of
/// `domain` near its boundary and extracts the zero-set component there.
pub fn realize_component(domain: &VoxelDomain, params: &RealizeComponentParams) -> Result<RealizedComponent> {
    if domain.dim() != 3 {
        return Err(Error::domain("realization is implemented in three dimensions"));
    }
    if !domain.connected {
        return Err(Error::domain("domain is not connected"));
    }
    let pair = dirichlet_ground_state(domain, params.eigen_tol)?;
    let lambda = pair.lambda;
    let (all, boundary) = shell_samples(domain, &pair, params.shell_half_width);
    let fit_set: Vec<Sample> = [thin(&all, params.sample_spacing, 0.0), thin(&boundary, params.sample_spacing, 0.0)].concat();
    let check_set = thin(&all, params.sample_spacing, 0.5);
    let check_boundary = thin(&boundary, params.sample_spacing, 0.5);
    let (f, solve) = fit_to_samples(3, &fit_set, &params.fit)?;
    let (ev, eg) = c1_error_on(&f, &check_set);
    let ev = check_boundary.iter().map(|s| f.value(&s.x).abs()).fold(ev, f64::max);
    let c1 = ev + eg;

    let (lo, hi) = bbox_of(domain, lambda);
    let extract = |h: f64| -> Result<(ZeroSetMesh, Vec<MeshComponent>)> {
        let grid = Grid::covering(&lo, &hi, h)?;
        let sg = sign_grid(&f, &grid)?;
        let mesh = marching_simplices(&sg)?;
        let comps = mesh_components(&mesh);
        Ok((mesh, comps))
    };
    let shell = params.shell_half_width;
    let pick = |mesh: &ZeroSetMesh, comps: &[MeshComponent]| -> (usize, Option<usize>) {
        let inside: Vec<usize> = (0..comps.len())
            .filter(|&c| comps[c].topology.component_is_compact)
            .filter(|&c| {
                component_vertices(mesh, &comps[c])
                    .iter()
                    .all(|&v| domain.signed_distance(&scaled(&mesh.vertices[v], 1.0 / lambda)).abs() * lambda <= shell)
            })
            .collect();
        let best = inside.iter().copied().max_by_key(|&c| comps[c].cells.len());
        (inside.len(), best)
    };
    let (mesh, comps) = extract(params.extraction_h)?;
    let (candidates, best) = pick(&mesh, &comps);
    let Some(best) = best else {
        return Err(Error::VerificationFailed {
            stage: "zero set".into(),
            detail: format!("no closed zero-set component within {shell} of the rescaled boundary"),
        });
    };
    let component = comps[best].clone();
    let verts = component_vertices(&mesh, &component);
    let grads: Vec<f64> = verts.iter().map(|&v| norm(&f.gradient(&mesh.vertices[v]))).collect();
    let mut sorted = grads.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let min_ratio = if median > 0.0 { sorted[0] / median } else { 0.0 };
    if min_ratio < params.gradient_tol {
        let at = verts[grads.iter().position(|&g| g == sorted[0]).unwrap_or(0)];
        return Err(Error::DegenerateZeroSet { gradient: sorted[0], location: mesh.vertices[at].clone() });
    }
    let to_boundary = verts
        .iter()
        .map(|&v| domain.signed_distance(&scaled(&mesh.vertices[v], 1.0 / lambda)).abs() * lambda)
        .fold(0.0f64, f64::max);
    let targets: Vec<Vec<f64>> = domain.boundary_points().iter().map(|y| scaled(y, lambda)).collect();
    let pts: Vec<Vec<f64>> = verts.iter().map(|&v| mesh.vertices[v].clone()).collect();
    let from_boundary = directed_distance(&targets, &pts, shell);
    let hausdorff = to_boundary.max(from_boundary);

    let (mesh2, comps2) = extract(0.5 * params.extraction_h)?;
    let (_, best2) = pick(&mesh2, &comps2);
    let topology_half = best2.map(|c| comps2[c].topology.clone());
    let topology = component.topology.clone();
    let genus_stable = topology_half.as_ref().is_some_and(|t| t.genus == topology.genus);
    let within_shell = hausdorff < shell;
    let report = ComponentReport {
        lambda,
        eigenvalue: pair.eigenvalue,
        eigen_iterations: pair.iterations,
        fit_samples: fit_set.len(),
        check_samples: check_set.len() + check_boundary.len(),
        achieved_sup_c1_error: c1,
        sup_value_error: ev,
        sup_grad_error: eg,
        target: params.fit.target,
        target_met: c1 <= params.fit.target,
        kept_singular_values: solve.kept_singular_values,
        condition_estimate: solve.condition_estimate,
        coefficient_norm: solve.coefficient_norm,
        extraction_h: params.extraction_h,
        candidates,
        topology: topology.clone(),
        topology_half_h: topology_half,
        genus_stable,
        hausdorff,
        within_shell,
        min_gradient_ratio: min_ratio,
        passed: genus_stable && within_shell && topology.genus.is_some(),
    };
    Ok(RealizedComponent { f, topology, report, eigenpair: pair, mesh, component })
}

fn scaled(y: &[f64], s: f64) -> Vec<f64> {
    y.iter().map(|v| v * s).collect()
}

fn bbox_of(domain: &VoxelDomain, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = domain.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for y in domain.boundary_points() {
        for k in 0..n {
            lo[k] = lo[k].min(y[k] * lambda - 1.0);
            hi[k] = hi[k].max(y[k] * lambda + 1.0);
        }
    }
    (lo, hi)
}

fn component_vertices(mesh: &ZeroSetMesh, comp: &MeshComponent) -> Vec<usize> {
    let mut v: Vec<usize> = comp.cells.iter().flat_map(|&c| mesh.cells[c].iter().map(|&i| i as usize)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Rescaled samples of the ground state: every inside node within the
/// shell (value and full gradient) and every boundary cut (value zero and
/// the derivative along the cut axis).
fn shell_samples(domain: &VoxelDomain, pair: &DirichletEigenpair, shell: f64) -> (Vec<Sample>, Vec<Sample>) {
    let lambda = pair.lambda;
    let h = domain.h;
    let v = &pair.vector;
    let st = strides(&domain.dims);
    let mut cut_at: HashMap<(usize, usize, i8), f64> = HashMap::new();
    for c in &domain.cuts {
        cut_at.insert((c.node, c.axis, c.side), c.theta);
    }
    let n = domain.dim();
    // Value and distance of the neighbour of `node` on `side` of `axis`.
    let step = |node: usize, axis: usize, side: i8| -> (f64, f64) {
        match cut_at.get(&(node, axis, side)) {
            Some(&theta) => (0.0, theta * h),
            None => (v[(node as i64 + side as i64 * st[axis] as i64) as usize], h),
        }
    };
    let mut interior = Vec::new();
    for node in 0..domain.inside.len() {
        if !domain.inside[node] || -domain.distance[node] * lambda > shell {
            continue;
        }
        let grad: Vec<f64> = (0..n)
            .map(|axis| {
                let (fp, dp) = step(node, axis, 1);
                let (fm, dm) = step(node, axis, -1);
                let f0 = v[node];
                (dm * dm * fp - dp * dp * fm + (dp * dp - dm * dm) * f0) / (dm * dp * (dm + dp)) / lambda
            })
            .collect();
        interior.push(Sample {
            x: scaled(&domain.position(node), lambda),
            h: v[node],
            grad,
            tangent: (0..n).collect(),
            plateau: false,
            scale: 1.0,
        });
    }
    let mut boundary = Vec::new();
    for c in &domain.cuts {
        let d1 = c.theta * h;
        let vi = v[c.node];
        let inward = (c.node as i64 - c.side as i64 * st[c.axis] as i64) as usize;
        let outward_slope = if domain.inside[inward] && !cut_at.contains_key(&(c.node, c.axis, -c.side)) {
            let d2 = d1 + h;
            (vi * d2 * d2 - v[inward] * d1 * d1) / (d1 * d2 * (d1 - d2))
        } else {
            -vi / d1
        };
        let mut y = domain.position(c.node);
        y[c.axis] += c.side as f64 * d1;
        let mut grad = vec![0.0; n];
        grad[c.axis] = c.side as f64 * outward_slope / lambda;
        boundary.push(Sample { x: scaled(&y, lambda), h: 0.0, grad, tangent: vec![c.axis], plateau: false, scale: 1.0 });
    }
    (interior, boundary)
}

/// First sample in every cube `spacing·(k + offset + [0,1)ⁿ)`.
fn thin(samples: &[Sample], spacing: f64, offset: f64) -> Vec<Sample> {
    let mut seen = std::collections::HashSet::new();
    samples
        .iter()
        .filter(|s| seen.insert(s.x.iter().map(|v| (v / spacing + offset).floor() as i64).collect::<Vec<_>>()))
        .cloned()
        .collect()
}

/// `max_a min_b |a − b|`, using buckets of side `cell`.
fn directed_distance(from: &[Vec<f64>], to: &[Vec<f64>], cell: f64) -> f64 {
    if to.is_empty() {
        return f64::INFINITY;
    }
    let key = |p: &[f64]| -> Vec<i64> { p.iter().map(|v| (v / cell).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, p) in to.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    for a in from {
        let k = key(a);
        let mut best = f64::INFINITY;
        for code in 0..3i64.pow(k.len() as u32) {
            let mut c = code;
            let kk: Vec<i64> = k
                .iter()
                .map(|v| {
                    let o = c % 3 - 1;
                    c /= 3;
                    v + o
                })
                .collect();
            if let Some(list) = buckets.get(&kk) {
                for &i in list {
                    best = best.min(dist(a, &to[i]));
                }
            }
        }
        if best > cell {
            best = to.iter().map(|b| dist(a, b)).fold(f64::INFINITY, f64::min);
        }
        worst = worst.max(best);
    }
    worst
}

/// Domain description accepted on the command line: a shape JSON, or a
/// mask header JSON (which has `dims`).
pub fn load_domain(path: &Path, h: f64) -> Result<VoxelDomain> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("dims").is_some() {
        VoxelDomain::load_mask(path)
    } else {
        let shape: Shape = serde_json::from_value(value)?;
        VoxelDomain::from_shape(&shape, h)
    }
}
