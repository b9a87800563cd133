//! Exactly evaluable solutions of `Δf + κ²f = 0`: plane-wave sums,
//! Bessel × harmonic sums, the lattice sine products and affine
//! combinations of these, plus random sampling of monochromatic waves.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{self, HarmonicIndex};

/// One plane wave `a cos⟨k, x−c⟩ + b sin⟨k, x−c⟩`; `|k|` is its wavenumber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub k: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesselTerm {
    pub l: usize,
    pub m: usize,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EigenField {
    /// `Σ a_j cos⟨k_j, x−center⟩ + b_j sin⟨k_j, x−center⟩`.
    PlaneWaveSum {
        n: usize,
        center: Vec<f64>,
        terms: Vec<PlaneWave>,
    },
    /// `Σ c_{lm} Y^l_m(x/|x|) J_{l+ν}(|x|)/|x|^ν`, unit wavenumber.
    BesselHarmonicSum { n: usize, terms: Vec<BesselTerm> },
    /// `Π sin(π x_i)`, eigenvalue `nπ²`.
    ProductSines { n: usize },
    /// `sin πx sin πy + sin πx sin πz + sin πy sin πz`, eigenvalue `2π²`.
    Classic2Sines,
    /// `base + scale · add`; both parts share one eigenvalue.
    Affine {
        n: usize,
        base: Box<EigenField>,
        add: Box<EigenField>,
        scale: f64,
    },
    /// `inner(factor · x)`.
    Rescaled {
        n: usize,
        inner: Box<EigenField>,
        factor: f64,
    },
}

const EIGEN_RTOL: f64 = 1e-9;

impl EigenField {
    pub fn plane_wave_sum(n: usize, center: Vec<f64>, terms: Vec<PlaneWave>) -> Result<Self> {
        if center.len() != n || terms.iter().any(|t| t.k.len() != n) {
            return Err(Error::domain("plane-wave dimensions disagree"));
        }
        let f = EigenField::PlaneWaveSum { n, center, terms };
        f.validate()?;
        Ok(f)
    }

    pub fn affine(base: EigenField, add: EigenField, scale: f64) -> Result<Self> {
        let n = base.dim();
        let f = EigenField::Affine {
            n,
            base: Box::new(base),
            add: Box::new(add),
            scale,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn rescaled(inner: EigenField, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::domain(format!("rescale factor {factor} must be positive")));
        }
        Ok(EigenField::Rescaled {
            n: inner.dim(),
            inner: Box::new(inner),
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            EigenField::PlaneWaveSum { n, .. }
            | EigenField::BesselHarmonicSum { n, .. }
            | EigenField::ProductSines { n }
            | EigenField::Affine { n, .. }
            | EigenField::Rescaled { n, .. } => *n,
            EigenField::Classic2Sines => 3,
        }
    }

    /// Checks dimensions, finiteness and that every part shares one
    /// eigenvalue.
    pub fn validate(&self) -> Result<()> {
        match self {
            EigenField::PlaneWaveSum { n, center, terms } => {
                if center.len() != *n {
                    return Err(Error::domain("center has wrong dimension"));
                }
                for t in terms {
                    if t.k.len() != *n || !t.a.is_finite() || !t.b.is_finite() || t.k.iter().any(|v| !v.is_finite()) {
                        return Err(Error::domain("malformed plane wave"));
                    }
                }
            }
            EigenField::BesselHarmonicSum { n, terms } => {
                for t in terms {
                    HarmonicIndex::new(t.l, t.m).validate(*n)?;
                    if !t.c.is_finite() {
                        return Err(Error::domain("non-finite Bessel coefficient"));
                    }
                }
            }
            EigenField::ProductSines { n } => {
                if *n == 0 {
                    return Err(Error::domain("dimension must be positive"));
                }
            }
            EigenField::Classic2Sines => {}
            EigenField::Affine { n, base, add, scale } => {
                base.validate()?;
                add.validate()?;
                if base.dim() != *n || add.dim() != *n || !scale.is_finite() {
                    return Err(Error::domain("affine parts disagree in dimension"));
                }
            }
            EigenField::Rescaled { n, inner, factor } => {
                inner.validate()?;
                if inner.dim() != *n || !(*factor > 0.0) {
                    return Err(Error::domain("bad rescaling"));
                }
            }
        }
        self.eigenvalue().map(|_| ())
    }

    /// The `λ` with `Δf + λf = 0`. An empty plane-wave sum is the zero
    /// function and reports `0`.
    pub fn eigenvalue(&self) -> Result<f64> {
        match self {
            EigenField::PlaneWaveSum { terms, .. } => {
                let mut it = terms.iter().map(|t| t.k.iter().map(|v| v * v).sum::<f64>());
                let first = match it.next() {
                    Some(v) => v,
                    None => return Ok(0.0),
                };
                for v in it {
                    if (v - first).abs() > EIGEN_RTOL * first.max(1.0) {
                        return Err(Error::domain(format!("mixed wavenumbers {} and {}", first.sqrt(), v.sqrt())));
                    }
                }
                Ok(first)
            }
            EigenField::BesselHarmonicSum { .. } => Ok(1.0),
            EigenField::ProductSines { n } => Ok(*n as f64 * PI * PI),
            EigenField::Classic2Sines => Ok(2.0 * PI * PI),
            EigenField::Affine { base, add, scale, .. } => {
                let a = base.eigenvalue()?;
                let b = add.eigenvalue()?;
                if *scale == 0.0 || b == 0.0 {
                    return Ok(a);
                }
                if a == 0.0 {
                    return Ok(b);
                }
                if (a - b).abs() > EIGEN_RTOL * a.max(1.0) {
                    return Err(Error::domain(format!("affine combination of eigenvalues {a} and {b}")));
                }
                Ok(a)
            }
            EigenField::Rescaled { inner, factor, .. } => Ok(inner.eigenvalue()? * factor * factor),
        }
    }

    /// `Some(κ)` when the field is a plane-wave sum of a single wavenumber.
    pub fn wavenumber(&self) -> Option<f64> {
        match self {
            EigenField::PlaneWaveSum { .. } => self.eigenvalue().ok().map(f64::sqrt),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval(x, false).0
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x, true).1
    }

    pub fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.eval(x, true)
    }

    fn eval(&self, x: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        match self {
            EigenField::PlaneWaveSum { center, terms, .. } => {
                let mut v = 0.0;
                let mut g = vec![0.0; n];
                for t in terms {
                    let phase: f64 = t.k.iter().zip(x).zip(center).map(|((k, x), c)| k * (x - c)).sum();
                    let (s, c) = phase.sin_cos();
                    v += t.a * c + t.b * s;
                    if want_grad {
                        let d = -t.a * s + t.b * c;
                        for (gi, ki) in g.iter_mut().zip(&t.k) {
                            *gi += d * ki;
                        }
                    }
                }
                (v, g)
            }
            EigenField::BesselHarmonicSum { n, terms } => {
                let nu = specfun::order_for_dim(*n);
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut v = 0.0;
                let mut g = vec![0.0; *n];
                for t in terms {
                    let idx = HarmonicIndex::new(t.l, t.m);
                    let (s, ds) = specfun::solid_harmonic(*n, idx, x).expect("validated index");
                    let mu = t.l as f64 + nu;
                    let radial = specfun::bessel_jr(mu, r).expect("nonnegative radius");
                    v += t.c * s * radial;
                    if want_grad {
                        // d/dx_i G_μ(r) = -x_i G_{μ+1}(r)
                        let radial1 = specfun::bessel_jr(mu + 1.0, r).expect("nonnegative radius");
                        for i in 0..*n {
                            g[i] += t.c * (ds[i] * radial - s * radial1 * x[i]);
                        }
                    }
                }
                (v, g)
            }
            EigenField::ProductSines { .. } => {
                let sc: Vec<(f64, f64)> = x.iter().map(|v| (PI * v).sin_cos()).collect();
                let v: f64 = sc.iter().map(|p| p.0).product();
                let mut g = vec![0.0; n];
                if want_grad {
                    for i in 0..n {
                        let mut p = PI * sc[i].1;
                        for (j, s) in sc.iter().enumerate() {
                            if j != i {
                                p *= s.0;
                            }
                        }
                        g[i] = p;
                    }
                }
                (v, g)
            }
            EigenField::Classic2Sines => {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                let (sz, cz) = (PI * x[2]).sin_cos();
                let v = sx * sy + sx * sz + sy * sz;
                let g = vec![PI * cx * (sy + sz), PI * cy * (sx + sz), PI * cz * (sx + sy)];
                (v, g)
            }
            EigenField::Affine { base, add, scale, .. } => {
                let (v0, g0) = base.eval(x, want_grad);
                if *scale == 0.0 {
                    return (v0, g0);
                }
                let (v1, g1) = add.eval(x, want_grad);
                let g = g0.iter().zip(&g1).map(|(a, b)| a + scale * b).collect();
                (v0 + scale * v1, g)
            }
            EigenField::Rescaled { inner, factor, .. } => {
                let y: Vec<f64> = x.iter().map(|v| v * factor).collect();
                let (v, g) = inner.eval(&y, want_grad);
                (v, g.into_iter().map(|d| d * factor).collect())
            }
        }
    }

    /// Values on the tensor grid `axes[0] × axes[1] × …`, last axis fastest.
    pub fn evaluate_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(axes.len(), n, "grid dimension");
        let total: usize = axes.iter().map(Vec::len).product();
        match self {
            EigenField::PlaneWaveSum { center, terms, .. } => {
                let mut out = vec![0.0; total];
                plane_wave_grid(center, terms, axes, &mut out, 1.0);
                out
            }
            EigenField::Affine { base, add, scale, .. } => {
                let mut out = base.evaluate_grid(axes);
                if *scale != 0.0 {
                    if let EigenField::PlaneWaveSum { center, terms, .. } = add.as_ref() {
                        plane_wave_grid(center, terms, axes, &mut out, *scale);
                    } else {
                        for (o, v) in out.iter_mut().zip(add.evaluate_grid(axes)) {
                            *o += scale * v;
                        }
                    }
                }
                out
            }
            EigenField::Rescaled { inner, factor, .. } => {
                let scaled: Vec<Vec<f64>> = axes.iter().map(|a| a.iter().map(|v| v * factor).collect()).collect();
                inner.evaluate_grid(&scaled)
            }
            _ => {
                let mut out = vec![0.0; total];
                let mut idx = vec![0usize; n];
                let mut x = vec![0.0; n];
                for o in out.iter_mut() {
                    for d in 0..n {
                        x[d] = axes[d][idx[d]];
                    }
                    *o = self.value(&x);
                    for d in (0..n).rev() {
                        idx[d] += 1;
                        if idx[d] < axes[d].len() {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
                out
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: EigenField = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }
}

/// Adds `scale · Σ terms` on a tensor grid. Each wave factors across axes,
/// so only per-axis phases are computed with trigonometric calls.
fn plane_wave_grid(center: &[f64], terms: &[PlaneWave], axes: &[Vec<f64>], out: &mut [f64], scale: f64) {
    let n = axes.len();
    let inner = axes[n - 1].len();
    let outer = out.len() / inner.max(1);
    let mut phase: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    let mut partial = vec![(0.0f64, 0.0f64); outer];
    for t in terms {
        for d in 0..n {
            phase[d] = axes[d]
                .iter()
                .map(|x| {
                    let (s, c) = (t.k[d] * (x - center[d])).sin_cos();
                    (c, s)
                })
                .collect();
        }
        // Product of leading-axis phases, one entry per row of the last axis.
        let mut idx = vec![0usize; n - 1];
        for p in partial.iter_mut() {
            let mut z = (1.0, 0.0);
            for d in 0..n - 1 {
                z = cmul(z, phase[d][idx[d]]);
            }
            *p = z;
            for d in (0..n - 1).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        let (a, b) = (scale * t.a, scale * t.b);
        let last = &phase[n - 1];
        for (row, p) in out.chunks_mut(inner).zip(&partial) {
            for (o, q) in row.iter_mut().zip(last) {
                let (c, s) = cmul(*p, *q);
                *o += a * c + b * s;
            }
        }
    }
}

#[inline]
fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSampleParams {
    pub n: usize,
    pub waves: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl FieldSampleParams {
    pub fn monochromatic(n: usize, waves: usize, seed: u64) -> Self {
        Self { n, waves, seed, alpha: 1.0 }
    }
}

/// Random wave `N^{-1/2} Σ a_j cos⟨x,ξ_j⟩ + b_j sin⟨x,ξ_j⟩` with Gaussian
/// coefficients and `ξ_j` uniform on the sphere (or the annulus `α ≤ |ξ| ≤ 1`).
pub fn sample_rpw(params: &FieldSampleParams) -> Result<EigenField> {
    let FieldSampleParams { n, waves, seed, alpha } = *params;
    if n < 1 || waves == 0 || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("invalid sampling parameters {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = 1.0 / (waves as f64).sqrt();
    let mut terms = Vec::with_capacity(waves);
    for _ in 0..waves {
        let mut k = random_unit(&mut rng, n);
        if alpha < 1.0 {
            let lo = alpha.powi(n as i32);
            let u: f64 = rng.gen();
            let r = (lo + u * (1.0 - lo)).powf(1.0 / n as f64);
            k.iter_mut().for_each(|v| *v *= r);
        }
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        terms.push(PlaneWave { k, a: a * norm, b: b * norm });
    }
    let f = EigenField::PlaneWaveSum {
        n,
        center: vec![0.0; n],
        terms,
    };
    if alpha == 1.0 {
        f.validate()?;
    }
    Ok(f)
}

fn random_unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r > 1e-12 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}

pub fn bessel_mode(n: usize, l: usize, m: usize) -> Result<EigenField> {
    HarmonicIndex::new(l, m).validate(n)?;
    Ok(EigenField::BesselHarmonicSum {
        n,
        terms: vec![BesselTerm { l, m, c: 1.0 }],
    })
}

/// Quadrature tolerance used by [`planewave_transform_check`].
pub const TRANSFORM_TOL: f64 = 1e-10;

/// Both sides of the spherical Fourier identity for `Y^l_m`:
/// `lhs = Re(i^l ∫ e^{-i⟨x,ξ⟩} Y(ξ) dσ)` by quadrature and
/// `rhs = (2π)^{n/2} Y(x/|x|) J_{l+ν}(|x|)/|x|^ν`.
pub fn planewave_transform_check(n: usize, l: usize, m: usize, x: &[f64]) -> Result<(f64, f64)> {
    let idx = HarmonicIndex::new(l, m);
    idx.validate(n)?;
    if x.len() != n {
        return Err(Error::domain("point has wrong dimension"));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::domain("transform check needs |x| > 0"));
    }
    let nu = specfun::order_for_dim(n);
    // |x|^l Y(x/|x|) · J_{l+ν}(r)/r^{l+ν}
    let rhs = (2.0 * PI).powf(n as f64 / 2.0)
        * specfun::solid_harmonic(n, idx, x)?.0
        * specfun::bessel_jr(l as f64 + nu, r)?;

    let mut m_pts = (r + l as f64).ceil() as usize + 16;
    let mut prev = sphere_transform(n, idx, x, m_pts);
    for _ in 0..6 {
        m_pts *= 2;
        let cur = sphere_transform(n, idx, x, m_pts);
        let est = (cur - prev).abs();
        if est <= TRANSFORM_TOL {
            return Ok((cur, rhs));
        }
        prev = cur;
    }
    let cur = sphere_transform(n, idx, x, 2 * m_pts);
    Err(Error::Quadrature {
        estimate: (cur - prev).abs(),
        tolerance: TRANSFORM_TOL,
    })
}

/// `Re(i^l ∫ e^{-i⟨x,ξ⟩} Y(ξ) dσ)` with `m` nodes per angular direction.
fn sphere_transform(n: usize, idx: HarmonicIndex, x: &[f64], m: usize) -> f64 {
    // i^l e^{-iφ}: real part cos(φ - lπ/2).
    let shift = idx.l as f64 * PI / 2.0;
    let integrand = |xi: &[f64]| {
        let phase: f64 = xi.iter().zip(x).map(|(a, b)| a * b).sum();
        (phase - shift).cos() * specfun::solid_harmonic(n, idx, xi).expect("validated").0
    };
    match n {
        2 => {
            let w = 2.0 * PI / m as f64;
            (0..m)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / m as f64;
                    integrand(&[t.cos(), t.sin()])
                })
                .sum::<f64>()
                * w
        }
        _ => {
            let (nodes, weights) = specfun::gauss_legendre(m);
            let nphi = 2 * m;
            let wphi = 2.0 * PI / nphi as f64;
            let mut s = 0.0;
            for (ct, wt) in nodes.iter().zip(&weights) {
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                for j in 0..nphi {
                    let p = 2.0 * PI * j as f64 / nphi as f64;
                    s += wt * wphi * integrand(&[st * p.cos(), st * p.sin(), *ct]);
                }
            }
            s
        }
    }
}

/// `count` unit vectors covering one closed hemisphere nearly uniformly:
/// equal angles on `[0, π)` for `n = 2`, a Fibonacci spiral in `z > 0` for
/// `n = 3`. Together with their negatives they equidistribute on the sphere.
pub fn hemisphere_directions(n: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    match n {
        2 => Ok((0..count)
            .map(|j| {
                let t = PI * j as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect()),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            Ok((0..count)
                .map(|i| {
                    let z = (i as f64 + 0.5) / count as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let p = golden * i as f64;
                    vec![rho * p.cos(), rho * p.sin(), z]
                })
                .collect())
        }
        _ => Err(Error::domain(format!("direction sets only for n in {{2,3}}, got {n}"))),
    }
}

/// Hemisphere directions whose first `m` entries do not depend on `count`,
/// so bases of growing size are nested: golden-ratio angles for `n = 2`,
/// the R2 low-discrepancy sequence mapped to `z > 0` for `n = 3`.
pub fn nested_directions(n: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    let frac = |v: f64| v - v.floor();
    match n {
        2 => {
            let a = (5f64.sqrt() - 1.0) / 2.0;
            Ok((0..count)
                .map(|i| {
                    let t = PI * frac(0.5 + a * i as f64);
                    vec![t.cos(), t.sin()]
                })
                .collect())
        }
        3 => {
            // Plastic number g; (1/g, 1/g²) is the R2 step.
            let g = 1.324_717_957_244_746_f64;
            Ok((0..count)
                .map(|i| {
                    let u = frac(0.5 + i as f64 / g);
                    let v = frac(0.5 + i as f64 / (g * g));
                    let z = u;
                    let rho = (1.0 - z * z).sqrt();
                    let p = 2.0 * PI * v;
                    vec![rho * p.cos(), rho * p.sin(), z]
                })
                .collect())
        }
        _ => Err(Error::domain(format!("direction sets only for n in {{2,3}}, got {n}"))),
    }
}

/// Plane-wave quadrature of the Bessel mode `(n, l, m)` with `count`
/// antipodal pairs, and its sup error against the exact mode on a test set
/// in the ball of radius `radius`.
pub fn approximate_mode_by_planewaves(
    n: usize,
    l: usize,
    m: usize,
    count: usize,
    radius: f64,
) -> Result<(EigenField, f64)> {
    let idx = HarmonicIndex::new(l, m);
    idx.validate(n)?;
    if count == 0 {
        return Err(Error::domain("need at least one direction"));
    }
    let dirs = hemisphere_directions(n, count)?;
    let w = specfun::sphere_area(n) / (2.0 * count as f64);
    let pre = (2.0 * PI).powf(-(n as f64) / 2.0) * w * 2.0;
    let terms = dirs
        .into_iter()
        .map(|xi| {
            let y = specfun::solid_harmonic(n, idx, &xi).expect("validated").0;
            let (a, b) = if l % 2 == 0 {
                let sign = if (l / 2) % 2 == 0 { 1.0 } else { -1.0 };
                (pre * sign * y, 0.0)
            } else {
                let sign = if ((l + 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
                (0.0, -pre * sign * y)
            };
            PlaneWave { k: xi, a, b }
        })
        .collect();
    let field = EigenField::PlaneWaveSum {
        n,
        center: vec![0.0; n],
        terms,
    };
    let exact = bessel_mode(n, l, m)?;
    let err = ball_test_points(n, radius)
        .iter()
        .map(|x| (field.value(x) - exact.value(x)).abs())
        .fold(0.0, f64::max);
    Ok((field, err))
}

/// Deterministic points on concentric spheres filling the ball.
fn ball_test_points(n: usize, radius: f64) -> Vec<Vec<f64>> {
    let shells = 12;
    let per = if n == 2 { 48 } else { 160 };
    let mut pts = vec![vec![0.0; n]];
    for s in 1..=shells {
        let r = radius * s as f64 / shells as f64;
        let dirs = match n {
            2 => (0..per)
                .map(|j| {
                    let t = 2.0 * PI * (j as f64 + 0.5 * (s % 2) as f64) / per as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect::<Vec<_>>(),
            _ => {
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..per)
                    .map(|i| {
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / per as f64;
                        let rho = (1.0 - z * z).sqrt();
                        let p = golden * i as f64 + s as f64;
                        vec![rho * p.cos(), rho * p.sin(), z]
                    })
                    .collect()
            }
        };
        pts.extend(dirs.into_iter().map(|d| d.into_iter().map(|v| v * r).collect::<Vec<_>>()));
    }
    pts
}

/// `max |Δ_h f + λ f|` over the interior nodes of a grid of spacing `h`
/// filling `bounds`, with `λ` the field's own eigenvalue.
pub fn laplacian_residual(f: &EigenField, bounds: &[(f64, f64)], h: f64) -> Result<f64> {
    let n = f.dim();
    if bounds.len() != n || !(h > 0.0) {
        return Err(Error::domain("bad residual grid"));
    }
    let lambda = f.eigenvalue()?;
    let counts: Vec<usize> = bounds.iter().map(|(a, b)| ((b - a) / h).round() as usize + 1).collect();
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .zip(&counts)
        .map(|((a, _), c)| (0..*c).map(|i| a + h * i as f64).collect())
        .collect();
    let vals = f.evaluate_grid(&axes);
    let mut strides = vec![1usize; n];
    for d in (0..n.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * counts[d + 1];
    }
    let mut worst: f64 = 0.0;
    'cells: for (i, v) in vals.iter().enumerate() {
        let mut lap = 0.0;
        for d in 0..n {
            let c = (i / strides[d]) % counts[d];
            if c == 0 || c + 1 == counts[d] {
                continue 'cells;
            }
            lap += vals[i + strides[d]] + vals[i - strides[d]] - 2.0 * v;
        }
        worst = worst.max((lap / (h * h) + lambda * v).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(f: &EigenField, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut q = x.to_vec();
                p[i] += h;
                q[i] -= h;
                (f.value(&p) - f.value(&q)) / (2.0 * h)
            })
            .collect()
    }

    fn sample_fields() -> Vec<EigenField> {
        let pw = sample_rpw(&FieldSampleParams::monochromatic(3, 20, 4)).unwrap();
        vec![
            EigenField::ProductSines { n: 3 },
            EigenField::ProductSines { n: 2 },
            EigenField::Classic2Sines,
            pw.clone(),
            EigenField::BesselHarmonicSum {
                n: 3,
                terms: vec![
                    BesselTerm { l: 0, m: 1, c: 1.0 },
                    BesselTerm { l: 3, m: 5, c: -0.7 },
                ],
            },
            EigenField::BesselHarmonicSum {
                n: 2,
                terms: vec![BesselTerm { l: 2, m: 2, c: 1.3 }],
            },
            EigenField::rescaled(EigenField::ProductSines { n: 3 }, 1.0 / (PI * 3f64.sqrt())).unwrap(),
            EigenField::affine(EigenField::rescaled(EigenField::ProductSines { n: 3 }, 1.0 / (PI * 3f64.sqrt())).unwrap(), pw, 0.3).unwrap(),
        ]
    }

    #[test]
    fn point_values() {
        assert!((EigenField::ProductSines { n: 3 }.value(&[0.5, 0.5, 0.5]) - 1.0).abs() < 1e-15);
        let f = EigenField::plane_wave_sum(3, vec![0.0; 3], vec![PlaneWave { k: vec![1.0, 0.0, 0.0], a: 1.0, b: 0.0 }]).unwrap();
        assert!((f.value(&[PI, 0.0, 0.0]) + 1.0).abs() < 1e-15);
        let g = EigenField::ProductSines { n: 3 }.gradient(&[0.5, 0.5, 0.5]);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for f in sample_fields() {
            let n = f.dim();
            for _ in 0..100 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let g = f.gradient(&x);
                let fd = fd_gradient(&f, &x, h);
                for i in 0..n {
                    assert!((g[i] - fd[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "{f:?} at {x:?}");
                }
            }
        }
    }

    #[test]
    fn residual_is_second_order() {
        for f in sample_fields() {
            let n = f.dim();
            let bounds = vec![(0.1, 0.6); n];
            let r1 = laplacian_residual(&f, &bounds, 0.02).unwrap();
            let r2 = laplacian_residual(&f, &bounds, 0.01).unwrap();
            let ratio = r1 / r2;
            assert!((ratio - 4.0).abs() < 0.8, "{f:?}: ratio {ratio}");
        }
    }

    #[test]
    fn residual_bounds() {
        let h = 0.01;
        let r = laplacian_residual(&EigenField::ProductSines { n: 3 }, &[(0.0, 1.0); 3], h).unwrap();
        assert!(r <= 10.0 * h * h * 3.0 * PI * PI);
        let pw = sample_rpw(&FieldSampleParams::monochromatic(3, 8, 2)).unwrap();
        assert!(laplacian_residual(&pw, &[(0.0, 1.0); 3], h).unwrap() <= 10.0 * h * h);
    }

    #[test]
    fn grid_evaluation_matches_pointwise() {
        let axes = vec![vec![-1.0, 0.3, 2.0], vec![0.0, 0.7], vec![-0.2, 0.1, 0.4, 5.0]];
        for f in sample_fields().into_iter().filter(|f| f.dim() == 3) {
            let g = f.evaluate_grid(&axes);
            let mut i = 0;
            for a in &axes[0] {
                for b in &axes[1] {
                    for c in &axes[2] {
                        assert!((g[i] - f.value(&[*a, *b, *c])).abs() < 1e-12);
                        i += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn bessel_mode_examples() {
        let f = bessel_mode(3, 0, 1).unwrap();
        assert!(f.value(&[PI, 0.0, 0.0]).abs() < 1e-15);
        let c = f.value(&[0.0; 3]);
        assert!(c.is_finite() && c > 0.0);
        let g = bessel_mode(2, 0, 1).unwrap();
        assert!(g.value(&[2.404825557695773, 0.0]).abs() < 1e-10);
    }

    #[test]
    fn transform_examples() {
        let (l, r) = planewave_transform_check(3, 0, 1, &[0.0, 0.0, PI]).unwrap();
        assert!(l.abs() < 1e-8 && r.abs() < 1e-8);
        let x = PI / 2.0;
        let expect = 2.0 * PI.sqrt() * (x.sin() / x);
        let (l, r) = planewave_transform_check(3, 0, 1, &[x, 0.0, 0.0]).unwrap();
        assert!((l - expect).abs() < 1e-10 && (r - expect).abs() < 1e-10);
        let (l, r) = planewave_transform_check(2, 0, 1, &[1e-9, 0.0]).unwrap();
        let expect = (2.0 * PI).sqrt();
        assert!((l - expect).abs() < 1e-9 && (r - expect).abs() < 1e-9);
    }

    #[test]
    fn transform_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = if rng.gen_bool(0.5) { 2 } else { 3 };
            let l = rng.gen_range(0..=6);
            let m = rng.gen_range(1..=specfun::harmonic_dim(n, l).unwrap());
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let (a, b) = planewave_transform_check(n, l, m, &x).unwrap();
            assert!((a - b).abs() < 1e-7, "n={n} l={l} m={m}: {a} vs {b}");
        }
    }

    #[test]
    fn planewave_approximation_improves() {
        let (_, e100) = approximate_mode_by_planewaves(3, 2, 3, 100, 5.0).unwrap();
        let (_, e1000) = approximate_mode_by_planewaves(3, 2, 3, 1000, 5.0).unwrap();
        assert!(e1000 < e100, "{e1000} vs {e100}");
        // A single pair ±e₁ gives Y₀ cos x₁, exact at the origin.
        let (f, _) = approximate_mode_by_planewaves(2, 0, 1, 1, 1.0).unwrap();
        let y0 = 1.0 / (2.0 * PI).sqrt();
        assert!((f.value(&[0.0, 0.0]) - y0).abs() < 1e-15);
        assert!((f.value(&[0.7, 0.3]) - y0 * 0.7f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = FieldSampleParams::monochromatic(3, 50, 99);
        assert_eq!(sample_rpw(&p).unwrap(), sample_rpw(&p).unwrap());
        let f = sample_rpw(&p).unwrap();
        assert!((f.wavenumber().unwrap() - 1.0).abs() < 1e-12);
        let band = sample_rpw(&FieldSampleParams { alpha: 0.5, ..p }).unwrap();
        if let EigenField::PlaneWaveSum { terms, .. } = band {
            for t in terms {
                let r = t.k.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((0.5..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        for f in sample_fields() {
            let s = f.to_json().unwrap();
            assert_eq!(EigenField::from_json(&s).unwrap(), f);
        }
        assert!(EigenField::from_json("{\"type\":\"product_sines\"}").is_err());
    }

    #[test]
    fn mixed_eigenvalues_rejected() {
        let bad = EigenField::affine(EigenField::ProductSines { n: 3 }, bessel_mode(3, 0, 1).unwrap(), 1.0);
        assert!(bad.is_err());
        let bad = EigenField::plane_wave_sum(
            2,
            vec![0.0; 2],
            vec![
                PlaneWave { k: vec![1.0, 0.0], a: 1.0, b: 0.0 },
                PlaneWave { k: vec![2.0, 0.0], a: 1.0, b: 0.0 },
            ],
        );
        assert!(bad.is_err());
    }
}
