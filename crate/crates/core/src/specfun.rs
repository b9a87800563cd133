//! Special functions: Bessel functions of real order, real spherical and
//! solid harmonics in two and three dimensions, Gegenbauer polynomials, and
//! the covariance kernel of the monochromatic Gaussian field.
//!
//! Everything here is pure and allocation-light so it can be called from
//! inner evaluation loops on any thread.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this argument `J_ν` is summed from its power series; above it a
/// normalized backward recurrence is used.
pub const SERIES_SWITCH: f64 = 12.0;

const MIN_SERIES_TERMS: usize = 30;

/// Order `ν = (n-2)/2` attached to ambient dimension `n`.
pub fn order_for_dim(n: usize) -> f64 {
    (n as f64 - 2.0) / 2.0
}

/// Surface measure of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    2.0 * PI.powf(half) / libm::tgamma(half)
}

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Bessel function of the first kind `J_order(x)`.
pub fn bessel_j(order: f64, x: f64) -> Result<f64> {
    check_bessel_domain(order, x)?;
    if x == 0.0 {
        return Ok(if order == 0.0 {
            1.0
        } else if order > 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    if x <= SERIES_SWITCH {
        Ok(series_scaled(order, x) * x.powf(order))
    } else {
        Ok(miller(order, x))
    }
}

/// `J_order(r) / r^order`, an entire even function of `r` equal to
/// `1 / (2^order Γ(order+1))` at the origin.
pub fn bessel_jr(order: f64, r: f64) -> Result<f64> {
    check_bessel_domain(order, r)?;
    if r <= SERIES_SWITCH {
        Ok(series_scaled(order, r))
    } else {
        Ok(miller(order, r) / r.powf(order))
    }
}

fn check_bessel_domain(order: f64, x: f64) -> Result<()> {
    if !order.is_finite() || order < -0.5 {
        return Err(Error::domain(format!("Bessel order {order} < -1/2")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("Bessel argument {x} must be finite and >= 0")));
    }
    Ok(())
}

/// Power series of `J_ν(x)/x^ν`. Near the switch point the terms reach a
/// few thousand while the sum is O(1), so terms and partial sums are carried
/// in double-double arithmetic.
fn series_scaled(nu: f64, x: f64) -> f64 {
    let q = dd_scale(two_prod(x, x), 0.25);
    let mut term = (1.0, 0.0);
    let mut sum = (1.0, 0.0);
    let mut k = 1usize;
    loop {
        let kf = k as f64;
        term = dd_div(dd_mul(term, q), kf * (kf + nu));
        term = (-term.0, -term.1);
        sum = dd_add(sum, term);
        if k >= MIN_SERIES_TERMS && term.0.abs() <= 1e-20 * sum.0.abs().max(1e-300) {
            break;
        }
        k += 1;
        if k > 400 {
            break;
        }
    }
    (sum.0 + sum.1) / (2f64.powf(nu) * gamma(nu + 1.0))
}

type Dd = (f64, f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn dd_add(a: Dd, b: Dd) -> Dd {
    let (s, e) = two_sum(a.0, b.0);
    let e = e + a.1 + b.1;
    two_sum(s, e)
}

fn dd_mul(a: Dd, b: Dd) -> Dd {
    let (p, e) = two_prod(a.0, b.0);
    two_sum(p, e + a.0 * b.1 + a.1 * b.0)
}

fn dd_scale(a: Dd, s: f64) -> Dd {
    dd_mul(a, (s, 0.0))
}

fn dd_div(a: Dd, d: f64) -> Dd {
    let q1 = a.0 / d;
    let r = dd_add(a, dd_scale(two_prod(q1, d), -1.0));
    let q2 = r.0 / d;
    two_sum(q1, q2)
}

/// Miller backward recurrence for `J_{ν0+k}(x)` with `ν0` in `[-1/2, 1/2)`,
/// normalized by the Neumann sum `(x/2)^ν0 = Σ (ν0+2k) Γ(ν0+k)/k! J_{ν0+2k}(x)`.
fn miller(nu: f64, x: f64) -> f64 {
    let shift = (nu + 0.5).floor();
    let nu0 = nu - shift;
    let m = shift as usize;
    let top = (x.max(m as f64) + 40.0 + 10.0 * x.cbrt()).ceil() as usize;
    let top = top + (top % 2);

    let mut vals = vec![0.0f64; top + 2];
    vals[top] = 1e-30;
    for k in (1..=top).rev() {
        let next = 2.0 * (nu0 + k as f64) / x * vals[k] - vals[k + 1];
        vals[k - 1] = next;
        if next.abs() > 1e200 {
            for v in vals.iter_mut().skip(k - 1) {
                *v *= 1e-200;
            }
        }
    }

    // Γ(ν0+k)/k!, with the k = 0 coefficient ν0·Γ(ν0) = Γ(ν0+1).
    let mut norm = gamma(nu0 + 1.0) * vals[0];
    let mut g = gamma(nu0 + 1.0);
    let mut k = 1usize;
    while 2 * k <= top {
        norm += (nu0 + 2.0 * k as f64) * g * vals[2 * k];
        g *= (nu0 + k as f64) / (k as f64 + 1.0);
        k += 1;
    }
    vals[m] * (0.5 * x).powf(nu0) / norm
}

/// Unit-variance covariance kernel `2^ν Γ(ν+1) J_ν(r) / r^ν`, `ν = (n-2)/2`.
pub fn covariance_kernel(n: usize, r: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("covariance kernel needs n >= 2, got {n}")));
    }
    let nu = order_for_dim(n);
    Ok(2f64.powf(nu) * gamma(nu + 1.0) * bessel_jr(nu, r)?)
}

/// Constant relating the kernel as printed with a `(2π)^{-n/2}` prefactor to
/// the unit-variance kernel: printed = factor · unit-variance.
pub fn printed_kernel_factor(n: usize) -> f64 {
    let nu = order_for_dim(n);
    (2.0 * PI).powf(-(n as f64) / 2.0) / (2f64.powf(nu) * gamma(nu + 1.0))
}

/// Gegenbauer polynomial `C_l^ν(t)`. For `ν = 0` the `n = 2` convention is
/// used: the Chebyshev polynomial `T_l`, which is `lim C_l^ν / C_l^ν(1)`.
pub fn gegenbauer(l: usize, nu: f64, t: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("Gegenbauer argument {t} outside [-1, 1]")));
    }
    if nu < 0.0 {
        return Err(Error::domain(format!("Gegenbauer parameter {nu} < 0")));
    }
    if nu == 0.0 {
        let (mut a, mut b) = (1.0, t);
        if l == 0 {
            return Ok(1.0);
        }
        for _ in 1..l {
            let c = 2.0 * t * b - a;
            a = b;
            b = c;
        }
        return Ok(b);
    }
    let (mut a, mut b) = (1.0, 2.0 * nu * t);
    if l == 0 {
        return Ok(1.0);
    }
    for k in 2..=l {
        let kf = k as f64;
        let c = (2.0 * t * (kf + nu - 1.0) * b - (kf + 2.0 * nu - 2.0) * a) / kf;
        a = b;
        b = c;
    }
    Ok(b)
}

/// Degree and in-degree index of a real spherical harmonic, `1 <= m <= d_l`.
///
/// Ordering within a degree: `m = 1` is the zonal (or constant) member, then
/// cosine/sine pairs of increasing azimuthal frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HarmonicIndex {
    pub l: usize,
    pub m: usize,
}

impl HarmonicIndex {
    pub fn new(l: usize, m: usize) -> Self {
        Self { l, m }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let d = harmonic_dim(n, self.l)?;
        if self.m == 0 || self.m > d {
            return Err(Error::domain(format!(
                "harmonic index m = {} outside 1..={d} for l = {}, n = {n}",
                self.m, self.l
            )));
        }
        Ok(())
    }

    /// All indices of degree at most `lmax`.
    pub fn up_to(n: usize, lmax: usize) -> Vec<HarmonicIndex> {
        let mut out = Vec::new();
        for l in 0..=lmax {
            let d = harmonic_dim(n, l).unwrap_or(0);
            out.extend((1..=d).map(|m| HarmonicIndex { l, m }));
        }
        out
    }
}

/// Dimension of the degree-`l` harmonics on `S^{n-1}` for `n` in {2, 3}.
pub fn harmonic_dim(n: usize, l: usize) -> Result<usize> {
    match n {
        2 => Ok(if l == 0 { 1 } else { 2 }),
        3 => Ok(2 * l + 1),
        _ => Err(Error::domain(format!("spherical harmonics only for n in {{2,3}}, got {n}"))),
    }
}

/// Real spherical harmonic `Y^l_m(dir)`, orthonormal for the unnormalized
/// surface measure on `S^{n-1}`.
pub fn real_spherical_harmonic(n: usize, idx: HarmonicIndex, dir: &[f64]) -> Result<f64> {
    if dir.len() != n {
        return Err(Error::domain(format!("direction has {} components, expected {n}", dir.len())));
    }
    let norm2: f64 = dir.iter().map(|v| v * v).sum();
    if (norm2.sqrt() - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("direction norm {} is not 1", norm2.sqrt())));
    }
    Ok(solid_harmonic(n, idx, dir)?.0)
}

/// Solid harmonic `|x|^l Y^l_m(x/|x|)` and its gradient. This is a
/// homogeneous harmonic polynomial, so it is smooth through the origin.
pub fn solid_harmonic(n: usize, idx: HarmonicIndex, x: &[f64]) -> Result<(f64, [f64; 3])> {
    idx.validate(n)?;
    match n {
        2 => Ok(solid_2d(idx, x[0], x[1])),
        3 => Ok(solid_3d(idx, x[0], x[1], x[2])),
        _ => unreachable!("validated above"),
    }
}

/// Re and Im of `(x + iy)^m` with their x/y partial derivatives.
fn complex_power(m: usize, x: f64, y: f64) -> ((f64, f64), (f64, f64), (f64, f64)) {
    if m == 0 {
        return ((1.0, 0.0), (0.0, 0.0), (0.0, 0.0));
    }
    let (mut re, mut im) = (1.0, 0.0);
    for _ in 0..m - 1 {
        let r = re * x - im * y;
        im = re * y + im * x;
        re = r;
    }
    // (x+iy)^{m-1} = re + i im; d/dx z^m = m z^{m-1}, d/dy z^m = i m z^{m-1}.
    let mf = m as f64;
    let dx = (mf * re, mf * im);
    let dy = (-mf * im, mf * re);
    let full = (re * x - im * y, re * y + im * x);
    (full, dx, dy)
}

fn solid_2d(idx: HarmonicIndex, x: f64, y: f64) -> (f64, [f64; 3]) {
    if idx.l == 0 {
        return (1.0 / (2.0 * PI).sqrt(), [0.0; 3]);
    }
    let c = 1.0 / PI.sqrt();
    let ((re, im), (rex, imx), (rey, imy)) = complex_power(idx.l, x, y);
    if idx.m == 1 {
        (c * re, [c * rex, c * rey, 0.0])
    } else {
        (c * im, [c * imx, c * imy, 0.0])
    }
}

fn solid_3d(idx: HarmonicIndex, x: f64, y: f64, z: f64) -> (f64, [f64; 3]) {
    let l = idx.l;
    let am = idx.m / 2; // azimuthal order
    let use_sin = idx.m > 1 && idx.m % 2 == 1;
    let s = x * x + y * y + z * z;

    // Q_l^m(z, s) with partials in z and s, by the associated Legendre recurrence.
    let mut dfact = 1.0;
    for k in 1..=am {
        dfact *= (2 * k - 1) as f64;
    }
    let (mut q_prev, mut qz_prev, mut qs_prev) = (0.0, 0.0, 0.0);
    let (mut q, mut qz, mut qs) = (dfact, 0.0, 0.0);
    for ll in (am + 1)..=l {
        let a = (2 * ll - 1) as f64;
        let b = (ll + am - 1) as f64;
        let d = (ll - am) as f64;
        let qn = (a * z * q - b * s * q_prev) / d;
        let qzn = (a * (q + z * qz) - b * s * qz_prev) / d;
        let qsn = (a * z * qs - b * (q_prev + s * qs_prev)) / d;
        q_prev = q;
        qz_prev = qz;
        qs_prev = qs;
        q = qn;
        qz = qzn;
        qs = qsn;
    }

    let mut ratio = 1.0; // (l-m)!/(l+m)!
    for k in (l - am + 1)..=(l + am) {
        ratio /= k as f64;
    }
    let mut norm = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
    if am > 0 {
        norm *= 2f64.sqrt();
    }

    let ((re, im), (rex, imx), (rey, imy)) = complex_power(am, x, y);
    let (p, px, py) = if am == 0 {
        (1.0, 0.0, 0.0)
    } else if use_sin {
        (im, imx, imy)
    } else {
        (re, rex, rey)
    };
    let val = norm * q * p;
    let gx = norm * (qs * 2.0 * x * p + q * px);
    let gy = norm * (qs * 2.0 * y * p + q * py);
    let gz = norm * (qz + qs * 2.0 * z) * p;
    (val, [gx, gy, gz])
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut t = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 0 { 1.0 } else if m == 1 { t } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (t * pm - pm1) / (t * t - 1.0);
            let dt = pm / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -t;
        nodes[m - 1 - i] = t;
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: plain power series in `x`, no scaling tricks.
    fn j_series_oracle(nu: f64, x: f64) -> f64 {
        let mut sum = 0.0;
        for k in 0..80 {
            let kf = k as f64;
            let t = (-1f64).powi(k) * (x / 2.0).powf(2.0 * kf + nu)
                / (libm::tgamma(kf + 1.0) * libm::tgamma(kf + nu + 1.0));
            sum += t;
        }
        sum
    }

    #[test]
    fn bessel_constant_term() {
        assert_eq!(bessel_j(0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn bessel_half_order_closed_form() {
        let v = bessel_j(0.5, PI).unwrap();
        assert!(v.abs() < 1e-15, "{v}");
        for &x in &[0.3, 2.0, 11.9, 12.1, 37.0, 99.0] {
            let exact = (2.0 / (PI * x)).sqrt() * x.sin();
            let got = bessel_j(0.5, x).unwrap();
            assert!((got - exact).abs() < 1e-13, "x={x}: {got} vs {exact}");
            let exact_m = (2.0 / (PI * x)).sqrt() * x.cos();
            let got_m = bessel_j(-0.5, x).unwrap();
            assert!((got_m - exact_m).abs() < 1e-13, "x={x}: {got_m} vs {exact_m}");
        }
    }

    #[test]
    fn bessel_first_zero_of_j0() {
        // Root of the oracle series by bisection.
        let (mut a, mut b) = (2.0, 3.0);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if j_series_oracle(0.0, a) * j_series_oracle(0.0, mid) <= 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
        assert!((a - 2.404825557695773).abs() < 1e-12);
        assert!(bessel_j(0.0, 2.404825557695773).unwrap().abs() < 1e-10);
    }

    #[test]
    fn series_and_recurrence_agree_across_switch() {
        for &nu in &[0.0, 0.5, 1.0, 1.5, 3.5, 6.0] {
            for &x in &[6.0, 11.0, 12.0] {
                let a = series_scaled(nu, x) * x.powf(nu);
                let b = miller(nu, x);
                assert!((a - b).abs() < 2e-15, "nu={nu} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn known_values_large_argument() {
        // J0(50) and J1(100) reference values.
        assert!((bessel_j(0.0, 50.0).unwrap() - 0.055812327669251).abs() < 1e-13);
        assert!((bessel_j(1.0, 100.0).unwrap() - (-0.077145352014112)).abs() < 1e-13);
    }

    #[test]
    fn three_term_recurrence_on_grid() {
        for &nu in &[0.5, 1.0, 1.5, 2.0, 4.5] {
            let mut x = 0.1;
            while x <= 50.0 {
                let lhs = bessel_j(nu - 1.0, x).unwrap() + bessel_j(nu + 1.0, x).unwrap();
                let rhs = 2.0 * nu / x * bessel_j(nu, x).unwrap();
                assert!((lhs - rhs).abs() < 1e-10, "nu={nu} x={x}");
                x += 0.37;
            }
        }
    }

    #[test]
    fn bessel_domain_errors() {
        assert!(bessel_j(-0.6, 1.0).is_err());
        assert!(bessel_j(0.0, -1.0).is_err());
    }

    #[test]
    fn harmonic_examples() {
        let y = real_spherical_harmonic(3, HarmonicIndex::new(0, 1), &[0.0, 0.6, 0.8]).unwrap();
        assert!((y - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15);
        let y = real_spherical_harmonic(2, HarmonicIndex::new(1, 1), &[1.0, 0.0]).unwrap();
        assert!((y - 1.0 / PI.sqrt()).abs() < 1e-15);
        let d = [0.48, -0.6, 0.64];
        let nd = [-0.48, 0.6, -0.64];
        for m in 1..=3 {
            let a = real_spherical_harmonic(3, HarmonicIndex::new(1, m), &d).unwrap();
            let b = real_spherical_harmonic(3, HarmonicIndex::new(1, m), &nd).unwrap();
            assert!((a + b).abs() < 1e-15);
        }
        assert!(real_spherical_harmonic(3, HarmonicIndex::new(1, 1), &[1.0, 1.0, 0.0]).is_err());
        assert!(real_spherical_harmonic(4, HarmonicIndex::new(0, 1), &[1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn harmonics_orthonormal_by_quadrature() {
        let idx = HarmonicIndex::up_to(3, 6);
        let (t, w) = gauss_legendre(24);
        let nphi = 48;
        let mut gram = vec![0.0; idx.len() * idx.len()];
        for (ti, wi) in t.iter().zip(&w) {
            let st = (1.0 - ti * ti).sqrt();
            for k in 0..nphi {
                let phi = 2.0 * PI * k as f64 / nphi as f64;
                let d = [st * phi.cos(), st * phi.sin(), *ti];
                let vals: Vec<f64> = idx.iter().map(|&i| solid_harmonic(3, i, &d).unwrap().0).collect();
                let weight = wi * 2.0 * PI / nphi as f64;
                for a in 0..idx.len() {
                    for b in 0..idx.len() {
                        gram[a * idx.len() + b] += weight * vals[a] * vals[b];
                    }
                }
            }
        }
        for a in 0..idx.len() {
            for b in 0..idx.len() {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * idx.len() + b] - expect).abs() < 1e-8, "{:?} {:?}", idx[a], idx[b]);
            }
        }
    }

    #[test]
    fn circle_harmonics_orthonormal() {
        let idx = HarmonicIndex::up_to(2, 6);
        let m = 64;
        for a in &idx {
            for b in &idx {
                let mut s = 0.0;
                for k in 0..m {
                    let th = 2.0 * PI * k as f64 / m as f64;
                    let d = [th.cos(), th.sin()];
                    s += solid_harmonic(2, *a, &d).unwrap().0 * solid_harmonic(2, *b, &d).unwrap().0;
                }
                s *= 2.0 * PI / m as f64;
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solid_harmonic_gradient_matches_differences() {
        let x = [0.3, -0.7, 0.5];
        let h = 1e-6;
        for i in HarmonicIndex::up_to(3, 5) {
            let (_, g) = solid_harmonic(3, i, &x).unwrap();
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (solid_harmonic(3, i, &xp).unwrap().0 - solid_harmonic(3, i, &xm).unwrap().0) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "{i:?} axis {k}");
            }
        }
    }

    #[test]
    fn gegenbauer_examples() {
        assert_eq!(gegenbauer(0, 1.7, 0.3).unwrap(), 1.0);
        assert!((gegenbauer(2, 0.5, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((gegenbauer(2, 0.5, 0.0).unwrap() + 0.5).abs() < 1e-15);
        assert!((gegenbauer(3, 0.0, 0.5).unwrap() - (4.0 * 0.125 - 1.5)).abs() < 1e-15);
        assert!(gegenbauer(1, 0.5, 1.5).is_err());
    }

    #[test]
    fn covariance_examples() {
        assert!((covariance_kernel(3, PI).unwrap()).abs() < 1e-15);
        assert!((covariance_kernel(3, 1.3).unwrap() - 1.3f64.sin() / 1.3).abs() < 1e-14);
        assert_eq!(covariance_kernel(2, 0.0).unwrap(), 1.0);
        for n in 2..7 {
            assert!((covariance_kernel(n, 0.0).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((covariance_kernel(2, PI).unwrap() - j_series_oracle(0.0, PI)).abs() < 1e-14);
        assert!((covariance_kernel(2, PI).unwrap() + 0.304242).abs() < 1e-6);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (t, w) = gauss_legendre(10);
        let s: f64 = t.iter().zip(&w).map(|(t, w)| w * t.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
    }

    fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        (r > 1e-3).then(|| [v[0] / r, v[1] / r, v[2] / r])
    }

    proptest::proptest! {
        #[test]
        fn addition_theorem(a in proptest::array::uniform3(-1.0f64..1.0),
                            b in proptest::array::uniform3(-1.0f64..1.0),
                            l in 0usize..=8) {
            if let (Some(u), Some(v)) = (unit(a), unit(b)) {
                let lhs: f64 = (1..=2 * l + 1)
                    .map(|m| {
                        let i = HarmonicIndex::new(l, m);
                        solid_harmonic(3, i, &u).unwrap().0 * solid_harmonic(3, i, &v).unwrap().0
                    })
                    .sum();
                let t = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).clamp(-1.0, 1.0);
                let rhs = (2 * l + 1) as f64 / (4.0 * PI) * gegenbauer(l, 0.5, t).unwrap()
                    / gegenbauer(l, 0.5, 1.0).unwrap();
                proptest::prop_assert!((lhs - rhs).abs() < 1e-10);
            }
        }

        #[test]
        fn recurrence_holds(nu in 0.5f64..6.0, x in 0.1f64..50.0) {
            let lhs = bessel_j(nu - 1.0, x).unwrap() + bessel_j(nu + 1.0, x).unwrap();
            let rhs = 2.0 * nu / x * bessel_j(nu, x).unwrap();
            proptest::prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn kernel_bounded_by_one(n in 2usize..7, r in 0.0f64..60.0) {
            let k = covariance_kernel(n, r).unwrap();
            proptest::prop_assert!(k.abs() <= 1.0 + 1e-12);
        }
    }
}
