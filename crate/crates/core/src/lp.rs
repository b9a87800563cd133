//! Dense margin-maximizing linear program, solved by a Mehrotra
//! predictor-corrector interior-point method.
//!
//! The problem is `max t` subject to `D x ≥ t` and `U x ≤ 1` row-wise and
//! `|x_j| ≤ bound`.

use faer::prelude::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MarginSolution {
    pub x: Vec<f64>,
    /// `min_i (D x)_i`, recomputed from `x`.
    pub margin: f64,
    pub iterations: usize,
    /// Multipliers of the `D x ≥ t` rows. They sum to one at the optimum;
    /// where the margin is not positive they certify that no `x` does better.
    pub dual: Vec<f64>,
}

const MAX_ITER: usize = 80;
const STEP: f64 = 0.99;

/// Maximizes the smallest entry of `D x` over the box `|x_j| ≤ bound`,
/// optionally subject to `U x ≤ 1`.
///
/// Variables are `z = (x, t)`; constraints are written `G z ≤ b` with the
/// dense rows `(-d_i, 1) z ≤ 0` and `(u_i, 0) z ≤ 1` followed by the box rows
/// `± x_j ≤ bound`, which only ever contribute to the diagonal of the normal
/// matrix.
pub fn max_margin(d: &Mat<f64>, upper: Option<&Mat<f64>>, bound: f64, tol: f64) -> Result<MarginSolution> {
    let (pd, m) = (d.nrows(), d.ncols());
    if pd == 0 || m == 0 || !(bound > 0.0) {
        return Err(Error::domain("margin program needs rows, columns and a positive bound"));
    }
    if upper.is_some_and(|u| u.ncols() != m) {
        return Err(Error::domain("upper rows must have as many columns as the lower rows"));
    }
    let pu = upper.map_or(0, |u| u.nrows());
    let p = pd + pu;
    let nz = m + 1;
    let rows = p + 2 * m;
    let g = Mat::<f64>::from_fn(p, nz, |i, j| match (i < pd, j < m) {
        (true, true) => -d[(i, j)],
        (true, false) => 1.0,
        (false, true) => upper.expect("upper rows")[(i - pd, j)],
        (false, false) => 0.0,
    });

    // G z for the current z.
    let apply = |z: &[f64]| -> Vec<f64> {
        let gz = &g * faer::col::ColRef::from_slice(z);
        let mut out = vec![0.0; rows];
        for i in 0..p {
            out[i] = gz[i];
        }
        for j in 0..m {
            out[p + j] = z[j];
            out[p + m + j] = -z[j];
        }
        out
    };
    // G^T y.
    let apply_t = |y: &[f64]| -> Vec<f64> {
        let gty = g.transpose() * faer::col::ColRef::from_slice(&y[..p]);
        let mut out: Vec<f64> = (0..nz).map(|j| gty[j]).collect();
        for j in 0..m {
            out[j] += y[p + j] - y[p + m + j];
        }
        out
    };
    let b: Vec<f64> = (0..rows)
        .map(|i| if i < pd { 0.0 } else if i < p { 1.0 } else { bound })
        .collect();
    let mut c = vec![0.0; nz];
    c[m] = -1.0;

    let mut z = vec![0.0; nz];
    let mut s: Vec<f64> = b.iter().map(|v| v.max(1.0)).collect();
    let mut lam = vec![1.0; rows];
    let scale_b = 1.0 + bound;

    for it in 0..MAX_ITER {
        let gz = apply(&z);
        let rp: Vec<f64> = (0..rows).map(|i| gz[i] + s[i] - b[i]).collect();
        let gtl = apply_t(&lam);
        let rd: Vec<f64> = (0..nz).map(|j| c[j] + gtl[j]).collect();
        let mu = s.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>() / rows as f64;
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        // The regularized normal matrix stalls the dual residual well above `tol`.
        if inf(&rp) < tol * scale_b && inf(&rd) < tol.sqrt() && mu < tol {
            return Ok(finish(d, &z[..m], &lam[..pd], bound, it));
        }

        // Normal matrix G^T W G with W = Λ S^{-1}.
        let w: Vec<f64> = (0..rows).map(|i| lam[i] / s[i]).collect();
        let gs = Mat::<f64>::from_fn(p, nz, |i, j| g[(i, j)] * w[i].sqrt());
        let mut h: Mat<f64> = gs.transpose() * &gs;
        let diag_max = (0..nz).map(|j| h[(j, j)]).fold(0.0f64, f64::max);
        for j in 0..m {
            h[(j, j)] += w[p + j] + w[p + m + j];
        }
        for j in 0..nz {
            h[(j, j)] += 1e-13 * diag_max.max(1.0);
        }
        let llt = h.llt(Side::Lower).map_err(|_| Error::SingularFit)?;

        // Newton direction for a given complementarity target r_c.
        let solve = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let y: Vec<f64> = (0..rows).map(|i| w[i] * rp[i] + rc[i] / s[i]).collect();
            let gty = apply_t(&y);
            let mut rhs = Mat::<f64>::from_fn(nz, 1, |j, _| -rd[j] - gty[j]);
            llt.solve_in_place(&mut rhs);
            let dz: Vec<f64> = (0..nz).map(|j| rhs[(j, 0)]).collect();
            let gdz = apply(&dz);
            let dl: Vec<f64> = (0..rows).map(|i| w[i] * (gdz[i] + rp[i]) + rc[i] / s[i]).collect();
            let ds: Vec<f64> = (0..rows).map(|i| (rc[i] - s[i] * dl[i]) / lam[i]).collect();
            (dz, ds, dl)
        };
        let max_step = |v: &[f64], dv: &[f64]| {
            v.iter()
                .zip(dv)
                .filter(|(_, d)| **d < 0.0)
                .map(|(v, d)| -v / d)
                .fold(1.0f64, f64::min)
        };

        let rc_aff: Vec<f64> = (0..rows).map(|i| -s[i] * lam[i]).collect();
        let (_, ds_a, dl_a) = solve(&rc_aff);
        let (ap, ad) = (max_step(&s, &ds_a), max_step(&lam, &dl_a));
        let mu_aff = (0..rows)
            .map(|i| (s[i] + ap * ds_a[i]) * (lam[i] + ad * dl_a[i]))
            .sum::<f64>()
            / rows as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);
        let rc: Vec<f64> = (0..rows)
            .map(|i| -s[i] * lam[i] - ds_a[i] * dl_a[i] + sigma * mu)
            .collect();
        let (dz, ds, dl) = solve(&rc);
        let ap = (STEP * max_step(&s, &ds)).min(1.0);
        let ad = (STEP * max_step(&lam, &dl)).min(1.0);
        for j in 0..nz {
            z[j] += ap * dz[j];
        }
        for i in 0..rows {
            s[i] += ap * ds[i];
            lam[i] += ad * dl[i];
        }
    }
    // The caller judges whether an unconverged margin is good enough.
    let out = finish(d, &z[..m], &lam[..pd], bound, MAX_ITER);
    if out.margin.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonConvergence { iterations: MAX_ITER, residual: f64::NAN })
    }
}

/// Clamps `x` into the box (infeasible-start iterates can overshoot it
/// slightly) and recomputes the margin.
fn finish(d: &Mat<f64>, x: &[f64], dual: &[f64], bound: f64, iterations: usize) -> MarginSolution {
    let x: Vec<f64> = x.iter().map(|v| v.clamp(-bound, bound)).collect();
    let dx = d * faer::col::ColRef::from_slice(&x);
    let margin = (0..d.nrows()).map(|i| dx[i]).fold(f64::INFINITY, f64::min);
    MarginSolution { x, margin, iterations, dual: dual.to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dimensional_example() {
        // Rows (1, 0), (0, 1), (1, 1) with |x| ≤ 1: the optimum is x = (1, 1), t = 1.
        let d = Mat::<f64>::from_fn(3, 2, |i, j| [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]][i][j]);
        let sol = max_margin(&d, None, 1.0, 1e-9).unwrap();
        assert!((sol.margin - 1.0).abs() < 1e-6, "{sol:?}");
        // Opposing rows force t ≤ 0.
        let d = Mat::<f64>::from_fn(2, 1, |i, _| if i == 0 { 1.0 } else { -1.0 });
        let sol = max_margin(&d, None, 1.0, 1e-9).unwrap();
        assert!(sol.margin.abs() < 1e-6, "{sol:?}");
    }

    #[test]
    fn matches_brute_force_on_small_programs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = Mat::<f64>::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
            let sol = max_margin(&d, None, 1.0, 1e-10).unwrap();
            // Grid search over the box gives a lower bound on the optimum.
            let mut best = f64::NEG_INFINITY;
            for a in 0..=400 {
                for b in 0..=400 {
                    let x = [a as f64 / 200.0 - 1.0, b as f64 / 200.0 - 1.0];
                    let t = (0..6).map(|i| d[(i, 0)] * x[0] + d[(i, 1)] * x[1]).fold(f64::INFINITY, f64::min);
                    best = best.max(t);
                }
            }
            assert!(sol.margin >= best - 1e-6, "{} < {best}", sol.margin);
            assert!(sol.margin <= best + 0.02, "{} vs {best}", sol.margin);
            assert!(sol.x.iter().all(|v| v.abs() <= 1.0 + 1e-9));
        }
    }

    #[test]
    fn upper_rows_cap_the_margin() {
        // max min(x0, x1) with x0 + x1 ≤ 1: t = 1/2.
        let d = Mat::<f64>::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let u = Mat::<f64>::from_fn(1, 2, |_, _| 1.0);
        let sol = max_margin(&d, Some(&u), 10.0, 1e-9).unwrap();
        assert!((sol.margin - 0.5).abs() < 1e-6, "{sol:?}");
    }
}
