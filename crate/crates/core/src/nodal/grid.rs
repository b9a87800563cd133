use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigenfield::EigenField;
use crate::error::{Error, Result};

/// Cell-centred sampling grid: cell `i` along axis `k` has centre
/// `lo[k] + (i + ½)·h`. Flat indices run with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub h: f64,
    pub dims: Vec<usize>,
}

impl Grid {
    /// Smallest grid of spacing `h` whose cells cover `[lo, hi]`.
    pub fn covering(lo: &[f64], hi: &[f64], h: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::domain("grid corners must have the same positive dimension"));
        }
        if !(h > 0.0) || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(Error::domain("grid needs h > 0 and lo < hi"));
        }
        let dims = lo.iter().zip(hi).map(|(a, b)| ((b - a) / h - 1e-9).ceil().max(1.0) as usize).collect();
        Ok(Self { lo: lo.to_vec(), h, dims })
    }

    /// Grid whose cell centres are the points `lo + i·h` up to `hi`, so
    /// every lattice point, edge and face in the box is sampled. Needs `1/h`
    /// to be an integer.
    pub fn lattice_aligned(lo: &[i64], hi: &[i64], h: f64) -> Result<Self> {
        let per = (1.0 / h).round();
        if !(h > 0.0) || per < 1.0 || (per * h - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("lattice-aligned grid needs 1/h integral, got h = {h}")));
        }
        if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| b <= a) {
            return Err(Error::domain("grid needs lo < hi"));
        }
        let per = per as usize;
        Ok(Self {
            lo: lo.iter().map(|&v| v as f64 - 0.5 * h).collect(),
            h,
            dims: lo.iter().zip(hi).map(|(a, b)| (b - a) as usize * per + 1).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for k in (0..self.dim().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    pub fn coordinate(&self, k: usize, i: usize) -> f64 {
        self.lo[k] + (i as f64 + 0.5) * self.h
    }

    pub fn axes(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|k| (0..self.dims[k]).map(|i| self.coordinate(k, i)).collect()).collect()
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = idx % self.dims[k];
            idx /= self.dims[k];
        }
        out
    }

    pub fn ravel(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.dims).fold(0, |acc, (i, d)| acc * d + i)
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx).iter().enumerate().map(|(k, &i)| self.coordinate(k, i)).collect()
    }

    /// Cell containing `x`, if inside the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let m: Option<Vec<usize>> = x
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let t = ((v - self.lo[k]) / self.h).floor();
                (t >= 0.0 && (t as usize) < self.dims[k]).then_some(t as usize)
            })
            .collect();
        m.map(|m| self.ravel(&m))
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        self.unravel(idx).iter().zip(&self.dims).any(|(&i, &d)| i == 0 || i + 1 == d)
    }

    /// Cell upper corner of the box.
    pub fn hi(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.dims).map(|(l, &d)| l + d as f64 * self.h).collect()
    }
}

/// Field values at the cell centres of a grid, with exact zeros removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SignGrid {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Samples moved off zero (see [`nudge`]).
    pub nudged: usize,
}

impl SignGrid {
    pub fn positive(&self, idx: usize) -> bool {
        self.values[idx] > 0.0
    }
}

/// Samples `f` at every cell centre.
pub fn sign_grid(f: &EigenField, grid: &Grid) -> Result<SignGrid> {
    if f.dim() != grid.dim() {
        return Err(Error::domain(format!("field dimension {} vs grid dimension {}", f.dim(), grid.dim())));
    }
    let mut values = f.evaluate_grid(&grid.axes());
    let nudged = nudge(&mut values);
    Ok(SignGrid { grid: grid.clone(), values, nudged })
}

/// Samples an arbitrary function at every cell centre.
pub fn sign_grid_with<F>(grid: &Grid, f: F) -> SignGrid
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut values: Vec<f64> = (0..grid.len()).into_par_iter().map(|i| f(&grid.center(i))).collect();
    let nudged = nudge(&mut values);
    SignGrid { grid: grid.clone(), values, nudged }
}

/// Shifts values with `|v| < 1e-14·max|v|` up by that amount so every sample
/// has a sign. Returns how many moved.
pub fn nudge(values: &mut [f64]) -> usize {
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let eps = 1e-14 * if scale > 0.0 { scale } else { 1.0 };
    let mut count = 0;
    for v in values.iter_mut() {
        if v.abs() < eps {
            *v += eps;
            count += 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_and_indexing() {
        let g = Grid::covering(&[0.0, 0.0, 0.0], &[3.0, 2.0, 1.0], 0.1).unwrap();
        assert_eq!(g.dims, vec![30, 20, 10]);
        assert_eq!(g.strides(), vec![200, 10, 1]);
        for idx in [0, 17, 4321, g.len() - 1] {
            assert_eq!(g.ravel(&g.unravel(idx)), idx);
            assert_eq!(g.locate(&g.center(idx)), Some(idx));
        }
        assert!((g.center(0)[0] - 0.05).abs() < 1e-15);
        assert!(g.on_boundary(0) && !g.on_boundary(g.ravel(&[5, 5, 5])));
        assert_eq!(g.locate(&[3.5, 0.0, 0.0]), None);
    }

    #[test]
    fn lattice_aligned_hits_integers() {
        let g = Grid::lattice_aligned(&[-1, 0], &[2, 1], 0.25).unwrap();
        assert_eq!(g.dims, vec![13, 5]);
        assert_eq!(g.axes()[0][0], -1.0);
        assert_eq!(g.axes()[0][12], 2.0);
        assert_eq!(g.axes()[1][4], 1.0);
        assert!(Grid::lattice_aligned(&[0], &[1], 0.3).is_err());
    }

    #[test]
    fn nudge_removes_zeros() {
        let mut v = vec![0.0, -0.0, 1.0, -1e-20, -2.0];
        assert_eq!(nudge(&mut v), 3);
        assert!(v[..2].iter().all(|x| *x > 0.0) && v[3] > 0.0 && v[4] == -2.0);
    }
}
