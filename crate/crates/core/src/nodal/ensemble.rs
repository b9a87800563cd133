//! Monte Carlo statistics of zero-set components of random plane waves:
//! topological types and nesting trees of the components inside a ball.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decompose, marching_simplices, mesh_components, sign_grid, Grid, NodalDecomposition, SignGrid};
use crate::eigenfield::{sample_rpw, EigenField, FieldSampleParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub n: usize,
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
    pub waves: usize,
    /// Grid spacing; the wavelength is 2π.
    pub h: f64,
    /// Worker threads. Results do not depend on it.
    pub jobs: usize,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self { n: 2, samples: 200, radius: 50.0, seed: 0, waves: 256, h: 0.25, jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub key: String,
    pub count: usize,
    pub frequency: f64,
    /// 95% Wilson interval for the frequency.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub total: usize,
    /// Most frequent first, ties by key.
    pub bins: Vec<Bin>,
}

impl Histogram {
    pub fn from_counts(counts: &BTreeMap<String, usize>) -> Self {
        let total: usize = counts.values().sum();
        let mut bins: Vec<Bin> = counts
            .iter()
            .map(|(key, &count)| {
                let (ci_low, ci_high) = wilson(count, total);
                Bin { key: key.clone(), count, frequency: count as f64 / total as f64, ci_low, ci_high }
            })
            .collect();
        bins.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
        Self { total, bins }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,count,frequency,ci_low,ci_high\n");
        for b in &self.bins {
            let _ = writeln!(s, "{},{},{:.12e},{:.12e},{:.12e}", b.key, b.count, b.frequency, b.ci_low, b.ci_high);
        }
        s
    }

    pub fn count(&self, key: &str) -> usize {
        self.bins.iter().find(|b| b.key == key).map_or(0, |b| b.count)
    }
}

/// 95% Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054;
    let (nf, p) = (n as f64, k as f64 / n as f64);
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// One compact zero-set component: the outer boundary of a bounded domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStat {
    pub sample: usize,
    /// Euler characteristic of each boundary piece found by meshing the
    /// domain with its holes filled. One piece is expected.
    pub euler_characteristics: Vec<i64>,
    /// Canonical form of the nesting tree.
    pub tree: String,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub params: EnsembleParams,
    pub components: usize,
    /// n = 2: `circle`; n = 3: the genus. Anything else is keyed by `chi=…`.
    pub topology: Histogram,
    pub trees: Histogram,
    /// Components whose mesh was not a single closed curve or surface of
    /// even Euler characteristic.
    pub irregular: usize,
}

/// Samples `params.samples` random waves and collects every zero-set
/// component fully inside the ball of radius `params.radius`.
pub fn ensemble_stats(params: &EnsembleParams) -> Result<EnsembleStats> {
    if !(2..=3).contains(&params.n) {
        return Err(Error::domain("ensemble statistics need n = 2 or 3"));
    }
    if !(params.radius > 0.0 && params.h > 0.0) || params.waves == 0 {
        return Err(Error::domain("radius, spacing and wave count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let seeds: Vec<u64> = (0..params.samples).map(|_| rng.next_u64()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.jobs.max(1))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    let per: Vec<Vec<ComponentStat>> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &s)| {
                let f = sample_rpw(&FieldSampleParams::monochromatic(params.n, params.waves, s))?;
                compact_components(&f, params.radius, params.h, i)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut topo = BTreeMap::new();
    let mut trees = BTreeMap::new();
    let mut irregular = 0;
    let mut components = 0;
    for c in per.iter().flatten() {
        components += 1;
        *trees.entry(c.tree.clone()).or_insert(0) += 1;
        let key = match c.euler_characteristics.as_slice() {
            [0] if params.n == 2 => "circle".to_string(),
            [chi] if params.n == 3 && chi % 2 == 0 && *chi <= 2 => ((2 - chi) / 2).to_string(),
            other => {
                irregular += 1;
                format!("chi={}", other.iter().map(i64::to_string).collect::<Vec<_>>().join(";"))
            }
        };
        *topo.entry(key).or_insert(0) += 1;
    }
    Ok(EnsembleStats {
        params: params.clone(),
        components,
        topology: Histogram::from_counts(&topo),
        trees: Histogram::from_counts(&trees),
        irregular,
    })
}

/// Compact components of `f` inside the ball, with topology and nesting tree.
pub fn compact_components(f: &EigenField, radius: f64, h: f64, sample: usize) -> Result<Vec<ComponentStat>> {
    let n = f.dim();
    let grid = Grid::covering(&vec![-radius - h; n], &vec![radius + h; n], h)?;
    let sg = sign_grid(f, &grid)?;
    let dec = decompose(&sg);
    let forest = DomainForest::new(&dec);
    let count = dec.domains.count();
    let mut max_r = vec![0.0f64; count];
    let mut lo = vec![vec![usize::MAX; n]; count];
    let mut hi = vec![vec![0usize; n]; count];
    for (cell, &l) in dec.domains.labels.iter().enumerate() {
        let l = l as usize;
        let m = grid.unravel(cell);
        let r = m.iter().enumerate().map(|(k, &i)| grid.coordinate(k, i).powi(2)).sum::<f64>().sqrt();
        max_r[l] = max_r[l].max(r);
        for k in 0..n {
            lo[l][k] = lo[l][k].min(m[k]);
            hi[l][k] = hi[l][k].max(m[k]);
        }
    }
    let canon = forest.canonical();
    let mut stamp = vec![u32::MAX; count];
    let mut out = Vec::new();
    for d in 0..count {
        if dec.domains.touches_boundary[d] || forest.parent[d].is_none() || max_r[d] + 0.5 * h >= radius {
            continue;
        }
        let members = forest.subtree(d);
        for &m in &members {
            stamp[m] = d as u32;
        }
        let chis = filled_boundary(&grid, &dec, &stamp, d as u32, &lo[d], &hi[d])?;
        out.push(ComponentStat { sample, euler_characteristics: chis, tree: canon[d].clone(), nodes: members.len() });
    }
    Ok(out)
}

/// Euler characteristics of the zero set of `±1` on the filled domain,
/// meshed on its bounding box with one cell of margin.
fn filled_boundary(grid: &Grid, dec: &NodalDecomposition, stamp: &[u32], d: u32, lo: &[usize], hi: &[usize]) -> Result<Vec<i64>> {
    let n = grid.dim();
    let dims: Vec<usize> = (0..n).map(|k| hi[k] - lo[k] + 3).collect();
    let sub = Grid {
        lo: (0..n).map(|k| grid.lo[k] + (lo[k] as f64 - 1.0) * grid.h).collect(),
        h: grid.h,
        dims: dims.clone(),
    };
    let values: Vec<f64> = (0..sub.len())
        .map(|i| {
            let m = sub.unravel(i);
            let inner = m.iter().enumerate().all(|(k, &j)| j >= 1 && j - 1 <= hi[k] - lo[k]);
            if !inner {
                return -1.0;
            }
            let g: Vec<usize> = (0..n).map(|k| m[k] - 1 + lo[k]).collect();
            if stamp[dec.domains.labels[grid.ravel(&g)] as usize] == d {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    let sg = SignGrid { grid: sub, values, nudged: 0 };
    let mesh = marching_simplices(&sg)?;
    Ok(mesh_components(&mesh)
        .iter()
        .map(|c| if c.topology.component_is_compact { c.topology.euler_characteristic } else { i64::MIN })
        .collect())
}

/// Domains rooted at the box boundary: a bounded domain's parent is the
/// neighbour across its outer boundary, found as the neighbour one step
/// closer to the boundary in breadth-first order.
struct DomainForest {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl DomainForest {
    fn new(dec: &NodalDecomposition) -> Self {
        let count = dec.domains.count();
        let mut adj = vec![Vec::new(); count];
        for it in &dec.interfaces {
            let (a, b) = (it.domains.0 as usize, it.domains.1 as usize);
            adj[a].push(b);
            adj[b].push(a);
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let mut dist = vec![usize::MAX; count];
        let mut queue = VecDeque::new();
        for d in 0..count {
            if dec.domains.touches_boundary[d] {
                dist[d] = 0;
                queue.push_back(d);
            }
        }
        let mut order = Vec::new();
        while let Some(d) = queue.pop_front() {
            order.push(d);
            for &e in &adj[d] {
                if dist[e] == usize::MAX {
                    dist[e] = dist[d] + 1;
                    queue.push_back(e);
                }
            }
        }
        let mut parent = vec![None; count];
        let mut children = vec![Vec::new(); count];
        for d in 0..count {
            if dist[d] == 0 || dist[d] == usize::MAX {
                continue;
            }
            let p = adj[d].iter().copied().find(|&e| dist[e] + 1 == dist[d]).expect("breadth-first predecessor");
            parent[d] = Some(p);
            children[p].push(d);
        }
        Self { parent, children, order }
    }

    fn subtree(&self, d: usize) -> Vec<usize> {
        let mut out = vec![d];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.children[out[i]]);
            i += 1;
        }
        out
    }

    /// AHU strings of every subtree, deepest first.
    fn canonical(&self) -> Vec<String> {
        let mut canon = vec![String::new(); self.parent.len()];
        for &d in self.order.iter().rev() {
            let mut parts: Vec<&str> = self.children[d].iter().map(|&c| canon[c].as_str()).collect();
            parts.sort_unstable();
            canon[d] = format!("({})", parts.concat());
        }
        canon
    }
}
