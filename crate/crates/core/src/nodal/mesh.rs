use std::collections::HashMap;
use std::io::Write;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use super::grid::{sign_grid, Grid, SignGrid};
use crate::eigenfield::EigenField;
use crate::error::{Error, Result};

/// Piecewise-linear zero set: triangles for `n = 3`, segments for `n = 2`.
/// Vertices lie on edges of the Kuhn triangulation of the sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSetMesh {
    pub n: usize,
    pub vertices: Vec<Vec<f64>>,
    pub cells: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyRecord {
    pub euler_characteristic: i64,
    /// `(2 − χ)/2` for closed surfaces.
    pub genus: Option<i64>,
    pub component_is_compact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshComponent {
    pub cells: Vec<usize>,
    pub vertices: usize,
    pub edges: usize,
    pub topology: TopologyRecord,
}

/// Every ordering of the axes gives one simplex of the Kuhn triangulation
/// of a grid cube: walk from the low corner adding one unit step per axis.
fn kuhn_simplices(n: usize) -> Vec<Vec<usize>> {
    fn perms(rest: &mut Vec<usize>, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(acc.clone());
            return;
        }
        for i in 0..rest.len() {
            let a = rest.remove(i);
            acc.push(a);
            perms(rest, acc, out);
            acc.pop();
            rest.insert(i, a);
        }
    }
    let mut orders = Vec::new();
    perms(&mut (0..n).collect(), &mut Vec::new(), &mut orders);
    orders
        .into_iter()
        .map(|order| {
            let mut corner = 0usize;
            let mut out = vec![corner];
            for k in order {
                corner |= 1 << k;
                out.push(corner);
            }
            out
        })
        .collect()
}

/// Marching simplices over the sign grid. Triangles are oriented with the
/// normal pointing to the positive side.
pub fn marching_simplices(sg: &SignGrid) -> Result<ZeroSetMesh> {
    let grid = &sg.grid;
    let n = grid.dim();
    if n != 2 && n != 3 {
        return Err(Error::domain(format!("zero-set meshing needs n = 2 or 3, got {n}")));
    }
    let strides = grid.strides();
    let simplices = kuhn_simplices(n);
    let corner_offset = |mask: usize| -> usize { (0..n).filter(|k| mask >> k & 1 == 1).map(|k| strides[k]).sum() };
    let offsets: Vec<usize> = (0..1 << n).map(corner_offset).collect();

    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut index: HashMap<(usize, usize), u32> = HashMap::new();
    let mut cells: Vec<Vec<u32>> = Vec::new();
    let mut vertex = |a: usize, b: usize, vertices: &mut Vec<Vec<f64>>| -> u32 {
        let key = (a.min(b), a.max(b));
        *index.entry(key).or_insert_with(|| {
            let (va, vb) = (sg.values[key.0], sg.values[key.1]);
            let t = va / (va - vb);
            let (xa, xb) = (grid.center(key.0), grid.center(key.1));
            vertices.push(xa.iter().zip(&xb).map(|(p, q)| p + t * (q - p)).collect());
            (vertices.len() - 1) as u32
        })
    };

    let cube_dims: Vec<usize> = grid.dims.iter().map(|d| d.saturating_sub(1)).collect();
    let cubes: usize = cube_dims.iter().product();
    let mut m = vec![0usize; n];
    for c in 0..cubes {
        let mut r = c;
        for k in (0..n).rev() {
            m[k] = r % cube_dims[k];
            r /= cube_dims[k];
        }
        let base = grid.ravel(&m);
        let first = sg.positive(base);
        if offsets.iter().all(|&o| sg.positive(base + o) == first) {
            continue;
        }
        for simplex in &simplices {
            let idx: Vec<usize> = simplex.iter().map(|&mask| base + offsets[mask]).collect();
            let (pos, neg): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| sg.positive(i));
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            if n == 2 {
                let (lone, pair, lone_pos) = if pos.len() == 1 { (pos[0], &neg, true) } else { (neg[0], &pos, false) };
                let a = vertex(lone, pair[0], &mut vertices);
                let b = vertex(lone, pair[1], &mut vertices);
                // Positive side on the left when walking the segment.
                let seg = orient_segment(&vertices, a, b, &grid.center(lone), lone_pos);
                cells.push(seg);
                continue;
            }
            let tris: Vec<[u32; 3]> = match (pos.len(), neg.len()) {
                (1, 3) | (3, 1) => {
                    let (lone, rest) = if pos.len() == 1 { (pos[0], &neg) } else { (neg[0], &pos) };
                    vec![[
                        vertex(lone, rest[0], &mut vertices),
                        vertex(lone, rest[1], &mut vertices),
                        vertex(lone, rest[2], &mut vertices),
                    ]]
                }
                _ => {
                    let q = [
                        vertex(pos[0], neg[0], &mut vertices),
                        vertex(pos[0], neg[1], &mut vertices),
                        vertex(pos[1], neg[1], &mut vertices),
                        vertex(pos[1], neg[0], &mut vertices),
                    ];
                    vec![[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
                }
            };
            let centroid = |ids: &[usize]| -> Vec<f64> {
                let mut c = vec![0.0; n];
                for &i in ids {
                    for (ck, xk) in c.iter_mut().zip(grid.center(i)) {
                        *ck += xk / ids.len() as f64;
                    }
                }
                c
            };
            let (cp, cn) = (centroid(&pos), centroid(&neg));
            let dir: Vec<f64> = cp.iter().zip(&cn).map(|(a, b)| a - b).collect();
            for t in tris {
                cells.push(orient_triangle(&vertices, t, &dir));
            }
        }
    }
    Ok(ZeroSetMesh { n, vertices, cells })
}

fn orient_triangle(v: &[Vec<f64>], t: [u32; 3], dir: &[f64]) -> Vec<u32> {
    let (p, q, r) = (&v[t[0] as usize], &v[t[1] as usize], &v[t[2] as usize]);
    let a: Vec<f64> = (0..3).map(|k| q[k] - p[k]).collect();
    let b: Vec<f64> = (0..3).map(|k| r[k] - p[k]).collect();
    let nrm = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    if nrm.iter().zip(dir).map(|(x, y)| x * y).sum::<f64>() >= 0.0 {
        t.to_vec()
    } else {
        vec![t[0], t[2], t[1]]
    }
}

fn orient_segment(v: &[Vec<f64>], a: u32, b: u32, lone: &[f64], lone_pos: bool) -> Vec<u32> {
    let (p, q) = (&v[a as usize], &v[b as usize]);
    let cross = (q[0] - p[0]) * (lone[1] - p[1]) - (q[1] - p[1]) * (lone[0] - p[0]);
    if (cross >= 0.0) == lone_pos {
        vec![a, b]
    } else {
        vec![b, a]
    }
}

/// Connected components with their Euler characteristics. A component is
/// compact when every edge of it (every vertex, for curves) is shared by
/// exactly two cells.
pub fn mesh_components(mesh: &ZeroSetMesh) -> Vec<MeshComponent> {
    let nv = mesh.vertices.len();
    let mut uf = UnionFind::<u32>::new(nv);
    for c in &mesh.cells {
        for w in c.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let labels = uf.into_labeling();
    let mut by_root: HashMap<u32, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, c) in mesh.cells.iter().enumerate() {
        let root = labels[c[0] as usize];
        let g = *by_root.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
        .into_iter()
        .map(|cells| {
            let mut verts: HashMap<u32, usize> = HashMap::new();
            let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
            for &ci in &cells {
                let c = &mesh.cells[ci];
                for &v in c {
                    *verts.entry(v).or_default() += 1;
                }
                if mesh.n == 3 {
                    for k in 0..3 {
                        let (a, b) = (c[k], c[(k + 1) % 3]);
                        *edges.entry((a.min(b), a.max(b))).or_default() += 1;
                    }
                }
            }
            let (v, f) = (verts.len() as i64, cells.len() as i64);
            let (e, closed, chi) = if mesh.n == 3 {
                let e = edges.len() as i64;
                (edges.len(), edges.values().all(|&k| k == 2), v - e + f)
            } else {
                (cells.len(), verts.values().all(|&k| k == 2), v - f)
            };
            let genus = (mesh.n == 3 && closed).then_some((2 - chi) / 2);
            MeshComponent {
                cells,
                vertices: verts.len(),
                edges: e,
                topology: TopologyRecord {
                    euler_characteristic: chi,
                    genus,
                    component_is_compact: closed,
                },
            }
        })
        .collect()
}

/// Ambiguous grid squares: the four corners alternate in sign. The zero
/// set crosses itself there at grid scale; the square centres are where a
/// singular level set shows up.
pub fn ambiguous_squares(sg: &SignGrid) -> Vec<Vec<f64>> {
    let grid: &Grid = &sg.grid;
    let n = grid.dim();
    let strides = grid.strides();
    let mut out = Vec::new();
    for idx in 0..grid.len() {
        let m = grid.unravel(idx);
        for a in 0..n {
            for b in a + 1..n {
                if m[a] + 1 >= grid.dims[a] || m[b] + 1 >= grid.dims[b] {
                    continue;
                }
                let (sa, sb) = (strides[a], strides[b]);
                let s = [idx, idx + sa, idx + sa + sb, idx + sb].map(|i| sg.positive(i));
                if s[0] == s[2] && s[1] == s[3] && s[0] != s[1] {
                    let mut x = grid.center(idx);
                    x[a] += 0.5 * grid.h;
                    x[b] += 0.5 * grid.h;
                    out.push(x);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSet {
    pub mesh: ZeroSetMesh,
    pub components: Vec<MeshComponent>,
    /// Smallest `‖∇f‖` at mesh vertices and ambiguous squares over the
    /// median at mesh vertices.
    pub min_gradient_ratio: f64,
    pub nudged: usize,
}

/// Vertices probed for the gradient check; larger meshes are subsampled
/// evenly.
const GRADIENT_PROBES: usize = 20_000;

/// Meshes the zero set of `f` on `grid` and splits it into components.
/// Fails with `DegenerateZeroSet` when `‖∇f‖` somewhere on the zero set
/// drops below `tol` times its median, as on the edge lines of `u₀`.
pub fn extract_zero_set(f: &EigenField, grid: &Grid, tol: f64) -> Result<ZeroSet> {
    use rayon::prelude::*;

    let sg = sign_grid(f, grid)?;
    let mesh = marching_simplices(&sg)?;
    let components = mesh_components(&mesh);
    let step = mesh.vertices.len().div_ceil(GRADIENT_PROBES).max(1);
    let grad = |x: &Vec<f64>| f.gradient(x).iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut at_vertices: Vec<f64> = mesh.vertices.par_iter().step_by(step).map(grad).collect();
    let mut ratio = f64::INFINITY;
    if !at_vertices.is_empty() {
        at_vertices.sort_by(f64::total_cmp);
        let median = at_vertices[at_vertices.len() / 2];
        let probes: Vec<Vec<f64>> = ambiguous_squares(&sg);
        let (worst, at) = probes
            .par_iter()
            .map(|x| (grad(x), Some(x)))
            .chain(at_vertices.par_iter().map(|&g| (g, None)))
            .reduce(|| (f64::INFINITY, None), |a, b| if b.0 < a.0 { b } else { a });
        ratio = if median > 0.0 { worst / median } else { 0.0 };
        if ratio < tol {
            return Err(Error::DegenerateZeroSet {
                gradient: worst,
                location: at.cloned().unwrap_or_default(),
            });
        }
    }
    Ok(ZeroSet {
        mesh,
        components,
        min_gradient_ratio: ratio,
        nudged: sg.nudged,
    })
}

/// Writes the mesh as OBJ, one object per component. Curves become `l`
/// elements in the `z = 0` plane.
pub fn write_obj<W: Write>(mesh: &ZeroSetMesh, components: &[MeshComponent], mut w: W) -> Result<()> {
    for v in &mesh.vertices {
        let z = if mesh.n == 3 { v[2] } else { 0.0 };
        writeln!(w, "v {} {} {}", v[0], v[1], z)?;
    }
    let tag = if mesh.n == 3 { "f" } else { "l" };
    for (k, comp) in components.iter().enumerate() {
        writeln!(w, "o component_{k}")?;
        for &ci in &comp.cells {
            let ids: Vec<String> = mesh.cells[ci].iter().map(|i| (i + 1).to_string()).collect();
            writeln!(w, "{tag} {}", ids.join(" "))?;
        }
    }
    Ok(())
}
