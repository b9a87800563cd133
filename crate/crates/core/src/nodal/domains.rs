use std::collections::{BTreeMap, HashMap, HashSet};

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use super::grid::{Grid, SignGrid};
use crate::error::{Error, Result};
use crate::tree::RootedTree;

/// Constant-sign components of a sign grid under face adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Domains {
    /// Domain of every cell.
    pub labels: Vec<u32>,
    pub positive: Vec<bool>,
    pub sizes: Vec<usize>,
    pub touches_boundary: Vec<bool>,
    /// One cell of each domain (its smallest index).
    pub representative: Vec<usize>,
}

impl Domains {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

/// Labels nodal domains: same-sign cells sharing a face are merged; cells
/// touching only along an edge or vertex are not. Domains reaching the box
/// boundary are flagged, not merged.
pub fn label_domains(sg: &SignGrid) -> Domains {
    let g = &sg.grid;
    let strides = g.strides();
    let total = g.len();
    let mut uf = UnionFind::<u32>::new(total);
    for idx in 0..total {
        let m = g.unravel(idx);
        for k in 0..g.dim() {
            if m[k] + 1 < g.dims[k] {
                let j = idx + strides[k];
                if sg.positive(idx) == sg.positive(j) {
                    uf.union(idx as u32, j as u32);
                }
            }
        }
    }
    let roots = uf.into_labeling();
    let mut relabel: HashMap<u32, u32> = HashMap::new();
    let mut labels = Vec::with_capacity(total);
    let (mut positive, mut sizes, mut touches, mut representative) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (idx, r) in roots.into_iter().enumerate() {
        let next = relabel.len() as u32;
        let l = *relabel.entry(r).or_insert(next);
        if l == next {
            positive.push(sg.positive(idx));
            sizes.push(0);
            touches.push(false);
            representative.push(idx);
        }
        sizes[l as usize] += 1;
        if g.on_boundary(idx) {
            touches[l as usize] = true;
        }
        labels.push(l);
    }
    Domains { labels, positive, sizes, touches_boundary: touches, representative }
}

/// A connected piece of the voxel boundary between two domains: the grid
/// image of one zero-set component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interface {
    /// The two domains it separates, smaller label first.
    pub domains: (u32, u32),
    /// Faces as `(cell, axis)`: the face between `cell` and `cell + e_axis`.
    pub faces: Vec<(usize, usize)>,
    /// No face touches a boundary cell of the box.
    pub compact: bool,
}

/// Domains plus the interfaces between them.
#[derive(Debug, Clone)]
pub struct NodalDecomposition {
    pub grid: Grid,
    pub domains: Domains,
    pub interfaces: Vec<Interface>,
    pub nudged: usize,
}

impl NodalDecomposition {
    /// Interfaces incident to domain `d`.
    pub fn interfaces_of(&self, d: u32) -> Vec<usize> {
        (0..self.interfaces.len())
            .filter(|&i| self.interfaces[i].domains.0 == d || self.interfaces[i].domains.1 == d)
            .collect()
    }

    pub fn domain_at(&self, x: &[f64]) -> Option<u32> {
        self.grid.locate(x).map(|i| self.domains.labels[i])
    }
}

/// Labels domains and splits their common boundary into interfaces.
pub fn decompose(sg: &SignGrid) -> NodalDecomposition {
    let domains = label_domains(sg);
    let interfaces = interfaces(&sg.grid, &domains.labels);
    NodalDecomposition { grid: sg.grid.clone(), domains, interfaces, nudged: sg.nudged }
}

fn interfaces(g: &Grid, labels: &[u32]) -> Vec<Interface> {
    let n = g.dim();
    let strides = g.strides();
    let mut faces: Vec<(usize, usize)> = Vec::new();
    let mut index: HashMap<usize, u32> = HashMap::new();
    for idx in 0..g.len() {
        let m = g.unravel(idx);
        for a in 0..n {
            if m[a] + 1 < g.dims[a] && labels[idx] != labels[idx + strides[a]] {
                index.insert(idx * n + a, faces.len() as u32);
                faces.push((idx, a));
            }
        }
    }
    let pair = |f: (usize, usize)| {
        let (x, y) = (labels[f.0], labels[f.0 + strides[f.1]]);
        (x.min(y), x.max(y))
    };
    // Faces sharing a codimension-2 cell (an edge in 3D) and separating the
    // same pair of domains belong to the same interface.
    let mut uf = UnionFind::<u32>::new(faces.len());
    for (fi, &(p, a)) in faces.iter().enumerate() {
        let m = g.unravel(p);
        let pf = pair((p, a));
        for b in (0..n).filter(|&b| b != a) {
            for s in [-1i64, 1] {
                let step = |cell: usize, k: usize, d: i64| -> Option<usize> {
                    let mm = g.unravel(cell);
                    let t = mm[k] as i64 + d;
                    (t >= 0 && (t as usize) < g.dims[k]).then(|| (cell as i64 + d * strides[k] as i64) as usize)
                };
                let mut cands: Vec<(usize, usize)> = Vec::with_capacity(3);
                if let Some(q) = step(p, b, s) {
                    cands.push((q, a));
                }
                // Perpendicular faces through the shared edge.
                let base = if s > 0 { Some(p) } else { step(p, b, -1) };
                if let Some(q) = base {
                    cands.push((q, b));
                    if m[a] + 1 < g.dims[a] {
                        cands.push((q + strides[a], b));
                    }
                }
                for c in cands {
                    if let Some(&fj) = index.get(&(c.0 * n + c.1)) {
                        if pair(c) == pf {
                            uf.union(fi as u32, fj);
                        }
                    }
                }
            }
        }
    }
    let roots = uf.into_labeling();
    let mut groups: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (fi, r) in roots.into_iter().enumerate() {
        groups.entry(r).or_default().push(faces[fi]);
    }
    let mut out: Vec<Interface> = groups
        .into_values()
        .map(|fs| {
            let compact = fs
                .iter()
                .all(|&(c, a)| !g.on_boundary(c) && !g.on_boundary(c + strides[a]));
            Interface { domains: pair(fs[0]), faces: fs, compact }
        })
        .collect();
    out.sort_by_key(|i| (i.domains, i.faces[0]));
    out
}

/// Nesting tree of a compact zero-set component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingTree {
    pub tree: RootedTree,
    /// Domain label of each tree node in preorder.
    pub domains: Vec<u32>,
    pub interface: usize,
}

/// Whether cell `cell` is enclosed by interface `iface`: parity of face
/// crossings along axis rays, majority of three rays.
pub fn encloses(dec: &NodalDecomposition, iface: usize, cell: usize) -> bool {
    let g = &dec.grid;
    let faces: HashSet<(usize, usize)> = dec.interfaces[iface].faces.iter().copied().collect();
    enclosed_by(g, &faces, cell)
}

fn enclosed_by(g: &Grid, faces: &HashSet<(usize, usize)>, cell: usize) -> bool {
    let strides = g.strides();
    let n = g.dim();
    // Three rays: +axis for each axis, plus −x when n = 2.
    let rays: Vec<(usize, bool)> = if n >= 3 {
        (0..3).map(|k| (k, true)).collect()
    } else {
        vec![(0, true), (1, true), (0, false)]
    };
    let votes = rays
        .iter()
        .filter(|&&(k, forward)| {
            let m = g.unravel(cell);
            let mut crossings = 0usize;
            if forward {
                let mut c = cell;
                for _ in m[k]..g.dims[k] - 1 {
                    if faces.contains(&(c, k)) {
                        crossings += 1;
                    }
                    c += strides[k];
                }
            } else {
                let mut c = cell;
                for _ in 0..m[k] {
                    c -= strides[k];
                    if faces.contains(&(c, k)) {
                        crossings += 1;
                    }
                }
            }
            crossings % 2 == 1
        })
        .count();
    2 * votes > rays.len()
}

/// Nesting tree of compact interface `iface`: the domains it encloses, joined
/// along shared interfaces and rooted at the enclosed side of `iface`.
pub fn nesting_tree(dec: &NodalDecomposition, iface: usize) -> Result<NestingTree> {
    let it = dec.interfaces.get(iface).ok_or_else(|| Error::domain(format!("no interface {iface}")))?;
    if !it.compact {
        return Err(Error::OpenComponent(iface));
    }
    let g = &dec.grid;
    let faces: HashSet<(usize, usize)> = it.faces.iter().copied().collect();
    let inside: Vec<bool> = (0..dec.domains.count())
        .map(|d| enclosed_by(g, &faces, dec.domains.representative[d]))
        .collect();
    let (a, b) = it.domains;
    let root = match (inside[a as usize], inside[b as usize]) {
        (true, false) => a,
        (false, true) => b,
        _ => {
            return Err(Error::VerificationFailed {
                stage: "nesting".into(),
                detail: format!("interface {iface} does not separate its domains {a} and {b}"),
            })
        }
    };
    let members: Vec<u32> = (0..dec.domains.count() as u32).filter(|&d| inside[d as usize]).collect();
    let mut adj: BTreeMap<u32, Vec<u32>> = members.iter().map(|&d| (d, Vec::new())).collect();
    let mut edges = 0usize;
    for other in &dec.interfaces {
        let (x, y) = other.domains;
        if inside[x as usize] && inside[y as usize] {
            adj.get_mut(&x).expect("member").push(y);
            adj.get_mut(&y).expect("member").push(x);
            edges += 1;
        }
    }
    if edges + 1 != members.len() {
        return Err(Error::NotATree(format!(
            "{} enclosed domains but {edges} interfaces between them",
            members.len()
        )));
    }
    for v in adj.values_mut() {
        v.sort_unstable();
    }
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let tree = build(root, &adj, &mut seen, &mut order);
    if seen.len() != members.len() {
        return Err(Error::NotATree(format!(
            "enclosed domains form {} pieces, not one",
            members.len() - seen.len() + 1
        )));
    }
    Ok(NestingTree { tree, domains: order, interface: iface })
}

fn build(v: u32, adj: &BTreeMap<u32, Vec<u32>>, seen: &mut HashSet<u32>, order: &mut Vec<u32>) -> RootedTree {
    seen.insert(v);
    order.push(v);
    let mut kids = Vec::new();
    for &w in &adj[&v] {
        if !seen.contains(&w) {
            kids.push(build(w, adj, seen, order));
        }
    }
    RootedTree::with_children(kids)
}

/// The compact interface of domain `d` that encloses it (its outer boundary).
pub fn outer_interface(dec: &NodalDecomposition, d: u32) -> Option<usize> {
    let rep = dec.domains.representative[d as usize];
    dec.interfaces_of(d)
        .into_iter()
        .filter(|&i| dec.interfaces[i].compact)
        .find(|&i| encloses(dec, i, rep))
}

/// Cells outside `set` reachable from the box boundary without crossing
/// `set` (face adjacency).
pub fn outside_of(g: &Grid, set: &[bool]) -> Vec<bool> {
    let strides = g.strides();
    let mut out = vec![false; g.len()];
    let mut stack: Vec<usize> = (0..g.len()).filter(|&i| !set[i] && g.on_boundary(i)).collect();
    for &i in &stack {
        out[i] = true;
    }
    while let Some(i) = stack.pop() {
        let m = g.unravel(i);
        for k in 0..g.dim() {
            let mut visit = |j: usize| {
                if !set[j] && !out[j] {
                    out[j] = true;
                    stack.push(j);
                }
            };
            if m[k] > 0 {
                visit(i - strides[k]);
            }
            if m[k] + 1 < g.dims[k] {
                visit(i + strides[k]);
            }
        }
    }
    out
}

/// Nesting tree below the outer boundary of domain `d`: `d` together with
/// every domain in a bounded hole of `d`, joined along shared interfaces
/// and rooted at `d`. Unlike [`nesting_tree`] this does not need the outer
/// boundary to face a single domain.
pub fn domain_nesting_tree(dec: &NodalDecomposition, d: u32) -> Result<NestingTree> {
    let count = dec.domains.count();
    if d as usize >= count {
        return Err(Error::domain(format!("no domain {d}")));
    }
    if dec.domains.touches_boundary[d as usize] {
        return Err(Error::OpenComponent(d as usize));
    }
    let labels = &dec.domains.labels;
    let set: Vec<bool> = labels.iter().map(|&l| l == d).collect();
    let outside = outside_of(&dec.grid, &set);
    let mut inside = vec![false; count];
    inside[d as usize] = true;
    for (i, &l) in labels.iter().enumerate() {
        if !outside[i] {
            inside[l as usize] = true;
        }
    }
    let members: Vec<u32> = (0..count as u32).filter(|&x| inside[x as usize]).collect();
    let mut adj: BTreeMap<u32, Vec<u32>> = members.iter().map(|&x| (x, Vec::new())).collect();
    let mut edges = 0usize;
    for it in &dec.interfaces {
        let (x, y) = it.domains;
        if inside[x as usize] && inside[y as usize] {
            adj.get_mut(&x).expect("member").push(y);
            adj.get_mut(&y).expect("member").push(x);
            edges += 1;
        }
    }
    if edges + 1 != members.len() {
        return Err(Error::NotATree(format!(
            "{} enclosed domains but {edges} interfaces between them",
            members.len()
        )));
    }
    for v in adj.values_mut() {
        v.sort_unstable();
    }
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let tree = build(d, &adj, &mut seen, &mut order);
    if seen.len() != members.len() {
        return Err(Error::NotATree(format!(
            "enclosed domains form {} pieces, not one",
            members.len() - seen.len() + 1
        )));
    }
    let interface = outer_interface(dec, d).unwrap_or(usize::MAX);
    Ok(NestingTree { tree, domains: order, interface })
}
