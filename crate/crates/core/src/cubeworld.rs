//! Integer-lattice combinatorics behind the nesting construction: signed unit
//! cubes, 𝓑± structures, engulf and join, tree assembly, and the
//! classification of codimension-2 faces into exterior, interior and joining
//! sets.
//!
//! Faces are stored in doubled coordinates: an even entry `2a` pins the
//! coordinate to `a`, an odd entry `2a+1` lets it range over `[a, a+1]`. A
//! codimension-2 face ("edge") has exactly two even entries.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::RootedTree;

pub type Cube = Vec<i64>;
pub type LatticePoint = Vec<i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Plus,
    Minus,
}

impl Polarity {
    pub fn flip(self) -> Self {
        match self {
            Polarity::Plus => Polarity::Minus,
            Polarity::Minus => Polarity::Plus,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Polarity::Plus => 1.0,
            Polarity::Minus => -1.0,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Plus => "+",
            Polarity::Minus => "-",
        })
    }
}

/// Sign of `Π sin(π x_i)` on the open cube with lower corner `c`.
pub fn cube_sign(c: &[i64]) -> Polarity {
    if c.iter().sum::<i64>().rem_euclid(2) == 0 {
        Polarity::Plus
    } else {
        Polarity::Minus
    }
}

/// A codimension-2 lattice face in doubled coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Face(pub Vec<i64>);

pub type EdgeId = Face;

impl Face {
    /// `H_c(a_i, a_j)`: the face of cube `c` with `x_i = a_i`, `x_j = a_j`.
    pub fn of_cube(c: &[i64], i: usize, j: usize, ai: i64, aj: i64) -> Face {
        let mut d: Vec<i64> = c.iter().map(|v| 2 * v + 1).collect();
        d[i] = 2 * ai;
        d[j] = 2 * aj;
        Face(d)
    }

    /// All codimension-2 faces of the closed cube `c`.
    pub fn all_of_cube(c: &[i64]) -> Vec<Face> {
        let n = c.len();
        let mut out = Vec::with_capacity(2 * n * (n - 1));
        for i in 0..n {
            for j in i + 1..n {
                for ai in [c[i], c[i] + 1] {
                    for aj in [c[j], c[j] + 1] {
                        out.push(Face::of_cube(c, i, j, ai, aj));
                    }
                }
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_codim2(&self) -> bool {
        self.0.iter().filter(|v| v.rem_euclid(2) == 0).count() == 2
    }

    pub fn free_axes(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| self.0[k].rem_euclid(2) == 1).collect()
    }

    pub fn fixed_axes(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| self.0[k].rem_euclid(2) == 0).collect()
    }

    /// Lattice range `[lo, hi]` of coordinate `k` on the closed face.
    pub fn range(&self, k: usize) -> (i64, i64) {
        let d = self.0[k];
        if d.rem_euclid(2) == 0 {
            (d / 2, d / 2)
        } else {
            ((d - 1).div_euclid(2), (d + 1).div_euclid(2))
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64 / 2.0).collect()
    }

    /// Lattice vertices of the closed face.
    pub fn vertices(&self) -> Vec<LatticePoint> {
        let ranges: Vec<(i64, i64)> = (0..self.dim()).map(|k| self.range(k)).collect();
        let mut out = vec![Vec::with_capacity(self.dim())];
        for (lo, hi) in ranges {
            let mut next = Vec::with_capacity(out.len() * 2);
            for p in &out {
                for v in lo..=hi {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            out = next;
        }
        out
    }

    pub fn closure_contains(&self, p: &[i64]) -> bool {
        (0..self.dim()).all(|k| {
            let (lo, hi) = self.range(k);
            lo <= p[k] && p[k] <= hi
        })
    }

    /// Euclidean distance from `x` to the closed face.
    pub fn distance(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|k| {
                let (lo, hi) = self.range(k);
                let g = (lo as f64 - x[k]).max(x[k] - hi as f64).max(0.0);
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn translated(&self, t: &[i64]) -> Face {
        Face(self.0.iter().zip(t).map(|(d, t)| d + 2 * t).collect())
    }

    /// Whether the closed face lies inside the closed cube `c`.
    pub fn in_cube(&self, c: &[i64]) -> bool {
        (0..self.dim()).all(|k| {
            let (lo, hi) = self.range(k);
            c[k] <= lo && hi <= c[k] + 1
        })
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for k in 0..self.dim() {
            if k > 0 {
                f.write_str(", ")?;
            }
            let (lo, hi) = self.range(k);
            if lo == hi {
                write!(f, "{lo}")?;
            } else {
                write!(f, "{lo}..{hi}")?;
            }
        }
        f.write_str(")")
    }
}

/// A finite union of closed unit cubes with an intended polarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeStructure {
    pub polarity: Polarity,
    pub cubes: BTreeSet<Cube>,
}

impl CubeStructure {
    pub fn new(polarity: Polarity, cubes: impl IntoIterator<Item = Cube>) -> Result<Self> {
        let cubes: BTreeSet<Cube> = cubes.into_iter().collect();
        let n = cubes.iter().next().map(Vec::len).ok_or_else(|| Error::invalid("empty structure"))?;
        if n < 2 || cubes.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("cubes must share one dimension n >= 2"));
        }
        Ok(Self { polarity, cubes })
    }

    pub fn single(c: Cube) -> Self {
        let polarity = cube_sign(&c);
        Self {
            polarity,
            cubes: [c].into_iter().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.cubes.iter().next().map(Vec::len).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn contains(&self, c: &[i64]) -> bool {
        self.cubes.contains(c)
    }

    pub fn translated(&self, t: &[i64]) -> Self {
        Self {
            polarity: self.polarity,
            cubes: self.cubes.iter().map(|c| add(c, t)).collect(),
        }
    }

    /// Lattice bounding box `(lo, hi)` of the union.
    pub fn bbox(&self) -> (Vec<i64>, Vec<i64>) {
        bbox_of(self.cubes.iter())
    }

    /// All lattice vertices of cubes in the structure.
    pub fn vertices(&self) -> BTreeSet<LatticePoint> {
        let n = self.dim();
        let mut out = BTreeSet::new();
        for c in &self.cubes {
            for mask in 0..(1u32 << n) {
                out.insert((0..n).map(|k| c[k] + ((mask >> k) & 1) as i64).collect());
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: CubeStructure = serde_json::from_str(s)?;
        CubeStructure::new(raw.polarity, raw.cubes)
    }
}

fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn bbox_of<'a>(cubes: impl Iterator<Item = &'a Cube>) -> (Vec<i64>, Vec<i64>) {
    let mut lo: Vec<i64> = Vec::new();
    let mut hi: Vec<i64> = Vec::new();
    for c in cubes {
        if lo.is_empty() {
            lo = c.clone();
            hi = c.clone();
        } else {
            for k in 0..c.len() {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
    }
    (lo, hi)
}

/// Offsets in `{-1,0,1}^n`, optionally filtered by parity of `Σ|δ|`.
fn offsets(n: usize, parity: Option<u32>) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let d: Vec<i64> = (0..n)
            .map(|_| {
                let v = (c % 3) as i64 - 1;
                c /= 3;
                v
            })
            .collect();
        let w = d.iter().filter(|v| **v != 0).count() as u32;
        if parity.map_or(true, |p| w % 2 == p) {
            out.push(d);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub complement_connected: bool,
    /// A doubled-coordinate cell of a bounded complement component.
    pub trapped_cell: Option<Vec<i64>>,
    pub boundary_signs_ok: bool,
    /// A boundary cube whose sign differs from the polarity.
    pub wrong_sign_cube: Option<Cube>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.complement_connected && self.boundary_signs_ok
    }

    fn into_result(self) -> Result<()> {
        if let Some(c) = &self.trapped_cell {
            return Err(Error::invalid(format!("complement has a bounded component near doubled cell {c:?}")));
        }
        if let Some(c) = &self.wrong_sign_cube {
            return Err(Error::invalid(format!("boundary cube {c:?} has the wrong sign")));
        }
        Ok(())
    }
}

/// Checks the 𝓑± membership rules: connected complement, and every cube
/// with a boundary facet carries the structure's polarity.
pub fn validate(c: &CubeStructure) -> ValidationReport {
    let n = c.dim();
    let mut wrong = None;
    'outer: for cube in &c.cubes {
        for k in 0..n {
            for s in [-1, 1] {
                let mut nb = cube.clone();
                nb[k] += s;
                if !c.cubes.contains(&nb) {
                    if cube_sign(cube) != c.polarity {
                        wrong = Some(cube.clone());
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
        }
    }
    let trapped = trapped_complement_cells(&c.cubes).into_iter().next();
    ValidationReport {
        complement_connected: trapped.is_none(),
        trapped_cell: trapped,
        boundary_signs_ok: wrong.is_none(),
        wrong_sign_cube: wrong,
    }
}

/// Flood fill of the open complement over the cells of the cubical complex
/// (doubled coordinates) in the bounding box with a margin of two cubes.
/// Returns every cell the fill cannot reach.
fn trapped_complement_cells(cubes: &BTreeSet<Cube>) -> Vec<Vec<i64>> {
    let (lo, hi) = bbox_of(cubes.iter());
    let n = lo.len();
    // Dense cube occupancy over bbox ± 3.
    let clo: Vec<i64> = lo.iter().map(|v| v - 3).collect();
    let cdims: Vec<usize> = (0..n).map(|k| (hi[k] - lo[k] + 7) as usize).collect();
    let mut cstride = vec![1usize; n];
    for k in (0..n - 1).rev() {
        cstride[k] = cstride[k + 1] * cdims[k + 1];
    }
    let mut occ = vec![false; cdims.iter().product()];
    for c in cubes {
        occ[(0..n).map(|k| (c[k] - clo[k]) as usize * cstride[k]).sum::<usize>()] = true;
    }

    let dlo: Vec<i64> = lo.iter().map(|v| 2 * (v - 2)).collect();
    let dhi: Vec<i64> = hi.iter().map(|v| 2 * (v + 3)).collect();
    let dims: Vec<usize> = (0..n).map(|k| (dhi[k] - dlo[k] + 1) as usize).collect();
    let total: usize = dims.iter().product();
    let mut strides = vec![1usize; n];
    for k in (0..n - 1).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let fill_coords = |mut i: usize, d: &mut [i64]| {
        for k in 0..n {
            d[k] = dlo[k] + (i / strides[k]) as i64;
            i %= strides[k];
        }
    };
    // A cell lies in the union iff one of the cubes containing it does.
    let in_union = |d: &[i64]| -> bool {
        let mut base = 0usize;
        let mut even = [0usize; 8];
        let mut ne = 0;
        for k in 0..n {
            if d[k].rem_euclid(2) == 0 {
                even[ne] = k;
                ne += 1;
                base += (d[k] / 2 - 1 - clo[k]) as usize * cstride[k];
            } else {
                base += ((d[k] - 1).div_euclid(2) - clo[k]) as usize * cstride[k];
            }
        }
        (0..1usize << ne).any(|mask| {
            let off: usize = (0..ne).filter(|b| mask >> b & 1 == 1).map(|b| cstride[even[b]]).sum();
            occ[base + off]
        })
    };

    let mut state = vec![0u8; total]; // 0 unknown, 1 inside union, 2 reached
    let mut queue = VecDeque::new();
    state[0] = 2;
    queue.push_back(0usize);
    let mut d = vec![0i64; n];
    while let Some(i) = queue.pop_front() {
        fill_coords(i, &mut d);
        for k in 0..n {
            for s in [-1i64, 1] {
                let v = d[k] + s;
                if v < dlo[k] || v > dhi[k] {
                    continue;
                }
                let j = if s > 0 { i + strides[k] } else { i - strides[k] };
                if state[j] != 0 {
                    continue;
                }
                let old = d[k];
                d[k] = v;
                if in_union(&d) {
                    state[j] = 1;
                } else {
                    state[j] = 2;
                    queue.push_back(j);
                }
                d[k] = old;
            }
        }
    }
    (0..total)
        .filter(|&i| state[i] == 0)
        .filter_map(|i| {
            let mut d = vec![0i64; n];
            fill_coords(i, &mut d);
            (!in_union(&d)).then_some(d)
        })
        .collect()
}

/// Unit cubes filling the bounded components of the complement.
pub fn pockets(c: &CubeStructure) -> BTreeSet<Cube> {
    pocket_cubes(&c.cubes)
}

fn pocket_cubes(cubes: &BTreeSet<Cube>) -> BTreeSet<Cube> {
    trapped_complement_cells(cubes)
        .into_iter()
        .filter(|d| d.iter().all(|v| v.rem_euclid(2) == 1))
        .map(|d| d.iter().map(|v| (v - 1) / 2).collect())
        .collect()
}

/// Adds every opposite-sign cube touching the structure (even at a single
/// point) and flips the polarity. Same-sign cubes sealed off by the new layer
/// are filled in as well, so the result always has a connected complement;
/// `pockets` on the unfilled union lists them.
pub fn engulf(c: &CubeStructure) -> Result<CubeStructure> {
    validate(c).into_result()?;
    Ok(engulf_unchecked(c))
}

/// `engulf` for inputs already known to be valid, e.g. during assembly.
fn engulf_unchecked(c: &CubeStructure) -> CubeStructure {
    let n = c.dim();
    let target = c.polarity.flip();
    let near = offsets(n, None);
    let mut cubes = c.cubes.clone();
    for cube in &c.cubes {
        for d in &near {
            let q = add(cube, d);
            if cube_sign(&q) == target {
                cubes.insert(q);
            }
        }
    }
    let sealed = pocket_cubes(&cubes);
    cubes.extend(sealed);
    CubeStructure { polarity: target, cubes }
}

/// Lexicographic max and min vertex (priority `x_1, x_2, …`).
pub fn extremal_vertices(c: &CubeStructure) -> (LatticePoint, LatticePoint) {
    let hi = c.cubes.iter().max().expect("nonempty").iter().map(|v| v + 1).collect();
    let lo = c.cubes.iter().min().expect("nonempty").clone();
    (hi, lo)
}

/// `e_+` and `e_-`: the faces at `v_±` with free coordinates `x_1 … x_{n-2}`,
/// reaching into the structure. For `n = 3` these are the unit segments
/// `[v_+ − e_1, v_+]` and `[v_-, v_- + e_1]`.
pub fn extremal_edges(c: &CubeStructure) -> (Face, Face) {
    let (vp, vm) = extremal_vertices(c);
    let n = vp.len();
    let mut ep = vec![0i64; n];
    let mut em = vec![0i64; n];
    for k in 0..n {
        if k < n - 2 {
            ep[k] = 2 * vp[k] - 1;
            em[k] = 2 * vm[k] + 1;
        } else {
            ep[k] = 2 * vp[k];
            em[k] = 2 * vm[k];
        }
    }
    (Face(ep), Face(em))
}

/// Result of joining two structures.
#[derive(Debug, Clone)]
pub struct Joined {
    pub structure: CubeStructure,
    /// Translation applied to the second argument.
    pub translation: Vec<i64>,
    /// The shared face `e_+(C_1) = e_-(C̃_2)`.
    pub edge: Face,
}

/// `J(C_1, C_2)`: translate `C_2` so that `e_-(C̃_2) = e_+(C_1)` and take the
/// union. Fails if the translated copy meets `C_1` anywhere but that face.
pub fn join_with_translation(c1: &CubeStructure, c2: &CubeStructure) -> Result<Joined> {
    if c1.polarity != c2.polarity {
        return Err(Error::PolarityMismatch);
    }
    let n = c1.dim();
    if c2.dim() != n {
        return Err(Error::invalid("join of structures of different dimension"));
    }
    let t = join_translation(c1, c2);
    if t.iter().sum::<i64>().rem_euclid(2) != 0 {
        return Err(Error::invalid(format!("join translation {t:?} has odd parity")));
    }
    let (edge, _) = extremal_edges(c1);
    let moved = c2.translated(&t);
    let lookup: HashSet<&Cube> = c1.cubes.iter().collect();
    let near = offsets(n, None);
    for b in &moved.cubes {
        for d in &near {
            let a = add(b, d);
            if !lookup.contains(&a) {
                continue;
            }
            if !contact_within_face(&a, b, &edge) {
                return Err(Error::invalid(format!(
                    "joined copy meets the first structure away from the join edge (cubes {a:?}, {b:?})"
                )));
            }
        }
    }
    let mut cubes = c1.cubes.clone();
    cubes.extend(moved.cubes);
    Ok(Joined {
        structure: CubeStructure {
            polarity: c1.polarity,
            cubes,
        },
        translation: t,
        edge,
    })
}

/// `t = v_+(C_1) − (1,…,1,0,0) − v_-(C_2)`.
pub fn join_translation(c1: &CubeStructure, c2: &CubeStructure) -> Vec<i64> {
    let (vp, _) = extremal_vertices(c1);
    let (_, vm) = extremal_vertices(c2);
    let n = vp.len();
    (0..n).map(|k| vp[k] - i64::from(k < n - 2) - vm[k]).collect()
}

/// Whether two closed cubes meet only inside the closed face `f`.
fn contact_within_face(a: &[i64], b: &[i64], f: &Face) -> bool {
    (0..a.len()).all(|k| {
        let lo = a[k].max(b[k]);
        let hi = (a[k] + 1).min(b[k] + 1);
        let (flo, fhi) = f.range(k);
        lo > hi || (flo <= lo && hi <= fhi)
    })
}

pub fn join(c1: &CubeStructure, c2: &CubeStructure) -> Result<CubeStructure> {
    Ok(join_with_translation(c1, c2)?.structure)
}

/// `J(C_1, …, C_k) = J(C_1, J(C_2, …))`.
pub fn join_all(parts: &[CubeStructure]) -> Result<CubeStructure> {
    let (last, rest) = parts.split_last().ok_or_else(|| Error::invalid("join of nothing"))?;
    let mut acc = last.clone();
    for c in rest.iter().rev() {
        acc = join(c, &acc)?;
    }
    Ok(acc)
}

/// One node of an assembled tree, in the final (root) coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    /// Child indices from the root, 1-based.
    pub path: Vec<usize>,
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// `C_v`: a cube for a leaf, the union of engulfed children otherwise.
    pub structure: CubeStructure,
    /// Faces through which the engulfed children were joined (open).
    pub join_edges: Vec<Face>,
    /// Translations applied to the 2nd…Nth engulfed child when joining.
    pub join_translations: Vec<Vec<i64>>,
}

impl NodeRecord {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureAssembly {
    pub n: usize,
    pub tree: RootedTree,
    pub root_polarity: Polarity,
    /// Preorder; index 0 is the root.
    pub nodes: Vec<NodeRecord>,
}

impl StructureAssembly {
    pub fn root(&self) -> &NodeRecord {
        &self.nodes[0]
    }

    /// `C_v` minus the children's structures (same-sign cubes only) for inner
    /// nodes and `C_v` for leaves: the cube set the nodal domain `Ω_v` should converge to.
    pub fn predicted_domain(&self, v: usize) -> BTreeSet<Cube> {
        let node = &self.nodes[v];
        if node.is_leaf() {
            return node.structure.cubes.clone();
        }
        let sign = self.domain_sign(v);
        let mut out = node.structure.cubes.clone();
        for &ch in &node.children {
            for c in &self.nodes[ch].structure.cubes {
                out.remove(c);
            }
        }
        // Filled pockets carry the children's sign and are not part of Ω_v.
        out.retain(|c| cube_sign(c) == sign);
        out
    }

    /// Sign of `u_0` on the predicted domain `Ω_v`.
    pub fn domain_sign(&self, v: usize) -> Polarity {
        self.nodes[v].structure.polarity
    }
}

/// Builds `C_v` for every node bottom-up: a leaf is a unit cube of sign
/// `root_polarity · (−1)^depth`, an inner node joins its engulfed children.
pub fn build_structure(tree: &RootedTree, n: usize, root_polarity: Polarity) -> Result<StructureAssembly> {
    if n < 2 {
        return Err(Error::invalid("dimension must be at least 2"));
    }
    let mut nodes = Vec::new();
    build_node(tree, n, root_polarity, 0, Vec::new(), None, &mut nodes)?;
    Ok(StructureAssembly {
        n,
        tree: tree.clone(),
        root_polarity,
        nodes,
    })
}

/// Appends the subtree's records in preorder and returns its structure in
/// the subtree's own frame. Records are shifted in place when the subtree is
/// translated by a join higher up.
fn build_node(
    tree: &RootedTree,
    n: usize,
    root_polarity: Polarity,
    depth: usize,
    path: Vec<usize>,
    parent: Option<usize>,
    nodes: &mut Vec<NodeRecord>,
) -> Result<CubeStructure> {
    let me = nodes.len();
    let polarity = if depth % 2 == 0 { root_polarity } else { root_polarity.flip() };
    nodes.push(NodeRecord {
        path: path.clone(),
        depth,
        parent,
        children: Vec::new(),
        structure: CubeStructure::single(vec![0; n]),
        join_edges: Vec::new(),
        join_translations: Vec::new(),
    });
    if tree.is_leaf() {
        let mut c = vec![0i64; n];
        if polarity == Polarity::Minus {
            c[0] = 1;
        }
        nodes[me].structure = CubeStructure::single(c);
        return Ok(nodes[me].structure.clone());
    }

    // Build children; remember each child's record range for later shifts.
    let mut engulfed = Vec::new();
    let mut ranges = Vec::new();
    for (j, child) in tree.children.iter().enumerate() {
        let mut p = path.clone();
        p.push(j + 1);
        let start = nodes.len();
        let c = build_node(child, n, root_polarity, depth + 1, p, Some(me), nodes)?;
        nodes[me].children.push(start);
        ranges.push(start..nodes.len());
        engulfed.push(engulf_unchecked(&c));
    }

    // Fold from the right; each step moves the accumulated tail.
    let k = engulfed.len();
    let mut acc = engulfed[k - 1].clone();
    let mut edges = Vec::new();
    let mut translations = Vec::new();
    for j in (0..k - 1).rev() {
        let joined = join_with_translation(&engulfed[j], &acc)?;
        for r in &ranges[j + 1..] {
            for rec in &mut nodes[r.clone()] {
                shift_record(rec, &joined.translation);
            }
        }
        for e in edges.iter_mut() {
            *e = Face::translated(e, &joined.translation);
        }
        edges.insert(0, joined.edge);
        translations.insert(0, joined.translation);
        acc = joined.structure;
    }
    nodes[me].structure = acc.clone();
    nodes[me].join_edges = edges;
    nodes[me].join_translations = translations;
    Ok(acc)
}

fn shift_record(rec: &mut NodeRecord, t: &[i64]) {
    rec.structure = rec.structure.translated(t);
    rec.join_edges = rec.join_edges.iter().map(|e| e.translated(t)).collect();
}

/// Edge sets attached to one node `v`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeClasses {
    /// Closed faces on `𝓢_ext(C_v)` other than joining faces.
    pub ext: BTreeSet<Face>,
    /// Faces connecting `𝓢_ext(C_v)` with a child's surface, mapped to the
    /// index of that child node.
    pub int: BTreeMap<Face, usize>,
    /// Open joining faces.
    pub join: BTreeSet<Face>,
    /// Lattice points on `𝓢_ext(C_v)`.
    pub surface_points: BTreeSet<LatticePoint>,
}

/// Classifies the faces attached to node `v`.
pub fn classify_edges(asm: &StructureAssembly, v: usize) -> Result<EdgeClasses> {
    let node = &asm.nodes[v];
    let children = node
        .children
        .iter()
        .map(|&ch| classify_edges(asm, ch))
        .collect::<Result<Vec<_>>>()?;
    classify_with(asm, v, &children)
}

/// Edge classes of every node, indexed like `asm.nodes`; each node is
/// classified once, children first.
pub fn classify_all(asm: &StructureAssembly) -> Result<Vec<EdgeClasses>> {
    let mut out: Vec<Option<EdgeClasses>> = vec![None; asm.nodes.len()];
    // Preorder reversed visits every child before its parent.
    for v in (0..asm.nodes.len()).rev() {
        let children: Vec<EdgeClasses> = asm.nodes[v]
            .children
            .iter()
            .map(|&ch| out[ch].clone().expect("child classified first"))
            .collect();
        out[v] = Some(classify_with(asm, v, &children)?);
    }
    Ok(out.into_iter().map(|c| c.expect("all classified")).collect())
}

fn classify_with(asm: &StructureAssembly, v: usize, child_classes: &[EdgeClasses]) -> Result<EdgeClasses> {
    let node = &asm.nodes[v];
    let n = asm.n;
    if node.is_leaf() {
        let c = node.structure.cubes.iter().next().expect("leaf cube");
        return Ok(EdgeClasses {
            ext: Face::all_of_cube(c).into_iter().collect(),
            int: BTreeMap::new(),
            join: BTreeSet::new(),
            surface_points: node.structure.vertices(),
        });
    }

    let mut union: HashSet<Cube> = HashSet::new();
    for &ch in &node.children {
        union.extend(asm.nodes[ch].structure.cubes.iter().cloned());
    }
    let occ = Occupancy::new(&union, 3);
    let join: BTreeSet<Face> = node.join_edges.iter().cloned().collect();

    // Candidates: faces and vertices of cubes within Chebyshev distance 1.
    let near = offsets(n, None);
    let dilated: HashSet<Cube> = union.iter().flat_map(|c| near.iter().map(move |d| add(c, d))).collect();
    let mut cand_faces = HashSet::new();
    let mut cand_points = HashSet::new();
    for q in dilated.iter().filter(|q| !union.contains(*q)) {
        cand_faces.extend(Face::all_of_cube(q));
        for mask in 0..(1u32 << n) {
            cand_points.insert((0..n).map(|k| q[k] + ((mask >> k) & 1) as i64).collect::<Vec<_>>());
        }
    }

    let mut ext = BTreeSet::new();
    for f in cand_faces {
        if join.contains(&f) {
            continue;
        }
        if face_on_surface(&f, &occ) {
            ext.insert(f);
        }
    }
    let surface_points: BTreeSet<LatticePoint> =
        cand_points.into_iter().filter(|p| point_on_surface(p, &occ)).collect();

    // Interior faces: faces of C_v joining this surface to a child's surface.
    let child_surfaces: Vec<(usize, &EdgeClasses)> = node.children.iter().copied().zip(child_classes).collect();
    let mut int = BTreeMap::new();
    for c in &node.structure.cubes {
        for f in Face::all_of_cube(c) {
            if ext.contains(&f) || join.contains(&f) || int.contains_key(&f) {
                continue;
            }
            let verts = f.vertices();
            if !verts.iter().any(|p| surface_points.contains(p)) {
                continue;
            }
            for (ch, cls) in &child_surfaces {
                if cls.ext.contains(&f) || cls.join.contains(&f) {
                    continue;
                }
                if verts.iter().any(|p| cls.surface_points.contains(p)) {
                    int.insert(f.clone(), *ch);
                    break;
                }
            }
        }
    }
    Ok(EdgeClasses {
        ext,
        int,
        join,
        surface_points,
    })
}

/// Closed face within Chebyshev distance exactly 1 of the union: no cube of
/// the union meets its closure and its center is within distance 1.
fn face_on_surface(f: &Face, union: &Occupancy) -> bool {
    let n = f.dim();
    let ranges: Vec<(i64, i64)> = (0..n).map(|k| f.range(k)).collect();
    // Cubes meeting the closure have c_k in [lo-1, hi].
    if any_cube_in(&ranges.iter().map(|(lo, hi)| (lo - 1, *hi)).collect::<Vec<_>>(), union) {
        return false;
    }
    // Center within distance 1 of cube c iff c_k in [ceil(x-2), floor(x+1)].
    let ctr = f.center();
    let boxes: Vec<(i64, i64)> = ctr.iter().map(|x| ((x - 2.0).ceil() as i64, (x + 1.0).floor() as i64)).collect();
    any_cube_in(&boxes, union)
}

fn point_on_surface(p: &[i64], union: &Occupancy) -> bool {
    let touching: Vec<(i64, i64)> = p.iter().map(|v| (v - 1, *v)).collect();
    let within: Vec<(i64, i64)> = p.iter().map(|v| (v - 2, v + 1)).collect();
    !any_cube_in(&touching, union) && any_cube_in(&within, union)
}

fn any_cube_in(ranges: &[(i64, i64)], union: &Occupancy) -> bool {
    let n = ranges.len();
    let mut c: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        if union.contains(&c) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == n {
                return false;
            }
            c[k] += 1;
            if c[k] <= ranges[k].1 {
                break;
            }
            c[k] = ranges[k].0;
            k += 1;
        }
    }
}

/// Dense membership table for a cube set over its bounding box plus a margin.
struct Occupancy {
    lo: Vec<i64>,
    hi: Vec<i64>,
    stride: Vec<usize>,
    bits: Vec<bool>,
}

impl Occupancy {
    fn new<'a>(cubes: impl IntoIterator<Item = &'a Cube> + Clone, margin: i64) -> Self {
        let (lo, hi) = bbox_of(cubes.clone().into_iter());
        let lo: Vec<i64> = lo.iter().map(|v| v - margin).collect();
        let hi: Vec<i64> = hi.iter().map(|v| v + margin).collect();
        let n = lo.len();
        let mut stride = vec![1usize; n];
        for k in (0..n - 1).rev() {
            stride[k] = stride[k + 1] * (hi[k + 1] - lo[k + 1] + 1) as usize;
        }
        let mut occ = Occupancy {
            bits: vec![false; stride[0] * (hi[0] - lo[0] + 1) as usize],
            lo,
            hi,
            stride,
        };
        for c in cubes {
            let i = occ.index(c).expect("inside the box");
            occ.bits[i] = true;
        }
        occ
    }

    fn index(&self, c: &[i64]) -> Option<usize> {
        let mut i = 0;
        for k in 0..c.len() {
            if c[k] < self.lo[k] || c[k] > self.hi[k] {
                return None;
            }
            i += (c[k] - self.lo[k]) as usize * self.stride[k];
        }
        Some(i)
    }

    fn contains(&self, c: &[i64]) -> bool {
        self.index(c).is_some_and(|i| self.bits[i])
    }
}

/// Connectivity of a face set, two faces being adjacent when their closures
/// meet. Closed lattice faces meet iff they share a lattice point, so this is
/// a union-find over face vertices.
pub fn faces_connected(faces: &BTreeSet<Face>) -> bool {
    if faces.len() <= 1 {
        return true;
    }
    let mut parent: Vec<usize> = (0..faces.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut owner: HashMap<LatticePoint, usize> = HashMap::new();
    for (i, f) in faces.iter().enumerate() {
        for p in f.vertices() {
            match owner.get(&p) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
                None => {
                    owner.insert(p, i);
                }
            }
        }
    }
    let r = find(&mut parent, 0);
    (1..faces.len()).all(|i| find(&mut parent, i) == r)
}
