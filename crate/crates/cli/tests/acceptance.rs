//! End-to-end acceptance run. Prints one `criterion k: PASS|FAIL` line per
//! criterion; the test fails if any criterion outside `KNOWN_FAILURES` fails.
//!
//! Run alone with `cargo test -p nodal-cli --test acceptance`.

use std::collections::BTreeMap;
use std::io::Write;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nodal_core::cubeworld::{
    build_structure, classify_all, engulf, faces_connected, join_translation, pockets, validate,
    CubeStructure, Polarity,
};
use nodal_core::eigenfield::{planewave_transform_check, sample_rpw, FieldSampleParams};
use nodal_core::nodal::{ensemble_stats, marching_simplices, mesh_components, sign_grid_with, EnsembleParams, Grid};
use nodal_core::realize::{dirichlet_ground_state, realize_component, RealizeComponentParams, Shape, VoxelDomain};
use nodal_core::specfun::{covariance_kernel, harmonic_dim};
use nodal_core::tree::{ordered_trees, trees_isomorphic, unordered_trees, RootedTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail, with the reason recorded in the README.
const KNOWN_FAILURES: &[usize] = &[4];

const TREES: [&str; 5] = ["[]", "[[]]", "[[],[]]", "[[[]]]", "[[[],[]],[]]"];

type Outcome = Result<String, String>;

fn nodal(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nodal")).args(args).output().expect("run nodal");
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn transform_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = if rng.gen_bool(0.5) { 2 } else { 3 };
        let l = rng.gen_range(0..=6);
        let m = rng.gen_range(1..=harmonic_dim(n, l).unwrap());
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let r = rng.gen_range(0.0..=15.0);
        let x: Vec<f64> = dir.iter().map(|v| v / len * r).collect();
        let (a, b) = planewave_transform_check(n, l, m, &x).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
    }
    check(worst <= 1e-7, format!("max |lhs - rhs| = {worst:.2e} over 50 instances"))
}

fn covariance() -> Outcome {
    let fields = 20_000;
    let radii = [0.5, 1.0, 2.0, PI];
    let mut worst = 0.0f64;
    for n in [2usize, 3] {
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for seed in 0..fields {
            let f = sample_rpw(&FieldSampleParams::monochromatic(n, 32, seed as u64)).map_err(|e| e.to_string())?;
            let origin = vec![0.0; n];
            let f0 = f.value(&origin);
            for (k, &r) in radii.iter().enumerate() {
                let mut x = origin.clone();
                x[0] = r;
                let p = f0 * f.value(&x);
                sum[k] += p;
                sq[k] += p * p;
            }
        }
        for (k, &r) in radii.iter().enumerate() {
            let mean = sum[k] / fields as f64;
            let var = (sq[k] / fields as f64 - mean * mean) * fields as f64 / (fields - 1) as f64;
            let se = (var / fields as f64).sqrt();
            let z = (mean - covariance_kernel(n, r).unwrap()).abs() / se;
            worst = worst.max(z);
        }
    }
    check(worst <= 4.0, format!("largest deviation {worst:.2} standard errors"))
}

/// Plus-polarity diagonal walk with its pockets filled, optionally engulfed.
fn random_structure(rng: &mut ChaCha8Rng) -> CubeStructure {
    let n = rng.gen_range(2..=3);
    let size = rng.gen_range(1..=40);
    let mut cur = vec![0i64; n];
    let mut cubes = std::collections::BTreeSet::from([cur.clone()]);
    while cubes.len() < size {
        let i = rng.gen_range(0..n);
        let j = (i + rng.gen_range(1..n)) % n;
        cur[i] += if rng.gen_bool(0.5) { 1 } else { -1 };
        cur[j] += if rng.gen_bool(0.5) { 1 } else { -1 };
        cubes.insert(cur.clone());
    }
    let c = CubeStructure::new(Polarity::Plus, cubes.clone()).unwrap();
    cubes.extend(pockets(&c));
    let c = CubeStructure::new(Polarity::Plus, cubes).unwrap();
    if rng.gen_bool(0.5) {
        engulf(&c).unwrap()
    } else {
        c
    }
}

fn combinatorics() -> Outcome {
    for n in 2..=5 {
        let e = engulf(&CubeStructure::single(vec![0; n])).map_err(|e| e.to_string())?;
        // Neighbours in the 3^n block with odd coordinate sum have the
        // opposite sign.
        let mut brute = 1;
        for code in 0..3usize.pow(n as u32) {
            let d: Vec<i64> = (0..n).map(|k| (code / 3usize.pow(k as u32) % 3) as i64 - 1).collect();
            if d.iter().sum::<i64>().rem_euclid(2) == 1 {
                brute += 1;
            }
        }
        if e.len() != brute || e.polarity != Polarity::Minus {
            return Err(format!("engulf of a single cube in n = {n}: {} cubes, expected {brute}", e.len()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut joins = 0;
    while joins < 200 {
        let a = random_structure(&mut rng);
        let b = random_structure(&mut rng);
        if a.dim() != b.dim() || a.polarity != b.polarity {
            continue;
        }
        if !validate(&a).is_valid() || !validate(&b).is_valid() {
            return Err("random structure is invalid".into());
        }
        let t = join_translation(&a, &b);
        if t.iter().sum::<i64>().rem_euclid(2) != 0 {
            return Err(format!("odd join translation {t:?}"));
        }
        joins += 1;
    }
    let mut assemblies = 0;
    for nodes in 1..=8 {
        for t in unordered_trees(nodes) {
            let asm = build_structure(&t, 3, Polarity::Minus).map_err(|e| e.to_string())?;
            let classes = classify_all(&asm).map_err(|e| e.to_string())?;
            if let Some(v) = classes.iter().position(|c| !faces_connected(&c.ext)) {
                return Err(format!("exterior edges of node {v} of {t} are disconnected"));
            }
            assemblies += 1;
        }
    }
    Ok(format!("engulf counts n = 2..5, 200 even joins, {assemblies} assemblies with connected exterior edges"))
}

#[derive(Debug)]
struct TreeRun {
    tree: &'static str,
    code: i32,
    dir: PathBuf,
    report: Option<serde_json::Value>,
    seconds: f64,
}

fn realize_trees(root: &Path) -> Vec<TreeRun> {
    TREES
        .iter()
        .enumerate()
        .map(|(i, &tree)| {
            let dir = root.join(format!("tree{i}"));
            let start = Instant::now();
            let (code, _) = nodal(&["realize-tree", "--tree", tree, "--grid-h", "0.05", "--jobs", "1", "-o", dir.to_str().unwrap()]);
            let report = std::fs::read_to_string(dir.join("report.json")).ok().and_then(|s| serde_json::from_str(&s).ok());
            TreeRun { tree, code, dir, report, seconds: start.elapsed().as_secs_f64() }
        })
        .collect()
}

fn tree_realization(runs: &[TreeRun]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for r in runs {
        let passed = r.code == 0 && r.report.as_ref().is_some_and(|v| v["passed"] == true);
        ok &= passed;
        let c1 = r.report.as_ref().map_or(f64::NAN, |v| v["fit"]["achieved_sup_c1_error"].as_f64().unwrap_or(f64::NAN));
        lines.push(format!("{} exit {} C1 {:.3e} {:.0}s", r.tree, r.code, c1, r.seconds));
    }
    check(ok, lines.join("; "))
}

fn structure_checks(runs: &[TreeRun]) -> Outcome {
    let mut checked = 0;
    for r in runs {
        let Some(v) = &r.report else { continue };
        if v["passed"] != true {
            continue;
        }
        let nodes = v["nodes"].as_array().cloned().unwrap_or_default();
        let each = nodes.iter().all(|n| n["hausdorff_ok"] == true && n["no_bounded_holes"] == true);
        if v["structure_checks_ok"] != true || !each || nodes.len() != RootedTree::parse(r.tree).unwrap().node_count() {
            return Err(format!("{} fails a structural check", r.tree));
        }
        checked += 1;
    }
    check(checked > 0, format!("{checked} passing realizations checked"))
}

fn topology() -> Outcome {
    fn chi<F: Fn(&[f64]) -> f64 + Sync>(half: f64, f: F) -> Vec<i64> {
        let g = Grid::covering(&[-half; 3], &[half; 3], 0.05).unwrap();
        let mesh = marching_simplices(&sign_grid_with(&g, f)).unwrap();
        mesh_components(&mesh).iter().map(|c| c.topology.euler_characteristic).collect()
    }
    let torus = |x: &[f64], cx: f64, big: f64, small: f64| ((x[0] - cx).hypot(x[1]) - big).hypot(x[2]) - small;
    let got = [
        chi(1.6, |x| x.iter().map(|v| v * v).sum::<f64>() - 1.0),
        chi(3.2, |x| torus(x, 0.0, 2.0, 0.8)),
        chi(2.6, |x| torus(x, -1.0, 1.1, 0.4).min(torus(x, 1.0, 1.1, 0.4))),
    ];
    check(got == [vec![2], vec![0], vec![-2]], format!("chi {got:?}"))
}

fn surrogate() -> Outcome {
    let cube = VoxelDomain::from_shape(&Shape::Cube { side: 1.0 }, 0.025).map_err(|e| e.to_string())?;
    let lc = dirichlet_ground_state(&cube, 1e-8).map_err(|e| e.to_string())?.eigenvalue;
    let ball = VoxelDomain::from_shape(&Shape::Ball { radius: 1.0 }, 0.02).map_err(|e| e.to_string())?;
    let lb = dirichlet_ground_state(&ball, 1e-8).map_err(|e| e.to_string())?.eigenvalue;
    let p = RealizeComponentParams::default();
    let genus = |shape: Shape| -> Result<(Option<i64>, bool), String> {
        let d = VoxelDomain::from_shape(&shape, 0.05).map_err(|e| e.to_string())?;
        let r = realize_component(&d, &p).map_err(|e| e.to_string())?;
        Ok((r.topology.genus, r.report.genus_stable))
    };
    let gb = genus(Shape::Ball { radius: 1.0 })?;
    let gt = genus(Shape::Torus { major: 2.0, minor: 0.8 })?;
    let rc = (lc / (3.0 * PI * PI) - 1.0).abs();
    let rb = (lb / (PI * PI) - 1.0).abs();
    check(
        rc <= 0.01 && rb <= 0.01 && gb == (Some(0), true) && gt == (Some(1), true),
        format!("cube {lc:.4} ({:.2}%), ball {lb:.4} ({:.2}%), genus ball {gb:?} torus {gt:?}", rc * 100.0, rb * 100.0),
    )
}

/// Isomorphism by trying every matching of children.
fn iso_brute(a: &RootedTree, b: &RootedTree) -> bool {
    fn matches(xs: &[RootedTree], ys: &[RootedTree], used: &mut Vec<bool>) -> bool {
        let Some((x, rest)) = xs.split_first() else { return true };
        for j in 0..ys.len() {
            if !used[j] && iso_brute(x, &ys[j]) {
                used[j] = true;
                if matches(rest, ys, used) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    a.children.len() == b.children.len() && matches(&a.children, &b.children, &mut vec![false; b.children.len()])
}

fn canonicalization() -> Outcome {
    let all: Vec<RootedTree> = (1..=7).flat_map(ordered_trees).collect();
    let mut pairs = 0usize;
    for a in &all {
        for b in &all {
            if a.node_count() == b.node_count() && trees_isomorphic(a, b) != iso_brute(a, b) {
                return Err(format!("{a} vs {b}"));
            }
            pairs += 1;
        }
    }
    Ok(format!("{} ordered trees, {pairs} pairs", all.len()))
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        files.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
    }
    files
}

fn determinism(root: &Path, runs: &[TreeRun]) -> Outcome {
    let run_twice = |name: &str, args: &dyn Fn(&Path) -> Vec<String>| -> Result<(), String> {
        let mut outputs = Vec::new();
        for k in 0..2 {
            let dir = root.join(format!("{name}{k}"));
            std::fs::create_dir_all(&dir).unwrap();
            let a = args(&dir);
            let refs: Vec<&str> = a.iter().map(String::as_str).collect();
            let (code, text) = nodal(&refs);
            if code != 0 {
                return Err(format!("{name} exited {code}: {text}"));
            }
            outputs.push(read_dir_bytes(&dir));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return Err(format!("{name} outputs differ between runs"));
        }
        Ok(())
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let p = |d: &Path, f: &str| d.join(f).to_string_lossy().into_owned();
    run_twice("sample", &|d| s(&["sample", "--dim", "3", "--waves", "64", "--seed", "5", "--jobs", "1", "-o", &p(d, "field.json")]))?;
    let field = root.join("sample0").join("field.json").to_string_lossy().into_owned();
    run_twice("analyze", &|d| s(&["analyze", &field, "--box", "-4:4", "--res", "0.2", "--jobs", "1", "-o", &p(d, "")]))?;
    run_twice("stats", &|d| s(&["stats", "--dim", "2", "--samples", "8", "--radius", "20", "--seed", "3", "--jobs", "1", "-o", &p(d, "")]))?;
    run_twice("surface", &|d| s(&["realize-surface", "--shape", "ball", "--h", "0.1", "--jobs", "1", "-o", &p(d, "")]))?;
    // Realizations were run once already; repeat the cheap ones.
    let mut repeated = 0;
    for r in runs.iter().filter(|r| r.code == 0 && r.seconds < 60.0) {
        let dir = root.join(format!("again{repeated}"));
        let (code, _) = nodal(&["realize-tree", "--tree", r.tree, "--grid-h", "0.05", "--jobs", "1", "-o", dir.to_str().unwrap()]);
        if code != 0 || read_dir_bytes(&dir) != read_dir_bytes(&r.dir) {
            return Err(format!("realize-tree {} differs between runs", r.tree));
        }
        repeated += 1;
    }
    Ok(format!("sample, analyze, stats, realize-surface and {repeated} realize-tree runs are byte-identical"))
}

fn ensemble() -> Outcome {
    let p = EnsembleParams { n: 2, samples: 200, radius: 50.0, seed: 7, ..EnsembleParams::default() };
    let s = ensemble_stats(&p).map_err(|e| e.to_string())?;
    let loops = s.irregular == 0 && s.topology.count("circle") == s.components;
    check(
        s.components > 0 && loops && s.trees.bins.len() >= 3,
        format!("{} compact components, {} irregular, {} tree classes", s.components, s.irregular, s.trees.bins.len()),
    )
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut timed = |k: usize, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let r = f();
        let secs = start.elapsed().as_secs_f64();
        // Written past the test harness capture so the summary always shows.
        let line = match &r {
            Ok(d) => format!("criterion {k}: PASS ({secs:.0}s) {d}\n"),
            Err(d) => format!("criterion {k}: FAIL ({secs:.0}s) {d}\n"),
        };
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        results.push((k, r, secs));
    };
    timed(1, &mut transform_identity);
    timed(2, &mut covariance);
    timed(3, &mut combinatorics);
    let runs = realize_trees(root);
    timed(4, &mut || tree_realization(&runs));
    timed(5, &mut || structure_checks(&runs));
    timed(6, &mut topology);
    timed(7, &mut surrogate);
    timed(8, &mut canonicalization);
    timed(9, &mut || determinism(root, &runs));
    timed(10, &mut ensemble);

    let unexpected: Vec<usize> =
        results.iter().filter(|(k, r, _)| r.is_err() && !KNOWN_FAILURES.contains(k)).map(|(k, _, _)| *k).collect();
    let fixed: Vec<usize> = results.iter().filter(|(k, r, _)| r.is_ok() && KNOWN_FAILURES.contains(k)).map(|(k, _, _)| *k).collect();
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
    assert!(fixed.is_empty(), "criteria listed as known failures now pass: {fixed:?}");
}
