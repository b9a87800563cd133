use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use nodal_core::cubeworld::Polarity;
use nodal_core::eigenfield::{sample_rpw, EigenField, FieldSampleParams};
use nodal_core::nodal::{
    decompose, ensemble_stats, extract_zero_set, marching_simplices, mesh_components, realize_and_verify, sign_grid, write_obj,
    EnsembleParams, Grid, MeshComponent, RealizeParams, TopologyRecord, ZeroSetMesh,
};
use nodal_core::realize::{load_domain, realize_component, RealizeComponentParams, Shape, VoxelDomain};
use nodal_core::tree::RootedTree;

use crate::config::Settings;
use crate::{out_dir, Cli, CliError, Command};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let settings = Settings::load(&cli.config)?;
    let jobs = settings.pick("jobs", (cli.jobs != 1).then_some(cli.jobs), 1usize)?;
    // Ignore a second initialization (only possible in tests).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    let seed = settings.pick("seed", cli.seed, 0u64)?;
    match &cli.command {
        Command::RealizeTree(a) => realize_tree(a, &settings),
        Command::Stats(a) => stats(a, &settings, seed, jobs),
        Command::Sample(a) => sample(a, &settings, seed),
        Command::Analyze(a) => analyze(a, &settings),
        Command::RealizeSurface(a) => realize_surface(a, &settings),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn write_mesh(path: &Path, mesh: &ZeroSetMesh, comps: &[MeshComponent]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_obj(mesh, comps, &mut w)?;
    w.flush().map_err(|e| CliError::io(e.to_string()))
}

fn parse_polarity(s: &str) -> Result<Polarity, CliError> {
    match s {
        "minus" | "-" => Ok(Polarity::Minus),
        "plus" | "+" => Ok(Polarity::Plus),
        _ => Err(CliError::usage(format!("polarity must be plus or minus, got `{s}`"))),
    }
}

#[derive(Args, Debug)]
pub struct RealizeTreeArgs {
    /// Tree as nested arrays (e.g. "[[],[]]") or a file holding one.
    #[arg(long)]
    pub tree: String,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Polarity of the root structure: minus or plus.
    #[arg(long)]
    pub polarity: Option<String>,
    /// Spacing of the analysis grid.
    #[arg(long)]
    pub grid_h: Option<f64>,
    /// Plane-wave direction pairs in the fit.
    #[arg(long)]
    pub waves: Option<usize>,
    /// Also extract at half the spacing and compare trees.
    #[arg(long)]
    pub refine: bool,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn realize_tree(a: &RealizeTreeArgs, s: &Settings) -> Result<(), CliError> {
    let text = if Path::new(&a.tree).is_file() {
        std::fs::read_to_string(&a.tree).map_err(|e| CliError::io(format!("{}: {e}", a.tree)))?
    } else {
        a.tree.clone()
    };
    let tree = RootedTree::parse(&text)?;
    let dir = out_dir(&a.out)?;
    let mut p = RealizeParams::default();
    p.n = s.pick("dim", a.dim, p.n)?;
    if p.n != 3 {
        return Err(CliError::usage("realize-tree is verified numerically in dimension 3 only"));
    }
    let pol: String = s.pick("polarity", a.polarity.clone(), "minus".to_string())?;
    p.polarity = parse_polarity(&pol)?;
    p.grid_h = s.pick("grid-h", a.grid_h, p.grid_h)?;
    p.fit.waves = s.pick("waves", a.waves, p.fit.waves)?;
    p.refine_check = a.refine || s.pick("refine", None, false)?;

    let r = realize_and_verify(&tree, &p)?;
    write_json(&dir.join("fit_report.json"), &r.report.fit)?;
    write_json(&dir.join("report.json"), &r.report)?;
    write_file(&dir.join("u_eps.json"), (r.u_eps.to_json()? + "\n").as_bytes())?;
    let mesh = marching_simplices(&r.sign_grid)?;
    let comps: Vec<MeshComponent> = mesh_components(&mesh).into_iter().filter(|c| c.topology.component_is_compact).collect();
    write_mesh(&dir.join("zero_set.obj"), &mesh, &comps)?;
    if let Some(nt) = &r.nesting {
        write_json(&dir.join("extracted_tree.json"), &nt.tree)?;
    }
    println!(
        "tree {} extracted {} {}",
        r.report.tree,
        r.report.extracted.as_deref().unwrap_or("-"),
        if r.report.passed { "PASS" } else { "FAIL" }
    );
    println!(
        "fit C1 error {:.3e} (target {}), sign margin {:.3}, epsilon {:.3e}",
        r.report.fit.achieved_sup_c1_error, r.report.fit.target, r.report.fit.sign_margin, r.report.epsilon.epsilon
    );
    if r.report.passed {
        return Ok(());
    }
    let why = r.report.failure.clone().unwrap_or_else(|| "extracted tree differs".into());
    if r.report.fit.sign_margin <= 0.0 || r.report.fit.zero_count_mismatches > 0 {
        Err(CliError::fit(format!("fit misses the sign pattern of h: {why}")))
    } else {
        Err(CliError::verification(why))
    }
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub waves: Option<usize>,
    /// Grid spacing.
    #[arg(long)]
    pub res: Option<f64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn stats(a: &StatsArgs, s: &Settings, seed: u64, jobs: usize) -> Result<(), CliError> {
    let d = EnsembleParams::default();
    let n = s.pick("dim", a.dim, 2)?;
    let p = EnsembleParams {
        n,
        samples: s.pick("samples", a.samples, d.samples)?,
        radius: s.pick("radius", a.radius, if n == 3 { 12.0 } else { d.radius })?,
        seed,
        waves: s.pick("waves", a.waves, d.waves)?,
        h: s.pick("res", a.res, d.h)?,
        jobs,
    };
    let dir = out_dir(&a.out)?;
    let st = ensemble_stats(&p)?;
    write_file(&dir.join("topology.csv"), st.topology.to_csv().as_bytes())?;
    write_file(&dir.join("trees.csv"), st.trees.to_csv().as_bytes())?;
    write_json(&dir.join("stats.json"), &st)?;
    println!("{} compact components in {} samples ({} irregular)", st.components, p.samples, st.irregular);
    for b in st.trees.bins.iter().take(5) {
        println!("  {:<16} {:>6}  {:.4}", b.key, b.count, b.frequency);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub waves: Option<usize>,
    /// Output field JSON.
    #[arg(short, long)]
    pub out: PathBuf,
}

fn sample(a: &SampleArgs, s: &Settings, seed: u64) -> Result<(), CliError> {
    let n = s.pick("dim", a.dim, 3)?;
    let waves = s.pick("waves", a.waves, 256)?;
    let f = sample_rpw(&FieldSampleParams::monochromatic(n, waves, seed))?;
    write_file(&a.out, (f.to_json()? + "\n").as_bytes())?;
    println!("wrote {} ({n}D, {waves} waves, seed {seed})", a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Field JSON.
    pub field: PathBuf,
    /// Box as `lo:hi` (every axis) or `lo1:hi1,lo2:hi2,...`.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Grid spacing.
    #[arg(long)]
    pub res: Option<f64>,
    /// Zero sets with gradient below this fraction of the median are
    /// reported as degenerate.
    #[arg(long)]
    pub gradient_tol: Option<f64>,
    /// Output directory (default: next to the field).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    field: String,
    lo: Vec<f64>,
    hi: Vec<f64>,
    h: f64,
    grid_dims: Vec<usize>,
    domains: usize,
    bounded_domains: usize,
    interfaces: usize,
    nudged: usize,
    degenerate: Option<String>,
    min_gradient_ratio: Option<f64>,
    components: Vec<TopologyRecord>,
}

pub fn parse_box(s: &str, n: usize) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let bad = || CliError::usage(format!("box must be lo:hi or lo:hi,... for {n} axes, got `{s}`"));
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 1 && parts.len() != n {
        return Err(bad());
    }
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for k in 0..n {
        let p = parts[if parts.len() == 1 { 0 } else { k }];
        let (a, b) = p.split_once(':').ok_or_else(bad)?;
        lo.push(a.trim().parse::<f64>().map_err(|_| bad())?);
        hi.push(b.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok((lo, hi))
}

fn analyze(a: &AnalyzeArgs, s: &Settings) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.field).map_err(|e| CliError::io(format!("{}: {e}", a.field.display())))?;
    let f = EigenField::from_json(&text)?;
    let n = f.dim();
    let bounds: String = s.pick("box", a.bounds.clone(), "-10:10".to_string())?;
    let (lo, hi) = parse_box(&bounds, n)?;
    let h = s.pick("res", a.res, 0.1)?;
    let tol = s.pick("gradient-tol", a.gradient_tol, 1e-3)?;
    let dir = match &a.out {
        Some(_) => out_dir(&a.out)?,
        None => a.field.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let stem = a.field.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "field".into());
    let grid = Grid::covering(&lo, &hi, h)?;
    let sg = sign_grid(&f, &grid)?;
    let dec = decompose(&sg);
    let (mesh, comps, degenerate, ratio) = match extract_zero_set(&f, &grid, tol) {
        Ok(z) => (z.mesh, z.components, None, Some(z.min_gradient_ratio)),
        Err(nodal_core::Error::DegenerateZeroSet { gradient, location }) => {
            let mesh = marching_simplices(&sg)?;
            let comps = mesh_components(&mesh);
            (mesh, comps, Some(format!("gradient {gradient:e} at {location:?}")), None)
        }
        Err(e) => return Err(e.into()),
    };
    let report = AnalyzeReport {
        field: a.field.display().to_string(),
        lo,
        hi,
        h,
        grid_dims: grid.dims.clone(),
        domains: dec.domains.count(),
        bounded_domains: dec.domains.touches_boundary.iter().filter(|&&t| !t).count(),
        interfaces: dec.interfaces.len(),
        nudged: dec.nudged,
        degenerate,
        min_gradient_ratio: ratio,
        components: comps.iter().map(|c| c.topology.clone()).collect(),
    };
    write_json(&dir.join(format!("{stem}.analysis.json")), &report)?;
    write_mesh(&dir.join(format!("{stem}.zero_set.obj")), &mesh, &comps)?;
    println!(
        "{} nodal domains ({} bounded), {} zero-set components{}",
        report.domains,
        report.bounded_domains,
        report.components.len(),
        if report.degenerate.is_some() { ", degenerate zero set" } else { "" }
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct RealizeSurfaceArgs {
    /// ball, cube, torus or superellipsoid (default parameters).
    #[arg(long, conflicts_with = "domain")]
    pub shape: Option<String>,
    /// Shape JSON ({"shape": ...}) or voxel mask header JSON.
    #[arg(long)]
    pub domain: Option<PathBuf>,
    /// Spacing of the eigenvalue grid.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub waves: Option<usize>,
    /// Zero-set extraction spacing (rescaled units).
    #[arg(long)]
    pub extraction_h: Option<f64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn realize_surface(a: &RealizeSurfaceArgs, s: &Settings) -> Result<(), CliError> {
    let h = s.pick("h", a.h, 0.05)?;
    let domain: VoxelDomain = match (&a.shape, &a.domain) {
        (_, Some(path)) => load_domain(path, h)?,
        (shape, None) => {
            let name: String = s.pick("shape", shape.clone(), "ball".to_string())?;
            let shape: Shape = match name.as_str() {
                "superellipsoid" => Shape::Superellipsoid { radii: [1.0, 1.0, 1.0], exponent: 4.0 },
                other => serde_json::from_value(serde_json::json!({ "shape": other }))
                    .map_err(|_| CliError::usage(format!("unknown shape `{other}`")))?,
            };
            VoxelDomain::from_shape(&shape, h)?
        }
    };
    let dir = out_dir(&a.out)?;
    let mut p = RealizeComponentParams::default();
    p.fit.waves = s.pick("waves", a.waves, p.fit.waves)?;
    p.extraction_h = s.pick("extraction-h", a.extraction_h, p.extraction_h)?;
    let r = realize_component(&domain, &p)?;
    write_json(&dir.join("report.json"), &r.report)?;
    write_file(&dir.join("field.json"), (r.f.to_json()? + "\n").as_bytes())?;
    write_mesh(&dir.join("component.obj"), &r.mesh, std::slice::from_ref(&r.component))?;
    println!(
        "lambda^2 {:.6}, genus {}, C1 error {:.3e} (target {}), hausdorff {:.3} {}",
        r.report.eigenvalue,
        r.topology.genus.map_or("-".into(), |g| g.to_string()),
        r.report.achieved_sup_c1_error,
        r.report.target,
        r.report.hausdorff,
        if r.report.passed { "PASS" } else { "FAIL" }
    );
    if r.report.passed {
        Ok(())
    } else {
        Err(CliError::verification("realized component is unstable or leaves the shell"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_parse_with_negative_bounds() {
        assert_eq!(parse_box("-10:10", 2).unwrap(), (vec![-10.0, -10.0], vec![10.0, 10.0]));
        assert_eq!(parse_box("0:3,-1:2,0:1", 3).unwrap(), (vec![0.0, -1.0, 0.0], vec![3.0, 2.0, 1.0]));
        assert!(parse_box("0:3,0:1", 3).is_err());
        assert!(parse_box("0-3", 1).is_err());
    }
}
