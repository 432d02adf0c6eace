//! Experiment driver: sweeps over alpha, CSV rows, field and basis dumps.

use crate::config::RunConfig;
use crate::error::{MsfemError, Result};
use crate::fem::{reference_fine, sample_load, sample_operator, LoadSample, OperatorSample, Warning};
use crate::mesh::{build_coarse, refine_nested, Meshes};
use crate::metrics::{error_report, restrict};
use crate::offline::{compute_basis, compute_bubble, compute_correctors, BasisStore, Flavor, OfflineOptions};
use crate::online::{solve_method, MethodSpec, OnlineInputs};
use crate::problem::Problem;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CSV_HEADER: &str =
    "alpha,method,pathway,err_oble,err_full,norm_oble,norm_full,overshoot,offline_seconds,online_seconds,singular_flag";

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "MSFEM_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub alpha: f64,
    pub method: String,
    pub pathway: String,
    pub err_oble: f64,
    pub err_full: f64,
    pub norm_oble: f64,
    pub norm_full: f64,
    pub overshoot: f64,
    pub offline_seconds: f64,
    pub online_seconds: f64,
    pub singular: bool,
}

fn g17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "NaN".into()
    }
}

impl CsvRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            g17(self.alpha),
            self.method,
            self.pathway,
            g17(self.err_oble),
            g17(self.err_full),
            g17(self.norm_oble),
            g17(self.norm_full),
            g17(self.overshoot),
            g17(self.offline_seconds),
            g17(self.online_seconds),
            u8::from(self.singular)
        )
    }
}

/// Everything one sweep point needs: problem, meshes, samples and the fine reference.
pub struct SweepPoint {
    pub alpha: f64,
    pub problem: Problem,
    pub meshes: Meshes,
    pub sample: OperatorSample,
    pub load: LoadSample,
    /// Reference at the local fine nodes of each coarse element.
    pub reference: Vec<Vec<f64>>,
    pub warnings: Vec<Warning>,
}

impl SweepPoint {
    pub fn new(config: &RunConfig, alpha: f64) -> Result<SweepPoint> {
        let problem = config.problem(alpha)?;
        let meshes = refine_nested(&build_coarse(config.dim, config.coarse_n())?, config.levels(alpha))?;
        let sample = sample_operator(&meshes, &problem.fields);
        let load = sample_load(&meshes, &problem.fields);
        let r = reference_fine(&problem, &meshes, &sample, &load, config.form)?;
        Ok(SweepPoint { alpha, reference: restrict(&meshes, &r.values), warnings: r.warnings, problem, meshes, sample, load })
    }

    pub fn inputs(&self) -> OnlineInputs<'_> {
        OnlineInputs { problem: &self.problem, meshes: &self.meshes, sample: &self.sample, load: &self.load }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub rows: Vec<CsvRow>,
    pub warnings: Vec<String>,
    pub dumps: Vec<PathBuf>,
}

impl RunSummary {
    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn singular_count(&self) -> usize {
        self.rows.iter().filter(|r| r.singular).count()
    }
}

/// Worker count after the environment override.
pub fn worker_count(config: &RunConfig) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or(config.workers)
}

/// Runs `f` on a pool of the configured size.
pub fn with_workers<T: Send>(config: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(config))
        .build()
        .map_err(|e| MsfemError::InvalidInput(format!("cannot start workers: {e}")))?;
    Ok(pool.install(f))
}

/// Store for one sweep point: reused from `basis_cache` when present, extended as needed.
pub struct StoreSource {
    pub store: BasisStore,
    /// Seconds spent building the flavor-independent scalars in this run.
    pub setup_seconds: f64,
}

pub fn open_store(config: &RunConfig, point: &SweepPoint) -> Result<StoreSource> {
    let options = OfflineOptions { form: config.form, mu_bar: config.mu_bar };
    let key = crate::offline::store_key(&point.problem, &point.meshes, &options);
    if let Some(dir) = &config.basis_cache {
        if dir.join(&key).join("manifest.txt").exists() {
            let store = BasisStore::load(dir, &key)?;
            return Ok(StoreSource { store, setup_seconds: 0.0 });
        }
    }
    let t0 = Instant::now();
    let store = BasisStore::new(&point.problem, &point.meshes, &point.sample, options)?;
    Ok(StoreSource { store, setup_seconds: t0.elapsed().as_secs_f64() })
}

/// Solves every configured method at every alpha and collects one CSV row per pair.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    with_workers(config, || run_inner(config))?
}

fn run_inner(config: &RunConfig) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    for (ia, &alpha) in config.alphas.iter().enumerate() {
        let point = SweepPoint::new(config, alpha)?;
        for w in &point.warnings {
            let Warning::FinePecletTooLarge(pe) = w;
            summary.warnings.push(format!("alpha={alpha:e}: fine Peclet number {pe:.3} is not below 1"));
        }
        let StoreSource { mut store, mut setup_seconds } = open_store(config, &point)?;
        let mut dirty = false;
        for spec in &config.methods {
            let mut offline = std::mem::take(&mut setup_seconds);
            let row = match spec.method.flavor().map(|f| store.ensure(f, &point.meshes, &point.sample)) {
                Some(Err(MsfemError::SingularSystem(msg))) => {
                    summary.warnings.push(format!("alpha={alpha:e} {}: {msg}", spec.method));
                    singular_row(alpha, spec, offline)
                }
                Some(Err(e)) => return Err(e),
                other => {
                    if let Some(Ok(dt)) = other {
                        offline += dt;
                        dirty |= dt > 0.0;
                    }
                    solve_row(config, &point, &store, spec, offline, ia, &mut summary)?
                }
            };
            summary.rows.push(row);
        }
        if let (Some(dir), true) = (&config.basis_cache, dirty || store.offline_seconds > 0.0) {
            store.save(dir)?;
        }
    }
    if !config.timings {
        for r in summary.rows.iter_mut() {
            r.offline_seconds = 0.0;
            r.online_seconds = 0.0;
        }
    }
    Ok(summary)
}

fn singular_row(alpha: f64, spec: &MethodSpec, offline: f64) -> CsvRow {
    CsvRow {
        alpha,
        method: spec.method.name().into(),
        pathway: spec.pathway.name().into(),
        err_oble: f64::NAN,
        err_full: f64::NAN,
        norm_oble: f64::NAN,
        norm_full: f64::NAN,
        overshoot: f64::NAN,
        offline_seconds: offline,
        online_seconds: 0.0,
        singular: true,
    }
}

fn solve_row(
    config: &RunConfig,
    point: &SweepPoint,
    store: &BasisStore,
    spec: &MethodSpec,
    offline: f64,
    alpha_index: usize,
    summary: &mut RunSummary,
) -> Result<CsvRow> {
    let result = match solve_method(&point.inputs(), store, *spec) {
        Ok(r) => r,
        Err(e @ (MsfemError::SingularSystem(_) | MsfemError::ZeroBubbleIntegral(_))) => {
            summary.warnings.push(format!("alpha={:e} {}: {e}", point.alpha, spec.method));
            return Ok(singular_row(point.alpha, spec, offline));
        }
        Err(e) => return Err(e),
    };
    let rep = error_report(&point.meshes, &result, &point.reference)?;
    if let Some(dir) = &config.dump_dir {
        let path = dir.join(format!("field_a{alpha_index:02}_{}_{}.txt", spec.method.name(), spec.pathway.name()));
        write_field_dump(&path, &point.meshes, &result.fine_field, &result.p1_part, &point.reference)?;
        summary.dumps.push(path);
    }
    Ok(CsvRow {
        alpha: point.alpha,
        method: spec.method.name().into(),
        pathway: spec.pathway.name().into(),
        err_oble: rep.err_oble,
        err_full: rep.err_full,
        norm_oble: rep.norm_oble,
        norm_full: rep.norm_full,
        overshoot: rep.overshoot,
        offline_seconds: offline,
        online_seconds: result.online_seconds,
        singular: false,
    })
}

fn coords(meshes: &Meshes, g: usize) -> String {
    let p = meshes.fine.vertices[g];
    if meshes.dim() == 1 {
        format!("{:.16e}", p[0])
    } else {
        format!("{:.16e} {:.16e}", p[0], p[1])
    }
}

/// One line per local fine node of every coarse element: `x [y] reconstruction p1_part reference`.
pub fn write_field_dump(path: &Path, meshes: &Meshes, field: &[Vec<f64>], p1: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut s = String::new();
    let head = if meshes.dim() == 1 { "# x" } else { "# x y" };
    writeln!(s, "{head} reconstruction p1_part reference").unwrap();
    for (k, loc) in meshes.locals.iter().enumerate() {
        writeln!(s, "# element {k}").unwrap();
        for (q, &g) in loc.parent_map.iter().enumerate() {
            writeln!(s, "{} {:.16e} {:.16e} {:.16e}", coords(meshes, g), field[k][q], p1[k][q], reference[k][q]).unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn write_local(path: &Path, meshes: &Meshes, blocks: &[(usize, &[f64])]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in blocks {
        writeln!(s, "# element {k}").unwrap();
        for (q, &g) in meshes.locals[*k].parent_map.iter().enumerate() {
            writeln!(s, "{} {:.16e}", coords(meshes, g), v[q]).unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// What `dump_basis` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisTarget {
    /// All local functions of one element (bases, correctors, bubbles of every flavor).
    Element(usize),
    /// The weak basis function of an interior face on its two elements.
    Face(usize),
    /// The diffusion and strong basis functions of an interior vertex on the elements around it.
    Vertex(usize),
}

/// Writes fine nodal values (`x [y] value`) of local functions at the first configured alpha.
pub fn dump_basis(config: &RunConfig, target: BasisTarget, dir: &Path) -> Result<Vec<PathBuf>> {
    with_workers(config, || dump_basis_inner(config, target, dir))?
}

fn dump_basis_inner(config: &RunConfig, target: BasisTarget, dir: &Path) -> Result<Vec<PathBuf>> {
    let alpha = config.alphas[0];
    let problem = config.problem(alpha)?;
    let meshes = refine_nested(&build_coarse(config.dim, config.coarse_n())?, config.levels(alpha))?;
    let sample = sample_operator(&meshes, &problem.fields);
    let coarse = &meshes.coarse;
    let known = match target {
        BasisTarget::Element(k) => k < coarse.num_elements(),
        BasisTarget::Face(f) => f < coarse.faces.len(),
        BasisTarget::Vertex(v) => v < coarse.vertices.len(),
    };
    if !known {
        return Err(MsfemError::InvalidInput(format!("{target:?} does not exist")));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let form = config.form;
    match target {
        BasisTarget::Element(k) => {
            if k >= coarse.num_elements() {
                return Err(MsfemError::InvalidInput(format!("element {k} does not exist")));
            }
            for f in [Flavor::Diffusion, Flavor::Strong, Flavor::Weak] {
                for (l, b) in compute_basis(&meshes, k, &sample, form, f)?.iter().enumerate() {
                    let p = dir.join(format!("element{k}_{}_basis{l}.txt", f.name()));
                    write_local(&p, &meshes, &[(k, b)])?;
                    out.push(p);
                }
                for (a, c) in compute_correctors(&meshes, k, &sample, form, f)?.iter().enumerate() {
                    let p = dir.join(format!("element{k}_{}_corrector{a}.txt", f.name()));
                    write_local(&p, &meshes, &[(k, c)])?;
                    out.push(p);
                }
                if f != Flavor::Diffusion {
                    let b = compute_bubble(&meshes, k, &sample, form, f)?;
                    let p = dir.join(format!("element{k}_{}_bubble.txt", f.name()));
                    write_local(&p, &meshes, &[(k, &b)])?;
                    out.push(p);
                }
            }
        }
        BasisTarget::Face(fid) => {
            let face = coarse.faces.get(fid).ok_or_else(|| MsfemError::InvalidInput(format!("face {fid} does not exist")))?;
            if face.boundary {
                return Err(MsfemError::InvalidInput(format!("face {fid} is on the boundary and carries no dof")));
            }
            let mut parts = Vec::new();
            for k in face.elements.iter().flatten() {
                let l = coarse.faces_of(*k).iter().position(|&f| f == fid).unwrap();
                parts.push((*k, compute_basis(&meshes, *k, &sample, form, Flavor::Weak)?.swap_remove(l)));
            }
            let p = dir.join(format!("face{fid}_weak_basis.txt"));
            let refs: Vec<(usize, &[f64])> = parts.iter().map(|(k, v)| (*k, v.as_slice())).collect();
            write_local(&p, &meshes, &refs)?;
            out.push(p);
        }
        BasisTarget::Vertex(v) => {
            if v >= coarse.vertices.len() {
                return Err(MsfemError::InvalidInput(format!("vertex {v} does not exist")));
            }
            if coarse.is_boundary_vertex(v) {
                return Err(MsfemError::InvalidInput(format!("vertex {v} is on the boundary and carries no dof")));
            }
            for f in [Flavor::Diffusion, Flavor::Strong] {
                let mut parts = Vec::new();
                for k in 0..coarse.num_elements() {
                    if let Some(l) = coarse.cell(k).iter().position(|&x| x == v) {
                        parts.push((k, compute_basis(&meshes, k, &sample, form, f)?.swap_remove(l)));
                    }
                }
                let p = dir.join(format!("vertex{v}_{}_basis.txt", f.name()));
                let refs: Vec<(usize, &[f64])> = parts.iter().map(|(k, v)| (*k, v.as_slice())).collect();
                write_local(&p, &meshes, &refs)?;
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Solves one method at the first configured alpha and writes its field dump.
pub fn dump_field(config: &RunConfig, spec: MethodSpec, path: &Path) -> Result<()> {
    with_workers(config, || -> Result<()> {
        let point = SweepPoint::new(config, config.alphas[0])?;
        let mut src = open_store(config, &point)?;
        if let Some(f) = spec.method.flavor() {
            src.store.ensure(f, &point.meshes, &point.sample)?;
        }
        let r = solve_method(&point.inputs(), &src.store, spec)?;
        write_field_dump(path, &point.meshes, &r.fine_field, &r.p1_part, &point.reference)
    })?
}
