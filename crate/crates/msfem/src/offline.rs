//! Offline stage: multiscale basis functions, correctors, bubbles and upscaled scalars.

use crate::error::{MsfemError, Result};
use crate::fem::{
    dot, local_coordinates, local_unit_load, DirichletSolver, FormKind, LocalOperator, OperatorSample, WeakSolver,
};
use crate::mesh::{directional_diameter, Meshes, Point};
use crate::problem::{CoefficientField, Matrix2, Problem};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Rule for the representative diffusion in the element Peclet number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MuBarRule {
    #[default]
    MinMaxMean,
    ArithmeticMean,
    HarmonicMean,
}

impl MuBarRule {
    pub fn name(&self) -> &'static str {
        match self {
            MuBarRule::MinMaxMean => "minmax",
            MuBarRule::ArithmeticMean => "arithmetic",
            MuBarRule::HarmonicMean => "harmonic",
        }
    }

    pub fn apply(&self, values: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = values.collect();
        match self {
            MuBarRule::MinMaxMean => {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                0.5 * (lo + hi)
            }
            MuBarRule::ArithmeticMean => v.iter().sum::<f64>() / v.len() as f64,
            MuBarRule::HarmonicMean => v.len() as f64 / v.iter().map(|x| 1.0 / x).sum::<f64>(),
        }
    }
}

impl std::str::FromStr for MuBarRule {
    type Err = MsfemError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" | "minmax-mean" | "minmax_mean" => Ok(MuBarRule::MinMaxMean),
            "arithmetic" | "arithmetic-mean" | "arithmetic_mean" => Ok(MuBarRule::ArithmeticMean),
            "harmonic" | "harmonic-mean" | "harmonic_mean" => Ok(MuBarRule::HarmonicMean),
            _ => Err(MsfemError::InvalidInput(format!("unknown mu-bar rule `{s}`"))),
        }
    }
}

/// Which family of local problems to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flavor {
    /// Diffusion-only operator, Dirichlet traces (MsFEM-lin).
    Diffusion,
    /// Full operator, Dirichlet traces (Adv-MsFEM-lin).
    Strong,
    /// Full operator, face-mean constraints (Adv-MsFEM-CR).
    Weak,
}

impl Flavor {
    pub fn name(&self) -> &'static str {
        match self {
            Flavor::Diffusion => "diffusion",
            Flavor::Strong => "strong",
            Flavor::Weak => "weak",
        }
    }
    fn parse(s: &str) -> Option<Flavor> {
        match s {
            "diffusion" => Some(Flavor::Diffusion),
            "strong" => Some(Flavor::Strong),
            "weak" => Some(Flavor::Weak),
            _ => None,
        }
    }
}

/// Local functions of one flavor on one element, as fine nodal vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSet {
    /// Nodal basis (Dirichlet flavors, by local vertex) or face basis (weak flavor, by local face).
    pub basis: Vec<Vec<f64>>,
    pub correctors: Vec<Vec<f64>>,
    pub bubble: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ElementScalars {
    pub measure: f64,
    pub centroid: Point,
    pub diam: f64,
    pub mu_bar: f64,
    pub pe: f64,
    pub tau: f64,
    pub a_bar_p1: Matrix2,
    pub b_bar_p1: Point,
    pub a_bar_msfem_lin: Option<Matrix2>,
    pub b_bar_msfem_lin: Option<Point>,
    pub tau_b: Option<f64>,
    pub int_bubble: Option<f64>,
    pub int_bubble_weak: Option<f64>,
    pub a_bar: Option<Matrix2>,
    pub b_bar: Option<Point>,
    pub r0: Option<f64>,
    pub r: Option<Point>,
    pub r_g: Option<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementBasis {
    pub diffusion: Option<LocalSet>,
    pub strong: Option<LocalSet>,
    pub weak: Option<LocalSet>,
    pub scalars: ElementScalars,
}

impl ElementBasis {
    pub fn set(&self, flavor: Flavor) -> Option<&LocalSet> {
        match flavor {
            Flavor::Diffusion => self.diffusion.as_ref(),
            Flavor::Strong => self.strong.as_ref(),
            Flavor::Weak => self.weak.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineOptions {
    pub form: FormKind,
    pub mu_bar: MuBarRule,
}

impl Default for OfflineOptions {
    fn default() -> Self {
        OfflineOptions { form: FormKind::Standard, mu_bar: MuBarRule::MinMaxMean }
    }
}

/// All offline data for one (operator, mesh, form) triple.
#[derive(Debug, Clone)]
pub struct BasisStore {
    pub key: String,
    pub dim: usize,
    pub options: OfflineOptions,
    pub elements: Vec<ElementBasis>,
    pub offline_seconds: f64,
}

/// Coarse P1 hat of local vertex `i`, at the fine nodes of element `k`.
pub fn local_hats(meshes: &Meshes, k: usize) -> Vec<Vec<f64>> {
    let coarse = &meshes.coarse;
    let g = coarse.hat_gradients(k);
    let p = coarse.cell_points(k);
    let x = local_coordinates(meshes, k);
    let n = meshes.locals[k].num_vertices();
    (0..coarse.nv())
        .map(|i| {
            (0..n)
                .map(|q| {
                    let mut v = 1.0 + g[i][0] * (x[0][q] - p[i][0]);
                    if coarse.dim == 2 {
                        v += g[i][1] * (x[1][q] - p[i][1]);
                    }
                    v
                })
                .collect()
        })
        .collect()
}

/// P1 Crouzeix-Raviart function of local face `i` (opposite vertex `i`): `1 - d lambda_i`.
pub fn local_cr(meshes: &Meshes, k: usize) -> Vec<Vec<f64>> {
    let d = meshes.dim() as f64;
    local_hats(meshes, k).into_iter().map(|h| h.into_iter().map(|l| 1.0 - d * l).collect()).collect()
}

/// Gradient of the P1 Crouzeix-Raviart function of local face `i`.
pub fn cr_gradients(meshes: &Meshes, k: usize) -> [Point; 3] {
    let d = meshes.dim() as f64;
    let g = meshes.coarse.hat_gradients(k);
    let mut out = [[0.0; 2]; 3];
    for i in 0..3 {
        out[i] = [-d * g[i][0], -d * g[i][1]];
    }
    out
}

fn centered_coordinates(meshes: &Meshes, k: usize) -> Vec<Vec<f64>> {
    let c = meshes.coarse.centroid(k);
    local_coordinates(meshes, k)
        .into_iter()
        .enumerate()
        .map(|(a, xs)| xs.into_iter().map(|x| x - c[a]).collect())
        .collect()
}

/// SUPG parameter `diam/(2|b|) (coth Pe - 1/Pe)` with `Pe = |b| diam / (2 mu)`.
pub fn tau_supg(diam: f64, bnorm: f64, mu_bar: f64) -> (f64, f64) {
    if bnorm == 0.0 {
        return (0.0, 0.0);
    }
    let pe = bnorm * diam / (2.0 * mu_bar);
    let xi = if pe < 1e-3 {
        pe / 3.0 - pe.powi(3) / 45.0
    } else {
        1.0 / pe.tanh() - 1.0 / pe
    };
    (diam / (2.0 * bnorm) * xi, pe)
}

/// Element SUPG parameter with `b` at the centroid and `mu_bar` over the fine quadrature points.
pub fn compute_tau_supg(meshes: &Meshes, k: usize, fields: &CoefficientField, sample: &OperatorSample, rule: MuBarRule) -> Result<(f64, f64, f64, f64)> {
    let c = meshes.coarse.centroid(k);
    let b = fields.advection(c);
    let bn = (b[0] * b[0] + b[1] * b[1]).sqrt();
    let mu = rule.apply(meshes.locals[k].global_cells.iter().map(|&t| sample.mu[t]));
    if bn == 0.0 {
        return Ok((0.0, 0.0, mu, 0.0));
    }
    let diam = directional_diameter(&meshes.coarse, k, b)?;
    let (tau, pe) = tau_supg(diam, bn, mu);
    Ok((tau, pe, mu, diam))
}

/// `(1/|K|) int_K B`.
pub fn compute_tau_bubble(meshes: &Meshes, k: usize, bubble: &[f64]) -> f64 {
    dot(&local_unit_load(meshes, k), bubble) / meshes.coarse.measure(k)
}

/// `A_{ba} = a(x^a - x^a_c + chi_a, x^b - x^b_c + [chi_b])/|K|`, `b_a = a(x^a - x^a_c + chi_a, 1)/|K|`.
/// With `test_correctors` the correctors also enter the test slot.
pub fn compute_effective_coefficients(op: &LocalOperator, meshes: &Meshes, k: usize, correctors: Option<&[Vec<f64>]>, test_correctors: bool) -> (Matrix2, Point) {
    let d = meshes.dim();
    let xc = centered_coordinates(meshes, k);
    let area = meshes.coarse.measure(k);
    let trial: Vec<Vec<f64>> = (0..d)
        .map(|a| match correctors {
            Some(ch) => xc[a].iter().zip(&ch[a]).map(|(x, c)| x + c).collect(),
            None => xc[a].clone(),
        })
        .collect();
    let test = if test_correctors { trial.clone() } else { xc.clone() };
    let mut abar = [[0.0; 2]; 2];
    let mut bbar = [0.0; 2];
    for a in 0..d {
        let au = op.apply(&trial[a]);
        for b in 0..d {
            abar[b][a] = dot(&au, &test[b]) / area;
        }
        bbar[a] = au.iter().sum::<f64>() / area;
    }
    (abar, bbar)
}

/// `R0 = a(B,1)/|K|`, `R_a = a(B, x^a - x^a_c)/|K|`, `RG_a = R_a + a(B, chi_a)/|K|`.
pub fn compute_bubble_moments(op: &LocalOperator, meshes: &Meshes, k: usize, bubble: &[f64], correctors: &[Vec<f64>]) -> (f64, Point, Point) {
    let area = meshes.coarse.measure(k);
    let ab = op.apply(bubble);
    let xc = centered_coordinates(meshes, k);
    let r0 = ab.iter().sum::<f64>() / area;
    let mut r = [0.0; 2];
    let mut rg = [0.0; 2];
    for a in 0..meshes.dim() {
        r[a] = dot(&ab, &xc[a]) / area;
        rg[a] = r[a] + dot(&ab, &correctors[a]) / area;
    }
    (r0, r, rg)
}

/// Correctors `chi_a` with `L chi_a = -L x^a`, zero trace (strong) or zero face means (weak).
pub fn compute_correctors(meshes: &Meshes, k: usize, sample: &OperatorSample, form: FormKind, flavor: Flavor) -> Result<Vec<Vec<f64>>> {
    Ok(solve_flavor(meshes, k, sample, form, flavor, false)?.correctors)
}

/// Multiscale basis restricted to element `k`.
pub fn compute_basis(meshes: &Meshes, k: usize, sample: &OperatorSample, form: FormKind, flavor: Flavor) -> Result<Vec<Vec<f64>>> {
    Ok(solve_flavor(meshes, k, sample, form, flavor, false)?.basis)
}

/// Bubble `L B = 1` with zero trace (strong) or zero face means (weak).
pub fn compute_bubble(meshes: &Meshes, k: usize, sample: &OperatorSample, form: FormKind, flavor: Flavor) -> Result<Vec<f64>> {
    if flavor == Flavor::Diffusion {
        return Err(MsfemError::InvalidInput("bubbles use the full operator".into()));
    }
    Ok(solve_flavor(meshes, k, sample, form, flavor, true)?.bubble.unwrap())
}

/// One factorization per element, all right-hand sides of the flavor at once.
fn solve_flavor(meshes: &Meshes, k: usize, sample: &OperatorSample, form: FormKind, flavor: Flavor, with_bubble: bool) -> Result<LocalSet> {
    let op = LocalOperator::new(meshes, k, sample, form, flavor != Flavor::Diffusion);
    let n = op.size();
    let d = meshes.dim();
    let nf = d + 1;
    let x = local_coordinates(meshes, k);
    let zero = vec![0.0; n];
    let mut cases: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    match flavor {
        Flavor::Diffusion | Flavor::Strong => {
            for h in local_hats(meshes, k) {
                cases.push((h, zero.clone()));
            }
            for xa in x.iter() {
                cases.push((zero.clone(), op.apply(xa).into_iter().map(|v| -v).collect()));
            }
            if with_bubble {
                cases.push((zero.clone(), local_unit_load(meshes, k)));
            }
            let sol = DirichletSolver::new(&op)
                .and_then(|s| s.solve(&cases))
                .map_err(|e| tag(e, k, flavor))?;
            Ok(split(sol, nf, d, with_bubble))
        }
        Flavor::Weak => {
            let zm = vec![0.0; nf];
            for i in 0..nf {
                let mut m = zm.clone();
                m[i] = 1.0;
                cases.push((m, zero.clone()));
            }
            for xa in x.iter() {
                cases.push((zm.clone(), op.apply(xa).into_iter().map(|v| -v).collect()));
            }
            if with_bubble {
                cases.push((zm.clone(), local_unit_load(meshes, k)));
            }
            let sol = WeakSolver::new(&op)
                .and_then(|s| s.solve(&cases))
                .map_err(|e| tag(e, k, flavor))?;
            Ok(split(sol, nf, d, with_bubble))
        }
    }
}

fn tag(e: MsfemError, k: usize, flavor: Flavor) -> MsfemError {
    match e {
        MsfemError::SingularSystem(s) => MsfemError::SingularSystem(format!("{} local problem on element {k}: {s}", flavor.name())),
        other => other,
    }
}

fn split(mut sol: Vec<Vec<f64>>, nb: usize, d: usize, with_bubble: bool) -> LocalSet {
    let bubble = if with_bubble { sol.pop() } else { None };
    let correctors = sol.split_off(nb);
    debug_assert_eq!(correctors.len(), d);
    LocalSet { basis: sol, correctors, bubble }
}

/// Cache key: hash of the operator, mesh and offline options. The load is excluded.
pub fn store_key(problem: &Problem, meshes: &Meshes, options: &OfflineOptions) -> String {
    let text = format!(
        "{}|dim={}|n={}|levels={}|form={}|mu={}",
        problem.operator_key,
        meshes.dim(),
        meshes.coarse.n,
        meshes.levels,
        options.form.name(),
        options.mu_bar.name()
    );
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

impl BasisStore {
    /// Element scalars that need no local solves (tau, Peclet, P1 effective coefficients).
    pub fn new(problem: &Problem, meshes: &Meshes, sample: &OperatorSample, options: OfflineOptions) -> Result<BasisStore> {
        let t0 = Instant::now();
        let elements = (0..meshes.coarse.num_elements())
            .into_par_iter()
            .map(|k| {
                let (tau, pe, mu_bar, diam) = compute_tau_supg(meshes, k, &problem.fields, sample, options.mu_bar)?;
                let op = LocalOperator::new(meshes, k, sample, options.form, true);
                let (a_bar_p1, b_bar_p1) = compute_effective_coefficients(&op, meshes, k, None, false);
                Ok(ElementBasis {
                    diffusion: None,
                    strong: None,
                    weak: None,
                    scalars: ElementScalars {
                        measure: meshes.coarse.measure(k),
                        centroid: meshes.coarse.centroid(k),
                        diam,
                        mu_bar,
                        pe,
                        tau,
                        a_bar_p1,
                        b_bar_p1,
                        ..Default::default()
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BasisStore {
            key: store_key(problem, meshes, &options),
            dim: meshes.dim(),
            options,
            elements,
            offline_seconds: t0.elapsed().as_secs_f64(),
        })
    }

    pub fn has(&self, flavor: Flavor) -> bool {
        self.elements.iter().all(|e| e.set(flavor).is_some())
    }

    /// Computes a flavor on every element if absent; returns the seconds spent.
    pub fn ensure(&mut self, flavor: Flavor, meshes: &Meshes, sample: &OperatorSample) -> Result<f64> {
        if self.has(flavor) {
            return Ok(0.0);
        }
        let t0 = Instant::now();
        let form = self.options.form;
        let sets = (0..self.elements.len())
            .into_par_iter()
            .map(|k| {
                let set = solve_flavor(meshes, k, sample, form, flavor, flavor != Flavor::Diffusion)?;
                let op = LocalOperator::new(meshes, k, sample, form, true);
                let mut extra = ElementScalars::default();
                match flavor {
                    Flavor::Diffusion => {
                        let (a, b) = compute_effective_coefficients(&op, meshes, k, Some(&set.correctors), true);
                        extra.a_bar_msfem_lin = Some(a);
                        extra.b_bar_msfem_lin = Some(b);
                    }
                    Flavor::Strong => {
                        let b = set.bubble.as_ref().unwrap();
                        let tb = compute_tau_bubble(meshes, k, b);
                        extra.tau_b = Some(tb);
                        extra.int_bubble = Some(tb * meshes.coarse.measure(k));
                    }
                    Flavor::Weak => {
                        let b = set.bubble.as_ref().unwrap();
                        let (a, bb) = compute_effective_coefficients(&op, meshes, k, Some(&set.correctors), false);
                        let (r0, r, rg) = compute_bubble_moments(&op, meshes, k, b, &set.correctors);
                        extra.int_bubble_weak = Some(compute_tau_bubble(meshes, k, b) * meshes.coarse.measure(k));
                        extra.a_bar = Some(a);
                        extra.b_bar = Some(bb);
                        extra.r0 = Some(r0);
                        extra.r = Some(r);
                        extra.r_g = Some(rg);
                    }
                }
                Ok((set, extra))
            })
            .collect::<Result<Vec<_>>>()?;
        for (e, (set, x)) in self.elements.iter_mut().zip(sets) {
            let s = &mut e.scalars;
            match flavor {
                Flavor::Diffusion => {
                    e.diffusion = Some(set);
                    s.a_bar_msfem_lin = x.a_bar_msfem_lin;
                    s.b_bar_msfem_lin = x.b_bar_msfem_lin;
                }
                Flavor::Strong => {
                    e.strong = Some(set);
                    s.tau_b = x.tau_b;
                    s.int_bubble = x.int_bubble;
                }
                Flavor::Weak => {
                    e.weak = Some(set);
                    s.int_bubble_weak = x.int_bubble_weak;
                    s.a_bar = x.a_bar;
                    s.b_bar = x.b_bar;
                    s.r0 = x.r0;
                    s.r = x.r;
                    s.r_g = x.r_g;
                }
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        self.offline_seconds += dt;
        Ok(dt)
    }

    pub fn flavors(&self) -> Vec<Flavor> {
        [Flavor::Diffusion, Flavor::Strong, Flavor::Weak].into_iter().filter(|f| self.has(*f)).collect()
    }

    pub fn directory(&self, root: &Path) -> PathBuf {
        root.join(&self.key)
    }

    /// Writes `<root>/<key>/manifest.txt` and one little-endian f64 record per element.
    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let dir = self.directory(root);
        std::fs::create_dir_all(&dir)?;
        let mut m = BTreeMap::new();
        m.insert("key".to_string(), self.key.clone());
        m.insert("dim".to_string(), self.dim.to_string());
        m.insert("form".to_string(), self.options.form.name().to_string());
        m.insert("mu_bar".to_string(), self.options.mu_bar.name().to_string());
        m.insert("elements".to_string(), self.elements.len().to_string());
        m.insert("flavors".to_string(), self.flavors().iter().map(|f| f.name()).collect::<Vec<_>>().join(","));
        let flavors = self.flavors();
        for (k, e) in self.elements.iter().enumerate() {
            let mut bytes = Vec::new();
            let mut nodes = 0;
            for f in &flavors {
                let s = e.set(*f).unwrap();
                for v in s.basis.iter().chain(&s.correctors).chain(s.bubble.iter()) {
                    nodes = v.len();
                    for x in v {
                        bytes.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            std::fs::write(dir.join(format!("element_{k}.bin")), bytes)?;
            m.insert(format!("element.{k}.nodes"), nodes.to_string());
            for (name, value) in scalar_entries(&e.scalars) {
                m.insert(format!("element.{k}.{name}"), value);
            }
        }
        let text: String = m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        std::fs::write(dir.join("manifest.txt"), text)?;
        Ok(dir)
    }

    /// Loads a store previously written by [`BasisStore::save`] under `root`.
    pub fn load(root: &Path, key: &str) -> Result<BasisStore> {
        let dir = root.join(key);
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut m = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                m.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| m.get(k).cloned().ok_or_else(|| MsfemError::InvalidInput(format!("manifest misses `{k}`")));
        let dim: usize = parse_num(&get("dim")?)?;
        let ne: usize = parse_num(&get("elements")?)?;
        let form = get("form")?.parse()?;
        let mu_bar = get("mu_bar")?.parse()?;
        let flavors: Vec<Flavor> = get("flavors")?.split(',').filter_map(Flavor::parse).collect();
        let nf = dim + 1;
        let mut elements = Vec::with_capacity(ne);
        for k in 0..ne {
            let nodes: usize = parse_num(&get(&format!("element.{k}.nodes"))?)?;
            let bytes = std::fs::read(dir.join(format!("element_{k}.bin")))?;
            let mut vals = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
            let mut take = || -> Result<Vec<f64>> {
                let v: Vec<f64> = vals.by_ref().take(nodes).collect();
                if v.len() != nodes {
                    return Err(MsfemError::InvalidInput(format!("truncated record for element {k}")));
                }
                Ok(v)
            };
            let mut eb = ElementBasis { diffusion: None, strong: None, weak: None, scalars: ElementScalars::default() };
            for f in &flavors {
                let basis = (0..nf).map(|_| take()).collect::<Result<Vec<_>>>()?;
                let correctors = (0..dim).map(|_| take()).collect::<Result<Vec<_>>>()?;
                let bubble = if *f == Flavor::Diffusion { None } else { Some(take()?) };
                let set = LocalSet { basis, correctors, bubble };
                match f {
                    Flavor::Diffusion => eb.diffusion = Some(set),
                    Flavor::Strong => eb.strong = Some(set),
                    Flavor::Weak => eb.weak = Some(set),
                }
            }
            let prefix = format!("element.{k}.");
            let entries: BTreeMap<String, String> = m
                .iter()
                .filter_map(|(key, v)| key.strip_prefix(&prefix).map(|s| (s.to_string(), v.clone())))
                .collect();
            eb.scalars = scalars_from_entries(&entries)?;
            elements.push(eb);
        }
        Ok(BasisStore { key: key.to_string(), dim, options: OfflineOptions { form, mu_bar }, elements, offline_seconds: 0.0 })
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| MsfemError::InvalidInput(format!("bad number `{s}` in manifest")))
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn scalar_entries(s: &ElementScalars) -> Vec<(String, String)> {
    let mut out = vec![
        ("measure".to_string(), format!("{:?}", s.measure)),
        ("centroid".to_string(), fmt_list(&s.centroid)),
        ("diam".to_string(), format!("{:?}", s.diam)),
        ("mu_bar".to_string(), format!("{:?}", s.mu_bar)),
        ("pe".to_string(), format!("{:?}", s.pe)),
        ("tau".to_string(), format!("{:?}", s.tau)),
        ("a_bar_p1".to_string(), fmt_list(&[s.a_bar_p1[0][0], s.a_bar_p1[0][1], s.a_bar_p1[1][0], s.a_bar_p1[1][1]])),
        ("b_bar_p1".to_string(), fmt_list(&s.b_bar_p1)),
    ];
    let mut opt = |name: &str, v: Option<Vec<f64>>| {
        if let Some(v) = v {
            out.push((name.to_string(), fmt_list(&v)));
        }
    };
    let flat = |a: Matrix2| vec![a[0][0], a[0][1], a[1][0], a[1][1]];
    opt("a_bar_msfem_lin", s.a_bar_msfem_lin.map(flat));
    opt("b_bar_msfem_lin", s.b_bar_msfem_lin.map(|p| p.to_vec()));
    opt("tau_b", s.tau_b.map(|x| vec![x]));
    opt("int_bubble", s.int_bubble.map(|x| vec![x]));
    opt("int_bubble_weak", s.int_bubble_weak.map(|x| vec![x]));
    opt("a_bar", s.a_bar.map(flat));
    opt("b_bar", s.b_bar.map(|p| p.to_vec()));
    opt("r0", s.r0.map(|x| vec![x]));
    opt("r", s.r.map(|p| p.to_vec()));
    opt("r_g", s.r_g.map(|p| p.to_vec()));
    out
}

fn scalars_from_entries(m: &BTreeMap<String, String>) -> Result<ElementScalars> {
    let list = |k: &str| -> Result<Option<Vec<f64>>> {
        match m.get(k) {
            None => Ok(None),
            Some(s) => s.split(',').map(parse_num::<f64>).collect::<Result<Vec<_>>>().map(Some),
        }
    };
    let req = |k: &str| -> Result<Vec<f64>> { list(k)?.ok_or_else(|| MsfemError::InvalidInput(format!("manifest misses `{k}`"))) };
    let mat = |v: Vec<f64>| [[v[0], v[1]], [v[2], v[3]]];
    let pt = |v: Vec<f64>| [v[0], v[1]];
    Ok(ElementScalars {
        measure: req("measure")?[0],
        centroid: pt(req("centroid")?),
        diam: req("diam")?[0],
        mu_bar: req("mu_bar")?[0],
        pe: req("pe")?[0],
        tau: req("tau")?[0],
        a_bar_p1: mat(req("a_bar_p1")?),
        b_bar_p1: pt(req("b_bar_p1")?),
        a_bar_msfem_lin: list("a_bar_msfem_lin")?.map(mat),
        b_bar_msfem_lin: list("b_bar_msfem_lin")?.map(pt),
        tau_b: list("tau_b")?.map(|v| v[0]),
        int_bubble: list("int_bubble")?.map(|v| v[0]),
        int_bubble_weak: list("int_bubble_weak")?.map(|v| v[0]),
        a_bar: list("a_bar")?.map(mat),
        b_bar: list("b_bar")?.map(pt),
        r0: list("r0")?.map(|v| v[0]),
        r: list("r")?.map(pt),
        r_g: list("r_g")?.map(pt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::sample_operator;
    use crate::mesh::{build_coarse, refine_nested};

    #[test]
    fn tau_one_dimensional_value() {
        // H = 2^-6, |b| = 1, mu = 2^-9: Pe = 4, tau = 2^-7 (coth 4 - 1/4)
        let (tau, pe) = tau_supg(2f64.powi(-6), 1.0, 2f64.powi(-9));
        assert_eq!(pe, 4.0);
        let coth4 = (8f64.exp() + 1.0) / (8f64.exp() - 1.0);
        assert!((tau - 2f64.powi(-7) * (coth4 - 0.25)).abs() < 1e-17);
        assert!((tau - 0.005_864_6).abs() < 1e-7);
    }

    #[test]
    fn tau_limits() {
        let (tau, _) = tau_supg(0.1, 2.0, 1e-12);
        assert!((tau - 0.1 / 4.0).abs() < 1e-12);
        let (tau, pe) = tau_supg(0.1, 2.0, 1e6);
        assert!(tau < 1e-9 && pe < 1e-6);
        assert!((tau - 0.1 / 4.0 * pe / 3.0).abs() < 1e-20);
        assert_eq!(tau_supg(0.1, 0.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn mu_bar_rules() {
        let v = [1.0, 2.0, 4.0];
        assert_eq!(MuBarRule::MinMaxMean.apply(v.iter().copied()), 2.5);
        assert_eq!(MuBarRule::ArithmeticMean.apply(v.iter().copied()), 7.0 / 3.0);
        assert!((MuBarRule::HarmonicMean.apply(v.iter().copied()) - 3.0 / 1.75).abs() < 1e-15);
    }

    #[test]
    fn poisson_bubble_mean() {
        // -m B'' = 1, B(0) = B(H) = 0: mean of x(H-x)/(2m) is H^2/(12m)
        let m = 0.3;
        let p = Problem::constant(1, m, [0.0, 0.0], 1.0).unwrap();
        let meshes = refine_nested(&build_coarse(1, 8).unwrap(), 6).unwrap();
        let s = sample_operator(&meshes, &p.fields);
        let b = compute_bubble(&meshes, 2, &s, FormKind::Standard, Flavor::Strong).unwrap();
        let h = 0.125;
        let tb = compute_tau_bubble(&meshes, 2, &b);
        // P1 is nodally exact here; trapezoid mean of the parabola carries an h^2 error
        let hf: f64 = h / 64.0;
        let exact = h * h / (12.0 * m) - hf * hf / (12.0 * m);
        assert!((tb - exact).abs() < 1e-14, "{tb} vs {exact}");
    }

    #[test]
    fn correctors_vanish_for_constant_diffusion() {
        let p = Problem::constant(2, 0.4, [0.0, 0.0], 1.0).unwrap();
        let meshes = refine_nested(&build_coarse(2, 2).unwrap(), 3).unwrap();
        let s = sample_operator(&meshes, &p.fields);
        for f in [Flavor::Diffusion, Flavor::Strong, Flavor::Weak] {
            for c in compute_correctors(&meshes, 5, &s, FormKind::Standard, f).unwrap() {
                assert!(c.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn constant_diffusion_basis_is_p1() {
        let p = Problem::constant(2, 0.4, [0.0, 0.0], 1.0).unwrap();
        let meshes = refine_nested(&build_coarse(2, 2).unwrap(), 3).unwrap();
        let s = sample_operator(&meshes, &p.fields);
        let hats = local_hats(&meshes, 1);
        let cr = local_cr(&meshes, 1);
        let lin = compute_basis(&meshes, 1, &s, FormKind::Standard, Flavor::Diffusion).unwrap();
        let w = compute_basis(&meshes, 1, &s, FormKind::Standard, Flavor::Weak).unwrap();
        for i in 0..3 {
            for q in 0..hats[i].len() {
                assert!((lin[i][q] - hats[i][q]).abs() < 1e-12);
                assert!((w[i][q] - cr[i][q]).abs() < 1e-11);
            }
            for f in 0..3 {
                let mean = meshes.locals[1].face_mean(f, &w[i]);
                assert!((mean - if f == i { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weak_bubble_face_means_vanish() {
        let p = Problem::testcase_2d_moderate(0.05, 0.125).unwrap();
        let meshes = refine_nested(&build_coarse(2, 2).unwrap(), 4).unwrap();
        let s = sample_operator(&meshes, &p.fields);
        let b = compute_bubble(&meshes, 0, &s, FormKind::Standard, Flavor::Weak).unwrap();
        for f in 0..3 {
            assert!(meshes.locals[0].face_mean(f, &b).abs() < 1e-12);
        }
    }

    #[test]
    fn weak_and_strong_bubbles_coincide_in_1d() {
        let p = Problem::testcase_1d(0.01, 0.03).unwrap();
        let meshes = refine_nested(&build_coarse(1, 4).unwrap(), 7).unwrap();
        let s = sample_operator(&meshes, &p.fields);
        let a = compute_bubble(&meshes, 1, &s, FormKind::Standard, Flavor::Strong).unwrap();
        let b = compute_bubble(&meshes, 1, &s, FormKind::Standard, Flavor::Weak).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn store_roundtrip_is_bitwise() {
        let p = Problem::testcase_2d_moderate(0.1, 0.125).unwrap();
        let meshes = refine_nested(&build_coarse(2, 2).unwrap(), 3).unwrap();
        let s = sample_operator(&meshes, &p.fields);
        let mut st = BasisStore::new(&p, &meshes, &s, OfflineOptions::default()).unwrap();
        st.ensure(Flavor::Weak, &meshes, &s).unwrap();
        st.ensure(Flavor::Diffusion, &meshes, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        st.save(dir.path()).unwrap();
        let back = BasisStore::load(dir.path(), &st.key).unwrap();
        assert_eq!(back.elements, st.elements);
        assert_eq!(back.options, st.options);
    }

    #[test]
    fn key_ignores_load() {
        let p = Problem::testcase_2d_moderate(0.1, 0.125).unwrap();
        let q = p.clone().with_constant_load(2.0);
        let meshes = refine_nested(&build_coarse(2, 2).unwrap(), 1).unwrap();
        let o = OfflineOptions::default();
        assert_eq!(store_key(&p, &meshes, &o), store_key(&q, &meshes, &o));
        let skew = OfflineOptions { form: FormKind::SkewSymmetric, ..o };
        assert_ne!(store_key(&p, &meshes, &o), store_key(&p, &meshes, &skew));
    }
}
