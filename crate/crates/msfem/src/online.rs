//! Online stage: coarse assembly, bubble condensation, coarse solve and fine reconstruction.

use crate::error::{MsfemError, Result};
use crate::fem::{dot, local_load, FormKind, LoadSample, LocalOperator, OperatorSample, SparseLu};
use crate::mesh::Meshes;
use crate::offline::{cr_gradients, local_cr, local_hats, BasisStore, Flavor};
use crate::problem::{Boundary, Problem};
use rayon::prelude::*;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    P1,
    P1Supg,
    MsfemLin,
    MsfemLinSupg,
    AdvMsfemLin,
    AdvMsfemLinB,
    AdvMsfemCr,
    AdvMsfemCrB,
    AdvMsfemCrBeta,
    PgAdvMsfemCr,
    PgAdvMsfemCrBeta,
}

/// How the bubble coefficient of an element is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaRule {
    /// `int f B / int B`
    Exact,
    /// `(1/|K|) int f`
    Average,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::P1,
        Method::P1Supg,
        Method::MsfemLin,
        Method::MsfemLinSupg,
        Method::AdvMsfemLin,
        Method::AdvMsfemLinB,
        Method::AdvMsfemCr,
        Method::AdvMsfemCrB,
        Method::AdvMsfemCrBeta,
        Method::PgAdvMsfemCr,
        Method::PgAdvMsfemCrBeta,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::P1 => "P1",
            Method::P1Supg => "P1_SUPG",
            Method::MsfemLin => "MsFEM_lin",
            Method::MsfemLinSupg => "MsFEM_lin_SUPG",
            Method::AdvMsfemLin => "Adv_MsFEM_lin",
            Method::AdvMsfemLinB => "Adv_MsFEM_lin_B",
            Method::AdvMsfemCr => "Adv_MsFEM_CR",
            Method::AdvMsfemCrB => "Adv_MsFEM_CR_B",
            Method::AdvMsfemCrBeta => "Adv_MsFEM_CR_beta",
            Method::PgAdvMsfemCr => "PG_Adv_MsFEM_CR",
            Method::PgAdvMsfemCrBeta => "PG_Adv_MsFEM_CR_beta",
        }
    }

    /// Face (Crouzeix-Raviart) degrees of freedom rather than vertex ones.
    pub fn is_cr(&self) -> bool {
        matches!(
            self,
            Method::AdvMsfemCr | Method::AdvMsfemCrB | Method::AdvMsfemCrBeta | Method::PgAdvMsfemCr | Method::PgAdvMsfemCrBeta
        )
    }

    pub fn is_petrov_galerkin(&self) -> bool {
        matches!(self, Method::PgAdvMsfemCr | Method::PgAdvMsfemCrBeta)
    }

    pub fn is_supg(&self) -> bool {
        matches!(self, Method::P1Supg | Method::MsfemLinSupg)
    }

    /// Offline flavor of the trial space, `None` for plain P1.
    pub fn flavor(&self) -> Option<Flavor> {
        match self {
            Method::P1 | Method::P1Supg => None,
            Method::MsfemLin | Method::MsfemLinSupg => Some(Flavor::Diffusion),
            Method::AdvMsfemLin | Method::AdvMsfemLinB => Some(Flavor::Strong),
            _ => Some(Flavor::Weak),
        }
    }

    pub fn bubble(&self) -> Option<BetaRule> {
        match self {
            Method::AdvMsfemLinB | Method::AdvMsfemCrB => Some(BetaRule::Exact),
            Method::AdvMsfemCrBeta | Method::PgAdvMsfemCrBeta => Some(BetaRule::Average),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = MsfemError;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .copied()
            .ok_or_else(|| MsfemError::InvalidInput(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Pathway {
    #[default]
    Intrusive,
    NonIntrusive,
}

impl Pathway {
    pub fn name(&self) -> &'static str {
        match self {
            Pathway::Intrusive => "intrusive",
            Pathway::NonIntrusive => "nonintrusive",
        }
    }
}

impl std::str::FromStr for Pathway {
    type Err = MsfemError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "intrusive" => Ok(Pathway::Intrusive),
            "nonintrusive" | "non-intrusive" | "non_intrusive" => Ok(Pathway::NonIntrusive),
            _ => Err(MsfemError::InvalidInput(format!("unknown pathway `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MethodSpec {
    pub method: Method,
    pub form: FormKind,
    pub pathway: Pathway,
}

impl MethodSpec {
    pub fn new(method: Method) -> MethodSpec {
        MethodSpec { method, form: FormKind::Standard, pathway: Pathway::Intrusive }
    }

    pub fn nonintrusive(method: Method) -> Result<MethodSpec> {
        MethodSpec { method, form: FormKind::Standard, pathway: Pathway::NonIntrusive }.validated()
    }

    pub fn with_form(mut self, form: FormKind) -> MethodSpec {
        self.form = form;
        self
    }

    pub fn validated(self) -> Result<MethodSpec> {
        if self.pathway == Pathway::NonIntrusive {
            if !self.method.is_petrov_galerkin() {
                return Err(MsfemError::InvalidInput(format!(
                    "the non-intrusive pathway exists only for PG_Adv_MsFEM_CR and PG_Adv_MsFEM_CR_beta, not {}",
                    self.method
                )));
            }
            if self.form != FormKind::Standard {
                return Err(MsfemError::InvalidInput(
                    "the non-intrusive pathway needs the standard form (constants are not in its kernel otherwise)".into(),
                ));
            }
        }
        Ok(self)
    }
}

/// Borrowed data shared by all online solves of one problem.
#[derive(Clone, Copy)]
pub struct OnlineInputs<'a> {
    pub problem: &'a Problem,
    pub meshes: &'a Meshes,
    pub sample: &'a OperatorSample,
    pub load: &'a LoadSample,
}

/// Bubble row and column of one element in the bordered system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BubbleBlock {
    /// `a(B, v_i)`: bubble trial, coarse test.
    pub wb: [f64; 3],
    /// `a(phi_j, B)`: coarse trial, bubble test.
    pub bw: [f64; 3],
    /// `a(B, B)`.
    pub bb: f64,
    /// `F(B)`.
    pub fb: f64,
    /// `int_K B` from the offline stage.
    pub integral: f64,
    /// `(1/|K|) int_K f`.
    pub mean_load: f64,
}

/// Local contributions of one coarse element, rows indexed by the test function.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElementBlock {
    pub ke: [[f64; 3]; 3],
    pub fe: [f64; 3],
    pub bubble: Option<BubbleBlock>,
}

/// Coarse system in element-block form plus the dof numbering.
#[derive(Debug, Clone)]
pub struct CoarseSystem {
    pub spec: MethodSpec,
    pub n_dofs: usize,
    /// Coarse vertex (lin family) or face (CR family) of each dof.
    pub dof_entity: Vec<usize>,
    pub entity_dof: Vec<Option<usize>>,
    /// Prescribed values of entities without a dof.
    pub entity_value: Vec<f64>,
    /// Entity of each local function, per element.
    pub local_entities: Vec<[usize; 3]>,
    pub blocks: Vec<ElementBlock>,
    nv: usize,
}

impl CoarseSystem {
    fn local(&self, k: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.local_entities[k][..self.nv].iter().copied().enumerate()
    }

    /// `A^{W,W}` restricted to free dofs.
    pub fn matrix_ww(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            for (i, ei) in self.local(k) {
                let Some(p) = self.entity_dof[ei] else { continue };
                for (j, ej) in self.local(k) {
                    if let Some(q) = self.entity_dof[ej] {
                        out.push((p, q, b.ke[i][j]));
                    }
                }
            }
        }
        out
    }

    /// Coarse right-hand side with the prescribed values lifted out.
    pub fn rhs_w(&self) -> Vec<f64> {
        let mut rhs = vec![0.0; self.n_dofs];
        for (k, b) in self.blocks.iter().enumerate() {
            for (i, ei) in self.local(k) {
                let Some(p) = self.entity_dof[ei] else { continue };
                rhs[p] += b.fe[i];
                for (j, ej) in self.local(k) {
                    if self.entity_dof[ej].is_none() {
                        rhs[p] -= b.ke[i][j] * self.entity_value[ej];
                    }
                }
            }
        }
        rhs
    }

    /// Dense copy of `A^{W,W}` for small systems and comparisons.
    pub fn dense_ww(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_dofs]; self.n_dofs];
        for (i, j, v) in self.matrix_ww() {
            m[i][j] += v;
        }
        m
    }

    pub fn has_bubbles(&self) -> bool {
        self.blocks.iter().all(|b| b.bubble.is_some()) && !self.blocks.is_empty()
    }

    /// `max |A^{B,W}|` over free dofs.
    pub fn max_abs_bw(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (k, b) in self.blocks.iter().enumerate() {
            if let Some(bb) = &b.bubble {
                for (j, ej) in self.local(k) {
                    if self.entity_dof[ej].is_some() {
                        m = m.max(bb.bw[j].abs());
                    }
                }
            }
        }
        m
    }

    /// Diagonal of `A^{B,B}`; one bubble per element so the block has no off-diagonal entries.
    pub fn bubble_diagonal(&self) -> Vec<f64> {
        self.blocks.iter().filter_map(|b| b.bubble.map(|x| x.bb)).collect()
    }

    fn values_from_dofs(&self, x: &[f64]) -> Vec<f64> {
        self.entity_dof
            .iter()
            .enumerate()
            .map(|(e, d)| d.map_or(self.entity_value[e], |p| x[p]))
            .collect()
    }
}

/// Coarse system after bubble elimination.
#[derive(Debug, Clone)]
pub struct CondensedSystem {
    pub matrix: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Eliminates the bubbles with `beta_K` fixed by `rule`; the size stays the number of coarse dofs.
pub fn condense_bubbles(system: &CoarseSystem, rule: BetaRule) -> Result<CondensedSystem> {
    let mut rhs = system.rhs_w();
    let mut beta = vec![0.0; system.blocks.len()];
    for (k, b) in system.blocks.iter().enumerate() {
        let Some(bb) = &b.bubble else {
            return Err(MsfemError::InvalidInput(format!("{} has no bubbles to condense", system.spec.method)));
        };
        beta[k] = match rule {
            BetaRule::Exact => {
                if bb.integral == 0.0 || !bb.integral.is_finite() {
                    return Err(MsfemError::ZeroBubbleIntegral(k));
                }
                bb.fb / bb.integral
            }
            BetaRule::Average => bb.mean_load,
        };
        for (i, ei) in system.local(k) {
            if let Some(p) = system.entity_dof[ei] {
                rhs[p] -= beta[k] * bb.wb[i];
            }
        }
    }
    Ok(CondensedSystem { matrix: system.matrix_ww(), rhs, beta })
}

/// Solves the full bordered system; returns the coarse dofs and the bubble coefficients.
pub fn solve_bordered(system: &CoarseSystem) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = system.n_dofs;
    let ne = system.blocks.len();
    let mut entries = system.matrix_ww();
    let mut rhs = system.rhs_w();
    rhs.resize(n + ne, 0.0);
    for (k, b) in system.blocks.iter().enumerate() {
        let bb = b
            .bubble
            .as_ref()
            .ok_or_else(|| MsfemError::InvalidInput(format!("{} has no bubbles", system.spec.method)))?;
        let row = n + k;
        entries.push((row, row, bb.bb));
        rhs[row] += bb.fb;
        for (i, ei) in system.local(k) {
            match system.entity_dof[ei] {
                Some(p) => {
                    entries.push((p, row, bb.wb[i]));
                    entries.push((row, p, bb.bw[i]));
                }
                None => rhs[row] -= bb.bw[i] * system.entity_value[ei],
            }
        }
    }
    let mut x = SparseLu::new(n + ne, &entries)?.solve(&rhs)?;
    let beta = x.split_off(n);
    Ok((x, beta))
}

/// Local function family used as trial or test space.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Space {
    Hats,
    CrP1,
    Multiscale(Flavor),
}

#[derive(Debug, Clone)]
struct Recipe<'t> {
    trial: Space,
    test: Space,
    cr: bool,
    /// Per-element `tau` and the sign of the load stabilization.
    supg: Option<(&'t [f64], f64)>,
    bubble: Option<Flavor>,
}

fn recipe(method: Method, store: &BasisStore) -> Result<(Recipe<'_>, Vec<f64>)> {
    let flavor = method.flavor();
    if let Some(f) = flavor {
        if !store.has(f) {
            return Err(MsfemError::MissingFlavor(f.name()));
        }
    }
    let trial = flavor.map_or(Space::Hats, Space::Multiscale);
    let test = if method.is_petrov_galerkin() { Space::CrP1 } else { trial };
    let taus: Vec<f64> = store.elements.iter().map(|e| e.scalars.tau).collect();
    let bubble = method.bubble().map(|_| flavor.unwrap());
    Ok((Recipe { trial, test, cr: method.is_cr(), supg: None, bubble }, taus))
}

fn local_space<'s>(inp: &OnlineInputs, store: Option<&'s BasisStore>, k: usize, space: Space) -> std::borrow::Cow<'s, [Vec<f64>]> {
    match space {
        Space::Hats => std::borrow::Cow::Owned(local_hats(inp.meshes, k)),
        Space::CrP1 => std::borrow::Cow::Owned(local_cr(inp.meshes, k)),
        Space::Multiscale(f) => std::borrow::Cow::Borrowed(&store.unwrap().elements[k].set(f).unwrap().basis),
    }
}

fn dof_layout(inp: &OnlineInputs, cr: bool) -> (Vec<usize>, Vec<Option<usize>>, Vec<f64>, Vec<[usize; 3]>) {
    let coarse = &inp.meshes.coarse;
    let nv = coarse.nv();
    let (n_entities, fixed): (usize, Vec<bool>) = if cr {
        (coarse.faces.len(), coarse.faces.iter().map(|f| f.boundary).collect())
    } else {
        (coarse.vertices.len(), (0..coarse.vertices.len()).map(|v| coarse.is_boundary_vertex(v)).collect())
    };
    let mut value = vec![0.0; n_entities];
    if let Boundary::TwoPoint(u0, u1) = inp.problem.boundary {
        for (e, val) in value.iter_mut().enumerate() {
            if !fixed[e] {
                continue;
            }
            let v = if cr { coarse.faces[e].vertices[0] } else { e };
            *val = if coarse.lattice[v][0] == 0 { u0 } else { u1 };
        }
    }
    let mut entity_dof = vec![None; n_entities];
    let mut dof_entity = Vec::new();
    for e in 0..n_entities {
        if !fixed[e] {
            entity_dof[e] = Some(dof_entity.len());
            dof_entity.push(e);
        }
    }
    let local_entities = (0..coarse.num_elements())
        .map(|k| {
            let src = if cr { coarse.faces_of(k) } else { coarse.cell(k) };
            let mut out = [0usize; 3];
            out[..nv].copy_from_slice(src);
            out
        })
        .collect();
    (dof_entity, entity_dof, value, local_entities)
}

fn assemble_recipe(inp: &OnlineInputs, store: Option<&BasisStore>, spec: MethodSpec, r: &Recipe) -> Result<CoarseSystem> {
    let meshes = inp.meshes;
    let nv = meshes.coarse.nv();
    let (dof_entity, entity_dof, entity_value, local_entities) = dof_layout(inp, r.cr);
    let blocks = (0..meshes.coarse.num_elements())
        .into_par_iter()
        .map(|k| {
            let op = LocalOperator::new(meshes, k, inp.sample, spec.form, true);
            let trial = local_space(inp, store, k, r.trial);
            let test = local_space(inp, store, k, r.test);
            let fl = local_load(meshes, k, inp.load);
            let at: Vec<Vec<f64>> = trial.iter().map(|t| op.apply(t)).collect();
            let mut b = ElementBlock::default();
            for i in 0..nv {
                for j in 0..nv {
                    b.ke[i][j] = dot(&at[j], &test[i]);
                }
                b.fe[i] = dot(&fl, &test[i]);
            }
            if let Some((tau, sign)) = r.supg {
                add_supg(inp, k, tau[k], sign, &mut b);
            }
            if let Some(f) = r.bubble {
                let st = store.unwrap();
                let bub = st.elements[k].set(f).unwrap().bubble.as_ref().unwrap();
                let ab = op.apply(bub);
                let s = &st.elements[k].scalars;
                let integral = match f {
                    Flavor::Weak => s.int_bubble_weak,
                    _ => s.int_bubble,
                }
                .unwrap();
                let mut bb = BubbleBlock {
                    bb: dot(&ab, bub),
                    fb: dot(&fl, bub),
                    integral,
                    mean_load: fl.iter().sum::<f64>() / meshes.coarse.measure(k),
                    ..Default::default()
                };
                for i in 0..nv {
                    bb.wb[i] = dot(&ab, &test[i]);
                    bb.bw[i] = dot(&at[i], bub);
                }
                b.bubble = Some(bb);
            }
            b
        })
        .collect();
    Ok(CoarseSystem {
        spec,
        n_dofs: dof_entity.len(),
        dof_entity,
        entity_dof,
        entity_value,
        local_entities,
        blocks,
        nv,
    })
}

/// SUPG terms on the coarse P1 gradients, with `b` and `f` at fine quadrature.
fn add_supg(inp: &OnlineInputs, k: usize, tau: f64, sign: f64, b: &mut ElementBlock) {
    if tau == 0.0 {
        return;
    }
    let meshes = inp.meshes;
    let nv = meshes.coarse.nv();
    let g = meshes.coarse.hat_gradients(k);
    for &t in &meshes.locals[k].global_cells {
        let bt = inp.sample.b[t];
        let w = meshes.geom[t].measure;
        let bg: Vec<f64> = (0..nv).map(|i| bt[0] * g[i][0] + bt[1] * g[i][1]).collect();
        for i in 0..nv {
            for j in 0..nv {
                b.ke[i][j] += tau * w * bg[j] * bg[i];
            }
            b.fe[i] += sign * tau * inp.load.cell_integral[t] * bg[i];
        }
    }
}

/// Coarse system of `spec`, with fine quadrature of the bilinear form over the stored basis.
pub fn assemble_method(inp: &OnlineInputs, store: &BasisStore, spec: MethodSpec) -> Result<CoarseSystem> {
    let spec = spec.validated()?;
    check_form(store, spec)?;
    let (mut r, taus) = recipe(spec.method, store)?;
    if spec.method.is_supg() {
        r.supg = Some((&taus, 1.0));
    }
    assemble_recipe(inp, Some(store), spec, &r)
}

fn check_form(store: &BasisStore, spec: MethodSpec) -> Result<()> {
    if spec.method.flavor().is_some() && store.options.form != spec.form {
        return Err(MsfemError::InvalidInput(format!(
            "basis store built with the {} form, method asks for {}",
            store.options.form.name(),
            spec.form.name()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub spec: MethodSpec,
    /// Values of the free coarse dofs.
    pub coarse_coeffs: Vec<f64>,
    /// Values of all coarse vertices (lin family) or faces (CR family), prescribed ones included.
    pub entity_values: Vec<f64>,
    /// Bubble coefficient per element (zero without bubbles).
    pub beta: Vec<f64>,
    /// Coefficients of the local P1 functions (hats or CR), per element.
    pub p1_coeffs: Vec<[f64; 3]>,
    /// Piecewise affine part at the local fine nodes of each element.
    pub p1_part: Vec<Vec<f64>>,
    /// Fine reconstruction at the local fine nodes of each element.
    pub fine_field: Vec<Vec<f64>>,
    pub online_seconds: f64,
}

impl SolveResult {
    /// The piecewise affine part, continuous for the lin family and a sawtooth for the CR family.
    pub fn p1_part(&self) -> &[Vec<f64>] {
        &self.p1_part
    }
}

/// Solves `spec` and reconstructs the fine field on every element.
pub fn solve_method(inp: &OnlineInputs, store: &BasisStore, spec: MethodSpec) -> Result<SolveResult> {
    if spec.pathway == Pathway::NonIntrusive {
        return solve_nonintrusive(inp, store, spec);
    }
    let t0 = Instant::now();
    let system = assemble_method(inp, store, spec)?;
    let (x, beta) = match spec.method.bubble() {
        Some(rule) => {
            let c = condense_bubbles(&system, rule)?;
            (SparseLu::new(system.n_dofs, &c.matrix)?.solve(&c.rhs)?, c.beta)
        }
        None => (
            SparseLu::new(system.n_dofs, &system.matrix_ww())?.solve(&system.rhs_w())?,
            vec![0.0; system.blocks.len()],
        ),
    };
    let values = system.values_from_dofs(&x);
    let (trial, _) = recipe(spec.method, store)?;
    let recon = |k: usize, coef: &[f64; 3]| -> Vec<f64> {
        let basis = local_space(inp, Some(store), k, trial.trial);
        let mut u = combine(&basis, coef);
        if let Some(f) = trial.bubble {
            let b = store.elements[k].set(f).unwrap().bubble.as_ref().unwrap();
            axpy(beta[k], b, &mut u);
        }
        u
    };
    finish(inp, spec, &system, x, values, beta.clone(), recon, t0)
}

fn combine(basis: &[Vec<f64>], coef: &[f64]) -> Vec<f64> {
    let mut u = vec![0.0; basis[0].len()];
    for (b, &c) in basis.iter().zip(coef) {
        axpy(c, b, &mut u);
    }
    u
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[allow(clippy::too_many_arguments)]
fn finish<F>(inp: &OnlineInputs, spec: MethodSpec, system: &CoarseSystem, x: Vec<f64>, values: Vec<f64>, beta: Vec<f64>, recon: F, t0: Instant) -> Result<SolveResult>
where
    F: Fn(usize, &[f64; 3]) -> Vec<f64> + Sync,
{
    let nv = system.nv;
    let ne = system.blocks.len();
    let p1_coeffs: Vec<[f64; 3]> = (0..ne)
        .map(|k| {
            let mut c = [0.0; 3];
            for (l, e) in system.local(k) {
                c[l] = values[e];
            }
            c
        })
        .collect();
    let fields: Vec<(Vec<f64>, Vec<f64>)> = (0..ne)
        .into_par_iter()
        .map(|k| {
            let p1 = if spec.method.is_cr() { local_cr(inp.meshes, k) } else { local_hats(inp.meshes, k) };
            (combine(&p1, &p1_coeffs[k][..nv]), recon(k, &p1_coeffs[k]))
        })
        .collect();
    let (p1_part, fine_field) = fields.into_iter().unzip();
    Ok(SolveResult {
        spec,
        coarse_coeffs: x,
        entity_values: values,
        beta,
        p1_coeffs,
        p1_part,
        fine_field,
        online_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Crouzeix-Raviart system with the piecewise constant effective coefficients.
pub fn assemble_nonintrusive(inp: &OnlineInputs, store: &BasisStore, spec: MethodSpec) -> Result<(CoarseSystem, Vec<f64>)> {
    let spec = spec.validated()?;
    if spec.pathway != Pathway::NonIntrusive || store.options.form != FormKind::Standard {
        return Err(MsfemError::InvalidInput("non-intrusive assembly needs a non-intrusive spec and a standard-form store".into()));
    }
    if !store.has(Flavor::Weak) {
        return Err(MsfemError::MissingFlavor(Flavor::Weak.name()));
    }
    let meshes = inp.meshes;
    let d = meshes.dim();
    let nv = d + 1;
    let with_beta = spec.method.bubble().is_some();
    let (dof_entity, entity_dof, entity_value, local_entities) = dof_layout(inp, true);
    let out: Vec<(ElementBlock, f64)> = (0..meshes.coarse.num_elements())
        .into_par_iter()
        .map(|k| {
            let s = &store.elements[k].scalars;
            let (abar, bbar) = (s.a_bar.unwrap(), s.b_bar.unwrap());
            let area = s.measure;
            let g = cr_gradients(meshes, k);
            let psi_c = 1.0 / nv as f64;
            let fl = local_load(meshes, k, inp.load);
            let cr = local_cr(meshes, k);
            let beta = if with_beta { fl.iter().sum::<f64>() / area } else { 0.0 };
            let mut b = ElementBlock::default();
            for i in 0..nv {
                for j in 0..nv {
                    let mut diff = 0.0;
                    for be in 0..d {
                        for al in 0..d {
                            diff += g[i][be] * abar[be][al] * g[j][al];
                        }
                    }
                    let adv: f64 = (0..d).map(|al| bbar[al] * g[j][al]).sum();
                    b.ke[i][j] = area * (diff + psi_c * adv);
                }
                b.fe[i] = dot(&fl, &cr[i]);
                if with_beta {
                    let (r0, r) = (s.r0.unwrap(), s.r.unwrap());
                    let rg: f64 = (0..d).map(|al| r[al] * g[i][al]).sum();
                    b.fe[i] -= beta * area * (r0 * psi_c + rg);
                }
            }
            (b, beta)
        })
        .collect();
    let (blocks, beta) = out.into_iter().unzip();
    Ok((
        CoarseSystem { spec, n_dofs: dof_entity.len(), dof_entity, entity_dof, entity_value, local_entities, blocks, nv },
        beta,
    ))
}

/// Solves a PG Crouzeix-Raviart method through effective coefficients and rebuilds
/// the fine field as `w + sum_a d_a w chi_a + beta B`.
pub fn solve_nonintrusive(inp: &OnlineInputs, store: &BasisStore, spec: MethodSpec) -> Result<SolveResult> {
    let t0 = Instant::now();
    let (system, beta) = assemble_nonintrusive(inp, store, spec)?;
    let x = SparseLu::new(system.n_dofs, &system.matrix_ww())?.solve(&system.rhs_w())?;
    let values = system.values_from_dofs(&x);
    let d = inp.meshes.dim();
    let with_beta = spec.method.bubble().is_some();
    let recon = |k: usize, coef: &[f64; 3]| -> Vec<f64> {
        let set = store.elements[k].weak.as_ref().unwrap();
        let mut u = combine(&local_cr(inp.meshes, k), &coef[..d + 1]);
        let g = cr_gradients(inp.meshes, k);
        for a in 0..d {
            let da: f64 = (0..=d).map(|l| coef[l] * g[l][a]).sum();
            axpy(da, &set.correctors[a], &mut u);
        }
        if with_beta {
            axpy(beta[k], set.bubble.as_ref().unwrap(), &mut u);
        }
        u
    };
    finish(inp, spec, &system, x, values, beta.clone(), recon, t0)
}

/// P1 SUPG with a prescribed per-element `tau`; `rhs_sign = -1` flips the load stabilization.
/// Returns the values at all coarse vertices.
pub fn solve_p1_supg_with_tau(inp: &OnlineInputs, form: FormKind, tau: &[f64], rhs_sign: f64) -> Result<Vec<f64>> {
    let r = Recipe { trial: Space::Hats, test: Space::Hats, cr: false, supg: Some((tau, rhs_sign)), bubble: None };
    let sys = assemble_recipe(inp, None, MethodSpec::new(Method::P1Supg).with_form(form), &r)?;
    let x = SparseLu::new(sys.n_dofs, &sys.matrix_ww())?.solve(&sys.rhs_w())?;
    Ok(sys.values_from_dofs(&x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    /// P1 part of Adv_MsFEM_lin_B against P1 SUPG with `tau = tau^B`.
    pub bubble_vs_supg: f64,
    /// P1 part of Adv_MsFEM_lin against the scheme with the load stabilization sign flipped.
    pub plain_vs_flipped_supg: f64,
}

/// Constant-coefficient check of the SUPG reading of the lin-family methods.
pub fn effective_equivalence_check(inp: &OnlineInputs, store: &BasisStore) -> Result<EquivalenceReport> {
    if !store.has(Flavor::Strong) {
        return Err(MsfemError::MissingFlavor(Flavor::Strong.name()));
    }
    let form = store.options.form;
    let tau_b: Vec<f64> = store.elements.iter().map(|e| e.scalars.tau_b.unwrap()).collect();
    let with_b = solve_method(inp, store, MethodSpec::new(Method::AdvMsfemLinB).with_form(form))?;
    let plain = solve_method(inp, store, MethodSpec::new(Method::AdvMsfemLin).with_form(form))?;
    let supg = solve_p1_supg_with_tau(inp, form, &tau_b, 1.0)?;
    let flipped = solve_p1_supg_with_tau(inp, form, &tau_b, -1.0)?;
    let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        bubble_vs_supg: dev(&with_b.entity_values, &supg),
        plain_vs_flipped_supg: dev(&plain.entity_values, &flipped),
    })
}
