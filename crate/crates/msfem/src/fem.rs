//! Fine-scale P1 machinery: coefficient sampling, element matrices, sparse solves,
//! local Dirichlet / weak (face-mean) problems and the global fine reference solvers.

use crate::error::{MsfemError, Result};
use crate::mesh::{CellGeom, LocalMesh, Meshes, Point};
use crate::problem::{Boundary, CoefficientField, Matrix2, Problem};
use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FormKind {
    #[default]
    Standard,
    SkewSymmetric,
}

impl FormKind {
    pub fn name(&self) -> &'static str {
        match self {
            FormKind::Standard => "standard",
            FormKind::SkewSymmetric => "skew_symmetric",
        }
    }
}

impl std::str::FromStr for FormKind {
    type Err = MsfemError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(FormKind::Standard),
            "skew" | "skew_symmetric" => Ok(FormKind::SkewSymmetric),
            _ => Err(MsfemError::InvalidInput(format!("unknown form kind `{s}`"))),
        }
    }
}

/// Diffusion and advection sampled at the barycenter of every global fine cell.
#[derive(Debug, Clone)]
pub struct OperatorSample {
    pub a: Vec<Matrix2>,
    pub b: Vec<Point>,
    /// Scalar diffusion (trace / d).
    pub mu: Vec<f64>,
}

pub fn sample_operator(meshes: &Meshes, fields: &CoefficientField) -> OperatorSample {
    let data: Vec<(Matrix2, Point, f64)> = meshes
        .geom
        .par_iter()
        .map(|g| (fields.diffusion(g.centroid), fields.advection(g.centroid), fields.scalar_diffusion(g.centroid)))
        .collect();
    OperatorSample {
        a: data.iter().map(|d| d.0).collect(),
        b: data.iter().map(|d| d.1).collect(),
        mu: data.iter().map(|d| d.2).collect(),
    }
}

/// Load moments `int_T f lambda_i` and `int_T f` for every global fine cell.
#[derive(Debug, Clone)]
pub struct LoadSample {
    pub cell_load: Vec<[f64; 3]>,
    pub cell_integral: Vec<f64>,
}

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

pub fn sample_load(meshes: &Meshes, fields: &CoefficientField) -> LoadSample {
    let dim = meshes.dim();
    let fine = &meshes.fine;
    let cell_load: Vec<[f64; 3]> = (0..fine.num_cells())
        .into_par_iter()
        .map(|t| {
            let c = fine.cell(t);
            let g = &meshes.geom[t];
            let p: Vec<Point> = c.iter().map(|&v| fine.vertices[v]).collect();
            let mut out = [0.0; 3];
            if dim == 1 {
                for &s in GAUSS2.iter() {
                    let x = [p[0][0] + s * (p[1][0] - p[0][0]), 0.0];
                    let fv = fields.load(x) * 0.5 * g.measure;
                    out[0] += fv * (1.0 - s);
                    out[1] += fv * s;
                }
            } else {
                // midedge rule: exact for quadratics
                for e in 0..3 {
                    let (i, j) = ((e + 1) % 3, (e + 2) % 3);
                    let x = [0.5 * (p[i][0] + p[j][0]), 0.5 * (p[i][1] + p[j][1])];
                    let fv = fields.load(x) * g.measure / 3.0;
                    out[i] += 0.5 * fv;
                    out[j] += 0.5 * fv;
                }
            }
            out
        })
        .collect();
    let cell_integral = cell_load.iter().map(|l| l[0] + l[1] + l[2]).collect();
    LoadSample { cell_load, cell_integral }
}

/// Element matrix of the bilinear form, rows indexed by the test function.
pub fn element_matrix(dim: usize, g: &CellGeom, a: &Matrix2, b: Point, form: FormKind, advection: bool) -> [[f64; 3]; 3] {
    let nv = dim + 1;
    let mut k = [[0.0; 3]; 3];
    let bg: Vec<f64> = (0..nv).map(|i| b[0] * g.grads[i][0] + b[1] * g.grads[i][1]).collect();
    let w = g.measure / nv as f64;
    for i in 0..nv {
        let gi = g.grads[i];
        for j in 0..nv {
            let gj = g.grads[j];
            let agj = [a[0][0] * gj[0] + a[0][1] * gj[1], a[1][0] * gj[0] + a[1][1] * gj[1]];
            let mut v = g.measure * (gi[0] * agj[0] + gi[1] * agj[1]);
            if advection {
                v += match form {
                    FormKind::Standard => w * bg[j],
                    FormKind::SkewSymmetric => 0.5 * w * (bg[j] - bg[i]),
                };
            }
            k[i][j] = v;
        }
    }
    k
}

/// Global fine matrix as triplets (row = test vertex, column = trial vertex).
pub fn assemble_global(meshes: &Meshes, sample: &OperatorSample, form: FormKind) -> Vec<(usize, usize, f64)> {
    let dim = meshes.dim();
    let nv = dim + 1;
    let mut out = Vec::with_capacity(meshes.fine.num_cells() * nv * nv);
    for t in 0..meshes.fine.num_cells() {
        let ke = element_matrix(dim, &meshes.geom[t], &sample.a[t], sample.b[t], form, true);
        let c = meshes.fine.cell(t);
        for i in 0..nv {
            for j in 0..nv {
                out.push((c[i], c[j], ke[i][j]));
            }
        }
    }
    out
}

/// The discrete bilinear form restricted to one coarse element.
#[derive(Debug, Clone)]
pub struct LocalOperator<'a> {
    pub mesh: &'a LocalMesh,
    nv: usize,
    ke: Vec<[[f64; 3]; 3]>,
}

impl<'a> LocalOperator<'a> {
    /// `advection = false` keeps only the diffusion part.
    pub fn new(meshes: &'a Meshes, k: usize, sample: &OperatorSample, form: FormKind, advection: bool) -> Self {
        let mesh = &meshes.locals[k];
        let dim = meshes.dim();
        let ke = mesh
            .global_cells
            .iter()
            .map(|&t| element_matrix(dim, &meshes.geom[t], &sample.a[t], sample.b[t], form, advection))
            .collect();
        LocalOperator { mesh, nv: dim + 1, ke }
    }

    pub fn size(&self) -> usize {
        self.mesh.num_vertices()
    }

    /// `(A u)_i = a(u, phi_i)`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.size()];
        for (c, ke) in self.mesh.cells.chunks(self.nv).zip(&self.ke) {
            for i in 0..self.nv {
                let mut s = 0.0;
                for j in 0..self.nv {
                    s += ke[i][j] * u[c[j]];
                }
                y[c[i]] += s;
            }
        }
        y
    }

    /// `a_K(u, v)`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(&self.apply(u), v)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.ke.len() * self.nv * self.nv);
        for (c, ke) in self.mesh.cells.chunks(self.nv).zip(&self.ke) {
            for i in 0..self.nv {
                for j in 0..self.nv {
                    out.push((c[i], c[j], ke[i][j]));
                }
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Local load vector `int_K f phi_i`.
pub fn local_load(meshes: &Meshes, k: usize, load: &LoadSample) -> Vec<f64> {
    let mesh = &meshes.locals[k];
    let nv = meshes.dim() + 1;
    let mut out = vec![0.0; mesh.num_vertices()];
    for (c, &t) in mesh.cells.chunks(nv).zip(&mesh.global_cells) {
        for i in 0..nv {
            out[c[i]] += load.cell_load[t][i];
        }
    }
    out
}

/// `int_K phi_i`, the load vector of `f = 1`.
pub fn local_unit_load(meshes: &Meshes, k: usize) -> Vec<f64> {
    let mesh = &meshes.locals[k];
    let nv = meshes.dim() + 1;
    let mut out = vec![0.0; mesh.num_vertices()];
    for (c, &t) in mesh.cells.chunks(nv).zip(&mesh.global_cells) {
        let w = meshes.geom[t].measure / nv as f64;
        for &v in c {
            out[v] += w;
        }
    }
    out
}

/// Local nodal coordinates `x^alpha` on element `k`.
pub fn local_coordinates(meshes: &Meshes, k: usize) -> Vec<Vec<f64>> {
    let mesh = &meshes.locals[k];
    (0..meshes.dim())
        .map(|a| mesh.parent_map.iter().map(|&g| meshes.fine.vertices[g][a]).collect())
        .collect()
}

/// Sparse LU with partial pivoting and a residual-based singularity check.
pub struct SparseLu {
    n: usize,
    mat: SparseColMat<usize, f64>,
    lu: Lu<usize, f64>,
    fro: f64,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn new(n: usize, entries: &[(usize, usize, f64)]) -> Result<SparseLu> {
        faer::set_global_parallelism(Par::Seq);
        let trip: Vec<Triplet<usize, usize, f64>> = entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
            .map_err(|e| MsfemError::InvalidInput(format!("sparse matrix assembly failed: {e:?}")))?;
        let fro = mat.val().iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0 && fro == 0.0 {
            return Err(MsfemError::SingularSystem(format!("zero {n}x{n} matrix")));
        }
        let lu = mat.sp_lu().map_err(|e| MsfemError::SingularSystem(format!("factorization failed: {e:?}")))?;
        Ok(SparseLu { n, mat, lu, fro })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_many(&[rhs.to_vec()])?.pop().unwrap_or_default())
    }

    /// Solves for several right-hand sides; fails with `SingularSystem` when the
    /// residual bound `|Ax-b| <= 1e-10 (|b| + |A|_F |x|)` cannot be met.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if rhs.is_empty() {
            return Ok(Vec::new());
        }
        if self.n == 0 {
            return Ok(vec![Vec::new(); rhs.len()]);
        }
        let b = Mat::<f64>::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        let mut x = self.lu.solve(&b);
        for pass in 0..3 {
            let r = &b - &self.mat * &x;
            let mut ok = true;
            for j in 0..rhs.len() {
                let rn = r.col(j).norm_l2();
                let bn = b.col(j).norm_l2();
                let xn = x.col(j).norm_l2();
                if !(xn.is_finite() && rn.is_finite()) {
                    return Err(MsfemError::SingularSystem(format!("non-finite solution of a {}x{} system", self.n, self.n)));
                }
                if rn > 1e-10 * (bn + self.fro * xn) {
                    ok = false;
                }
            }
            if ok {
                return Ok((0..rhs.len()).map(|j| x.col(j).iter().copied().collect()).collect());
            }
            if pass < 2 {
                let dx = self.lu.solve(&r);
                x += &dx;
            }
        }
        Err(MsfemError::SingularSystem(format!("residual check failed for a {}x{} system", self.n, self.n)))
    }
}

/// Factored Dirichlet problem on one coarse element: unknowns at interior fine nodes.
pub struct DirichletSolver<'a> {
    op: &'a LocalOperator<'a>,
    map: Vec<Option<usize>>,
    lu: SparseLu,
}

impl<'a> DirichletSolver<'a> {
    pub fn new(op: &'a LocalOperator<'a>) -> Result<Self> {
        let mut map = vec![None; op.size()];
        let mut n = 0;
        for (i, &b) in op.mesh.on_boundary.iter().enumerate() {
            if !b {
                map[i] = Some(n);
                n += 1;
            }
        }
        let entries: Vec<_> = op
            .triplets()
            .into_iter()
            .filter_map(|(i, j, v)| Some((map[i]?, map[j]?, v)))
            .collect();
        let lu = SparseLu::new(n, &entries)?;
        Ok(DirichletSolver { op, map, lu })
    }

    /// Each case is `(trace, load)`: the trace is read on boundary nodes only.
    pub fn solve(&self, cases: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<Vec<f64>>> {
        let mut rhs = Vec::with_capacity(cases.len());
        for (trace, load) in cases {
            let g: Vec<f64> = (0..self.op.size()).map(|i| if self.map[i].is_none() { trace[i] } else { 0.0 }).collect();
            let ag = self.op.apply(&g);
            let mut r = vec![0.0; self.lu.size()];
            for (i, m) in self.map.iter().enumerate() {
                if let Some(p) = m {
                    r[*p] = load[i] - ag[i];
                }
            }
            rhs.push(r);
        }
        let sol = self.lu.solve_many(&rhs)?;
        Ok(cases
            .iter()
            .zip(sol)
            .map(|((trace, _), x)| {
                (0..self.op.size()).map(|i| match self.map[i] {
                    Some(p) => x[p],
                    None => trace[i],
                }).collect()
            })
            .collect())
    }
}

/// Interior fine nodes solve the local problem, boundary nodes take `trace`.
pub fn solve_local_dirichlet(op: &LocalOperator, trace: &[f64], load: &[f64]) -> Result<Vec<f64>> {
    let s = DirichletSolver::new(op)?;
    Ok(s.solve(&[(trace.to_vec(), load.to_vec())])?.pop().unwrap())
}

/// Factored saddle-point problem with one face-mean multiplier per face of the element.
pub struct WeakSolver<'a> {
    op: &'a LocalOperator<'a>,
    lu: SparseLu,
}

impl<'a> WeakSolver<'a> {
    pub fn new(op: &'a LocalOperator<'a>) -> Result<Self> {
        let n = op.size();
        let mut entries = op.triplets();
        for (f, w) in op.mesh.face_weights.iter().enumerate() {
            for &(i, c) in w {
                entries.push((n + f, i, c));
                entries.push((i, n + f, c));
            }
        }
        let lu = SparseLu::new(n + op.mesh.face_weights.len(), &entries)?;
        Ok(WeakSolver { op, lu })
    }

    /// Each case is `(face means, load)`.
    pub fn solve(&self, cases: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<Vec<f64>>> {
        let n = self.op.size();
        let rhs: Vec<Vec<f64>> = cases
            .iter()
            .map(|(means, load)| {
                let mut r = load.clone();
                r.extend_from_slice(means);
                r
            })
            .collect();
        Ok(self.lu.solve_many(&rhs)?.into_iter().map(|mut x| {
            x.truncate(n);
            x
        }).collect())
    }
}

/// Fine solution with prescribed face means, tested against all fine functions with zero face means.
pub fn solve_local_weak(op: &LocalOperator, means: &[f64], load: &[f64]) -> Result<Vec<f64>> {
    if means.len() != op.mesh.face_weights.len() {
        return Err(MsfemError::InvalidInput(format!(
            "expected {} face means, got {}",
            op.mesh.face_weights.len(),
            means.len()
        )));
    }
    let s = WeakSolver::new(op)?;
    Ok(s.solve(&[(means.to_vec(), load.to_vec())])?.pop().unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Fine Peclet number `|b| h / (2 m)` is not below one.
    FinePecletTooLarge(f64),
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    /// Values at global fine vertices.
    pub values: Vec<f64>,
    pub warnings: Vec<Warning>,
}

fn fine_peclet(meshes: &Meshes, problem: &Problem, sample: &OperatorSample) -> f64 {
    let bmax = sample.b.iter().map(|b| (b[0] * b[0] + b[1] * b[1]).sqrt()).fold(0.0, f64::max);
    bmax * meshes.fine.h / (2.0 * problem.fields.m)
}

/// Conforming P1 solution on the global fine mesh.
pub fn reference_fine(problem: &Problem, meshes: &Meshes, sample: &OperatorSample, load: &LoadSample, form: FormKind) -> Result<ReferenceSolution> {
    let fine = &meshes.fine;
    let nvert = fine.vertices.len();
    let mut warnings = Vec::new();
    let pe = fine_peclet(meshes, problem, sample);
    if pe >= 1.0 {
        warnings.push(Warning::FinePecletTooLarge(pe));
    }
    let mut g = vec![0.0; nvert];
    if let Boundary::TwoPoint(u0, u1) = problem.boundary {
        g[0] = u0;
        g[nvert - 1] = u1;
    }
    let mut map = vec![None; nvert];
    let mut n = 0;
    for (v, m) in map.iter_mut().enumerate() {
        if !fine.is_boundary_vertex(v) {
            *m = Some(n);
            n += 1;
        }
    }
    let nv = meshes.dim() + 1;
    let mut rhs = vec![0.0; n];
    for t in 0..fine.num_cells() {
        for (i, &v) in fine.cell(t).iter().enumerate() {
            if let Some(p) = map[v] {
                rhs[p] += load.cell_load[t][i];
            }
        }
    }
    let mut entries = Vec::with_capacity(fine.num_cells() * nv * nv);
    for (i, j, v) in assemble_global(meshes, sample, form) {
        match (map[i], map[j]) {
            (Some(p), Some(q)) => entries.push((p, q, v)),
            (Some(p), None) => rhs[p] -= v * g[j],
            _ => {}
        }
    }
    let x = SparseLu::new(n, &entries)?.solve(&rhs)?;
    let values = (0..nvert).map(|v| map[v].map_or(g[v], |p| x[p])).collect();
    Ok(ReferenceSolution { values, warnings })
}

/// Fine solution in the broken space: duplicated unknowns on the coarse skeleton,
/// zero jump means on interior coarse faces and zero means on boundary faces.
pub fn reference_weak_fine(meshes: &Meshes, sample: &OperatorSample, load: &LoadSample, form: FormKind) -> Result<Vec<Vec<f64>>> {
    let coarse = &meshes.coarse;
    let ne = coarse.num_elements();
    let mut offset = Vec::with_capacity(ne + 1);
    offset.push(0);
    for l in &meshes.locals {
        offset.push(offset.last().unwrap() + l.num_vertices());
    }
    let nu = offset[ne];
    let mut entries = Vec::new();
    let mut rhs = vec![0.0; nu + coarse.faces.len()];
    for k in 0..ne {
        let op = LocalOperator::new(meshes, k, sample, form, true);
        for (i, j, v) in op.triplets() {
            entries.push((offset[k] + i, offset[k] + j, v));
        }
        for (i, v) in local_load(meshes, k, load).into_iter().enumerate() {
            rhs[offset[k] + i] = v;
        }
    }
    for (fid, face) in coarse.faces.iter().enumerate() {
        let row = nu + fid;
        for (side, e) in face.elements.iter().enumerate() {
            let Some(k) = *e else { continue };
            let l = coarse.faces_of(k).iter().position(|&f| f == fid).expect("face belongs to element");
            let sign = if side == 0 { 1.0 } else { -1.0 };
            for &(i, w) in &meshes.locals[k].face_weights[l] {
                entries.push((row, offset[k] + i, sign * w));
                entries.push((offset[k] + i, row, sign * w));
            }
        }
    }
    let x = SparseLu::new(nu + coarse.faces.len(), &entries)?.solve(&rhs)?;
    Ok((0..ne).map(|k| x[offset[k]..offset[k + 1]].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_coarse, refine_nested};

    fn unit_triangle() -> CellGeom {
        let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        CellGeom {
            measure: 0.5,
            grads: crate::mesh::barycentric_gradients(2, &p),
            centroid: [1.0 / 3.0, 1.0 / 3.0],
        }
    }

    #[test]
    fn laplacian_on_unit_triangle() {
        let k = element_matrix(2, &unit_triangle(), &[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], FormKind::Standard, true);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forms_agree_without_advection() {
        let a = [[0.3, 0.1], [0.1, 0.7]];
        let k1 = element_matrix(2, &unit_triangle(), &a, [0.0, 0.0], FormKind::Standard, true);
        let k2 = element_matrix(2, &unit_triangle(), &a, [0.0, 0.0], FormKind::SkewSymmetric, true);
        assert_eq!(k1, k2);
    }

    #[test]
    fn advection_kills_constants_and_skew_is_antisymmetric() {
        let zero = [[0.0; 2]; 2];
        let b = [0.4, -1.3];
        let k = element_matrix(2, &unit_triangle(), &zero, b, FormKind::Standard, true);
        for row in k.iter() {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
        let s = element_matrix(2, &unit_triangle(), &zero, b, FormKind::SkewSymmetric, true);
        for i in 0..3 {
            for j in 0..3 {
                assert!((s[i][j] + s[j][i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_solve() {
        let e: Vec<_> = (0..4).map(|i| (i, i, 1.0)).collect();
        let lu = SparseLu::new(4, &e).unwrap();
        assert_eq!(lu.solve(&[1.0, -2.0, 3.5, 0.0]).unwrap(), vec![1.0, -2.0, 3.5, 0.0]);
    }

    #[test]
    fn discrete_laplacian_sine_mode() {
        // tridiag(-1,2,-1)/h has eigenvector sin(k pi x_i) with eigenvalue (2 - 2cos(k pi h))/h
        let n = 63;
        let h = 1.0 / (n as f64 + 1.0);
        let mut e = Vec::new();
        for i in 0..n {
            e.push((i, i, 2.0 / h));
            if i > 0 {
                e.push((i, i - 1, -1.0 / h));
            }
            if i + 1 < n {
                e.push((i, i + 1, -1.0 / h));
            }
        }
        let kpi = 3.0 * std::f64::consts::PI;
        let lam = (2.0 - 2.0 * (kpi * h).cos()) / h;
        let rhs: Vec<f64> = (0..n).map(|i| (kpi * (i + 1) as f64 * h).sin()).collect();
        let x = SparseLu::new(n, &e).unwrap().solve(&rhs).unwrap();
        for i in 0..n {
            assert!((x[i] - rhs[i] / lam).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_is_singular() {
        let e = vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)];
        let r = SparseLu::new(2, &e).and_then(|lu| lu.solve(&[1.0, 1.0]));
        assert!(matches!(r, Err(MsfemError::SingularSystem(_))));
    }

    #[test]
    fn poisson_nodal_exactness() {
        let p = Problem::constant(1, 1.0, [0.0, 0.0], 1.0).unwrap();
        let m = refine_nested(&build_coarse(1, 4).unwrap(), 4).unwrap();
        let s = sample_operator(&m, &p.fields);
        let l = sample_load(&m, &p.fields);
        let u = reference_fine(&p, &m, &s, &l, FormKind::Standard).unwrap();
        for (v, x) in m.fine.vertices.iter().enumerate() {
            assert!((u.values[v] - x[0] * (1.0 - x[0]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_two_point_solution() {
        let p = Problem::constant(1, 0.7, [0.0, 0.0], 0.0).unwrap().with_boundary(Boundary::TwoPoint(0.0, 1.0)).unwrap();
        let m = refine_nested(&build_coarse(1, 4).unwrap(), 3).unwrap();
        let s = sample_operator(&m, &p.fields);
        let l = sample_load(&m, &p.fields);
        let u = reference_fine(&p, &m, &s, &l, FormKind::Standard).unwrap();
        for (v, x) in m.fine.vertices.iter().enumerate() {
            assert!((u.values[v] - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn fine_peclet_warning() {
        let p = Problem::constant(1, 1e-4, [1.0, 0.0], 1.0).unwrap();
        let m = refine_nested(&build_coarse(1, 4).unwrap(), 2).unwrap();
        let s = sample_operator(&m, &p.fields);
        let l = sample_load(&m, &p.fields);
        let u = reference_fine(&p, &m, &s, &l, FormKind::Standard).unwrap();
        assert!(matches!(u.warnings[0], Warning::FinePecletTooLarge(pe) if pe > 1.0));
    }

    #[test]
    fn affine_dirichlet_data_is_reproduced() {
        let p = Problem::constant(2, 0.3, [0.0, 0.0], 0.0).unwrap();
        let m = refine_nested(&build_coarse(2, 2).unwrap(), 3).unwrap();
        let s = sample_operator(&m, &p.fields);
        for k in 0..m.coarse.num_elements() {
            let op = LocalOperator::new(&m, k, &s, FormKind::Standard, true);
            let x = local_coordinates(&m, k);
            let g: Vec<f64> = (0..op.size()).map(|i| 0.2 + 1.5 * x[0][i] - 0.7 * x[1][i]).collect();
            let u = solve_local_dirichlet(&op, &g, &vec![0.0; op.size()]).unwrap();
            for i in 0..op.size() {
                assert!((u[i] - g[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weak_solve_reproduces_affine_means() {
        let p = Problem::constant(2, 1.0, [0.0, 0.0], 0.0).unwrap();
        let m = refine_nested(&build_coarse(2, 2).unwrap(), 3).unwrap();
        let s = sample_operator(&m, &p.fields);
        let op = LocalOperator::new(&m, 3, &s, FormKind::Standard, true);
        let x = local_coordinates(&m, 3);
        let g: Vec<f64> = (0..op.size()).map(|i| -0.4 + 2.0 * x[0][i] + 0.9 * x[1][i]).collect();
        let means: Vec<f64> = (0..3).map(|f| op.mesh.face_mean(f, &g)).collect();
        let u = solve_local_weak(&op, &means, &vec![0.0; op.size()]).unwrap();
        for i in 0..op.size() {
            assert!((u[i] - g[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn local_assemblies_sum_to_global() {
        let p = Problem::testcase_2d_moderate(0.1, 0.25).unwrap();
        let m = refine_nested(&build_coarse(2, 2).unwrap(), 3).unwrap();
        let s = sample_operator(&m, &p.fields);
        let n = m.fine.vertices.len();
        let mut global = vec![0.0; n * n];
        for (i, j, v) in assemble_global(&m, &s, FormKind::Standard) {
            global[i * n + j] += v;
        }
        let mut summed = vec![0.0; n * n];
        for k in 0..m.coarse.num_elements() {
            let op = LocalOperator::new(&m, k, &s, FormKind::Standard, true);
            let pm = &m.locals[k].parent_map;
            for (i, j, v) in op.triplets() {
                summed[pm[i] * n + pm[j]] += v;
            }
        }
        for (a, b) in global.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn skew_block_is_antisymmetric_for_moderate_field() {
        let p = Problem::testcase_2d_moderate(0.1, 0.25).unwrap();
        let m = refine_nested(&build_coarse(2, 2).unwrap(), 2).unwrap();
        let mut s = sample_operator(&m, &p.fields);
        for a in s.a.iter_mut() {
            *a = [[0.0; 2]; 2];
        }
        let n = m.fine.vertices.len();
        let mut g = vec![0.0; n * n];
        for (i, j, v) in assemble_global(&m, &s, FormKind::SkewSymmetric) {
            g[i * n + j] += v;
        }
        for i in 0..n {
            for j in 0..n {
                assert!((g[i * n + j] + g[j * n + i]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn weak_reference_constraints_hold() {
        let p = Problem::testcase_2d_moderate(0.25, 0.25).unwrap();
        let m = refine_nested(&build_coarse(2, 2).unwrap(), 3).unwrap();
        let s = sample_operator(&m, &p.fields);
        let l = sample_load(&m, &p.fields);
        let nu = reference_weak_fine(&m, &s, &l, FormKind::Standard).unwrap();
        for (fid, f) in m.coarse.faces.iter().enumerate() {
            let mean = |k: usize| {
                let lf = m.coarse.faces_of(k).iter().position(|&x| x == fid).unwrap();
                m.locals[k].face_mean(lf, &nu[k])
            };
            let a = mean(f.elements[0].unwrap());
            let jump = match f.elements[1] {
                Some(k) => a - mean(k),
                None => a,
            };
            assert!(jump.abs() < 1e-10);
        }
    }
}
