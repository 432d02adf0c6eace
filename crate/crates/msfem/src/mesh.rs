//! Structured coarse meshes of the unit interval / square and their nested fine refinements.

use crate::error::{MsfemError, Result};
use std::collections::HashMap;

pub type Point = [f64; 2];

/// A coarse element face: a vertex in 1D, an edge in 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    /// Endpoints sorted ascending; in 1D both entries hold the same vertex.
    pub vertices: [usize; 2],
    pub elements: [Option<usize>; 2],
    pub boundary: bool,
}

#[derive(Debug, Clone)]
pub struct CoarseMesh {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub vertices: Vec<Point>,
    /// Integer coordinates on the `1/n` lattice.
    pub lattice: Vec<[i64; 2]>,
    /// Element connectivity, `dim + 1` vertices per element.
    pub cells: Vec<usize>,
    pub faces: Vec<Face>,
    /// Face opposite each local vertex, `dim + 1` entries per element.
    pub cell_faces: Vec<usize>,
}

/// Uniform lattice index helpers shared by coarse and fine grids.
fn lattice_vertex(dim: usize, n: usize, i: usize, j: usize) -> usize {
    if dim == 1 {
        i
    } else {
        j * (n + 1) + i
    }
}

fn lattice_cells(dim: usize, n: usize) -> Vec<usize> {
    let mut cells = Vec::new();
    if dim == 1 {
        for i in 0..n {
            cells.extend_from_slice(&[i, i + 1]);
        }
    } else {
        for j in 0..n {
            for i in 0..n {
                let v00 = lattice_vertex(2, n, i, j);
                let v10 = lattice_vertex(2, n, i + 1, j);
                let v11 = lattice_vertex(2, n, i + 1, j + 1);
                let v01 = lattice_vertex(2, n, i, j + 1);
                cells.extend_from_slice(&[v00, v10, v11]);
                cells.extend_from_slice(&[v00, v11, v01]);
            }
        }
    }
    cells
}

fn lattice_points(dim: usize, n: usize) -> (Vec<Point>, Vec<[i64; 2]>) {
    let mut pts = Vec::new();
    let mut lat = Vec::new();
    let rows = if dim == 1 { 1 } else { n + 1 };
    for j in 0..rows {
        for i in 0..=n {
            lat.push([i as i64, j as i64]);
            pts.push([i as f64 / n as f64, if dim == 1 { 0.0 } else { j as f64 / n as f64 }]);
        }
    }
    (pts, lat)
}

impl CoarseMesh {
    pub fn nv(&self) -> usize {
        self.dim + 1
    }

    pub fn num_elements(&self) -> usize {
        self.cells.len() / self.nv()
    }

    pub fn cell(&self, k: usize) -> &[usize] {
        let nv = self.nv();
        &self.cells[k * nv..(k + 1) * nv]
    }

    pub fn faces_of(&self, k: usize) -> &[usize] {
        let nv = self.nv();
        &self.cell_faces[k * nv..(k + 1) * nv]
    }

    pub fn measure(&self, k: usize) -> f64 {
        simplex_measure(self.dim, &self.cell_points(k))
    }

    pub fn cell_points(&self, k: usize) -> [Point; 3] {
        let mut p = [[0.0; 2]; 3];
        for (l, &v) in self.cell(k).iter().enumerate() {
            p[l] = self.vertices[v];
        }
        p
    }

    pub fn centroid(&self, k: usize) -> Point {
        let p = self.cell_points(k);
        let nv = self.nv() as f64;
        let mut c = [0.0; 2];
        for q in p.iter().take(self.nv()) {
            c[0] += q[0] / nv;
            c[1] += q[1] / nv;
        }
        c
    }

    /// Gradients of the barycentric coordinates of element `k`.
    pub fn hat_gradients(&self, k: usize) -> [Point; 3] {
        barycentric_gradients(self.dim, &self.cell_points(k))
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        let [i, j] = self.lattice[v];
        let n = self.n as i64;
        if self.dim == 1 {
            i == 0 || i == n
        } else {
            i == 0 || j == 0 || i == n || j == n
        }
    }

    pub fn interior_faces(&self) -> usize {
        self.faces.iter().filter(|f| !f.boundary).count()
    }

    pub fn dump(&self) -> String {
        mesh_text(self.dim, &self.vertices, &self.cells)
    }
}

/// Coarse mesh with `n` elements per side and mesh size `H = 1/n`.
pub fn build_coarse(dim: usize, n: usize) -> Result<CoarseMesh> {
    if dim != 1 && dim != 2 {
        return Err(MsfemError::InvalidInput(format!("dimension must be 1 or 2, got {dim}")));
    }
    if n < 2 {
        return Err(MsfemError::InvalidInput(format!("need at least 2 elements per side, got {n}")));
    }
    let (vertices, lattice) = lattice_points(dim, n);
    let cells = lattice_cells(dim, n);
    let nv = dim + 1;
    let ne = cells.len() / nv;
    let mut faces: Vec<Face> = Vec::new();
    let mut index: HashMap<[usize; 2], usize> = HashMap::new();
    let mut cell_faces = vec![0; ne * nv];
    for k in 0..ne {
        let c = &cells[k * nv..(k + 1) * nv];
        for l in 0..nv {
            let key = if dim == 1 {
                let v = c[1 - l];
                [v, v]
            } else {
                let a = c[(l + 1) % 3];
                let b = c[(l + 2) % 3];
                [a.min(b), a.max(b)]
            };
            let id = *index.entry(key).or_insert_with(|| {
                faces.push(Face { vertices: key, elements: [None, None], boundary: false });
                faces.len() - 1
            });
            let f = &mut faces[id];
            if f.elements[0].is_none() {
                f.elements[0] = Some(k);
            } else {
                f.elements[1] = Some(k);
            }
            cell_faces[k * nv + l] = id;
        }
    }
    for f in faces.iter_mut() {
        f.boundary = f.elements[1].is_none();
    }
    Ok(CoarseMesh { dim, n, h: 1.0 / n as f64, vertices, lattice, cells, faces, cell_faces })
}

/// The global uniform fine mesh with `n * 2^levels` cells per side.
#[derive(Debug, Clone)]
pub struct FineMesh {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub vertices: Vec<Point>,
    pub lattice: Vec<[i64; 2]>,
    pub cells: Vec<usize>,
}

impl FineMesh {
    pub fn nv(&self) -> usize {
        self.dim + 1
    }
    pub fn num_cells(&self) -> usize {
        self.cells.len() / self.nv()
    }
    pub fn cell(&self, t: usize) -> &[usize] {
        let nv = self.nv();
        &self.cells[t * nv..(t + 1) * nv]
    }
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        let [i, j] = self.lattice[v];
        let n = self.n as i64;
        if self.dim == 1 {
            i == 0 || i == n
        } else {
            i == 0 || j == 0 || i == n || j == n
        }
    }
    pub fn dump(&self) -> String {
        mesh_text(self.dim, &self.vertices, &self.cells)
    }
}

/// Restriction of the global fine mesh to one coarse element.
#[derive(Debug, Clone)]
pub struct LocalMesh {
    pub element: usize,
    /// Local vertex -> global fine vertex, sorted ascending.
    pub parent_map: Vec<usize>,
    /// Local connectivity.
    pub cells: Vec<usize>,
    /// Local cell -> global fine cell.
    pub global_cells: Vec<usize>,
    pub on_boundary: Vec<bool>,
    /// For each local face of the coarse element: (local vertex, weight) pairs whose
    /// weighted sum is the face mean of a fine P1 function.
    pub face_weights: Vec<Vec<(usize, f64)>>,
}

impl LocalMesh {
    pub fn num_vertices(&self) -> usize {
        self.parent_map.len()
    }
    pub fn num_cells(&self) -> usize {
        self.global_cells.len()
    }
    pub fn face_mean(&self, face: usize, v: &[f64]) -> f64 {
        self.face_weights[face].iter().map(|&(i, w)| w * v[i]).sum()
    }
}

/// Coarse mesh, global fine mesh and per-element restrictions.
#[derive(Debug, Clone)]
pub struct Meshes {
    pub coarse: CoarseMesh,
    pub fine: FineMesh,
    pub levels: usize,
    pub locals: Vec<LocalMesh>,
    /// Global fine cell -> coarse element.
    pub cell_parent: Vec<usize>,
    /// Geometry of every global fine cell.
    pub geom: Vec<CellGeom>,
}

#[derive(Debug, Clone, Copy)]
pub struct CellGeom {
    pub measure: f64,
    pub grads: [Point; 3],
    pub centroid: Point,
}

impl Meshes {
    pub fn dim(&self) -> usize {
        self.coarse.dim
    }
}

/// Nested refinement: every coarse element is split into `2^(dim*levels)` fine elements.
pub fn refine_nested(coarse: &CoarseMesh, levels: usize) -> Result<Meshes> {
    if levels < 1 {
        return Err(MsfemError::InvalidInput("refinement needs at least one level".into()));
    }
    if levels > 24 {
        return Err(MsfemError::InvalidInput(format!("{levels} refinement levels is too many")));
    }
    let dim = coarse.dim;
    let s = 1usize << levels;
    let nf = coarse.n * s;
    let (vertices, lattice) = lattice_points(dim, nf);
    let cells = lattice_cells(dim, nf);
    let fine = FineMesh { dim, n: nf, h: 1.0 / nf as f64, vertices, lattice, cells };
    let nv = dim + 1;
    let nc = coarse.num_elements();

    let mut cell_parent = vec![usize::MAX; fine.num_cells()];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for t in 0..fine.num_cells() {
        // centroid in units of the fine lattice, times nv to stay integral
        let mut c = [0i64; 2];
        for &v in fine.cell(t) {
            c[0] += fine.lattice[v][0];
            c[1] += fine.lattice[v][1];
        }
        let k = locate_coarse(coarse, s as i64, nv as i64, c);
        cell_parent[t] = k;
        members[k].push(t);
    }

    let mut locals = Vec::with_capacity(nc);
    for (k, ts) in members.iter().enumerate() {
        let mut verts: Vec<usize> = ts.iter().flat_map(|&t| fine.cell(t).iter().copied()).collect();
        verts.sort_unstable();
        verts.dedup();
        let mut g2l = HashMap::with_capacity(verts.len());
        for (l, &g) in verts.iter().enumerate() {
            g2l.insert(g, l);
        }
        let mut lcells = Vec::with_capacity(ts.len() * nv);
        for &t in ts {
            for &g in fine.cell(t) {
                lcells.push(g2l[&g]);
            }
        }
        let cv: Vec<[i64; 2]> = coarse.cell(k).iter().map(|&v| {
            let [i, j] = coarse.lattice[v];
            [i * s as i64, j * s as i64]
        }).collect();
        let mut face_weights = Vec::with_capacity(nv);
        let mut on_boundary = vec![false; verts.len()];
        for l in 0..nv {
            let w = if dim == 1 {
                let target = cv[1 - l];
                let loc = verts.iter().position(|&g| fine.lattice[g] == target).expect("endpoint present");
                vec![(loc, 1.0)]
            } else {
                let a = cv[(l + 1) % 3];
                let b = cv[(l + 2) % 3];
                edge_weights(&verts, &fine.lattice, a, b, s)
            };
            for &(i, _) in &w {
                on_boundary[i] = true;
            }
            face_weights.push(w);
        }
        locals.push(LocalMesh {
            element: k,
            parent_map: verts,
            cells: lcells,
            global_cells: ts.clone(),
            on_boundary,
            face_weights,
        });
    }
    let geom = (0..fine.num_cells()).map(|t| {
        let mut p = [[0.0; 2]; 3];
        let mut c = [0.0; 2];
        for (l, &v) in fine.cell(t).iter().enumerate() {
            p[l] = fine.vertices[v];
            c[0] += p[l][0] / nv as f64;
            c[1] += p[l][1] / nv as f64;
        }
        CellGeom { measure: simplex_measure(dim, &p), grads: barycentric_gradients(dim, &p), centroid: c }
    }).collect();
    Ok(Meshes { coarse: coarse.clone(), fine, levels, locals, cell_parent, geom })
}

/// Coarse element containing a fine centroid given as `nv *` fine-lattice coordinates.
fn locate_coarse(coarse: &CoarseMesh, s: i64, nv: i64, c: [i64; 2]) -> usize {
    let scale = s * nv;
    let i = (c[0] / scale) as usize;
    if coarse.dim == 1 {
        return i;
    }
    let j = (c[1] / scale) as usize;
    let rx = c[0] - i as i64 * scale;
    let ry = c[1] - j as i64 * scale;
    let square = j * coarse.n + i;
    // lower-right triangle sits below the diagonal of its square
    if ry < rx {
        2 * square
    } else {
        2 * square + 1
    }
}

/// Trapezoid weights for the mean over the coarse edge `a`-`b` (fine-lattice coordinates).
fn edge_weights(verts: &[usize], lattice: &[[i64; 2]], a: [i64; 2], b: [i64; 2], s: usize) -> Vec<(usize, f64)> {
    let mut on: Vec<(i64, usize)> = Vec::new();
    let d = [b[0] - a[0], b[1] - a[1]];
    for (l, &g) in verts.iter().enumerate() {
        let p = lattice[g];
        let r = [p[0] - a[0], p[1] - a[1]];
        if r[0] * d[1] - r[1] * d[0] != 0 {
            continue;
        }
        let t = r[0] * d[0] + r[1] * d[1];
        let len2 = d[0] * d[0] + d[1] * d[1];
        if t >= 0 && t <= len2 {
            on.push((t, l));
        }
    }
    on.sort_unstable();
    debug_assert_eq!(on.len(), s + 1);
    let seg = 1.0 / s as f64;
    on.iter().enumerate().map(|(q, &(_, l))| {
        let w = if q == 0 || q == s { 0.5 * seg } else { seg };
        (l, w)
    }).collect()
}

pub fn simplex_measure(dim: usize, p: &[Point; 3]) -> f64 {
    if dim == 1 {
        (p[1][0] - p[0][0]).abs()
    } else {
        0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs()
    }
}

pub fn barycentric_gradients(dim: usize, p: &[Point; 3]) -> [Point; 3] {
    if dim == 1 {
        let len = p[1][0] - p[0][0];
        return [[-1.0 / len, 0.0], [1.0 / len, 0.0], [0.0, 0.0]];
    }
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    [
        [(p[1][1] - p[2][1]) / det, (p[2][0] - p[1][0]) / det],
        [(p[2][1] - p[0][1]) / det, (p[0][0] - p[2][0]) / det],
        [(p[0][1] - p[1][1]) / det, (p[1][0] - p[0][0]) / det],
    ]
}

/// Length of the chord of element `k` through its centroid in direction `b`.
pub fn directional_diameter(coarse: &CoarseMesh, k: usize, b: Point) -> Result<f64> {
    let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
    if nb == 0.0 || !nb.is_finite() {
        return Err(MsfemError::InvalidInput("directional diameter needs a nonzero direction".into()));
    }
    if coarse.dim == 1 {
        return Ok(coarse.h);
    }
    let p = coarse.cell_points(k);
    let dir = [b[0] / nb, b[1] / nb];
    let g = barycentric_gradients(2, &p);
    // lambda_i(c + t dir) = 1/3 + t g_i.dir >= 0
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for gi in g.iter() {
        let slope = gi[0] * dir[0] + gi[1] * dir[1];
        if slope.abs() < 1e-300 {
            continue;
        }
        let t = -(1.0 / 3.0) / slope;
        if slope > 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
    }
    Ok(hi - lo)
}

/// Axis-aligned region used to restrict error measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Full,
    /// `(0, 1 - H)^d`: everything outside the outflow boundary layer elements.
    Oble { upper: f64 },
}

impl Region {
    pub fn oble(coarse: &CoarseMesh) -> Region {
        Region::Oble { upper: 1.0 - coarse.h }
    }

    pub fn contains_element(&self, coarse: &CoarseMesh, k: usize) -> bool {
        match *self {
            Region::Full => true,
            Region::Oble { upper } => coarse.cell(k).iter().all(|&v| {
                let p = coarse.vertices[v];
                p[0] <= upper + 1e-12 && (coarse.dim == 1 || p[1] <= upper + 1e-12)
            }),
        }
    }

    pub fn bounds(&self, dim: usize) -> [(f64, f64); 2] {
        let u = match *self {
            Region::Full => 1.0,
            Region::Oble { upper } => upper,
        };
        [(0.0, u), if dim == 1 { (0.0, 0.0) } else { (0.0, u) }]
    }
}

fn mesh_text(dim: usize, vertices: &[Point], cells: &[usize]) -> String {
    use std::fmt::Write;
    let nv = dim + 1;
    let mut s = String::new();
    let _ = writeln!(s, "# vertices {}", vertices.len());
    for p in vertices {
        if dim == 1 {
            let _ = writeln!(s, "{:.17e}", p[0]);
        } else {
            let _ = writeln!(s, "{:.17e} {:.17e}", p[0], p[1]);
        }
    }
    let _ = writeln!(s, "# elements {}", cells.len() / nv);
    for c in cells.chunks(nv) {
        let line: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_1d_counts() {
        let m = build_coarse(1, 8).unwrap();
        assert_eq!(m.num_elements(), 8);
        assert_eq!(m.vertices.len(), 9);
        assert_eq!((0..9).filter(|&v| !m.is_boundary_vertex(v)).count(), 7);
        assert_eq!(m.h, 0.125);
        assert_eq!(m.interior_faces(), 7);
    }

    #[test]
    fn coarse_2d_two_by_two() {
        let m = build_coarse(2, 2).unwrap();
        assert_eq!(m.vertices.len(), 9);
        assert_eq!(m.faces.len(), 16);
        assert_eq!(m.num_elements(), 8);
        assert_eq!(m.interior_faces(), 8);
        let euler = m.vertices.len() as i64 - m.faces.len() as i64 + m.num_elements() as i64;
        assert_eq!(euler, 1);
    }

    #[test]
    fn rejects_small_n() {
        assert!(build_coarse(2, 1).is_err());
        assert!(build_coarse(3, 4).is_err());
    }

    #[test]
    fn oble_bounds() {
        let m = build_coarse(2, 16).unwrap();
        assert_eq!(Region::oble(&m).bounds(2), [(0.0, 0.9375), (0.0, 0.9375)]);
    }

    #[test]
    fn oble_drops_outflow_strip() {
        let m = build_coarse(2, 4).unwrap();
        let r = Region::oble(&m);
        let kept = (0..m.num_elements()).filter(|&k| r.contains_element(&m, k)).count();
        assert_eq!(kept, 2 * 3 * 3);
    }

    #[test]
    fn triangle_refinement_counts() {
        let m = build_coarse(2, 2).unwrap();
        let r = refine_nested(&m, 3).unwrap();
        for l in &r.locals {
            assert_eq!(l.num_cells(), 64);
            assert_eq!(l.num_vertices(), 45);
        }
    }

    #[test]
    fn interval_refinement_size() {
        let m = build_coarse(1, 8).unwrap();
        let r = refine_nested(&m, 5).unwrap();
        assert_eq!(r.fine.h, m.h / 32.0);
        assert_eq!(r.locals[3].num_cells(), 32);
    }

    #[test]
    fn directional_diameter_lower_left_triangle() {
        // lower-left triangle (0,0),(H,0),(0,H) is the upper-left half of a flipped square;
        // use a custom mesh for the reference shape.
        let h = 0.25;
        let m = CoarseMesh {
            dim: 2,
            n: 4,
            h,
            vertices: vec![[0.0, 0.0], [h, 0.0], [0.0, h]],
            lattice: vec![[0, 0], [1, 0], [0, 1]],
            cells: vec![0, 1, 2],
            faces: vec![],
            cell_faces: vec![],
        };
        let d = directional_diameter(&m, 0, [1.0, 0.0]).unwrap();
        assert!((d - 2.0 * h / 3.0).abs() < 1e-15);
        let d2 = directional_diameter(&m, 0, [-3.0, 0.0]).unwrap();
        assert!((d - d2).abs() < 1e-15);
        assert!(directional_diameter(&m, 0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn directional_diameter_by_sampling() {
        let m = build_coarse(2, 4).unwrap();
        let b = [0.3, 0.7];
        for k in 0..2 {
            let d = directional_diameter(&m, k, b).unwrap();
            let c = m.centroid(k);
            let g = m.hat_gradients(k);
            let p = m.cell_points(k);
            let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
            let inside = |t: f64| {
                let x = [c[0] + t * b[0] / nb, c[1] + t * b[1] / nb];
                (0..3).all(|i| 1.0 + g[i][0] * (x[0] - p[i][0]) + g[i][1] * (x[1] - p[i][1]) >= -1e-14)
            };
            let steps = 200_000;
            let mut count = 0;
            for q in 0..steps {
                let t = -1.0 + 2.0 * (q as f64 + 0.5) / steps as f64;
                if inside(t) {
                    count += 1;
                }
            }
            let sampled = 2.0 * count as f64 / steps as f64;
            assert!((sampled - d).abs() < 2e-5, "{sampled} vs {d}");
        }
    }

    #[test]
    fn one_dimensional_diameter_is_h() {
        let m = build_coarse(1, 64).unwrap();
        assert_eq!(directional_diameter(&m, 5, [-2.0, 0.0]).unwrap(), 1.0 / 64.0);
    }

    #[test]
    fn dump_has_all_vertices_and_elements() {
        let m = build_coarse(2, 2).unwrap();
        let text = m.dump();
        assert_eq!(text.lines().count(), 1 + 9 + 1 + 8);
    }
}
