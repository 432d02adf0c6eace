//! Relative broken H1 errors and an overshoot indicator.

use crate::error::{MsfemError, Result};
use crate::mesh::{Meshes, Region};
use crate::online::SolveResult;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub err_oble: f64,
    pub err_full: f64,
    pub norm_oble: f64,
    pub norm_full: f64,
    pub overshoot: f64,
}

/// Values of a global fine field at the local nodes of every coarse element.
pub fn restrict(meshes: &Meshes, global: &[f64]) -> Vec<Vec<f64>> {
    meshes.locals.iter().map(|l| l.parent_map.iter().map(|&g| global[g]).collect()).collect()
}

/// `||u||^2_{H1(K)}` (gradient and L2 parts) for a fine P1 field on element `k`.
pub fn element_h1_squared(meshes: &Meshes, k: usize, u: &[f64]) -> f64 {
    let nv = meshes.dim() + 1;
    let loc = &meshes.locals[k];
    let mass = ((nv) * (nv + 1)) as f64;
    let mut s = 0.0;
    for (c, &t) in loc.cells.chunks(nv).zip(&loc.global_cells) {
        let g = &meshes.geom[t];
        let mut grad = [0.0; 2];
        let (mut sq, mut sum) = (0.0, 0.0);
        for i in 0..nv {
            let v = u[c[i]];
            grad[0] += v * g.grads[i][0];
            grad[1] += v * g.grads[i][1];
            sq += v * v;
            sum += v;
        }
        s += g.measure * (grad[0] * grad[0] + grad[1] * grad[1]) + g.measure / mass * (sq + sum * sum);
    }
    s
}

fn check_shapes(meshes: &Meshes, fields: &[&[Vec<f64>]]) -> Result<()> {
    for f in fields {
        if f.len() != meshes.locals.len() || f.iter().zip(&meshes.locals).any(|(v, l)| v.len() != l.num_vertices()) {
            return Err(MsfemError::InvalidInput("field does not live on this fine mesh".into()));
        }
    }
    Ok(())
}

/// `(sqrt(sum_K ||u - u_ref||^2_{H1(K)}), ||u_ref||_{H1})` over the elements of `region`.
pub fn broken_h1_error(meshes: &Meshes, field: &[Vec<f64>], reference: &[Vec<f64>], region: Region) -> Result<(f64, f64)> {
    check_shapes(meshes, &[field, reference])?;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..meshes.coarse.num_elements() {
        if !region.contains_element(&meshes.coarse, k) {
            continue;
        }
        let e: Vec<f64> = field[k].iter().zip(&reference[k]).map(|(a, b)| a - b).collect();
        num += element_h1_squared(meshes, k, &e);
        den += element_h1_squared(meshes, k, &reference[k]);
    }
    Ok((num.sqrt(), den.sqrt()))
}

/// Largest excess of `p1_part` over the reference range, on fine nodes of `region`,
/// divided by that range.
pub fn overshoot(meshes: &Meshes, p1_part: &[Vec<f64>], reference: &[Vec<f64>], region: Region) -> Result<f64> {
    check_shapes(meshes, &[p1_part, reference])?;
    let lo = reference.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(MsfemError::InvalidInput("reference field is constant".into()));
    }
    let mut worst: f64 = 0.0;
    for k in 0..meshes.coarse.num_elements() {
        if region.contains_element(&meshes.coarse, k) {
            for &p in &p1_part[k] {
                worst = worst.max(p - hi).max(lo - p);
            }
        }
    }
    Ok(worst / range)
}

/// Relative errors on the OBLE region and on the whole domain plus the overshoot.
pub fn error_report(meshes: &Meshes, result: &SolveResult, reference: &[Vec<f64>]) -> Result<ErrorReport> {
    let oble = Region::oble(&meshes.coarse);
    let (num_o, norm_oble) = broken_h1_error(meshes, &result.fine_field, reference, oble)?;
    let (num_f, norm_full) = broken_h1_error(meshes, &result.fine_field, reference, Region::Full)?;
    if !(norm_oble > 0.0) || !(norm_full > 0.0) {
        return Err(MsfemError::InvalidInput("reference has zero norm".into()));
    }
    Ok(ErrorReport {
        err_oble: num_o / norm_oble,
        err_full: num_f / norm_full,
        norm_oble,
        norm_full,
        overshoot: overshoot(meshes, &result.p1_part, reference, oble)?,
    })
}
