//! Classical least-squares photometric stereo under the Lambertian model.

use nalgebra::{Matrix3, Vector3};

use crate::domain::{validate_pair, ImageStack, LightSet, Mask, NormalMap};
use crate::error::{Error, Result};

/// Observations dimmer than this fraction of the pixel's brightest one are
/// treated as shadowed and dropped.
pub const SHADOW_FRACTION: f64 = 0.02;

/// Maximum accepted condition number of `L^T L`.
pub const MAX_CONDITION: f64 = 1e8;

/// `|b|` below this marks a pixel as degenerate.
const DEGENERATE_ALBEDO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct L2Solution {
    pub normals: NormalMap,
    /// Per-channel albedo, `(H, W, 3)`.
    pub albedo: Vec<f64>,
    /// Per-pixel RMS residual of the luminance system.
    pub residual: Vec<f64>,
}

fn condition_number(m: &Matrix3<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn normal_matrix<'a>(lights: impl Iterator<Item = &'a [f64; 3]>) -> Matrix3<f64> {
    let mut ltl = Matrix3::zeros();
    for l in lights {
        let v = Vector3::from(*l);
        ltl += v * v.transpose();
    }
    ltl
}

/// Per-pixel least squares `min |L b - i|` on the RGB-averaged intensity, with
/// `albedo = |b|` and `normal = b / |b|`.
pub fn solve_l2(stack: &ImageStack, lights: &LightSet, mask: &Mask) -> Result<L2Solution> {
    validate_pair(stack, lights)?;
    if lights.len() < 3 {
        return Err(Error::TooFewLights(lights.len()));
    }
    let (height, width) = (stack.height(), stack.width());
    mask.ensure_dims(height, width, "image stack")?;
    let dirs = lights.directions();
    let cond = condition_number(&normal_matrix(dirs.iter()));
    if !(cond < MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }

    let pixels = height * width;
    let plane = pixels * 3;
    let data = stack.data();
    let n = stack.count();
    let mut normals = vec![[0.0; 3]; pixels];
    let mut albedo = vec![0.0; pixels * 3];
    let mut residual = vec![0.0; pixels];
    let mut luminance = vec![0.0; n];
    let mut used: Vec<usize> = Vec::with_capacity(n);

    for p in 0..pixels {
        if !mask.valid()[p] {
            continue;
        }
        for (j, lum) in luminance.iter_mut().enumerate() {
            let base = j * plane + p * 3;
            *lum = (data[base] + data[base + 1] + data[base + 2]) / 3.0;
        }
        let brightest = luminance.iter().cloned().fold(0.0, f64::max);
        used.clear();
        used.extend((0..n).filter(|&j| luminance[j] >= SHADOW_FRACTION * brightest));
        let mut ltl = normal_matrix(used.iter().map(|&j| &dirs[j]));
        if used.len() < 3 || !(condition_number(&ltl) < MAX_CONDITION) {
            used.clear();
            used.extend(0..n);
            ltl = normal_matrix(dirs.iter());
        }
        let mut lti = Vector3::zeros();
        for &j in &used {
            lti += Vector3::from(dirs[j]) * luminance[j];
        }
        let b = match ltl.cholesky() {
            Some(chol) => chol.solve(&lti),
            None => ltl.lu().solve(&lti).unwrap_or_else(Vector3::zeros),
        };
        let rho = b.norm();
        let sum_sq: f64 = used
            .iter()
            .map(|&j| (Vector3::from(dirs[j]).dot(&b) - luminance[j]).powi(2))
            .sum();
        residual[p] = (sum_sq / used.len() as f64).sqrt();
        if rho < DEGENERATE_ALBEDO {
            continue;
        }
        let normal = b / rho;
        normals[p] = [normal.x, normal.y, normal.z];
        // per-channel albedo: least-squares fit of i_c = rho_c * (l . n)
        let shading: Vec<f64> = used.iter().map(|&j| Vector3::from(dirs[j]).dot(&normal)).collect();
        let denom: f64 = shading.iter().map(|s| s * s).sum();
        for c in 0..3 {
            let num: f64 = used
                .iter()
                .zip(&shading)
                .map(|(&j, s)| s * data[j * plane + p * 3 + c])
                .sum();
            albedo[p * 3 + c] = if denom > 0.0 { (num / denom).max(0.0) } else { 0.0 };
        }
    }

    Ok(L2Solution {
        normals: NormalMap::new(height, width, normals)?,
        albedo,
        residual,
    })
}
