//! Analytic surfaces and a Lambertian / Blinn-Phong renderer for building
//! photometric-stereo datasets with exact ground truth.
//!
//! The camera is orthographic and looks down `-z`; the view vector is
//! `(0, 0, 1)`. Cast shadows are not traced. They only appear through the
//! outlier term of [`NoiseSpec`].

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{self, DatasetObject};
use crate::domain::{dot3, norm3, validate_pair, ImageStack, LightSet, Mask, NormalMap};
use crate::error::{Error, Result};

/// Maximum polar angle of sampled light directions, in degrees.
pub const LIGHT_CAP_DEGREES: f64 = 60.0;

const VIEW: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceKind {
    /// Hemisphere facing the camera; `radius` in pixels.
    Sphere { radius: f64 },
    /// `h = a sin(2 pi f x) sin(2 pi f y)`, `frequency` in cycles per pixel.
    SinusoidalBumps { amplitude: f64, frequency: f64 },
    /// Three oblique ridge trains at frequencies `f`, `2f` and `3f`.
    WrinkleField { amplitude: f64, frequency: f64 },
    Plane,
}

impl SurfaceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SurfaceKind::Sphere { .. } => "sphere",
            SurfaceKind::SinusoidalBumps { .. } => "bumps",
            SurfaceKind::WrinkleField { .. } => "wrinkles",
            SurfaceKind::Plane => "plane",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSpec {
    pub kind: SurfaceKind,
    pub height: usize,
    pub width: usize,
}

impl SurfaceSpec {
    pub fn sphere(size: usize, radius: f64) -> Self {
        Self {
            kind: SurfaceKind::Sphere { radius },
            height: size,
            width: size,
        }
    }

    /// Camera-plane coordinates of a pixel: `x` grows to the right, `y` grows
    /// upward, origin at pixel `(H / 2, W / 2)`.
    pub fn pixel_coords(&self, row: usize, col: usize) -> (f64, f64) {
        let x = col as f64 - (self.width / 2) as f64;
        let y = (self.height / 2) as f64 - row as f64;
        (x, y)
    }

    fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Precondition(format!(
                "surface must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        match self.kind {
            SurfaceKind::Sphere { radius } if !(radius > 0.0) => {
                Err(Error::BadParams(format!("sphere radius must be positive, got {radius}")))
            }
            SurfaceKind::SinusoidalBumps { frequency, amplitude }
            | SurfaceKind::WrinkleField { frequency, amplitude }
                if !(frequency.abs() > 0.0) || !amplitude.is_finite() =>
            {
                Err(Error::BadParams(format!(
                    "height field needs a non-zero frequency and finite amplitude, got f={frequency}, a={amplitude}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Height of the surface above the image plane at camera-plane point
    /// `(x, y)`, or `None` outside the object.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        use std::f64::consts::TAU;
        match self.kind {
            SurfaceKind::Sphere { radius } => {
                let rr = radius * radius - x * x - y * y;
                (rr > 0.0).then(|| rr.sqrt())
            }
            SurfaceKind::SinusoidalBumps {
                amplitude,
                frequency,
            } => Some(amplitude * (TAU * frequency * x).sin() * (TAU * frequency * y).sin()),
            SurfaceKind::WrinkleField {
                amplitude,
                frequency,
            } => Some(
                wrinkle_terms(amplitude, frequency)
                    .map(|(a, f, d, phase)| a * (TAU * f * (d[0] * x + d[1] * y) + phase).sin())
                    .sum(),
            ),
            SurfaceKind::Plane => Some(0.0),
        }
    }

    /// Analytic `(dh/dx, dh/dy)`; `None` outside the object.
    fn height_gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        use std::f64::consts::TAU;
        match self.kind {
            SurfaceKind::Sphere { .. } => {
                let h = self.height_at(x, y)?;
                Some((-x / h, -y / h))
            }
            SurfaceKind::SinusoidalBumps {
                amplitude,
                frequency,
            } => {
                let w = TAU * frequency;
                Some((
                    amplitude * w * (w * x).cos() * (w * y).sin(),
                    amplitude * w * (w * x).sin() * (w * y).cos(),
                ))
            }
            SurfaceKind::WrinkleField {
                amplitude,
                frequency,
            } => {
                let (mut gx, mut gy) = (0.0, 0.0);
                for (a, f, d, phase) in wrinkle_terms(amplitude, frequency) {
                    let c = a * TAU * f * (TAU * f * (d[0] * x + d[1] * y) + phase).cos();
                    gx += c * d[0];
                    gy += c * d[1];
                }
                Some((gx, gy))
            }
            SurfaceKind::Plane => Some((0.0, 0.0)),
        }
    }
}

fn wrinkle_terms(amplitude: f64, frequency: f64) -> impl Iterator<Item = (f64, f64, [f64; 2], f64)> {
    (1..=3).map(move |k| {
        let k = k as f64;
        let angle = 0.3 + k * std::f64::consts::FRAC_PI_3;
        (amplitude / k, frequency * k, [angle.cos(), angle.sin()], k)
    })
}

/// Ground-truth normals and foreground mask of an analytic surface.
pub fn make_surface(spec: &SurfaceSpec) -> Result<(NormalMap, Mask)> {
    spec.validate()?;
    let mut normals = Vec::with_capacity(spec.height * spec.width);
    let mut valid = Vec::with_capacity(spec.height * spec.width);
    for row in 0..spec.height {
        for col in 0..spec.width {
            let (x, y) = spec.pixel_coords(row, col);
            match spec.height_gradient(x, y) {
                Some((gx, gy)) => {
                    let n = [-gx, -gy, 1.0];
                    let len = norm3(&n);
                    normals.push([n[0] / len, n[1] / len, n[2] / len]);
                    valid.push(true);
                }
                None => {
                    normals.push([0.0; 3]);
                    valid.push(false);
                }
            }
        }
    }
    Ok((
        NormalMap::new(spec.height, spec.width, normals)?,
        Mask::new(spec.height, spec.width, valid)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reflectance {
    Lambertian,
    BlinnPhong,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Albedo {
    Uniform([f64; 3]),
    /// One RGB value per pixel, row-major.
    PerPixel(Vec<[f64; 3]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrdfSpec {
    pub albedo: Albedo,
    pub specular_strength: f64,
    pub shininess: f64,
    pub model: Reflectance,
}

impl BrdfSpec {
    pub fn lambertian(albedo: f64) -> Self {
        Self {
            albedo: Albedo::Uniform([albedo; 3]),
            specular_strength: 0.0,
            shininess: 1.0,
            model: Reflectance::Lambertian,
        }
    }

    pub fn blinn_phong(albedo: f64, specular_strength: f64, shininess: f64) -> Self {
        Self {
            albedo: Albedo::Uniform([albedo; 3]),
            specular_strength,
            shininess,
            model: Reflectance::BlinnPhong,
        }
    }

    fn validate(&self, pixels: usize) -> Result<()> {
        let in_range = |a: &[f64; 3]| a.iter().all(|&v| v > 0.0 && v <= 1.0);
        match &self.albedo {
            Albedo::Uniform(a) if !in_range(a) => {
                return Err(Error::BadParams(format!("albedo {a:?} outside (0, 1]")))
            }
            Albedo::PerPixel(values) => {
                if values.len() != pixels {
                    return Err(Error::ShapeMismatch(format!(
                        "albedo map has {} entries for {pixels} pixels",
                        values.len()
                    )));
                }
                if !values.iter().all(in_range) {
                    return Err(Error::BadParams("albedo map outside (0, 1]".into()));
                }
            }
            _ => {}
        }
        if self.model == Reflectance::BlinnPhong
            && (!(self.specular_strength >= 0.0) || !(self.shininess >= 1.0))
        {
            return Err(Error::BadParams(format!(
                "Blinn-Phong needs k_s >= 0 and shininess >= 1, got {} and {}",
                self.specular_strength, self.shininess
            )));
        }
        Ok(())
    }

    fn albedo_at(&self, pixel: usize) -> [f64; 3] {
        match &self.albedo {
            Albedo::Uniform(a) => *a,
            Albedo::PerPixel(values) => values[pixel],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub gaussian_sigma: f64,
    /// Fraction of observations replaced by a black (shadow) or saturated value.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            gaussian_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            gaussian_sigma: sigma,
            outlier_fraction: 0.0,
            seed,
        }
    }

    fn is_off(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.outlier_fraction == 0.0
    }

    fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0) || !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::BadParams(format!(
                "noise needs sigma >= 0 and outlier fraction in [0, 1), got {} and {}",
                self.gaussian_sigma, self.outlier_fraction
            )));
        }
        Ok(())
    }
}

/// Intensity a saturated outlier takes.
const SATURATION: f64 = 1.0;

/// Shading of one surface point under one light, before light intensity and noise.
pub fn shade(normal: &[f64; 3], light: &[f64; 3], albedo: f64, brdf: &BrdfSpec) -> f64 {
    let ndl = dot3(normal, light);
    if ndl <= 0.0 {
        return 0.0;
    }
    let mut value = albedo * ndl;
    if brdf.model == Reflectance::BlinnPhong && brdf.specular_strength > 0.0 {
        let half = [light[0] + VIEW[0], light[1] + VIEW[1], light[2] + VIEW[2]];
        let len = norm3(&half);
        if len > 0.0 {
            let ndh = dot3(normal, &[half[0] / len, half[1] / len, half[2] / len]).max(0.0);
            value += brdf.specular_strength * ndh.powf(brdf.shininess);
        }
    }
    value
}

/// Renders one image per light. Pixels outside the mask stay black.
pub fn render(
    normals: &NormalMap,
    mask: &Mask,
    lights: &LightSet,
    brdf: &BrdfSpec,
    noise: &NoiseSpec,
) -> Result<ImageStack> {
    let (height, width) = (normals.height(), normals.width());
    mask.ensure_dims(height, width, "normal map")?;
    brdf.validate(height * width)?;
    noise.validate()?;
    if lights.is_empty() {
        return Err(Error::Precondition("render needs at least one light".into()));
    }
    let mut stack = ImageStack::zeros(lights.len(), height, width);
    validate_pair(&stack, lights)?;

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let gaussian = Normal::new(0.0, noise.gaussian_sigma.max(0.0)).map_err(|e| Error::BadParams(e.to_string()))?;
    let pixels = height * width;
    let mut data = vec![0.0; lights.len() * pixels * 3];
    for (j, (dir, intensity)) in lights.directions().iter().zip(lights.intensities()).enumerate() {
        for (p, (n, &valid)) in normals.normals().iter().zip(mask.valid()).enumerate() {
            if !valid {
                continue;
            }
            let albedo = brdf.albedo_at(p);
            for c in 0..3 {
                let mut value = shade(n, dir, albedo[c], brdf) * intensity[c];
                if !noise.is_off() {
                    if noise.gaussian_sigma > 0.0 {
                        value += gaussian.sample(&mut rng);
                    }
                    if noise.outlier_fraction > 0.0 && rng.random::<f64>() < noise.outlier_fraction {
                        value = if rng.random::<bool>() { 0.0 } else { SATURATION };
                    }
                }
                data[(j * pixels + p) * 3 + c] = value.max(0.0);
            }
        }
    }
    stack = ImageStack::new(lights.len(), height, width, data)?;
    Ok(stack)
}

/// Light directions drawn uniformly from the spherical cap within
/// [`LIGHT_CAP_DEGREES`] of the view axis.
pub fn sample_lights(count: usize, seed: u64) -> LightSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_z = LIGHT_CAP_DEGREES.to_radians().cos();
    let directions = (0..count)
        .map(|_| {
            let z: f64 = rng.random_range(min_z..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let d = [r * phi.cos(), r * phi.sin(), z];
            let len = norm3(&d);
            [d[0] / len, d[1] / len, d[2] / len]
        })
        .collect();
    LightSet::new(directions)
}

/// Rounds a stack to the 16-bit grid the dataset writer stores, saturating at 1.
pub fn quantize_u16(stack: &ImageStack) -> ImageStack {
    let data = stack
        .data()
        .iter()
        .map(|&v| f64::from(dataset::encode_u16(v)) / 65535.0)
        .collect();
    ImageStack::new(stack.count(), stack.height(), stack.width(), data).expect("quantized stack is valid")
}

/// Objects written by [`generate_dataset`], as a reader will see them.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub objects: Vec<DatasetObject>,
}

fn object_seed(seed: u64, index: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(salt)
}

/// Renders every surface under its own seeded light set and writes one
/// directory per object under `out_dir`.
pub fn generate_dataset(
    surfaces: &[SurfaceSpec],
    lights_per_object: usize,
    brdf: &BrdfSpec,
    noise: &NoiseSpec,
    out_dir: &Path,
) -> Result<Manifest> {
    if lights_per_object < 3 {
        return Err(Error::Precondition(format!(
            "need at least 3 lights per object, got {lights_per_object}"
        )));
    }
    let mut objects = Vec::with_capacity(surfaces.len());
    for (index, surface) in surfaces.iter().enumerate() {
        let (normals, mask) = make_surface(surface)?;
        let lights = sample_lights(lights_per_object, object_seed(noise.seed, index, 1));
        let object_noise = NoiseSpec {
            seed: object_seed(noise.seed, index, 2),
            ..*noise
        };
        let stack = quantize_u16(&render(&normals, &mask, &lights, brdf, &object_noise)?);
        let object = DatasetObject {
            name: format!("{index:02}_{}", surface.kind.name()),
            stack,
            lights,
            mask,
            gt: Some(normals),
        };
        dataset::write_object(&out_dir.join(&object.name), &object)?;
        objects.push(object);
    }
    Ok(Manifest {
        root: out_dir.to_path_buf(),
        objects,
    })
}
