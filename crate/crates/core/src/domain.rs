//! Shared photometric-stereo data types.
//!
//! Every array uses the `(N, H, W, 3)` layout with row-major pixel order.
//! Normals live in camera space: `x` to the right, `y` up, `z` toward the
//! viewer. Pixels outside the mask carry the `(0, 0, 0)` sentinel normal.

use crate::error::{Error, Result};

/// Tolerance on the L2 norm of a light direction.
pub const LIGHT_NORM_TOLERANCE: f64 = 1e-6;

/// Tolerance on the L2 norm of an in-mask normal.
pub const NORMAL_NORM_TOLERANCE: f64 = 1e-5;

/// Norm below which a normal is considered degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// `N` linear-intensity RGB observations of one object, stored `(N, H, W, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    count: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageStack {
    pub fn new(count: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if count == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image stack needs non-zero dims, got ({count}, {height}, {width})"
            )));
        }
        if data.len() != count * height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image stack ({count}, {height}, {width}, 3) needs {} values, got {}",
                count * height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image stack"));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::NegativeIntensity("image stack"));
        }
        Ok(Self {
            count,
            height,
            width,
            data,
        })
    }

    pub fn zeros(count: usize, height: usize, width: usize) -> Self {
        Self {
            count,
            height,
            width,
            data: vec![0.0; count * height * width * 3],
        }
    }

    /// Builds a stack from per-image `(H, W, 3)` buffers.
    pub fn from_images(height: usize, width: usize, images: Vec<Vec<f64>>) -> Result<Self> {
        let count = images.len();
        let mut data = Vec::with_capacity(count * height * width * 3);
        for (j, image) in images.into_iter().enumerate() {
            if image.len() != height * width * 3 {
                return Err(Error::ShapeMismatch(format!(
                    "image {j} has {} values, expected {}",
                    image.len(),
                    height * width * 3
                )));
            }
            data.extend(image);
        }
        Self::new(count, height, width, data)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn image_len(&self) -> usize {
        self.height * self.width * 3
    }

    /// The `(H, W, 3)` buffer of image `j`.
    pub fn image(&self, j: usize) -> &[f64] {
        let len = self.image_len();
        &self.data[j * len..(j + 1) * len]
    }

    pub fn get(&self, j: usize, row: usize, col: usize, channel: usize) -> f64 {
        self.data[((j * self.height + row) * self.width + col) * 3 + channel]
    }

    /// Keeps the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &j in indices {
            data.extend_from_slice(self.image(j));
        }
        Self {
            count: indices.len(),
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Spatial crop of every image.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        assert!(top + height <= self.height && left + width <= self.width);
        let mut data = Vec::with_capacity(self.count * height * width * 3);
        for j in 0..self.count {
            let image = self.image(j);
            for row in top..top + height {
                let start = (row * self.width + left) * 3;
                data.extend_from_slice(&image[start..start + width * 3]);
            }
        }
        Self {
            count: self.count,
            height,
            width,
            data,
        }
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.count,
            self.height,
            self.width,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Light directions and per-light RGB intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct LightSet {
    directions: Vec<[f64; 3]>,
    intensities: Vec<[f64; 3]>,
}

impl LightSet {
    /// Lights with unit intensity. Directions are stored as given; see [`validate_pair`].
    pub fn new(directions: Vec<[f64; 3]>) -> Self {
        let intensities = vec![[1.0; 3]; directions.len()];
        Self {
            directions,
            intensities,
        }
    }

    pub fn with_intensities(directions: Vec<[f64; 3]>, intensities: Vec<[f64; 3]>) -> Result<Self> {
        if directions.len() != intensities.len() {
            return Err(Error::CountMismatch {
                images: intensities.len(),
                lights: directions.len(),
            });
        }
        Ok(Self {
            directions,
            intensities,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    pub fn intensities(&self) -> &[[f64; 3]] {
        &self.intensities
    }

    pub fn has_unit_intensities(&self) -> bool {
        self.intensities.iter().all(|i| *i == [1.0; 3])
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            directions: indices.iter().map(|&j| self.directions[j]).collect(),
            intensities: indices.iter().map(|&j| self.intensities[j]).collect(),
        }
    }
}

/// Per-pixel normals, `(H, W, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    height: usize,
    width: usize,
    normals: Vec<[f64; 3]>,
}

impl NormalMap {
    pub fn new(height: usize, width: usize, normals: Vec<[f64; 3]>) -> Result<Self> {
        if normals.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "normal map {height}x{width} needs {} normals, got {}",
                height * width,
                normals.len()
            )));
        }
        Ok(Self {
            height,
            width,
            normals,
        })
    }

    pub fn filled(height: usize, width: usize, value: [f64; 3]) -> Self {
        Self {
            height,
            width,
            normals: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn normals_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.normals
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.normals[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, n: [f64; 3]) {
        self.normals[row * self.width + col] = n;
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut normals = Vec::with_capacity(height * width);
        for row in top..top + height {
            let start = row * self.width + left;
            normals.extend_from_slice(&self.normals[start..start + width]);
        }
        Self {
            height,
            width,
            normals,
        }
    }

    /// Checks that every in-mask normal has unit norm within [`NORMAL_NORM_TOLERANCE`].
    pub fn is_unit_in(&self, mask: &Mask) -> bool {
        self.normals
            .iter()
            .zip(mask.valid())
            .filter(|(_, &v)| v)
            .all(|(n, _)| (norm3(n) - 1.0).abs() <= NORMAL_NORM_TOLERANCE)
    }
}

/// Foreground pixels of an object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    valid: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask {height}x{width} needs {} entries, got {}",
                height * width,
                valid.len()
            )));
        }
        Ok(Self {
            height,
            width,
            valid,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            valid: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut valid = Vec::with_capacity(height * width);
        for row in top..top + height {
            let start = row * self.width + left;
            valid.extend_from_slice(&self.valid[start..start + width]);
        }
        Self {
            height,
            width,
            valid,
        }
    }

    pub(crate) fn ensure_dims(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::ShapeMismatch(format!(
                "mask is {}x{} but {what} is {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_nonempty(&self) -> Result<()> {
        if self.valid.iter().any(|&v| v) {
            Ok(())
        } else {
            Err(Error::EmptyMask)
        }
    }
}

/// Per-pixel angular error in degrees; `NaN` outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularErrorMap {
    height: usize,
    width: usize,
    degrees: Vec<f64>,
}

impl AngularErrorMap {
    pub fn new(height: usize, width: usize, degrees: Vec<f64>) -> Result<Self> {
        if degrees.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "error map {height}x{width} needs {} values, got {}",
                height * width,
                degrees.len()
            )));
        }
        Ok(Self {
            height,
            width,
            degrees,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Checks that a stack and a light set describe the same capture.
pub fn validate_pair(stack: &ImageStack, lights: &LightSet) -> Result<()> {
    if stack.count() != lights.len() {
        return Err(Error::CountMismatch {
            images: stack.count(),
            lights: lights.len(),
        });
    }
    for (index, (dir, intensity)) in lights
        .directions()
        .iter()
        .zip(lights.intensities())
        .enumerate()
    {
        if dir.iter().chain(intensity.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("light set"));
        }
        let norm = norm3(dir);
        if (norm - 1.0).abs() > LIGHT_NORM_TOLERANCE {
            return Err(Error::NonUnitLight { index, norm });
        }
        if intensity.iter().any(|&v| v <= 0.0) {
            return Err(Error::NonPositiveIntensity { index });
        }
    }
    if stack.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image stack"));
    }
    Ok(())
}

/// Rescales every in-mask normal to unit length and writes the `(0, 0, 0)`
/// sentinel outside the mask.
///
/// Normals already within a few ulps of unit length are left untouched, which
/// makes the operation bitwise idempotent.
pub fn renormalize(normals: &NormalMap, mask: &Mask) -> Result<NormalMap> {
    mask.ensure_dims(normals.height(), normals.width(), "normal map")?;
    let width = normals.width();
    let mut out = Vec::with_capacity(normals.normals().len());
    for (idx, (n, &valid)) in normals.normals().iter().zip(mask.valid()).enumerate() {
        if !valid {
            out.push([0.0; 3]);
            continue;
        }
        if n.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normal map"));
        }
        let norm = norm3(n);
        if norm < DEGENERATE_NORM {
            return Err(Error::DegenerateNormal {
                row: idx / width,
                col: idx % width,
            });
        }
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            out.push(*n);
        } else {
            out.push([n[0] / norm, n[1] / norm, n[2] / norm]);
        }
    }
    NormalMap::new(normals.height(), normals.width(), out)
}
