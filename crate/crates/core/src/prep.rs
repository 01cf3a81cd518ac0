//! Network input preparation: observation normalization across images,
//! light-direction embedding and the simplified gradient-magnitude map.

use crate::domain::{ImageStack, LightSet};
use crate::error::{Error, Result};

/// Denominators below this produce all-zero normalized observations.
pub const ZERO_GUARD: f64 = 1e-12;

/// Observations divided, per pixel and channel, by their L2 norm across images.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedStack(ImageStack);

impl NormalizedStack {
    pub fn stack(&self) -> &ImageStack {
        &self.0
    }

    pub fn image(&self, j: usize) -> &[f64] {
        self.0.image(j)
    }

    pub fn count(&self) -> usize {
        self.0.count()
    }

    pub fn into_inner(self) -> ImageStack {
        self.0
    }
}

pub fn normalize_stack(stack: &ImageStack) -> NormalizedStack {
    let (n, plane) = (stack.count(), stack.height() * stack.width() * 3);
    let src = stack.data();
    let mut out = vec![0.0; src.len()];
    for pos in 0..plane {
        let sum_sq: f64 = (0..n).map(|j| src[j * plane + pos] * src[j * plane + pos]).sum();
        let denom = sum_sq.sqrt();
        if denom < ZERO_GUARD {
            continue;
        }
        for j in 0..n {
            out[j * plane + pos] = src[j * plane + pos] / denom;
        }
    }
    NormalizedStack(
        ImageStack::new(n, stack.height(), stack.width(), out).expect("normalized stack keeps shape"),
    )
}

/// Divides every observation by its light's RGB intensity.
pub fn divide_by_intensities(stack: &ImageStack, lights: &LightSet) -> Result<ImageStack> {
    if stack.count() != lights.len() {
        return Err(Error::CountMismatch {
            images: stack.count(),
            lights: lights.len(),
        });
    }
    let plane = stack.height() * stack.width() * 3;
    let data = stack
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v / lights.intensities()[i / plane][i % 3])
        .collect();
    ImageStack::new(stack.count(), stack.height(), stack.width(), data)
}

/// Light directions tiled over the image plane, `(N, H, W, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightMaps {
    count: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LightMaps {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, j: usize) -> &[f64] {
        let len = self.height * self.width * 3;
        &self.data[j * len..(j + 1) * len]
    }
}

pub fn embed_lights(lights: &LightSet, height: usize, width: usize) -> LightMaps {
    let mut data = Vec::with_capacity(lights.len() * height * width * 3);
    for d in lights.directions() {
        for _ in 0..height * width {
            data.extend_from_slice(d);
        }
    }
    LightMaps {
        count: lights.len(),
        height,
        width,
        data,
    }
}

/// Per-channel gradient magnitude `|dx| + |dy|`, `(H, W, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GradientMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * 3 + channel]
    }
}

/// Central-difference magnitude with replicated borders, summed over the two
/// axes as absolute values. Generic over the channel count so normal maps
/// reuse it.
pub(crate) fn central_abs_gradient<const C: usize>(
    values: &[[f64; C]],
    height: usize,
    width: usize,
) -> Vec<[f64; C]> {
    let mut out = vec![[0.0; C]; height * width];
    for row in 0..height {
        let up = row.saturating_sub(1);
        let down = (row + 1).min(height - 1);
        for col in 0..width {
            let left = col.saturating_sub(1);
            let right = (col + 1).min(width - 1);
            let (r, l) = (&values[row * width + right], &values[row * width + left]);
            let (d, u) = (&values[down * width + col], &values[up * width + col]);
            let o = &mut out[row * width + col];
            for c in 0..C {
                o[c] = ((r[c] - l[c]) / 2.0).abs() + ((d[c] - u[c]) / 2.0).abs();
            }
        }
    }
    out
}

/// Gradient map of one `(H, W, 3)` image.
pub fn gradient_map(image: &[f64], height: usize, width: usize) -> Result<GradientMap> {
    if height < 2 || width < 2 {
        return Err(Error::Precondition(format!(
            "gradient map needs at least 2x2 pixels, got {height}x{width}"
        )));
    }
    if image.len() != height * width * 3 {
        return Err(Error::ShapeMismatch(format!(
            "image has {} values, expected {}",
            image.len(),
            height * width * 3
        )));
    }
    let pixels: Vec<[f64; 3]> = image.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
    let data = central_abs_gradient(&pixels, height, width)
        .into_iter()
        .flatten()
        .collect();
    Ok(GradientMap {
        height,
        width,
        data,
    })
}

/// One gradient map per normalized image.
pub fn gradient_maps(stack: &NormalizedStack) -> Result<Vec<GradientMap>> {
    let (h, w) = (stack.stack().height(), stack.stack().width());
    (0..stack.count()).map(|j| gradient_map(stack.image(j), h, w)).collect()
}
