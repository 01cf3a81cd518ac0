//! Angular-error evaluation of predicted normal maps.

use std::fmt::Write as _;
use std::path::Path;

use image::{GrayImage, Luma};

use crate::domain::{dot3, AngularErrorMap, Mask, NormalMap};
use crate::error::{Error, Result};

/// Error-map images saturate at this many degrees.
pub const ERROR_IMAGE_MAX_DEGREES: f64 = 90.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae_degrees: f64,
    pub err15: f64,
    pub err30: f64,
    pub error_map: AngularErrorMap,
    pub pixel_count: usize,
}

impl EvalReport {
    pub fn new(pred: &NormalMap, gt: &NormalMap, mask: &Mask) -> Result<Self> {
        let error_map = angular_error_map(pred, gt, mask)?;
        Ok(Self {
            mae_degrees: mae(&error_map, mask)?,
            err15: err_at(&error_map, mask, 15.0)?,
            err30: err_at(&error_map, mask, 30.0)?,
            pixel_count: mask.count(),
            error_map,
        })
    }

    /// Flat `key = value` record.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mae_degrees = {}", self.mae_degrees).unwrap();
        writeln!(out, "err15 = {}", self.err15).unwrap();
        writeln!(out, "err30 = {}", self.err30).unwrap();
        writeln!(out, "pixel_count = {}", self.pixel_count).unwrap();
        out
    }

    /// 8-bit grayscale rendering of the error map, 0..90 degrees onto 0..255.
    pub fn error_image(&self) -> GrayImage {
        let map = &self.error_map;
        GrayImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
            let deg = map.degrees()[y as usize * map.width() + x as usize];
            let v = if deg.is_finite() {
                (deg / ERROR_IMAGE_MAX_DEGREES * 255.0).clamp(0.0, 255.0).round() as u8
            } else {
                0
            };
            Luma([v])
        })
    }

    pub fn save_error_image(&self, path: &Path) -> Result<()> {
        self.error_image().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn angular_error_map(pred: &NormalMap, gt: &NormalMap, mask: &Mask) -> Result<AngularErrorMap> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    mask.ensure_dims(gt.height(), gt.width(), "normal map")?;
    mask.ensure_nonempty()?;
    let degrees = pred
        .normals()
        .iter()
        .zip(gt.normals())
        .zip(mask.valid())
        .map(|((p, g), &valid)| {
            if valid && p == g {
                // a unit vector's self dot product can round just below one
                0.0
            } else if valid {
                dot3(p, g).clamp(-1.0, 1.0).acos().to_degrees()
            } else {
                f64::NAN
            }
        })
        .collect();
    AngularErrorMap::new(gt.height(), gt.width(), degrees)
}

fn in_mask<'a>(map: &'a AngularErrorMap, mask: &'a Mask) -> Result<impl Iterator<Item = f64> + 'a> {
    mask.ensure_dims(map.height(), map.width(), "error map")?;
    mask.ensure_nonempty()?;
    Ok(map
        .degrees()
        .iter()
        .zip(mask.valid())
        .filter(|(_, &v)| v)
        .map(|(&d, _)| d))
}

pub fn mae(map: &AngularErrorMap, mask: &Mask) -> Result<f64> {
    let (sum, count) = in_mask(map, mask)?.fold((0.0f64, 0usize), |(s, c), d| (s + d, c + 1));
    Ok(sum / count as f64)
}

/// Fraction of in-mask pixels whose error is strictly below `threshold_degrees`.
pub fn err_at(map: &AngularErrorMap, mask: &Mask, threshold_degrees: f64) -> Result<f64> {
    if !(threshold_degrees > 0.0) {
        return Err(Error::Precondition(format!(
            "threshold must be positive, got {threshold_degrees}"
        )));
    }
    let (below, count) = in_mask(map, mask)?
        .fold((0usize, 0usize), |(b, c), d| (b + usize::from(d < threshold_degrees), c + 1));
    Ok(below as f64 / count as f64)
}
