//! Reader and writer for the per-object dataset directory layout:
//!
//! ```text
//! <object>/
//!   filenames.txt          one image filename per line; order defines light order
//!   light_directions.txt   N lines "lx ly lz"
//!   light_intensities.txt  optional, N lines "r g b"
//!   mask.png               8-bit grayscale, nonzero = valid
//!   normal_gt.txt          optional, H*W lines "nx ny nz", row-major from top-left
//!   <images>               8- or 16-bit RGB PNGs named in filenames.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb};
use rayon::prelude::*;

use crate::domain::{norm3, validate_pair, ImageStack, LightSet, Mask, NormalMap};
use crate::error::{Error, Result};

/// Image count of the DiLiGenT "bear" capture whose first 20 images are corrupted.
pub const BEAR_FULL_COUNT: usize = 96;
pub const BEAR_DROPPED: usize = 20;

/// Light rows this close to unit length are renormalized on load (text files
/// carry a limited number of digits).
const LIGHT_RENORMALIZE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetObject {
    pub name: String,
    pub stack: ImageStack,
    pub lights: LightSet,
    pub mask: Mask,
    pub gt: Option<NormalMap>,
}

impl DatasetObject {
    pub fn ground_truth(&self) -> Result<&NormalMap> {
        self.gt.as_ref().ok_or_else(|| Error::NoGroundTruth(self.name.clone()))
    }

    /// Keeps the images (and lights) at `indices`.
    pub fn select_images(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            stack: self.stack.select(indices),
            lights: self.lights.select(indices),
            mask: self.mask.clone(),
            gt: self.gt.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop the first 20 images of a 96-image "bear" object.
    pub bear_fix: bool,
    /// Decode on the calling thread only.
    pub deterministic: bool,
}

pub(crate) fn encode_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_triples(path: &Path, text: &str) -> std::result::Result<Vec<[f64; 3]>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let values: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: {t:?} is not a number", i + 1)))
                .collect::<std::result::Result<_, _>>()?;
            if values.len() != 3 {
                return Err(format!(
                    "line {} of {} has {} columns, expected 3",
                    i + 1,
                    path.display(),
                    values.len()
                ));
            }
            Ok([values[0], values[1], values[2]])
        })
        .collect()
}

fn read_light_file(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = read_text(path)?;
    parse_triples(path, &text).map_err(|reason| Error::BadLightFile {
        path: path.to_path_buf(),
        reason,
    })
}

fn format_triples(rows: &[[f64; 3]]) -> String {
    let mut out = String::with_capacity(rows.len() * 48);
    for r in rows {
        // `{}` prints the shortest representation that parses back bit-exactly
        out.push_str(&format!("{} {} {}\n", r[0], r[1], r[2]));
    }
    out
}

/// Decodes an 8- or 16-bit image into linear `[0, 1]` RGB values.
fn decode_image(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
        other => other
            .to_rgb32f()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v).max(0.0))
            .collect(),
    };
    Ok((h, w, data))
}

fn read_mask(path: &Path) -> Result<Mask> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Mask::new(h, w, img.into_raw().into_iter().map(|v| v != 0).collect())
}

fn read_normals(path: &Path, height: usize, width: usize) -> Result<NormalMap> {
    let text = read_text(path)?;
    let bad = |reason: String| Error::BadNormalFile {
        path: path.to_path_buf(),
        reason,
    };
    let normals = parse_triples(path, &text).map_err(bad)?;
    if normals.len() != height * width {
        return Err(bad(format!(
            "{} normals for a {height}x{width} image",
            normals.len()
        )));
    }
    NormalMap::new(height, width, normals)
}

/// Object name derived from its directory: DiLiGenT's `bearPNG` becomes `bear`.
fn object_name(dir: &Path) -> String {
    let raw = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "object".to_string());
    match raw.strip_suffix("PNG") {
        Some(stem) if !stem.is_empty() => stem.to_string(),
        _ => raw,
    }
}

fn is_object_dir(dir: &Path) -> bool {
    dir.join("filenames.txt").is_file()
}

/// Loads a single object directory.
pub fn load_object(dir: &Path, options: LoadOptions) -> Result<DatasetObject> {
    let name = object_name(dir);
    let filenames: Vec<String> = read_text(&dir.join("filenames.txt"))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let light_path = dir.join("light_directions.txt");
    let mut directions = read_light_file(&light_path)?;
    if directions.len() != filenames.len() {
        return Err(Error::BadLightFile {
            path: light_path,
            reason: format!(
                "{} light rows for {} images",
                directions.len(),
                filenames.len()
            ),
        });
    }
    for d in &mut directions {
        let n = norm3(d);
        if (n - 1.0).abs() > 1e-12 && (n - 1.0).abs() <= LIGHT_RENORMALIZE_TOLERANCE {
            *d = [d[0] / n, d[1] / n, d[2] / n];
        }
    }
    let intensity_path = dir.join("light_intensities.txt");
    let intensities = if intensity_path.is_file() {
        let rows = read_light_file(&intensity_path)?;
        if rows.len() != filenames.len() {
            return Err(Error::BadLightFile {
                path: intensity_path,
                reason: format!("{} intensity rows for {} images", rows.len(), filenames.len()),
            });
        }
        Some(rows)
    } else {
        None
    };

    let mask = read_mask(&dir.join("mask.png"))?;
    let decode = |f: &String| decode_image(&dir.join(f));
    let decoded: Vec<(usize, usize, Vec<f64>)> = if options.deterministic {
        filenames.iter().map(decode).collect::<Result<_>>()?
    } else {
        filenames.par_iter().map(decode).collect::<Result<_>>()?
    };
    let (height, width) = (mask.height(), mask.width());
    for ((h, w, _), f) in decoded.iter().zip(&filenames) {
        if (*h, *w) != (height, width) {
            return Err(Error::ShapeMismatch(format!(
                "image {f} is {h}x{w} but mask.png is {height}x{width}"
            )));
        }
    }
    let mut images: Vec<Vec<f64>> = decoded.into_iter().map(|(_, _, d)| d).collect();
    if let Some(rows) = &intensities {
        // light_intensities.txt is per-light RGB; observations are divided by it
        for (image, intensity) in images.iter_mut().zip(rows) {
            if intensity.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::BadLightFile {
                    path: dir.join("light_intensities.txt"),
                    reason: format!("non-positive intensity {intensity:?}"),
                });
            }
            for px in image.chunks_exact_mut(3) {
                for c in 0..3 {
                    px[c] /= intensity[c];
                }
            }
        }
    }
    let stack = ImageStack::from_images(height, width, images)?;
    let lights = LightSet::new(directions);

    let gt_path = ["normal_gt.txt", "Normal_gt.txt"]
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.is_file());
    let gt = match gt_path {
        Some(p) => Some(read_normals(&p, height, width)?),
        None => None,
    };

    let mut object = DatasetObject {
        name,
        stack,
        lights,
        mask,
        gt,
    };
    if options.bear_fix && object.name.eq_ignore_ascii_case("bear") && object.stack.count() == BEAR_FULL_COUNT {
        let keep: Vec<usize> = (BEAR_DROPPED..BEAR_FULL_COUNT).collect();
        object = object.select_images(&keep);
    }
    validate_pair(&object.stack, &object.lights)?;
    Ok(object)
}

/// Loads `root` itself when it is an object directory, otherwise every object
/// directory directly below it, sorted by name.
pub fn load_dataset(root: &Path, options: LoadOptions) -> Result<Vec<DatasetObject>> {
    if !root.exists() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    if is_object_dir(root) {
        return Ok(vec![load_object(root, options)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && is_object_dir(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingFile(root.join("filenames.txt")));
    }
    dirs.iter().map(|d| load_object(d, options)).collect()
}

/// Writes an object as 16-bit PNGs plus text metadata.
pub fn write_object(dir: &Path, object: &DatasetObject) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stack = &object.stack;
    let (height, width) = (stack.height(), stack.width());
    object.mask.ensure_dims(height, width, "image stack")?;

    let digits = stack.count().to_string().len().max(3);
    let names: Vec<String> = (0..stack.count())
        .map(|j| format!("{:0digits$}.png", j + 1))
        .collect();
    for (j, file) in names.iter().enumerate() {
        let raw: Vec<u16> = stack.image(j).iter().map(|&v| encode_u16(v)).collect();
        let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
            ImageBuffer::from_raw(width as u32, height as u32, raw).expect("buffer sized from stack");
        let path = dir.join(file);
        img.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    write_text(&dir.join("filenames.txt"), &(names.join("\n") + "\n"))?;
    write_text(
        &dir.join("light_directions.txt"),
        &format_triples(object.lights.directions()),
    )?;
    if !object.lights.has_unit_intensities() {
        write_text(
            &dir.join("light_intensities.txt"),
            &format_triples(object.lights.intensities()),
        )?;
    }
    let mask: GrayImage = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        Luma([if object.mask.is_valid(y as usize, x as usize) { 255 } else { 0 }])
    });
    let mask_path = dir.join("mask.png");
    mask.save(&mask_path).map_err(|source| Error::Image {
        path: mask_path,
        source,
    })?;
    if let Some(gt) = &object.gt {
        write_text(&dir.join("normal_gt.txt"), &format_triples(gt.normals()))?;
    }
    Ok(())
}
