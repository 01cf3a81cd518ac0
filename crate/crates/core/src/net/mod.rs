//! Dual-branch photometric stereo network: shared-weight image and gradient
//! extractors, attention fusion, max-pool aggregation and an hourglass
//! normal regressor with three supervised outputs.

mod checkpoint;
mod config;
mod layers;

pub use config::{FusionMode, ImageBranchInput, NetConfig};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::domain::{validate_pair, ImageStack, LightSet, Mask, NormalMap};
use crate::error::{Error, Result};
use crate::prep::{divide_by_intensities, gradient_map, normalize_stack};

use layers::Layers;

/// Spatial dims the regressor can restore exactly.
pub const SIZE_MULTIPLE: usize = 4;

/// Soft cap on activations held per forward chunk.
const CHUNK_BUDGET: usize = 1 << 24;

/// Dense `(H, W, C)` feature array.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "feature volume {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut t = Tensor::zeros([1, c, h, w]);
        for p in 0..h * w {
            for ch in 0..c {
                t.data[ch * h * w + p] = self.data[p * c + ch];
            }
        }
        t
    }

    fn from_tensor(t: &Tensor, item: usize) -> Self {
        let (c, h, w) = (t.channels(), t.height(), t.width());
        let src = t.item(item);
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                data[p * c + ch] = src[ch * h * w + p];
            }
        }
        Self {
            height: h,
            width: w,
            channels: c,
            data,
        }
    }

    fn same_dims(&self, other: &FeatureVolume, what: &str) -> Result<()> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }
}

/// The regressor's three normal maps, coarse to fine.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelOutput {
    pub n1: NormalMap,
    pub n2: NormalMap,
    pub n3: NormalMap,
}

impl MultiLevelOutput {
    pub fn levels(&self) -> [&NormalMap; 3] {
        [&self.n1, &self.n2, &self.n3]
    }

    fn from_tensors(levels: [&Tensor; 3], item: usize) -> Result<Self> {
        let [n1, n2, n3] = levels.map(|t| normal_map_from_tensor(t, item));
        Ok(Self {
            n1: n1?,
            n2: n2?,
            n3: n3?,
        })
    }

    fn masked(mut self, mask: &Mask) -> Self {
        for map in [&mut self.n1, &mut self.n2, &mut self.n3] {
            for (n, &valid) in map.normals_mut().iter_mut().zip(mask.valid()) {
                if !valid {
                    *n = [0.0; 3];
                }
            }
        }
        self
    }
}

pub(crate) fn normal_map_from_tensor(t: &Tensor, item: usize) -> Result<NormalMap> {
    let (h, w) = (t.height(), t.width());
    let plane = h * w;
    let src = t.item(item);
    let normals = (0..plane)
        .map(|p| [src[p] as f64, src[plane + p] as f64, src[2 * plane + p] as f64])
        .collect();
    NormalMap::new(h, w, normals)
}

/// Per-image network inputs, batched along the first axis.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    pub image: Tensor,
    pub gradient: Option<Tensor>,
}

impl Encoded {
    /// Stacks encodings along the batch axis.
    pub fn concat(parts: &[Encoded]) -> Self {
        let stack = |ts: Vec<&Tensor>| {
            let [_, c, h, w] = ts[0].shape;
            let batch = ts.iter().map(|t| t.batch()).sum();
            let data = ts.iter().flat_map(|t| t.data.iter().copied()).collect();
            Tensor::from_vec([batch, c, h, w], data)
        };
        Self {
            image: stack(parts.iter().map(|p| &p.image).collect()),
            gradient: parts[0]
                .gradient
                .as_ref()
                .map(|_| stack(parts.iter().map(|p| p.gradient.as_ref().expect("uniform encodings")).collect())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: NetConfig,
    params: ParamStore,
    layers: Layers,
}

impl Model {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (params, layers) = Layers::build(&config);
        Ok(Self { config, params, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn parameter_names(&self) -> &[String] {
        self.params.names()
    }

    /// Shape `(d0, d1, d2, d3)` and values of a named parameter.
    pub fn parameter(&self, name: &str) -> Option<([usize; 4], &[f32])> {
        let t = self.params.get(self.params.find(name)?);
        Some((t.shape, &t.data))
    }

    pub fn set_parameter(&mut self, name: &str, values: &[f32]) -> Result<()> {
        let id = self
            .params
            .find(name)
            .ok_or_else(|| Error::BadParams(format!("no parameter named {name}")))?;
        let t = &mut self.params.values_mut()[id.0];
        if t.data.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {name} holds {} values, got {}",
                t.data.len(),
                values.len()
            )));
        }
        t.data.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_channels(&self, got: usize, expected: usize, what: &str) -> Result<()> {
        if got != expected {
            return Err(Error::ShapeMismatch(format!("{what} expects {expected} channels, got {got}")));
        }
        Ok(())
    }

    /// Image-branch features at half resolution.
    pub fn extract_features(&self, input: &FeatureVolume) -> Result<FeatureVolume> {
        self.check_channels(input.channels(), self.config.image_input_channels(), "image extractor")?;
        let mut g = Graph::new();
        let x = g.input(input.to_tensor());
        let y = self.layers.image.apply(&mut g, &self.params, x);
        Ok(FeatureVolume::from_tensor(g.value(y), 0))
    }

    /// Gradient-branch features at half resolution.
    pub fn extract_gradient_features(&self, input: &FeatureVolume) -> Result<FeatureVolume> {
        let branch = self.layers.gradient.as_ref().ok_or_else(|| {
            Error::Precondition("this configuration has no gradient branch".into())
        })?;
        self.check_channels(input.channels(), self.config.gradient_input_channels(), "gradient extractor")?;
        let mut g = Graph::new();
        let x = g.input(input.to_tensor());
        let y = branch.apply(&mut g, &self.params, x);
        Ok(FeatureVolume::from_tensor(g.value(y), 0))
    }

    /// Fused volume `concat(Fg', Fi')` under the configured fusion mode.
    pub fn fuse_attention(&self, fg: &FeatureVolume, fi: &FeatureVolume) -> Result<FeatureVolume> {
        self.fuse_volumes(fg, fi, false)
    }

    /// Cross fusion with both attention maps forced to one.
    #[doc(hidden)]
    pub fn fuse_with_unit_attention(&self, fg: &FeatureVolume, fi: &FeatureVolume) -> Result<FeatureVolume> {
        self.fuse_volumes(fg, fi, true)
    }

    fn fuse_volumes(&self, fg: &FeatureVolume, fi: &FeatureVolume, unit: bool) -> Result<FeatureVolume> {
        if !self.config.use_gradient_branch {
            return Err(Error::Precondition("fusion needs the gradient branch".into()));
        }
        fg.same_dims(fi, "fusion inputs")?;
        self.check_channels(fg.channels(), self.config.base_channels, "fusion")?;
        let mut g = Graph::new();
        let (a, b) = (g.input(fg.to_tensor()), g.input(fi.to_tensor()));
        let psi = self.layers.fuse(&mut g, &self.params, a, b, unit);
        Ok(FeatureVolume::from_tensor(g.value(psi), 0))
    }

    /// Three normal maps at twice the resolution of `gamma`.
    pub fn regress(&self, gamma: &FeatureVolume) -> Result<MultiLevelOutput> {
        self.check_channels(gamma.channels(), self.config.aggregate_channels(), "regressor")?;
        let mut g = Graph::new();
        let x = g.input(gamma.to_tensor());
        let levels = self.layers.regressor.apply(&mut g, &self.params, x);
        MultiLevelOutput::from_tensors(levels.map(|v| g.value(v)), 0)
    }

    /// Encodes the images at `indices` of an already normalized stack.
    fn encode(&self, normalized: &ImageStack, lights: &LightSet, indices: &[usize]) -> Result<Encoded> {
        let (h, w) = (normalized.height(), normalized.width());
        let plane = h * w;
        let needs_gradient =
            self.config.use_gradient_branch || self.config.image_branch_input != ImageBranchInput::Normalized;
        let img_c = self.config.image_input_channels();
        let grad_c = self.config.gradient_input_channels();
        let mut image = Tensor::zeros([indices.len(), img_c, h, w]);
        let mut gradient = self
            .config
            .use_gradient_branch
            .then(|| Tensor::zeros([indices.len(), grad_c, h, w]));
        for (b, &j) in indices.iter().enumerate() {
            let img = normalized.image(j);
            let grad = if needs_gradient {
                Some(gradient_map(img, h, w)?)
            } else {
                None
            };
            let light = lights.directions()[j];
            let grad_data = grad.as_ref().map(|g| g.data());
            let sources: Vec<&[f64]> = match self.config.image_branch_input {
                ImageBranchInput::Normalized => vec![img],
                ImageBranchInput::NormalizedWithGradient => vec![img, grad_data.expect("gradient computed")],
                ImageBranchInput::GradientOnly => vec![grad_data.expect("gradient computed")],
            };
            write_item(&mut image, b, plane, &sources, light);
            if let Some(t) = gradient.as_mut() {
                let g = grad_data.expect("gradient computed");
                if self.config.gradient_branch_gets_lights {
                    write_item(t, b, plane, &[g], light);
                } else {
                    write_channels(t, b, plane, &[g]);
                }
            }
        }
        Ok(Encoded { image, gradient })
    }

    /// Normalizes and encodes every image of a sample.
    pub(crate) fn encode_sample(&self, stack: &ImageStack, lights: &LightSet) -> Result<Encoded> {
        let normalized = normalized_stack(stack, lights)?;
        let all: Vec<usize> = (0..stack.count()).collect();
        self.encode(&normalized, lights, &all)
    }

    /// Per-image features: `(psi, fg, fi)`, with `psi` and `fg` absent
    /// without a gradient branch.
    fn features(&self, g: &mut Graph, enc: &Encoded) -> (Option<Var>, Option<Var>, Var) {
        let x = g.input(enc.image.clone());
        let fi = self.layers.image.apply(g, &self.params, x);
        match (&self.layers.gradient, &enc.gradient) {
            (Some(branch), Some(grad)) => {
                let xg = g.input(grad.clone());
                let fg = branch.apply(g, &self.params, xg);
                let psi = self.layers.fuse(g, &self.params, fg, fi, false);
                (Some(psi), Some(fg), fi)
            }
            _ => (None, None, fi),
        }
    }

    /// Full training-time graph: `group` consecutive images form one sample.
    pub(crate) fn forward_graph(&self, g: &mut Graph, enc: &Encoded, group: usize) -> [Var; 3] {
        let (psi, fg, fi) = self.features(g, enc);
        let gamma = match (psi, fg) {
            (Some(psi), Some(fg)) => {
                let parts = [g.group_max(psi, group), g.group_max(fg, group), g.group_max(fi, group)];
                g.concat_channels(&parts)
            }
            _ => g.group_max(fi, group),
        };
        self.layers.regressor.apply(g, &self.params, gamma)
    }

    /// Normal maps for one object. Images are processed in chunks whose
    /// features are folded into running maxima, so memory does not grow
    /// with the image count.
    pub fn forward(&self, stack: &ImageStack, lights: &LightSet, mask: &Mask) -> Result<MultiLevelOutput> {
        validate_pair(stack, lights)?;
        mask.ensure_dims(stack.height(), stack.width(), "image stack")?;
        let (h, w) = (stack.height(), stack.width());
        let padded = pad_to_multiple(stack);
        let normalized = normalized_stack(&padded, lights)?;
        let (ph, pw) = (padded.height(), padded.width());
        let per_image = ph * pw * self.config.base_channels * 4;
        let chunk = (CHUNK_BUDGET / per_image.max(1)).clamp(1, 16);

        let mut running: Vec<Option<Tensor>> = vec![None, None, None];
        let indices: Vec<usize> = (0..stack.count()).collect();
        for part in indices.chunks(chunk) {
            let enc = self.encode(&normalized, lights, part)?;
            let mut g = Graph::new();
            let (psi, fg, fi) = self.features(&mut g, &enc);
            for (slot, v) in running.iter_mut().zip([psi, fg, Some(fi)]) {
                let Some(v) = v else { continue };
                let m = g.group_max(v, part.len());
                let m = g.value(m);
                match slot {
                    None => *slot = Some(m.clone()),
                    Some(acc) => {
                        for (a, &b) in acc.data.iter_mut().zip(&m.data) {
                            if b > *a {
                                *a = b;
                            }
                        }
                    }
                }
            }
        }
        let parts: Vec<Tensor> = running.into_iter().flatten().collect();
        let gamma = concat_tensors(&parts);
        let mut g = Graph::new();
        let x = g.input(gamma);
        let levels = self.layers.regressor.apply(&mut g, &self.params, x);
        let out = MultiLevelOutput::from_tensors(levels.map(|v| g.value(v)), 0)?;
        let out = if (ph, pw) != (h, w) {
            MultiLevelOutput {
                n1: out.n1.crop(0, 0, h, w),
                n2: out.n2.crop(0, 0, h, w),
                n3: out.n3.crop(0, 0, h, w),
            }
        } else {
            out
        };
        Ok(out.masked(mask))
    }
}

/// Element-wise max over each list, concatenated as `(psi, fg, fi)`.
pub fn aggregate(psis: &[FeatureVolume], fgs: &[FeatureVolume], fis: &[FeatureVolume]) -> Result<FeatureVolume> {
    if psis.is_empty() || fgs.is_empty() || fis.is_empty() {
        return Err(Error::EmptyList);
    }
    if psis.len() != fgs.len() || fgs.len() != fis.len() {
        return Err(Error::ShapeMismatch(format!(
            "list lengths {}, {}, {}",
            psis.len(),
            fgs.len(),
            fis.len()
        )));
    }
    let maxed: Vec<FeatureVolume> = [psis, fgs, fis]
        .into_iter()
        .map(|list| {
            let mut acc = list[0].clone();
            for v in &list[1..] {
                acc.same_dims(v, "aggregated volumes")?;
                for (a, &b) in acc.data.iter_mut().zip(&v.data) {
                    if b > *a {
                        *a = b;
                    }
                }
            }
            acc.data.iter_mut().for_each(|a| *a += 0.0);
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let (h, w) = (maxed[0].height, maxed[0].width);
    if maxed.iter().any(|m| (m.height, m.width) != (h, w)) {
        return Err(Error::ShapeMismatch("aggregated lists differ in spatial size".into()));
    }
    let channels: usize = maxed.iter().map(|m| m.channels).sum();
    let mut data = Vec::with_capacity(h * w * channels);
    for p in 0..h * w {
        for m in &maxed {
            data.extend_from_slice(&m.data[p * m.channels..(p + 1) * m.channels]);
        }
    }
    FeatureVolume::new(h, w, channels, data)
}

fn normalized_stack(stack: &ImageStack, lights: &LightSet) -> Result<ImageStack> {
    let stack = if lights.has_unit_intensities() {
        normalize_stack(stack)
    } else {
        normalize_stack(&divide_by_intensities(stack, lights)?)
    };
    Ok(stack.into_inner())
}

/// Zero-pads the bottom and right edges up to [`SIZE_MULTIPLE`].
fn pad_to_multiple(stack: &ImageStack) -> ImageStack {
    let round = |v: usize| v.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE;
    let (h, w) = (stack.height(), stack.width());
    let (ph, pw) = (round(h), round(w));
    if (ph, pw) == (h, w) {
        return stack.clone();
    }
    let images = (0..stack.count())
        .map(|j| {
            let src = stack.image(j);
            let mut out = vec![0.0; ph * pw * 3];
            for row in 0..h {
                out[row * pw * 3..(row * pw + w) * 3].copy_from_slice(&src[row * w * 3..(row + 1) * w * 3]);
            }
            out
        })
        .collect();
    ImageStack::from_images(ph, pw, images).expect("padding keeps values valid")
}

/// Writes HWC RGB sources followed by a constant light map into item `b`.
fn write_item(t: &mut Tensor, b: usize, plane: usize, sources: &[&[f64]], light: [f64; 3]) {
    write_channels(t, b, plane, sources);
    let base = sources.len() * 3;
    let item = t.item_len();
    for (k, &l) in light.iter().enumerate() {
        t.data[b * item + (base + k) * plane..][..plane].fill(l as f32);
    }
}

fn write_channels(t: &mut Tensor, b: usize, plane: usize, sources: &[&[f64]]) {
    let item = t.item_len();
    for (s, src) in sources.iter().enumerate() {
        for p in 0..plane {
            for c in 0..3 {
                t.data[b * item + (s * 3 + c) * plane + p] = src[p * 3 + c] as f32;
            }
        }
    }
}

fn concat_tensors(parts: &[Tensor]) -> Tensor {
    let [_, _, h, w] = parts[0].shape;
    let channels = parts.iter().map(|t| t.channels()).sum();
    let data = parts.iter().flat_map(|t| t.data.iter().copied()).collect();
    Tensor::from_vec([1, channels, h, w], data)
}
