//! Layer wiring and weight initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{FusionMode, NetConfig};
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};

pub(crate) const LEAKY_SLOPE: f32 = 0.1;
pub(crate) const ATTENTION_REDUCTION: usize = 8;
pub(crate) const SPATIAL_KERNEL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    pad: usize,
    transpose: bool,
}

impl Conv {
    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        if self.transpose {
            g.conv_transpose2d(x, w, b, self.stride, self.pad)
        } else {
            g.conv2d(x, w, b, self.stride, self.pad)
        }
    }

    fn apply_leaky(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let y = self.apply(g, store, x);
        g.leaky_relu(y, LEAKY_SLOPE)
    }
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn uniform(&mut self, shape: [usize; 4], fan_in: usize, slope: f32) -> Tensor {
        let bound = (6.0 / ((1.0 + slope * slope) * fan_in as f32)).sqrt();
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| self.rng.random_range(-bound..bound)).collect())
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, bias: bool, slope: f32) -> Conv {
        let w = self.uniform([cout, cin, kernel, kernel], cin * kernel * kernel, slope);
        let w = self.store.add(format!("{name}.weight"), w);
        let b = bias.then(|| self.store.add(format!("{name}.bias"), Tensor::zeros([cout, 1, 1, 1])));
        Conv {
            w,
            b,
            stride,
            pad: kernel / 2,
            transpose: false,
        }
    }

    /// 4x4 transposed convolution doubling resolution.
    fn deconv(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let w = self.uniform([cin, cout, 4, 4], cin * 4, LEAKY_SLOPE);
        let w = self.store.add(format!("{name}.weight"), w);
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros([cout, 1, 1, 1]));
        Conv {
            w,
            b: Some(b),
            stride: 2,
            pad: 1,
            transpose: true,
        }
    }
}

/// Four 3x3 convolutions ending at half resolution.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Extractor {
    convs: [Conv; 4],
}

impl Extractor {
    fn build(b: &mut Builder, name: &str, cin: usize, channels: usize) -> Self {
        let half = channels / 2;
        Self {
            convs: [
                b.conv(&format!("{name}.conv0"), cin, half, 3, 1, true, LEAKY_SLOPE),
                b.conv(&format!("{name}.conv1"), half, channels, 3, 2, true, LEAKY_SLOPE),
                b.conv(&format!("{name}.conv2"), channels, channels, 3, 1, true, LEAKY_SLOPE),
                b.conv(&format!("{name}.conv3"), channels, channels, 3, 1, true, LEAKY_SLOPE),
            ],
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Var {
        for conv in &self.convs {
            x = conv.apply_leaky(g, store, x);
        }
        x
    }
}

/// Channel and spatial attention maps of one feature volume.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Attention {
    fc1: Conv,
    fc2: Conv,
    spatial: Conv,
}

impl Attention {
    fn build(b: &mut Builder, name: &str, channels: usize) -> Self {
        let hidden = (channels / ATTENTION_REDUCTION).max(1);
        Self {
            fc1: b.conv(&format!("{name}.channel_fc1"), channels, hidden, 1, 1, true, 0.0),
            fc2: b.conv(&format!("{name}.channel_fc2"), hidden, channels, 1, 1, true, 1.0),
            spatial: b.conv(&format!("{name}.spatial"), 2, 1, SPATIAL_KERNEL, 1, false, 1.0),
        }
    }

    fn mlp(&self, g: &mut Graph, store: &ParamStore, v: Var) -> Var {
        let h = self.fc1.apply(g, store, v);
        let h = g.leaky_relu(h, 0.0);
        self.fc2.apply(g, store, h)
    }

    /// `(Mc, Ms)` with shapes `(B, C, 1, 1)` and `(B, 1, H, W)`.
    fn maps(&self, g: &mut Graph, store: &ParamStore, f: Var) -> (Var, Var) {
        let avg = g.global_avg_pool(f);
        let max = g.global_max_pool(f);
        let a = self.mlp(g, store, avg);
        let m = self.mlp(g, store, max);
        let sum = g.add(a, m);
        let mc = g.sigmoid(sum);
        let mean = g.channel_mean(f);
        let cmax = g.channel_max(f);
        let pooled = g.concat_channels(&[mean, cmax]);
        let s = self.spatial.apply(g, store, pooled);
        (mc, g.sigmoid(s))
    }
}

/// Hourglass block: two downsamplings, two upsamplings with additive skips.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Hourglass {
    enc0: Conv,
    enc1: Conv,
    enc2: Conv,
    bottleneck: Conv,
    up1: Conv,
    up0: Conv,
    head: Conv,
}

impl Hourglass {
    fn build(b: &mut Builder, name: &str, c: usize) -> Self {
        Self {
            enc0: b.conv(&format!("{name}.enc0"), c, c, 3, 1, true, LEAKY_SLOPE),
            enc1: b.conv(&format!("{name}.enc1"), c, c, 3, 2, true, LEAKY_SLOPE),
            enc2: b.conv(&format!("{name}.enc2"), c, c, 3, 2, true, LEAKY_SLOPE),
            bottleneck: b.conv(&format!("{name}.bottleneck"), c, c, 3, 1, true, LEAKY_SLOPE),
            up1: b.deconv(&format!("{name}.up1"), c, c),
            up0: b.deconv(&format!("{name}.up0"), c, c),
            head: b.conv(&format!("{name}.head"), c, 3, 3, 1, true, 1.0),
        }
    }

    /// Returns `(features, normals)`.
    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> (Var, Var) {
        let e0 = self.enc0.apply_leaky(g, store, x);
        let e1 = self.enc1.apply_leaky(g, store, e0);
        let e2 = self.enc2.apply_leaky(g, store, e1);
        let bt = self.bottleneck.apply_leaky(g, store, e2);
        let u1 = self.up1.apply_leaky(g, store, bt);
        let d1 = g.add(u1, e1);
        let u0 = self.up0.apply_leaky(g, store, d1);
        let d0 = g.add(u0, e0);
        let raw = self.head.apply(g, store, d0);
        (d0, g.l2_normalize_channels(raw))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Regressor {
    pre: [Conv; 4],
    up: [Conv; 2],
    head: Conv,
    blocks: Vec<Hourglass>,
}

impl Regressor {
    fn build(b: &mut Builder, cin: usize, c: usize, blocks: usize) -> Self {
        let half = c / 2;
        Self {
            pre: [
                b.conv("regressor.conv0", cin, 2 * c, 3, 1, true, LEAKY_SLOPE),
                b.conv("regressor.conv1", 2 * c, c, 3, 2, true, LEAKY_SLOPE),
                b.conv("regressor.conv2", c, c, 3, 1, true, LEAKY_SLOPE),
                b.conv("regressor.conv3", c, half, 3, 1, true, LEAKY_SLOPE),
            ],
            up: [b.deconv("regressor.up0", half, half), b.deconv("regressor.up1", half, half)],
            head: b.conv("regressor.head", half, 3, 3, 1, true, 1.0),
            blocks: (0..blocks).map(|k| Hourglass::build(b, &format!("hourglass{k}"), half)).collect(),
        }
    }

    /// `[n1, n2, n3]`; missing hourglass levels repeat the last available one.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> [Var; 3] {
        for conv in self.pre.iter().chain(&self.up) {
            x = conv.apply_leaky(g, store, x);
        }
        let raw = self.head.apply(g, store, x);
        let n1 = g.l2_normalize_channels(raw);
        let mut outputs = vec![n1];
        for block in &self.blocks {
            let (features, normals) = block.apply(g, store, x);
            x = features;
            outputs.push(normals);
        }
        let last = outputs.len() - 1;
        let n3 = outputs[last];
        let n2 = match self.blocks.len() {
            0 => n1,
            1 => n3,
            _ => outputs[last - 1],
        };
        [n1, n2, n3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Fusion {
    mode: FusionMode,
    gradient: Option<Attention>,
    image: Option<Attention>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layers {
    pub image: Extractor,
    pub gradient: Option<Extractor>,
    pub fusion: Option<Fusion>,
    pub regressor: Regressor,
}

impl Layers {
    pub fn build(config: &NetConfig) -> (ParamStore, Self) {
        let mut b = Builder {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let c = config.base_channels;
        let image = Extractor::build(&mut b, "image_extractor", config.image_input_channels(), c);
        let gradient = config
            .use_gradient_branch
            .then(|| Extractor::build(&mut b, "gradient_extractor", config.gradient_input_channels(), c));
        let fusion = config.effective_fusion().map(|mode| {
            let attentive = mode != FusionMode::ConcatOnly;
            Fusion {
                mode,
                gradient: attentive.then(|| Attention::build(&mut b, "fusion.gradient_attention", c)),
                image: attentive.then(|| Attention::build(&mut b, "fusion.image_attention", c)),
            }
        });
        let regressor = Regressor::build(&mut b, config.aggregate_channels(), c, config.hourglass_blocks);
        (
            b.store,
            Self {
                image,
                gradient,
                fusion,
                regressor,
            },
        )
    }

    /// `concat(Fg', Fi')`; `unit` replaces every attention map by one.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, fg: Var, fi: Var, unit: bool) -> Var {
        let fusion = self.fusion.as_ref().expect("fusion requires the gradient branch");
        let (att_g, att_i) = match (&fusion.gradient, &fusion.image) {
            (Some(a), Some(b)) => (a, b),
            _ => return g.concat_channels(&[fg, fi]),
        };
        // cross mode multiplies each branch's attention into the other branch
        let (target_g, target_i) = match fusion.mode {
            FusionMode::CrossAttention => (fi, fg),
            _ => (fg, fi),
        };
        if unit {
            return g.concat_channels(&[target_g, target_i]);
        }
        let (mc_g, ms_g) = att_g.maps(g, store, fg);
        let (mc_i, ms_i) = att_i.maps(g, store, fi);
        let a = g.mul_channel(target_g, mc_g);
        let fg_prime = g.mul_spatial(a, ms_g);
        let b = g.mul_channel(target_i, mc_i);
        let fi_prime = g.mul_spatial(b, ms_i);
        g.concat_channels(&[fg_prime, fi_prime])
    }
}
