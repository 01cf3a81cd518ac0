//! Minimal reverse-mode differentiation over `(B, C, H, W)` f32 tensors.
//!
//! A [`Graph`] records every op as it runs; [`Graph::backward`] walks the
//! record in reverse and returns gradients for the parameters it touched.

mod adam;
pub(crate) mod kernels;

pub(crate) use adam::Adam;

use std::collections::HashMap;

use kernels::{col2im, gemm, gemm_strided, im2col, im2col_band, Window};

/// Upper bound on the unfolded column buffer used by a forward convolution.
const COLS_BUDGET: usize = 1 << 22;

const NORM_FLOOR: f32 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape {shape:?}");
        Self { shape, data }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn item(&self, b: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct ParamId(pub usize);

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|t| t.data.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Var(usize);

enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, win: Window },
    ConvTranspose { x: Var, w: Var, b: Option<Var>, win: Window },
    LeakyRelu { x: Var, slope: f32 },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    MulChannel { x: Var, s: Var },
    MulSpatial { x: Var, s: Var },
    GlobalAvg { x: Var },
    GlobalMax { x: Var, arg: Vec<usize> },
    ChannelMean { x: Var },
    ChannelMax { x: Var, arg: Vec<usize> },
    Concat { parts: Vec<Var> },
    GroupMax { x: Var, arg: Vec<usize> },
    L2Normalize { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients for every parameter in a [`ParamStore`]; `None` when untouched.
pub(crate) type ParamGrads = Vec<Option<Tensor>>;

#[derive(Default)]
pub(crate) struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn strict_argmax(values: impl Iterator<Item = (usize, f32)>) -> (usize, f32) {
    let mut best = (usize::MAX, f32::NEG_INFINITY);
    for (i, v) in values {
        if best.0 == usize::MAX || v > best.1 {
            best = (i, v);
        }
    }
    best
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a parameter; repeated requests share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let [batch, cin, h, wd] = xv.shape;
        let [cout, wcin, k, k2] = wv.shape;
        assert!(wcin == cin && k == k2, "conv weight {:?} vs input {:?}", wv.shape, xv.shape);
        let win = Window { kernel: k, stride, pad };
        let (ho, wo) = (win.out_len(h), win.out_len(wd));
        let rows = cin * k * k;
        let band = (COLS_BUDGET / (rows * wo)).clamp(1, ho);
        let mut cols = vec![0.0; rows * band * wo];
        let mut out = Tensor::zeros([batch, cout, ho, wo]);
        let n_out = out.item_len();
        for bi in 0..batch {
            let item = &mut out.data[bi * n_out..(bi + 1) * n_out];
            for start in (0..ho).step_by(band) {
                let end = (start + band).min(ho);
                let n = (end - start) * wo;
                im2col_band(xv.item(bi), cin, h, wd, win, start..end, &mut cols[..rows * n]);
                gemm_strided(cout, rows, n, &wv.data, false, &cols[..rows * n], false, &mut item[start * wo..], ho * wo, false);
            }
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, &self.value(b).data);
        }
        self.push(out, Op::Conv { x, w, b, win })
    }

    /// Transposed convolution with weights `(Cin, Cout, k, k)`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let [batch, cin, h, wd] = xv.shape;
        let [wcin, cout, k, k2] = wv.shape;
        assert!(wcin == cin && k == k2, "deconv weight {:?} vs input {:?}", wv.shape, xv.shape);
        let win = Window { kernel: k, stride, pad };
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (wd - 1) * stride + k - 2 * pad;
        let rows = cout * k * k;
        let mut cols = vec![0.0; rows * h * wd];
        let mut out = Tensor::zeros([batch, cout, ho, wo]);
        let n_out = out.item_len();
        for bi in 0..batch {
            gemm(rows, cin, h * wd, &wv.data, true, xv.item(bi), false, &mut cols, false);
            col2im(&cols, cout, ho, wo, win, &mut out.data[bi * n_out..(bi + 1) * n_out]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, &self.value(b).data);
        }
        self.push(out, Op::ConvTranspose { x, w, b, win })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        self.push(out, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape, self.value(b).shape, "add shapes");
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b })
    }

    /// `x * s` with `s` of shape `(B, C, 1, 1)`.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Var {
        let mut out = self.value(x).clone();
        let sv = self.value(s);
        assert_eq!(sv.shape, [out.batch(), out.channels(), 1, 1], "channel scale shape");
        let plane = out.plane();
        for (chunk, &f) in out.data.chunks_mut(plane).zip(&sv.data) {
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        self.push(out, Op::MulChannel { x, s })
    }

    /// `x * s` with `s` of shape `(B, 1, H, W)`.
    pub fn mul_spatial(&mut self, x: Var, s: Var) -> Var {
        let mut out = self.value(x).clone();
        let sv = self.value(s);
        let [b, c, h, w] = out.shape;
        assert_eq!(sv.shape, [b, 1, h, w], "spatial scale shape");
        let plane = h * w;
        for bi in 0..b {
            let scale = &sv.data[bi * plane..(bi + 1) * plane];
            for ci in 0..c {
                let chunk = &mut out.data[(bi * c + ci) * plane..][..plane];
                chunk.iter_mut().zip(scale).for_each(|(v, f)| *v *= f);
            }
        }
        self.push(out, Op::MulSpatial { x, s })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let plane = xv.plane();
        let data = xv.data.chunks(plane).map(|c| c.iter().sum::<f32>() / plane as f32).collect();
        let out = Tensor::from_vec([xv.batch(), xv.channels(), 1, 1], data);
        self.push(out, Op::GlobalAvg { x })
    }

    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let plane = xv.plane();
        let (arg, data): (Vec<usize>, Vec<f32>) = xv
            .data
            .chunks(plane)
            .enumerate()
            .map(|(i, c)| {
                let (j, v) = strict_argmax(c.iter().copied().enumerate());
                (i * plane + j, v)
            })
            .unzip();
        let out = Tensor::from_vec([xv.batch(), xv.channels(), 1, 1], data);
        self.push(out, Op::GlobalMax { x, arg })
    }

    /// Mean over channels, `(B, 1, H, W)`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [b, c, h, w] = xv.shape;
        let plane = h * w;
        let mut out = Tensor::zeros([b, 1, h, w]);
        for bi in 0..b {
            let dst = &mut out.data[bi * plane..(bi + 1) * plane];
            for ci in 0..c {
                let src = &xv.data[(bi * c + ci) * plane..][..plane];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d /= c as f32);
        }
        self.push(out, Op::ChannelMean { x })
    }

    /// Max over channels, `(B, 1, H, W)`.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [b, c, h, w] = xv.shape;
        let plane = h * w;
        let mut out = Tensor::zeros([b, 1, h, w]);
        let mut arg = vec![0; b * plane];
        for bi in 0..b {
            for p in 0..plane {
                let (ci, v) = strict_argmax((0..c).map(|ci| (ci, xv.data[(bi * c + ci) * plane + p])));
                out.data[bi * plane + p] = v;
                arg[bi * plane + p] = (bi * c + ci) * plane + p;
            }
        }
        self.push(out, Op::ChannelMax { x, arg })
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let first = self.value(parts[0]).shape;
        let (b, h, w) = (first[0], first[2], first[3]);
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape;
            assert!(s[0] == b && s[2] == h && s[3] == w, "concat shapes {first:?} vs {s:?}");
            channels += s[1];
        }
        let mut data = Vec::with_capacity(b * channels * h * w);
        for bi in 0..b {
            for &p in parts {
                data.extend_from_slice(self.value(p).item(bi));
            }
        }
        let out = Tensor::from_vec([b, channels, h, w], data);
        self.push(out, Op::Concat { parts: parts.to_vec() })
    }

    /// Element-wise max over consecutive runs of `group` batch items:
    /// `(G * group, C, H, W) -> (G, C, H, W)`.
    pub fn group_max(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert!(group > 0 && xv.batch().is_multiple_of(group), "group_max over {group} of {:?}", xv.shape);
        let groups = xv.batch() / group;
        let n = xv.item_len();
        let mut out = Tensor::zeros([groups, xv.channels(), xv.height(), xv.width()]);
        let mut arg = vec![0; groups * n];
        for g in 0..groups {
            for e in 0..n {
                let (j, v) = strict_argmax((0..group).map(|j| (j, xv.data[(g * group + j) * n + e])));
                // +0.0 folds -0.0 into +0.0 so ties of signed zeros cannot depend on order
                out.data[g * n + e] = v + 0.0;
                arg[g * n + e] = (g * group + j) * n + e;
            }
        }
        self.push(out, Op::GroupMax { x, arg })
    }

    /// Scales each pixel's channel vector to unit length.
    pub fn l2_normalize_channels(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let [b, c, h, w] = out.shape;
        let plane = h * w;
        for bi in 0..b {
            for p in 0..plane {
                let idx = |ci: usize| (bi * c + ci) * plane + p;
                let norm = (0..c).map(|ci| out.data[idx(ci)].powi(2)).sum::<f32>().sqrt().max(NORM_FLOOR);
                for ci in 0..c {
                    out.data[idx(ci)] /= norm;
                }
            }
        }
        self.push(out, Op::L2Normalize { x })
    }

    /// Back-propagates from `seeds` and returns gradients for every parameter
    /// of `store` that was bound into this graph.
    pub fn backward(&self, store: &ParamStore, seeds: &[(Var, Tensor)]) -> ParamGrads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut out: ParamGrads = (0..store.len()).map(|_| None).collect();
        for (id, v) in &self.params {
            out[id.0] = grads[v.0].take();
        }
        out
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, win } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [batch, cin, h, wd] = xv.shape;
                let cout = wv.shape[0];
                let k = win.kernel;
                let rows = cin * k * k;
                let n = y.plane();
                let mut cols = vec![0.0; rows * n];
                let mut dcols = vec![0.0; rows * n];
                let mut dw = Tensor::zeros(wv.shape);
                let mut dx = Tensor::zeros(xv.shape);
                let n_in = xv.item_len();
                for bi in 0..batch {
                    let gy = g.item(bi);
                    im2col(xv.item(bi), cin, h, wd, *win, &mut cols);
                    gemm(cout, n, rows, gy, false, &cols, true, &mut dw.data, true);
                    gemm(rows, cout, n, &wv.data, true, gy, false, &mut dcols, false);
                    col2im(&dcols, cin, h, wd, *win, &mut dx.data[bi * n_in..(bi + 1) * n_in]);
                }
                if let Some(b) = b {
                    accumulate(grads, *b, channel_sums(g));
                }
                accumulate(grads, *w, dw);
                accumulate(grads, *x, dx);
            }
            Op::ConvTranspose { x, w, b, win } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [batch, cin, h, wd] = xv.shape;
                let cout = wv.shape[1];
                let k = win.kernel;
                let rows = cout * k * k;
                let n = h * wd;
                let mut dcols = vec![0.0; rows * n];
                let mut dw = Tensor::zeros(wv.shape);
                let mut dx = Tensor::zeros(xv.shape);
                let n_in = xv.item_len();
                for bi in 0..batch {
                    im2col(g.item(bi), cout, y.height(), y.width(), *win, &mut dcols);
                    gemm(cin, rows, n, &wv.data, false, &dcols, false, &mut dx.data[bi * n_in..(bi + 1) * n_in], false);
                    gemm(cin, n, rows, xv.item(bi), false, &dcols, true, &mut dw.data, true);
                }
                if let Some(b) = b {
                    accumulate(grads, *b, channel_sums(g));
                }
                accumulate(grads, *w, dw);
                accumulate(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let data = g
                    .data
                    .iter()
                    .zip(&xv.data)
                    .map(|(&gv, &xv)| if xv < 0.0 { gv * slope } else { gv })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(g.shape, data));
            }
            Op::Sigmoid { x } => {
                let data = g.data.iter().zip(&y.data).map(|(&gv, &s)| gv * s * (1.0 - s)).collect();
                accumulate(grads, *x, Tensor::from_vec(g.shape, data));
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::MulChannel { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let plane = xv.plane();
                let mut dx = g.clone();
                let mut ds = Tensor::zeros(sv.shape);
                for (ci, ((dchunk, xchunk), &f)) in
                    dx.data.chunks_mut(plane).zip(xv.data.chunks(plane)).zip(&sv.data).enumerate()
                {
                    ds.data[ci] = dchunk.iter().zip(xchunk).map(|(a, b)| a * b).sum();
                    dchunk.iter_mut().for_each(|v| *v *= f);
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *s, ds);
            }
            Op::MulSpatial { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let [b, c, h, w] = xv.shape;
                let plane = h * w;
                let mut dx = g.clone();
                let mut ds = Tensor::zeros(sv.shape);
                for bi in 0..b {
                    let scale = &sv.data[bi * plane..(bi + 1) * plane];
                    let dscale = &mut ds.data[bi * plane..(bi + 1) * plane];
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        for p in 0..plane {
                            dscale[p] += g.data[off + p] * xv.data[off + p];
                            dx.data[off + p] *= scale[p];
                        }
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *s, ds);
            }
            Op::GlobalAvg { x } => {
                let xv = self.value(*x);
                let plane = xv.plane();
                let mut dx = Tensor::zeros(xv.shape);
                for (chunk, &gv) in dx.data.chunks_mut(plane).zip(&g.data) {
                    chunk.fill(gv / plane as f32);
                }
                accumulate(grads, *x, dx);
            }
            Op::GlobalMax { x, arg } | Op::ChannelMax { x, arg } | Op::GroupMax { x, arg } => {
                let mut dx = Tensor::zeros(self.value(*x).shape);
                for (&a, &gv) in arg.iter().zip(&g.data) {
                    dx.data[a] += gv;
                }
                accumulate(grads, *x, dx);
            }
            Op::ChannelMean { x } => {
                let xv = self.value(*x);
                let [b, c, h, w] = xv.shape;
                let plane = h * w;
                let mut dx = Tensor::zeros(xv.shape);
                for bi in 0..b {
                    let src = &g.data[bi * plane..(bi + 1) * plane];
                    for ci in 0..c {
                        let dst = &mut dx.data[(bi * c + ci) * plane..][..plane];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d = s / c as f32);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                let out_item = g.item_len();
                for &p in parts {
                    let shape = self.value(p).shape;
                    let n = shape[1] * shape[2] * shape[3];
                    let mut data = Vec::with_capacity(shape[0] * n);
                    for bi in 0..shape[0] {
                        data.extend_from_slice(&g.data[bi * out_item + offset..][..n]);
                    }
                    offset += n;
                    accumulate(grads, p, Tensor::from_vec(shape, data));
                }
            }
            Op::L2Normalize { x } => {
                let xv = self.value(*x);
                let [b, c, h, w] = xv.shape;
                let plane = h * w;
                let mut dx = Tensor::zeros(xv.shape);
                for bi in 0..b {
                    for p in 0..plane {
                        let idx = |ci: usize| (bi * c + ci) * plane + p;
                        let raw = (0..c).map(|ci| xv.data[idx(ci)].powi(2)).sum::<f32>().sqrt();
                        if raw > NORM_FLOOR {
                            let along: f32 = (0..c).map(|ci| g.data[idx(ci)] * y.data[idx(ci)]).sum();
                            for ci in 0..c {
                                dx.data[idx(ci)] = (g.data[idx(ci)] - y.data[idx(ci)] * along) / raw;
                            }
                        } else {
                            for ci in 0..c {
                                dx.data[idx(ci)] = g.data[idx(ci)] / NORM_FLOOR;
                            }
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn add_channel_bias(out: &mut Tensor, bias: &[f32]) {
    let (c, plane) = (out.channels(), out.plane());
    for (i, chunk) in out.data.chunks_mut(plane).enumerate() {
        let b = bias[i % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// Sum of `g` over batch and space, shaped like a bias vector.
fn channel_sums(g: &Tensor) -> Tensor {
    let (c, plane) = (g.channels(), g.plane());
    let mut sums = vec![0.0; c];
    for (i, chunk) in g.data.chunks(plane).enumerate() {
        sums[i % c] += chunk.iter().sum::<f32>();
    }
    Tensor::from_vec([c, 1, 1, 1], sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())
    }

    /// Values in `[-1, -0.2] U [0.2, 1]`, clear of kinks at zero.
    fn away_from_zero(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = random(shape, rng);
        for v in &mut t.data {
            *v = v.signum() * (0.2 + 0.8 * v.abs());
        }
        t
    }

    /// Distinct, well-separated values in shuffled order, so max ops have no near ties.
    fn spread(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        use rand::seq::SliceRandom;
        let n: usize = shape.iter().product();
        let mut data: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.05).collect();
        data.shuffle(rng);
        Tensor::from_vec(shape, data)
    }

    /// Compares `d/dx_i sum(r * f(x))` against central differences for every input.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::default();
        let ids: Vec<ParamId> = inputs.iter().enumerate().map(|(i, t)| store.add(format!("p{i}"), t.clone())).collect();
        let eval = |store: &ParamStore| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
            let out = f(&mut g, &vars);
            (g, out)
        };
        let (g, out) = eval(&store);
        let weights = random(g.value(out).shape, &mut rng);
        let analytic = g.backward(&store, &[(out, weights.clone())]);
        let objective = |store: &ParamStore| -> f64 {
            let (g, out) = eval(store);
            g.value(out).data.iter().zip(&weights.data).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let h = 1e-2f32;
        for (k, id) in ids.iter().enumerate() {
            let grad = analytic[id.0].as_ref().expect("gradient reaches every input");
            for e in 0..store.get(*id).data.len() {
                let orig = store.get(*id).data[e];
                store.values_mut()[id.0].data[e] = orig + h;
                let up = objective(&store);
                store.values_mut()[id.0].data[e] = orig - h;
                let down = objective(&store);
                store.values_mut()[id.0].data[e] = orig;
                let numeric = (up - down) / (2.0 * h as f64);
                let a = grad.data[e] as f64;
                assert!(
                    (a - numeric).abs() <= 2e-3 + 1e-2 * numeric.abs(),
                    "input {k} element {e}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn conv_gradients() {
        let mut r = rng();
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (1, 3, 7)] {
            let inputs = vec![random([2, 3, 5, 6], &mut r), random([4, 3, k, k], &mut r), random([4, 1, 1, 1], &mut r)];
            check(inputs, |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad));
        }
    }

    #[test]
    fn conv_transpose_gradients() {
        let mut r = rng();
        let inputs = vec![random([2, 3, 3, 4], &mut r), random([3, 2, 4, 4], &mut r), random([2, 1, 1, 1], &mut r)];
        check(inputs, |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1));
    }

    #[test]
    fn conv_transpose_doubles_resolution() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([1, 2, 5, 7]));
        let w = g.input(Tensor::zeros([2, 3, 4, 4]));
        let y = g.conv_transpose2d(x, w, None, 2, 1);
        assert_eq!(g.value(y).shape, [1, 3, 10, 14]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut r = rng();
        let x = random([1, 2, 4, 5], &mut r);
        let w = random([3, 2, 3, 3], &mut r);
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
        let y = g.conv2d(xv, wv, None, 2, 1);
        let out = g.value(y);
        assert_eq!(out.shape, [1, 3, 2, 3]);
        for co in 0..3 {
            for oh in 0..2 {
                for ow in 0..3 {
                    let mut s = 0.0f64;
                    for ci in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let (ih, iw) = ((oh * 2 + ki) as isize - 1, (ow * 2 + kj) as isize - 1);
                                if (0..4).contains(&ih) && (0..5).contains(&iw) {
                                    s += (w.data[((co * 2 + ci) * 3 + ki) * 3 + kj] * x.data[(ci * 4 + ih as usize) * 5 + iw as usize]) as f64;
                                }
                            }
                        }
                    }
                    assert!((out.data[(co * 2 + oh) * 3 + ow] as f64 - s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn pointwise_gradients() {
        let mut r = rng();
        check(vec![away_from_zero([2, 3, 2, 2], &mut r)], |g, v| g.leaky_relu(v[0], 0.1));
        check(vec![random([2, 3, 2, 2], &mut r)], |g, v| g.sigmoid(v[0]));
        check(vec![random([2, 3, 2, 2], &mut r), random([2, 3, 2, 2], &mut r)], |g, v| g.add(v[0], v[1]));
        check(vec![random([2, 3, 2, 2], &mut r), random([2, 3, 1, 1], &mut r)], |g, v| g.mul_channel(v[0], v[1]));
        check(vec![random([2, 3, 2, 2], &mut r), random([2, 1, 2, 2], &mut r)], |g, v| g.mul_spatial(v[0], v[1]));
    }

    #[test]
    fn pooling_gradients() {
        let mut r = rng();
        check(vec![random([2, 3, 3, 2], &mut r)], |g, v| g.global_avg_pool(v[0]));
        check(vec![spread([2, 3, 3, 2], &mut r)], |g, v| g.global_max_pool(v[0]));
        check(vec![random([2, 3, 3, 2], &mut r)], |g, v| g.channel_mean(v[0]));
        check(vec![spread([2, 3, 3, 2], &mut r)], |g, v| g.channel_max(v[0]));
        check(vec![spread([6, 2, 2, 2], &mut r)], |g, v| g.group_max(v[0], 3));
    }

    #[test]
    fn structural_gradients() {
        let mut r = rng();
        check(vec![random([2, 1, 2, 3], &mut r), random([2, 3, 2, 3], &mut r)], |g, v| g.concat_channels(&[v[0], v[1], v[0]]));
        check(vec![away_from_zero([2, 3, 2, 3], &mut r)], |g, v| g.l2_normalize_channels(v[0]));
    }

    #[test]
    fn shared_params_accumulate() {
        let mut store = ParamStore::default();
        let id = store.add("x", Tensor::from_vec([1, 1, 1, 2], vec![2.0, 3.0]));
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let y = g.add(a, b);
        let grads = g.backward(&store, &[(y, Tensor::from_vec([1, 1, 1, 2], vec![1.0, 1.0]))]);
        assert_eq!(grads[0].as_ref().unwrap().data, vec![2.0, 2.0]);
    }

    #[test]
    fn group_max_is_order_invariant() {
        let mut r = rng();
        let t = random([4, 2, 3, 3], &mut r);
        let n = t.item_len();
        let mut reversed = t.clone();
        for j in 0..4 {
            reversed.data[j * n..(j + 1) * n].copy_from_slice(t.item(3 - j));
        }
        let mut g = Graph::new();
        let (a, b) = (g.input(t), g.input(reversed));
        let (ma, mb) = (g.group_max(a, 4), g.group_max(b, 4));
        assert_eq!(g.value(ma).data, g.value(mb).data);
    }
}
