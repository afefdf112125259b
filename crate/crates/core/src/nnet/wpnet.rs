//! The residual landmark regressor.
//!
//! Layout for the default configuration (output sizes per block):
//!
//! | block      | layers                                   | output        |
//! |------------|------------------------------------------|---------------|
//! | 1 (stem)   | 3×3 conv, norm, ReLU                     | 64 × 136 × 136 |
//! | 2          | 3 basic residual blocks                  | 64 × 136 × 136 |
//! | 3          | 4 basic residual blocks, first stride 2  | 128 × 68 × 68 |
//! | 4          | 6 basic residual blocks, first stride 2  | 256 × 34 × 34 |
//! | 5          | 3 basic residual blocks, first stride 2  | 512 × 17 × 17 |
//! | bottleneck | 1×1 conv 512 → 2, bias, no activation    | 2 × 17 × 17   |
//! | head       | mean over one spatial axis               | 2 × 17        |
//!
//! Normalization is per-sample group normalization, so a forward pass never
//! depends on other samples in a batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeom, NormCache, Workspace};
use super::scalar::{gemm, MatRef, Scalar};
use crate::error::{Error, Result};

/// Which spatial axis of the bottleneck map the head averages away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPool {
    /// Average over width; the row index is the landmark index.
    #[default]
    LastAxis,
    /// Average over height; the column index is the landmark index.
    FirstAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WpnetConfig {
    pub base_channels: usize,
    pub block_counts: [usize; 4],
    pub input_size: usize,
    pub n_landmarks: usize,
    pub width_multiplier: f64,
    /// Upper bound on normalization groups; each layer uses gcd(channels, norm_groups).
    pub norm_groups: usize,
    pub head_pool: HeadPool,
}

impl Default for WpnetConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            block_counts: [3, 4, 6, 3],
            input_size: 136,
            n_landmarks: 17,
            width_multiplier: 1.0,
            norm_groups: 8,
            head_pool: HeadPool::LastAxis,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl WpnetConfig {
    /// Channels 4/4/8/16/32 on a 24 × 24 input with 3 landmarks.
    pub fn tiny() -> Self {
        Self { width_multiplier: 1.0 / 16.0, input_size: 24, n_landmarks: 3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.norm_groups == 0 {
            return Err(Error::Config("base_channels and norm_groups must be positive".into()));
        }
        if self.block_counts.contains(&0) {
            return Err(Error::Config(format!("every stage needs at least one block, got {:?}", self.block_counts)));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::Config(format!("width_multiplier must be in (0, 1], got {}", self.width_multiplier)));
        }
        if self.n_landmarks == 0 || self.input_size != self.n_landmarks * 8 {
            return Err(Error::Config(format!(
                "input_size {} must be 8 × n_landmarks ({}) so three stride-2 stages land on the landmark grid",
                self.input_size, self.n_landmarks
            )));
        }
        Ok(())
    }

    /// Output channels of residual stage `i` (0-based; stage 0 also sets the stem width).
    pub fn stage_channels(&self, i: usize) -> usize {
        let c = (self.base_channels << i) as f64 * self.width_multiplier;
        (c.round() as usize).max(4)
    }

    pub fn groups_for(&self, channels: usize) -> usize {
        gcd(channels, self.norm_groups)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    geom: ConvGeom,
    weight: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormLayer {
    channels: usize,
    groups: usize,
    scale: usize,
    offset: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: ConvLayer,
    norm1: NormLayer,
    conv2: ConvLayer,
    norm2: NormLayer,
    shortcut: Option<(ConvLayer, NormLayer)>,
    in_hw: usize,
    out_hw: usize,
}

/// Layer wiring derived from a config; tensor indices follow build order.
#[derive(Debug, Clone)]
struct Arch {
    stem: (ConvLayer, NormLayer),
    stages: Vec<Vec<Block>>,
    head: ConvLayer,
    head_bias: usize,
    specs: Vec<(String, Vec<usize>)>,
}

impl Arch {
    fn new(cfg: &WpnetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
        let conv = |name: String, cin, cout, kernel, stride, specs: &mut Vec<(String, Vec<usize>)>| {
            specs.push((format!("{name}.weight"), vec![cout, cin, kernel, kernel]));
            ConvLayer { geom: ConvGeom { cin, cout, kernel, stride, pad: kernel / 2 }, weight: specs.len() - 1 }
        };
        let norm = |name: String, channels: usize, specs: &mut Vec<(String, Vec<usize>)>| {
            specs.push((format!("{name}.scale"), vec![channels]));
            specs.push((format!("{name}.offset"), vec![channels]));
            NormLayer { channels, groups: cfg.groups_for(channels), scale: specs.len() - 2, offset: specs.len() - 1 }
        };

        let c0 = cfg.stage_channels(0);
        let stem = (conv("stem.conv".into(), 1, c0, 3, 1, &mut specs), norm("stem.norm".into(), c0, &mut specs));
        let mut stages = Vec::new();
        let mut cin = c0;
        let mut hw = cfg.input_size;
        for (si, &count) in cfg.block_counts.iter().enumerate() {
            let cout = cfg.stage_channels(si);
            let mut blocks = Vec::new();
            for bi in 0..count {
                let stride = if bi == 0 && si > 0 { 2 } else { 1 };
                let p = format!("layer{}.{bi}", si + 2);
                let conv1 = conv(format!("{p}.conv1"), cin, cout, 3, stride, &mut specs);
                let norm1 = norm(format!("{p}.norm1"), cout, &mut specs);
                let conv2 = conv(format!("{p}.conv2"), cout, cout, 3, 1, &mut specs);
                let norm2 = norm(format!("{p}.norm2"), cout, &mut specs);
                let shortcut = (stride != 1 || cin != cout).then(|| {
                    (
                        conv(format!("{p}.shortcut.conv"), cin, cout, 1, stride, &mut specs),
                        norm(format!("{p}.shortcut.norm"), cout, &mut specs),
                    )
                });
                let out_hw = (hw + 2 - 3) / stride + 1;
                blocks.push(Block { conv1, norm1, conv2, norm2, shortcut, in_hw: hw, out_hw });
                cin = cout;
                hw = out_hw;
            }
            stages.push(blocks);
        }
        if hw != cfg.n_landmarks {
            return Err(Error::Config(format!("backbone ends at {hw}×{hw}, expected {}", cfg.n_landmarks)));
        }
        let head = conv("head".into(), cin, 2, 1, 1, &mut specs);
        specs.push(("head.bias".into(), vec![2]));
        let head_bias = specs.len() - 1;
        Ok(Self { stem, stages, head, head_bias, specs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Fixed affine map from the raw network output to normalized coordinates:
/// `coord[k] = raw[k] * scale + mean[k]`. Set from training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl OutputScaling {
    /// Per-coordinate mean and one pooled standard deviation of `targets`.
    pub fn fit(targets: &[Vec<f64>]) -> Result<Self> {
        let len = targets.first().map_or(0, Vec::len);
        if len == 0 || targets.iter().any(|t| t.len() != len) {
            return Err(Error::Shape("targets must be non-empty and equally long".into()));
        }
        let n = targets.len() as f64;
        let mut mean = vec![0.0; len];
        for t in targets {
            for (m, v) in mean.iter_mut().zip(t) {
                *m += v / n;
            }
        }
        let var = targets.iter().flat_map(|t| t.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m))).sum::<f64>()
            / (n * len as f64);
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.mean).map(|(r, m)| r * self.scale + m).collect()
    }

    pub fn invert(&self, coords: &[f64]) -> Vec<f64> {
        coords.iter().zip(&self.mean).map(|(c, m)| (c - m) / self.scale).collect()
    }
}

/// Learnable tensors of a network plus the config that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct WpnetParams<T> {
    pub config: WpnetConfig,
    pub seed: u64,
    pub tensors: Vec<NamedTensor<T>>,
    /// Output denormalization; `None` means raw outputs are coordinates.
    pub output_scaling: Option<OutputScaling>,
    arch: Arch,
}

impl PartialEq for Arch {
    fn eq(&self, other: &Self) -> bool {
        self.specs == other.specs
    }
}

/// Gradient buffers aligned with [`WpnetParams::tensors`].
pub type Gradients<T> = Vec<Vec<T>>;

/// Landmark coordinates, `[2][n_landmarks]`: row 0 is a (x), row 1 is b (y).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkPrediction {
    pub n_landmarks: usize,
    pub coords: Vec<f64>,
}

impl LandmarkPrediction {
    pub fn shape(&self) -> [usize; 2] {
        [2, self.n_landmarks]
    }

    pub fn get(&self, axis: usize, landmark: usize) -> f64 {
        self.coords[axis * self.n_landmarks + landmark]
    }
}

/// He-initialized network: conv weights ~ N(0, 2 / fan_in), norm scale 1,
/// offsets and head bias 0.
pub fn build_wpnet<T: Scalar>(config: WpnetConfig, seed: u64) -> Result<WpnetParams<T>> {
    let arch = Arch::new(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = arch
        .specs
        .iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| T::of_f64(normal.sample(&mut rng))).collect()
            } else if name.ends_with(".scale") {
                vec![T::one(); n]
            } else {
                vec![T::zero(); n]
            };
            NamedTensor { name: name.clone(), shape: shape.clone(), data }
        })
        .collect();
    Ok(WpnetParams { config, seed, tensors, output_scaling: None, arch })
}

/// Cached activations of one training forward pass.
pub struct Tape<T> {
    input: Vec<T>,
    stem_norm: NormCache<T>,
    stem_out: Vec<T>,
    blocks: Vec<BlockTape<T>>,
    features: Vec<T>,
}

struct BlockTape<T> {
    norm1: NormCache<T>,
    act1: Vec<T>,
    norm2: NormCache<T>,
    shortcut_norm: Option<NormCache<T>>,
    out: Vec<T>,
}

impl<T: Scalar> WpnetParams<T> {
    /// Rebuild the wiring for externally supplied tensors (checkpoint loading).
    pub fn from_tensors(config: WpnetConfig, seed: u64, tensors: Vec<NamedTensor<T>>) -> Result<Self> {
        let arch = Arch::new(&config)?;
        if tensors.len() != arch.specs.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", arch.specs.len(), tensors.len())));
        }
        for (t, (name, shape)) in tensors.iter().zip(&arch.specs) {
            if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("tensor `{}` {:?} does not match `{name}` {shape:?}", t.name, t.shape)));
            }
        }
        Ok(Self { config, seed, tensors, output_scaling: None, arch })
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Names of all convolution kernels in build order.
    pub fn conv_kernel_names(&self) -> Vec<&str> {
        self.tensors.iter().filter(|t| t.name.ends_with(".weight")).map(|t| t.name.as_str()).collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut NamedTensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// All parameters concatenated in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().map(|v| v.as_f64())).collect()
    }

    /// Copy with parameters replaced from a [`Self::flatten`] layout.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.n_parameters(), "flat parameter length");
        let mut out = self.clone();
        let mut it = flat.iter();
        for t in &mut out.tensors {
            for v in &mut t.data {
                *v = T::of_f64(*it.next().expect("length checked"));
            }
        }
        out
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect()
    }

    /// Copy with every tensor converted to another element type.
    pub fn cast<U: Scalar>(&self) -> WpnetParams<U> {
        WpnetParams {
            config: self.config.clone(),
            seed: self.seed,
            output_scaling: self.output_scaling.clone(),
            arch: self.arch.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn w(&self, idx: usize) -> &[T] {
        &self.tensors[idx].data
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        let s = self.config.input_size;
        if x.len() != s * s {
            return Err(Error::Shape(format!(
                "stem: expected input (1, {s}, {s}) = {} values, got {}",
                s * s,
                x.len()
            )));
        }
        Ok(())
    }

    fn norm(&self, layer: &NormLayer, x: &[T], keep: bool) -> (Vec<T>, Option<NormCache<T>>) {
        ops::group_norm(x, layer.channels, layer.groups, self.w(layer.scale), self.w(layer.offset), keep)
    }

    fn run(&self, x: &[T], keep: bool, trace: &mut Option<&mut Vec<Vec<usize>>>) -> (Vec<T>, Option<Tape<T>>) {
        let mut ws = Workspace::new();
        let s = self.config.input_size;
        let (stem_conv, stem_norm) = &self.arch.stem;
        let c = ops::conv2d(&stem_conv.geom, self.w(stem_conv.weight), x, s, s, &mut ws);
        let (mut h, stem_cache) = self.norm(stem_norm, &c, keep);
        ops::relu_inplace(&mut h);
        if let Some(t) = trace.as_deref_mut() {
            t.push(vec![stem_conv.geom.cout, s, s]);
        }
        let stem_out = if keep { h.clone() } else { Vec::new() };
        let mut tapes = Vec::new();
        for stage in &self.arch.stages {
            for b in stage {
                let (y, tape) = self.block_forward(b, &h, keep, &mut ws);
                if let Some(t) = tape {
                    tapes.push(t);
                }
                h = y;
            }
            if let Some(t) = trace.as_deref_mut() {
                let b = stage.last().expect("non-empty stage");
                t.push(vec![b.conv2.geom.cout, b.out_hw, b.out_hw]);
            }
        }
        let n = self.config.n_landmarks;
        let z = self.bottleneck(&h);
        if let Some(t) = trace.as_deref_mut() {
            t.push(vec![2, n, n]);
        }
        let out = self.pool(&z);
        if let Some(t) = trace.as_deref_mut() {
            t.push(vec![2, n]);
        }
        let tape = keep.then(|| Tape {
            input: x.to_vec(),
            stem_norm: stem_cache.expect("kept"),
            stem_out,
            blocks: tapes,
            features: h,
        });
        (out, tape)
    }

    fn block_forward(&self, b: &Block, x: &[T], keep: bool, ws: &mut Workspace<T>) -> (Vec<T>, Option<BlockTape<T>>) {
        let c1 = ops::conv2d(&b.conv1.geom, self.w(b.conv1.weight), x, b.in_hw, b.in_hw, ws);
        let (mut a1, n1) = self.norm(&b.norm1, &c1, keep);
        drop(c1);
        ops::relu_inplace(&mut a1);
        let c2 = ops::conv2d(&b.conv2.geom, self.w(b.conv2.weight), &a1, b.out_hw, b.out_hw, ws);
        let (mut y, n2) = self.norm(&b.norm2, &c2, keep);
        drop(c2);
        let sc_cache = match &b.shortcut {
            Some((conv, norm)) => {
                let cs = ops::conv2d(&conv.geom, self.w(conv.weight), x, b.in_hw, b.in_hw, ws);
                let (s, cache) = self.norm(norm, &cs, keep);
                ops::add_inplace(&mut y, &s);
                cache
            }
            None => {
                ops::add_inplace(&mut y, x);
                None
            }
        };
        ops::relu_inplace(&mut y);
        let tape = keep.then(|| BlockTape {
            norm1: n1.expect("kept"),
            act1: a1,
            norm2: n2.expect("kept"),
            shortcut_norm: sc_cache,
            out: y.clone(),
        });
        (y, tape)
    }

    /// 1×1 conv to two coordinate maps plus bias, `[2][n][n]`.
    fn bottleneck(&self, features: &[T]) -> Vec<T> {
        let n = self.config.n_landmarks;
        let h = &self.arch.head;
        let mut z = vec![T::zero(); 2 * n * n];
        gemm(MatRef::new(self.w(h.weight), 2, h.geom.cin), MatRef::new(features, h.geom.cin, n * n), T::zero(), &mut z);
        let bias = self.w(self.arch.head_bias);
        for c in 0..2 {
            for v in &mut z[c * n * n..(c + 1) * n * n] {
                *v = *v + bias[c];
            }
        }
        z
    }

    fn pool(&self, z: &[T]) -> Vec<T> {
        let n = self.config.n_landmarks;
        let inv = T::of_f64(1.0 / n as f64);
        let mut out = vec![T::zero(); 2 * n];
        for c in 0..2 {
            for i in 0..n {
                for j in 0..n {
                    let (l, v) = match self.config.head_pool {
                        HeadPool::LastAxis => (i, z[(c * n + i) * n + j]),
                        HeadPool::FirstAxis => (j, z[(c * n + i) * n + j]),
                    };
                    out[c * n + l] = out[c * n + l] + v;
                }
            }
            for v in &mut out[c * n..(c + 1) * n] {
                *v = *v * inv;
            }
        }
        out
    }

    /// Head only: bottleneck then pooling, on a final feature map `[C][n][n]`.
    pub fn head_forward(&self, features: &[T]) -> Result<Vec<T>> {
        let n = self.config.n_landmarks;
        let c = self.arch.head.geom.cin;
        if features.len() != c * n * n {
            return Err(Error::Shape(format!("head: expected ({c}, {n}, {n}), got {} values", features.len())));
        }
        Ok(self.pool(&self.bottleneck(features)))
    }

    /// Raw forward pass, `[2][n_landmarks]` row-major.
    pub fn forward_raw(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.run(x, false, &mut None).0)
    }

    /// Forward pass that also records `(C, H, W)` after the stem, each stage,
    /// the bottleneck, and the final `(2, n)` output.
    pub fn forward_trace(&self, x: &[T]) -> Result<(Vec<T>, Vec<Vec<usize>>)> {
        self.check_input(x)?;
        let mut trace = Vec::new();
        let out = self.run(x, false, &mut Some(&mut trace)).0;
        Ok((out, trace))
    }

    /// Forward pass keeping the activations needed by [`Self::backward`].
    pub fn forward_train(&self, x: &[T]) -> Result<(Vec<T>, Tape<T>)> {
        self.check_input(x)?;
        let (out, tape) = self.run(x, true, &mut None);
        Ok((out, tape.expect("tape requested")))
    }

    /// Accumulate parameter gradients for upstream gradient `dout` (`[2][n]`).
    pub fn backward(&self, tape: &Tape<T>, dout: &[T], grads: &mut Gradients<T>) {
        let n = self.config.n_landmarks;
        let inv = T::of_f64(1.0 / n as f64);
        // pooling
        let mut dz = vec![T::zero(); 2 * n * n];
        for c in 0..2 {
            for i in 0..n {
                for j in 0..n {
                    let l = match self.config.head_pool {
                        HeadPool::LastAxis => i,
                        HeadPool::FirstAxis => j,
                    };
                    dz[(c * n + i) * n + j] = dout[c * n + l] * inv;
                }
            }
        }
        // bottleneck
        let h = &self.arch.head;
        let cin = h.geom.cin;
        for c in 0..2 {
            let s: T = dz[c * n * n..(c + 1) * n * n].iter().copied().sum();
            grads[self.arch.head_bias][c] = grads[self.arch.head_bias][c] + s;
        }
        gemm(MatRef::new(&dz, 2, n * n), MatRef::new(&tape.features, cin, n * n).t(), T::one(), &mut grads[h.weight]);
        let mut dh = vec![T::zero(); cin * n * n];
        gemm(MatRef::new(self.w(h.weight), 2, cin).t(), MatRef::new(&dz, 2, n * n), T::zero(), &mut dh);

        let mut ws = Workspace::new();
        let blocks: Vec<&Block> = self.arch.stages.iter().flatten().collect();
        for (bi, b) in blocks.iter().enumerate().rev() {
            let input = if bi == 0 { &tape.stem_out } else { &tape.blocks[bi - 1].out };
            dh = self.block_backward(b, &tape.blocks[bi], input, dh, grads, &mut ws);
        }
        let (stem_conv, stem_norm) = &self.arch.stem;
        ops::relu_backward_inplace(&mut dh, &tape.stem_out);
        let dc = self.norm_backward(stem_norm, &dh, &tape.stem_norm, grads);
        let s = self.config.input_size;
        let dw = &mut grads[stem_conv.weight];
        ops::conv2d_backward(&stem_conv.geom, self.w(stem_conv.weight), &tape.input, s, s, &dc, dw, false, &mut ws);
    }

    fn norm_backward(&self, layer: &NormLayer, dy: &[T], cache: &NormCache<T>, grads: &mut Gradients<T>) -> Vec<T> {
        let (ds, db) = two_mut(grads, layer.scale, layer.offset);
        ops::group_norm_backward(dy, cache, layer.channels, layer.groups, self.w(layer.scale), ds, db)
    }

    fn block_backward(
        &self,
        b: &Block,
        t: &BlockTape<T>,
        input: &[T],
        mut dy: Vec<T>,
        grads: &mut Gradients<T>,
        ws: &mut Workspace<T>,
    ) -> Vec<T> {
        ops::relu_backward_inplace(&mut dy, &t.out);
        let dc2 = self.norm_backward(&b.norm2, &dy, &t.norm2, grads);
        let mut da1 = ops::conv2d_backward(
            &b.conv2.geom,
            self.w(b.conv2.weight),
            &t.act1,
            b.out_hw,
            b.out_hw,
            &dc2,
            &mut grads[b.conv2.weight],
            true,
            ws,
        )
        .expect("dx requested");
        ops::relu_backward_inplace(&mut da1, &t.act1);
        let dc1 = self.norm_backward(&b.norm1, &da1, &t.norm1, grads);
        let mut dx = ops::conv2d_backward(
            &b.conv1.geom,
            self.w(b.conv1.weight),
            input,
            b.in_hw,
            b.in_hw,
            &dc1,
            &mut grads[b.conv1.weight],
            true,
            ws,
        )
        .expect("dx requested");
        match (&b.shortcut, &t.shortcut_norm) {
            (Some((conv, norm)), Some(cache)) => {
                let dcs = self.norm_backward(norm, &dy, cache, grads);
                let dxs = ops::conv2d_backward(
                    &conv.geom,
                    self.w(conv.weight),
                    input,
                    b.in_hw,
                    b.in_hw,
                    &dcs,
                    &mut grads[conv.weight],
                    true,
                    ws,
                )
                .expect("dx requested");
                ops::add_inplace(&mut dx, &dxs);
            }
            _ => ops::add_inplace(&mut dx, &dy),
        }
        dx
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Forward pass on an `f64` input, returning normalized landmark coordinates.
pub fn forward<T: Scalar>(params: &WpnetParams<T>, x: &crate::preprocess::InputTensor) -> Result<LandmarkPrediction> {
    let xs: Vec<T> = x.data.iter().map(|&v| T::of_f64(v)).collect();
    let out: Vec<f64> = params.forward_raw(&xs)?.iter().map(|v| v.as_f64()).collect();
    let coords = match &params.output_scaling {
        Some(s) => s.apply(&out),
        None => out,
    };
    Ok(LandmarkPrediction { n_landmarks: params.config.n_landmarks, coords })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_channels() {
        let cfg = WpnetConfig::tiny();
        cfg.validate().unwrap();
        let ch: Vec<usize> = (0..4).map(|i| cfg.stage_channels(i)).collect();
        assert_eq!(ch, [4, 8, 16, 32]);
        let quarter = WpnetConfig { width_multiplier: 0.25, ..Default::default() };
        assert_eq!((0..4).map(|i| quarter.stage_channels(i)).collect::<Vec<_>>(), [16, 32, 64, 128]);
    }

    #[test]
    fn config_errors() {
        let bad = WpnetConfig { input_size: 100, ..Default::default() };
        assert!(matches!(build_wpnet::<f32>(bad, 0), Err(Error::Config(_))));
        let bad = WpnetConfig { block_counts: [3, 0, 6, 3], ..Default::default() };
        assert!(build_wpnet::<f32>(bad, 0).is_err());
        let bad = WpnetConfig { width_multiplier: 1.5, ..Default::default() };
        assert!(build_wpnet::<f32>(bad, 0).is_err());
    }

    #[test]
    fn wrong_input_names_stage() {
        let p = build_wpnet::<f64>(WpnetConfig::tiny(), 1).unwrap();
        let err = p.forward_raw(&[0.0; 10]).unwrap_err().to_string();
        assert!(err.contains("stem"), "{err}");
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = build_wpnet::<f32>(WpnetConfig::tiny(), 5).unwrap();
        let b = build_wpnet::<f32>(WpnetConfig::tiny(), 5).unwrap();
        let c = build_wpnet::<f32>(WpnetConfig::tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn output_scaling_fit_and_inverse() {
        let targets = vec![vec![0.2, 0.8], vec![0.4, 0.6], vec![0.3, 1.0]];
        let s = OutputScaling::fit(&targets).unwrap();
        assert!((s.mean[0] - 0.3).abs() < 1e-15 && (s.mean[1] - 0.8).abs() < 1e-15);
        // squared deviations 0.01, 0, 0.01 and 0.04, 0.04, 0
        assert!((s.scale - (0.1f64 / 6.0).sqrt()).abs() < 1e-15);
        for t in &targets {
            let back = s.apply(&s.invert(t));
            assert!(back.iter().zip(t).all(|(a, b)| (a - b).abs() < 1e-15));
        }
        let flat = OutputScaling::fit(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(flat.scale, 1.0);
        assert!(OutputScaling::fit(&[]).is_err());
        assert!(OutputScaling::fit(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn forward_applies_output_scaling() {
        let mut p = build_wpnet::<f64>(WpnetConfig::tiny(), 3).unwrap();
        let x = crate::preprocess::InputTensor { data: (0..24 * 24).map(|i| (i as f64 * 0.1).sin()).collect() };
        let raw = forward(&p, &x).unwrap().coords;
        let s = OutputScaling { mean: vec![0.5, 0.25, 0.1, 0.9, 0.3, 0.2], scale: 0.5 };
        p.output_scaling = Some(s.clone());
        assert_eq!(forward(&p, &x).unwrap().coords, s.apply(&raw));
    }
}
