//! Shared backbone plus instance and cluster heads, built on candle.
//!
//! One [`Network`] owns a single parameter set; every view goes through the
//! same `Var`s, so weight sharing holds by construction.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aug::Image;
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error("non-finite activations after layer {index} ({layer}): {stats}")]
    NonFinite { index: usize, layer: String, stats: BatchStats },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("images in a batch must share one size; got {0}x{1} and {2}x{3}")]
    MixedSizes(usize, usize, usize, usize),
    #[error("parameter {name}: {message}")]
    Parameter { name: String, message: String },
}

/// Summary of a tensor used in non-finite diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub shape: Vec<usize>,
    pub nan: usize,
    pub inf: usize,
    pub min: f32,
    pub max: f32,
    pub mean: f64,
}

impl std::fmt::Display for BatchStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "shape {:?}, {} NaN, {} Inf, finite min {}, max {}, mean {:.4e}",
            self.shape, self.nan, self.inf, self.min, self.max, self.mean
        )
    }
}

impl BatchStats {
    pub fn of(t: &Tensor) -> Result<Self, ModelError> {
        let v = t.flatten_all()?.to_vec1::<f32>()?;
        let (mut nan, mut inf, mut min, mut max, mut sum, mut n) = (0, 0, f32::INFINITY, f32::NEG_INFINITY, 0.0, 0usize);
        for x in v {
            if x.is_nan() {
                nan += 1;
            } else if x.is_infinite() {
                inf += 1;
            } else {
                min = min.min(x);
                max = max.max(x);
                sum += x as f64;
                n += 1;
            }
        }
        Ok(Self {
            shape: t.dims().to_vec(),
            nan,
            inf,
            min,
            max,
            mean: if n > 0 { sum / n as f64 } else { f64::NAN },
        })
    }

    pub fn is_finite(&self) -> bool {
        self.nan == 0 && self.inf == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Resnet34,
    /// Four stride-2 conv blocks and global pooling; D = 64.
    SmallConv,
}

impl Architecture {
    pub fn output_dim(self) -> usize {
        match self {
            Architecture::Resnet34 => 512,
            Architecture::SmallConv => 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub architecture_id: Architecture,
    /// Must equal the architecture's feature width when given.
    pub output_dim: Option<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            architecture_id: Architecture::Resnet34,
            output_dim: None,
        }
    }
}

impl BackboneConfig {
    pub fn dim(&self) -> usize {
        self.architecture_id.output_dim()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceHeadConfig {
    /// Defaults to the backbone width.
    pub hidden_dim: Option<usize>,
    pub out_dim: usize,
}

impl Default for InstanceHeadConfig {
    fn default() -> Self {
        Self {
            hidden_dim: None,
            out_dim: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterHeadConfig {
    pub hidden_dim: Option<usize>,
    pub num_clusters: usize,
}

impl Default for ClusterHeadConfig {
    fn default() -> Self {
        Self {
            hidden_dim: None,
            num_clusters: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub instance_head: InstanceHeadConfig,
    pub cluster_head: ClusterHeadConfig,
}

impl ModelConfig {
    pub fn small(num_clusters: usize) -> Self {
        Self {
            backbone: BackboneConfig {
                architecture_id: Architecture::SmallConv,
                output_dim: None,
            },
            instance_head: InstanceHeadConfig::default(),
            cluster_head: ClusterHeadConfig {
                hidden_dim: None,
                num_clusters,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if let Some(d) = self.backbone.output_dim {
            if d != self.backbone.dim() {
                return bad(format!(
                    "model.backbone.output_dim is {d} but {:?} produces {}",
                    self.backbone.architecture_id,
                    self.backbone.dim()
                ));
            }
        }
        if self.instance_head.out_dim == 0 || self.instance_head.hidden_dim == Some(0) {
            return bad("model.instance_head dims must be positive".into());
        }
        if self.cluster_head.num_clusters < 2 {
            return bad("model.cluster_head.num_clusters must be at least 2".into());
        }
        if self.cluster_head.hidden_dim == Some(0) {
            return bad("model.cluster_head.hidden_dim must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; no state changes.
    Eval,
}

/// A named tensor owned by the network.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub var: Var,
    /// Buffers (normalization running statistics) are not optimized.
    pub trainable: bool,
}

struct Init {
    rng: ChaCha8Rng,
    params: Vec<Param>,
}

impl Init {
    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Var, ModelError> {
        let n: usize = shape.iter().product();
        let dist = Uniform::new_inclusive(-bound as f32, bound as f32).expect("finite bound");
        let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.push(name, Tensor::from_vec(data, shape, &Device::Cpu)?, true)
    }

    fn constant(&mut self, name: &str, len: usize, value: f32, trainable: bool) -> Result<Var, ModelError> {
        self.push(name, Tensor::full(value, len, &Device::Cpu)?, trainable)
    }

    fn push(&mut self, name: &str, t: Tensor, trainable: bool) -> Result<Var, ModelError> {
        let var = Var::from_tensor(&t)?;
        self.params.push(Param {
            name: name.to_string(),
            var: var.clone(),
            trainable,
        });
        Ok(var)
    }
}

/// A batch of feature maps stored channels-last as an `(N*H*W) x C` matrix.
/// Row `(b*H + y)*W + x` holds the channels of pixel `(x, y)` of image `b`.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub data: Tensor,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatureMap {
    fn with(&self, data: Tensor, h: usize, w: usize) -> Self {
        Self { data, n: self.n, h, w }
    }

    fn rows(&self) -> usize {
        self.n * self.h * self.w
    }
}

/// Source rows of every `k x k` patch, row-major over output positions then
/// kernel offsets. Out-of-image taps point at the extra zero row `N*H*W`.
fn patch_indices(n: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> (Vec<u32>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let zero = (n * h * w) as u32;
    let mut idx = Vec::with_capacity(n * ho * wo * k * k);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        idx.push(if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            ((b * h + iy as usize) * w + ix as usize) as u32
                        } else {
                            zero
                        });
                    }
                }
            }
        }
    }
    (idx, ho, wo)
}

/// Gathers `k x k` patches into `(N*Ho*Wo) x (k*k*C)`.
fn gather_patches(x: &FeatureMap, k: usize, stride: usize, pad: usize) -> candle_core::Result<(Tensor, usize, usize)> {
    let c = x.data.dim(1)?;
    let dev = x.data.device();
    let padded = Tensor::cat(&[&x.data, &Tensor::zeros((1, c), DType::F32, dev)?], 0)?;
    let (idx, ho, wo) = patch_indices(x.n, x.h, x.w, k, stride, pad);
    let len = idx.len();
    let cols = padded.index_select(&Tensor::from_vec(idx, len, dev)?, 0)?;
    Ok((cols.reshape((x.n * ho * wo, k * k * c))?, ho, wo))
}

/// Convolution as patch gather plus one matrix product. The weight is
/// `(k*k*C_in) x C_out`, rows ordered by kernel offset then input channel.
struct Conv {
    weight: Var,
    k: usize,
    stride: usize,
}

impl Conv {
    fn new(init: &mut Init, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self, ModelError> {
        // He uniform for rectified layers
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        Ok(Self {
            weight: init.uniform(&format!("{name}.weight"), &[k * k * cin, cout], bound)?,
            k,
            stride,
        })
    }

    fn forward(&self, x: &FeatureMap) -> candle_core::Result<FeatureMap> {
        if self.k == 1 && self.stride == 1 {
            return Ok(x.with(x.data.matmul(self.weight.as_tensor())?, x.h, x.w));
        }
        let (cols, ho, wo) = gather_patches(x, self.k, self.stride, self.k / 2)?;
        Ok(x.with(cols.matmul(self.weight.as_tensor())?, ho, wo))
    }
}

/// Batch normalisation over the rows of a feature map. Row reductions and
/// broadcasts are matrix products with constant vectors so that the backward
/// pass stays in dense kernels.
struct BatchNorm {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm {
    fn new(init: &mut Init, name: &str, c: usize) -> Result<Self, ModelError> {
        Ok(Self {
            gamma: init.constant(&format!("{name}.weight"), c, 1.0, true)?,
            beta: init.constant(&format!("{name}.bias"), c, 0.0, true)?,
            running_mean: init.constant(&format!("{name}.running_mean"), c, 0.0, false)?,
            running_var: init.constant(&format!("{name}.running_var"), c, 1.0, false)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> candle_core::Result<Tensor> {
        let (m, c) = x.dims2()?;
        let dev = x.device();
        let ones = Tensor::ones((m, 1), DType::F32, dev)?;
        let gamma = self.gamma.as_tensor().reshape((1, c))?;
        let beta = self.beta.as_tensor().reshape((1, c))?;
        match mode {
            Mode::Train => {
                let avg = Tensor::full(1.0 / m as f32, (1, m), dev)?;
                let mean = avg.matmul(x)?;
                let centered = (x - ones.matmul(&mean)?)?;
                let var = avg.matmul(&centered.sqr()?)?;
                let unbiased = (var.detach().flatten_all()? * (m as f64 / (m as f64 - 1.0).max(1.0)))?;
                let mo = BN_MOMENTUM;
                self.running_mean
                    .set(&((self.running_mean.as_tensor() * (1.0 - mo))? + (mean.detach().flatten_all()? * mo)?)?)?;
                self.running_var
                    .set(&((self.running_var.as_tensor() * (1.0 - mo))? + (unbiased * mo)?)?)?;
                let scale = ((var + BN_EPS)?.sqrt()?.recip()? * gamma)?;
                (centered * ones.matmul(&scale)?)? + ones.matmul(&beta)?
            }
            Mode::Eval => {
                let rm = self.running_mean.as_tensor().reshape((1, c))?;
                let rv = self.running_var.as_tensor().reshape((1, c))?;
                let scale = ((rv + BN_EPS)?.sqrt()?.recip()? * gamma)?;
                let shift = (beta - (rm * &scale)?)?;
                (x * ones.matmul(&scale)?)? + ones.matmul(&shift)?
            }
        }
    }
}

struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBn {
    fn new(init: &mut Init, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self, ModelError> {
        Ok(Self {
            conv: Conv::new(init, &format!("{name}.conv"), cin, cout, k, stride)?,
            bn: BatchNorm::new(init, &format!("{name}.bn"), cout)?,
        })
    }

    fn forward(&self, x: &FeatureMap, mode: Mode) -> candle_core::Result<FeatureMap> {
        let y = self.conv.forward(x)?;
        Ok(y.with(self.bn.forward(&y.data, mode)?, y.h, y.w))
    }
}

struct BasicBlock {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn new(init: &mut Init, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self, ModelError> {
        Ok(Self {
            a: ConvBn::new(init, &format!("{name}.a"), cin, cout, 3, stride)?,
            b: ConvBn::new(init, &format!("{name}.b"), cout, cout, 3, 1)?,
            shortcut: if stride != 1 || cin != cout {
                Some(ConvBn::new(init, &format!("{name}.shortcut"), cin, cout, 1, stride)?)
            } else {
                None
            },
        })
    }

    /// Returns the pre-activation sum; the caller applies the final ReLU.
    fn forward(&self, x: &FeatureMap, mode: Mode) -> candle_core::Result<FeatureMap> {
        let a = self.a.forward(x, mode)?;
        let h = self.b.forward(&a.with(a.data.relu()?, a.h, a.w), mode)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(x, mode)?.data,
            None => x.data.clone(),
        };
        Ok(h.with((&h.data + skip)?, h.h, h.w))
    }
}

struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    fn new(init: &mut Init, name: &str, cin: usize, cout: usize) -> Result<Self, ModelError> {
        let bound = 1.0 / (cin as f64).sqrt();
        Ok(Self {
            weight: init.uniform(&format!("{name}.weight"), &[cin, cout], bound)?,
            bias: init.uniform(&format!("{name}.bias"), &[cout], bound)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.matmul(self.weight.as_tensor())?.broadcast_add(self.bias.as_tensor())
    }
}

/// Linear, ReLU, Linear.
struct Mlp {
    first: Linear,
    second: Linear,
}

impl Mlp {
    fn new(init: &mut Init, name: &str, cin: usize, hidden: usize, cout: usize) -> Result<Self, ModelError> {
        Ok(Self {
            first: Linear::new(init, &format!("{name}.0"), cin, hidden)?,
            second: Linear::new(init, &format!("{name}.1"), hidden, cout)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.second.forward(&self.first.forward(x)?.relu()?)
    }
}

enum Stage {
    /// ConvBn + ReLU.
    ConvRelu(ConvBn),
    /// 3x3 stride-2 max pool with one pixel of padding.
    MaxPool,
    Block(BasicBlock),
}

impl Stage {
    /// ReLU clamps NaN to zero, so finiteness is checked before it.
    fn forward(&self, x: &FeatureMap, mode: Mode, index: usize, name: &str) -> Result<FeatureMap, ModelError> {
        let pre = match self {
            Stage::ConvRelu(c) => c.forward(x, mode)?,
            Stage::MaxPool => {
                // inputs are post-ReLU, so zero padding never wins the max
                let c = x.data.dim(1)?;
                let (cols, ho, wo) = gather_patches(x, 3, 2, 1)?;
                let pooled = cols.reshape((x.n * ho * wo, 9, c))?.max(1)?;
                x.with(pooled, ho, wo)
            }
            Stage::Block(b) => b.forward(x, mode)?,
        };
        check_finite(&pre.data, index, name)?;
        Ok(match self {
            Stage::MaxPool => pre,
            _ => pre.with(pre.data.relu()?, pre.h, pre.w),
        })
    }
}

/// Per-view outputs: backbone features, raw instance features and cluster
/// probabilities.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub z: Tensor,
    pub y: Tensor,
    pub c: Tensor,
}

pub struct Network {
    config: ModelConfig,
    stages: Vec<(String, Stage)>,
    instance_head: Mlp,
    cluster_head: Mlp,
    params: Vec<Param>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("config", &self.config)
            .field("params", &self.params.len())
            .finish()
    }
}

impl Network {
    /// Builds a network with fan-based uniform initialisation drawn from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x494e_4954])),
            params: Vec::new(),
        };
        let mut stages = Vec::new();
        match config.backbone.architecture_id {
            Architecture::SmallConv => {
                let widths = [3, 8, 16, 32, 64];
                for i in 0..4 {
                    let name = format!("backbone.conv{i}");
                    stages.push((name.clone(), Stage::ConvRelu(ConvBn::new(&mut init, &name, widths[i], widths[i + 1], 3, 2)?)));
                }
            }
            Architecture::Resnet34 => {
                stages.push(("backbone.stem".into(), Stage::ConvRelu(ConvBn::new(&mut init, "backbone.stem", 3, 64, 7, 2)?)));
                stages.push(("backbone.pool".into(), Stage::MaxPool));
                let mut cin = 64;
                for (layer, (&blocks, &width)) in [3, 4, 6, 3].iter().zip(&[64, 128, 256, 512]).enumerate() {
                    for b in 0..blocks {
                        let stride = if b == 0 && layer > 0 { 2 } else { 1 };
                        let name = format!("backbone.layer{}.{b}", layer + 1);
                        stages.push((name.clone(), Stage::Block(BasicBlock::new(&mut init, &name, cin, width, stride)?)));
                        cin = width;
                    }
                }
            }
        }
        let d = config.backbone.dim();
        let ih = config.instance_head.hidden_dim.unwrap_or(d);
        let ch = config.cluster_head.hidden_dim.unwrap_or(d);
        let instance_head = Mlp::new(&mut init, "instance_head", d, ih, config.instance_head.out_dim)?;
        let cluster_head = Mlp::new(&mut init, "cluster_head", d, ch, config.cluster_head.num_clusters)?;
        Ok(Self {
            config: config.clone(),
            stages,
            instance_head,
            cluster_head,
            params: init.params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_clusters(&self) -> usize {
        self.config.cluster_head.num_clusters
    }

    /// Every parameter and buffer in a fixed order.
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.trainable)
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|p| p.var.elem_count()).sum()
    }

    /// Forward pass. Stops at the first layer whose output contains NaN or
    /// Inf and reports that layer.
    pub fn forward(&self, x: &FeatureMap, mode: Mode) -> Result<Embeddings, ModelError> {
        let mut h = x.clone();
        for (index, (name, stage)) in self.stages.iter().enumerate() {
            h = stage.forward(&h, mode, index, name)?;
        }
        // global average pool as a block-averaging matrix product
        let hw = h.h * h.w;
        let mut pool = vec![0f32; h.n * h.rows()];
        for b in 0..h.n {
            pool[b * h.rows() + b * hw..b * h.rows() + (b + 1) * hw].fill(1.0 / hw as f32);
        }
        let pool = Tensor::from_vec(pool, (h.n, h.rows()), h.data.device())?;
        let z = pool.matmul(&h.data)?;
        let n = self.stages.len();
        let y = self.instance_head.forward(&z)?;
        check_finite(&y, n, "instance_head")?;
        let logits = self.cluster_head.forward(&z)?;
        check_finite(&logits, n + 1, "cluster_head")?;
        let c = softmax_rows(&logits)?;
        Ok(Embeddings { z, y, c })
    }

    /// Runs all views through the same parameters.
    pub fn forward_views(&self, views: &[FeatureMap], mode: Mode) -> Result<Vec<Embeddings>, ModelError> {
        views.iter().map(|v| self.forward(v, mode)).collect()
    }

    /// Copies every parameter and buffer of `other` into `self`.
    pub fn load_from(&self, other: &Network) -> Result<(), ModelError> {
        for (a, b) in self.params.iter().zip(&other.params) {
            a.var.set(b.var.as_tensor())?;
        }
        Ok(())
    }
}

fn check_finite(t: &Tensor, index: usize, layer: &str) -> Result<(), ModelError> {
    let s = t.sum_all()?.to_scalar::<f32>()?;
    if s.is_finite() {
        return Ok(());
    }
    // a finite tensor can still overflow its sum
    let stats = BatchStats::of(t)?;
    if stats.is_finite() {
        return Ok(());
    }
    Err(ModelError::NonFinite {
        index,
        layer: layer.to_string(),
        stats,
    })
}

fn softmax_rows(logits: &Tensor) -> candle_core::Result<Tensor> {
    let shifted = logits.broadcast_sub(&logits.max_keepdim(D::Minus1)?)?;
    let e = shifted.exp()?;
    e.broadcast_div(&e.sum_keepdim(D::Minus1)?)
}

/// Stacks same-sized images into a channels-last batch scaled to [-1, 1].
pub fn images_to_batch(images: &[&Image]) -> Result<FeatureMap, ModelError> {
    let first = images.first().ok_or(ModelError::EmptyBatch)?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(ModelError::MixedSizes(w, h, img.width(), img.height()));
        }
        data.extend(img.as_slice().iter().map(|v| v * 2.0 - 1.0));
    }
    Ok(FeatureMap {
        data: Tensor::from_vec(data, (images.len() * h * w, 3), &Device::Cpu)?,
        n: images.len(),
        h,
        w,
    })
}

pub fn tensor_to_rows(t: &Tensor) -> Result<ndarray::Array2<f64>, ModelError> {
    let (n, d) = t.dims2()?;
    let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(ndarray::Array2::from_shape_vec((n, d), v).expect("dims match"))
}

/// Resize-only inference over `images` in chunks of `batch_size`.
/// Returns instance features and cluster probabilities as `f64` rows.
pub fn infer(
    net: &Network,
    images: &[Image],
    size: usize,
    batch_size: usize,
) -> Result<(ndarray::Array2<f64>, ndarray::Array2<f64>), ModelError> {
    if images.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut ys = Vec::new();
    let mut cs = Vec::new();
    for chunk in images.chunks(batch_size.max(1)) {
        let resized: Vec<Image> = chunk
            .iter()
            .map(|i| if i.width() == size && i.height() == size { i.clone() } else { i.resize(size, size) })
            .collect();
        let refs: Vec<&Image> = resized.iter().collect();
        let e = net.forward(&images_to_batch(&refs)?, Mode::Eval)?;
        ys.push(tensor_to_rows(&e.y)?);
        cs.push(tensor_to_rows(&e.c)?);
    }
    let cat = |parts: Vec<ndarray::Array2<f64>>| {
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
    };
    Ok((cat(ys), cat(cs)))
}

/// Cluster index per image: argmax of the cluster head on the resized,
/// un-augmented image, ties to the lowest index.
pub fn predict_clusters(net: &Network, images: &[Image], size: usize, batch_size: usize) -> Result<Vec<usize>, ModelError> {
    let (_, c) = infer(net, images, size, batch_size)?;
    Ok(c.rows().into_iter().map(crate::loss::argmax).collect())
}
