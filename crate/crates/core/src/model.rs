//! The four-network architecture: convolutional feature extractor `F`, task
//! head `C`, adversarial domain head `D` behind a gradient reversal layer, and
//! contrastive projection head `Z`. Also home to the λ_d schedule and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, Padding};
use crate::tensor::Tensor;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Filters per conv block.
    pub filters: Vec<usize>,
    /// Kernel width per conv block.
    pub widths: Vec<usize>,
    pub n_classes: usize,
    /// Output extent of the domain head: sources plus target (or sources only
    /// when training without target data).
    pub n_domains: usize,
    pub domain_hidden: usize,
    pub proj_dim: usize,
    pub batch_norm: bool,
}

impl ModelConfig {
    pub const DEFAULT_FILTERS: [usize; 3] = [64, 128, 64];
    pub const DEFAULT_WIDTHS: [usize; 3] = [8, 5, 3];

    pub fn new(in_channels: usize, n_classes: usize, n_domains: usize) -> Self {
        Self {
            in_channels,
            filters: Self::DEFAULT_FILTERS.to_vec(),
            widths: Self::DEFAULT_WIDTHS.to_vec(),
            n_classes,
            n_domains,
            domain_hidden: 128,
            proj_dim: 128,
            batch_norm: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.filters.last().expect("validated config has blocks")
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() || self.filters.len() != self.widths.len() {
            return Err(Error::invalid(format!(
                "need one width per conv block, got filters {:?} widths {:?}",
                self.filters, self.widths
            )));
        }
        let extents = [
            ("in_channels", self.in_channels),
            ("n_classes", self.n_classes),
            ("n_domains", self.n_domains),
            ("domain_hidden", self.domain_hidden),
            ("proj_dim", self.proj_dim),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.filters.iter().chain(&self.widths).any(|&v| v == 0) {
            return Err(Error::invalid("filters and widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub norm: Option<Norm>,
}

/// All trainable tensors of F, C, D and Z. The same layout holds gradients
/// and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub conv_blocks: Vec<ConvBlock>,
    pub task_head: Linear,
    pub domain_head: Vec<Linear>,
    pub contrastive_head: Linear,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-limit..limit));
    t
}

fn init_linear(inp: usize, out: usize, rng: &mut impl Rng) -> Linear {
    Linear {
        w: glorot(&[inp, out], inp, out, rng),
        b: Tensor::zeros(&[out]),
    }
}

impl ParamSet {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut conv_blocks = Vec::with_capacity(cfg.filters.len());
        let mut ch_in = cfg.in_channels;
        for (&out, &width) in cfg.filters.iter().zip(&cfg.widths) {
            conv_blocks.push(ConvBlock {
                kernels: glorot(&[out, ch_in, width], ch_in * width, out * width, rng),
                bias: Tensor::zeros(&[out]),
                norm: cfg.batch_norm.then(|| Norm {
                    gamma: Tensor::filled(&[out], 1.0),
                    beta: Tensor::zeros(&[out]),
                }),
            });
            ch_in = out;
        }
        let feat = cfg.feature_dim();
        let task_head = init_linear(feat, cfg.n_classes, rng);
        let domain_head = vec![
            init_linear(feat, cfg.domain_hidden, rng),
            init_linear(cfg.domain_hidden, cfg.n_domains, rng),
        ];
        let contrastive_head = init_linear(feat, cfg.proj_dim, rng);
        Ok(Self {
            conv_blocks,
            task_head,
            domain_head,
            contrastive_head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.scale(0.0));
        z
    }

    /// Canonical (name, tensor) listing shared by Adam, checkpoints and
    /// gradient checks.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, block) in self.conv_blocks.iter().enumerate() {
            out.push((format!("conv{i}.kernels"), &block.kernels));
            out.push((format!("conv{i}.bias"), &block.bias));
            if let Some(norm) = &block.norm {
                out.push((format!("conv{i}.bn.gamma"), &norm.gamma));
                out.push((format!("conv{i}.bn.beta"), &norm.beta));
            }
        }
        out.push(("task.w".into(), &self.task_head.w));
        out.push(("task.b".into(), &self.task_head.b));
        for (i, layer) in self.domain_head.iter().enumerate() {
            out.push((format!("domain{i}.w"), &layer.w));
            out.push((format!("domain{i}.b"), &layer.b));
        }
        out.push(("contrastive.w".into(), &self.contrastive_head.w));
        out.push(("contrastive.b".into(), &self.contrastive_head.b));
        out
    }

    /// Mutable tensors in the order of [`ParamSet::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for block in &mut self.conv_blocks {
            out.push(&mut block.kernels);
            out.push(&mut block.bias);
            if let Some(norm) = &mut block.norm {
                out.push(&mut norm.gamma);
                out.push(&mut norm.beta);
            }
        }
        out.push(&mut self.task_head.w);
        out.push(&mut self.task_head.b);
        for layer in &mut self.domain_head {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out.push(&mut self.contrastive_head.w);
        out.push(&mut self.contrastive_head.b);
        out
    }

    pub fn add_scaled(&mut self, other: &ParamSet, factor: f64) -> Result<()> {
        let theirs: Vec<&Tensor> = other.named().into_iter().map(|(_, t)| t).collect();
        let mine = self.tensors_mut();
        if mine.len() != theirs.len() {
            return Err(Error::shape("ParamSet::add_scaled", "layouts differ"));
        }
        for (a, b) in mine.into_iter().zip(theirs) {
            a.add_scaled(b, factor)?;
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Running batch-norm statistics for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BATCH_NORM_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: ParamSet,
    pub second: ParamSet,
}

/// Trainable weights plus optimizer state and batch-norm buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: ParamSet,
    /// One entry per conv block; `Some` only when batch norm is enabled.
    pub running: Vec<Option<RunningStats>>,
    pub adam: AdamState,
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let weights = ParamSet::init(&config, rng)?;
        let running = config
            .filters
            .iter()
            .map(|&c| {
                config.batch_norm.then(|| RunningStats {
                    mean: vec![0.0; c],
                    var: vec![1.0; c],
                })
            })
            .collect();
        let adam = AdamState {
            step: 0,
            first: weights.zeros_like(),
            second: weights.zeros_like(),
        };
        Ok(Self {
            config,
            weights,
            running,
            adam,
        })
    }
}

// ---------------------------------------------------------------------------
// forward / backward

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; the running averages are refreshed by the caller.
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    conv_out: Tensor,
    pre_relu: Tensor,
}

/// Intermediate activations kept for the feature extractor backward pass.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    blocks: Vec<BlockCache>,
    pooled_input: Tensor,
    mode: Mode,
    /// Per-block batch mean/variance, present in training mode with batch norm.
    pub batch_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

fn check_input(params: &ModelParams, x: &Tensor) -> Result<()> {
    const OP: &str = "feature_extract";
    if x.rank() != 3 {
        return Err(Error::shape(OP, format!("expected [batch, ch, time], got {:?}", x.shape())));
    }
    let cfg = &params.config;
    if x.dim(1) != cfg.in_channels {
        return Err(Error::shape(
            OP,
            format!("model expects {} channels, input has {}", cfg.in_channels, x.dim(1)),
        ));
    }
    if x.dim(2) < cfg.max_width() {
        return Err(Error::shape(
            OP,
            format!("time extent {} shorter than widest kernel {}", x.dim(2), cfg.max_width()),
        ));
    }
    Ok(())
}

/// Stacked conv → (batch norm) → ReLU blocks followed by global average pooling.
pub fn feature_extract(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    feature_extract_cached(params, x, Mode::Eval).map(|(f, _)| f)
}

pub fn feature_extract_cached(params: &ModelParams, x: &Tensor, mode: Mode) -> Result<(Tensor, FeatureCache)> {
    check_input(params, x)?;
    let mut blocks = Vec::with_capacity(params.weights.conv_blocks.len());
    let mut batch_stats = Vec::with_capacity(blocks.capacity());
    let mut h = x.clone();
    for (i, block) in params.weights.conv_blocks.iter().enumerate() {
        let conv_out = ops::conv1d_forward(&h, &block.kernels, &block.bias, Padding::Same)?;
        let (pre_relu, stats) = match (&block.norm, mode) {
            (None, _) => (conv_out.clone(), None),
            (Some(norm), Mode::Train) => {
                let (y, mean, var) = ops::batch_norm_forward(&conv_out, &norm.gamma, &norm.beta)?;
                (y, Some((mean, var)))
            }
            (Some(norm), Mode::Eval) => {
                let rs = params.running[i]
                    .as_ref()
                    .ok_or_else(|| Error::invalid("batch norm block without running stats"))?;
                (
                    ops::batch_norm_apply(&conv_out, &norm.gamma, &norm.beta, &rs.mean, &rs.var)?,
                    None,
                )
            }
        };
        let out = ops::relu_forward(&pre_relu);
        blocks.push(BlockCache {
            input: h,
            conv_out,
            pre_relu,
        });
        batch_stats.push(stats);
        h = out;
    }
    let features = ops::global_avg_pool(&h)?;
    Ok((
        features,
        FeatureCache {
            blocks,
            pooled_input: h,
            mode,
            batch_stats,
        },
    ))
}

/// Accumulates ∂L/∂θ_f into `grads` given ∂L/∂features.
pub fn feature_backward(params: &ModelParams, cache: &FeatureCache, dfeat: &Tensor, grads: &mut ParamSet) -> Result<()> {
    let mut g = ops::gap_backward(&cache.pooled_input, dfeat)?.input_grads.remove(0);
    for (i, (block, bc)) in params
        .weights
        .conv_blocks
        .iter()
        .zip(&cache.blocks)
        .enumerate()
        .rev()
    {
        g = ops::relu_backward(&bc.pre_relu, &g)?.input_grads.remove(0);
        if let Some(norm) = &block.norm {
            if cache.mode == Mode::Eval {
                return Err(Error::invalid("backward through inference-mode batch norm"));
            }
            let mut bn = ops::batch_norm_backward(&bc.conv_out, &norm.gamma, &norm.beta, &g)?;
            let gn = grads.conv_blocks[i]
                .norm
                .as_mut()
                .ok_or_else(|| Error::shape("feature_backward", "gradient layout lacks batch norm"))?;
            gn.gamma.add_scaled(&bn.input_grads[1], 1.0)?;
            gn.beta.add_scaled(&bn.input_grads[2], 1.0)?;
            g = bn.input_grads.swap_remove(0);
        }
        let mut conv = ops::conv1d_backward(&bc.input, &block.kernels, &block.bias, Padding::Same, &g)?;
        grads.conv_blocks[i].kernels.add_scaled(&conv.input_grads[1], 1.0)?;
        grads.conv_blocks[i].bias.add_scaled(&conv.input_grads[2], 1.0)?;
        g = conv.input_grads.swap_remove(0);
    }
    Ok(())
}

/// Folds freshly observed batch statistics into the running averages.
pub fn update_running_stats(params: &mut ModelParams, cache: &FeatureCache) {
    for (rs, stats) in params.running.iter_mut().zip(&cache.batch_stats) {
        if let (Some(rs), Some((mean, var))) = (rs.as_mut(), stats) {
            for (r, m) in rs.mean.iter_mut().zip(mean) {
                *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * m;
            }
            for (r, v) in rs.var.iter_mut().zip(var) {
                *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * v;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub task_logits: Tensor,
    pub domain_logits: Tensor,
    pub z: Tensor,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    /// Input of every domain-head layer.
    domain_inputs: Vec<Tensor>,
    /// Pre-activation of every hidden domain-head layer.
    domain_pre: Vec<Tensor>,
}

fn check_features(params: &ModelParams, f: &Tensor) -> Result<()> {
    let feat = params.config.feature_dim();
    if f.rank() != 2 || f.dim(1) != feat {
        return Err(Error::shape(
            "heads",
            format!("expected [batch, {feat}] features, got {:?}", f.shape()),
        ));
    }
    Ok(())
}

/// The three heads applied to shared features. The domain head sees the
/// features through the gradient reversal layer, which is the identity here.
pub fn heads(params: &ModelParams, f: &Tensor) -> Result<HeadOutputs> {
    heads_cached(params, f).map(|(h, _)| h)
}

pub fn heads_cached(params: &ModelParams, f: &Tensor) -> Result<(HeadOutputs, HeadCache)> {
    check_features(params, f)?;
    let w = &params.weights;
    let task_logits = ops::affine_forward(f, &w.task_head.w, &w.task_head.b)?;
    let z = ops::affine_forward(f, &w.contrastive_head.w, &w.contrastive_head.b)?;

    let mut domain_inputs = Vec::with_capacity(w.domain_head.len());
    let mut domain_pre = Vec::with_capacity(w.domain_head.len());
    let mut h = grl_forward(f);
    let last = w.domain_head.len() - 1;
    for (i, layer) in w.domain_head.iter().enumerate() {
        let pre = ops::affine_forward(&h, &layer.w, &layer.b)?;
        domain_inputs.push(h);
        if i == last {
            h = pre;
        } else {
            h = ops::relu_forward(&pre);
            domain_pre.push(pre);
        }
    }
    Ok((
        HeadOutputs {
            task_logits,
            domain_logits: h,
            z,
        },
        HeadCache {
            domain_inputs,
            domain_pre,
        },
    ))
}

/// Upstream gradients for each head output; `None` means the output does not
/// reach the loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadGrads<'a> {
    pub task_logits: Option<&'a Tensor>,
    pub domain_logits: Option<&'a Tensor>,
    pub z: Option<&'a Tensor>,
}

/// Backpropagates through the heads, accumulating into `grads`, and returns
/// ∂L/∂features with the domain branch reversed and scaled by `lambda_d`.
pub fn heads_backward(
    params: &ModelParams,
    f: &Tensor,
    cache: &HeadCache,
    upstream: HeadGrads<'_>,
    lambda_d: f64,
    grads: &mut ParamSet,
) -> Result<Tensor> {
    check_features(params, f)?;
    let w = &params.weights;
    let mut df = Tensor::zeros_like(f);
    if let Some(g) = upstream.task_logits {
        let og = ops::affine_backward(f, &w.task_head.w, &w.task_head.b, g)?;
        df.add_scaled(&og.input_grads[0], 1.0)?;
        grads.task_head.w.add_scaled(&og.input_grads[1], 1.0)?;
        grads.task_head.b.add_scaled(&og.input_grads[2], 1.0)?;
    }
    if let Some(g) = upstream.z {
        let og = ops::affine_backward(f, &w.contrastive_head.w, &w.contrastive_head.b, g)?;
        df.add_scaled(&og.input_grads[0], 1.0)?;
        grads.contrastive_head.w.add_scaled(&og.input_grads[1], 1.0)?;
        grads.contrastive_head.b.add_scaled(&og.input_grads[2], 1.0)?;
    }
    if let Some(g) = upstream.domain_logits {
        let mut g = g.clone();
        for i in (0..w.domain_head.len()).rev() {
            if i < w.domain_head.len() - 1 {
                g = ops::relu_backward(&cache.domain_pre[i], &g)?.input_grads.remove(0);
            }
            let layer = &w.domain_head[i];
            let mut og = ops::affine_backward(&cache.domain_inputs[i], &layer.w, &layer.b, &g)?;
            grads.domain_head[i].w.add_scaled(&og.input_grads[1], 1.0)?;
            grads.domain_head[i].b.add_scaled(&og.input_grads[2], 1.0)?;
            g = og.input_grads.swap_remove(0);
        }
        df.add_scaled(&grl_backward(&g, lambda_d), 1.0)?;
    }
    Ok(df)
}

// ---------------------------------------------------------------------------
// gradient reversal

/// Identity.
pub fn grl_forward(x: &Tensor) -> Tensor {
    x.clone()
}

/// `-lambda_d · output_grad`.
pub fn grl_backward(output_grad: &Tensor, lambda_d: f64) -> Tensor {
    let mut g = output_grad.clone();
    g.scale(-lambda_d);
    g
}

/// Training progress for the adversarial weight schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrlSchedule {
    pub gamma: f64,
    /// Fraction of training completed, in `[0, 1]`.
    pub progress: f64,
}

impl GrlSchedule {
    pub const DEFAULT_GAMMA: f64 = 10.0;

    pub fn at(iteration: usize, total: usize) -> Self {
        let progress = if total == 0 {
            1.0
        } else {
            (iteration as f64 / total as f64).clamp(0.0, 1.0)
        };
        Self {
            gamma: Self::DEFAULT_GAMMA,
            progress,
        }
    }
}

/// `2 / (1 + exp(-gamma·progress)) - 1`.
pub fn lambda_schedule(s: &GrlSchedule) -> f64 {
    2.0 / (1.0 + (-s.gamma * s.progress).exp()) - 1.0
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut ModelParams, grads: &ParamSet, cfg: &AdamConfig) -> Result<()> {
    let named_grads = grads.named();
    {
        let named_params = params.weights.named();
        if named_params.len() != named_grads.len() {
            return Err(Error::shape("adam_step", "gradient layout differs from parameters"));
        }
        for ((pname, p), (_, g)) in named_params.iter().zip(&named_grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{pname}: parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {pname}")));
            }
        }
    }

    params.adam.step += 1;
    let t = params.adam.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let weights = params.weights.tensors_mut();
    let first = params.adam.first.tensors_mut();
    let second = params.adam.second.tensors_mut();
    for (((p, m), v), (_, g)) in weights.into_iter().zip(first).zip(second).zip(named_grads) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// variable-length batches

/// Rows grouped by time extent so each group is a dense `[b, ch, time]`
/// tensor. Global average pooling makes the features length-agnostic.
#[derive(Debug, Clone)]
pub struct InputBatch {
    pub groups: Vec<InputGroup>,
    pub rows: usize,
}

#[derive(Debug, Clone)]
pub struct InputGroup {
    pub x: Tensor,
    /// Batch row of each group row.
    pub rows: Vec<usize>,
}

impl InputBatch {
    /// Builds a batch from channel-major windows (`channels × time` each).
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = (&'a [f64], usize)>) -> Result<Self> {
        let mut groups: Vec<(usize, usize, Vec<usize>, Vec<f64>)> = Vec::new();
        let mut rows = 0;
        for (row, (values, channels)) in windows.into_iter().enumerate() {
            if channels == 0 || values.is_empty() || values.len() % channels != 0 {
                return Err(Error::shape(
                    "InputBatch",
                    format!("row {row}: {} values for {channels} channels", values.len()),
                ));
            }
            let time = values.len() / channels;
            match groups.iter_mut().find(|g| g.0 == time && g.1 == channels) {
                Some(g) => {
                    g.2.push(row);
                    g.3.extend_from_slice(values);
                }
                None => groups.push((time, channels, vec![row], values.to_vec())),
            }
            rows += 1;
        }
        let groups = groups
            .into_iter()
            .map(|(time, ch, r, data)| {
                Ok(InputGroup {
                    x: Tensor::new(vec![r.len(), ch, time], data)?,
                    rows: r,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { groups, rows })
    }
}

/// Features for every row of a (possibly ragged) batch.
pub fn forward_batch(params: &ModelParams, batch: &InputBatch, mode: Mode) -> Result<(Tensor, Vec<FeatureCache>)> {
    let feat = params.config.feature_dim();
    let mut out = Tensor::zeros(&[batch.rows.max(1), feat]);
    let mut caches = Vec::with_capacity(batch.groups.len());
    for g in &batch.groups {
        let (f, cache) = feature_extract_cached(params, &g.x, mode)?;
        for (i, &r) in g.rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(f.row(i));
        }
        caches.push(cache);
    }
    Ok((out, caches))
}

pub fn backward_batch(
    params: &ModelParams,
    batch: &InputBatch,
    caches: &[FeatureCache],
    dfeat: &Tensor,
    grads: &mut ParamSet,
) -> Result<()> {
    for (g, cache) in batch.groups.iter().zip(caches) {
        let d = dfeat.select_rows(&g.rows)?;
        feature_backward(params, cache, &d, grads)?;
    }
    Ok(())
}
