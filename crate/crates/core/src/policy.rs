//! Forward-only policy networks. Search perturbs the flat parameter
//! vector, so no gradients or training-mode statistics exist here.
//!
//! Layers are bias-free; the normalization shift plays that role.
//! Normalization uses reference statistics frozen once from a batch of
//! states gathered under random play, then applied unchanged to every
//! single-state forward pass.
//!
//! Flat parameter layout, fixed so vector and layers are a bijection:
//! for each layer in order, weights first (conv kernels as
//! `[out_channel][in_channel][ky][kx]`, dense as `[output][input]`),
//! then the normalization shift (one entry per feature), then the
//! scale if the layer has one. Conv features are output channels;
//! dense features are output units.

use crate::error::{Error, Result};
use crate::preprocess::StateTensor;
use crate::rng::normal_from_bits;
use crate::seeds;
use crate::vector::ParamVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Variance floor inside the normalization square root.
pub const EPS_BN: f32 = 1e-5;
/// Initialization draws weights from N(0, INIT_STD^2).
pub const INIT_STD: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    /// No normalization on this layer.
    Off,
    /// Normalize with reference statistics, then add a trainable shift.
    Shift,
    /// Normalize, multiply by a trainable scale, then add the shift.
    ShiftScale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv { out_channels: usize, kernel: usize, stride: usize },
    Dense { outputs: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
    pub norm: Norm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InputShape {
    Image { height: usize, width: usize, channels: usize },
    Vector { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub input: InputShape,
    pub layers: Vec<Layer>,
    pub actions: usize,
}

/// One network input. Images are plane-major state tensors; vectors
/// are plain feature slices.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyInput {
    Image(StateTensor),
    Vector(Vec<f32>),
}

/// Frozen normalization statistics for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub layer: usize,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Per-layer reference statistics; empty when the spec has no
/// normalized layers.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub layers: Vec<NormStats>,
}

impl ReferenceStats {
    pub fn empty() -> Self {
        ReferenceStats { layers: Vec::new() }
    }

    fn for_layer(&self, layer: usize) -> Option<&NormStats> {
        self.layers.iter().find(|s| s.layer == layer)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Shape {
    Image { height: usize, width: usize, channels: usize },
    Vector { dim: usize },
}

impl Shape {
    fn len(&self) -> usize {
        match self {
            Shape::Image { height, width, channels } => height * width * channels,
            Shape::Vector { dim } => *dim,
        }
    }
}

/// Resolved layout for one layer: activation shapes and where its
/// parameters live in the flat vector.
struct LayerPlan {
    kind: LayerKind,
    activation: Activation,
    norm: Norm,
    in_shape: Shape,
    out_shape: Shape,
    weights: Range<usize>,
    shift: Option<Range<usize>>,
    scale: Option<Range<usize>>,
    features: usize,
}

impl PolicySpec {
    /// DQN-shaped conv net for 84x84x4 inputs: 8x8/4 -> 4x4/2 ->
    /// 3x3/1 -> dense 512 -> dense actions, ELU throughout,
    /// normalization on every layer, scale on the last.
    pub fn atari(actions: usize) -> Self {
        let conv = |out_channels, kernel, stride| Layer {
            kind: LayerKind::Conv { out_channels, kernel, stride },
            activation: Activation::Elu,
            norm: Norm::Shift,
        };
        PolicySpec {
            input: InputShape::Image { height: 84, width: 84, channels: 4 },
            layers: vec![
                conv(32, 8, 4),
                conv(64, 4, 2),
                conv(64, 3, 1),
                Layer {
                    kind: LayerKind::Dense { outputs: 512 },
                    activation: Activation::Elu,
                    norm: Norm::Shift,
                },
                Layer {
                    kind: LayerKind::Dense { outputs: actions },
                    activation: Activation::None,
                    norm: Norm::ShiftScale,
                },
            ],
            actions,
        }
    }

    /// Small conv net for 84x84x4 inputs, cheap enough for per-step
    /// forwards in tests and toy environments.
    pub fn compact_frame(actions: usize) -> Self {
        PolicySpec {
            input: InputShape::Image { height: 84, width: 84, channels: 4 },
            layers: vec![
                Layer {
                    kind: LayerKind::Conv { out_channels: 4, kernel: 8, stride: 8 },
                    activation: Activation::Elu,
                    norm: Norm::Shift,
                },
                Layer {
                    kind: LayerKind::Dense { outputs: 32 },
                    activation: Activation::Elu,
                    norm: Norm::Shift,
                },
                Layer {
                    kind: LayerKind::Dense { outputs: actions },
                    activation: Activation::None,
                    norm: Norm::ShiftScale,
                },
            ],
            actions,
        }
    }

    /// Plain MLP: ELU hidden layers, linear output, no normalization.
    pub fn mlp(input_dim: usize, hidden: &[usize], actions: usize) -> Self {
        let mut layers: Vec<Layer> = hidden
            .iter()
            .map(|&outputs| Layer {
                kind: LayerKind::Dense { outputs },
                activation: Activation::Elu,
                norm: Norm::Off,
            })
            .collect();
        layers.push(Layer {
            kind: LayerKind::Dense { outputs: actions },
            activation: Activation::None,
            norm: Norm::Off,
        });
        PolicySpec { input: InputShape::Vector { dim: input_dim }, layers, actions }
    }

    pub fn validate(&self) -> Result<()> {
        plan(self).map(|_| ())
    }

    /// Exact number of entries in the flat parameter vector.
    pub fn param_count(&self) -> Result<usize> {
        Ok(plan(self)?.1)
    }
}

fn plan(spec: &PolicySpec) -> Result<(Vec<LayerPlan>, usize)> {
    if spec.actions == 0 {
        return Err(Error::invalid_config("action count must be positive"));
    }
    if spec.layers.is_empty() {
        return Err(Error::invalid_config("policy needs at least one layer"));
    }
    let mut shape = match spec.input {
        InputShape::Image { height, width, channels } => {
            if height == 0 || width == 0 || channels == 0 {
                return Err(Error::invalid_config("input shape must be positive"));
            }
            Shape::Image { height, width, channels }
        }
        InputShape::Vector { dim } => {
            if dim == 0 {
                return Err(Error::invalid_config("input shape must be positive"));
            }
            Shape::Vector { dim }
        }
    };
    let mut offset = 0usize;
    let mut plans = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let in_shape = shape.clone();
        let (out_shape, weight_len, features) = match layer.kind {
            LayerKind::Conv { out_channels, kernel, stride } => {
                let Shape::Image { height, width, channels } = in_shape else {
                    return Err(Error::invalid_config(format!(
                        "layer {i}: conv requires an unflattened image input"
                    )));
                };
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::invalid_config(format!(
                        "layer {i}: conv dimensions must be positive"
                    )));
                }
                if kernel > height || kernel > width {
                    return Err(Error::invalid_config(format!(
                        "layer {i}: kernel {kernel} exceeds input {height}x{width}"
                    )));
                }
                let out_h = (height - kernel) / stride + 1;
                let out_w = (width - kernel) / stride + 1;
                (
                    Shape::Image { height: out_h, width: out_w, channels: out_channels },
                    out_channels * channels * kernel * kernel,
                    out_channels,
                )
            }
            LayerKind::Dense { outputs } => {
                if outputs == 0 {
                    return Err(Error::invalid_config(format!(
                        "layer {i}: dense outputs must be positive"
                    )));
                }
                let inputs = in_shape.len();
                (Shape::Vector { dim: outputs }, outputs * inputs, outputs)
            }
        };
        let weights = offset..offset + weight_len;
        offset = weights.end;
        let (shift, scale) = match layer.norm {
            Norm::Off => (None, None),
            Norm::Shift => {
                let s = offset..offset + features;
                offset = s.end;
                (Some(s), None)
            }
            Norm::ShiftScale => {
                let sh = offset..offset + features;
                let sc = sh.end..sh.end + features;
                offset = sc.end;
                (Some(sh), Some(sc))
            }
        };
        plans.push(LayerPlan {
            kind: layer.kind,
            activation: layer.activation,
            norm: layer.norm,
            in_shape,
            out_shape: out_shape.clone(),
            weights,
            shift,
            scale,
            features,
        });
        shape = out_shape;
    }
    let Shape::Vector { dim } = shape else {
        return Err(Error::invalid_config("final layer must be dense"));
    };
    if dim != spec.actions {
        return Err(Error::invalid_config(format!(
            "final layer emits {dim} values but the spec declares {} actions",
            spec.actions
        )));
    }
    match spec.layers.last().map(|l| l.kind) {
        Some(LayerKind::Dense { .. }) => {}
        _ => return Err(Error::invalid_config("final layer must be dense")),
    }
    Ok((plans, offset))
}

/// Weights drawn i.i.d. N(0, 0.05^2); shifts start at 0, scales at 1.
/// Deterministic per seed.
pub fn init_params(spec: &PolicySpec, seed: u64) -> Result<ParamVector> {
    let (plans, total) = plan(spec)?;
    let mut rng = seeds::init_stream(seed);
    let mut values = vec![0.0f32; total];
    for lp in &plans {
        for slot in &mut values[lp.weights.clone()] {
            *slot = INIT_STD * normal_from_bits(rng.next_u64());
        }
        if let Some(scale) = &lp.scale {
            for slot in &mut values[scale.clone()] {
                *slot = 1.0;
            }
        }
    }
    ParamVector::new(values)
}

enum NormMode<'a> {
    Frozen(&'a ReferenceStats),
    Collect(&'a mut Vec<NormStats>),
}

/// Runs a batch through the network. In `Collect` mode each
/// normalized layer's pre-normalization batch statistics are computed,
/// recorded, and used immediately; in `Frozen` mode the provided
/// statistics are applied.
fn run_network(
    spec: &PolicySpec,
    params: &ParamVector,
    inputs: &[&PolicyInput],
    mut mode: NormMode,
) -> Result<Vec<Vec<f32>>> {
    let (plans, total) = plan(spec)?;
    params.check_dim(total)?;
    if inputs.is_empty() {
        return Err(Error::invalid_config("network input batch is empty"));
    }
    let mut batch: Vec<Vec<f32>> = Vec::with_capacity(inputs.len());
    for input in inputs {
        batch.push(check_input(spec, input)?);
    }
    let weights = params.as_slice();
    for (li, lp) in plans.iter().enumerate() {
        let w = &weights[lp.weights.clone()];
        for act in &mut batch {
            *act = match lp.kind {
                LayerKind::Conv { out_channels, kernel, stride } => {
                    conv_forward(act, &lp.in_shape, w, out_channels, kernel, stride)
                }
                LayerKind::Dense { outputs } => dense_forward(act, w, outputs),
            };
        }
        if lp.norm != Norm::Off {
            let (mean, var) = match &mut mode {
                NormMode::Frozen(stats) => {
                    let s = stats.for_layer(li).ok_or_else(|| {
                        Error::invalid_config(format!(
                            "reference statistics missing for layer {li}"
                        ))
                    })?;
                    if s.mean.len() != lp.features || s.var.len() != lp.features {
                        return Err(Error::DimensionMismatch {
                            expected: lp.features,
                            got: s.mean.len(),
                        });
                    }
                    (s.mean.clone(), s.var.clone())
                }
                NormMode::Collect(recorded) => {
                    let (mean, var) = batch_stats(&batch, &lp.out_shape, lp.features);
                    recorded.push(NormStats { layer: li, mean: mean.clone(), var: var.clone() });
                    (mean, var)
                }
            };
            let shift = &weights[lp.shift.clone().expect("norm layers have a shift")];
            let scale = lp.scale.clone().map(|r| &weights[r]);
            for act in &mut batch {
                apply_norm(act, &lp.out_shape, lp.features, &mean, &var, shift, scale);
            }
        }
        if lp.activation == Activation::Elu {
            for act in &mut batch {
                for v in act.iter_mut() {
                    if *v < 0.0 {
                        *v = v.exp_m1();
                    }
                }
            }
        }
    }
    Ok(batch)
}

fn check_input(spec: &PolicySpec, input: &PolicyInput) -> Result<Vec<f32>> {
    match (&spec.input, input) {
        (&InputShape::Image { height, width, channels }, PolicyInput::Image(t)) => {
            if t.height() != height || t.width() != width || t.channels() != channels {
                return Err(Error::invalid_config(format!(
                    "state tensor {}x{}x{} does not match the spec input {height}x{width}x{channels}",
                    t.height(),
                    t.width(),
                    t.channels()
                )));
            }
            Ok(t.data().to_vec())
        }
        (&InputShape::Vector { dim }, PolicyInput::Vector(v)) => {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            Ok(v.clone())
        }
        _ => Err(Error::invalid_config("input kind does not match the spec input shape")),
    }
}

/// Valid-padding convolution on plane-major data, kernels laid out
/// `[out_channel][in_channel][ky][kx]`.
fn conv_forward(
    input: &[f32],
    in_shape: &Shape,
    weights: &[f32],
    out_channels: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f32> {
    let &Shape::Image { height, width, channels } = in_shape else {
        unreachable!("plan rejects conv on flattened input");
    };
    let out_h = (height - kernel) / stride + 1;
    let out_w = (width - kernel) / stride + 1;
    let mut out = vec![0.0f32; out_channels * out_h * out_w];
    let k2 = kernel * kernel;
    for oc in 0..out_channels {
        let w_oc = &weights[oc * channels * k2..(oc + 1) * channels * k2];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0f32;
                for ic in 0..channels {
                    let plane = &input[ic * height * width..(ic + 1) * height * width];
                    let w_ic = &w_oc[ic * k2..(ic + 1) * k2];
                    for ky in 0..kernel {
                        let row = (oy * stride + ky) * width + ox * stride;
                        let w_row = &w_ic[ky * kernel..(ky + 1) * kernel];
                        let in_row = &plane[row..row + kernel];
                        for (wv, iv) in w_row.iter().zip(in_row) {
                            acc += wv * iv;
                        }
                    }
                }
                out[(oc * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    out
}

/// Dense layer, weights laid out `[output][input]`.
fn dense_forward(input: &[f32], weights: &[f32], outputs: usize) -> Vec<f32> {
    let inputs = input.len();
    let mut out = vec![0.0f32; outputs];
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &weights[o * inputs..(o + 1) * inputs];
        let mut acc = 0.0f32;
        for (wv, iv) in row.iter().zip(input) {
            acc += wv * iv;
        }
        *slot = acc;
    }
    out
}

/// Per-feature mean and population variance over the batch; conv
/// features aggregate over batch and spatial positions.
fn batch_stats(batch: &[Vec<f32>], shape: &Shape, features: usize) -> (Vec<f32>, Vec<f32>) {
    let spatial = shape.len() / features;
    let n = (batch.len() * spatial) as f64;
    let mut mean = vec![0.0f64; features];
    for act in batch {
        for f in 0..features {
            for &v in &act[f * spatial..(f + 1) * spatial] {
                mean[f] += v as f64;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0f64; features];
    for act in batch {
        for f in 0..features {
            for &v in &act[f * spatial..(f + 1) * spatial] {
                let d = v as f64 - mean[f];
                var[f] += d * d;
            }
        }
    }
    for v in &mut var {
        *v = (*v / n).max(0.0);
    }
    (
        mean.into_iter().map(|m| m as f32).collect(),
        var.into_iter().map(|v| v as f32).collect(),
    )
}

/// `y = scale * (x - mean) / sqrt(var + eps) + shift`, per feature.
/// Conv features span their whole spatial plane.
fn apply_norm(
    act: &mut [f32],
    shape: &Shape,
    features: usize,
    mean: &[f32],
    var: &[f32],
    shift: &[f32],
    scale: Option<&[f32]>,
) {
    let spatial = shape.len() / features;
    for f in 0..features {
        let inv = 1.0 / (var[f] + EPS_BN).sqrt();
        let g = scale.map_or(1.0, |s| s[f]);
        for v in &mut act[f * spatial..(f + 1) * spatial] {
            *v = g * ((*v - mean[f]) * inv) + shift[f];
        }
    }
}

/// Runs the batch through the network once and freezes each
/// normalized layer's statistics for later single-state forwards.
pub fn freeze_reference_stats(
    spec: &PolicySpec,
    params: &ParamVector,
    batch: &[PolicyInput],
) -> Result<ReferenceStats> {
    if batch.is_empty() {
        return Err(Error::invalid_config("reference batch is empty"));
    }
    let refs: Vec<&PolicyInput> = batch.iter().collect();
    let mut recorded = Vec::new();
    run_network(spec, params, &refs, NormMode::Collect(&mut recorded))?;
    Ok(ReferenceStats { layers: recorded })
}

/// Pure single-state forward pass under frozen statistics; returns one
/// score per action.
pub fn forward(
    spec: &PolicySpec,
    params: &ParamVector,
    stats: &ReferenceStats,
    input: &PolicyInput,
) -> Result<Vec<f32>> {
    let out = run_network(spec, params, &[input], NormMode::Frozen(stats))?;
    Ok(out.into_iter().next().expect("one output per input"))
}

/// Argmax with ties resolved to the lowest index.
pub fn select_action(scores: &[f32]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid_config("empty action-score vector"));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("action scores contain NaN".into()));
    }
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    Ok(best)
}
