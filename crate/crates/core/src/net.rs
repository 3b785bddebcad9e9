//! Declarative feed-forward networks built from the kernels in [`crate::ops`].
//!
//! Every layer reads its input in the precision its plan entry assigns, so a
//! binary16 convolution feeding a batch norm hands it a binary16 tensor that is
//! widened (exactly) before normalization.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, BnParams, ConvSpec};
use crate::planner::{LayerEntry, LayerManifest, OpKind, PrecisionPlan};
use crate::tensor::{Precision, Tensor};

/// Name of the loss node appended to every manifest.
pub const LOSS_NODE: &str = "loss";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// `[in] -> [out]` affine map; trailing input dims are flattened.
    Linear {
        name: String,
        inputs: usize,
        outputs: usize,
    },
    Conv {
        name: String,
        conv: ConvSpec,
    },
    BatchNorm {
        name: String,
        channels: usize,
    },
    Relu {
        name: String,
    },
    AvgPool {
        name: String,
        kh: usize,
        kw: usize,
    },
    /// `x + body(x)`; the body must preserve the shape.
    Residual {
        name: String,
        body: Vec<LayerSpec>,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Linear { name, .. }
            | LayerSpec::Conv { name, .. }
            | LayerSpec::BatchNorm { name, .. }
            | LayerSpec::Relu { name }
            | LayerSpec::AvgPool { name, .. }
            | LayerSpec::Residual { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape, without the batch dimension.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

fn param_key(layer: &str, what: &str) -> String {
    format!("{layer}.{what}")
}

/// Layer that owns a parameter key.
pub fn param_layer(key: &str) -> &str {
    key.rsplit_once('.').map_or(key, |(layer, _)| layer)
}

impl NetworkSpec {
    /// Pointwise → BN → ReLU → depthwise 3×3 → BN → ReLU → residual
    /// (pointwise → BN) → ReLU → global average pool → linear embedding.
    pub fn separable(input_shape: [usize; 3], width: usize, embed_dim: usize) -> Self {
        let [c, h, w] = input_shape;
        let s = |n: &str| n.to_string();
        NetworkSpec {
            input_shape: input_shape.to_vec(),
            layers: vec![
                LayerSpec::Conv {
                    name: s("pw1"),
                    conv: ConvSpec::pointwise(c, width),
                },
                LayerSpec::BatchNorm {
                    name: s("bn1"),
                    channels: width,
                },
                LayerSpec::Relu { name: s("relu1") },
                LayerSpec::Conv {
                    name: s("dw"),
                    conv: ConvSpec::depthwise(3, width),
                },
                LayerSpec::BatchNorm {
                    name: s("bn2"),
                    channels: width,
                },
                LayerSpec::Relu { name: s("relu2") },
                LayerSpec::Residual {
                    name: s("res"),
                    body: vec![
                        LayerSpec::Conv {
                            name: s("pw2"),
                            conv: ConvSpec::pointwise(width, width),
                        },
                        LayerSpec::BatchNorm {
                            name: s("bn3"),
                            channels: width,
                        },
                    ],
                },
                LayerSpec::Relu { name: s("relu3") },
                LayerSpec::AvgPool {
                    name: s("pool"),
                    kh: h,
                    kw: w,
                },
                LayerSpec::Linear {
                    name: s("fc"),
                    inputs: width,
                    outputs: embed_dim,
                },
            ],
        }
    }

    /// Two-layer perceptron `fc1 → ReLU → fc2`.
    pub fn mlp(inputs: usize, hidden: usize, embed_dim: usize) -> Self {
        NetworkSpec {
            input_shape: vec![inputs],
            layers: vec![
                LayerSpec::Linear {
                    name: "fc1".into(),
                    inputs,
                    outputs: hidden,
                },
                LayerSpec::Relu {
                    name: "relu1".into(),
                },
                LayerSpec::Linear {
                    name: "fc2".into(),
                    inputs: hidden,
                    outputs: embed_dim,
                },
            ],
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Shape-checked layer list with parameter counts, followed by the loss node.
    pub fn manifest(&self) -> Result<LayerManifest> {
        let mut entries = Vec::new();
        infer(&self.layers, self.input_shape.clone(), &mut entries)?;
        entries.push(LayerEntry::new(LOSS_NODE, OpKind::Loss, 0));
        LayerManifest::new(entries)
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        infer(&self.layers, self.input_shape.clone(), &mut Vec::new())
    }

    pub fn embed_dim(&self) -> Result<usize> {
        Ok(self.output_shape()?.iter().product())
    }

    /// Parameter keys and shapes, in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        collect_params(&self.layers, &mut out);
        out
    }

    pub fn batchnorm_layers(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        collect_bn(&self.layers, &mut out);
        out
    }
}

fn infer(
    layers: &[LayerSpec],
    mut shape: Vec<usize>,
    entries: &mut Vec<LayerEntry>,
) -> Result<Vec<usize>> {
    for layer in layers {
        let name = layer.name();
        let mismatch = |what: String| Error::ShapeMismatch(format!("layer `{name}`: {what}"));
        match layer {
            LayerSpec::Linear {
                inputs, outputs, ..
            } => {
                let flat: usize = shape.iter().product();
                if flat != *inputs {
                    return Err(mismatch(format!("expects {inputs} inputs, gets {shape:?}")));
                }
                entries.push(LayerEntry::new(
                    name,
                    OpKind::Linear,
                    (inputs * outputs + outputs) as u64,
                ));
                shape = vec![*outputs];
            }
            LayerSpec::Conv { conv, .. } => {
                conv.validate()?;
                let &[c, h, w] = shape.as_slice() else {
                    return Err(mismatch(format!(
                        "convolution needs [C, H, W], gets {shape:?}"
                    )));
                };
                if c != conv.in_channels {
                    return Err(mismatch(format!(
                        "expects {} channels, gets {c}",
                        conv.in_channels
                    )));
                }
                let (oh, ow) = conv.output_hw(h, w)?;
                let op = match conv.kind {
                    ops::ConvKind::Standard => OpKind::Conv,
                    ops::ConvKind::Depthwise => OpKind::DepthwiseConv,
                    ops::ConvKind::Pointwise => OpKind::PointwiseConv,
                };
                entries.push(
                    LayerEntry::new(name, op, conv.weight_count() as u64).with_conv(*conv, oh, ow),
                );
                shape = vec![conv.out_channels, oh, ow];
            }
            LayerSpec::BatchNorm { channels, .. } => {
                if shape.first() != Some(channels) {
                    return Err(mismatch(format!(
                        "expects {channels} channels, gets {shape:?}"
                    )));
                }
                // gamma, beta and both running statistics
                entries.push(LayerEntry::new(
                    name,
                    OpKind::BatchNorm,
                    4 * *channels as u64,
                ));
            }
            LayerSpec::Relu { .. } => entries.push(LayerEntry::new(name, OpKind::ReLU, 0)),
            LayerSpec::AvgPool { kh, kw, .. } => {
                let &[c, h, w] = shape.as_slice() else {
                    return Err(mismatch(format!("pooling needs [C, H, W], gets {shape:?}")));
                };
                if *kh == 0 || *kw == 0 || h % kh != 0 || w % kw != 0 {
                    return Err(mismatch(format!("{kh}x{kw} windows do not tile {h}x{w}")));
                }
                entries.push(LayerEntry::new(name, OpKind::AvgPool, 0));
                shape = vec![c, h / kh, w / kw];
            }
            LayerSpec::Residual { body, .. } => {
                let out = infer(body, shape.clone(), entries)?;
                if out != shape {
                    return Err(mismatch(format!("body maps {shape:?} to {out:?}")));
                }
                entries.push(LayerEntry::new(name, OpKind::ResidualAdd, 0));
            }
        }
    }
    Ok(shape)
}

fn collect_params(layers: &[LayerSpec], out: &mut Vec<(String, Vec<usize>)>) {
    for layer in layers {
        match layer {
            LayerSpec::Linear {
                name,
                inputs,
                outputs,
            } => {
                out.push((param_key(name, "weight"), vec![*inputs, *outputs]));
                out.push((param_key(name, "bias"), vec![*outputs]));
            }
            LayerSpec::Conv { name, conv } => {
                out.push((param_key(name, "weight"), ops::conv_weight_shape(conv)));
            }
            LayerSpec::BatchNorm { name, channels } => {
                out.push((param_key(name, "gamma"), vec![*channels]));
                out.push((param_key(name, "beta"), vec![*channels]));
            }
            LayerSpec::Residual { body, .. } => collect_params(body, out),
            LayerSpec::Relu { .. } | LayerSpec::AvgPool { .. } => {}
        }
    }
}

fn collect_bn(layers: &[LayerSpec], out: &mut Vec<(String, usize)>) {
    for layer in layers {
        match layer {
            LayerSpec::BatchNorm { name, channels } => out.push((name.clone(), *channels)),
            LayerSpec::Residual { body, .. } => collect_bn(body, out),
            _ => {}
        }
    }
}

/// Named parameter tensors.
pub type ParamSet = IndexMap<String, Tensor>;

/// Running mean and variance per batch-norm layer.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BnStats {
    pub layers: IndexMap<String, (Vec<f32>, Vec<f32>)>,
}

impl BnStats {
    pub fn new(spec: &NetworkSpec) -> Self {
        BnStats {
            layers: spec
                .batchnorm_layers()
                .into_iter()
                .map(|(name, c)| (name, (vec![0.0; c], vec![1.0; c])))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)` for weights, zero biases, unit BN scale.
    KaimingUniform { seed: u64 },
    /// Every parameter zero.
    Zeros,
}

/// Binary32 parameters for `spec`.
pub fn init_params(spec: &NetworkSpec, init: Init) -> ParamSet {
    let mut rng = match init {
        Init::KaimingUniform { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Init::Zeros => None,
    };
    spec.param_shapes()
        .into_iter()
        .map(|(key, shape)| {
            let n: usize = shape.iter().product();
            let data = match (&mut rng, key.rsplit_once('.').map(|(_, w)| w)) {
                (None, _) => vec![0.0; n],
                (Some(_), Some("gamma")) => vec![1.0; n],
                (Some(_), Some("beta" | "bias")) => vec![0.0; n],
                (Some(rng), _) => {
                    // conv [N, M/g, K, K] and linear [in, out] weights
                    let fan_in = if shape.len() == 4 {
                        shape[1] * shape[2] * shape[3]
                    } else {
                        shape[0]
                    };
                    let bound = (6.0 / fan_in as f32).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
                }
            };
            let t = Tensor::from_vec(shape, data).expect("shape and data agree");
            (key, t)
        })
        .collect()
}

/// Batched output shape `[n, ...output_shape]`.
pub fn forward_output_shape(spec: &NetworkSpec, n: usize) -> Result<Vec<usize>> {
    let mut shape = vec![n];
    shape.extend(spec.output_shape()?);
    Ok(shape)
}

/// Activations kept for the backward pass, one per layer.
#[derive(Clone, Debug)]
enum Saved {
    Input(Tensor),
    Pool(Vec<usize>),
    Residual(Vec<Saved>),
}

/// Forward state needed by [`backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    saved: Vec<Saved>,
}

struct Ctx<'a> {
    plan: &'a PrecisionPlan,
    params: &'a ParamSet,
}

impl Ctx<'_> {
    fn mode(&self, layer: &str) -> Result<Precision> {
        self.plan
            .get(layer)
            .ok_or_else(|| Error::InvalidSpec(format!("plan does not cover layer `{layer}`")))
    }

    fn param(&self, layer: &str, what: &str) -> Result<&Tensor> {
        let key = param_key(layer, what);
        self.params
            .get(&key)
            .ok_or_else(|| Error::InvalidSpec(format!("missing parameter `{key}`")))
    }

    fn bn_params(&self, layer: &str, stats: &BnStats) -> Result<BnParams> {
        let (mean, var) = stats.layers.get(layer).ok_or_else(|| {
            Error::InvalidSpec(format!("missing running statistics for `{layer}`"))
        })?;
        Ok(BnParams {
            gamma: self.param(layer, "gamma")?.data().to_vec(),
            beta: self.param(layer, "beta")?.data().to_vec(),
            running_mean: mean.clone(),
            running_var: var.clone(),
            ..BnParams::new(mean.len())
        })
    }
}

/// Runs `spec` on a batch `[N, ...input_shape]`.
///
/// In training mode batch statistics normalize and are folded into `stats`;
/// otherwise `stats` is read only.
pub fn forward(
    spec: &NetworkSpec,
    plan: &PrecisionPlan,
    params: &ParamSet,
    stats: &mut BnStats,
    x: &Tensor,
    training: bool,
) -> Result<(Tensor, Tape)> {
    if x.shape().get(1..) != Some(spec.input_shape.as_slice()) {
        return Err(Error::ShapeMismatch(format!(
            "network input {:?}, expected [N, {:?}]",
            x.shape(),
            spec.input_shape
        )));
    }
    let ctx = Ctx { plan, params };
    let mut saved = Vec::with_capacity(spec.layers.len());
    let y = run_forward(&spec.layers, &ctx, stats, x.clone(), training, &mut saved)?;
    Ok((y, Tape { saved }))
}

fn run_forward(
    layers: &[LayerSpec],
    ctx: &Ctx,
    stats: &mut BnStats,
    mut x: Tensor,
    training: bool,
    saved: &mut Vec<Saved>,
) -> Result<Tensor> {
    for layer in layers {
        let name = layer.name();
        let mode = ctx.mode(name)?;
        let input = x.into_mode(mode);
        x = match layer {
            LayerSpec::Linear { .. } => {
                let y = ops::linear_forward(
                    &input,
                    ctx.param(name, "weight")?,
                    ctx.param(name, "bias")?,
                    mode,
                )?;
                saved.push(Saved::Input(input));
                y
            }
            LayerSpec::Conv { conv, .. } => {
                let y = ops::conv2d_forward(&input, ctx.param(name, "weight")?, conv, mode)?;
                saved.push(Saved::Input(input));
                y
            }
            LayerSpec::BatchNorm { .. } => {
                let mut p = ctx.bn_params(name, stats)?;
                let y = ops::batchnorm_forward(&input, &mut p, training)?;
                if training {
                    stats
                        .layers
                        .insert(name.to_string(), (p.running_mean, p.running_var));
                }
                saved.push(Saved::Input(input));
                y
            }
            LayerSpec::Relu { .. } => {
                let y = ops::relu(&input);
                saved.push(Saved::Input(input));
                y
            }
            LayerSpec::AvgPool { kh, kw, .. } => {
                let y = ops::avgpool2d(&input, *kh, *kw)?;
                saved.push(Saved::Pool(input.shape().to_vec()));
                y
            }
            LayerSpec::Residual { body, .. } => {
                let mut inner = Vec::with_capacity(body.len());
                let fx = run_forward(body, ctx, stats, input.clone(), training, &mut inner)?;
                saved.push(Saved::Residual(inner));
                ops::residual_add(&input, &fx.into_mode(mode))?
            }
        };
    }
    Ok(x)
}

/// Parameter gradients for `grad_out = ∂L/∂y`, each returned in binary32.
///
/// Gradients of binary16 layers pass through binary16 storage first, so they
/// carry exactly the rounding a half-precision backward pass would.
pub fn backward(
    spec: &NetworkSpec,
    plan: &PrecisionPlan,
    params: &ParamSet,
    stats: &BnStats,
    tape: Tape,
    grad_out: &Tensor,
) -> Result<ParamSet> {
    let ctx = Ctx { plan, params };
    let mut grads = ParamSet::new();
    run_backward(
        &spec.layers,
        &ctx,
        stats,
        tape.saved,
        grad_out.clone(),
        &mut grads,
    )?;
    // report in declaration order
    let mut ordered = ParamSet::with_capacity(grads.len());
    for (key, _) in spec.param_shapes() {
        let g = grads
            .swap_remove(&key)
            .ok_or_else(|| Error::InvalidSpec(format!("no gradient for `{key}`")))?;
        ordered.insert(key, g.into_mode(Precision::Binary32));
    }
    Ok(ordered)
}

fn run_backward(
    layers: &[LayerSpec],
    ctx: &Ctx,
    stats: &BnStats,
    saved: Vec<Saved>,
    mut g: Tensor,
    grads: &mut ParamSet,
) -> Result<Tensor> {
    if saved.len() != layers.len() {
        return Err(Error::InvalidArgument(
            "tape does not match the network".into(),
        ));
    }
    for (layer, state) in layers.iter().zip(saved).rev() {
        let name = layer.name();
        let mode = ctx.mode(name)?;
        g = match (layer, state) {
            (LayerSpec::Linear { .. }, Saved::Input(x)) => {
                let r = ops::linear_backward(&x, ctx.param(name, "weight")?, &g, mode)?;
                grads.insert(param_key(name, "weight"), r.w);
                grads.insert(param_key(name, "bias"), r.b);
                r.x
            }
            (LayerSpec::Conv { conv, .. }, Saved::Input(x)) => {
                let (gx, gw) =
                    ops::conv2d_backward(&x, ctx.param(name, "weight")?, &g, conv, mode)?;
                grads.insert(param_key(name, "weight"), gw);
                gx
            }
            (LayerSpec::BatchNorm { .. }, Saved::Input(x)) => {
                let p = ctx.bn_params(name, stats)?;
                let r = ops::batchnorm_backward(&x, &p, &g.into_mode(mode))?;
                let c = r.gamma.len();
                grads.insert(
                    param_key(name, "gamma"),
                    Tensor::from_vec(vec![c], r.gamma)?,
                );
                grads.insert(param_key(name, "beta"), Tensor::from_vec(vec![c], r.beta)?);
                r.x
            }
            (LayerSpec::Relu { .. }, Saved::Input(x)) => {
                ops::relu_backward(&x, &g.into_mode(mode))?
            }
            (LayerSpec::AvgPool { kh, kw, .. }, Saved::Pool(shape)) => {
                ops::avgpool2d_backward(&shape, &g.into_mode(mode), *kh, *kw)?
            }
            (LayerSpec::Residual { body, .. }, Saved::Residual(inner)) => {
                let (skip, branch) = ops::residual_add_backward(&g.into_mode(mode));
                let through = run_backward(body, ctx, stats, inner, branch, grads)?;
                let data = skip
                    .data()
                    .iter()
                    .zip(through.data())
                    .map(|(a, b)| a + b)
                    .collect();
                Tensor::new(skip.shape().to_vec(), data, mode)?
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "tape entry does not match layer `{name}`"
                )))
            }
        };
    }
    Ok(g)
}
