//! Layered networks described by a flat list of [`LayerSpec`]s, evaluated on a
//! [`Tape`]. Branching (residual skips) is expressed through back-references
//! to earlier layer outputs.

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Where a layer reads its primary input from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Previous,
    Input,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// Square-kernel convolution with "same" padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Relu,
    AvgPool {
        size: usize,
    },
    /// Adds the output of another node to this layer's source.
    SkipSum {
        with: Source,
    },
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub source: Source,
    pub nonneg_constrained: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            source: Source::Previous,
            nonneg_constrained: false,
        }
    }

    pub fn from(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    pub fn nonneg(mut self) -> Self {
        self.nonneg_constrained = true;
        self
    }

    /// Shapes of the (weight, bias) pair, if the layer is parametrized.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels])),
            LayerKind::Linear {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    /// Number of inputs feeding each output unit.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { in_channels, kernel, .. } => in_channels * kernel * kernel,
            LayerKind::Linear { in_features, .. } => in_features,
            _ => 0,
        }
    }
}

/// Parameter tensors in layer order: weight then bias for each parametrized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn zeros(spec: &[LayerSpec]) -> Self {
        let tensors = spec
            .iter()
            .filter_map(|l| l.param_shapes())
            .flat_map(|(w, b)| [Tensor::zeros(&w), Tensor::zeros(&b)])
            .collect();
        Self { tensors }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Flattened copy of every parameter value.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.count());
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Per-layer `(weight, bias)` positions inside a [`ParamSet`].
pub fn param_slots(spec: &[LayerSpec]) -> Vec<Option<(usize, usize)>> {
    let mut next = 0;
    spec.iter()
        .map(|l| {
            l.param_shapes().map(|_| {
                let slot = (next, next + 1);
                next += 2;
                slot
            })
        })
        .collect()
}

fn resolve(source: Source, layer: usize, outputs: &[Vec<usize>], input: &[usize]) -> Result<Vec<usize>> {
    match source {
        Source::Input => Ok(input.to_vec()),
        Source::Previous if layer == 0 => Ok(input.to_vec()),
        Source::Previous => Ok(outputs[layer - 1].clone()),
        Source::Layer(j) if j < layer => Ok(outputs[j].clone()),
        Source::Layer(j) => Err(Error::InvalidLayer {
            layer,
            reason: format!("references layer {j} which is not earlier"),
        }),
    }
}

/// Per-sample output shape of every layer for an input of shape `input`
/// (batch axis excluded). Fails with the offending layer index.
pub fn infer_shapes(spec: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut outs: Vec<Vec<usize>> = Vec::with_capacity(spec.len());
    for (i, layer) in spec.iter().enumerate() {
        let src = resolve(layer.source, i, &outs, input)?;
        let mismatch = |expected: Vec<usize>| Error::LayerShape {
            layer: i,
            expected,
            found: src.clone(),
        };
        let out = match &layer.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if src.len() != 3 || src[0] != *in_channels {
                    return Err(mismatch(vec![*in_channels, 0, 0]));
                }
                if *kernel == 0 || kernel % 2 == 0 || *stride == 0 {
                    return Err(Error::InvalidLayer {
                        layer: i,
                        reason: "conv kernel must be odd and stride positive".into(),
                    });
                }
                let pad = kernel / 2;
                let ho = (src[1] + 2 * pad - kernel) / stride + 1;
                let wo = (src[2] + 2 * pad - kernel) / stride + 1;
                vec![*out_channels, ho, wo]
            }
            LayerKind::Linear {
                in_features,
                out_features,
            } => {
                if src.len() != 1 || src[0] != *in_features {
                    return Err(mismatch(vec![*in_features]));
                }
                vec![*out_features]
            }
            LayerKind::LeakyRelu { slope } => {
                if !(*slope > 0.0 && *slope < 1.0) {
                    return Err(Error::InvalidLayer {
                        layer: i,
                        reason: format!("leaky-relu slope {slope} outside (0, 1)"),
                    });
                }
                src.clone()
            }
            LayerKind::Relu => src.clone(),
            LayerKind::AvgPool { size } => {
                if src.len() != 3 || *size == 0 || src[1] % size != 0 || src[2] % size != 0 {
                    return Err(mismatch(vec![src.first().copied().unwrap_or(0), *size, *size]));
                }
                vec![src[0], src[1] / size, src[2] / size]
            }
            LayerKind::SkipSum { with } => {
                let other = resolve(*with, i, &outs, input)?;
                if other != src {
                    return Err(Error::LayerShape {
                        layer: i,
                        expected: src.clone(),
                        found: other,
                    });
                }
                src.clone()
            }
            LayerKind::Flatten => vec![src.iter().product()],
        };
        outs.push(out);
    }
    Ok(outs)
}

/// Loads a parameter set onto the tape, either as differentiable leaves or as
/// constants.
pub fn load_params(tape: &mut Tape, params: &ParamSet, differentiable: bool) -> Vec<Var> {
    params
        .tensors
        .iter()
        .map(|t| {
            if differentiable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

/// Evaluates the network on a batched input `[N, ...]`; returns a `[N, 1]` node.
pub fn forward_on_tape(tape: &mut Tape, spec: &[LayerSpec], params: &[Var], input: Var) -> Result<Var> {
    let slots = param_slots(spec);
    let n_params = slots.iter().flatten().count() * 2;
    if params.len() != n_params {
        return Err(Error::Shape {
            context: "parameter count",
            expected: vec![n_params],
            found: vec![params.len()],
        });
    }
    let mut outs: Vec<Var> = Vec::with_capacity(spec.len());
    let pick = |s: Source, i: usize, outs: &[Var]| -> Var {
        match s {
            Source::Input => input,
            Source::Previous if i == 0 => input,
            Source::Previous => outs[i - 1],
            Source::Layer(j) => outs[j],
        }
    };
    for (i, layer) in spec.iter().enumerate() {
        if let Source::Layer(j) = layer.source {
            if j >= i {
                return Err(Error::InvalidLayer {
                    layer: i,
                    reason: format!("references layer {j} which is not earlier"),
                });
            }
        }
        let x = pick(layer.source, i, &outs);
        let lift = |e: Error| match e {
            Error::Shape { expected, found, .. } => Error::LayerShape { layer: i, expected, found },
            other => other,
        };
        let out = match &layer.kind {
            LayerKind::Conv2d { stride, .. } => {
                let (w, b) = slots[i].expect("conv has params");
                let (ws, _) = layer.param_shapes().expect("conv shapes");
                if tape.shape(params[w]) != ws.as_slice() {
                    return Err(Error::LayerShape {
                        layer: i,
                        expected: ws,
                        found: tape.shape(params[w]).to_vec(),
                    });
                }
                tape.conv2d(x, params[w], params[b], *stride).map_err(lift)?
            }
            LayerKind::Linear { .. } => {
                let (w, b) = slots[i].expect("linear has params");
                let (ws, _) = layer.param_shapes().expect("linear shapes");
                if tape.shape(params[w]) != ws.as_slice() {
                    return Err(Error::LayerShape {
                        layer: i,
                        expected: ws,
                        found: tape.shape(params[w]).to_vec(),
                    });
                }
                tape.linear(x, params[w], params[b]).map_err(lift)?
            }
            LayerKind::LeakyRelu { slope } => tape.leaky_relu(x, *slope),
            LayerKind::Relu => tape.relu(x),
            LayerKind::AvgPool { size } => tape.avg_pool(x, *size).map_err(lift)?,
            LayerKind::SkipSum { with } => {
                if let Source::Layer(j) = with {
                    if *j >= i {
                        return Err(Error::InvalidLayer {
                            layer: i,
                            reason: format!("skip references layer {j} which is not earlier"),
                        });
                    }
                }
                let other = pick(*with, i, &outs);
                tape.add(x, other).map_err(lift)?
            }
            LayerKind::Flatten => tape.flatten(x).map_err(lift)?,
        };
        outs.push(out);
    }
    let last = *outs.last().ok_or(Error::InvalidConfig("empty network".into()))?;
    let shape = tape.shape(last).to_vec();
    if shape.len() != 2 || shape[1] != 1 {
        return Err(Error::LayerShape {
            layer: spec.len() - 1,
            expected: vec![shape[0], 1],
            found: shape,
        });
    }
    Ok(last)
}

fn batch_of_one(spec_input: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(spec_input.shape());
    spec_input.clone().reshape(shape)
}

/// Scalar network output for a single (unbatched) input.
pub fn eval_forward(params: &ParamSet, spec: &[LayerSpec], input: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = load_params(&mut tape, params, false);
    let x = tape.constant(batch_of_one(input)?);
    let out = forward_on_tape(&mut tape, spec, &p, x)?;
    Ok(tape.value(out).item())
}

/// Per-sample outputs for a batched input `[N, ...]`.
pub fn eval_batch(params: &ParamSet, spec: &[LayerSpec], batch: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = load_params(&mut tape, params, false);
    let x = tape.constant(batch.clone());
    let out = forward_on_tape(&mut tape, spec, &p, x)?;
    Ok(tape.value(out).data().to_vec())
}

/// Gradient of a scalar loss with respect to every parameter tensor.
///
/// `loss_fn` receives the tape and the parameter handles, may run any number of
/// forward evaluations and must return a single-element node.
pub fn grad_params<F>(params: &ParamSet, loss_fn: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let p = load_params(&mut tape, params, true);
    let loss = loss_fn(&mut tape, &p)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, collect_param_grads(&grads, &p, params)))
}

pub(crate) fn collect_param_grads(grads: &Gradients, vars: &[Var], params: &ParamSet) -> ParamSet {
    ParamSet {
        tensors: vars
            .iter()
            .zip(&params.tensors)
            .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
            .collect(),
    }
}

/// Gradient of the network output with respect to a single input.
pub fn grad_input(params: &ParamSet, spec: &[LayerSpec], input: &Tensor) -> Result<Tensor> {
    let batched = batch_of_one(input)?;
    let (_, g) = grad_input_batch(params, spec, &batched)?;
    g.reshape(input.shape().to_vec())
}

/// Values and input gradients for every sample of a batch `[N, ...]`.
///
/// Samples do not interact, so the gradient of the summed output splits into
/// per-sample gradients.
pub fn grad_input_batch(params: &ParamSet, spec: &[LayerSpec], batch: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let mut tape = Tape::new();
    let p = load_params(&mut tape, params, false);
    let x = tape.var(batch.clone());
    let out = forward_on_tape(&mut tape, spec, &p, x)?;
    let values = tape.value(out).data().to_vec();
    let total = tape.sum(out);
    let grads = tape.backward(total)?;
    Ok((values, grads.get_or_zeros(x, batch.shape())))
}

/// Gradient of an arbitrary tape-built scalar function of one input.
pub fn grad_input_fn<F>(input: &Tensor, f: F) -> Result<(f64, Tensor)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.var(input.clone());
    let out = f(&mut tape, x)?;
    let value = tape.value(out).item();
    let grads = tape.backward(out)?;
    Ok((value, grads.get_or_zeros(x, input.shape())))
}

/// Relative error used by gradient checks. The denominator is floored at
/// `1e-6` so that two vanishing derivatives compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between analytic and central-difference gradients,
/// over every input coordinate and every parameter.
pub fn finite_difference_check(params: &ParamSet, spec: &[LayerSpec], input: &Tensor, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step {step} must be positive")));
    }
    let mut worst: f64 = 0.0;

    let gx = grad_input(params, spec, input)?;
    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval_forward(params, spec, &probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval_forward(params, spec, &probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(gx.data()[i], (up - down) / (2.0 * step)));
    }

    let batched = batch_of_one(input)?;
    let (_, gp) = grad_params(params, |tape, p| {
        let x = tape.constant(batched.clone());
        forward_on_tape(tape, spec, p, x)
    })?;
    let analytic = gp.flat();
    let base = params.flat();
    let mut shifted = params.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let mut v = base.clone();
        v[i] = base[i] + step;
        shifted.set_flat(&v);
        let up = eval_forward(&shifted, spec, input)?;
        v[i] = base[i] - step;
        shifted.set_flat(&v);
        let down = eval_forward(&shifted, spec, input)?;
        worst = worst.max(relative_error(a, (up - down) / (2.0 * step)));
    }
    Ok(worst)
}

/// Central-difference check of [`grad_input_fn`] for a tape-built function.
pub fn finite_difference_check_fn<F>(input: &Tensor, step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step {step} must be positive")));
    }
    let value_at = |x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item())
    };
    let (_, g) = grad_input_fn(input, &f)?;
    let mut probe = input.clone();
    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = value_at(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = value_at(&probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(g.data()[i], (up - down) / (2.0 * step)));
    }
    Ok(worst)
}
