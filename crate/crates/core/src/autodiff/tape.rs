//! Reverse-mode tape over a closed set of tensor primitives.
//!
//! Nodes are appended in evaluation order; `backward` walks them in reverse
//! and accumulates adjoints. Nodes created from constants (or from nodes that
//! only depend on constants) are skipped during the backward sweep.

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, pad: usize },
    Linear { input: Var, weight: Var, bias: Var },
    LeakyRelu { input: Var, slope: f64 },
    Relu { input: Var },
    AvgPool { input: Var, size: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { input: Var, factor: f64 },
    Shift { input: Var },
    Square { input: Var },
    Sum { input: Var },
    Mean { input: Var },
    Reshape { input: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node reached by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when it does not influence the output.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `var`, zero-filled when unreached.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn shape_err(context: &'static str, expected: &[usize], found: &[usize]) -> Error {
    Error::Shape {
        context,
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf (parameter or input of interest).
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 2-D convolution with "same" zero padding (`kernel / 2`).
    ///
    /// `input` is `[N, C, H, W]`, `weight` is `[O, C, K, K]`, `bias` is `[O]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[1] != xs[1] {
            return Err(shape_err("conv2d", &ws, &xs));
        }
        if bs != [ws[0]] {
            return Err(shape_err("conv2d bias", &[ws[0]], &bs));
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("conv2d stride must be positive".into()));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            pad: ws[2] / 2,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![xs[0], ws[0], geom.out_height(), geom.out_width()], out)?;
        let ng = self.ng(input) || self.ng(weight) || self.ng(bias);
        let pad = geom.pad;
        Ok(self.push(value, Op::Conv2d { input, weight, bias, stride, pad }, ng))
    }

    /// Affine map on `[N, in]` with weight `[out, in]` and bias `[out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] {
            return Err(shape_err("linear", &ws, &xs));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(shape_err("linear bias", &[ws[0]], self.shape(bias)));
        }
        let out = kernels::linear_forward(
            xs[0],
            xs[1],
            ws[0],
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![xs[0], ws[0]], out)?;
        let ng = self.ng(input) || self.ng(weight) || self.ng(bias);
        Ok(self.push(value, Op::Linear { input, weight, bias }, ng))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let value = self.value(input).map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.ng(input);
        self.push(value, Op::LeakyRelu { input, slope }, ng)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        let ng = self.ng(input);
        self.push(value, Op::Relu { input }, ng)
    }

    /// Non-overlapping average pooling over the last two axes of `[N, C, H, W]`.
    pub fn avg_pool(&mut self, input: Var, size: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 || size == 0 || !xs[2].is_multiple_of(size) || !xs[3].is_multiple_of(size) {
            return Err(shape_err("avg_pool", &[size, size], &xs));
        }
        let out = kernels::avg_pool_forward(xs[0] * xs[1], xs[2], xs[3], size, self.value(input).data());
        let value = Tensor::new(vec![xs[0], xs[1], xs[2] / size, xs[3] / size], out)?;
        let ng = self.ng(input);
        Ok(self.push(value, Op::AvgPool { input, size }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("sub", self.shape(a), self.shape(b)));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub { a, b }, ng))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let ng = self.ng(input);
        self.push(value, Op::Scale { input, factor }, ng)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, input: Var, offset: f64) -> Var {
        let value = self.value(input).map(|v| v + offset);
        let ng = self.ng(input);
        self.push(value, Op::Shift { input }, ng)
    }

    pub fn square(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v * v);
        let ng = self.ng(input);
        self.push(value, Op::Square { input }, ng)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum::<f64>();
        let ng = self.ng(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, ng)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(input);
        self.push(Tensor::scalar(m), Op::Mean { input }, ng)
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let ng = self.ng(input);
        Ok(self.push(value, Op::Reshape { input }, ng))
    }

    /// `[N, ...] -> [N, prod(...)]`
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let n = s[0];
        let rest: usize = s[1..].iter().product::<usize>().max(1);
        self.reshape(input, vec![n, rest])
    }

    /// Reverse sweep from a single-element node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.shape(root);
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarOutput(root_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_shape, 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, stride, pad } => {
                let xs = self.shape(*input);
                let ws = self.shape(*weight);
                let geom = ConvGeom {
                    batch: xs[0],
                    in_ch: xs[1],
                    out_ch: ws[0],
                    height: xs[2],
                    width: xs[3],
                    kernel: ws[2],
                    stride: *stride,
                    pad: *pad,
                };
                if self.ng(*input) {
                    let gi = kernels::conv2d_backward_input(&geom, g.data(), self.value(*weight).data());
                    acc(*input, Tensor::new(xs.to_vec(), gi).expect("conv input grad"));
                }
                if self.ng(*weight) || self.ng(*bias) {
                    let (gw, gb) = kernels::conv2d_backward_params(&geom, g.data(), self.value(*input).data());
                    acc(*weight, Tensor::new(ws.to_vec(), gw).expect("conv weight grad"));
                    acc(*bias, Tensor::vector(gb));
                }
            }
            Op::Linear { input, weight, bias } => {
                let xs = self.shape(*input);
                let (n, fin) = (xs[0], xs[1]);
                let fout = self.shape(*weight)[0];
                let gd = g.data();
                if self.ng(*input) {
                    let w = self.value(*weight).data();
                    let mut gi = vec![0.0; n * fin];
                    for b in 0..n {
                        for o in 0..fout {
                            let go = gd[b * fout + o];
                            let wr = &w[o * fin..][..fin];
                            for (d, wv) in gi[b * fin..][..fin].iter_mut().zip(wr) {
                                *d += go * wv;
                            }
                        }
                    }
                    acc(*input, Tensor::new(xs.to_vec(), gi).expect("linear input grad"));
                }
                if self.ng(*weight) || self.ng(*bias) {
                    let x = self.value(*input).data();
                    let mut gw = vec![0.0; fout * fin];
                    let mut gb = vec![0.0; fout];
                    for b in 0..n {
                        for o in 0..fout {
                            let go = gd[b * fout + o];
                            gb[o] += go;
                            for (d, xv) in gw[o * fin..][..fin].iter_mut().zip(&x[b * fin..][..fin]) {
                                *d += go * xv;
                            }
                        }
                    }
                    acc(*weight, Tensor::new(vec![fout, fin], gw).expect("linear weight grad"));
                    acc(*bias, Tensor::vector(gb));
                }
            }
            Op::LeakyRelu { input, slope } => {
                let d = self.value(*input).zip_map(g, |x, gv| if x > 0.0 { gv } else { slope * gv });
                acc(*input, d);
            }
            Op::Relu { input } => {
                let d = self.value(*input).zip_map(g, |x, gv| if x > 0.0 { gv } else { 0.0 });
                acc(*input, d);
            }
            Op::AvgPool { input, size } => {
                let xs = self.shape(*input);
                let gi = kernels::avg_pool_backward(xs[0] * xs[1], xs[2], xs[3], *size, g.data());
                acc(*input, Tensor::new(xs.to_vec(), gi).expect("pool grad"));
            }
            Op::Add { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Scale { input, factor } => acc(*input, g.map(|v| v * factor)),
            Op::Shift { input } => acc(*input, g.clone()),
            Op::Square { input } => {
                acc(*input, self.value(*input).zip_map(g, |x, gv| 2.0 * x * gv));
            }
            Op::Sum { input } => {
                acc(*input, Tensor::full(self.shape(*input), g.item()));
            }
            Op::Mean { input } => {
                let s = self.shape(*input);
                let n = s.iter().product::<usize>() as f64;
                acc(*input, Tensor::full(s, g.item() / n));
            }
            Op::Reshape { input } => {
                let s = self.shape(*input).to_vec();
                acc(*input, g.clone().reshape(s).expect("reshape grad"));
            }
        }
    }
}
