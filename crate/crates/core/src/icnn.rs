//! Input-convex networks built from the autodiff layer list.
//!
//! Convexity in the input follows from composition rules: the stem is affine
//! followed by a convex non-decreasing activation, and every later weight that
//! multiplies a convex quantity is kept non-negative by clipping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::{
    eval_batch, eval_forward, grad_input, grad_input_batch, infer_shapes, LayerKind, LayerSpec, ParamSet, Source,
    Tensor,
};
use crate::error::{Error, Result};
use crate::forward_model::Image;

/// Training regime; only `Clear` enforces non-negativity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Clear,
    Unclear,
    /// Unconstrained adversarial regularizer trained against zero-filled
    /// reconstructions.
    Ar,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Clear => "clear",
            Mode::Unclear => "unclear",
            Mode::Ar => "ar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clear" => Ok(Mode::Clear),
            "unclear" => Ok(Mode::Unclear),
            "ar" => Ok(Mode::Ar),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Mode::Clear => 0,
            Mode::Unclear => 1,
            Mode::Ar => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Mode::Clear),
            1 => Ok(Mode::Unclear),
            2 => Ok(Mode::Ar),
            other => Err(Error::InvalidConfig(format!("unknown mode byte {other}"))),
        }
    }
}

/// Convolutional stem, six residual blocks, flatten and a scalar head.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub stem_channels: usize,
    pub block_widths: Vec<usize>,
    /// Blocks whose skip path carries its own 1x1 convolution. Required
    /// wherever the channel count changes.
    pub three_conv: Vec<bool>,
    pub slope: f64,
    pub kernel: usize,
}

pub const RES_BLOCKS: usize = 6;

impl Default for ArchSpec {
    fn default() -> Self {
        Self::with_widths(32, 32, 16, &[16, 16, 32, 32, 64, 64])
    }
}

impl ArchSpec {
    /// Spec with the 3-conv variant exactly where the width changes.
    pub fn with_widths(height: usize, width: usize, stem: usize, widths: &[usize]) -> Self {
        let mut prev = stem;
        let three_conv = widths
            .iter()
            .map(|&w| {
                let change = w != prev;
                prev = w;
                change
            })
            .collect();
        Self {
            in_channels: 2,
            height,
            width,
            stem_channels: stem,
            block_widths: widths.to_vec(),
            three_conv,
            slope: 0.2,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.block_widths.len() != RES_BLOCKS || self.three_conv.len() != RES_BLOCKS {
            return bad(format!("expected {RES_BLOCKS} residual blocks, got {}", self.block_widths.len()));
        }
        if self.in_channels == 0 || self.stem_channels == 0 || self.block_widths.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        let div = 1 << (RES_BLOCKS - 1);
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) {
            return bad(format!(
                "input {}x{} must be a positive multiple of {div} for {} pooling stages",
                self.height,
                self.width,
                RES_BLOCKS - 1
            ));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return bad(format!("leaky slope {} outside (0, 1)", self.slope));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        let mut prev = self.stem_channels;
        for (b, (&w, &three)) in self.block_widths.iter().zip(&self.three_conv).enumerate() {
            if w != prev && !three {
                return bad(format!("block {b} changes width {prev} -> {w} without a skip convolution"));
            }
            prev = w;
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let k = self.kernel;
        let conv = |i, o, kernel| LayerKind::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel,
            stride: 1,
        };
        let act = LayerKind::LeakyRelu { slope: self.slope };
        let mut layers = vec![
            LayerSpec::new(conv(self.in_channels, self.stem_channels, k)),
            LayerSpec::new(act.clone()),
        ];
        let mut cin = self.stem_channels;
        for (b, (&cout, &three)) in self.block_widths.iter().zip(&self.three_conv).enumerate() {
            let block_in = layers.len() - 1;
            layers.push(LayerSpec::new(conv(cin, cout, k)).nonneg());
            layers.push(LayerSpec::new(act.clone()));
            layers.push(LayerSpec::new(conv(cout, cout, k)).nonneg());
            let main = layers.len() - 1;
            if three {
                layers.push(LayerSpec::new(conv(cin, cout, 1)).nonneg().from(Source::Layer(block_in)));
                layers.push(LayerSpec::new(LayerKind::SkipSum {
                    with: Source::Layer(main),
                }));
            } else {
                layers.push(LayerSpec::new(LayerKind::SkipSum {
                    with: Source::Layer(block_in),
                }));
            }
            layers.push(LayerSpec::new(act.clone()));
            if b + 1 < RES_BLOCKS {
                layers.push(LayerSpec::new(LayerKind::AvgPool { size: 2 }));
            }
            cin = cout;
        }
        let scale = 1 << (RES_BLOCKS - 1);
        let features = cin * (self.height / scale) * (self.width / scale);
        layers.push(LayerSpec::new(LayerKind::Flatten));
        layers.push(
            LayerSpec::new(LayerKind::Linear {
                in_features: features,
                out_features: 1,
            })
            .nonneg(),
        );
        layers
    }
}

/// Fully connected input-convex network on flat vectors, for low-dimensional
/// experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub slope: f64,
}

impl DenseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("dense net needs a positive input and hidden widths".into()));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::InvalidConfig(format!("leaky slope {} outside (0, 1)", self.slope)));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut prev = self.input_dim;
        for (i, &h) in self.hidden.iter().enumerate() {
            let lin = LayerSpec::new(LayerKind::Linear {
                in_features: prev,
                out_features: h,
            });
            layers.push(if i == 0 { lin } else { lin.nonneg() });
            layers.push(LayerSpec::new(LayerKind::LeakyRelu { slope: self.slope }));
            prev = h;
        }
        layers.push(
            LayerSpec::new(LayerKind::Linear {
                in_features: prev,
                out_features: 1,
            })
            .nonneg(),
        );
        layers
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NetArch {
    Residual(ArchSpec),
    Dense(DenseSpec),
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad entry '{s}' in {key}")))
        })
        .collect()
}

impl NetArch {
    pub fn validate(&self) -> Result<()> {
        match self {
            NetArch::Residual(a) => a.validate(),
            NetArch::Dense(d) => d.validate(),
        }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        match self {
            NetArch::Residual(a) => a.layers(),
            NetArch::Dense(d) => d.layers(),
        }
    }

    /// Shape of a single (unbatched) input.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            NetArch::Residual(a) => vec![a.in_channels, a.height, a.width],
            NetArch::Dense(d) => vec![d.input_dim],
        }
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        match self {
            NetArch::Residual(a) => format!(
                "kind=residual\nin_channels={}\nheight={}\nwidth={}\nstem={}\nwidths={}\nthree_conv={}\nslope={}\nkernel={}\n",
                a.in_channels,
                a.height,
                a.width,
                a.stem_channels,
                join(&a.block_widths),
                join(&a.three_conv.iter().map(|&b| b as u8).collect::<Vec<_>>()),
                a.slope,
                a.kernel
            ),
            NetArch::Dense(d) => format!(
                "kind=dense\ninput_dim={}\nhidden={}\nslope={}\n",
                d.input_dim,
                join(&d.hidden),
                d.slope
            ),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("arch line '{line}' lacks '='")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::InvalidConfig(format!("arch text missing '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("arch field '{k}' is not an integer")))
        };
        let slope: f64 = get("slope")?
            .parse()
            .map_err(|_| Error::InvalidConfig("arch field 'slope' is not a number".into()))?;
        let arch = match get("kind")? {
            "residual" => NetArch::Residual(ArchSpec {
                in_channels: num("in_channels")?,
                height: num("height")?,
                width: num("width")?,
                stem_channels: num("stem")?,
                block_widths: parse_list("widths", get("widths")?)?,
                three_conv: parse_list::<u8>("three_conv", get("three_conv")?)?
                    .into_iter()
                    .map(|b| b != 0)
                    .collect(),
                slope,
                kernel: num("kernel")?,
            }),
            "dense" => NetArch::Dense(DenseSpec {
                input_dim: num("input_dim")?,
                hidden: parse_list("hidden", get("hidden")?)?,
                slope,
            }),
            other => return Err(Error::InvalidConfig(format!("unknown arch kind '{other}'"))),
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipOutcome {
    /// Entries that were negative and got zeroed.
    pub clipped: usize,
    /// Set when clipping was requested outside `Clear` mode and skipped.
    pub skipped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexityReport {
    pub pairs: usize,
    pub violations: usize,
    pub max_violation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexNet {
    arch: NetArch,
    spec: Vec<LayerSpec>,
    params: ParamSet,
    clip_mask: Vec<bool>,
    mode: Mode,
}

impl ConvexNet {
    /// Randomly initialized network. Constrained weights start as `|N(0,1)| / fan_in`,
    /// free weights as `N(0, 2 / fan_in)`, biases at zero.
    pub fn build(arch: NetArch, mode: Mode, seed: u64) -> Result<Self> {
        arch.validate()?;
        let spec = arch.layers();
        infer_shapes(&spec, &arch.input_shape())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros(&spec);
        let mut slot = 0;
        for layer in &spec {
            if layer.param_shapes().is_none() {
                continue;
            }
            let fan_in = layer.fan_in().max(1) as f64;
            for v in params.tensors[slot].data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = if layer.nonneg_constrained {
                    z.abs() / fan_in
                } else {
                    z * (2.0 / fan_in).sqrt()
                };
            }
            slot += 2;
        }
        Self::from_parts(arch, mode, params)
    }

    /// Assembles a network from existing parameters, checking their shapes.
    pub fn from_parts(arch: NetArch, mode: Mode, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let spec = arch.layers();
        let expected = ParamSet::zeros(&spec);
        if expected.tensors.len() != params.tensors.len() {
            return Err(Error::Shape {
                context: "parameter tensors",
                expected: vec![expected.tensors.len()],
                found: vec![params.tensors.len()],
            });
        }
        for (e, p) in expected.tensors.iter().zip(&params.tensors) {
            if e.shape() != p.shape() {
                return Err(Error::Shape {
                    context: "parameter tensor",
                    expected: e.shape().to_vec(),
                    found: p.shape().to_vec(),
                });
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite {
                context: "network parameters",
                step: 0,
            });
        }
        let clip_mask = spec
            .iter()
            .filter(|l| l.param_shapes().is_some())
            .flat_map(|l| [l.nonneg_constrained, false])
            .collect();
        Ok(Self {
            arch,
            spec,
            params,
            clip_mask,
            mode,
        })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn spec(&self) -> &[LayerSpec] {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Per parameter tensor: whether it is constrained non-negative.
    pub fn clip_mask(&self) -> &[bool] {
        &self.clip_mask
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.arch.input_shape()
    }

    pub fn forward(&self, x: &Tensor) -> Result<f64> {
        eval_forward(&self.params, &self.spec, x)
    }

    pub fn forward_image(&self, x: &Image) -> Result<f64> {
        self.forward(&x.to_tensor())
    }

    /// Outputs for a batch `[N, ...]`.
    pub fn forward_batch(&self, batch: &Tensor) -> Result<Vec<f64>> {
        eval_batch(&self.params, &self.spec, batch)
    }

    /// A (sub)gradient of the output with respect to the input.
    pub fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
        grad_input(&self.params, &self.spec, x)
    }

    pub fn input_gradient_image(&self, x: &Image) -> Result<Image> {
        Image::from_tensor(&self.input_gradient(&x.to_tensor())?)
    }

    pub fn input_gradient_batch(&self, batch: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        grad_input_batch(&self.params, &self.spec, batch)
    }

    /// Projects constrained weights onto the non-negative orthant. Outside
    /// `Clear` mode nothing changes and `skipped` is set.
    pub fn clip_weights(&mut self) -> ClipOutcome {
        if self.mode != Mode::Clear {
            return ClipOutcome {
                clipped: 0,
                skipped: true,
            };
        }
        let mut clipped = 0;
        for (t, &masked) in self.params.tensors.iter_mut().zip(&self.clip_mask) {
            if !masked {
                continue;
            }
            for v in t.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                    clipped += 1;
                }
            }
        }
        ClipOutcome { clipped, skipped: false }
    }

    /// Whether every constrained weight is non-negative.
    pub fn is_feasible(&self) -> bool {
        self.params
            .tensors
            .iter()
            .zip(&self.clip_mask)
            .filter(|(_, &m)| m)
            .all(|(t, _)| t.data().iter().all(|&v| v >= 0.0))
    }

    /// Tests `f((x+y)/2) <= (f(x)+f(y))/2 + tol` on pairs drawn uniformly from
    /// `[-1, 1]^n`.
    pub fn check_midpoint_convexity(&self, n_pairs: usize, tol: f64, seed: u64) -> Result<ConvexityReport> {
        let shape = self.input_shape();
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        self.check_midpoint_convexity_with(n_pairs, tol, || {
            let x = Tensor::new(shape.clone(), (0..n).map(|_| dist.sample(&mut rng)).collect()).expect("shape");
            let y = Tensor::new(shape.clone(), (0..n).map(|_| dist.sample(&mut rng)).collect()).expect("shape");
            (x, y)
        })
    }

    /// As [`ConvexNet::check_midpoint_convexity`] with caller-supplied pairs.
    pub fn check_midpoint_convexity_with<F>(&self, n_pairs: usize, tol: f64, mut pairs: F) -> Result<ConvexityReport>
    where
        F: FnMut() -> (Tensor, Tensor),
    {
        if n_pairs == 0 || !(tol >= 0.0) {
            return Err(Error::InvalidConfig("need at least one pair and tol >= 0".into()));
        }
        let mut report = ConvexityReport {
            pairs: n_pairs,
            violations: 0,
            max_violation: 0.0,
        };
        for _ in 0..n_pairs {
            let (x, y) = pairs();
            let mid = x.zip_map(&y, |a, b| 0.5 * (a + b));
            let gap = self.forward(&mid)? - 0.5 * (self.forward(&x)? + self.forward(&y)?);
            if gap > tol {
                report.violations += 1;
            }
            report.max_violation = report.max_violation.max(gap);
        }
        Ok(report)
    }
}
