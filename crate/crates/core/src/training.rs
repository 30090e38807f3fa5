//! Adversarial training of the convex regularizer. Fake samples come from
//! noisy descent on the current network (latent optimization); the loss
//! separates real from generated samples under a gradient penalty.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{forward_on_tape, grad_input_batch, grad_params, LayerSpec, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::icnn::{ConvexNet, Mode, NetArch};
use crate::solver::Regularizer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::adam()),
            other => Err(Error::InvalidConfig(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Descent steps `t` used to generate each fake sample.
    pub latent_steps: usize,
    /// Descent step size `eta`.
    pub latent_step_size: f64,
    /// Standard deviation of the initial perturbation.
    pub init_noise_std: f64,
    /// Standard deviation of the noise added at every descent step.
    pub walk_noise_std: f64,
    pub gp_weight: f64,
    /// Offset of the central difference in the gradient penalty.
    pub gp_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_steps: 10,
            latent_step_size: 0.05,
            init_noise_std: 0.3,
            walk_noise_std: 0.01,
            gp_weight: 10.0,
            gp_eps: 1e-3,
            batch_size: 8,
            epochs: 10,
            learning_rate: 1e-4,
            optimizer: Optimizer::Sgd,
            mode: Mode::Clear,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.latent_step_size > 0.0) {
            return bad("latent step size must be positive");
        }
        if !(self.init_noise_std >= 0.0) || !(self.walk_noise_std >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(self.gp_weight >= 0.0) {
            return bad("gradient penalty weight must be non-negative");
        }
        if !(self.gp_eps > 0.0) {
            return bad("gradient penalty offset must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// `key = value` lines covering every field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("latent_steps", self.latent_steps.to_string());
        put("latent_step_size", self.latent_step_size.to_string());
        put("init_noise_std", self.init_noise_std.to_string());
        put("walk_noise_std", self.walk_noise_std.to_string());
        put("gp_weight", self.gp_weight.to_string());
        put("gp_eps", self.gp_eps.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("optimizer", self.optimizer.name().to_string());
        put("mode", self.mode.name().to_string());
        put("seed", self.seed.to_string());
        s
    }

    /// Parses [`TrainConfig::to_text`] output; missing keys keep defaults,
    /// unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("config line '{line}' lacks '='")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("value '{v}' for '{key}' does not parse")))
        }
        match key {
            "latent_steps" => self.latent_steps = num(key, value)?,
            "latent_step_size" => self.latent_step_size = num(key, value)?,
            "init_noise_std" => self.init_noise_std = num(key, value)?,
            "walk_noise_std" => self.walk_noise_std = num(key, value)?,
            "gp_weight" => self.gp_weight = num(key, value)?,
            "gp_eps" => self.gp_eps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "optimizer" => self.optimizer = Optimizer::parse(value)?,
            "mode" => self.mode = Mode::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown training key '{other}'"))),
        }
        Ok(())
    }
}

/// Trained (or initial) network state. Parameters are held at 32-bit
/// precision so that serialization is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: NetArch,
    pub params: ParamSet,
    pub mode: Mode,
    pub config: TrainConfig,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn from_net(net: &ConvexNet, config: &TrainConfig, epoch: usize) -> Self {
        let mut params = net.params().clone();
        for t in &mut params.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        Self {
            arch: net.arch().clone(),
            params,
            mode: net.mode(),
            config: config.clone(),
            epoch,
        }
    }

    pub fn to_net(&self) -> Result<ConvexNet> {
        ConvexNet::from_parts(self.arch.clone(), self.mode, self.params.clone())
    }
}

fn gaussian(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn add_noise(x: &mut Tensor, std: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if std > 0.0 {
        let n = gaussian(std)?;
        x.data_mut().iter_mut().for_each(|v| *v += n.sample(rng));
    }
    Ok(())
}

/// `x_0 = x+ + d_0`, then `x_k = x_{k-1} - eta * grad(x_{k-1}) + d_k`.
fn noisy_descent<G>(start: &Tensor, cfg: &TrainConfig, rng: &mut ChaCha8Rng, mut grad: G) -> Result<Tensor>
where
    G: FnMut(&Tensor) -> Result<Tensor>,
{
    let mut x = start.clone();
    add_noise(&mut x, cfg.init_noise_std, rng)?;
    for _ in 0..cfg.latent_steps {
        let g = grad(&x)?;
        x.axpy(-cfg.latent_step_size, &g);
        add_noise(&mut x, cfg.walk_noise_std, rng)?;
    }
    Ok(x)
}

/// Generates one fake sample from `x_plus` by noisy descent on `reg`.
pub fn latent_optimize<R>(reg: &R, x_plus: &Tensor, cfg: &TrainConfig, seed: u64) -> Result<Tensor>
where
    R: Regularizer + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noisy_descent(x_plus, cfg, &mut rng, |x| reg.subgradient(x))
}

/// Batched [`latent_optimize`] on a network; `batch` is `[N, ...]`.
pub fn latent_optimize_batch(net: &ConvexNet, batch: &Tensor, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    noisy_descent(batch, cfg, rng, |x| {
        grad_input_batch(net.params(), net.spec(), x).map(|(_, g)| g)
    })
}

/// Unit ascent directions per sample of `points` (`[N, ...]`). Where the
/// gradient vanishes the normalized all-ones vector is used.
pub fn penalty_directions(spec: &[LayerSpec], params: &ParamSet, points: &Tensor) -> Result<Tensor> {
    let (_, mut g) = grad_input_batch(params, spec, points)?;
    let n = points.shape()[0];
    let per = g.len() / n.max(1);
    for chunk in g.data_mut().chunks_mut(per) {
        let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            let u = 1.0 / (per as f64).sqrt();
            chunk.iter_mut().for_each(|v| *v = u);
        } else {
            chunk.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(g)
}

/// Penalty node: mean over samples of `(D - 1)^2` with
/// `D = (phi(x + eps v) - phi(x - eps v)) / (2 eps)` and `v` held fixed.
pub fn gradient_penalty_on_tape(
    tape: &mut Tape,
    spec: &[LayerSpec],
    params: &[Var],
    points: &Tensor,
    directions: &Tensor,
    eps: f64,
) -> Result<Var> {
    let mut plus = points.clone();
    plus.axpy(eps, directions);
    let mut minus = points.clone();
    minus.axpy(-eps, directions);
    let p = tape.constant(plus);
    let m = tape.constant(minus);
    let fp = forward_on_tape(tape, spec, params, p)?;
    let fm = forward_on_tape(tape, spec, params, m)?;
    let diff = tape.sub(fp, fm)?;
    let d = tape.scale(diff, 1.0 / (2.0 * eps));
    let dev = tape.shift(d, -1.0);
    let sq = tape.square(dev);
    Ok(tape.mean(sq))
}

/// Value of the gradient penalty on a batch of points.
pub fn gradient_penalty(spec: &[LayerSpec], params: &ParamSet, points: &Tensor, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("penalty offset {eps} must be positive")));
    }
    let dirs = penalty_directions(spec, params, points)?;
    let mut tape = Tape::new();
    let p = crate::autodiff::load_params(&mut tape, params, false);
    let out = gradient_penalty_on_tape(&mut tape, spec, &p, points, &dirs, eps)?;
    Ok(tape.value(out).item())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub real_mean: f64,
    pub generated_mean: f64,
    pub penalty: f64,
}

struct LossNodes {
    total: Var,
    real: Var,
    generated: Var,
    penalty: Var,
}

fn check_batches(reals: &Tensor, generated: &Tensor, gp_points: &Tensor) -> Result<()> {
    if reals.shape().first().copied().unwrap_or(0) == 0 || gp_points.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::InvalidConfig("loss batches must be non-empty".into()));
    }
    if reals.shape() != generated.shape() {
        return Err(Error::Shape {
            context: "real and generated batches",
            expected: reals.shape().to_vec(),
            found: generated.shape().to_vec(),
        });
    }
    if reals.shape()[1..] != gp_points.shape()[1..] {
        return Err(Error::Shape {
            context: "penalty points",
            expected: reals.shape().to_vec(),
            found: gp_points.shape().to_vec(),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn loss_on_tape(
    tape: &mut Tape,
    spec: &[LayerSpec],
    params: &[Var],
    reals: &Tensor,
    generated: &Tensor,
    gp_points: &Tensor,
    directions: &Tensor,
    lambda: f64,
    eps: f64,
) -> Result<LossNodes> {
    let r = tape.constant(reals.clone());
    let g = tape.constant(generated.clone());
    let fr = forward_on_tape(tape, spec, params, r)?;
    let fg = forward_on_tape(tape, spec, params, g)?;
    let real = tape.mean(fr);
    let gen = tape.mean(fg);
    let gap = tape.sub(real, gen)?;
    let penalty = gradient_penalty_on_tape(tape, spec, params, gp_points, directions, eps)?;
    let weighted = tape.scale(penalty, lambda);
    let total = tape.add(gap, weighted)?;
    Ok(LossNodes {
        total,
        real,
        generated: gen,
        penalty,
    })
}

/// `mean phi(reals) - mean phi(generated) + lambda * penalty(gp_points)`.
pub fn clear_loss(
    spec: &[LayerSpec],
    params: &ParamSet,
    reals: &Tensor,
    generated: &Tensor,
    gp_points: &Tensor,
    lambda: f64,
    eps: f64,
) -> Result<LossParts> {
    check_batches(reals, generated, gp_points)?;
    let dirs = penalty_directions(spec, params, gp_points)?;
    let mut tape = Tape::new();
    let p = crate::autodiff::load_params(&mut tape, params, false);
    let nodes = loss_on_tape(&mut tape, spec, &p, reals, generated, gp_points, &dirs, lambda, eps)?;
    Ok(parts(&tape, &nodes))
}

fn parts(tape: &Tape, nodes: &LossNodes) -> LossParts {
    LossParts {
        total: tape.value(nodes.total).item(),
        real_mean: tape.value(nodes.real).item(),
        generated_mean: tape.value(nodes.generated).item(),
        penalty: tape.value(nodes.penalty).item(),
    }
}

/// [`clear_loss`] together with its gradient with respect to the parameters.
pub fn clear_loss_grad(
    spec: &[LayerSpec],
    params: &ParamSet,
    reals: &Tensor,
    generated: &Tensor,
    gp_points: &Tensor,
    lambda: f64,
    eps: f64,
) -> Result<(LossParts, ParamSet)> {
    check_batches(reals, generated, gp_points)?;
    let dirs = penalty_directions(spec, params, gp_points)?;
    let mut out = None;
    let (_, grads) = grad_params(params, |tape, p| {
        let nodes = loss_on_tape(tape, spec, p, reals, generated, gp_points, &dirs, lambda, eps)?;
        let total = nodes.total;
        out = Some(parts(tape, &nodes));
        Ok(total)
    })?;
    Ok((out.expect("loss evaluated"), grads))
}

/// Random convex combinations `a x+ + (1 - a) x*`, `a ~ U[0, 1]` per sample.
pub fn interpolate(reals: &Tensor, generated: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let n = reals.shape()[0];
    let per = reals.len() / n;
    let mut out = reals.clone();
    for (i, chunk) in out.data_mut().chunks_mut(per).enumerate() {
        let a: f64 = rng.random();
        let g = &generated.data()[i * per..(i + 1) * per];
        for (o, gv) in chunk.iter_mut().zip(g) {
            *o = a * *o + (1.0 - a) * gv;
        }
    }
    out
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self { kind, lr, step: 0, m, v }
    }

    fn apply(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.step += 1;
        let mut flat = params.flat();
        let g = grads.flat();
        match self.kind {
            Optimizer::Sgd => {
                for (p, gi) in flat.iter_mut().zip(&g) {
                    *p -= self.lr * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..flat.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
                    flat[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
        params.set_flat(&flat);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub real_mean: f64,
    pub generated_mean: f64,
    pub penalty: f64,
    /// Constrained weights zeroed by clipping during the epoch.
    pub clipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// Builds a network for `arch` and trains it on `dataset`.
pub fn train(dataset: &[Tensor], arch: NetArch, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let net = ConvexNet::build(arch, cfg.mode, cfg.seed)?;
    train_net(net, dataset, cfg, |_| {})
}

/// Trains an existing network. Samples must have the network's input shape.
/// `on_epoch` sees the statistics of every finished epoch.
pub fn train_net(
    mut net: ConvexNet,
    dataset: &[Tensor],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let shape = net.input_shape();
    if let Some(bad) = dataset.iter().find(|t| t.shape() != shape.as_slice()) {
        return Err(Error::Shape {
            context: "training sample",
            expected: shape,
            found: bad.shape().to_vec(),
        });
    }
    net.set_mode(cfg.mode);
    net.clip_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, net.param_count());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = EpochStats {
            epoch: epoch + 1,
            loss: 0.0,
            real_mean: 0.0,
            generated_mean: 0.0,
            penalty: 0.0,
            clipped: 0,
        };
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let samples: Vec<Tensor> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let reals = Tensor::stack(&samples)?;
            let generated = match cfg.mode {
                Mode::Ar => {
                    let mut x = reals.clone();
                    add_noise(&mut x, cfg.init_noise_std, &mut rng)?;
                    x
                }
                Mode::Clear | Mode::Unclear => latent_optimize_batch(&net, &reals, cfg, &mut rng)?,
            };
            let gp_points = interpolate(&reals, &generated, &mut rng);
            let (loss, grads) =
                clear_loss_grad(net.spec(), net.params(), &reals, &generated, &gp_points, cfg.gp_weight, cfg.gp_eps)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    context: "training loss",
                    step,
                });
            }
            opt.apply(net.params_mut(), &grads);
            acc.clipped += net.clip_weights().clipped;
            acc.loss += loss.total;
            acc.real_mean += loss.real_mean;
            acc.generated_mean += loss.generated_mean;
            acc.penalty += loss.penalty;
            batches += 1;
            step += 1;
        }
        let k = batches as f64;
        acc.loss /= k;
        acc.real_mean /= k;
        acc.generated_mean /= k;
        acc.penalty /= k;
        on_epoch(&acc);
        history.push(acc);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_net(&net, cfg, cfg.epochs),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trips() {
        let cfg = TrainConfig {
            latent_steps: 3,
            latent_step_size: 0.125,
            optimizer: Optimizer::adam(),
            mode: Mode::Unclear,
            seed: 42,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(TrainConfig::from_text("bogus = 1").is_err());
        assert!(TrainConfig::from_text("epochs = x").is_err());
    }

    #[test]
    fn interpolation_stays_on_segments() {
        let a = Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![2.0, 4.0, 1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = interpolate(&a, &b, &mut rng);
        assert!((p.data()[1] - 2.0 * p.data()[0]).abs() < 1e-12);
        assert_eq!(&p.data()[2..], &[1.0, 1.0]);
    }
}
