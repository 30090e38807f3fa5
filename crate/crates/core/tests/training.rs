use clear_core::autodiff::{LayerKind, LayerSpec, ParamSet, Tape, Tensor};
use clear_core::icnn::{ConvexNet, DenseSpec, Mode, NetArch};
use clear_core::solver::{FnRegularizer, TapeRegularizer};
use clear_core::training::{
    clear_loss, gradient_penalty, latent_optimize, train, train_net, Checkpoint, Optimizer, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear_spec(dim: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::new(LayerKind::Linear {
        in_features: dim,
        out_features: 1,
    })]
}

/// `phi(x) = w . x + bias` as a single linear layer.
fn linear_params(w: &[f64], bias: f64) -> ParamSet {
    ParamSet {
        tensors: vec![
            Tensor::new(vec![1, w.len()], w.to_vec()).unwrap(),
            Tensor::vector(vec![bias]),
        ],
    }
}

fn random_batch(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn dense(hidden: &[usize]) -> NetArch {
    NetArch::Dense(DenseSpec {
        input_dim: 2,
        hidden: hidden.to_vec(),
        slope: 0.2,
    })
}

#[test]
fn latent_zero_steps_is_one_noise_draw() {
    let reg = FnRegularizer::new(|x: &Tensor| x.norm(), |x: &Tensor| x.map(|v| v.signum()));
    let cfg = TrainConfig {
        latent_steps: 0,
        ..TrainConfig::default()
    };
    let x = Tensor::vector(vec![1.0, -1.0, 0.5]);
    let a = latent_optimize(&reg, &x, &cfg, 7).unwrap();
    let zero = FnRegularizer::new(|_: &Tensor| 0.0, |x: &Tensor| x.map(|_| 0.0));
    let b = latent_optimize(&zero, &x, &cfg, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, x);
    assert_eq!(a, latent_optimize(&reg, &x, &cfg, 7).unwrap());
}

#[test]
fn zero_gradient_keeps_initial_draw() {
    let zero = FnRegularizer::new(|_: &Tensor| 0.0, |x: &Tensor| x.map(|_| 0.0));
    let x = Tensor::vector(vec![0.2, 0.4]);
    let base = TrainConfig {
        walk_noise_std: 0.0,
        ..TrainConfig::default()
    };
    let none = TrainConfig {
        latent_steps: 0,
        ..base.clone()
    };
    assert_eq!(
        latent_optimize(&zero, &x, &base, 3).unwrap(),
        latent_optimize(&zero, &x, &none, 3).unwrap()
    );
}

#[test]
fn latent_descent_on_half_norm_decays_geometrically() {
    let reg = TapeRegularizer::new(|tape: &mut Tape, x| {
        let sq = tape.square(x);
        let s = tape.sum(sq);
        Ok(tape.scale(s, 0.5))
    });
    let cfg = TrainConfig {
        latent_steps: 10,
        latent_step_size: 0.1,
        init_noise_std: 0.0,
        walk_noise_std: 0.0,
        ..TrainConfig::default()
    };
    let x = Tensor::vector(vec![1.0, -2.0, 3.5]);
    let out = latent_optimize(&reg, &x, &cfg, 0).unwrap();
    for (o, v) in out.data().iter().zip(x.data()) {
        assert!((o - 0.9f64.powi(10) * v).abs() < 1e-10);
    }
}

#[test]
fn penalty_examples() {
    let spec = linear_spec(2);
    let pts = random_batch(16, 2, 0);
    let unit = linear_params(&[0.6, 0.8], 0.3);
    assert!(gradient_penalty(&spec, &unit, &pts, 1e-3).unwrap() < 1e-18);

    let constant = linear_params(&[0.0, 0.0], 4.0);
    assert_eq!(gradient_penalty(&spec, &constant, &pts, 1e-3).unwrap(), 1.0);

    let double = linear_params(&[1.2, 1.6], 0.0);
    let direct = {
        // D along the gradient direction is exactly |grad| = 2.
        let d: f64 = 2.0;
        (d - 1.0).powi(2)
    };
    assert!((gradient_penalty(&spec, &double, &pts, 1e-3).unwrap() - direct).abs() < 1e-9);
    assert!(gradient_penalty(&spec, &unit, &pts, 0.0).is_err());
}

#[test]
fn penalty_is_nonnegative_on_networks() {
    for seed in 0..5 {
        let net = ConvexNet::build(dense(&[8, 8]), Mode::Clear, seed).unwrap();
        let p = gradient_penalty(net.spec(), net.params(), &random_batch(10, 2, seed), 1e-3).unwrap();
        assert!(p >= 0.0 && p.is_finite());
    }
}

#[test]
fn loss_examples() {
    let spec = linear_spec(2);
    let reals = random_batch(6, 2, 1);
    let gens = random_batch(6, 2, 2);
    let gp = random_batch(6, 2, 3);

    let constant = linear_params(&[0.0, 0.0], 1.5);
    assert_eq!(clear_loss(&spec, &constant, &reals, &gens, &gp, 0.0, 1e-3).unwrap().total, 0.0);

    let net = ConvexNet::build(dense(&[4]), Mode::Clear, 0).unwrap();
    let same = clear_loss(net.spec(), net.params(), &reals, &reals, &gp, 0.0, 1e-3).unwrap();
    assert_eq!(same.total, 0.0);

    let w = [0.6, -0.8];
    let unit = linear_params(&w, 0.1);
    let got = clear_loss(&spec, &unit, &reals, &gens, &gp, 10.0, 1e-3).unwrap();
    let mean = |t: &Tensor| t.data().chunks(2).map(|p| w[0] * p[0] + w[1] * p[1] + 0.1).sum::<f64>() / 6.0;
    let expected = mean(&reals) - mean(&gens);
    assert!((got.total - expected).abs() < 1e-9, "{} vs {expected}", got.total);
    assert!(got.penalty < 1e-18);

    let short = random_batch(5, 2, 4);
    assert!(clear_loss(&spec, &unit, &reals, &short, &gp, 0.0, 1e-3).is_err());
}

#[test]
fn zero_epochs_returns_initialization() {
    let arch = dense(&[8]);
    let cfg = TrainConfig {
        epochs: 0,
        seed: 11,
        ..TrainConfig::default()
    };
    let data = vec![Tensor::vector(vec![0.1, 0.1])];
    let out = train(&data, arch.clone(), &cfg).unwrap();
    let mut init = ConvexNet::build(arch, Mode::Clear, 11).unwrap();
    init.clip_weights();
    assert_eq!(out.checkpoint, Checkpoint::from_net(&init, &cfg, 0));
    assert!(out.history.is_empty());
}

fn segment_samples(n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = rng.random_range(0.0..1.0);
            Tensor::vector(vec![a, a])
        })
        .collect()
}

#[test]
fn clear_training_keeps_constraints_and_is_deterministic() {
    let arch = dense(&[8, 8]);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        learning_rate: 1e-2,
        seed: 5,
        ..TrainConfig::default()
    };
    let data = segment_samples(16, 0);
    let mut seen = 0;
    let net = ConvexNet::build(arch.clone(), Mode::Clear, 5).unwrap();
    let a = train_net(net, &data, &cfg, |s| {
        seen += 1;
        assert!(s.penalty >= 0.0);
    })
    .unwrap();
    assert_eq!(seen, 3);
    assert_eq!(a.history.len(), 3);
    let net = a.checkpoint.to_net().unwrap();
    assert!(net.is_feasible());
    let b = train(&data, arch, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergence_is_reported() {
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 1e300,
        ..TrainConfig::default()
    };
    let err = train(&segment_samples(8, 1), dense(&[4]), &cfg).unwrap_err();
    assert!(err.to_string().contains("training loss"), "{err}");
}

#[test]
fn rejects_bad_input() {
    let cfg = TrainConfig::default();
    assert!(train(&[], dense(&[4]), &cfg).is_err());
    assert!(train(&[Tensor::vector(vec![1.0, 2.0, 3.0])], dense(&[4]), &cfg).is_err());
    let bad = TrainConfig {
        latent_step_size: 0.0,
        ..cfg
    };
    assert!(train(&segment_samples(2, 0), dense(&[4]), &bad).is_err());
}

#[test]
fn segment_manifold_is_separated() {
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 16,
        learning_rate: 2e-3,
        optimizer: Optimizer::adam(),
        latent_step_size: 0.1,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&segment_samples(256, 10), dense(&[32, 32]), &cfg).unwrap();
    let net = out.checkpoint.to_net().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut on, mut off) = (0.0, 0.0);
    let n = 200;
    for _ in 0..n {
        let a: f64 = rng.random_range(0.0..1.0);
        on += net.forward(&Tensor::vector(vec![a, a])).unwrap();
        // Distance 0.5 along the normal (1, -1) / sqrt(2).
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let o = s * 0.5 / 2f64.sqrt();
        off += net.forward(&Tensor::vector(vec![a + o, a - o])).unwrap();
    }
    let (on, off) = (on / n as f64, off / n as f64);
    assert!(on <= off, "on {on} off {off}");
}

#[test]
fn loss_path_does_not_depend_on_mode() {
    let clear = ConvexNet::build(dense(&[6, 6]), Mode::Clear, 4).unwrap();
    let ar = ConvexNet::from_parts(clear.arch().clone(), Mode::Ar, clear.params().clone()).unwrap();
    let (reals, gens, gp) = (random_batch(5, 2, 6), random_batch(5, 2, 7), random_batch(5, 2, 8));
    let a = clear_loss(clear.spec(), clear.params(), &reals, &gens, &gp, 10.0, 1e-3).unwrap();
    let b = clear_loss(ar.spec(), ar.params(), &reals, &gens, &gp, 10.0, 1e-3).unwrap();
    assert_eq!(a, b);
}

proptest::proptest! {
    #[test]
    fn noiseless_descent_never_increases_a_quadratic(
        x in proptest::collection::vec(-5.0f64..5.0, 3),
        curv in proptest::collection::vec(0.1f64..4.0, 3),
        steps in 0usize..20,
    ) {
        // phi = 1/2 sum c_i x_i^2 has L = max c_i <= 4, so eta = 0.2 < 1/L.
        let c = curv.clone();
        let c2 = curv.clone();
        let reg = FnRegularizer::new(
            move |x: &Tensor| 0.5 * x.data().iter().zip(&c).map(|(v, k)| k * v * v).sum::<f64>(),
            move |x: &Tensor| Tensor::vector(x.data().iter().zip(&c2).map(|(v, k)| k * v).collect()),
        );
        let x0 = Tensor::vector(x);
        let mut prev = clear_core::solver::Regularizer::value(&reg, &x0).unwrap();
        for t in 1..=steps {
            let cfg = TrainConfig {
                latent_steps: t,
                latent_step_size: 0.2,
                init_noise_std: 0.0,
                walk_noise_std: 0.0,
                ..TrainConfig::default()
            };
            let xt = latent_optimize(&reg, &x0, &cfg, 0).unwrap();
            let v = clear_core::solver::Regularizer::value(&reg, &xt).unwrap();
            proptest::prop_assert!(v <= prev + 1e-12);
            prev = v;
        }
    }
}
