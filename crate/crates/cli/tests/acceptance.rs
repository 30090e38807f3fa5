//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured quantities, then asserts.
//!
//! Run with `cargo test -p clear-cli --test acceptance`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use clear_cli::dispatch;
use clear_cli::formats::{decode_checkpoint, decode_image, encode_checkpoint, encode_image};
use clear_core::autodiff::{finite_difference_check, Tensor};
use clear_core::evaluation::{evaluate_suite, make_phantom, psnr_peak_ref, LearnedEntry, Method, PhantomKind, SuiteConfig};
use clear_core::forward_model::{
    add_noise, apply_a, make_mask, project_data_consistency, residual, Image, MaskKind, SamplingMask,
};
use clear_core::icnn::{ArchSpec, ConvexNet, DenseSpec, Mode, NetArch};
use clear_core::solver::{pgd_reconstruct, PgdConfig, Schedule};
use clear_core::theory_verify::{
    verify_distance_properties, verify_minima_on_manifold, verify_pgd_convergence, verify_stability, MinimaConfig,
    SelectorInstance, ToyManifold,
};
use clear_core::training::{train, train_net, Optimizer, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// Writes through the raw handle so the line survives the harness's output
/// capture for passing tests.
fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn harmonic(max_iters: usize, c: f64) -> PgdConfig {
    PgdConfig {
        max_iters,
        schedule: Schedule::Harmonic,
        c,
        record_trace: false,
        early_stop: None,
    }
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_planes(h, w, (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn criterion_1_convexity_by_construction() {
    let t = Instant::now();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..10u64 {
        let widths: &[usize] = if seed % 2 == 0 { &[8; 6] } else { &[4, 4, 8, 8, 16, 16] };
        let arch = NetArch::Residual(ArchSpec::with_widths(32, 32, 8, widths));
        let mut net = ConvexNet::build(arch, Mode::Clear, seed).unwrap();
        net.clip_weights();
        let r = net.check_midpoint_convexity(1000, 1e-6, 100 + seed).unwrap();
        violations += r.violations;
        worst = worst.max(r.max_violation);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        1,
        violations == 0 && secs < 60.0,
        &format!("{violations} violations over 10x1000 pairs, max midpoint gap {worst:.3e}, {secs:.1} s"),
    );
}

#[test]
fn criterion_2_gradient_correctness() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for i in 0..20u64 {
        let arch = if i < 10 {
            NetArch::Dense(DenseSpec {
                input_dim: 2 + (i as usize % 5),
                hidden: vec![4 + i as usize, 3 + 2 * (i as usize % 3)],
                slope: 0.2,
            })
        } else {
            NetArch::Residual(ArchSpec::with_widths(32, 32, 2, &[2, 2, 3, 3, 4, 4]))
        };
        let net = ConvexNet::build(arch, Mode::Unclear, i).unwrap();
        largest = largest.max(net.param_count());
        let shape = net.input_shape();
        let n: usize = shape.iter().product();
        let x = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        worst = worst.max(finite_difference_check(net.params(), net.spec(), &x, 3e-6).unwrap());
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        2,
        worst < 1e-4 && largest <= 5000 && secs < 60.0,
        &format!("max relative error {worst:.3e} on 20 nets of at most {largest} params, {secs:.1} s"),
    );
}

#[test]
fn criterion_3_projection_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kinds = [MaskKind::Uniform1d, MaskKind::Random1d, MaskKind::Poisson2d, MaskKind::Gaussian2d];
    let (mut idem, mut feas, mut expand, mut closest) = (0.0f64, 0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..50u64 {
        let mask = make_mask(kinds[i as usize % 4], 32, 32, 2.0 + (i % 3) as f64, 0.08, i).unwrap();
        let b = apply_a(&mask, &random_image(32, 32, &mut rng)).unwrap();
        let x = random_image(32, 32, &mut rng);
        let px = project_data_consistency(&mask, &b, &x).unwrap();
        idem = idem.max(project_data_consistency(&mask, &b, &px).unwrap().distance(&px));
        feas = feas.max(residual(&mask, &b, &px).unwrap());
        let y = random_image(32, 32, &mut rng);
        let py = project_data_consistency(&mask, &b, &y).unwrap();
        expand = expand.max(px.distance(&py) - x.distance(&y));
        let d = x.distance(&px);
        for _ in 0..100 {
            let z = project_data_consistency(&mask, &b, &random_image(32, 32, &mut rng)).unwrap();
            closest = closest.max(d - x.distance(&z));
        }
    }
    verdict(
        3,
        idem < 1e-10 && feas < 1e-10 && expand <= 1e-10 && closest <= 1e-10,
        &format!(
            "idempotence {idem:.2e}, residual {feas:.2e}, expansion {expand:.2e}, distance excess {closest:.2e} over 50 instances"
        ),
    );
}

#[test]
fn criterion_4_pgd_convergence() {
    let r = verify_pgd_convergence(&SelectorInstance::analytic(), &harmonic(500, 0.75), 1e-3).unwrap();
    let err = r.get("final_error").unwrap();
    let slack = r.get("max_step_slack").unwrap();
    verdict(
        4,
        r.passed && err < 1e-3 && slack <= 1e-10,
        &format!("final error {err:.3e} after 500 steps, max step-inequality slack {slack:.3e}"),
    );
}

#[test]
fn criterion_5_distance_properties() {
    let mut detail = Vec::new();
    let mut pass = true;
    for m in [ToyManifold::unit_ball(2), ToyManifold::diagonal_segment(), ToyManifold::triangle()] {
        let r = verify_distance_properties(&m, 10_000, 5).unwrap();
        let v = r.get("violations").unwrap();
        pass &= r.passed && v == 0.0;
        detail.push(format!("{} {v} violations", m.name()));
    }
    verdict(5, pass, &format!("{} in 10^4 pairs at 1e-9", detail.join(", ")));
}

#[test]
fn criterion_6_minima_on_the_manifold() {
    let t = Instant::now();
    let m = ToyManifold::unit_ball(2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<Tensor> = (0..512).map(|_| Tensor::vector(m.sample(&mut rng))).collect();
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 32,
        learning_rate: 1e-3,
        optimizer: Optimizer::adam(),
        seed: 1,
        ..TrainConfig::default()
    };
    let arch = NetArch::Dense(DenseSpec {
        input_dim: 2,
        hidden: vec![64, 64],
        slope: 0.2,
    });
    let net = train(&data, arch, &cfg).unwrap().checkpoint.to_net().unwrap();
    let secs = t.elapsed().as_secs_f64();
    let r = verify_minima_on_manifold(&net, &m, &MinimaConfig { seed: 7, ..MinimaConfig::default() }).unwrap();
    let near = r.get("fraction_endpoints_near").unwrap();
    let below = r.get("fraction_fresh_below_off_quantile").unwrap();
    verdict(
        6,
        near >= 0.9 && below >= 0.9 && secs < 600.0,
        &format!(
            "{:.0}% of descents end within 0.1, {:.0}% of fresh samples below the off-manifold 10th percentile, training {secs:.1} s",
            100.0 * near,
            100.0 * below
        ),
    );
}

#[test]
fn criterion_7_stability() {
    let levels = [0.0, 1e-3, 1e-2, 1e-1];
    let r = verify_stability(&SelectorInstance::analytic(), &levels, 10, &harmonic(500, 0.75), 1e-3, 7).unwrap();
    let e: Vec<f64> = ["error@0", "error@0.001", "error@0.01", "error@0.1"]
        .iter()
        .map(|k| r.get(k).unwrap())
        .collect();
    let monotone = e.windows(2).all(|w| w[0] <= w[1]);
    let ratio = e[1] / e[3];
    verdict(
        7,
        monotone && e[0] < 1e-3 && ratio < 0.5,
        &format!("e = {:.3e}, {:.3e}, {:.3e}, {:.3e}; e(1e-3)/e(1e-1) = {ratio:.3}", e[0], e[1], e[2], e[3]),
    );
}

const SIZE: usize = 32;
const C_GRID: [f64; 3] = [3.0, 10.0, 30.0];

struct Imaging {
    clear: ConvexNet,
    unclear: ConvexNet,
    /// Step constant shared by both solvers, tuned for CLEAR.
    c: f64,
    train_secs: f64,
    train: Vec<Image>,
    test: Vec<Image>,
    mask: SamplingMask,
}

fn phantoms(seeds: std::ops::Range<u64>) -> Vec<Image> {
    seeds.map(|s| make_phantom(PhantomKind::Ellipses, SIZE, s).unwrap()).collect()
}

fn mean_psnr(net: &ConvexNet, mask: &SamplingMask, images: &[Image], cfg: &PgdConfig) -> f64 {
    images
        .iter()
        .map(|x| {
            let b = apply_a(mask, x).unwrap();
            psnr_peak_ref(x, &pgd_reconstruct(net, mask, &b, cfg, None).unwrap().image).unwrap()
        })
        .sum::<f64>()
        / images.len() as f64
}

fn train_imaging(mode: Mode, data: &[Tensor]) -> ConvexNet {
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 8,
        learning_rate: 1e-3,
        optimizer: Optimizer::adam(),
        mode,
        seed: 1,
        ..TrainConfig::default()
    };
    let arch = NetArch::Residual(ArchSpec::with_widths(SIZE, SIZE, 8, &[8; 6]));
    let net = ConvexNet::build(arch, mode, cfg.seed).unwrap();
    train_net(net, data, &cfg, |_| {}).unwrap().checkpoint.to_net().unwrap()
}

/// Both regularizers, trained once on 200 phantoms. The ablation differs from
/// CLEAR only in its training mode, so it reuses CLEAR's solver settings; the
/// step constant is picked on validation phantoms disjoint from the test set.
fn imaging() -> &'static Imaging {
    static CELL: OnceLock<Imaging> = OnceLock::new();
    CELL.get_or_init(|| {
        let train = phantoms(0..200);
        let data: Vec<Tensor> = train.iter().map(Image::to_tensor).collect();
        let validation = phantoms(2000..2010);
        let mask = make_mask(MaskKind::Uniform1d, SIZE, SIZE, 3.0, 0.08, 0).unwrap();
        let t = Instant::now();
        let clear = train_imaging(Mode::Clear, &data);
        let train_secs = t.elapsed().as_secs_f64();
        let c = C_GRID
            .iter()
            .copied()
            .map(|c| (c, mean_psnr(&clear, &mask, &validation, &harmonic(100, c))))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        Imaging {
            unclear: train_imaging(Mode::Unclear, &data),
            clear,
            c,
            train_secs,
            train,
            test: phantoms(1000..1020),
            mask,
        }
    })
}

#[test]
fn criterion_8_imaging_gain() {
    let s = imaging();
    let cfg = SuiteConfig {
        pgd: harmonic(100, s.c),
        tv_weights: vec![0.001, 0.003, 0.01, 0.03, 0.1],
        tv_iters: 100,
        noise_level: 0.0,
        noise_seed: 0,
        threads: 1,
    };
    let learned = [LearnedEntry {
        method: Method::Clear,
        net: Some(s.clear.clone()),
    }];
    let out = evaluate_suite(&learned, &s.test, std::slice::from_ref(&s.mask), &cfg).unwrap();
    let get = |m: Method| out.records.iter().find(|r| r.method == m).unwrap();
    let (zf, tv, clear) = (get(Method::ZeroFilled).mean(), get(Method::Tv), get(Method::Clear).mean());
    let gain = clear.psnr_db - zf.psnr_db;
    verdict(
        8,
        gain >= 2.0 && clear.nmse <= tv.mean().nmse && s.train_secs < 1800.0,
        &format!(
            "PSNR clear {:.2} dB vs zero-filled {:.2} dB (gain {gain:.2} dB); NMSE clear {:.4e} vs TV {:.4e} at weight {}; c = {}, training {:.0} s",
            clear.psnr_db,
            zf.psnr_db,
            clear.nmse,
            tv.mean().nmse,
            tv.tv_weight.unwrap(),
            s.c,
            s.train_secs
        ),
    );
}

/// Standard deviation of the PSNR trace over its last 50 iterations, averaged
/// over ten noisy trials.
fn trace_jitter(net: &ConvexNet, s: &Imaging) -> f64 {
    let cfg = PgdConfig {
        record_trace: true,
        ..harmonic(100, s.c)
    };
    let mut total = 0.0;
    for trial in 0..10u64 {
        let x = &s.test[trial as usize];
        let b = add_noise(&s.mask, &apply_a(&s.mask, x).unwrap(), 0.5, 900 + trial).unwrap();
        let run = pgd_reconstruct(net, &s.mask, &b, &cfg, Some(x)).unwrap();
        let tail: Vec<f64> = run.trace.iter().rev().take(50).map(|e| e.psnr.unwrap()).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        total += (tail.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / tail.len() as f64).sqrt();
    }
    total / 10.0
}

/// Midpoint-convexity violations on pairs of distinct images.
fn pairwise_violations(net: &ConvexNet, images: &[Image]) -> usize {
    let mut i = 0;
    net.check_midpoint_convexity_with(1000, 1e-6, || {
        i += 1;
        let x = images[i % images.len()].to_tensor();
        let y = images[(7 * i + 3) % images.len()].to_tensor();
        (x, y)
    })
    .unwrap()
    .violations
}

#[test]
fn criterion_9_convexity_ablation() {
    let s = imaging();
    let clear = trace_jitter(&s.clear, s);
    let unclear = trace_jitter(&s.unclear, s);
    let broken = pairwise_violations(&s.unclear, &s.train);
    verdict(
        9,
        clear <= unclear,
        &format!(
            "mean PSNR-trace std over the last 50 iterations at noise 0.5: clear {clear:.4e} dB, unclear {unclear:.4e} dB (c = {}); unclear net fails midpoint convexity on {broken} of 1000 pairs of training phantoms",
            s.c
        ),
    );
}

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("clear").chain(args.iter().copied()))
}

fn pipeline(root: &Path, name: &str) -> Vec<(String, Vec<u8>)> {
    let dir = root.join(name);
    let d = |s: &str| dir.join(s).display().to_string();
    let arch = ["--set", "arch.stem=2", "--set", "arch.widths=2,2,2,2,2,2", "--seed", "4"];
    assert_eq!(run(&[&["phantom-gen", "--out-dir", &d("data"), "--count", "6"][..], &arch[..]].concat()), 0);
    assert_eq!(run(&["mask-gen", "--out-dir", &d("mask"), "--kind", "poisson-2d", "--seed", "4"]), 0);
    let train = ["train", "--out-dir", &d("train"), "--data", &d("data"), "--epochs", "2", "--batch-size", "3"];
    assert_eq!(run(&[&train[..], &arch[..]].concat()), 0);
    let recon = ["reconstruct", "--out-dir", &d("recon"), "--net", &d("train/checkpoint.ckpt"), "--mask",
        &d("mask/mask.msk"), "--image", &d("data/phantom_0000.climg"), "--noise", "0.1", "--iters", "20"];
    assert_eq!(run(&[&recon[..], &arch[..]].concat()), 0);
    let mut files = Vec::new();
    for sub in ["data", "mask", "train", "recon"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(&dir).unwrap().display().to_string();
            let mut bytes = fs::read(&p).unwrap();
            if rel.ends_with(".txt") {
                // The recorded configuration names the run directory.
                bytes = String::from_utf8(bytes).unwrap().replace(&dir.display().to_string(), "RUN").into_bytes();
            }
            files.push((rel, bytes));
        }
    }
    files
}

#[test]
fn criterion_10_determinism_and_formats() {
    let t = TempDir::new().unwrap();
    let a = pipeline(t.path(), "a");
    let b = pipeline(t.path(), "b");
    let mut same = a.len() == b.len();
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        same &= na == nb && ba == bb;
    }
    let mut exact = true;
    for (name, bytes) in &a {
        if name.ends_with(".climg") {
            exact &= encode_image(&decode_image(bytes).unwrap()).unwrap() == *bytes;
        } else if name.ends_with(".ckpt") {
            exact &= encode_checkpoint(&decode_checkpoint(bytes).unwrap()).unwrap() == *bytes;
        }
    }
    verdict(
        10,
        same && exact,
        &format!("{} output files identical across two seeded runs: {same}; image and checkpoint round trips bit-exact: {exact}", a.len()),
    );
}
