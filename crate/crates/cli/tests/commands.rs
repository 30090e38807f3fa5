use std::fs;
use std::path::Path;

use clear_cli::dispatch;
use clear_cli::formats::{read_checkpoint, read_image, write_checkpoint, write_image, write_mask};
use clear_core::autodiff::ParamSet;
use clear_core::evaluation::{make_phantom, PhantomKind};
use clear_core::forward_model::SamplingMask;
use clear_core::icnn::{ArchSpec, ConvexNet, Mode, NetArch};
use clear_core::training::{Checkpoint, TrainConfig};
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("clear").chain(args.iter().copied()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn tiny_arch() -> NetArch {
    NetArch::Residual(ArchSpec::with_widths(32, 32, 2, &[2; 6]))
}

#[test]
fn exit_codes() {
    let t = TempDir::new().unwrap();
    let out = p(t.path(), "o");
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["train", "--bogus-flag"]), 1);
    assert_eq!(run(&["phantom-gen", "--out-dir", &out, "--set", "no.such=1"]), 1);
    assert_eq!(run(&["phantom-gen", "--out-dir", &out, "--count", "-3"]), 1);
    assert_eq!(run(&["train", "--out-dir", &out, "--data", &p(t.path(), "missing")]), 2);
    let junk = p(t.path(), "junk.ckpt");
    fs::write(&junk, b"CLCKPT1 not really").unwrap();
    let img = p(t.path(), "x.climg");
    write_image(Path::new(&img), &make_phantom(PhantomKind::Ellipses, 32, 0).unwrap()).unwrap();
    let mask = p(t.path(), "m.msk");
    write_mask(Path::new(&mask), &SamplingMask::full(32, 32)).unwrap();
    assert_eq!(run(&["reconstruct", "--out-dir", &out, "--net", &junk, "--mask", &mask, "--image", &img]), 1);
}

#[test]
fn every_command_records_its_configuration() {
    let t = TempDir::new().unwrap();
    let out = p(t.path(), "ph");
    assert_eq!(run(&["phantom-gen", "--out-dir", &out, "--count", "2", "--size", "32", "--seed", "5"]), 0);
    let text = fs::read_to_string(t.path().join("ph/effective_config.txt")).unwrap();
    assert!(text.contains("phantom.count = 2\n") && text.contains("seed = 5\n"));
    let a = read_image(&t.path().join("ph/phantom_0001.climg")).unwrap();
    let b = make_phantom(PhantomKind::Ellipses, 32, 6).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x == *y as f32 as f64));
}

#[test]
fn zero_epoch_training_writes_the_initialization_deterministically() {
    let t = TempDir::new().unwrap();
    let data = p(t.path(), "data");
    assert_eq!(run(&["phantom-gen", "--out-dir", &data, "--count", "3", "--size", "32"]), 0);
    let common = ["--data", &data, "--epochs", "0", "--seed", "11", "--set", "arch.stem=2", "--set", "arch.widths=2,2,2,2,2,2"];
    let a = p(t.path(), "a");
    let b = p(t.path(), "b");
    assert_eq!(run(&[&["train", "--out-dir", &a][..], &common[..]].concat()), 0);
    assert_eq!(run(&[&["train", "--out-dir", &b][..], &common[..]].concat()), 0);
    let bytes = fs::read(t.path().join("a/checkpoint.ckpt")).unwrap();
    assert_eq!(bytes, fs::read(t.path().join("b/checkpoint.ckpt")).unwrap());

    let ckpt = read_checkpoint(&t.path().join("a/checkpoint.ckpt")).unwrap();
    let mut net = ConvexNet::build(tiny_arch(), Mode::Clear, 11).unwrap();
    net.clip_weights();
    let cfg = TrainConfig { epochs: 0, seed: 11, ..TrainConfig::default() };
    assert_eq!(ckpt, Checkpoint::from_net(&net, &cfg, 0));
    let log = fs::read_to_string(t.path().join("a/train_log.csv")).unwrap();
    assert_eq!(log, "epoch,loss,real_mean,generated_mean,penalty,clipped\n");
}

#[test]
fn one_epoch_training_is_bit_reproducible() {
    let t = TempDir::new().unwrap();
    let data = p(t.path(), "data");
    assert_eq!(run(&["phantom-gen", "--out-dir", &data, "--count", "4", "--size", "32"]), 0);
    let go = |name: &str| {
        let out = p(t.path(), name);
        let args = ["train", "--out-dir", &out, "--data", &data, "--epochs", "1", "--batch-size", "2",
            "--optimizer", "adam", "--learning-rate", "0.001", "--set", "arch.stem=2", "--set", "arch.widths=2,2,2,2,2,2"];
        assert_eq!(run(&args), 0);
        (fs::read(t.path().join(name).join("checkpoint.ckpt")).unwrap(),
         fs::read_to_string(t.path().join(name).join("train_log.csv")).unwrap())
    };
    let (c1, l1) = go("one");
    let (c2, l2) = go("two");
    assert_eq!(c1, c2);
    assert_eq!(l1, l2);
    assert_eq!(l1.lines().count(), 2);
}

#[test]
fn zero_regularizer_on_full_mask_returns_the_zero_filled_image() {
    let t = TempDir::new().unwrap();
    let img = p(t.path(), "x.climg");
    write_image(Path::new(&img), &make_phantom(PhantomKind::SheppLogan, 32, 1).unwrap()).unwrap();
    let mask = p(t.path(), "full.msk");
    write_mask(Path::new(&mask), &SamplingMask::full(32, 32)).unwrap();
    let net = ConvexNet::from_parts(tiny_arch(), Mode::Clear, ParamSet::zeros(&tiny_arch().layers())).unwrap();
    let ckpt = p(t.path(), "zero.ckpt");
    write_checkpoint(Path::new(&ckpt), &Checkpoint::from_net(&net, &TrainConfig::default(), 0)).unwrap();

    let pgd = p(t.path(), "pgd");
    let zf = p(t.path(), "zf");
    assert_eq!(run(&["reconstruct", "--out-dir", &pgd, "--net", &ckpt, "--mask", &mask, "--image", &img, "--iters", "20"]), 0);
    assert_eq!(run(&["reconstruct", "--out-dir", &zf, "--method", "zero-filled", "--mask", &mask, "--image", &img]), 0);
    let a = fs::read(t.path().join("pgd/recon.climg")).unwrap();
    assert_eq!(a, fs::read(t.path().join("zf/recon.climg")).unwrap());
    let trace = fs::read_to_string(t.path().join("pgd/trace.csv")).unwrap();
    assert!(trace.starts_with("iter,phi,residual,psnr_db\n"));
}

#[test]
fn reloaded_checkpoint_reconstructs_identically() {
    let t = TempDir::new().unwrap();
    let img = p(t.path(), "x.climg");
    write_image(Path::new(&img), &make_phantom(PhantomKind::Ellipses, 32, 4).unwrap()).unwrap();
    let mask = p(t.path(), "m");
    assert_eq!(run(&["mask-gen", "--out-dir", &mask, "--size", "32", "--kind", "random-1d"]), 0);
    let mask = p(t.path(), "m/mask.msk");
    let mut net = ConvexNet::build(tiny_arch(), Mode::Clear, 2).unwrap();
    net.clip_weights();
    let ckpt = Checkpoint::from_net(&net, &TrainConfig::default(), 0);
    let first = p(t.path(), "first.ckpt");
    write_checkpoint(Path::new(&first), &ckpt).unwrap();
    let second = p(t.path(), "second.ckpt");
    write_checkpoint(Path::new(&second), &read_checkpoint(Path::new(&first)).unwrap()).unwrap();
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    for (name, c) in [("r1", &first), ("r2", &second)] {
        let out = p(t.path(), name);
        assert_eq!(run(&["reconstruct", "--out-dir", &out, "--net", c, "--mask", &mask, "--image", &img, "--iters", "10"]), 0);
    }
    for f in ["recon.climg", "trace.csv", "metrics.csv"] {
        assert_eq!(fs::read(t.path().join("r1").join(f)).unwrap(), fs::read(t.path().join("r2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn evaluate_skips_missing_checkpoints() {
    let t = TempDir::new().unwrap();
    let data = p(t.path(), "data");
    assert_eq!(run(&["phantom-gen", "--out-dir", &data, "--count", "2", "--size", "32"]), 0);
    assert_eq!(run(&["mask-gen", "--out-dir", &p(t.path(), "m"), "--size", "32"]), 0);
    let out = p(t.path(), "ev");
    let args = ["evaluate", "--out-dir", &out, "--data", &data, "--mask", &p(t.path(), "m/mask.msk"),
        "--clear", &p(t.path(), "absent.ckpt"), "--set", "eval.tv_weights=0.01", "--set", "eval.tv_iters=5"];
    assert_eq!(run(&args), 0);
    let csv = fs::read_to_string(t.path().join("ev/metrics.csv")).unwrap();
    assert!(csv.starts_with("method,mask,image_id,nmse,psnr_db,ssim\n"));
    assert!(csv.contains("zero-filled,") && csv.contains("tv,") && !csv.contains("clear,"));
}

#[test]
fn verify_writes_a_passing_distance_report() {
    let t = TempDir::new().unwrap();
    let out = p(t.path(), "v");
    for m in ["ball", "segment", "triangle"] {
        assert_eq!(run(&["verify", "--out-dir", &out, "--check", "prop1", "--manifold", m, "--set", "verify.pairs=500"]), 0);
        let csv = fs::read_to_string(t.path().join("v/report.csv")).unwrap();
        assert!(csv.starts_with("check,passed,key,value\n"));
        assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("true")), "{m}: {csv}");
    }
    let both = p(t.path(), "w");
    assert_eq!(run(&["verify", "--out-dir", &both, "--check", "convergence", "--threads", "2"]), 0);
    let txt = fs::read_to_string(t.path().join("w/report.txt")).unwrap();
    assert!(txt.contains("PASS"), "{txt}");
}

#[test]
fn effective_config_reproduces_the_run() {
    let t = TempDir::new().unwrap();
    let img = p(t.path(), "x.climg");
    write_image(Path::new(&img), &make_phantom(PhantomKind::PiecewiseConstant, 32, 8).unwrap()).unwrap();
    let before = fs::read(&img).unwrap();
    assert_eq!(run(&["mask-gen", "--out-dir", &p(t.path(), "m"), "--kind", "gaussian-2d", "--seed", "3"]), 0);
    let first = p(t.path(), "first");
    let args = ["reconstruct", "--out-dir", &first, "--method", "tv", "--mask", &p(t.path(), "m/mask.msk"),
        "--image", &img, "--noise", "0.05", "--seed", "9", "--set", "recon.tv_iters=15"];
    assert_eq!(run(&args), 0);
    let again = p(t.path(), "again");
    assert_eq!(run(&["reconstruct", "--config", &p(t.path(), "first/effective_config.txt"), "--out-dir", &again]), 0);
    for f in ["recon.climg", "recon.png", "metrics.csv"] {
        assert_eq!(fs::read(t.path().join("first").join(f)).unwrap(), fs::read(t.path().join("again").join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(&img).unwrap(), before);
    assert!(t.path().join("m/mask.png").exists());
}
