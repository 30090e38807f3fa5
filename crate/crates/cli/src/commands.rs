//! Subcommand bodies. Each writes `effective_config.txt` into its output
//! directory before producing anything else.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clear_core::autodiff::Tensor;
use clear_core::evaluation::{
    evaluate_suite, make_phantom, nmse, psnr_peak_ref, records_to_csv, ssim, tv_reconstruct, LearnedEntry, Method,
    PhantomKind, SuiteConfig,
};
use clear_core::forward_model::{add_noise, apply_a, apply_a_adjoint, make_mask, Image};
use clear_core::icnn::{ConvexNet, Mode};
use clear_core::solver::{pgd_reconstruct, PgdConfig, Schedule};
use clear_core::theory_verify::{
    reports_to_csv, verify_distance_properties, verify_minima_on_manifold, verify_pgd_convergence, verify_stability,
    MinimaConfig, SelectorInstance, ToyManifold, VerificationReport,
};
use clear_core::training::{train_net, EpochStats};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{
    encode_png_magnitude, encode_png_mask, read_checkpoint, read_image, read_mask, write_checkpoint, write_image,
    write_mask, write_png,
};

pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn prepare_out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.require_path("path.out_dir")?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_text(&dir.join(EFFECTIVE_CONFIG), &cfg.to_text())?;
    Ok(dir)
}

pub fn run(name: &str, cfg: &RunConfig) -> CliResult<()> {
    match name {
        "phantom-gen" => phantom_gen(cfg),
        "mask-gen" => mask_gen(cfg),
        "train" => train(cfg),
        "reconstruct" => reconstruct(cfg),
        "evaluate" => evaluate(cfg),
        "verify" => verify(cfg),
        other => Err(CliError::Validation(format!("unknown subcommand '{other}'"))),
    }
}

fn phantom_gen(cfg: &RunConfig) -> CliResult<()> {
    let kind = PhantomKind::parse(cfg.get("phantom.kind"))?;
    let size: usize = cfg.parse("phantom.size")?;
    let count: usize = cfg.parse("phantom.count")?;
    let seed = cfg.seed()?;
    let dir = prepare_out_dir(cfg)?;
    for i in 0..count {
        let img = make_phantom(kind, size, seed.wrapping_add(i as u64))?;
        write_image(&dir.join(format!("phantom_{i:04}.climg")), &img)?;
    }
    eprintln!("wrote {count} {} phantoms to {}", kind.name(), dir.display());
    Ok(())
}

fn mask_gen(cfg: &RunConfig) -> CliResult<()> {
    let mask = make_mask(
        cfg.mask_kind()?,
        cfg.parse("mask.height")?,
        cfg.parse("mask.width")?,
        cfg.parse("mask.acceleration")?,
        cfg.parse("mask.acs")?,
        cfg.seed()?,
    )?;
    let dir = prepare_out_dir(cfg)?;
    write_mask(&dir.join("mask.msk"), &mask)?;
    write_png(&dir.join("mask.png"), &encode_png_mask(&mask)?)?;
    eprintln!("wrote {} ({} of {} samples)", mask.descriptor(), mask.sampled_count(), mask.entries().len());
    Ok(())
}

/// Image files of a directory in name order.
fn load_images(dir: &Path) -> CliResult<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "climg"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Validation(format!("no .climg files in {}", dir.display())));
    }
    let images = paths.iter().map(|p| read_image(p)).collect::<CliResult<Vec<_>>>()?;
    if images.iter().any(|i| !i.same_shape(&images[0])) {
        return Err(CliError::Validation(format!("images in {} differ in size", dir.display())));
    }
    Ok(images)
}

const TRAIN_LOG_HEADER: &str = "epoch,loss,real_mean,generated_mean,penalty,clipped";

fn train_log_row(s: &EpochStats) -> String {
    format!(
        "{},{:e},{:e},{:e},{:e},{}\n",
        s.epoch, s.loss, s.real_mean, s.generated_mean, s.penalty, s.clipped
    )
}

fn train(cfg: &RunConfig) -> CliResult<()> {
    let tcfg = cfg.train_config()?;
    let images = load_images(&cfg.require_path("path.data")?)?;
    let arch = cfg.image_arch(images[0].height(), images[0].width())?;
    let dir = prepare_out_dir(cfg)?;
    let log_path = dir.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    log.write_all(format!("{TRAIN_LOG_HEADER}\n").as_bytes())
        .map_err(|e| CliError::io(&log_path, e))?;
    let data: Vec<Tensor> = images.iter().map(Image::to_tensor).collect();
    let net = ConvexNet::build(arch, tcfg.mode, tcfg.seed)?;
    let mut log_err = None;
    let out = train_net(net, &data, &tcfg, |s| {
        eprintln!(
            "epoch {:>4}  loss {:+.5e}  real {:+.4e}  generated {:+.4e}  penalty {:.3e}",
            s.epoch, s.loss, s.real_mean, s.generated_mean, s.penalty
        );
        if let Err(e) = log.write_all(train_log_row(s).as_bytes()) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(CliError::io(&log_path, e));
    }
    write_checkpoint(&dir.join("checkpoint.ckpt"), &out.checkpoint)?;
    eprintln!("wrote {}", dir.join("checkpoint.ckpt").display());
    Ok(())
}

fn load_net(path: &Path) -> CliResult<ConvexNet> {
    Ok(read_checkpoint(path)?.to_net()?)
}

fn trace_csv(trace: &[clear_core::solver::TraceEntry]) -> String {
    let mut s = String::from("iter,phi,residual,psnr_db\n");
    for e in trace {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{}",
            e.iter,
            e.phi,
            e.residual,
            e.psnr.map_or(String::new(), |p| format!("{p:e}"))
        );
    }
    s
}

fn reconstruct(cfg: &RunConfig) -> CliResult<()> {
    let truth = read_image(&cfg.require_path("path.image")?)?;
    let mask = read_mask(&cfg.require_path("path.mask")?)?;
    let method = cfg.get("recon.method").to_string();
    let pgd = cfg.pgd_config()?;
    let net = match method.as_str() {
        "pgd" => Some(load_net(&cfg.require_path("path.net")?)?),
        "zero-filled" | "tv" => None,
        other => return Err(CliError::Validation(format!("unknown recon.method '{other}'"))),
    };
    let b = add_noise(&mask, &apply_a(&mask, &truth)?, cfg.parse("recon.noise_level")?, cfg.seed()?)?;
    let dir = prepare_out_dir(cfg)?;
    let image = match (method.as_str(), net) {
        ("pgd", Some(net)) => {
            let out = pgd_reconstruct(&net, &mask, &b, &pgd, Some(&truth))?;
            write_text(&dir.join("trace.csv"), &trace_csv(&out.trace))?;
            out.image
        }
        ("tv", _) => tv_reconstruct(&mask, &b, cfg.parse("recon.tv_weight")?, cfg.parse("recon.tv_iters")?)?,
        _ => apply_a_adjoint(&mask, &b)?,
    };
    write_image(&dir.join("recon.climg"), &image)?;
    write_png(&dir.join("recon.png"), &encode_png_magnitude(&image)?)?;
    let metrics = format!(
        "method,mask,image_id,nmse,psnr_db,ssim\n{method},{},0,{:e},{:e},{:e}\n",
        mask.descriptor(),
        nmse(&truth, &image)?,
        psnr_peak_ref(&truth, &image)?,
        ssim(&truth, &image)?
    );
    write_text(&dir.join("metrics.csv"), &metrics)?;
    Ok(())
}

fn evaluate(cfg: &RunConfig) -> CliResult<()> {
    let images = load_images(&cfg.require_path("path.data")?)?;
    let mask_list = cfg.get("path.mask");
    if mask_list.is_empty() {
        return Err(CliError::Validation("'path.mask' must list at least one mask".into()));
    }
    let masks = mask_list
        .split(',')
        .map(|p| read_mask(Path::new(p.trim())))
        .collect::<CliResult<Vec<_>>>()?;
    let mut learned = Vec::new();
    for (method, key) in [(Method::Ar, "path.ar"), (Method::Unclear, "path.unclear"), (Method::Clear, "path.clear")] {
        if let Some(p) = cfg.path(key) {
            let net = if p.exists() { Some(load_net(&p)?) } else { None };
            learned.push(LearnedEntry { method, net });
        }
    }
    let mut pgd = cfg.pgd_config()?;
    pgd.record_trace = false;
    let suite = SuiteConfig {
        pgd,
        tv_weights: cfg.parse_list("eval.tv_weights")?,
        tv_iters: cfg.parse("eval.tv_iters")?,
        noise_level: cfg.parse("eval.noise_level")?,
        noise_seed: cfg.seed()?,
        threads: cfg.threads()?,
    };
    let dir = prepare_out_dir(cfg)?;
    let out = evaluate_suite(&learned, &images, &masks, &suite)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    write_text(&dir.join("metrics.csv"), &records_to_csv(&out.records))?;
    for r in &out.records {
        let (m, s) = (r.mean(), r.std());
        eprintln!(
            "{:<12} {:<16} psnr {:6.2} +- {:5.2} dB  nmse {:.4e}  ssim {:.4}",
            r.method.name(),
            r.mask,
            m.psnr_db,
            s.psnr_db,
            m.nmse,
            m.ssim
        );
    }
    Ok(())
}

fn manifold(cfg: &RunConfig) -> CliResult<ToyManifold> {
    let dim: usize = cfg.parse("verify.dim")?;
    let m = match cfg.get("verify.manifold") {
        "ball" => ToyManifold::unit_ball(dim),
        "segment" => ToyManifold::diagonal_segment(),
        "triangle" => ToyManifold::triangle(),
        other => return Err(CliError::Validation(format!("unknown manifold '{other}'"))),
    };
    m.validate()?;
    Ok(m)
}

/// Network for the minima check: loaded from `path.net`, or trained on samples
/// of the manifold with the `train.*` settings.
fn minima_net(cfg: &RunConfig, m: &ToyManifold) -> CliResult<ConvexNet> {
    if let Some(p) = cfg.path("path.net") {
        return load_net(&p);
    }
    let tcfg = cfg.train_config()?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(tcfg.seed);
    let data: Vec<Tensor> = (0..512).map(|_| Tensor::vector(m.sample(&mut rng))).collect();
    let net = ConvexNet::build(cfg.point_arch(m.dim())?, Mode::Clear, tcfg.seed)?;
    let out = train_net(net, &data, &tcfg, |_| {})?;
    Ok(out.checkpoint.to_net()?)
}

fn verify(cfg: &RunConfig) -> CliResult<()> {
    let check = cfg.get("verify.check").to_string();
    let all = ["prop1", "minima", "convergence", "stability"];
    let checks: Vec<&str> = match check.as_str() {
        "all" => all.to_vec(),
        c if all.contains(&c) => vec![all[all.iter().position(|x| *x == c).expect("listed")]],
        other => return Err(CliError::Validation(format!("unknown check '{other}'"))),
    };
    let m = manifold(cfg)?;
    let seed = cfg.seed()?;
    let pgd = PgdConfig {
        max_iters: cfg.parse("verify.iters")?,
        schedule: Schedule::Harmonic,
        c: cfg.parse("verify.c")?,
        record_trace: false,
        early_stop: None,
    };
    let net = if checks.contains(&"minima") { Some(minima_net(cfg, &m)?) } else { None };
    let minima_cfg = MinimaConfig {
        n_starts: cfg.parse("verify.starts")?,
        eps: cfg.parse("verify.eps")?,
        budget: cfg.parse("verify.budget")?,
        seed,
        ..MinimaConfig::default()
    };
    let pairs: usize = cfg.parse("verify.pairs")?;
    let levels: Vec<f64> = cfg.parse_list("verify.noise_levels")?;
    let trials: usize = cfg.parse("verify.trials")?;
    let dir = prepare_out_dir(cfg)?;

    let run_one = |name: &str| -> CliResult<VerificationReport> {
        Ok(match name {
            "prop1" => verify_distance_properties(&m, pairs, seed)?,
            "minima" => verify_minima_on_manifold(net.as_ref().expect("trained above"), &m, &minima_cfg)?,
            "convergence" => verify_pgd_convergence(&SelectorInstance::analytic(), &pgd, 1e-3)?,
            _ => verify_stability(&SelectorInstance::analytic(), &levels, trials, &pgd, 1e-3, seed)?,
        })
    };
    let reports: Vec<VerificationReport> = if cfg.threads()? > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = checks.iter().map(|c| s.spawn(|| run_one(c))).collect();
            handles.into_iter().map(|h| h.join().expect("check panicked")).collect::<CliResult<_>>()
        })?
    } else {
        checks.iter().map(|c| run_one(c)).collect::<CliResult<_>>()?
    };
    let text: String = reports.iter().map(VerificationReport::to_text).collect();
    eprint!("{text}");
    write_text(&dir.join("report.txt"), &text)?;
    write_text(&dir.join("report.csv"), &reports_to_csv(&reports))?;
    Ok(())
}
