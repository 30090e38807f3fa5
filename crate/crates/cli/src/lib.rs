//! Command-line front end: subcommands, run configuration and file formats.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "clear", version, about = "Learned convex regularizers for undersampled Fourier imaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, env = "CLEAR_CONFIG")]
    config: Option<PathBuf>,
    /// Set any configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, env = "CLEAR_SEED")]
    seed: Option<String>,
    #[arg(long, env = "CLEAR_THREADS")]
    threads: Option<String>,
    #[arg(long, env = "CLEAR_OUT_DIR")]
    out_dir: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic phantom images.
    PhantomGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "CLEAR_KIND")]
        kind: Option<String>,
        #[arg(long, env = "CLEAR_SIZE")]
        size: Option<String>,
        #[arg(long, env = "CLEAR_COUNT")]
        count: Option<String>,
    },
    /// Write a k-space sampling mask.
    MaskGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "CLEAR_KIND")]
        kind: Option<String>,
        /// Sets both height and width.
        #[arg(long, env = "CLEAR_SIZE")]
        size: Option<String>,
        #[arg(long, env = "CLEAR_HEIGHT")]
        height: Option<String>,
        #[arg(long, env = "CLEAR_WIDTH")]
        width: Option<String>,
        #[arg(long, env = "CLEAR_ACCELERATION")]
        acceleration: Option<String>,
        #[arg(long, env = "CLEAR_ACS")]
        acs: Option<String>,
    },
    /// Train a regularizer on a directory of images.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "CLEAR_DATA")]
        data: Option<String>,
        #[arg(long, env = "CLEAR_MODE")]
        mode: Option<String>,
        #[arg(long, env = "CLEAR_EPOCHS")]
        epochs: Option<String>,
        #[arg(long, env = "CLEAR_BATCH_SIZE")]
        batch_size: Option<String>,
        #[arg(long, env = "CLEAR_LEARNING_RATE")]
        learning_rate: Option<String>,
        #[arg(long, env = "CLEAR_OPTIMIZER")]
        optimizer: Option<String>,
    },
    /// Reconstruct one image from simulated undersampled data.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "CLEAR_NET")]
        net: Option<String>,
        #[arg(long, env = "CLEAR_MASK")]
        mask: Option<String>,
        #[arg(long, env = "CLEAR_IMAGE")]
        image: Option<String>,
        /// pgd, zero-filled or tv.
        #[arg(long, env = "CLEAR_METHOD")]
        method: Option<String>,
        #[arg(long, env = "CLEAR_NOISE")]
        noise: Option<String>,
        #[arg(long, env = "CLEAR_ITERS")]
        iters: Option<String>,
    },
    /// Compare all methods on a directory of images.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "CLEAR_DATA")]
        data: Option<String>,
        /// Comma-separated mask files.
        #[arg(long, env = "CLEAR_MASK")]
        mask: Option<String>,
        #[arg(long, env = "CLEAR_CLEAR")]
        clear: Option<String>,
        #[arg(long, env = "CLEAR_UNCLEAR")]
        unclear: Option<String>,
        #[arg(long, env = "CLEAR_AR")]
        ar: Option<String>,
        #[arg(long, env = "CLEAR_NOISE")]
        noise: Option<String>,
    },
    /// Run numerical checks on toy problems.
    Verify {
        #[command(flatten)]
        common: Common,
        /// prop1, minima, convergence, stability or all.
        #[arg(long, env = "CLEAR_CHECK")]
        check: Option<String>,
        #[arg(long, env = "CLEAR_MANIFOLD")]
        manifold: Option<String>,
        #[arg(long, env = "CLEAR_DIM")]
        dim: Option<String>,
        #[arg(long, env = "CLEAR_NET")]
        net: Option<String>,
    },
}

type Overrides<'a> = Vec<(&'static str, &'a Option<String>)>;

impl Command {
    fn parts(&self) -> (&'static str, &Common, Overrides<'_>) {
        match self {
            Command::PhantomGen { common, kind, size, count } => (
                "phantom-gen",
                common,
                vec![("phantom.kind", kind), ("phantom.size", size), ("phantom.count", count)],
            ),
            Command::MaskGen {
                common,
                kind,
                size,
                height,
                width,
                acceleration,
                acs,
            } => (
                "mask-gen",
                common,
                vec![
                    ("mask.kind", kind),
                    ("mask.height", size),
                    ("mask.width", size),
                    ("mask.height", height),
                    ("mask.width", width),
                    ("mask.acceleration", acceleration),
                    ("mask.acs", acs),
                ],
            ),
            Command::Train {
                common,
                data,
                mode,
                epochs,
                batch_size,
                learning_rate,
                optimizer,
            } => (
                "train",
                common,
                vec![
                    ("path.data", data),
                    ("train.mode", mode),
                    ("train.epochs", epochs),
                    ("train.batch_size", batch_size),
                    ("train.learning_rate", learning_rate),
                    ("train.optimizer", optimizer),
                ],
            ),
            Command::Reconstruct {
                common,
                net,
                mask,
                image,
                method,
                noise,
                iters,
            } => (
                "reconstruct",
                common,
                vec![
                    ("path.net", net),
                    ("path.mask", mask),
                    ("path.image", image),
                    ("recon.method", method),
                    ("recon.noise_level", noise),
                    ("pgd.max_iters", iters),
                ],
            ),
            Command::Evaluate {
                common,
                data,
                mask,
                clear,
                unclear,
                ar,
                noise,
            } => (
                "evaluate",
                common,
                vec![
                    ("path.data", data),
                    ("path.mask", mask),
                    ("path.clear", clear),
                    ("path.unclear", unclear),
                    ("path.ar", ar),
                    ("eval.noise_level", noise),
                ],
            ),
            Command::Verify {
                common,
                check,
                manifold,
                dim,
                net,
            } => (
                "verify",
                common,
                vec![
                    ("verify.check", check),
                    ("verify.manifold", manifold),
                    ("verify.dim", dim),
                    ("path.net", net),
                ],
            ),
        }
    }
}

/// Builds the effective configuration: file, then environment and flags
/// (clap resolves flag over environment), then `--set` assignments.
fn build_config(common: &Common, overrides: &Overrides<'_>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    let shared = [("seed", &common.seed), ("threads", &common.threads), ("path.out_dir", &common.out_dir)];
    for (key, value) in shared.iter().chain(overrides.iter()) {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for s in &common.set {
        cfg.apply_assignment(s)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let (name, common, overrides) = cli.command.parts();
    let cfg = build_config(common, &overrides)?;
    commands::run(name, &cfg)
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
