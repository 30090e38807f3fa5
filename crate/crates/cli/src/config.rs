//! Flat `key = value` run configuration. Sources are merged in the order
//! file, environment, flags; later sources win. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clear_core::forward_model::MaskKind;
use clear_core::icnn::{ArchSpec, DenseSpec, NetArch};
use clear_core::solver::{PgdConfig, Schedule};
use clear_core::training::TrainConfig;

use crate::error::{CliError, CliResult};

/// Every accepted key with its default value.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("threads", "1"),
    ("path.out_dir", "."),
    ("path.data", ""),
    ("path.image", ""),
    ("path.mask", ""),
    ("path.net", ""),
    ("path.clear", ""),
    ("path.unclear", ""),
    ("path.ar", ""),
    ("phantom.kind", "ellipses"),
    ("phantom.size", "32"),
    ("phantom.count", "16"),
    ("mask.kind", "uniform-1d"),
    ("mask.height", "32"),
    ("mask.width", "32"),
    ("mask.acceleration", "3"),
    ("mask.acs", "0.08"),
    ("arch.stem", "8"),
    ("arch.widths", "8,8,8,8,8,8"),
    ("arch.three_conv", "false"),
    ("arch.slope", "0.2"),
    ("arch.kernel", "3"),
    ("arch.hidden", "64,64"),
    ("train.mode", "CLEAR"),
    ("train.latent_steps", "10"),
    ("train.latent_step_size", "0.05"),
    ("train.init_noise_std", "0.3"),
    ("train.walk_noise_std", "0.01"),
    ("train.gp_weight", "10"),
    ("train.gp_eps", "0.001"),
    ("train.batch_size", "8"),
    ("train.epochs", "10"),
    ("train.learning_rate", "0.0001"),
    ("train.optimizer", "sgd"),
    ("pgd.max_iters", "100"),
    ("pgd.schedule", "harmonic"),
    ("pgd.c", "0.1"),
    ("pgd.early_stop", "none"),
    ("recon.method", "pgd"),
    ("recon.tv_weight", "0.01"),
    ("recon.tv_iters", "100"),
    ("recon.noise_level", "0"),
    ("eval.tv_weights", "0.001,0.003,0.01,0.03,0.1"),
    ("eval.tv_iters", "100"),
    ("eval.noise_level", "0"),
    ("verify.check", "all"),
    ("verify.manifold", "ball"),
    ("verify.dim", "2"),
    ("verify.pairs", "10000"),
    ("verify.starts", "100"),
    ("verify.eps", "0.1"),
    ("verify.budget", "500"),
    ("verify.iters", "500"),
    ("verify.c", "0.75"),
    ("verify.noise_levels", "0,0.001,0.01,0.1"),
    ("verify.trials", "10"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|&(k, v)| (k, v.to_string())).collect(),
        }
    }
}

fn invalid(msg: String) -> CliError {
    CliError::Validation(msg)
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|&(k, _)| k)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let (k, _) = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| invalid(format!("unknown config key '{key}'")))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("config line {} has no '=': {raw}", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies a `key=value` assignment as given on the command line.
    pub fn apply_assignment(&mut self, s: &str) -> CliResult<()> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| invalid(format!("expected key=value, got '{s}'")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| invalid(format!("value '{v}' for '{key}' does not parse")))
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        let v = self.get(key);
        v.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|_| invalid(format!("entry '{s}' in '{key}' does not parse"))))
            .collect()
    }

    pub fn flag(&self, key: &str) -> CliResult<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(invalid(format!("value '{v}' for '{key}' is not a boolean"))),
        }
    }

    /// Path value, or `None` when unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> CliResult<PathBuf> {
        self.path(key).ok_or_else(|| invalid(format!("'{key}' must be set")))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.parse("seed")
    }

    pub fn threads(&self) -> CliResult<usize> {
        let t: usize = self.parse("threads")?;
        if t == 0 {
            return Err(invalid("threads must be at least 1".into()));
        }
        Ok(t)
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn mask_kind(&self) -> CliResult<MaskKind> {
        Ok(MaskKind::parse(self.get("mask.kind"))?)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let mut cfg = TrainConfig {
            seed: self.seed()?,
            ..TrainConfig::default()
        };
        for key in Self::keys().filter(|k| k.starts_with("train.")) {
            cfg.set(&key["train.".len()..], self.get(key))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pgd_config(&self) -> CliResult<PgdConfig> {
        let early = match self.get("pgd.early_stop") {
            "none" | "" => None,
            _ => Some(self.parse("pgd.early_stop")?),
        };
        let cfg = PgdConfig {
            max_iters: self.parse("pgd.max_iters")?,
            schedule: Schedule::parse(self.get("pgd.schedule"))?,
            c: self.parse("pgd.c")?,
            record_trace: true,
            early_stop: early,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Residual network for images of the given size.
    pub fn image_arch(&self, height: usize, width: usize) -> CliResult<NetArch> {
        let mut a = ArchSpec::with_widths(height, width, self.parse("arch.stem")?, &self.parse_list("arch.widths")?);
        if self.flag("arch.three_conv")? {
            a.three_conv = vec![true; a.block_widths.len()];
        }
        a.slope = self.parse("arch.slope")?;
        a.kernel = self.parse("arch.kernel")?;
        let arch = NetArch::Residual(a);
        arch.validate()?;
        Ok(arch)
    }

    /// Dense network on points of dimension `dim`.
    pub fn point_arch(&self, dim: usize) -> CliResult<NetArch> {
        let arch = NetArch::Dense(DenseSpec {
            input_dim: dim,
            hidden: self.parse_list("arch.hidden")?,
            slope: self.parse("arch.slope")?,
        });
        arch.validate()?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clear_core::training::Optimizer;

    #[test]
    fn text_round_trips_and_rejects_unknown_keys() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\ntrain.epochs = 3  # trailing\n\npgd.c=0.5\n").unwrap();
        assert_eq!(cfg.get("train.epochs"), "3");
        let mut again = RunConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert!(cfg.set("train.nope", "1").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
    }

    #[test]
    fn typed_views_follow_the_keys() {
        let mut cfg = RunConfig::default();
        cfg.set("train.optimizer", "adam").unwrap();
        cfg.set("seed", "9").unwrap();
        let t = cfg.train_config().unwrap();
        assert_eq!(t.seed, 9);
        assert_eq!(t.optimizer, Optimizer::adam());
        cfg.set("pgd.schedule", "sqrt").unwrap();
        assert_eq!(cfg.pgd_config().unwrap().schedule, Schedule::Sqrt);
        cfg.set("pgd.c", "abc").unwrap();
        assert!(cfg.pgd_config().is_err());
    }
}
