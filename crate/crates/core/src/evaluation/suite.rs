//! Comparative runner: every method on every (mask, image) pair, with
//! per-image metrics and mean/std aggregates.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::forward_model::{add_noise, apply_a, apply_a_adjoint, Image, SamplingMask};
use crate::icnn::ConvexNet;
use crate::solver::{pgd_reconstruct, PgdConfig};

use super::metrics::{nmse, psnr_peak_ref, ssim};
use super::tv::tv_reconstruct;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    ZeroFilled,
    Tv,
    Ar,
    Unclear,
    Clear,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::ZeroFilled, Method::Tv, Method::Ar, Method::Unclear, Method::Clear];

    pub fn name(self) -> &'static str {
        match self {
            Method::ZeroFilled => "zero-filled",
            Method::Tv => "tv",
            Method::Ar => "ar",
            Method::Unclear => "unclear",
            Method::Clear => "clear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::Ar | Method::Unclear | Method::Clear)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub image_id: usize,
    pub nmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub nmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub method: Method,
    pub mask: String,
    /// Selected weight for the TV baseline.
    pub tv_weight: Option<f64>,
    pub per_image: Vec<ImageMetrics>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsRecord {
    /// Means over images.
    pub fn mean(&self) -> Aggregate {
        self.aggregate().0
    }

    /// Population standard deviations over images.
    pub fn std(&self) -> Aggregate {
        self.aggregate().1
    }

    fn aggregate(&self) -> (Aggregate, Aggregate) {
        let it = self.per_image.iter();
        let (n_m, n_s) = mean_std(it.clone().map(|m| m.nmse));
        let (p_m, p_s) = mean_std(it.clone().map(|m| m.psnr_db));
        let (s_m, s_s) = mean_std(it.map(|m| m.ssim));
        (
            Aggregate {
                nmse: n_m,
                psnr_db: p_m,
                ssim: s_m,
            },
            Aggregate {
                nmse: n_s,
                psnr_db: p_s,
                ssim: s_s,
            },
        )
    }
}

pub const CSV_HEADER: &str = "method,mask,image_id,nmse,psnr_db,ssim";

/// Per-image rows followed by `mean` and `std` rows for each record.
pub fn records_to_csv(records: &[MetricsRecord]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in records {
        for m in &r.per_image {
            let _ = writeln!(s, "{},{},{},{:e},{:e},{:e}", r.method.name(), r.mask, m.image_id, m.nmse, m.psnr_db, m.ssim);
        }
        if !r.per_image.is_empty() {
            for (tag, a) in [("mean", r.mean()), ("std", r.std())] {
                let _ = writeln!(s, "{},{},{tag},{:e},{:e},{:e}", r.method.name(), r.mask, a.nmse, a.psnr_db, a.ssim);
            }
        }
    }
    s
}

/// A learned method and its network, if one could be loaded.
#[derive(Clone, Debug)]
pub struct LearnedEntry {
    pub method: Method,
    pub net: Option<ConvexNet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub pgd: PgdConfig,
    /// Candidate TV weights; the one with the lowest mean NMSE is reported.
    pub tv_weights: Vec<f64>,
    pub tv_iters: usize,
    /// Relative k-space noise level, 0 for exact data.
    pub noise_level: f64,
    pub noise_seed: u64,
    pub threads: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            pgd: PgdConfig {
                record_trace: false,
                ..PgdConfig::default()
            },
            tv_weights: vec![0.001, 0.003, 0.01, 0.03, 0.1],
            tv_iters: 100,
            noise_level: 0.0,
            noise_seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutput {
    pub records: Vec<MetricsRecord>,
    pub warnings: Vec<String>,
}

/// Runs `f` over `0..n` on up to `threads` workers; results come back in
/// index order regardless of scheduling.
fn par_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(f).collect::<Result<Vec<T>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn metrics(id: usize, truth: &Image, x: &Image) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        image_id: id,
        nmse: nmse(truth, x)?,
        psnr_db: psnr_peak_ref(truth, x)?,
        ssim: ssim(truth, x)?,
    })
}

/// Evaluates zero-filled, TV and each learned method with a network on all
/// masks and images. Learned methods without a network are skipped with a
/// warning. Records are ordered by mask, then method.
pub fn evaluate_suite(
    learned: &[LearnedEntry],
    dataset: &[Image],
    masks: &[SamplingMask],
    cfg: &SuiteConfig,
) -> Result<SuiteOutput> {
    if dataset.is_empty() || masks.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs at least one image and one mask".into()));
    }
    if cfg.tv_weights.is_empty() {
        return Err(Error::InvalidConfig("tv weight grid is empty".into()));
    }
    cfg.pgd.validate()?;
    for m in masks {
        if let Some(img) = dataset.iter().find(|i| i.height() != m.height() || i.width() != m.width()) {
            return Err(Error::Shape {
                context: "evaluation image vs mask",
                expected: vec![m.height(), m.width()],
                found: vec![img.height(), img.width()],
            });
        }
    }
    let mut warnings = Vec::new();
    let mut nets = Vec::new();
    for e in learned {
        if !e.method.is_learned() {
            return Err(Error::InvalidConfig(format!("method '{}' takes no checkpoint", e.method.name())));
        }
        match &e.net {
            Some(net) => nets.push((e.method, net)),
            None => warnings.push(format!("no checkpoint for '{}'; skipped", e.method.name())),
        }
    }
    nets.sort_by_key(|(m, _)| *m);

    let mut records = Vec::new();
    for (mi, mask) in masks.iter().enumerate() {
        let measurements = par_map(dataset.len(), cfg.threads, |i| {
            let b = apply_a(mask, &dataset[i])?;
            let seed = cfg.noise_seed.wrapping_add((mi * dataset.len() + i) as u64);
            add_noise(mask, &b, cfg.noise_level, seed)
        })?;
        let name = mask.descriptor();

        let zf = par_map(dataset.len(), cfg.threads, |i| {
            metrics(i, &dataset[i], &apply_a_adjoint(mask, &measurements[i])?)
        })?;
        records.push(MetricsRecord {
            method: Method::ZeroFilled,
            mask: name.clone(),
            tv_weight: None,
            per_image: zf,
        });

        let mut best: Option<MetricsRecord> = None;
        for &w in &cfg.tv_weights {
            let per_image = par_map(dataset.len(), cfg.threads, |i| {
                metrics(i, &dataset[i], &tv_reconstruct(mask, &measurements[i], w, cfg.tv_iters)?)
            })?;
            let rec = MetricsRecord {
                method: Method::Tv,
                mask: name.clone(),
                tv_weight: Some(w),
                per_image,
            };
            if best.as_ref().is_none_or(|b| rec.mean().nmse < b.mean().nmse) {
                best = Some(rec);
            }
        }
        records.extend(best);

        for &(method, net) in &nets {
            let per_image = par_map(dataset.len(), cfg.threads, |i| {
                let out = pgd_reconstruct(net, mask, &measurements[i], &cfg.pgd, None)?;
                metrics(i, &dataset[i], &out.image)
            })?;
            records.push(MetricsRecord {
                method,
                mask: name.clone(),
                tv_weight: None,
                per_image,
            });
        }
    }
    Ok(SuiteOutput { records, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let serial = par_map(17, 1, |i| Ok(i * i)).unwrap();
        let parallel = par_map(17, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
    }
}
