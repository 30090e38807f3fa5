use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Uniform1d,
    Random1d,
    Poisson2d,
    Gaussian2d,
    /// Every k-space sample acquired.
    Full,
}

impl MaskKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Uniform1d => "uniform-1d",
            MaskKind::Random1d => "random-1d",
            MaskKind::Poisson2d => "poisson-2d",
            MaskKind::Gaussian2d => "gaussian-2d",
            MaskKind::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform-1d" => MaskKind::Uniform1d,
            "random-1d" => MaskKind::Random1d,
            "poisson-2d" => MaskKind::Poisson2d,
            "gaussian-2d" => MaskKind::Gaussian2d,
            "full" => MaskKind::Full,
            other => return Err(Error::InvalidConfig(format!("unknown mask kind '{other}'"))),
        })
    }
}

/// Binary Cartesian k-space sampling pattern. 1-D kinds sample whole columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    kind: MaskKind,
    data: Vec<bool>,
}

impl SamplingMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            kind: MaskKind::Full,
            data: vec![true; height * width],
        }
    }

    /// Wraps explicit entries; at least one must be set.
    pub fn from_entries(height: usize, width: usize, kind: MaskKind, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape {
                context: "mask entries",
                expected: vec![height, width],
                found: vec![data.len()],
            });
        }
        if !data.iter().any(|&b| b) {
            return Err(Error::InvalidConfig("mask has no sampled entries".into()));
        }
        Ok(Self {
            height,
            width,
            kind,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn entries(&self) -> &[bool] {
        &self.data
    }

    pub fn is_sampled(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn sampled_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Total over kept samples.
    pub fn acceleration(&self) -> f64 {
        self.data.len() as f64 / self.sampled_count() as f64
    }

    /// Short label, e.g. `uniform-1d@2.91`.
    pub fn descriptor(&self) -> String {
        format!("{}@{:.2}", self.kind.name(), self.acceleration())
    }
}

/// Indices of the centered band of `round(fraction * len)` entries.
fn center_band(len: usize, fraction: f64) -> Vec<usize> {
    let n = ((fraction * len as f64).round() as usize).min(len);
    let start = (len - n) / 2 + (len - n) % 2;
    (start..start + n).collect()
}

/// Builds a sampling mask of the requested kind and acceleration.
///
/// The fully sampled center region (band of columns for 1-D kinds, square for
/// 2-D kinds) counts toward the sample budget, so the achieved acceleration
/// stays within 10% of the request.
pub fn make_mask(
    kind: MaskKind,
    height: usize,
    width: usize,
    acceleration: f64,
    acs_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidConfig("mask dimensions must be positive".into()));
    }
    if kind == MaskKind::Full {
        return Ok(SamplingMask::full(height, width));
    }
    if !(acceleration > 1.0) || !acceleration.is_finite() {
        return Err(Error::InvalidConfig(format!("acceleration {acceleration} must exceed 1")));
    }
    if !(0.0..1.0).contains(&acs_fraction) {
        return Err(Error::InvalidConfig(format!("acs fraction {acs_fraction} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match kind {
        MaskKind::Uniform1d | MaskKind::Random1d => {
            let cols = column_pattern(kind, width, acceleration, acs_fraction, &mut rng)?;
            let mut data = vec![false; height * width];
            for r in 0..height {
                for &c in &cols {
                    data[r * width + c] = true;
                }
            }
            data
        }
        MaskKind::Gaussian2d => gaussian_2d(height, width, acceleration, acs_fraction, &mut rng)?,
        MaskKind::Poisson2d => poisson_2d(height, width, acceleration, acs_fraction, &mut rng)?,
        MaskKind::Full => unreachable!(),
    };
    let mask = SamplingMask::from_entries(height, width, kind, data)?;
    let achieved = mask.acceleration();
    if achieved < 0.9 * acceleration || achieved > 1.1 * acceleration {
        return Err(Error::Infeasible(format!(
            "{} mask on {height}x{width} reaches acceleration {achieved:.3}, requested {acceleration}",
            kind.name()
        )));
    }
    Ok(mask)
}

fn check_acs_budget(acs: usize, total: usize, acceleration: f64) -> Result<()> {
    if acs > 0 && (total as f64 / acs as f64) < 0.9 * acceleration {
        return Err(Error::Infeasible(format!(
            "center region of {acs} samples alone gives acceleration {:.3} < {acceleration}",
            total as f64 / acs as f64
        )));
    }
    Ok(())
}

fn column_pattern(
    kind: MaskKind,
    width: usize,
    acceleration: f64,
    acs_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let target = ((width as f64 / acceleration).round() as usize).max(1);
    let acs = center_band(width, acs_fraction);
    check_acs_budget(acs.len(), width, acceleration)?;
    let outer: Vec<usize> = (0..width).filter(|c| !acs.contains(c)).collect();
    let remaining = target.saturating_sub(acs.len()).min(outer.len());
    let picked: Vec<usize> = match kind {
        MaskKind::Uniform1d => (0..remaining).map(|j| outer[j * outer.len() / remaining]).collect(),
        _ => {
            let mut pool = outer.clone();
            pool.shuffle(rng);
            pool.truncate(remaining);
            pool
        }
    };
    let mut cols: Vec<usize> = acs.into_iter().chain(picked).collect();
    cols.sort_unstable();
    Ok(cols)
}

struct Grid2d {
    height: usize,
    width: usize,
    acs: Vec<bool>,
    target: usize,
}

impl Grid2d {
    fn new(height: usize, width: usize, acceleration: f64, acs_fraction: f64) -> Result<Self> {
        let total = height * width;
        let target = ((total as f64 / acceleration).round() as usize).max(1);
        let side = (acs_fraction * height.min(width) as f64).round() as usize;
        let rows = center_band(height, side as f64 / height as f64);
        let cols = center_band(width, side as f64 / width as f64);
        let mut acs = vec![false; total];
        for &r in &rows {
            for &c in &cols {
                acs[r * width + c] = true;
            }
        }
        check_acs_budget(rows.len() * cols.len(), total, acceleration)?;
        Ok(Self {
            height,
            width,
            acs,
            target,
        })
    }

    /// Distance from the k-space center normalized so corners sit at ~1.
    fn radius(&self, idx: usize) -> f64 {
        let (r, c) = (idx / self.width, idx % self.width);
        let dy = (r as f64 - self.height as f64 / 2.0) / (self.height as f64 / 2.0);
        let dx = (c as f64 - self.width as f64 / 2.0) / (self.width as f64 / 2.0);
        (dx * dx + dy * dy).sqrt() / std::f64::consts::SQRT_2
    }
}

/// Rejection sampling from a radial Gaussian density until the budget is met.
fn gaussian_2d(
    height: usize,
    width: usize,
    acceleration: f64,
    acs_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<bool>> {
    let grid = Grid2d::new(height, width, acceleration, acs_fraction)?;
    let mut data = grid.acs.clone();
    let mut count = data.iter().filter(|&&b| b).count();
    let sigma = 0.35;
    let total = height * width;
    while count < grid.target {
        let idx = rng.random_range(0..total);
        if data[idx] {
            continue;
        }
        let r = grid.radius(idx);
        if rng.random::<f64>() < (-(r * r) / (2.0 * sigma * sigma)).exp() {
            data[idx] = true;
            count += 1;
        }
    }
    Ok(data)
}

/// Variable-density dart throwing: the exclusion radius grows linearly with
/// distance from the center; its base scale is bisected to hit the budget.
fn poisson_2d(
    height: usize,
    width: usize,
    acceleration: f64,
    acs_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<bool>> {
    let grid = Grid2d::new(height, width, acceleration, acs_fraction)?;
    let total = height * width;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);

    let throw = |scale: f64| -> Vec<bool> {
        let mut data = grid.acs.clone();
        let mut accepted: Vec<(f64, f64)> = Vec::new();
        for &idx in &order {
            if data[idx] {
                continue;
            }
            let (r, c) = ((idx / width) as f64, (idx % width) as f64);
            let min_dist = scale * (0.5 + 2.0 * grid.radius(idx));
            if accepted
                .iter()
                .all(|&(ar, ac)| (ar - r).powi(2) + (ac - c).powi(2) >= min_dist * min_dist)
            {
                accepted.push((r, c));
                data[idx] = true;
            }
        }
        data
    };
    let count = |d: &[bool]| d.iter().filter(|&&b| b).count();

    let (mut lo, mut hi) = (0.0_f64, (height.max(width)) as f64);
    let mut best = throw(lo);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let d = throw(mid);
        if count(&d) >= grid.target {
            lo = mid;
            best = d;
        } else {
            hi = mid;
        }
    }
    // `best` holds at least `target` samples; drop the excess in reverse
    // acceptance order, never touching the center region.
    let mut excess = count(&best).saturating_sub(grid.target);
    for &idx in order.iter().rev() {
        if excess == 0 {
            break;
        }
        if best[idx] && !grid.acs[idx] {
            best[idx] = false;
            excess -= 1;
        }
    }
    Ok(best)
}
