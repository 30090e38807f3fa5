//! Masked unitary 2-D DFT, its adjoint and the exact data-consistency
//! projection. K-space arrays are stored center-shifted (DC at
//! `(height / 2, width / 2)`), matching the mask layout.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

use super::image::Image;
use super::mask::SamplingMask;
use crate::error::{Error, Result};

/// Complex k-space samples; entries outside the mask are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Measurement {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    /// Wraps raw k-space values, zeroing everything the mask does not sample.
    pub fn from_values(mask: &SamplingMask, mut data: Vec<Complex64>) -> Result<Self> {
        if data.len() != mask.height() * mask.width() {
            return Err(Error::Shape {
                context: "measurement values",
                expected: vec![mask.height(), mask.width()],
                found: vec![data.len()],
            });
        }
        for (v, &m) in data.iter_mut().zip(mask.entries()) {
            if !m {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        Ok(Self {
            height: mask.height(),
            width: mask.width(),
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[Complex64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Measurement) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Real inner product `Re <self, other>`.
    pub fn inner(&self, other: &Measurement) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// Whether every unsampled entry is zero.
    pub fn is_consistent_with(&self, mask: &SamplingMask) -> bool {
        self.height == mask.height()
            && self.width == mask.width()
            && self
                .data
                .iter()
                .zip(mask.entries())
                .all(|(v, &m)| m || (v.re == 0.0 && v.im == 0.0))
    }
}

fn check_shape(mask: &SamplingMask, h: usize, w: usize, context: &'static str) -> Result<()> {
    if mask.height() != h || mask.width() != w {
        return Err(Error::Shape {
            context,
            expected: vec![mask.height(), mask.width()],
            found: vec![h, w],
        });
    }
    Ok(())
}

/// In-place 2-D FFT (rows then columns) with unitary scaling.
fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(data);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = data[r * w + c];
        }
        col.process(&mut column);
        for r in 0..h {
            data[r * w + c] = column[r];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= scale);
}

/// Index of FFT-order position `(r, c)` in the centered layout.
fn centered_index(r: usize, c: usize, h: usize, w: usize) -> usize {
    ((r + h / 2) % h) * w + (c + w / 2) % w
}

/// Unitary DFT of the image, returned in centered layout.
pub fn dft_centered(x: &Image) -> Vec<Complex64> {
    let (h, w) = (x.height(), x.width());
    let mut buf = x.to_complex();
    fft2(&mut buf, h, w, false);
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            out[centered_index(r, c, h, w)] = buf[r * w + c];
        }
    }
    out
}

/// Inverse unitary DFT of a centered k-space array.
pub fn idft_centered(k: &[Complex64], h: usize, w: usize) -> Image {
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            buf[r * w + c] = k[centered_index(r, c, h, w)];
        }
    }
    fft2(&mut buf, h, w, true);
    Image::from_complex(h, w, &buf).expect("inverse transform of finite data")
}

/// `A x`: unitary DFT followed by masking.
pub fn apply_a(mask: &SamplingMask, x: &Image) -> Result<Measurement> {
    check_shape(mask, x.height(), x.width(), "forward operator")?;
    Measurement::from_values(mask, dft_centered(x))
}

/// `A^H b`: the zero-filled reconstruction.
pub fn apply_a_adjoint(mask: &SamplingMask, b: &Measurement) -> Result<Image> {
    check_shape(mask, b.height(), b.width(), "adjoint operator")?;
    let masked: Vec<Complex64> = b
        .values()
        .iter()
        .zip(mask.entries())
        .map(|(&v, &m)| if m { v } else { Complex64::new(0.0, 0.0) })
        .collect();
    Ok(idft_centered(&masked, b.height(), b.width()))
}

/// Euclidean projection onto `{x : A x = b}`: `x - A^H (A x - b)`. Sampled
/// k-space entries are replaced by `b`, the rest are kept from `x`.
pub fn project_data_consistency(mask: &SamplingMask, b: &Measurement, x: &Image) -> Result<Image> {
    check_shape(mask, x.height(), x.width(), "projection image")?;
    check_shape(mask, b.height(), b.width(), "projection measurement")?;
    let mut k = dft_centered(x);
    for ((v, &m), &bv) in k.iter_mut().zip(mask.entries()).zip(b.values()) {
        if m {
            *v = bv;
        }
    }
    Ok(idft_centered(&k, x.height(), x.width()))
}

/// `||A x - b||`
pub fn residual(mask: &SamplingMask, b: &Measurement, x: &Image) -> Result<f64> {
    Ok(apply_a(mask, x)?.distance(b))
}

/// Adds circular complex Gaussian noise on the sampled entries. The complex
/// standard deviation (`sqrt(E|n|^2)`) is `level` times the RMS of `b` over
/// the mask support.
pub fn add_noise(mask: &SamplingMask, b: &Measurement, level: f64, seed: u64) -> Result<Measurement> {
    if !(level >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise level {level} must be non-negative")));
    }
    check_shape(mask, b.height(), b.width(), "noise measurement")?;
    if level == 0.0 {
        return Ok(b.clone());
    }
    let support = mask.sampled_count() as f64;
    let rms = (b
        .values()
        .iter()
        .zip(mask.entries())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.norm_sqr())
        .sum::<f64>()
        / support)
        .sqrt();
    let per_component = level * rms / std::f64::consts::SQRT_2;
    let normal = Normal::new(0.0, per_component.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = b
        .values()
        .iter()
        .zip(mask.entries())
        .map(|(&v, &m)| {
            if m {
                v + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Measurement::from_values(mask, data)
}

/// Adds i.i.d. complex Gaussian noise of absolute per-entry standard
/// deviation `delta` on the sampled entries.
pub fn perturb(mask: &SamplingMask, b: &Measurement, delta: f64, seed: u64) -> Result<Measurement> {
    let normal = Normal::new(0.0, delta / std::f64::consts::SQRT_2)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = b
        .values()
        .iter()
        .zip(mask.entries())
        .map(|(&v, &m)| {
            if m {
                v + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Measurement::from_values(mask, data)
}
