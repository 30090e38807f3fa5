use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward_model::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    Ellipses,
    PiecewiseConstant,
    SheppLogan,
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Ellipses => "ellipses",
            PhantomKind::PiecewiseConstant => "piecewise-constant",
            PhantomKind::SheppLogan => "shepp-logan-like",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ellipses" => Ok(PhantomKind::Ellipses),
            "piecewise-constant" => Ok(PhantomKind::PiecewiseConstant),
            "shepp-logan-like" | "shepp-logan" => Ok(PhantomKind::SheppLogan),
            other => Err(Error::InvalidConfig(format!("unknown phantom kind '{other}'"))),
        }
    }
}

/// Ellipse in normalized coordinates `[-1, 1]^2`, rotated by `angle` radians.
#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn coords(size: usize, r: usize, c: usize) -> (f64, f64) {
    let step = 2.0 / size as f64;
    (-1.0 + (c as f64 + 0.5) * step, 1.0 - (r as f64 + 0.5) * step)
}

fn rasterize(size: usize, ellipses: &[Ellipse]) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let (x, y) = coords(size, r, c);
            let v: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.value).sum();
            out[r * size + c] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// The body ellipse of the ellipses kind; pixels inside it count as interior.
pub fn ellipses_body_mask(size: usize, seed: u64) -> Vec<bool> {
    let body = ellipse_set(seed)[0];
    (0..size * size)
        .map(|i| {
            let (x, y) = coords(size, i / size, i % size);
            body.contains(x, y)
        })
        .collect()
}

fn ellipse_set(seed: u64) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = vec![Ellipse {
        cx: rng.random_range(-0.1..0.1),
        cy: rng.random_range(-0.1..0.1),
        a: rng.random_range(0.6..0.85),
        b: rng.random_range(0.6..0.85),
        angle: rng.random_range(0.0..std::f64::consts::PI),
        value: rng.random_range(0.55..0.8),
    }];
    let inner = rng.random_range(3..=6);
    for _ in 0..inner {
        set.push(Ellipse {
            cx: rng.random_range(-0.45..0.45),
            cy: rng.random_range(-0.45..0.45),
            a: rng.random_range(0.06..0.3),
            b: rng.random_range(0.06..0.3),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            value: rng.random_range(-0.3..0.3),
        });
    }
    set
}

fn shepp_logan_set(seed: u64) -> Vec<Ellipse> {
    // Modified Shepp-Logan layout: (cx, cy, a, b, angle in degrees, value).
    const BASE: [(f64, f64, f64, f64, f64, f64); 10] = [
        (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
        (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
        (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
        (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
        (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
        (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
        (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
        (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
        (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
        (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BASE.iter()
        .enumerate()
        .map(|(i, &(cx, cy, a, b, deg, value))| {
            let jitter = if i < 2 { 0.0 } else { 1.0 };
            let scale = rng.random_range(0.9..1.1);
            Ellipse {
                cx: cx + jitter * rng.random_range(-0.04..0.04),
                cy: cy + jitter * rng.random_range(-0.04..0.04),
                a: a * scale,
                b: b * scale,
                angle: (deg + jitter * rng.random_range(-10.0..10.0)).to_radians(),
                value: if i < 2 { value } else { value * rng.random_range(0.8..1.2) },
            }
        })
        .collect()
}

fn piecewise_constant(size: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![rng.random_range(0.0..0.2); size * size];
    let rects = rng.random_range(3..=7);
    for _ in 0..rects {
        let h = rng.random_range(size / 8..=size / 2);
        let w = rng.random_range(size / 8..=size / 2);
        let r0 = rng.random_range(0..=size - h);
        let c0 = rng.random_range(0..=size - w);
        let level = rng.random_range(0.2..1.0);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                out[r * size + c] = level;
            }
        }
    }
    out
}

/// Real-valued square phantom with intensities in `[0, 1]`.
pub fn make_phantom(kind: PhantomKind, size: usize, seed: u64) -> Result<Image> {
    if size < 16 {
        return Err(Error::InvalidConfig(format!("phantom size {size} below 16")));
    }
    let real = match kind {
        PhantomKind::Ellipses => rasterize(size, &ellipse_set(seed)),
        PhantomKind::SheppLogan => rasterize(size, &shepp_logan_set(seed)),
        PhantomKind::PiecewiseConstant => piecewise_constant(size, seed),
    };
    Image::from_real(size, size, &real)
}
