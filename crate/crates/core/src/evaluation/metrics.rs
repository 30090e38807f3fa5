use crate::error::{Error, Result};
use crate::forward_model::Image;

pub const PSNR_CAP: f64 = 200.0;
pub const SSIM_WINDOW: usize = 8;

fn check_pair(reference: &Image, test: &Image) -> Result<()> {
    if !reference.same_shape(test) {
        return Err(Error::Shape {
            context: "metric inputs",
            expected: vec![reference.height(), reference.width()],
            found: vec![test.height(), test.width()],
        });
    }
    Ok(())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// PSNR in dB between magnitude images, capped at [`PSNR_CAP`].
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    check_pair(reference, test)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig(format!("psnr peak {peak} must be positive")));
    }
    let (r, t) = (reference.magnitude(), test.magnitude());
    let mse = r.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64;
    if mse < peak * peak * 1e-20 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// PSNR with the peak set to the reference's largest magnitude.
pub fn psnr_peak_ref(reference: &Image, test: &Image) -> Result<f64> {
    let peak = max_of(&reference.magnitude());
    if peak == 0.0 {
        return Err(Error::InvalidConfig("reference image is identically zero".into()));
    }
    psnr(reference, test, peak)
}

/// `||test - ref||^2 / ||ref||^2` on magnitude images.
pub fn nmse(reference: &Image, test: &Image) -> Result<f64> {
    check_pair(reference, test)?;
    let (r, t) = (reference.magnitude(), test.magnitude());
    let den: f64 = r.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return Err(Error::InvalidConfig("nmse reference is identically zero".into()));
    }
    Ok(r.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / den)
}

/// Summed-area table with a zero first row and column.
fn integral(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut s = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += v[r * w + c];
            s[(r + 1) * (w + 1) + c + 1] = s[r * (w + 1) + c + 1] + row;
        }
    }
    s
}

fn window_sum(s: &[f64], w: usize, r: usize, c: usize, k: usize) -> f64 {
    let w1 = w + 1;
    s[(r + k) * w1 + c + k] - s[r * w1 + c + k] - s[(r + k) * w1 + c] + s[r * w1 + c]
}

/// Mean structural similarity over all 8x8 windows (stride 1, uniform
/// weights, population statistics) of the magnitude images. Stabilizers use
/// the reference's largest magnitude as the dynamic range.
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    check_pair(reference, test)?;
    let (h, w, k) = (reference.height(), reference.width(), SSIM_WINDOW);
    if h < k || w < k {
        return Err(Error::InvalidConfig(format!("image {h}x{w} smaller than the {k}x{k} ssim window")));
    }
    let (x, y) = (reference.magnitude(), test.magnitude());
    let peak = match max_of(&x) {
        p if p > 0.0 => p,
        _ => 1.0,
    };
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (sx, sy) = (integral(&x, h, w), integral(&y, h, w));
    let (sxx, syy, sxy) = (
        integral(&sq(&x, &x), h, w),
        integral(&sq(&y, &y), h, w),
        integral(&sq(&x, &y), h, w),
    );
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let mx = window_sum(&sx, w, r, c, k) / n;
            let my = window_sum(&sy, w, r, c, k) / n;
            let vx = window_sum(&sxx, w, r, c, k) / n - mx * mx;
            let vy = window_sum(&syy, w, r, c, k) / n - my * my;
            let cxy = window_sum(&sxy, w, r, c, k) / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
