//! Total-variation baseline: monotone FISTA on `||A x - b||^2 + w TV(x)` with
//! the TV proximal step solved through its dual by fast gradient projection.
//! TV is isotropic and couples the two channels.

use crate::error::{Error, Result};
use crate::forward_model::{apply_a, apply_a_adjoint, Image, Measurement, SamplingMask};

/// Inner dual iterations per proximal step.
const PROX_ITERS: usize = 30;

/// Forward differences with a zero last row/column, per channel:
/// returns `(dx, dy)` each of length `2 * h * w`.
fn gradient(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let n = h * w;
    let mut dx = vec![0.0; 2 * n];
    let mut dy = vec![0.0; 2 * n];
    for ch in 0..2 {
        let o = ch * n;
        for r in 0..h {
            for c in 0..w {
                let i = o + r * w + c;
                if c + 1 < w {
                    dx[i] = x[i + 1] - x[i];
                }
                if r + 1 < h {
                    dy[i] = x[i + w] - x[i];
                }
            }
        }
    }
    (dx, dy)
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; 2 * n];
    for ch in 0..2 {
        let o = ch * n;
        for r in 0..h {
            for c in 0..w {
                let i = o + r * w + c;
                let mut v = 0.0;
                if c + 1 < w {
                    v += px[i];
                }
                if c > 0 {
                    v -= px[i - 1];
                }
                if r + 1 < h {
                    v += py[i];
                }
                if r > 0 {
                    v -= py[i - w];
                }
                out[i] = v;
            }
        }
    }
    out
}

/// Isotropic TV: sum over pixels of the gradient norm across both channels.
pub fn total_variation(x: &Image) -> f64 {
    let (h, w) = (x.height(), x.width());
    let n = h * w;
    let (dx, dy) = gradient(x.data(), h, w);
    (0..n)
        .map(|i| (dx[i] * dx[i] + dy[i] * dy[i] + dx[i + n] * dx[i + n] + dy[i + n] * dy[i + n]).sqrt())
        .sum()
}

/// `||A x - b||^2 + weight * TV(x)`
pub fn tv_objective(mask: &SamplingMask, b: &Measurement, x: &Image, weight: f64) -> Result<f64> {
    let r = apply_a(mask, x)?.distance(b);
    Ok(r * r + weight * total_variation(x))
}

/// Dual variable of the TV prox; kept between calls as a warm start.
struct Dual {
    px: Vec<f64>,
    py: Vec<f64>,
}

/// Approximately solves `min_u 1/2 ||u - z||^2 + mu TV(u)`.
fn tv_prox(z: &[f64], mu: f64, h: usize, w: usize, dual: &mut Dual) -> Vec<f64> {
    if mu == 0.0 {
        return z.to_vec();
    }
    let n = h * w;
    let tau = 1.0 / (8.0 * mu);
    let (mut qx, mut qy) = (dual.px.clone(), dual.py.clone());
    let mut t = 1.0_f64;
    for _ in 0..PROX_ITERS {
        let div = divergence(&qx, &qy, h, w);
        let u: Vec<f64> = z.iter().zip(&div).map(|(a, d)| a + mu * d).collect();
        let (gx, gy) = gradient(&u, h, w);
        let mut nx: Vec<f64> = qx.iter().zip(&gx).map(|(q, g)| q + tau * g).collect();
        let mut ny: Vec<f64> = qy.iter().zip(&gy).map(|(q, g)| q + tau * g).collect();
        for i in 0..n {
            let norm = (nx[i] * nx[i] + ny[i] * ny[i] + nx[i + n] * nx[i + n] + ny[i + n] * ny[i + n]).sqrt();
            if norm > 1.0 {
                for j in [i, i + n] {
                    nx[j] /= norm;
                    ny[j] /= norm;
                }
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        qx = nx.iter().zip(&dual.px).map(|(a, b)| a + beta * (a - b)).collect();
        qy = ny.iter().zip(&dual.py).map(|(a, b)| a + beta * (a - b)).collect();
        dual.px = nx;
        dual.py = ny;
        t = t_next;
    }
    let div = divergence(&dual.px, &dual.py, h, w);
    z.iter().zip(&div).map(|(a, d)| a + mu * d).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TvRun {
    pub image: Image,
    /// Objective after each outer iteration, preceded by the initial value.
    pub objective: Vec<f64>,
}

/// TV-regularized reconstruction started from the zero-filled image.
pub fn tv_reconstruct(mask: &SamplingMask, b: &Measurement, weight: f64, iters: usize) -> Result<Image> {
    tv_reconstruct_traced(mask, b, weight, iters).map(|r| r.image)
}

pub fn tv_reconstruct_traced(mask: &SamplingMask, b: &Measurement, weight: f64, iters: usize) -> Result<TvRun> {
    if !(weight >= 0.0) || iters == 0 {
        return Err(Error::InvalidConfig(format!("tv weight {weight} and iters {iters} must be >= 0 and >= 1")));
    }
    let (h, w) = (mask.height(), mask.width());
    let mut x = apply_a_adjoint(mask, b)?;
    let mut f_x = tv_objective(mask, b, &x, weight)?;
    let mut objective = vec![f_x];
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut dual = Dual {
        px: vec![0.0; 2 * h * w],
        py: vec![0.0; 2 * h * w],
    };
    // The data term's gradient 2 A^H (A y - b) has Lipschitz constant 2.
    let step = 0.5;
    for _ in 0..iters {
        let r = apply_a(mask, &y)?;
        let diff = Measurement::from_values(
            mask,
            r.values().iter().zip(b.values()).map(|(p, q)| p - q).collect(),
        )?;
        let g = apply_a_adjoint(mask, &diff)?;
        let zv: Vec<f64> = y.data().iter().zip(g.data()).map(|(a, gi)| a - step * 2.0 * gi).collect();
        let z = Image::from_planes(h, w, tv_prox(&zv, step * weight, h, w, &mut dual))?;
        let f_z = tv_objective(mask, b, &z, weight)?;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let x_prev = x.clone();
        if f_z <= f_x {
            x = z.clone();
            f_x = f_z;
        }
        // Monotone variant: extrapolate from the candidate and the kept iterate.
        let yv: Vec<f64> = x
            .data()
            .iter()
            .zip(z.data())
            .zip(x_prev.data())
            .map(|((xk, zk), xp)| xk + (t / t_next) * (zk - xk) + ((t - 1.0) / t_next) * (xk - xp))
            .collect();
        y = Image::from_planes(h, w, yv)?;
        t = t_next;
        objective.push(f_x);
    }
    Ok(TvRun { image: x, objective })
}
