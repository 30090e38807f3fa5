//! Dense loops behind the tape primitives. All routines are sequential and
//! accumulate in a fixed order, so results are bit-reproducible.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output index range `[lo, hi)` along one axis whose input index
    /// `o * stride + k - pad` lands inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = k as isize - self.pad as isize;
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        let last = len as isize - 1 - shift;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
        (lo as usize, hi.max(lo) as usize)
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s) = (g.height, g.width, g.kernel, g.stride);
    let mut out = vec![0.0; g.batch * g.out_ch * ho * wo];
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let plane = &mut out[(n * g.out_ch + o) * ho * wo..][..ho * wo];
            plane.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..g.in_ch {
                let src = &input[(n * g.in_ch + c) * h * w..][..h * w];
                let wk = &weight[(o * g.in_ch + c) * k * k..][..k * k];
                for ki in 0..k {
                    let (ylo, yhi) = g.valid_range(ki, h, ho);
                    for kj in 0..k {
                        let wv = wk[ki * k + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = g.valid_range(kj, w, wo);
                        for oy in ylo..yhi {
                            let iy = oy * s + ki - g.pad;
                            let row = &src[iy * w..][..w];
                            let dst = &mut plane[oy * wo..][..wo];
                            if s == 1 {
                                let off = kj as isize - g.pad as isize;
                                let src_row = &row[(xlo as isize + off) as usize..(xhi as isize + off) as usize];
                                for (d, v) in dst[xlo..xhi].iter_mut().zip(src_row) {
                                    *d += wv * v;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    dst[ox] += wv * row[ox * s + kj - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient with respect to the convolution input.
pub(crate) fn conv2d_backward_input(g: &ConvGeom, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s) = (g.height, g.width, g.kernel, g.stride);
    let mut gin = vec![0.0; g.batch * g.in_ch * h * w];
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let gplane = &grad_out[(n * g.out_ch + o) * ho * wo..][..ho * wo];
            for c in 0..g.in_ch {
                let dst = &mut gin[(n * g.in_ch + c) * h * w..][..h * w];
                let wk = &weight[(o * g.in_ch + c) * k * k..][..k * k];
                for ki in 0..k {
                    let (ylo, yhi) = g.valid_range(ki, h, ho);
                    for kj in 0..k {
                        let wv = wk[ki * k + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = g.valid_range(kj, w, wo);
                        for oy in ylo..yhi {
                            let iy = oy * s + ki - g.pad;
                            let grow = &gplane[oy * wo..][..wo];
                            let drow = &mut dst[iy * w..][..w];
                            if s == 1 {
                                let off = kj as isize - g.pad as isize;
                                let d = &mut drow[(xlo as isize + off) as usize..(xhi as isize + off) as usize];
                                for (dv, gv) in d.iter_mut().zip(&grow[xlo..xhi]) {
                                    *dv += wv * gv;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    drow[ox * s + kj - g.pad] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradients with respect to weight and bias.
pub(crate) fn conv2d_backward_params(g: &ConvGeom, grad_out: &[f64], input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s) = (g.height, g.width, g.kernel, g.stride);
    let mut gw = vec![0.0; g.out_ch * g.in_ch * k * k];
    let mut gb = vec![0.0; g.out_ch];
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let gplane = &grad_out[(n * g.out_ch + o) * ho * wo..][..ho * wo];
            gb[o] += gplane.iter().sum::<f64>();
            for c in 0..g.in_ch {
                let src = &input[(n * g.in_ch + c) * h * w..][..h * w];
                let gk = &mut gw[(o * g.in_ch + c) * k * k..][..k * k];
                for ki in 0..k {
                    let (ylo, yhi) = g.valid_range(ki, h, ho);
                    for kj in 0..k {
                        let (xlo, xhi) = g.valid_range(kj, w, wo);
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy * s + ki - g.pad;
                            let row = &src[iy * w..][..w];
                            let grow = &gplane[oy * wo..][..wo];
                            if s == 1 {
                                let off = kj as isize - g.pad as isize;
                                let r = &row[(xlo as isize + off) as usize..(xhi as isize + off) as usize];
                                acc += r.iter().zip(&grow[xlo..xhi]).map(|(a, b)| a * b).sum::<f64>();
                            } else {
                                for ox in xlo..xhi {
                                    acc += row[ox * s + kj - g.pad] * grow[ox];
                                }
                            }
                        }
                        gk[ki * k + kj] += acc;
                    }
                }
            }
        }
    }
    (gw, gb)
}

/// `y[n, o] = b[o] + sum_i w[o, i] x[n, i]`
pub(crate) fn linear_forward(batch: usize, fin: usize, fout: usize, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; batch * fout];
    for n in 0..batch {
        let xr = &x[n * fin..][..fin];
        for o in 0..fout {
            let wr = &w[o * fin..][..fin];
            y[n * fout + o] = b[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    y
}

pub(crate) fn avg_pool_forward(batch_ch: usize, h: usize, w: usize, size: usize, x: &[f64]) -> Vec<f64> {
    let (ho, wo) = (h / size, w / size);
    let scale = 1.0 / (size * size) as f64;
    let mut y = vec![0.0; batch_ch * ho * wo];
    for p in 0..batch_ch {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut y[p * ho * wo..][..ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for dy in 0..size {
                    for dx in 0..size {
                        acc += src[(oy * size + dy) * w + ox * size + dx];
                    }
                }
                dst[oy * wo + ox] = acc * scale;
            }
        }
    }
    y
}

pub(crate) fn avg_pool_backward(batch_ch: usize, h: usize, w: usize, size: usize, gy: &[f64]) -> Vec<f64> {
    let (ho, wo) = (h / size, w / size);
    let scale = 1.0 / (size * size) as f64;
    let mut gx = vec![0.0; batch_ch * h * w];
    for p in 0..batch_ch {
        let src = &gy[p * ho * wo..][..ho * wo];
        let dst = &mut gx[p * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = src[oy * wo + ox] * scale;
                for dy in 0..size {
                    for dx in 0..size {
                        dst[(oy * size + dy) * w + ox * size + dx] = g;
                    }
                }
            }
        }
    }
    gx
}
