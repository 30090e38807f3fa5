//! Binary file formats. All integers and floats are little-endian; values are
//! stored as 32-bit floats.
//!
//! * `CLIMG1`: magic, `u32` height, width, channels, then `channels * h * w`
//!   values, channel-major and row-major.
//! * `CLMSK1`: magic, `u32` height, width, `u8` kind code, then `h * w` bytes
//!   of 0 or 1 in centered k-space layout.
//! * `CLCKPT1`: magic, `u32` version, `u8` mode, length-prefixed architecture
//!   text, `u32` tensor count with one length-prefixed value array per
//!   tensor, then length-prefixed config text.

use std::fs;
use std::path::Path;

use clear_core::autodiff::{ParamSet, Tensor};
use clear_core::forward_model::{Image, MaskKind, SamplingMask};
use clear_core::icnn::{Mode, NetArch};
use clear_core::training::{Checkpoint, TrainConfig};

use crate::error::CliError;

pub const IMAGE_MAGIC: &[u8; 6] = b"CLIMG1";
pub const MASK_MAGIC: &[u8; 6] = b"CLMSK1";
pub const CHECKPOINT_MAGIC: &[u8; 7] = b"CLCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

const MASK_KINDS: [MaskKind; 5] = [
    MaskKind::Uniform1d,
    MaskKind::Random1d,
    MaskKind::Poisson2d,
    MaskKind::Gaussian2d,
    MaskKind::Full,
];

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            CliError::Format(format!("{} truncated at byte {} (wanted {n} more)", self.what, self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| CliError::Format(format!("{} length overflow", self.what)))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn text(&mut self) -> Result<String, CliError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CliError::Format(format!("{} text is not UTF-8", self.what)))
    }

    fn magic(&mut self, magic: &[u8]) -> Result<(), CliError> {
        if self.take(magic.len()).ok() != Some(magic) {
            return Err(CliError::Format(format!(
                "{} does not start with {}",
                self.what,
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), CliError> {
        if self.pos != self.buf.len() {
            return Err(CliError::Format(format!("{} has {} trailing bytes", self.what, self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), CliError> {
    let v = u32::try_from(v).map_err(|_| CliError::Format(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) -> Result<(), CliError> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn encode_image(img: &Image) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::with_capacity(18 + 4 * img.data().len());
    out.extend_from_slice(IMAGE_MAGIC);
    put_u32(&mut out, img.height())?;
    put_u32(&mut out, img.width())?;
    put_u32(&mut out, 2)?;
    put_f32s(&mut out, img.data());
    Ok(out)
}

/// Accepts one (real) or two (real, imaginary) channels.
pub fn decode_image(bytes: &[u8]) -> Result<Image, CliError> {
    let mut r = Reader::new(bytes, "image file");
    r.magic(IMAGE_MAGIC)?;
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if h == 0 || w == 0 || !(c == 1 || c == 2) {
        return Err(CliError::Format(format!("image header {h}x{w}x{c} is invalid")));
    }
    let values = r.f32s(c * h * w)?;
    r.finish()?;
    let img = if c == 2 { Image::from_planes(h, w, values) } else { Image::from_real(h, w, &values) };
    Ok(img?)
}

pub fn write_image(path: &Path, img: &Image) -> Result<(), CliError> {
    write_file(path, &encode_image(img)?)
}

pub fn read_image(path: &Path) -> Result<Image, CliError> {
    decode_image(&read_file(path)?)
}

pub fn encode_mask(mask: &SamplingMask) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::with_capacity(15 + mask.entries().len());
    out.extend_from_slice(MASK_MAGIC);
    put_u32(&mut out, mask.height())?;
    put_u32(&mut out, mask.width())?;
    let code = MASK_KINDS.iter().position(|&k| k == mask.kind()).expect("every kind has a code");
    out.push(code as u8);
    out.extend(mask.entries().iter().map(|&s| u8::from(s)));
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<SamplingMask, CliError> {
    let mut r = Reader::new(bytes, "mask file");
    r.magic(MASK_MAGIC)?;
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    let code = r.u8()? as usize;
    let kind = *MASK_KINDS
        .get(code)
        .ok_or_else(|| CliError::Format(format!("unknown mask kind code {code}")))?;
    let raw = r.take(h.checked_mul(w).ok_or_else(|| CliError::Format("mask size overflow".into()))?)?;
    r.finish()?;
    let entries = raw
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(CliError::Format(format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SamplingMask::from_entries(h, w, kind, entries)?)
}

pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<(), CliError> {
    write_file(path, &encode_mask(mask)?)
}

pub fn read_mask(path: &Path) -> Result<SamplingMask, CliError> {
    decode_mask(&read_file(path)?)
}

const EPOCH_KEY: &str = "checkpoint.epoch";

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, CliError> {
    encode_checkpoint_version(ckpt, CHECKPOINT_VERSION)
}

fn encode_checkpoint_version(ckpt: &Checkpoint, version: u32) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.push(ckpt.mode.to_byte());
    put_text(&mut out, &ckpt.arch.to_text())?;
    put_u32(&mut out, ckpt.params.tensors.len())?;
    for t in &ckpt.params.tensors {
        put_u32(&mut out, t.len())?;
        put_f32s(&mut out, t.data());
    }
    put_text(&mut out, &format!("{EPOCH_KEY} = {}\n{}", ckpt.epoch, ckpt.config.to_text()))?;
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CliError> {
    let mut r = Reader::new(bytes, "checkpoint file");
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CliError::Format(format!(
            "checkpoint format version {version} is not supported (this build reads version {CHECKPOINT_VERSION})"
        )));
    }
    let mode = Mode::from_byte(r.u8()?)?;
    let arch = NetArch::from_text(&r.text()?)?;
    let shapes: Vec<Vec<usize>> = ParamSet::zeros(&arch.layers()).tensors.iter().map(|t| t.shape().to_vec()).collect();
    let count = r.u32()? as usize;
    if count != shapes.len() {
        return Err(CliError::Format(format!("checkpoint holds {count} tensors, architecture needs {}", shapes.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for shape in shapes {
        let n = r.u32()? as usize;
        let expected: usize = shape.iter().product();
        if n != expected {
            return Err(CliError::Format(format!("tensor of length {n} where {expected} was expected")));
        }
        tensors.push(Tensor::new(shape, r.f32s(n)?)?);
    }
    let text = r.text()?;
    r.finish()?;
    let mut epoch = None;
    let mut rest = String::new();
    for line in text.lines() {
        match line.split_once('=') {
            Some((k, v)) if k.trim() == EPOCH_KEY => {
                epoch = Some(v.trim().parse().map_err(|_| CliError::Format(format!("bad epoch '{}'", v.trim())))?)
            }
            _ => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    let epoch = epoch.ok_or_else(|| CliError::Format("checkpoint config lacks the epoch".into()))?;
    let config = TrainConfig::from_text(&rest)?;
    let ckpt = Checkpoint {
        arch,
        params: ParamSet { tensors },
        mode,
        config,
        epoch,
    };
    ckpt.to_net()?;
    Ok(ckpt)
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    write_file(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    decode_checkpoint(&read_file(path)?)
}

/// 8-bit grayscale window: `lo` maps to 0 and `hi` to 255. A flat window
/// renders black.
pub fn window_to_gray(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8 } else { 0 })
        .collect()
}

/// PNG preview of an image's magnitude, windowed over its own range.
pub fn encode_png_magnitude(img: &Image) -> Result<Vec<u8>, CliError> {
    let mag = img.magnitude();
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    encode_png_gray(img.width(), img.height(), &window_to_gray(&mag, lo, hi))
}

/// PNG of a mask: sampled entries white.
pub fn encode_png_mask(mask: &SamplingMask) -> Result<Vec<u8>, CliError> {
    let px: Vec<u8> = mask.entries().iter().map(|&m| if m { 255 } else { 0 }).collect();
    encode_png_gray(mask.width(), mask.height(), &px)
}

fn encode_png_gray(width: usize, height: usize, px: &[u8]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    let dim = |v: usize| u32::try_from(v).map_err(|_| CliError::Format(format!("dimension {v} too large for PNG")));
    let mut enc = png::Encoder::new(&mut out, dim(width)?, dim(height)?);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| CliError::Format(format!("PNG encoding: {e}"));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(px).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}

pub fn write_png(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_file(path, bytes)
}
