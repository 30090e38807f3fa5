use num_complex::Complex64;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Two-channel (real, imaginary) image stored channel-major, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![0.0; 2 * height * width],
        }
    }

    /// Builds an image from `2 * height * width` values (real plane first).
    pub fn from_planes(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 2 * height * width {
            return Err(Error::Shape {
                context: "image planes",
                expected: vec![2, height, width],
                found: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "image construction",
                step: 0,
            });
        }
        Ok(Self { height, width, data })
    }

    /// Real-valued image with a zero imaginary channel.
    pub fn from_real(height: usize, width: usize, real: &[f64]) -> Result<Self> {
        if real.len() != height * width {
            return Err(Error::Shape {
                context: "real image",
                expected: vec![height, width],
                found: vec![real.len()],
            });
        }
        let mut data = real.to_vec();
        data.resize(2 * height * width, 0.0);
        Self::from_planes(height, width, data)
    }

    pub fn from_complex(height: usize, width: usize, values: &[Complex64]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape {
                context: "complex image",
                expected: vec![height, width],
                found: vec![values.len()],
            });
        }
        let mut data = Vec::with_capacity(2 * values.len());
        data.extend(values.iter().map(|c| c.re));
        data.extend(values.iter().map(|c| c.im));
        Self::from_planes(height, width, data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [2, h, w] => Self::from_planes(*h, *w, t.data().to_vec()),
            other => Err(Error::Shape {
                context: "image from tensor",
                expected: vec![2, 0, 0],
                found: other.to_vec(),
            }),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![2, self.height, self.width], self.data.clone()).expect("image tensor shape")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn real(&self) -> &[f64] {
        &self.data[..self.pixels()]
    }

    pub fn imag(&self) -> &[f64] {
        &self.data[self.pixels()..]
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.real()
            .iter()
            .zip(self.imag())
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect()
    }

    /// Per-pixel modulus.
    pub fn magnitude(&self) -> Vec<f64> {
        self.real().iter().zip(self.imag()).map(|(a, b)| a.hypot(*b)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
