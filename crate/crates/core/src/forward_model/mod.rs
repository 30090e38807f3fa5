//! Single-coil Cartesian MRI forward model.

mod fourier;
mod image;
mod mask;

pub use fourier::{
    add_noise, apply_a, apply_a_adjoint, dft_centered, idft_centered, perturb, project_data_consistency, residual,
    Measurement,
};
pub use image::Image;
pub use mask::{make_mask, MaskKind, SamplingMask};
