//! Blind estimation of the super-resolution downscaling kernel of a single
//! low-resolution image.
//!
//! A deep linear generator learns to downscale the input by ×2 while a
//! fully-convolutional patch discriminator tries to tell its output patches
//! apart from patches of the input itself. The generator's filters collapse
//! into one explicit 13×13 kernel, which is regularized during training and
//! rescaled analytically to ×4 afterwards.
//!
//! Module map:
//! - [`image`]: planes, raster and raw-float I/O, the kernel downscaling
//!   operator, bicubic resampling, gradient maps.
//! - [`kernel`]: the kernel type, its regularizers, dilation/composition,
//!   Gaussian synthesis and kernel distances.
//! - [`generator`], [`discriminator`]: the two networks with hand-written
//!   backward passes.
//! - [`trainer`]: the adversarial estimation loop.
//! - [`dataset`]: synthetic random-kernel benchmarks.
//! - [`eval`]: PSNR/SSIM and benchmark evaluation reports.

pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod generator;
pub mod image;
pub mod kernel;
pub mod optim;
pub mod par;
pub mod trainer;

mod conv;

pub use error::{Error, Result};
pub use image::{CropSpec, ImagePlane};
pub use kernel::Kernel;
