//! Synthetic shallow depth-of-field rendering.
//!
//! A bokeh image is rendered as a per-pixel convex combination of the
//! original image and several Gaussian-smoothed copies of it:
//!
//! ```text
//! out = W_0 * I + sum_i W_i * blur(I, k_i),    sum_i W_i = 1 at every pixel
//! ```
//!
//! The weight planes come either from a depth map through a parametric
//! focus model ([`weights::depth_to_logits`], [`weights::hard_weights`]) or
//! from a small trainable convolutional head ([`weights::WeightHead`])
//! followed by a per-pixel softmax. The [`train`] module fits the head with
//! L1 and negative-SSIM objectives using hand-derived gradients and Adam.

pub mod baseline;
pub mod bench;
pub mod blend;
pub mod blur;
mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod real;
pub mod synthetic;
pub mod train;
pub mod weights;

pub use crate::blend::{blend, brute_force_blend, spatial_softmax, Logits, WeightMaps};
pub use crate::blur::{blur_stack, gaussian_blur, make_gaussian_kernel, GaussianKernel1D};
pub use crate::error::{BokehError, Result};
pub use crate::image::{flip, resize_bilinear, Axis, DepthMap, Image};
pub use crate::io::{load_depth, load_image, save_depth16, save_image};
pub use crate::weights::{FocusParams, WeightHead};

/// Kernel sizes of the default three-level smoothing stack.
pub const DEFAULT_KERNELS: [usize; 3] = [25, 45, 75];
