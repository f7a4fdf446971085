//! Saliency baseline: keep the salient foreground, replace the rest with a
//! 75x75 Gaussian blur.

use crate::blend::{blend, WeightMaps};
use crate::blur::gaussian_blur;
use crate::error::{BokehError, Result};
use crate::image::Image;

pub const BASELINE_KERNEL: usize = 75;

/// `out = S * img + (1 - S) * blur(img, 75)` for a one-channel soft
/// saliency map `S` in `[0, 1]`.
pub fn saliency_bokeh(img: &Image, saliency: &Image) -> Result<Image> {
    saliency_bokeh_with(img, saliency, BASELINE_KERNEL)
}

pub fn saliency_bokeh_with(img: &Image, saliency: &Image, kernel: usize) -> Result<Image> {
    if saliency.channels() != 1 {
        return Err(BokehError::dims("1-channel saliency map", saliency.shape_string()));
    }
    if saliency.width() != img.width() || saliency.height() != img.height() {
        return Err(BokehError::dims(
            format!("{}x{}", img.width(), img.height()),
            format!("{}x{}", saliency.width(), saliency.height()),
        ));
    }
    if saliency.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(BokehError::InvalidParameter("saliency outside [0, 1]".into()));
    }
    let blurred = gaussian_blur(img, kernel)?;
    let mut planes = saliency.data().to_vec();
    planes.extend(saliency.data().iter().map(|&s| 1.0 - s));
    let weights = WeightMaps::from_raw(img.width(), img.height(), 2, planes);
    blend(img, &[blurred], &weights)
}

/// Fallback saliency: 1 inside a centered ellipse spanning half of each
/// dimension, falling linearly to 0 at twice that radius.
pub fn center_prior(width: usize, height: usize) -> Image {
    let (cx, cy) = (width as f32 / 2.0, height as f32 / 2.0);
    let (rx, ry) = (width as f32 / 4.0, height as f32 / 4.0);
    Image::from_fn(width, height, 1, |_, x, y| {
        let dx = (x as f32 + 0.5 - cx) / rx;
        let dy = (y as f32 + 0.5 - cy) / ry;
        let r = (dx * dx + dy * dy).sqrt();
        (2.0 - r).clamp(0.0, 1.0)
    })
}
