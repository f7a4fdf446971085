//! Weight-map producers.
//!
//! [`depth_to_logits`] and [`hard_weights`] map a depth map to blending
//! weights through a focal plane and per-level blur-strength anchors. The
//! trainable alternative is [`WeightHead`], a two-layer 3x3 convolutional
//! head over RGB + depth whose output goes through the per-pixel softmax.

pub(crate) mod codec;
mod head;

pub use codec::{decode_head, encode_head, load_head, save_head, HEAD_MAGIC};
pub(crate) use head::{backward as head_backward, forward as head_forward_generic, head_features};
pub use head::{head_forward, head_init, Conv3x3, WeightHead, HEAD_HIDDEN, HEAD_INPUTS};

use crate::blend::{Logits, WeightMaps};
use crate::error::{BokehError, Result};
use crate::image::DepthMap;

/// Parametric focus model.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusParams {
    /// Depth rendered sharp, in `[0, 1]`.
    pub focus_depth: f32,
    /// Softmax temperature; smaller is closer to one-hot.
    pub tau: f32,
    /// Blur-strength anchor of each level, nondecreasing, first one 0.
    pub level_centers: Vec<f32>,
}

impl FocusParams {
    pub fn new(focus_depth: f32, tau: f32, level_centers: Vec<f32>) -> Result<Self> {
        let p = FocusParams {
            focus_depth,
            tau,
            level_centers,
        };
        p.validate()?;
        Ok(p)
    }

    /// Evenly spaced centers `0, 1/(n-1), ..., 1` for `levels` levels and
    /// temperature 0.05.
    pub fn evenly_spaced(focus_depth: f32, levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(BokehError::InvalidParameter(format!(
                "need at least 2 levels, got {levels}"
            )));
        }
        let centers = (0..levels).map(|i| i as f32 / (levels - 1) as f32).collect();
        FocusParams::new(focus_depth, 0.05, centers)
    }

    pub fn levels(&self) -> usize {
        self.level_centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BokehError::InvalidParameter(m));
        if !(0.0..=1.0).contains(&self.focus_depth) {
            return bad(format!("focus depth {} outside [0, 1]", self.focus_depth));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        let c = &self.level_centers;
        if c.len() < 2 {
            return bad("need at least 2 level centers".into());
        }
        if c[0] != 0.0 {
            return bad("first level center must be 0".into());
        }
        if c.windows(2).any(|w| w[0] > w[1]) || c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("level centers must be sorted within [0, 1]".into());
        }
        Ok(())
    }

    /// Normalized distance from the focal plane, in `[0, 1]`.
    #[inline]
    pub fn blur_strength(&self, depth: f32) -> f32 {
        let span = self.focus_depth.max(1.0 - self.focus_depth);
        ((depth - self.focus_depth).abs() / span).min(1.0)
    }

    /// Level whose center is nearest to `strength`; ties go to the lower
    /// level.
    pub fn nearest_level(&self, strength: f32) -> usize {
        let mut best = 0;
        let mut best_d = f32::INFINITY;
        for (i, &c) in self.level_centers.iter().enumerate() {
            let d = (strength - c) * (strength - c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

impl Default for FocusParams {
    fn default() -> Self {
        FocusParams::evenly_spaced(0.0, 4).expect("valid defaults")
    }
}

/// Level logits `-(s - center_i)^2 / tau` where `s` is the blur strength.
pub fn depth_to_logits(depth: &DepthMap, params: &FocusParams) -> Result<Logits> {
    params.validate()?;
    let n = depth.width() * depth.height();
    let levels = params.levels();
    let strength: Vec<f32> = depth.values().iter().map(|&d| params.blur_strength(d)).collect();
    let mut data = vec![0.0f32; n * levels];
    for (plane, &c) in data.chunks_exact_mut(n).zip(&params.level_centers) {
        for (z, &s) in plane.iter_mut().zip(&strength) {
            *z = -(s - c) * (s - c) / params.tau;
        }
    }
    Ok(Logits::from_raw(depth.width(), depth.height(), levels, data))
}

/// One-hot weights at the nearest level center (the `tau -> 0` limit).
pub fn hard_weights(depth: &DepthMap, params: &FocusParams) -> Result<WeightMaps> {
    params.validate()?;
    let n = depth.width() * depth.height();
    let mut data = vec![0.0f32; n * params.levels()];
    for (p, &d) in depth.values().iter().enumerate() {
        let l = params.nearest_level(params.blur_strength(d));
        data[l * n + p] = 1.0;
    }
    Ok(WeightMaps::from_raw(
        depth.width(),
        depth.height(),
        params.levels(),
        data,
    ))
}

/// Soft weights: softmax of [`depth_to_logits`].
pub fn soft_weights(depth: &DepthMap, params: &FocusParams) -> Result<WeightMaps> {
    crate::blend::spatial_softmax(&depth_to_logits(depth, params)?)
}
