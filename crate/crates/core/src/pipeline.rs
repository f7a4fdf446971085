//! End-to-end rendering: resize to the processing size, compute weights,
//! blend with the smoothing stack, resize back.

use crate::blend::{blend, spatial_softmax, WeightMaps};
use crate::blur::blur_stack;
use crate::error::{BokehError, Result};
use crate::image::{resize_bilinear, DepthMap, Image};
use crate::weights::{hard_weights, head_forward, soft_weights, FocusParams, WeightHead};

/// Default processing resolution (width, height).
pub const DEFAULT_PROC_SIZE: (usize, usize) = (1024, 768);

#[derive(Debug, Clone)]
pub enum WeightSource {
    /// Softmax of the focus model, or its one-hot limit when `hard`.
    Parametric {
        params: FocusParams,
        hard: bool,
    },
    Learned(WeightHead),
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub kernels: Vec<usize>,
    pub weights: WeightSource,
    /// Processing size; `None` renders at the input size.
    pub proc_size: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Rendered {
    /// Output at the input's resolution.
    pub image: Image,
    /// Weight maps at the processing resolution.
    pub weights: WeightMaps,
}

/// Weights for `img` and `depth` of identical size.
pub fn compute_weights(img: &Image, depth: &DepthMap, source: &WeightSource) -> Result<WeightMaps> {
    depth.ensure_matches(img)?;
    match source {
        WeightSource::Parametric { params, hard: true } => hard_weights(depth, params),
        WeightSource::Parametric { params, hard: false } => soft_weights(depth, params),
        WeightSource::Learned(head) => spatial_softmax(&head_forward(img, depth, head)?),
    }
}

/// Renders without any resizing; `depth` must match `img`.
pub fn render_at_native(img: &Image, depth: &DepthMap, kernels: &[usize], source: &WeightSource) -> Result<Rendered> {
    let levels = match source {
        WeightSource::Parametric { params, .. } => params.levels(),
        WeightSource::Learned(head) => head.levels(),
    };
    if levels != kernels.len() + 1 {
        return Err(BokehError::LevelMismatch {
            expected: kernels.len() + 1,
            actual: levels,
        });
    }
    let weights = compute_weights(img, depth, source)?;
    let stack = blur_stack(img, kernels)?;
    let image = blend(img, &stack, &weights)?;
    Ok(Rendered { image, weights })
}

/// Resizes `img` and `depth` to the processing size, renders there and
/// resizes the result back to the size of `img`. The depth map may have any
/// size; it is resized bilinearly as well.
pub fn render(img: &Image, depth: &DepthMap, opts: &RenderOptions) -> Result<Rendered> {
    if img.channels() != 3 {
        return Err(BokehError::dims("3-channel image", img.shape_string()));
    }
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = opts.proc_size.unwrap_or((w, h));
    let small = resize_bilinear(img, pw, ph)?;
    let small_depth = depth.resize(pw, ph)?;
    let out = render_at_native(&small, &small_depth, &opts.kernels, &opts.weights)?;
    Ok(Rendered {
        image: resize_bilinear(&out.image, w, h)?,
        weights: out.weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::gaussian_blur;
    use crate::synthetic::{gen_scene, SceneSpec};
    use crate::weights::head_init;

    fn parametric(focus: f32, hard: bool) -> WeightSource {
        WeightSource::Parametric {
            params: FocusParams::evenly_spaced(focus, 4).unwrap(),
            hard,
        }
    }

    #[test]
    fn in_focus_constant_depth_returns_input() {
        let (img, _) = gen_scene(&SceneSpec::random(1, 40, 30)).unwrap();
        let depth = DepthMap::constant(40, 30, 0.4);
        let opts = RenderOptions {
            kernels: vec![3, 5, 9],
            weights: parametric(0.4, true),
            proc_size: None,
        };
        assert_eq!(render(&img, &depth, &opts).unwrap().image, img);
    }

    #[test]
    fn max_blur_single_kernel_is_plain_blur() {
        let (img, _) = gen_scene(&SceneSpec::random(2, 40, 30)).unwrap();
        let depth = DepthMap::constant(40, 30, 1.0);
        let opts = RenderOptions {
            kernels: vec![9],
            weights: WeightSource::Parametric {
                params: FocusParams::evenly_spaced(0.0, 2).unwrap(),
                hard: true,
            },
            proc_size: None,
        };
        assert_eq!(
            render(&img, &depth, &opts).unwrap().image,
            gaussian_blur(&img, 9).unwrap()
        );
    }

    #[test]
    fn proc_size_equal_to_input_is_native() {
        let spec = SceneSpec::random(3, 48, 32);
        let (img, depth) = gen_scene(&spec).unwrap();
        for source in [parametric(0.2, false), WeightSource::Learned(head_init(1, 4).unwrap())] {
            let opts = RenderOptions {
                kernels: vec![3, 5, 9],
                weights: source.clone(),
                proc_size: Some((48, 32)),
            };
            let a = render(&img, &depth, &opts).unwrap();
            let b = render_at_native(&img, &depth, &[3, 5, 9], &source).unwrap();
            assert_eq!(a.image, b.image);
            assert_eq!(a.weights, b.weights);
        }
    }

    #[test]
    fn resized_render_keeps_input_size() {
        let (img, depth) = gen_scene(&SceneSpec::random(4, 50, 30)).unwrap();
        let opts = RenderOptions {
            kernels: vec![3, 5, 9],
            weights: parametric(0.0, false),
            proc_size: Some((32, 24)),
        };
        let out = render(&img, &depth, &opts).unwrap();
        assert_eq!((out.image.width(), out.image.height()), (50, 30));
        assert_eq!((out.weights.width(), out.weights.height()), (32, 24));
        assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn level_mismatch() {
        let (img, depth) = gen_scene(&SceneSpec::random(5, 20, 20)).unwrap();
        let opts = RenderOptions {
            kernels: vec![3, 5],
            weights: parametric(0.0, false),
            proc_size: None,
        };
        assert!(matches!(
            render(&img, &depth, &opts),
            Err(BokehError::LevelMismatch { .. })
        ));
    }
}
