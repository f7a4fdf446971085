//! Losses, analytic gradients, Adam and the multi-phase training loop.

mod adam;
mod backprop;
mod checkpoint;
mod config;
mod gradcheck;
mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use backprop::{backward, predict};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ADAM_MAGIC};
pub use config::{parse_list, parse_size, LossKind, PhaseConfig, TrainConfig};
pub use gradcheck::{analytic_gradient_f64, compare_with_finite_differences, grad_check, GradCheckReport, FD_STEP};
pub use trainer::{evaluate_head, train_phases, train_phases_from, PhaseReport, TrainOutcome};

use crate::error::{BokehError, Result};
use crate::image::{DepthMap, Image};

/// An input image, its depth map and the desired bokeh rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub input: Image,
    pub depth: DepthMap,
    pub target: Image,
}

impl SamplePair {
    pub fn new(input: Image, depth: DepthMap, target: Image) -> Result<Self> {
        if input.channels() != 3 {
            return Err(BokehError::dims("3-channel input", input.shape_string()));
        }
        input.ensure_same_shape(&target)?;
        depth.ensure_matches(&input)?;
        Ok(SamplePair { input, depth, target })
    }

    pub fn width(&self) -> usize {
        self.input.width()
    }

    pub fn height(&self) -> usize {
        self.input.height()
    }
}

/// Mean absolute error over all samples.
pub fn l1_loss(pred: &Image, target: &Image) -> Result<f64> {
    pred.ensure_same_shape(target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / pred.data().len() as f64)
}

/// Negative mean SSIM, exactly `-metrics::ssim`.
pub fn ssim_loss(pred: &Image, target: &Image) -> Result<f64> {
    Ok(-crate::metrics::ssim(pred, target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SSIM_C1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l1_closed_forms() {
        let a = Image::filled(5, 4, 3, 0.25);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        let zero = Image::filled(5, 4, 3, 0.0);
        let half = Image::filled(5, 4, 3, 0.5);
        assert_eq!(l1_loss(&zero, &half).unwrap(), 0.5);
        assert!(l1_loss(&a, &Image::filled(5, 4, 1, 0.0)).is_err());
    }

    #[test]
    fn l1_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Image::from_fn(17, 9, 3, |_, _, _| rng.random::<f32>());
        let b = Image::from_fn(17, 9, 3, |_, _, _| rng.random::<f32>());
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..17 {
                    acc += (a.get(c, x, y) as f64 - b.get(c, x, y) as f64).abs();
                    count += 1;
                }
            }
        }
        assert!((l1_loss(&a, &b).unwrap() - acc / count as f64).abs() <= 1e-7);
    }

    #[test]
    fn ssim_loss_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Image::from_fn(12, 12, 3, |_, _, _| rng.random::<f32>());
        assert!((ssim_loss(&a, &a).unwrap() + 1.0).abs() <= 1e-9);
        let zero = Image::filled(12, 12, 3, 0.0);
        let one = Image::filled(12, 12, 3, 1.0);
        let want = -(SSIM_C1 / (1.0 + SSIM_C1));
        assert!((ssim_loss(&zero, &one).unwrap() - want).abs() <= 1e-7);
        let mut b = a.clone();
        b.set(0, 5, 5, 1.0 - a.get(0, 5, 5));
        assert!(ssim_loss(&b, &a).unwrap() > -1.0);
        assert!(matches!(
            ssim_loss(&Image::filled(10, 10, 3, 0.0), &Image::filled(10, 10, 3, 0.0)),
            Err(BokehError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn sample_pair_validates_shapes() {
        let img = Image::filled(4, 4, 3, 0.5);
        assert!(SamplePair::new(img.clone(), DepthMap::constant(4, 4, 0.0), img.clone()).is_ok());
        assert!(SamplePair::new(img.clone(), DepthMap::constant(4, 3, 0.0), img.clone()).is_err());
        assert!(SamplePair::new(img.clone(), DepthMap::constant(4, 4, 0.0), Image::filled(4, 4, 1, 0.5)).is_err());
    }
}
