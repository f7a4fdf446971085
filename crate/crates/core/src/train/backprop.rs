//! Forward pass and hand-derived gradients of
//! `loss(blend(softmax(head(rgb, depth))))`.
//!
//! The chain, per pixel `p`, level `l`, channel `c`:
//!
//! ```text
//! dL/dW_l[p] = sum_c dL/dout[c][p] * source_l[c][p]
//! dL/dz_l[p] = W_l[p] * (dL/dW_l[p] - sum_k W_k[p] * dL/dW_k[p])
//! ```
//!
//! followed by the two convolutions' backward passes with the ReLU gate.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::config::LossKind;
use super::SamplePair;
use crate::blend::{blend_planes, softmax_planes};
use crate::blur::blur_stack;
use crate::error::Result;
use crate::image::{DepthMap, Image};
use crate::metrics::{check_ssim_inputs, ssim_planes};
use crate::real::Real;
use crate::weights::{head_backward, head_features, head_forward_generic, WeightHead};

/// A sample with its blur stack precomputed, converted to `T`.
pub(crate) struct Prepared<T> {
    pub width: usize,
    pub height: usize,
    /// R, G, B, depth planes.
    pub features: Vec<T>,
    /// Original image followed by each smoothed copy, 3 planes each.
    pub sources: Vec<Vec<T>>,
    pub target: Vec<T>,
}

impl<T: Real> Prepared<T> {
    pub fn new(sample: &SamplePair, kernels: &[usize]) -> Result<Self> {
        let features = head_features(&sample.input, &sample.depth)?;
        let to_t = |img: &Image| img.data().iter().map(|&v| T::lit(v as f64)).collect::<Vec<T>>();
        let mut sources = vec![to_t(&sample.input)];
        sources.extend(blur_stack(&sample.input, kernels)?.iter().map(to_t));
        Ok(Prepared {
            width: sample.width(),
            height: sample.height(),
            features,
            sources,
            target: to_t(&sample.target),
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn levels(&self) -> usize {
        self.sources.len()
    }

    pub fn bytes(&self) -> usize {
        std::mem::size_of::<T>()
            * (self.features.len() + self.target.len() + self.sources.iter().map(Vec::len).sum::<usize>())
    }
}

pub(crate) struct Evaluation<T> {
    pub loss: f64,
    pub grads: Option<WeightHead<T>>,
    /// Hash of the ReLU gates and, for L1, the residual signs. Equal
    /// fingerprints mean the loss is smooth along the segment between the
    /// two parameter settings (as far as these kinks are concerned).
    pub fingerprint: u64,
    pub prediction: Vec<T>,
}

pub(crate) fn evaluate<T: Real>(
    head: &WeightHead<T>,
    sample: &Prepared<T>,
    loss: LossKind,
    want_grad: bool,
    want_fingerprint: bool,
) -> Evaluation<T> {
    let (w, h, n) = (sample.width, sample.height, sample.pixels());
    let levels = sample.levels();
    debug_assert_eq!(head.levels(), levels);
    let acts = head_forward_generic(head, &sample.features, w, h);
    let weights = softmax_planes(&acts.logits, levels, n);
    let pred = blend_planes(&sample.sources, &weights, 3, n);

    let (value, d_pred) = match loss {
        LossKind::L1 => {
            let count = pred.len() as f64;
            let sum: f64 = pred
                .iter()
                .zip(&sample.target)
                .map(|(&a, &b)| (a - b).abs().as_f64())
                .sum();
            let d = want_grad.then(|| {
                let inv = T::lit(1.0 / count);
                pred.iter()
                    .zip(&sample.target)
                    .map(|(&a, &b)| {
                        if a > b {
                            inv
                        } else if a < b {
                            -inv
                        } else {
                            T::zero()
                        }
                    })
                    .collect::<Vec<T>>()
            });
            (sum / count, d)
        }
        LossKind::NegSsim => {
            let p: Vec<f64> = pred.iter().map(|v| v.as_f64()).collect();
            let t: Vec<f64> = sample.target.iter().map(|v| v.as_f64()).collect();
            let (s, g) = ssim_planes(&p, &t, w, h, 3, want_grad);
            (-s, g.map(|g| g.iter().map(|&v| T::lit(-v)).collect()))
        }
    };

    let fingerprint = if want_fingerprint {
        let mut hasher = DefaultHasher::new();
        for chunk in acts.hidden_pre.chunks(64) {
            let mut bits = 0u64;
            for (i, &z) in chunk.iter().enumerate() {
                if z > T::zero() {
                    bits |= 1 << i;
                }
            }
            hasher.write_u64(bits);
        }
        if loss == LossKind::L1 {
            for (&a, &b) in pred.iter().zip(&sample.target) {
                hasher.write_i8(if a > b {
                    1
                } else if a < b {
                    -1
                } else {
                    0
                });
            }
        }
        hasher.finish()
    } else {
        0
    };

    let grads = d_pred.map(|d_pred| {
        let d_weights = blend_weight_grad(&sample.sources, &d_pred, n);
        let d_logits = softmax_backward(&weights, &d_weights, levels, n);
        head_backward(head, &acts, &d_logits, w, h)
    });

    Evaluation {
        loss: value,
        grads,
        fingerprint,
        prediction: pred,
    }
}

/// `dL/dW_l[p] = sum_c dL/dout[c][p] * source_l[c][p]`.
fn blend_weight_grad<T: Real>(sources: &[Vec<T>], d_pred: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); sources.len() * n];
    for (l, src) in sources.iter().enumerate() {
        let dst = &mut out[l * n..(l + 1) * n];
        for c in 0..3 {
            let s = &src[c * n..(c + 1) * n];
            let g = &d_pred[c * n..(c + 1) * n];
            for p in 0..n {
                dst[p] = dst[p] + g[p] * s[p];
            }
        }
    }
    out
}

/// Softmax Jacobian-vector product, per pixel.
fn softmax_backward<T: Real>(weights: &[T], d_weights: &[T], levels: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); levels * n];
    for p in 0..n {
        let mut dot = T::zero();
        for l in 0..levels {
            dot = dot + weights[l * n + p] * d_weights[l * n + p];
        }
        for l in 0..levels {
            out[l * n + p] = weights[l * n + p] * (d_weights[l * n + p] - dot);
        }
    }
    out
}

/// Loss and exact gradient of the head parameters on one sample (f32).
pub fn backward(
    sample: &SamplePair,
    head: &WeightHead,
    kernels: &[usize],
    loss: LossKind,
) -> Result<(f64, WeightHead)> {
    check_sample(sample, head, kernels, loss)?;
    let prepared = Prepared::<f32>::new(sample, kernels)?;
    let eval = evaluate(head, &prepared, loss, true, false);
    Ok((eval.loss, eval.grads.expect("gradient requested")))
}

pub(crate) fn check_sample(sample: &SamplePair, head: &WeightHead, kernels: &[usize], loss: LossKind) -> Result<()> {
    head.check_shapes()?;
    if head.levels() != kernels.len() + 1 {
        return Err(crate::BokehError::LevelMismatch {
            expected: kernels.len() + 1,
            actual: head.levels(),
        });
    }
    if loss == LossKind::NegSsim {
        check_ssim_inputs(&sample.input, &sample.target)?;
    }
    Ok(())
}

/// Renders with a trained head through the same arithmetic as training.
pub fn predict(head: &WeightHead, input: &Image, depth: &DepthMap, kernels: &[usize]) -> Result<Image> {
    let sample = SamplePair::new(input.clone(), depth.clone(), input.clone())?;
    check_sample(&sample, head, kernels, LossKind::L1)?;
    let prepared = Prepared::<f32>::new(&sample, kernels)?;
    let eval = evaluate(head, &prepared, LossKind::L1, false, false);
    let data = eval.prediction.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(Image::from_raw(input.width(), input.height(), 3, data))
}
