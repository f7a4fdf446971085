//! Finite-difference verification of the analytic gradient, run in `f64`.
//!
//! L1 and ReLU are only piecewise smooth. When a central difference would
//! straddle a kink (detected by a change in the ReLU gates or the residual
//! signs), a one-sided second-order difference on the smooth side is used
//! instead; a parameter with kinks on both sides is skipped and counted.

use super::backprop::{check_sample, evaluate, Prepared};
use super::config::LossKind;
use super::SamplePair;
use crate::error::Result;
use crate::weights::WeightHead;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Relative errors below this floor of `max(|analytic|, |numeric|)` are not
/// meaningful.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the parameter with the largest error.
    pub worst_index: usize,
    pub checked: usize,
    pub one_sided: usize,
    pub skipped: usize,
}

/// Analytic gradient in `f64`, flattened in parameter declaration order.
pub fn analytic_gradient_f64(
    head: &WeightHead,
    sample: &SamplePair,
    kernels: &[usize],
    loss: LossKind,
) -> Result<Vec<f64>> {
    check_sample(sample, head, kernels, loss)?;
    let prepared = Prepared::<f64>::new(sample, kernels)?;
    let eval = evaluate(&head.cast::<f64>(), &prepared, loss, true, false);
    Ok(eval.grads.expect("gradient requested").flat())
}

/// Compares `analytic` (flat, declaration order) against finite
/// differences of the `f64` loss.
pub fn compare_with_finite_differences(
    head: &WeightHead,
    sample: &SamplePair,
    kernels: &[usize],
    loss: LossKind,
    analytic: &[f64],
) -> Result<GradCheckReport> {
    check_sample(sample, head, kernels, loss)?;
    let prepared = Prepared::<f64>::new(sample, kernels)?;
    let base = head.cast::<f64>();
    let theta = base.flat();
    assert_eq!(analytic.len(), theta.len(), "gradient length");

    let mut probe = base.clone();
    let mut at = |i: usize, delta: f64| -> (f64, u64) {
        let mut p = theta.clone();
        p[i] += delta;
        probe.set_flat(&p);
        let e = evaluate(&probe, &prepared, loss, false, true);
        (e.loss, e.fingerprint)
    };
    let origin = evaluate(&base, &prepared, loss, false, true);
    let (f0, fp0) = (origin.loss, origin.fingerprint);
    let h = FD_STEP;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
        one_sided: 0,
        skipped: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let (fp, kp) = at(i, h);
        let (fm, km) = at(i, -h);
        let numeric = if kp == fp0 && km == fp0 {
            (fp - fm) / (2.0 * h)
        } else if kp == fp0 {
            let (fpp, kpp) = at(i, 2.0 * h);
            if kpp != fp0 {
                report.skipped += 1;
                continue;
            }
            report.one_sided += 1;
            (-3.0 * f0 + 4.0 * fp - fpp) / (2.0 * h)
        } else if km == fp0 {
            let (fmm, kmm) = at(i, -2.0 * h);
            if kmm != fp0 {
                report.skipped += 1;
                continue;
            }
            report.one_sided += 1;
            (3.0 * f0 - 4.0 * fm + fmm) / (2.0 * h)
        } else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Largest relative error between the analytic gradient and finite
/// differences over all parameters.
pub fn grad_check(
    head: &WeightHead,
    sample: &SamplePair,
    kernels: &[usize],
    loss: LossKind,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradient_f64(head, sample, kernels, loss)?;
    compare_with_finite_differences(head, sample, kernels, loss, &analytic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{DepthMap, Image};
    use crate::weights::head_init;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random head with a second layer large enough that first-layer
    /// gradients are not vanishingly small.
    fn random_head(seed: u64) -> WeightHead {
        let mut head = head_init(seed, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for w in head.conv2.weight.iter_mut() {
            *w = rng.random_range(-0.5..0.5);
        }
        for b in head.conv1.bias.iter_mut().chain(head.conv2.bias.iter_mut()) {
            *b = rng.random_range(-0.1..0.1);
        }
        head
    }

    /// Sample whose target sits at least 0.05 away from any plausible
    /// prediction so L1 residual signs are stable.
    fn random_sample(seed: u64, w: usize, h: usize) -> SamplePair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.2..0.8));
        let depth = DepthMap::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
        let target = Image::from_fn(w, h, 3, |c, x, y| {
            let v = input.get(c, x, y);
            if rng.random::<bool>() {
                (v + 0.3).min(1.0)
            } else {
                (v - 0.3).max(0.0)
            }
        });
        SamplePair::new(input, depth, target).unwrap()
    }

    #[test]
    fn l1_gradient_matches() {
        for seed in 0..3 {
            let r = grad_check(&random_head(seed), &random_sample(seed, 8, 8), &[3, 5, 7], LossKind::L1).unwrap();
            assert!(r.max_rel_error <= 1e-4, "{r:?}");
            assert!(r.checked > r.skipped * 10, "{r:?}");
        }
    }

    #[test]
    fn ssim_gradient_matches() {
        let r = grad_check(
            &random_head(4),
            &random_sample(4, 12, 12),
            &[3, 5, 7],
            LossKind::NegSsim,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-3, "{r:?}");
    }

    #[test]
    fn corrupted_entry_is_caught() {
        let head = random_head(5);
        let sample = random_sample(5, 8, 8);
        let mut g = analytic_gradient_f64(&head, &sample, &[3, 5, 7], LossKind::L1).unwrap();
        let i = g.iter().position(|v| v.abs() > 1e-6).unwrap();
        g[i] *= 2.0;
        let r = compare_with_finite_differences(&head, &sample, &[3, 5, 7], LossKind::L1, &g).unwrap();
        assert!(r.max_rel_error > 0.3);
        assert_eq!(r.worst_index, i);
    }
}
