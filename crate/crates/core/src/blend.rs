//! Per-pixel convex blending of an image with its smoothed copies.

use rayon::prelude::*;

use crate::error::{BokehError, Result};
use crate::image::Image;
use crate::real::Real;

/// `levels` single-channel planes; at every pixel the values are
/// nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMaps {
    width: usize,
    height: usize,
    levels: usize,
    data: Vec<f32>,
}

/// Unnormalized per-level scores, one plane per level.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    width: usize,
    height: usize,
    levels: usize,
    data: Vec<f32>,
}

macro_rules! planar_accessors {
    ($t:ty) => {
        impl $t {
            #[inline]
            pub fn width(&self) -> usize {
                self.width
            }
            #[inline]
            pub fn height(&self) -> usize {
                self.height
            }
            #[inline]
            pub fn levels(&self) -> usize {
                self.levels
            }
            pub fn data(&self) -> &[f32] {
                &self.data
            }
            pub fn plane(&self, level: usize) -> &[f32] {
                let n = self.width * self.height;
                &self.data[level * n..(level + 1) * n]
            }
            #[inline]
            pub fn get(&self, level: usize, x: usize, y: usize) -> f32 {
                self.data[(level * self.height + y) * self.width + x]
            }
        }
    };
}

planar_accessors!(WeightMaps);
planar_accessors!(Logits);

fn check_planar(width: usize, height: usize, levels: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 || levels == 0 {
        return Err(BokehError::ZeroDimension);
    }
    if len != width * height * levels {
        return Err(BokehError::dims(format!("{} values", width * height * levels), len));
    }
    Ok(())
}

impl Logits {
    pub fn new(width: usize, height: usize, levels: usize, data: Vec<f32>) -> Result<Self> {
        check_planar(width, height, levels, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(BokehError::NonFinite("logits"));
        }
        Ok(Logits {
            width,
            height,
            levels,
            data,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, levels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * levels);
        Logits {
            width,
            height,
            levels,
            data,
        }
    }
}

impl WeightMaps {
    /// Wraps planes after checking the per-pixel simplex constraint to 1e-5.
    pub fn new(width: usize, height: usize, levels: usize, data: Vec<f32>) -> Result<Self> {
        check_planar(width, height, levels, data.len())?;
        let n = width * height;
        for p in 0..n {
            let mut sum = 0.0f64;
            for l in 0..levels {
                let v = data[l * n + p];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(BokehError::InvalidParameter(format!("weight {v} outside [0, 1]")));
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(BokehError::InvalidParameter(format!(
                    "weights at pixel {p} sum to {sum}"
                )));
            }
        }
        Ok(WeightMaps {
            width,
            height,
            levels,
            data,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, levels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * levels);
        WeightMaps {
            width,
            height,
            levels,
            data,
        }
    }

    /// All weight on `level` everywhere.
    pub fn one_hot(width: usize, height: usize, levels: usize, level: usize) -> Self {
        let n = width * height;
        let mut data = vec![0.0; n * levels];
        data[level * n..(level + 1) * n].fill(1.0);
        WeightMaps::from_raw(width, height, levels, data)
    }

    /// Each plane as a grayscale image, for visualization.
    pub fn to_images(&self) -> Vec<Image> {
        (0..self.levels)
            .map(|l| Image::from_raw(self.width, self.height, 1, self.plane(l).to_vec()))
            .collect()
    }

    /// Largest deviation of a per-pixel sum from one.
    pub fn max_sum_error(&self) -> f64 {
        let n = self.width * self.height;
        (0..n)
            .map(|p| {
                let s: f64 = (0..self.levels).map(|l| self.data[l * n + p] as f64).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Softmax across levels at each pixel of planar `logits` (`levels` planes
/// of `n` values), with max subtraction.
pub(crate) fn softmax_planes<T: Real>(logits: &[T], levels: usize, n: usize) -> Vec<T> {
    const BLOCK: usize = 512;
    let mut out = vec![T::zero(); logits.len()];
    let mut m = [T::zero(); BLOCK];
    let mut sum = [T::zero(); BLOCK];
    for start in (0..n).step_by(BLOCK) {
        let len = BLOCK.min(n - start);
        let (m, sum) = (&mut m[..len], &mut sum[..len]);
        m.copy_from_slice(&logits[start..start + len]);
        for l in 1..levels {
            let z = &logits[l * n + start..l * n + start + len];
            for p in 0..len {
                m[p] = m[p].max(z[p]);
            }
        }
        sum.fill(T::zero());
        for l in 0..levels {
            let z = &logits[l * n + start..l * n + start + len];
            let e = &mut out[l * n + start..l * n + start + len];
            for p in 0..len {
                e[p] = (z[p] - m[p]).exp();
                sum[p] = sum[p] + e[p];
            }
        }
        for s in sum.iter_mut() {
            *s = T::one() / *s;
        }
        for l in 0..levels {
            let e = &mut out[l * n + start..l * n + start + len];
            for p in 0..len {
                e[p] = e[p] * sum[p];
            }
        }
    }
    out
}

/// Softmax over the level axis, independently at every pixel.
pub fn spatial_softmax(logits: &Logits) -> Result<WeightMaps> {
    if logits.data.iter().any(|v| !v.is_finite()) {
        return Err(BokehError::NonFinite("logits"));
    }
    let n = logits.width * logits.height;
    let data = softmax_planes(&logits.data, logits.levels, n);
    Ok(WeightMaps::from_raw(logits.width, logits.height, logits.levels, data))
}

fn check_blend_inputs(original: &Image, smoothed: &[Image], weights: &WeightMaps) -> Result<()> {
    if weights.levels != smoothed.len() + 1 {
        return Err(BokehError::LevelMismatch {
            expected: smoothed.len() + 1,
            actual: weights.levels,
        });
    }
    for s in smoothed {
        original.ensure_same_shape(s)?;
    }
    if weights.width != original.width() || weights.height != original.height() {
        return Err(BokehError::dims(
            format!("{}x{}", original.width(), original.height()),
            format!("{}x{} weights", weights.width, weights.height),
        ));
    }
    Ok(())
}

/// `out = W_0 * original + sum_i W_i * smoothed[i - 1]`, each weight plane
/// broadcast across color channels.
///
/// Evaluated as `original + sum_i W_i * (smoothed[i - 1] - original)`, which
/// is equal whenever the weights sum to one and returns constants and the
/// `W_0 = 1` case exactly. A weight of exactly one selects its source
/// exactly. The result is clamped to the per-pixel range of the sources.
pub fn blend(original: &Image, smoothed: &[Image], weights: &WeightMaps) -> Result<Image> {
    check_blend_inputs(original, smoothed, weights)?;
    let (w, n) = (original.width(), original.pixels());
    let mut out = original.clone();
    for c in 0..original.channels() {
        let base = original.plane(c);
        let sources: Vec<&[f32]> = smoothed.iter().map(|s| s.plane(c)).collect();
        out.plane_mut(c).par_chunks_mut(w).enumerate().for_each_init(
            || (vec![0.0f32; w], vec![0.0f32; w], vec![0.0f32; w]),
            |(lo, hi, pick), (y, row)| {
                let off = y * w;
                let b = &base[off..off + w];
                lo.copy_from_slice(b);
                hi.copy_from_slice(b);
                pick.fill(f32::NAN);
                for (i, src) in sources.iter().enumerate() {
                    let s = &src[off..off + w];
                    let wt = &weights.data[(i + 1) * n + off..(i + 1) * n + off + w];
                    for x in 0..w {
                        row[x] += wt[x] * (s[x] - b[x]);
                        lo[x] = lo[x].min(s[x]);
                        hi[x] = hi[x].max(s[x]);
                        if wt[x] == 1.0 {
                            pick[x] = s[x];
                        }
                    }
                }
                for x in 0..w {
                    row[x] = if pick[x].is_nan() {
                        row[x].clamp(lo[x], hi[x])
                    } else {
                        pick[x]
                    };
                }
            },
        );
    }
    Ok(out)
}

/// Reference evaluation of the blend: a plain loop over pixels, channels
/// and levels, accumulated in f64.
pub fn brute_force_blend(original: &Image, smoothed: &[Image], weights: &WeightMaps) -> Result<Image> {
    check_blend_inputs(original, smoothed, weights)?;
    let mut out = Image::new(original.width(), original.height(), original.channels());
    for y in 0..original.height() {
        for x in 0..original.width() {
            for c in 0..original.channels() {
                let mut acc = weights.get(0, x, y) as f64 * original.get(c, x, y) as f64;
                for (i, s) in smoothed.iter().enumerate() {
                    acc += weights.get(i + 1, x, y) as f64 * s.get(c, x, y) as f64;
                }
                out.set(c, x, y, acc as f32);
            }
        }
    }
    Ok(out)
}

/// `sum_l W_l * source_l` on planar generic data, used by the training path.
///
/// `sources` holds `levels` images of `channels * n` samples each.
pub(crate) fn blend_planes<T: Real>(sources: &[Vec<T>], weights: &[T], channels: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels * n];
    for (l, src) in sources.iter().enumerate() {
        let wt = &weights[l * n..(l + 1) * n];
        for c in 0..channels {
            let o = &mut out[c * n..(c + 1) * n];
            let s = &src[c * n..(c + 1) * n];
            for p in 0..n {
                o[p] = o[p] + wt[p] * s[p];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::from_fn(w, h, c, |_, _, _| rng.random::<f32>())
    }

    fn random_weights(rng: &mut ChaCha8Rng, w: usize, h: usize, levels: usize) -> WeightMaps {
        let z: Vec<f32> = (0..w * h * levels).map(|_| rng.random_range(-3.0..3.0)).collect();
        spatial_softmax(&Logits::new(w, h, levels, z).unwrap()).unwrap()
    }

    fn pixel_weights(logits: &[f32]) -> Vec<f32> {
        let l = Logits::new(1, 1, logits.len(), logits.to_vec()).unwrap();
        spatial_softmax(&l).unwrap().data().to_vec()
    }

    #[test]
    fn zero_logits_give_uniform_weights() {
        assert_eq!(pixel_weights(&[0.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn softmax_closed_forms() {
        let w = pixel_weights(&[std::f32::consts::LN_2, 0.0, 0.0, 0.0]);
        for (a, b) in w.iter().zip([0.4, 0.2, 0.2, 0.2]) {
            assert!((a - b).abs() < 1e-6);
        }
        let w = pixel_weights(&[100.0, 0.0, 0.0, 0.0]);
        for (a, b) in w.iter().zip([1.0f64, 0.0, 0.0, 0.0]) {
            assert!((*a as f64 - b).abs() < 1e-10);
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(
            Logits::new(1, 1, 2, vec![0.0, f32::NAN]),
            Err(BokehError::NonFinite(_))
        ));
        let bad = Logits::from_raw(1, 1, 2, vec![f32::INFINITY, 0.0]);
        assert!(spatial_softmax(&bad).is_err());
    }

    #[test]
    fn identity_weights_return_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let orig = random_image(&mut rng, 9, 7, 3);
        let smoothed: Vec<Image> = (0..3).map(|_| random_image(&mut rng, 9, 7, 3)).collect();
        let w = WeightMaps::one_hot(9, 7, 4, 0);
        assert_eq!(blend(&orig, &smoothed, &w).unwrap(), orig);
        for level in 1..4 {
            let w = WeightMaps::one_hot(9, 7, 4, level);
            assert_eq!(blend(&orig, &smoothed, &w).unwrap(), smoothed[level - 1]);
        }
    }

    #[test]
    fn constant_sources_stay_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Image::filled(8, 8, 3, 0.3719);
        let w = random_weights(&mut rng, 8, 8, 4);
        let out = blend(&c, &[c.clone(), c.clone(), c.clone()], &w).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.3719));
    }

    #[test]
    fn matches_reference_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let orig = random_image(&mut rng, 16, 16, 3);
            let smoothed: Vec<Image> = (0..3).map(|_| random_image(&mut rng, 16, 16, 3)).collect();
            let w = random_weights(&mut rng, 16, 16, 4);
            let fast = blend(&orig, &smoothed, &w).unwrap();
            let slow = brute_force_blend(&orig, &smoothed, &w).unwrap();
            assert!(fast.max_abs_diff(&slow) <= 1e-6);
        }
    }

    #[test]
    fn reference_simple_cases() {
        let x = Image::from_fn(4, 3, 3, |c, x, y| (c + x + y) as f32 / 10.0);
        let uniform = WeightMaps::from_raw(4, 3, 4, vec![0.25; 48]);
        let out = brute_force_blend(&x, &[x.clone(), x.clone(), x.clone()], &uniform).unwrap();
        assert_eq!(out, x);

        let zero = Image::filled(3, 3, 1, 0.0);
        let one = Image::filled(3, 3, 1, 1.0);
        let half = WeightMaps::from_raw(3, 3, 2, vec![0.5; 18]);
        let out = brute_force_blend(&zero, &[one], &half).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mismatches_are_errors() {
        let a = Image::filled(4, 4, 3, 0.5);
        let b = Image::filled(4, 5, 3, 0.5);
        let w = WeightMaps::one_hot(4, 4, 3, 0);
        assert!(matches!(
            blend(&a, std::slice::from_ref(&a), &w),
            Err(BokehError::LevelMismatch { expected: 2, actual: 3 })
        ));
        assert!(matches!(
            blend(&a, &[a.clone(), b], &w),
            Err(BokehError::DimensionMismatch { .. })
        ));
        let w_small = WeightMaps::one_hot(2, 2, 2, 0);
        assert!(brute_force_blend(&a, std::slice::from_ref(&a), &w_small).is_err());
    }

    #[test]
    fn weight_maps_validate_simplex() {
        assert!(WeightMaps::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(WeightMaps::new(1, 1, 2, vec![-0.1, 1.1]).is_err());
        assert!(WeightMaps::new(1, 1, 2, vec![0.3, 0.7]).is_ok());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_for_large_logits(
            z in proptest::collection::vec(-1e4f32..1e4, 4 * 6),
        ) {
            let w = spatial_softmax(&Logits::new(3, 2, 4, z).unwrap()).unwrap();
            prop_assert!(w.max_sum_error() <= 1e-5);
            prop_assert!(w.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn softmax_is_shift_invariant(
            steps in proptest::collection::vec(-51_200i32..51_200, 4), shift in -100i32..100,
        ) {
            // On a 1/1024 grid the shifted logits are exact in f32.
            let z: Vec<f32> = steps.iter().map(|&k| k as f32 / 1024.0).collect();
            let shift = shift as f32;
            let a = pixel_weights(&z);
            let shifted: Vec<f32> = z.iter().map(|v| v + shift).collect();
            let b = pixel_weights(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }

        #[test]
        fn blend_bounded_and_linear(seed in any::<u64>(), scale in 0.0f32..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let orig = random_image(&mut rng, 5, 4, 3);
            let smoothed: Vec<Image> = (0..3).map(|_| random_image(&mut rng, 5, 4, 3)).collect();
            let w = random_weights(&mut rng, 5, 4, 4);
            let out = blend(&orig, &smoothed, &w).unwrap();
            for c in 0..3 {
                for y in 0..4 {
                    for x in 0..5 {
                        let vals: Vec<f32> = std::iter::once(orig.get(c, x, y))
                            .chain(smoothed.iter().map(|s| s.get(c, x, y)))
                            .collect();
                        let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
                        let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                        let v = out.get(c, x, y);
                        prop_assert!(v >= lo && v <= hi);
                    }
                }
            }
            // linear in each source with weights fixed
            let scaled: Vec<Image> = smoothed
                .iter()
                .map(|s| Image::from_fn(5, 4, 3, |c, x, y| s.get(c, x, y) * scale))
                .collect();
            let so = Image::from_fn(5, 4, 3, |c, x, y| orig.get(c, x, y) * scale);
            let lhs = blend(&so, &scaled, &w).unwrap();
            let rhs = Image::from_fn(5, 4, 3, |c, x, y| out.get(c, x, y) * scale);
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-6);
        }
    }
}
