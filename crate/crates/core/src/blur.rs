//! Normalized separable Gaussian smoothing.
//!
//! Both passes use mirrored borders without repeating the edge sample
//! (`-1 -> 1`, `w -> w - 2`), so a kernel of radius `r` needs `r < w` and
//! `r < h`.

use rayon::prelude::*;

use crate::error::{BokehError, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel1D {
    size: usize,
    sigma: f64,
    taps: Vec<f32>,
}

impl GaussianKernel1D {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn taps(&self) -> &[f32] {
        &self.taps
    }
}

/// Sigma for a kernel of the given size, `0.3 * ((size - 1) / 2 - 1) + 0.8`.
pub fn sigma_for_size(size: usize) -> f64 {
    0.3 * ((size as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

pub fn make_gaussian_kernel(size: usize) -> Result<GaussianKernel1D> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(BokehError::InvalidKernelSize(size));
    }
    let sigma = sigma_for_size(size);
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(GaussianKernel1D {
        size,
        sigma,
        taps: raw.iter().map(|v| (v / total) as f32).collect(),
    })
}

/// Mirror index without edge repeat; valid for `-n < i < 2n - 1`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    j as usize
}

pub(crate) fn check_kernel_fits(size: usize, width: usize, height: usize) -> Result<()> {
    let r = size / 2;
    if r >= width || r >= height {
        return Err(BokehError::KernelTooLarge { size, width, height });
    }
    Ok(())
}

pub fn gaussian_blur(img: &Image, size: usize) -> Result<Image> {
    let kernel = make_gaussian_kernel(size)?;
    check_kernel_fits(size, img.width(), img.height())?;
    if size == 1 {
        return Ok(img.clone());
    }
    Ok(convolve_separable(img, &kernel, &mut Vec::new()))
}

/// One blurred copy of `img` per entry of `sizes`, in order.
pub fn blur_stack(img: &Image, sizes: &[usize]) -> Result<Vec<Image>> {
    if sizes.is_empty() {
        return Err(BokehError::InvalidParameter("empty kernel list".into()));
    }
    let mut scratch = Vec::new();
    sizes
        .iter()
        .map(|&k| {
            let kernel = make_gaussian_kernel(k)?;
            check_kernel_fits(k, img.width(), img.height())?;
            Ok(if k == 1 {
                img.clone()
            } else {
                convolve_separable(img, &kernel, &mut scratch)
            })
        })
        .collect()
}

/// `tmp` holds the horizontal pass; reusing it across calls saves faulting
/// in a fresh buffer each time.
fn convolve_separable(img: &Image, kernel: &GaussianKernel1D, tmp: &mut Vec<f32>) -> Image {
    let (w, h) = (img.width(), img.height());
    let r = kernel.radius();
    // Symmetric taps: each off-center tap multiplies the sum of the two
    // mirrored samples. Addition commutes, so flipping the input flips the
    // output bit for bit.
    let center_tap = kernel.taps()[r];
    let side: Vec<f32> = kernel.taps()[r + 1..].to_vec();

    tmp.resize(img.data().len(), 0.0);
    tmp.par_chunks_mut(w).zip(img.data().par_chunks(w)).for_each_init(
        || vec![0.0f32; w + 2 * r],
        |padded, (out, src)| {
            for (i, p) in padded.iter_mut().enumerate() {
                *p = src[reflect(i as isize - r as isize, w)];
            }
            kernels::horizontal(out, padded, center_tap, &side);
        },
    );

    let mut out = Image::new(w, h, img.channels());
    for c in 0..img.channels() {
        let (lo, hi) = img
            .plane(c)
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let n = w * h;
        let src = &tmp[c * n..(c + 1) * n];
        out.plane_mut(c).par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let rows = |d: usize| {
                let yd = reflect(y as isize + d as isize, h);
                let yu = reflect(y as isize - d as isize, h);
                (&src[yd * w..(yd + 1) * w], &src[yu * w..(yu + 1) * w])
            };
            kernels::vertical(row, &src[y * w..(y + 1) * w], center_tap, &side, rows);
            // Rounding can leave the convex range by an ulp; a constant
            // plane comes back exactly.
            for v in row.iter_mut() {
                *v = v.clamp(lo, hi);
            }
        });
    }
    out
}

/// Inner loops, compiled a second time with AVX2 enabled and picked at run
/// time. Neither version fuses multiply-adds, so both give identical
/// results.
mod kernels {
    #[inline(always)]
    fn horizontal_body(out: &mut [f32], padded: &[f32], center_tap: f32, side: &[f32]) {
        let (w, r) = (out.len(), side.len());
        let center = &padded[r..r + w];
        for x in 0..w {
            out[x] = center_tap * center[x];
        }
        for (t, &k) in side.iter().enumerate() {
            let d = t + 1;
            let right = &padded[r + d..r + d + w];
            let left = &padded[r - d..r - d + w];
            for x in 0..w {
                out[x] += k * (right[x] + left[x]);
            }
        }
    }

    #[inline(always)]
    fn vertical_body<'a>(
        row: &mut [f32],
        center: &[f32],
        center_tap: f32,
        side: &[f32],
        rows: impl Fn(usize) -> (&'a [f32], &'a [f32]),
    ) {
        let w = row.len();
        let center = &center[..w];
        for x in 0..w {
            row[x] = center_tap * center[x];
        }
        for (t, &k) in side.iter().enumerate() {
            let (below, above) = rows(t + 1);
            let (below, above) = (&below[..w], &above[..w]);
            for x in 0..w {
                row[x] += k * (below[x] + above[x]);
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn horizontal_avx2(out: &mut [f32], padded: &[f32], center_tap: f32, side: &[f32]) {
        horizontal_body(out, padded, center_tap, side)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn vertical_avx2<'a>(
        row: &mut [f32],
        center: &[f32],
        center_tap: f32,
        side: &[f32],
        rows: impl Fn(usize) -> (&'a [f32], &'a [f32]),
    ) {
        vertical_body(row, center, center_tap, side, rows)
    }

    fn has_avx2() -> bool {
        #[cfg(target_arch = "x86_64")]
        {
            std::arch::is_x86_feature_detected!("avx2")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    }

    pub(super) fn horizontal(out: &mut [f32], padded: &[f32], center_tap: f32, side: &[f32]) {
        #[cfg(target_arch = "x86_64")]
        if has_avx2() {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { horizontal_avx2(out, padded, center_tap, side) };
        }
        horizontal_body(out, padded, center_tap, side)
    }

    pub(super) fn vertical<'a>(
        row: &mut [f32],
        center: &[f32],
        center_tap: f32,
        side: &[f32],
        rows: impl Fn(usize) -> (&'a [f32], &'a [f32]),
    ) {
        #[cfg(target_arch = "x86_64")]
        if has_avx2() {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { vertical_avx2(row, center, center_tap, side, rows) };
        }
        vertical_body(row, center, center_tap, side, rows)
    }
}
