//! Planar floating-point rasters, bilinear resampling and flips.

use crate::error::{BokehError, Result};

/// Planar `f32` raster with samples in `[0, 1]`.
///
/// Samples are stored channel-planar, each plane row-major:
/// `data[c * width * height + y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Wraps planar sample data, checking length, finiteness and range.
    pub fn from_planar(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(BokehError::ZeroDimension);
        }
        if data.len() != width * height * channels {
            return Err(BokehError::dims(
                format!("{} samples", width * height * channels),
                format!("{} samples", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(BokehError::InvalidParameter(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from a per-pixel function `f(channel, x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.pixels())
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[c * self.pixels() + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        let n = self.pixels();
        self.data[c * n + y * self.width + x] = v;
    }

    /// `(min, max)` over all samples.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(BokehError::dims(self.shape_string(), other.shape_string()))
        }
    }

    /// Largest absolute per-sample difference; `INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        if !self.same_shape(other) {
            return f32::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Single-channel normalized depth, `0` nearest to the camera and `1`
/// farthest.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(BokehError::ZeroDimension);
        }
        if values.len() != width * height {
            return Err(BokehError::dims(
                format!("{} depth values", width * height),
                format!("{}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(BokehError::InvalidParameter("depth values must lie in [0, 1]".into()));
        }
        Ok(DepthMap { width, height, values })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        DepthMap {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(BokehError::dims("1-channel depth", img.shape_string()));
        }
        DepthMap::new(img.width(), img.height(), img.data().to_vec())
    }

    pub fn to_image(&self) -> Image {
        Image::from_raw(self.width, self.height, 1, self.values.clone())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn matches(&self, img: &Image) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    pub(crate) fn ensure_matches(&self, img: &Image) -> Result<()> {
        if self.matches(img) {
            Ok(())
        } else {
            Err(BokehError::dims(
                format!("{}x{}", img.width(), img.height()),
                format!("{}x{} depth", self.width, self.height),
            ))
        }
    }

    pub fn resize(&self, new_w: usize, new_h: usize) -> Result<DepthMap> {
        let img = resize_bilinear(&self.to_image(), new_w, new_h)?;
        Ok(DepthMap {
            width: new_w,
            height: new_h,
            values: img.into_data(),
        })
    }

    pub fn flip(&self, axis: Axis) -> DepthMap {
        let img = flip(&self.to_image(), axis);
        DepthMap {
            width: self.width,
            height: self.height,
            values: img.into_data(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

/// Source sampling taps for one output coordinate.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f32,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor() as usize;
            Tap {
                i0,
                i1: (i0 + 1).min(src - 1),
                frac: (s - i0 as f64) as f32,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    // a + t(b - a) keeps constants exact; the clamp keeps rounding inside [a, b].
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}

/// Bilinear resampling with half-pixel centers: output pixel `d` samples the
/// source at `(d + 0.5) * src / dst - 0.5`, clamped to the valid range.
pub fn resize_bilinear(img: &Image, new_w: usize, new_h: usize) -> Result<Image> {
    if new_w == 0 || new_h == 0 {
        return Err(BokehError::ZeroDimension);
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let xt = taps(img.width, new_w);
    let yt = taps(img.height, new_h);
    let mut out = Image::new(new_w, new_h, img.channels);
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        let mut row0 = vec![0.0f32; new_w];
        let mut row1 = vec![0.0f32; new_w];
        for (y, t) in yt.iter().enumerate() {
            let r0 = &src[t.i0 * img.width..(t.i0 + 1) * img.width];
            let r1 = &src[t.i1 * img.width..(t.i1 + 1) * img.width];
            for (x, tx) in xt.iter().enumerate() {
                row0[x] = lerp(r0[tx.i0], r0[tx.i1], tx.frac);
                row1[x] = lerp(r1[tx.i0], r1[tx.i1], tx.frac);
            }
            let out_row = &mut dst[y * new_w..(y + 1) * new_w];
            for x in 0..new_w {
                out_row[x] = lerp(row0[x], row1[x], t.frac);
            }
        }
    }
    Ok(out)
}

pub fn flip(img: &Image, axis: Axis) -> Image {
    let (w, h) = (img.width, img.height);
    let mut out = img.clone();
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let sy = match axis {
                Axis::Horizontal => y,
                Axis::Vertical => h - 1 - y,
            };
            let s = &src[sy * w..(sy + 1) * w];
            let d = &mut dst[y * w..(y + 1) * w];
            d.copy_from_slice(s);
            if axis == Axis::Horizontal {
                d.reverse();
            }
        }
    }
    out
}
