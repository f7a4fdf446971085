use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blend::Logits;
use crate::blur::reflect;
use crate::error::{BokehError, Result};
use crate::image::{DepthMap, Image};
use crate::real::Real;

/// Input channels of the head: R, G, B, depth.
pub const HEAD_INPUTS: usize = 4;
pub const HEAD_HIDDEN: usize = 8;

/// 3x3 convolution, stride 1, mirrored padding. `weight` is laid out
/// `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<T = f32> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv3x3<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Conv3x3 {
            in_ch,
            out_ch,
            weight: vec![T::zero(); out_ch * in_ch * 9],
            bias: vec![T::zero(); out_ch],
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weight[((o * self.in_ch + i) * 3 + ky) * 3 + kx]
    }

    fn cast<U: Real>(&self) -> Conv3x3<U> {
        Conv3x3 {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            weight: self.weight.iter().map(|v| U::lit(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Trainable weight predictor: conv 4->8, ReLU, conv 8->levels. Softmax
/// over the output gives the blending weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHead<T = f32> {
    pub conv1: Conv3x3<T>,
    pub conv2: Conv3x3<T>,
}

impl<T: Real> WeightHead<T> {
    pub fn zeros(levels: usize) -> Self {
        WeightHead {
            conv1: Conv3x3::zeros(HEAD_INPUTS, HEAD_HIDDEN),
            conv2: Conv3x3::zeros(HEAD_HIDDEN, levels),
        }
    }

    pub fn levels(&self) -> usize {
        self.conv2.out_ch
    }

    pub fn cast<U: Real>(&self) -> WeightHead<U> {
        WeightHead {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
        }
    }

    /// Parameter tensors in declaration order.
    pub fn tensors(&self) -> [&[T]; 4] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ]
    }

    /// Shapes matching [`Self::tensors`].
    pub fn shapes(&self) -> [Vec<usize>; 4] {
        let (c1, c2) = (&self.conv1, &self.conv2);
        [
            vec![c1.out_ch, c1.in_ch, 3, 3],
            vec![c1.out_ch],
            vec![c2.out_ch, c2.in_ch, 3, 3],
            vec![c2.out_ch],
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat parameter vector in declaration order.
    pub fn flat(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, values: &[T]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let ok = self.conv1.in_ch == HEAD_INPUTS
            && self.conv1.out_ch == HEAD_HIDDEN
            && self.conv2.in_ch == HEAD_HIDDEN
            && self.conv2.out_ch >= 2
            && [&self.conv1, &self.conv2]
                .iter()
                .all(|c| c.weight.len() == c.out_ch * c.in_ch * 9 && c.bias.len() == c.out_ch);
        if ok {
            Ok(())
        } else {
            Err(BokehError::ModelFormat("weight head tensors have wrong shapes".into()))
        }
    }
}

/// Seeded initialization: first layer uniform in `+-sqrt(6 / fan_in)`,
/// second layer the same range scaled by 0.01, zero biases. The small second
/// layer starts the blend close to a uniform average.
pub fn head_init(seed: u64, levels: usize) -> Result<WeightHead> {
    if levels < 2 {
        return Err(BokehError::InvalidParameter(format!(
            "weight head needs at least 2 levels, got {levels}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = WeightHead::<f32>::zeros(levels);
    let a1 = (6.0 / (HEAD_INPUTS * 9) as f64).sqrt() as f32;
    for w in head.conv1.weight.iter_mut() {
        *w = rng.random_range(-a1..a1);
    }
    let a2 = (6.0 / (HEAD_HIDDEN * 9) as f64).sqrt() as f32;
    for w in head.conv2.weight.iter_mut() {
        *w = rng.random_range(-a2..a2) * 0.01;
    }
    Ok(head)
}

/// Stacks RGB and depth into the planar head input.
pub(crate) fn head_features<T: Real>(img: &Image, depth: &DepthMap) -> Result<Vec<T>> {
    if img.channels() != 3 {
        return Err(BokehError::dims("3-channel image", img.shape_string()));
    }
    depth.ensure_matches(img)?;
    if img.width() < 2 || img.height() < 2 {
        return Err(BokehError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            window: 2,
        });
    }
    Ok(img
        .data()
        .iter()
        .chain(depth.values())
        .map(|&v| T::lit(v as f64))
        .collect())
}

/// Logits of the head on `img` (RGB) and `depth`; spatial size preserved.
pub fn head_forward(img: &Image, depth: &DepthMap, head: &WeightHead) -> Result<Logits> {
    head.check_shapes()?;
    let features = head_features::<f32>(img, depth)?;
    let acts = forward(head, &features, img.width(), img.height());
    Ok(Logits::from_raw(img.width(), img.height(), head.levels(), acts.logits))
}

/// Intermediate values kept for the backward pass.
pub(crate) struct Activations<T> {
    pub padded_input: Vec<T>,
    pub hidden_pre: Vec<T>,
    pub padded_hidden: Vec<T>,
    pub logits: Vec<T>,
}

fn pad_reflect<T: Real>(planes: &[T], ch: usize, w: usize, h: usize) -> Vec<T> {
    let (pw, ph) = (w + 2, h + 2);
    let mut out = vec![T::zero(); ch * pw * ph];
    for c in 0..ch {
        let src = &planes[c * w * h..(c + 1) * w * h];
        let dst = &mut out[c * pw * ph..(c + 1) * pw * ph];
        for py in 0..ph {
            let sy = reflect(py as isize - 1, h);
            for px in 0..pw {
                let sx = reflect(px as isize - 1, w);
                dst[py * pw + px] = src[sy * w + sx];
            }
        }
    }
    out
}

/// Adjoint of [`pad_reflect`]: folds border gradients back onto the pixels
/// they were copied from.
fn unpad_reflect_grad<T: Real>(padded: &[T], ch: usize, w: usize, h: usize) -> Vec<T> {
    let (pw, ph) = (w + 2, h + 2);
    let mut out = vec![T::zero(); ch * w * h];
    for c in 0..ch {
        let src = &padded[c * pw * ph..(c + 1) * pw * ph];
        let dst = &mut out[c * w * h..(c + 1) * w * h];
        for py in 0..ph {
            let sy = reflect(py as isize - 1, h);
            for px in 0..pw {
                let sx = reflect(px as isize - 1, w);
                dst[sy * w + sx] = dst[sy * w + sx] + src[py * pw + px];
            }
        }
    }
    out
}

fn conv_forward<T: Real>(conv: &Conv3x3<T>, padded: &[T], w: usize, h: usize) -> Vec<T> {
    let (pw, ph) = (w + 2, h + 2);
    let n = w * h;
    let mut out = vec![T::zero(); conv.out_ch * n];
    for o in 0..conv.out_ch {
        let dst = &mut out[o * n..(o + 1) * n];
        dst.fill(conv.bias[o]);
        for i in 0..conv.in_ch {
            let src = &padded[i * pw * ph..(i + 1) * pw * ph];
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = conv.w(o, i, ky, kx);
                    for y in 0..h {
                        let s = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        let d = &mut dst[y * w..(y + 1) * w];
                        for x in 0..w {
                            d[x] = d[x] + k * s[x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of one convolution given the output gradient. Returns the
/// parameter gradients and, if requested, the gradient w.r.t. the padded
/// input.
fn conv_backward<T: Real>(
    conv: &Conv3x3<T>,
    padded: &[T],
    d_out: &[T],
    w: usize,
    h: usize,
    want_input: bool,
) -> (Conv3x3<T>, Option<Vec<T>>) {
    let (pw, ph) = (w + 2, h + 2);
    let n = w * h;
    let mut grad = Conv3x3::zeros(conv.in_ch, conv.out_ch);
    let mut d_in = want_input.then(|| vec![T::zero(); conv.in_ch * pw * ph]);
    for o in 0..conv.out_ch {
        let g = &d_out[o * n..(o + 1) * n];
        grad.bias[o] = T::lit(g.iter().map(|v| v.as_f64()).sum());
        for i in 0..conv.in_ch {
            let src = &padded[i * pw * ph..(i + 1) * pw * ph];
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = 0.0f64;
                    for y in 0..h {
                        let s = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        let gr = &g[y * w..(y + 1) * w];
                        let mut row = T::zero();
                        for x in 0..w {
                            row = row + s[x] * gr[x];
                        }
                        acc += row.as_f64();
                    }
                    grad.weight[((o * conv.in_ch + i) * 3 + ky) * 3 + kx] = T::lit(acc);
                    if let Some(d) = d_in.as_mut() {
                        let k = conv.w(o, i, ky, kx);
                        let dp = &mut d[i * pw * ph..(i + 1) * pw * ph];
                        for y in 0..h {
                            let row = &mut dp[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                            let gr = &g[y * w..(y + 1) * w];
                            for x in 0..w {
                                row[x] = row[x] + k * gr[x];
                            }
                        }
                    }
                }
            }
        }
    }
    (grad, d_in)
}

pub(crate) fn forward<T: Real>(head: &WeightHead<T>, features: &[T], w: usize, h: usize) -> Activations<T> {
    let padded_input = pad_reflect(features, HEAD_INPUTS, w, h);
    let hidden_pre = conv_forward(&head.conv1, &padded_input, w, h);
    let hidden: Vec<T> = hidden_pre.iter().map(|&v| v.max(T::zero())).collect();
    let padded_hidden = pad_reflect(&hidden, HEAD_HIDDEN, w, h);
    let logits = conv_forward(&head.conv2, &padded_hidden, w, h);
    Activations {
        padded_input,
        hidden_pre,
        padded_hidden,
        logits,
    }
}

/// Parameter gradients given the gradient of the loss w.r.t. the logits.
pub(crate) fn backward<T: Real>(
    head: &WeightHead<T>,
    acts: &Activations<T>,
    d_logits: &[T],
    w: usize,
    h: usize,
) -> WeightHead<T> {
    let (conv2, d_hidden_padded) = conv_backward(&head.conv2, &acts.padded_hidden, d_logits, w, h, true);
    let mut d_hidden = unpad_reflect_grad(&d_hidden_padded.expect("requested"), HEAD_HIDDEN, w, h);
    for (d, &z) in d_hidden.iter_mut().zip(&acts.hidden_pre) {
        if z <= T::zero() {
            *d = T::zero();
        }
    }
    let (conv1, _) = conv_backward(&head.conv1, &acts.padded_input, &d_hidden, w, h, false);
    WeightHead { conv1, conv2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blend::spatial_softmax;

    fn random_inputs(seed: u64, w: usize, h: usize) -> (Image, DepthMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::from_fn(w, h, 3, |_, _, _| rng.random::<f32>());
        let depth = DepthMap::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
        (img, depth)
    }

    fn random_head(seed: u64, levels: usize) -> WeightHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = WeightHead::<f32>::zeros(levels);
        for t in head.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        head
    }

    /// Direct evaluation of both convolutions from the definition.
    fn naive_forward(img: &Image, depth: &DepthMap, head: &WeightHead) -> Vec<f64> {
        let (w, h) = (img.width(), img.height());
        let input = |c: usize, x: isize, y: isize| -> f64 {
            let (sx, sy) = (reflect(x, w), reflect(y, h));
            if c < 3 {
                img.get(c, sx, sy) as f64
            } else {
                depth.get(sx, sy) as f64
            }
        };
        let conv1 = &head.conv1;
        let mut hidden = vec![0.0f64; HEAD_HIDDEN * w * h];
        for o in 0..HEAD_HIDDEN {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = conv1.bias[o] as f64;
                    for i in 0..HEAD_INPUTS {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += conv1.w(o, i, ky, kx) as f64
                                    * input(i, x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                            }
                        }
                    }
                    hidden[(o * h + y) * w + x] = acc.max(0.0);
                }
            }
        }
        let conv2 = &head.conv2;
        let mut out = vec![0.0f64; conv2.out_ch * w * h];
        for o in 0..conv2.out_ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = conv2.bias[o] as f64;
                    for i in 0..HEAD_HIDDEN {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sx = reflect(x as isize + kx as isize - 1, w);
                                let sy = reflect(y as isize + ky as isize - 1, h);
                                acc += conv2.w(o, i, ky, kx) as f64 * hidden[(i * h + sy) * w + sx];
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        for seed in 0..5 {
            let (img, depth) = random_inputs(seed, 8, 8);
            let head = random_head(100 + seed, 4);
            let fast = head_forward(&img, &depth, &head).unwrap();
            let slow = naive_forward(&img, &depth, &head);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((*a as f64 - b).abs() <= 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_last_layer_gives_uniform_weights() {
        let (img, depth) = random_inputs(1, 7, 5);
        let mut head = random_head(2, 4);
        head.conv2 = Conv3x3::zeros(HEAD_HIDDEN, 4);
        let logits = head_forward(&img, &depth, &head).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let w = spatial_softmax(&logits).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn output_shape_follows_input() {
        let (img, depth) = random_inputs(3, 11, 6);
        for levels in [2, 4, 6] {
            let head = head_init(0, levels).unwrap();
            let l = head_forward(&img, &depth, &head).unwrap();
            assert_eq!((l.width(), l.height(), l.levels()), (11, 6, levels));
        }
    }

    #[test]
    fn init_is_seeded_and_near_uniform() {
        assert_eq!(head_init(7, 4).unwrap(), head_init(7, 4).unwrap());
        assert_ne!(head_init(7, 4).unwrap(), head_init(8, 4).unwrap());
        assert!(head_init(7, 1).is_err());
        let head = head_init(7, 4).unwrap();
        assert!(head.conv1.bias.iter().chain(&head.conv2.bias).all(|&b| b == 0.0));
        for seed in 0..4 {
            let (img, depth) = random_inputs(seed, 16, 16);
            let w = spatial_softmax(&head_forward(&img, &depth, &head).unwrap()).unwrap();
            assert!(w.data().iter().all(|&v| v <= 0.5));
        }
    }

    #[test]
    fn shape_errors() {
        let (img, depth) = random_inputs(0, 6, 6);
        let head = head_init(0, 4).unwrap();
        let gray = Image::filled(6, 6, 1, 0.5);
        assert!(head_forward(&gray, &depth, &head).is_err());
        let other = DepthMap::constant(5, 6, 0.5);
        assert!(head_forward(&img, &other, &head).is_err());
        let mut broken = head.clone();
        broken.conv2.bias.pop();
        assert!(head_forward(&img, &depth, &broken).is_err());
    }

    #[test]
    fn interior_is_translation_equivariant() {
        let (img, depth) = random_inputs(5, 12, 10);
        let head = random_head(6, 3);
        // shift content right by one pixel
        let shifted_img = Image::from_fn(12, 10, 3, |c, x, y| img.get(c, x.saturating_sub(1), y));
        let shifted_depth = DepthMap::new(
            12,
            10,
            (0..120usize)
                .map(|p| depth.get((p % 12).saturating_sub(1), p / 12))
                .collect(),
        )
        .unwrap();
        let a = head_forward(&img, &depth, &head).unwrap();
        let b = head_forward(&shifted_img, &shifted_depth, &head).unwrap();
        // two 3x3 layers: a 2-pixel margin is unaffected by the borders
        for l in 0..3 {
            for y in 2..8 {
                for x in 2..9 {
                    assert_eq!(a.get(l, x, y), b.get(l, x + 1, y));
                }
            }
        }
    }

    #[test]
    fn unpad_is_adjoint_of_pad() {
        // <pad(u), v> == <u, unpad(v)>
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h, c) = (5, 4, 2);
        let u: Vec<f64> = (0..c * w * h).map(|_| rng.random()).collect();
        let v: Vec<f64> = (0..c * (w + 2) * (h + 2)).map(|_| rng.random()).collect();
        let lhs: f64 = pad_reflect(&u, c, w, h).iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&unpad_reflect_grad(&v, c, w, h)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
