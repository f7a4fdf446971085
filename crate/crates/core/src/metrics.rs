//! PSNR and single-scale SSIM.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5), `C1 = 0.01^2`,
//! `C2 = 0.03^2` for unit dynamic range, averages the SSIM map over window
//! positions fully inside the image, and then averages over channels. All
//! statistics are computed in f64. The same routine also yields the
//! gradient of the mean SSIM w.r.t. the first image, which the training
//! loss uses directly.

use std::fmt::Write as _;

use crate::error::{BokehError, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(pred: &Image, target: &Image) -> Result<f64> {
    pred.ensure_same_shape(target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.data().len() as f64)
}

/// `10 log10(1 / MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Image, target: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn ssim(pred: &Image, target: &Image) -> Result<f64> {
    check_ssim_inputs(pred, target)?;
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let t: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    Ok(ssim_planes(&p, &t, pred.width(), pred.height(), pred.channels(), false).0)
}

pub(crate) fn check_ssim_inputs(pred: &Image, target: &Image) -> Result<()> {
    pred.ensure_same_shape(target)?;
    if pred.width() < SSIM_WINDOW || pred.height() < SSIM_WINDOW {
        return Err(BokehError::ImageTooSmall {
            width: pred.width(),
            height: pred.height(),
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

fn window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Windowed means over all fully-contained window positions.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (vw, vh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; vw * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..vw {
            tmp[y * vw + x] = g.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for (j, &gj) in g.iter().enumerate() {
            let src_row = &tmp[(y + j) * vw..(y + j + 1) * vw];
            let dst = &mut out[y * vw..(y + 1) * vw];
            for x in 0..vw {
                dst[x] += gj * src_row[x];
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters each position's value back over
/// its window.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (vw, vh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; vw * h];
    for y in 0..vh {
        let src = &map[y * vw..(y + 1) * vw];
        for (j, &gj) in g.iter().enumerate() {
            let dst = &mut tmp[(y + j) * vw..(y + j + 1) * vw];
            for x in 0..vw {
                dst[x] += gj * src[x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let src = &tmp[y * vw..(y + 1) * vw];
        let dst = &mut out[y * w..(y + 1) * w];
        for x in 0..vw {
            for (i, &gi) in g.iter().enumerate() {
                dst[x + i] += gi * src[x];
            }
        }
    }
    out
}

/// Mean SSIM of planar `pred` against `target` and, optionally, its
/// gradient w.r.t. `pred`.
pub(crate) fn ssim_planes(
    pred: &[f64],
    target: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let g = window();
    let n = w * h;
    let positions = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW)) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; channels * n]);
    for c in 0..channels {
        let x = &pred[c * n..(c + 1) * n];
        let y = &target[c * n..(c + 1) * n];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let mu_x = filter_valid(x, w, h, &g);
        let mu_y = filter_valid(y, w, h, &g);
        let e_xx = filter_valid(&xx, w, h, &g);
        let e_yy = filter_valid(&yy, w, h, &g);
        let e_xy = filter_valid(&xy, w, h, &g);

        let m = mu_x.len();
        let mut d_mu = vec![0.0; if want_grad { m } else { 0 }];
        let mut d_exx = d_mu.clone();
        let mut d_exy = d_mu.clone();
        let mut sum = 0.0;
        for p in 0..m {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * (e_xy[p] - mx * my) + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = (e_xx[p] - mx * mx) + (e_yy[p] - my * my) + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            sum += s;
            if want_grad {
                let d = b1 * b2;
                d_mu[p] = 2.0 * my * (a2 - a1) / d - 2.0 * mx * s * (1.0 / b1 - 1.0 / b2);
                d_exx[p] = -s / b2;
                d_exy[p] = 2.0 * a1 / d;
            }
        }
        total += sum / positions;
        if let Some(gr) = grad.as_mut() {
            let scale = 1.0 / (positions * channels as f64);
            let t_mu = filter_valid_adjoint(&d_mu, w, h, &g);
            let t_xx = filter_valid_adjoint(&d_exx, w, h, &g);
            let t_xy = filter_valid_adjoint(&d_exy, w, h, &g);
            let dst = &mut gr[c * n..(c + 1) * n];
            for i in 0..n {
                dst[i] = scale * (t_mu[i] + 2.0 * x[i] * t_xx[i] + y[i] * t_xy[i]);
            }
        }
    }
    (total / channels as f64, grad)
}

/// Per-image scores plus dataset means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricEntry {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn evaluate(name: impl Into<String>, pred: &Image, target: &Image) -> Result<MetricEntry> {
        Ok(MetricEntry {
            name: name.into(),
            psnr: psnr(pred, target)?,
            ssim: ssim(pred, target)?,
        })
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.ssim))
    }

    /// `path,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,psnr,ssim\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{:.6},{:.6}", e.name, e.psnr, e.ssim);
        }
        let _ = writeln!(out, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim());
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
