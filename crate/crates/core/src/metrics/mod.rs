//! Image quality metrics. Inputs are `[3, H, W]` tensors with values in `[0, 1]`.

mod evaluate;
mod report;
mod uciqe;
mod uiqm;

use ursct_tensor::{Element, Graph, Tensor};

use crate::error::{Error, Result};
use crate::losses::{gaussian_window, ms_ssim_loss, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

pub use evaluate::{evaluate_dataset, evaluate_with, EvalMode};
pub use report::{MetricReport, MetricRow};
pub use uciqe::{uciqe, uciqe_parts, UciqeParts};
pub use uiqm::{uiqm, uiqm_parts, UiqmParts};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Planar `[3, H, W]` image in f64.
pub(crate) struct Rgb {
    pub h: usize,
    pub w: usize,
    pub planes: [Vec<f64>; 3],
}

impl Rgb {
    pub(crate) fn from_tensor<F: Element>(t: &Tensor<F>) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [3, h, w] => (h, w),
            ref s => return Err(Error::config(format!("expected a [3, H, W] image, got {s:?}"))),
        };
        let d = t.data();
        let plane = |c: usize| d[c * h * w..(c + 1) * h * w].iter().map(|v| v.as_f64()).collect();
        Ok(Self {
            h,
            w,
            planes: [plane(0), plane(1), plane(2)],
        })
    }

    pub(crate) fn luminance(&self) -> Vec<f64> {
        let [r, g, b] = &self.planes;
        (0..self.h * self.w)
            .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
            .collect()
    }
}

fn check_pair<F: Element>(a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "image shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `10 log10(max_val^2 / MSE)`, or [`PSNR_CAP`] when the images are identical.
pub fn psnr<F: Element>(pred: &Tensor<F>, target: &Tensor<F>, max_val: f64) -> Result<f64> {
    check_pair(pred, target)?;
    let n = pred.numel() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP))
}

/// Separable filtering with no padding.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = taps.iter().enumerate().map(|(i, t)| t * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = taps.iter().enumerate().map(|(i, t)| t * rows[(y0 + i) * ow + x0]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM of two single-channel planes with the 11-tap Gaussian window.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let blur = |v: Vec<f64>| filter_valid(&v, h, w, &taps).0;
    let ma = blur(a.to_vec());
    let mb = blur(b.to_vec());
    let eaa = blur(a.iter().map(|v| v * v).collect());
    let ebb = blur(b.iter().map(|v| v * v).collect());
    let eab = blur(a.iter().zip(b).map(|(x, y)| x * y).collect());
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let total: f64 = (0..ma.len())
        .map(|i| {
            let (mx, my) = (ma[i], mb[i]);
            let sxx = eaa[i] - mx * mx;
            let syy = ebb[i] - my * my;
            let sxy = eab[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        })
        .sum();
    Ok(total / ma.len() as f64)
}

/// SSIM on BT.601 luminance.
pub fn ssim<F: Element>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
    check_pair(pred, target)?;
    let (a, b) = (Rgb::from_tensor(pred)?, Rgb::from_tensor(target)?);
    ssim_plane(&a.luminance(), &b.luminance(), a.h, a.w)
}

/// Multi-scale SSIM over RGB channels; exactly `1 - ms_ssim_loss`.
pub fn ms_ssim<F: Element>(pred: &Tensor<F>, target: &Tensor<F>, scales: usize) -> Result<f64> {
    check_pair(pred, target)?;
    let mut shape = vec![1];
    shape.extend_from_slice(pred.shape());
    let mut g = Graph::<f64>::new();
    let x = g.constant(pred.cast::<f64>().reshape(shape.clone())?);
    let y = g.constant(target.cast::<f64>().reshape(shape)?);
    let loss = ms_ssim_loss(&mut g, x, y, scales)?;
    Ok(1.0 - g.value(loss).item()?)
}
