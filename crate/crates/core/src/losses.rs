//! Training objective: Charbonnier, gradient-map L1 and MS-SSIM terms.

use ursct_tensor::{Conv2dConfig, Element, Graph, Tensor, Var};

use crate::config::{GradientOperator, LossConfig};
use crate::error::{Error, Result};

/// Per-scale exponents of the five-level pyramid, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<F: Element>(g: &Graph<F>, a: Var, b: Var, op: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::config(format!(
            "{op}: prediction {:?} and target {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

fn nchw<F: Element>(g: &Graph<F>, x: Var, op: &str) -> Result<[usize; 4]> {
    g.shape(x)
        .try_into()
        .map_err(|_| Error::config(format!("{op}: expected [B, C, H, W], got {:?}", g.shape(x))))
}

/// `mean(sqrt((pred - target)^2 + eps^2))`.
pub fn charbonnier<F: Element>(g: &mut Graph<F>, pred: Var, target: Var, eps: f64) -> Result<Var> {
    same_shape(g, pred, target, "charbonnier")?;
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    let sq = g.add_scalar(sq, eps * eps)?;
    let r = g.sqrt(sq)?;
    Ok(g.mean_all(r)?)
}

fn sobel_kernels<F: Element>(channels: usize) -> Result<(Tensor<F>, Tensor<F>)> {
    let kx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let ky = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let tile = |k: &[f64]| Tensor::from_f64_slice([channels, 1, 3, 3], &k.repeat(channels));
    Ok((tile(&kx)?, tile(&ky)?))
}

/// Horizontal and vertical gradient maps of `[B, C, H, W]`.
///
/// Forward differences keep the input shape; Sobel covers interior pixels only.
pub fn gradient_map<F: Element>(g: &mut Graph<F>, img: Var, op: GradientOperator) -> Result<(Var, Var)> {
    let [_, c, _, _] = nchw(g, img, "gradient_map")?;
    match op {
        GradientOperator::ForwardDifference => Ok((g.forward_diff(img, 3)?, g.forward_diff(img, 2)?)),
        GradientOperator::Sobel => {
            let (kx, ky) = sobel_kernels::<F>(c)?;
            let cfg = Conv2dConfig {
                groups: c,
                ..Default::default()
            };
            let (kx, ky) = (g.constant(kx), g.constant(ky));
            Ok((g.conv2d(img, kx, None, cfg)?, g.conv2d(img, ky, None, cfg)?))
        }
    }
}

/// Mean absolute difference of the gradient maps, averaged over both directions.
pub fn gradient_loss<F: Element>(g: &mut Graph<F>, pred: Var, target: Var, op: GradientOperator) -> Result<Var> {
    same_shape(g, pred, target, "gradient_loss")?;
    let (px, py) = gradient_map(g, pred, op)?;
    let (tx, ty) = gradient_map(g, target, op)?;
    let dx = g.sub(px, tx)?;
    let dx = g.abs(dx)?;
    let dx = g.mean_all(dx)?;
    let dy = g.sub(py, ty)?;
    let dy = g.abs(dy)?;
    let dy = g.mean_all(dy)?;
    let s = g.add(dx, dy)?;
    Ok(g.scale(s, 0.5)?)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Smallest image side that supports `scales` pyramid levels.
pub fn min_side_for_scales(scales: usize) -> usize {
    SSIM_WINDOW << scales.saturating_sub(1)
}

/// Largest level count up to five that an `h x w` image supports, if any.
pub fn max_scales(h: usize, w: usize) -> Option<usize> {
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| h.min(w) >= min_side_for_scales(s))
}

struct SsimFilters {
    row: Var,
    col: Var,
    pool: Var,
    groups: usize,
}

impl SsimFilters {
    fn new<F: Element>(g: &mut Graph<F>, channels: usize) -> Result<Self> {
        let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
        let row = Tensor::from_f64_slice([channels, 1, 1, SSIM_WINDOW], &taps.repeat(channels))?;
        let col = Tensor::from_f64_slice([channels, 1, SSIM_WINDOW, 1], &taps.repeat(channels))?;
        let pool = Tensor::from_f64_slice([channels, 1, 2, 2], &vec![0.25; 4 * channels])?;
        Ok(Self {
            row: g.constant(row),
            col: g.constant(col),
            pool: g.constant(pool),
            groups: channels,
        })
    }

    fn blur<F: Element>(&self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        let cfg = Conv2dConfig {
            groups: self.groups,
            ..Default::default()
        };
        let x = g.conv2d(x, self.row, None, cfg)?;
        Ok(g.conv2d(x, self.col, None, cfg)?)
    }

    fn pool<F: Element>(&self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        let cfg = Conv2dConfig {
            stride: 2,
            groups: self.groups,
            ..Default::default()
        };
        Ok(g.conv2d(x, self.pool, None, cfg)?)
    }
}

/// Mean SSIM and contrast-structure terms per `[B, C]` at one scale.
fn ssim_terms<F: Element>(g: &mut Graph<F>, f: &SsimFilters, x: Var, y: Var) -> Result<(Var, Var)> {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mx = f.blur(g, x)?;
    let my = f.blur(g, y)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let exx = f.blur(g, xx)?;
    let eyy = f.blur(g, yy)?;
    let exy = f.blur(g, xy)?;
    let mxx = g.mul(mx, mx)?;
    let myy = g.mul(my, my)?;
    let mxy = g.mul(mx, my)?;
    let sxx = g.sub(exx, mxx)?;
    let syy = g.sub(eyy, myy)?;
    let sxy = g.sub(exy, mxy)?;

    let num = g.scale(sxy, 2.0)?;
    let num = g.add_scalar(num, c2)?;
    let den = g.add(sxx, syy)?;
    let den = g.add_scalar(den, c2)?;
    let cs = g.div(num, den)?;

    let lnum = g.scale(mxy, 2.0)?;
    let lnum = g.add_scalar(lnum, c1)?;
    let lden = g.add(mxx, myy)?;
    let lden = g.add_scalar(lden, c1)?;
    let lum = g.div(lnum, lden)?;
    let ssim = g.mul(lum, cs)?;

    Ok((g.mean(ssim, &[2, 3])?, g.mean(cs, &[2, 3])?))
}

/// `1 - MS-SSIM` over `scales` dyadic levels, each channel compared separately.
///
/// With fewer than five levels the leading weights are used, renormalized to sum to one.
pub fn ms_ssim_loss<F: Element>(g: &mut Graph<F>, pred: Var, target: Var, scales: usize) -> Result<Var> {
    same_shape(g, pred, target, "ms_ssim")?;
    let [_, c, h, w] = nchw(g, pred, "ms_ssim")?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::config(format!("ms_ssim: scales must be in 1..=5, got {scales}")));
    }
    if h.min(w) < min_side_for_scales(scales) {
        let hint = max_scales(h, w).map_or("no scale fits".to_string(), |s| format!("use at most {s}"));
        return Err(Error::config(format!(
            "ms_ssim: {h}x{w} is too small for {scales} scales (needs {} px); {hint}",
            min_side_for_scales(scales)
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let f = SsimFilters::new(g, c)?;
    let (mut x, mut y) = (pred, target);
    let mut product: Option<Var> = None;
    for (level, &wt) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(g, &f, x, y)?;
        let last = level + 1 == scales;
        let term = if last { ssim } else { cs };
        let term = g.relu(term)?;
        let term = g.powf(term, wt / total)?;
        product = Some(match product {
            Some(p) => g.mul(p, term)?,
            None => term,
        });
        if !last {
            x = f.pool(g, x)?;
            y = f.pool(g, y)?;
        }
    }
    let ms = g.mean_all(product.expect("at least one scale"))?;
    let neg = g.scale(ms, -1.0)?;
    Ok(g.add_scalar(neg, 1.0)?)
}

/// Every loss component of one evaluation, as graph handles.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub charbonnier: Var,
    pub gradient: Var,
    pub ms_ssim: Var,
    pub total: Var,
}

/// Scalar values of [`LossTerms`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub charbonnier: f64,
    pub gradient: f64,
    pub ms_ssim: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values<F: Element>(&self, g: &Graph<F>) -> Result<LossValues> {
        let v = |x: Var| -> Result<f64> { Ok(g.value(x).item()?.as_f64()) };
        Ok(LossValues {
            charbonnier: v(self.charbonnier)?,
            gradient: v(self.gradient)?,
            ms_ssim: v(self.ms_ssim)?,
            total: v(self.total)?,
        })
    }
}

/// `w1 * L_C + w2 * L_gd + w3 * L_M`; every term is computed, zero-weighted ones stay out of the sum.
pub fn total_loss<F: Element>(g: &mut Graph<F>, pred: Var, target: Var, cfg: &LossConfig) -> Result<LossTerms> {
    let w = &cfg.weights;
    let charbonnier = charbonnier(g, pred, target, w.epsilon)?;
    let gradient = gradient_loss(g, pred, target, cfg.gradient_operator)?;
    let ms_ssim = ms_ssim_loss(g, pred, target, cfg.ms_ssim_scales)?;
    let mut total: Option<Var> = None;
    for (term, weight) in [(charbonnier, w.w1), (gradient, w.w2), (ms_ssim, w.w3)] {
        if weight == 0.0 {
            continue;
        }
        let t = g.scale(term, weight)?;
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.scale(charbonnier, 0.0)?,
    };
    Ok(LossTerms {
        charbonnier,
        gradient,
        ms_ssim,
        total,
    })
}
