//! Underwater image quality measure: colourfulness, sharpness and contrast.

use ursct_tensor::{Element, Tensor};

use super::Rgb;
use crate::error::Result;

const BLOCK: usize = 8;
const TRIM: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UiqmParts {
    pub uicm: f64,
    pub uism: f64,
    pub uiconm: f64,
    pub uiqm: f64,
}

/// Mean of the sorted values with `ceil(a*K)` dropped at the bottom and `floor(a*K)` at the top.
fn trimmed_mean(mut v: Vec<f64>, alpha: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let lo = (alpha * k as f64).ceil() as usize;
    let hi = k - (alpha * k as f64).floor() as usize;
    if lo >= hi {
        return 0.0;
    }
    v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
}

fn uicm(img: &Rgb) -> f64 {
    let [r, g, b] = &img.planes;
    let rg: Vec<f64> = r.iter().zip(g).map(|(r, g)| r - g).collect();
    let yb: Vec<f64> = (0..r.len()).map(|i| (r[i] + g[i]) / 2.0 - b[i]).collect();
    let spread = |v: &[f64], mu: f64| v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
    let mu_rg = trimmed_mean(rg.clone(), TRIM);
    let mu_yb = trimmed_mean(yb.clone(), TRIM);
    let var = spread(&rg, mu_rg) + spread(&yb, mu_yb);
    -0.0268 * (mu_rg * mu_rg + mu_yb * mu_yb).sqrt() + 0.1586 * var.sqrt()
}

/// Sobel gradient magnitude with edge-replicated borders, rescaled so its maximum is 255.
fn sobel_magnitude(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, c: isize| x[y.clamp(0, h as isize - 1) as usize * w + c.clamp(0, w as isize - 1) as usize];
    let mut mag = vec![0.0; h * w];
    for y in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(y - 1, c + 1) + 2.0 * at(y, c + 1) + at(y + 1, c + 1))
                - (at(y - 1, c - 1) + 2.0 * at(y, c - 1) + at(y + 1, c - 1));
            let gy = (at(y + 1, c - 1) + 2.0 * at(y + 1, c) + at(y + 1, c + 1))
                - (at(y - 1, c - 1) + 2.0 * at(y - 1, c) + at(y - 1, c + 1));
            mag[y as usize * w + c as usize] = gx.hypot(gy);
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for m in &mut mag {
            *m *= 255.0 / max;
        }
    }
    mag
}

/// Calls `f(min, max)` for every whole `BLOCK x BLOCK` tile across the given planes.
fn for_each_block(planes: &[&[f64]], h: usize, w: usize, mut f: impl FnMut(f64, f64)) -> usize {
    let (k1, k2) = (w / BLOCK, h / BLOCK);
    for by in 0..k2 {
        for bx in 0..k1 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in planes {
                for y in by * BLOCK..(by + 1) * BLOCK {
                    for &v in &p[y * w + bx * BLOCK..y * w + (bx + 1) * BLOCK] {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            f(lo, hi);
        }
    }
    k1 * k2
}

fn eme(x: &[f64], h: usize, w: usize) -> f64 {
    let mut total = 0.0;
    let blocks = for_each_block(&[x], h, w, |lo, hi| {
        if lo > 0.0 && hi > 0.0 {
            total += (hi / lo).ln();
        }
    });
    if blocks == 0 {
        return 0.0;
    }
    2.0 / blocks as f64 * total
}

fn uism(img: &Rgb) -> f64 {
    let weights = [0.299, 0.587, 0.114];
    img.planes
        .iter()
        .zip(weights)
        .map(|(p, wt)| {
            let edges: Vec<f64> = sobel_magnitude(p, img.h, img.w)
                .iter()
                .zip(p)
                .map(|(m, v)| m * v)
                .collect();
            wt * eme(&edges, img.h, img.w)
        })
        .sum()
}

fn uiconm(img: &Rgb) -> f64 {
    let [r, g, b] = &img.planes;
    let mut total = 0.0;
    let blocks = for_each_block(&[r, g, b], img.h, img.w, |lo, hi| {
        let (top, bot) = (hi - lo, hi + lo);
        if top > 0.0 && bot > 0.0 {
            let ratio = top / bot;
            total += ratio * ratio.ln();
        }
    });
    if blocks == 0 {
        return 0.0;
    }
    -total / blocks as f64
}

pub fn uiqm_parts<F: Element>(image: &Tensor<F>) -> Result<UiqmParts> {
    let mut img = Rgb::from_tensor(image)?;
    for p in &mut img.planes {
        for v in p.iter_mut() {
            *v *= 255.0;
        }
    }
    let (c, s, k) = (uicm(&img), uism(&img), uiconm(&img));
    Ok(UiqmParts {
        uicm: c,
        uism: s,
        uiconm: k,
        uiqm: 0.0282 * c + 0.2953 * s + 3.5753 * k,
    })
}

pub fn uiqm<F: Element>(image: &Tensor<F>) -> Result<f64> {
    Ok(uiqm_parts(image)?.uiqm)
}
