//! Underwater colour image quality evaluation in CIELab space.

use ursct_tensor::{Element, Tensor};

use super::Rgb;
use crate::error::Result;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UciqeParts {
    pub chroma_std: f64,
    pub luminance_contrast: f64,
    pub saturation_mean: f64,
    pub uciqe: f64,
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    let d: f64 = 6.0 / 29.0;
    if t > d * d * d {
        t.cbrt()
    } else {
        t / (3.0 * d * d) + 4.0 / 29.0
    }
}

/// `(L, a, b)` divided by 100, against the white point of the conversion matrix.
pub(crate) fn to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    let lin = [srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b)];
    let mut f = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        let white: f64 = row.iter().sum();
        let v: f64 = row.iter().zip(&lin).map(|(m, c)| m * c).sum();
        f[i] = lab_f(v / white);
    }
    [(116.0 * f[1] - 16.0) / 100.0, 5.0 * (f[0] - f[1]), 2.0 * (f[1] - f[2])]
}

pub fn uciqe_parts<F: Element>(image: &Tensor<F>) -> Result<UciqeParts> {
    let img = Rgb::from_tensor(image)?;
    let [r, g, b] = &img.planes;
    let n = r.len();
    let mut lum = Vec::with_capacity(n);
    let mut chroma = Vec::with_capacity(n);
    let mut sat_total = 0.0;
    for i in 0..n {
        let [l, a, bb] = to_lab(r[i], g[i], b[i]);
        let c = a.hypot(bb);
        lum.push(l);
        chroma.push(c);
        if l > 0.0 {
            sat_total += c / l;
        }
    }
    let mean = chroma.iter().sum::<f64>() / n as f64;
    let chroma_std = (chroma.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    lum.sort_by(f64::total_cmp);
    let pick = |q: f64| lum[((q * n as f64) as usize).min(n - 1)];
    let luminance_contrast = pick(0.99) - pick(0.01);
    let saturation_mean = sat_total / n as f64;
    Ok(UciqeParts {
        chroma_std,
        luminance_contrast,
        saturation_mean,
        uciqe: 0.4680 * chroma_std + 0.2745 * luminance_contrast + 0.2576 * saturation_mean,
    })
}

pub fn uciqe<F: Element>(image: &Tensor<F>) -> Result<f64> {
    Ok(uciqe_parts(image)?.uciqe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black_anchor_lightness() {
        let w = to_lab(1.0, 1.0, 1.0);
        assert!((w[0] - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12 && w[2].abs() < 1e-12);
        assert_eq!(to_lab(0.0, 0.0, 0.0)[0], 0.0);
    }

    #[test]
    fn gray_scores_zero() {
        for v in [0.0f32, 0.3, 0.8] {
            let t = Tensor::<f32>::full([3, 10, 12], v);
            assert!(uciqe(&t).unwrap().abs() <= 1e-9);
        }
    }
}
