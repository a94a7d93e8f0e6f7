#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use std::path::Path;

use ursct::data::ImagePair;
use ursct_tensor::Tensor;

/// `[3, h, w]` image from a per-pixel colour function.
pub fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Tensor<f32> {
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = f(y, x);
            for c in 0..3 {
                data[c * h * w + y * w + x] = px[c] as f32;
            }
        }
    }
    Tensor::new([3, h, w], data).unwrap()
}

/// Small deterministic hash in [0, 1).
pub fn hash01(a: usize, b: usize, c: usize) -> f64 {
    let mut z =
        (a as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (b as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f) ^ c as u64;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Five synthetic test images with distinct colour and texture statistics.
pub fn synthetic_images() -> Vec<(&'static str, Tensor<f32>)> {
    let (h, w) = (36, 44);
    let checker = [
        [0.45, 0.32, 0.26],
        [0.76, 0.58, 0.50],
        [0.36, 0.48, 0.61],
        [0.35, 0.42, 0.26],
        [0.51, 0.50, 0.69],
        [0.39, 0.74, 0.67],
        [0.85, 0.47, 0.18],
        [0.27, 0.36, 0.65],
    ];
    vec![
        (
            "color_checker",
            image(h, w, |y, x| checker[(y / 9) % 2 * 4 + (x / 11) % 4]),
        ),
        (
            "saturated_patches",
            image(h, w, |y, x| match (y / 12 + x / 11) % 4 {
                0 => [1.0, 0.0, 0.0],
                1 => [0.0, 0.9, 0.1],
                2 => [0.05, 0.1, 1.0],
                _ => [0.95, 0.95, 0.0],
            }),
        ),
        (
            "ramp",
            image(h, w, |y, x| {
                [
                    x as f64 / w as f64,
                    y as f64 / h as f64,
                    0.5 + 0.3 * ((x + y) as f64 * 0.2).sin(),
                ]
            }),
        ),
        (
            "noise",
            image(h, w, |y, x| [hash01(y, x, 0), hash01(y, x, 1), hash01(y, x, 2)]),
        ),
        (
            "underwater",
            image(h, w, |y, x| {
                let n = 0.1 * hash01(y, x, 7);
                [
                    0.05 + n + 0.1 * (x % 5 == 0) as u8 as f64,
                    0.35 + 0.3 * y as f64 / h as f64,
                    0.55 + n,
                ]
            }),
        ),
    ]
}

/// A named raw image with an optional reference.
pub type NamedPair<'a> = (&'a str, Tensor<f32>, Option<Tensor<f32>>);

/// Writes `raw/` and `reference/` PNGs for each named pair under `root`.
pub fn write_dataset(root: &Path, pairs: &[NamedPair<'_>]) {
    std::fs::create_dir_all(root.join("raw")).unwrap();
    std::fs::create_dir_all(root.join("reference")).unwrap();
    for (name, raw, reference) in pairs {
        ursct::data::save_image(raw, &root.join("raw").join(format!("{name}.png"))).unwrap();
        if let Some(r) = reference {
            ursct::data::save_image(r, &root.join("reference").join(format!("{name}.png"))).unwrap();
        }
    }
}

/// A murky input and a cleaner target with the same structure.
pub fn synthetic_pair(id: &str, h: usize, w: usize, seed: usize) -> ImagePair {
    let target = image(h, w, |y, x| {
        let t = ((x + seed) as f64 * 0.21).sin() * ((y + 2 * seed) as f64 * 0.17).cos();
        [0.5 + 0.35 * t, 0.45 - 0.25 * t, 0.3 + 0.2 * hash01(y / 4, x / 4, seed)]
    });
    let raw = target.map(|v| 0.25 + 0.5 * v);
    ImagePair {
        id: id.to_string(),
        raw,
        reference: Some(target),
    }
}
