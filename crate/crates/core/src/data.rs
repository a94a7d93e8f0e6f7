//! Image files, paired dataset folders and batching.
//!
//! A dataset root holds `raw/` and optionally `reference/`; files pair up by
//! filename stem. Images become `[3, H, W]` tensors with values `byte / 255`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ursct_tensor::Tensor;

use crate::error::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = f32::from(px.0[c]) / 255.0;
        }
    }
    Ok(Tensor::new([3, h, w], data)?)
}

/// Writes a `[3, H, W]` tensor as an 8-bit PNG, clamping to `[0, 1]` and rounding half up.
pub fn save_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w) = match *t.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::data(format!("save_image: expected [3, H, W], got {s:?}"))),
    };
    let d = t.data();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = d[c * h * w + y as usize * w + x as usize].clamp(0.0, 1.0);
            (v * 255.0 + 0.5).floor() as u8
        };
        Rgb([at(0), at(1), at(2)])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

/// Bilinear resize of `[3, H, W]` using pixel centres (half-pixel offsets, edge clamped).
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::data(format!("resize: expected [C, H, W], got {s:?}"))),
    };
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let taps = |out: usize, n: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (taps(out_h, h), taps(out_w, w));
    let d = t.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |y: usize, x: usize| f64::from(plane[y * w + x]);
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    Ok(Tensor::new([c, out_h, out_w], out)?)
}

fn hflip(t: &Tensor<f32>) -> Tensor<f32> {
    let [c, h, w] = t.shape().try_into().expect("image is [C, H, W]");
    let d = t.data();
    let mut out = Vec::with_capacity(d.len());
    for row in 0..c * h {
        out.extend(d[row * w..(row + 1) * w].iter().rev());
    }
    Tensor::new([c, h, w], out).expect("same shape")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub id: String,
    pub raw: PathBuf,
    pub reference: Option<PathBuf>,
}

/// Stem-paired image files in lexicographic stem order, plus the target size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
    pub height: usize,
    pub width: usize,
}

/// PNG and JPEG files of `dir` keyed by stem; two files sharing a stem are an error.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut by_stem: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        by_stem.entry(stem).or_default().push(path);
    }
    let dupes: Vec<String> = by_stem
        .iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(k, _)| k.clone())
        .collect();
    if !dupes.is_empty() {
        return Err(Error::data(format!(
            "{}: duplicate image stems: {}",
            dir.display(),
            dupes.join(", ")
        )));
    }
    Ok(by_stem.into_iter().map(|(k, mut v)| (k, v.remove(0))).collect())
}

/// Pairs `raw_dir` with `ref_dir` by stem.
///
/// With `require_reference`, every raw image needs a reference; otherwise
/// unmatched raw images are kept without one.
pub fn scan_paired_dataset(
    raw_dir: &Path,
    ref_dir: Option<&Path>,
    size: (usize, usize),
    require_reference: bool,
) -> Result<DatasetIndex> {
    let raw = list_images(raw_dir)?;
    if raw.is_empty() {
        return Err(Error::data(format!("{}: no PNG or JPEG images", raw_dir.display())));
    }
    let refs = match ref_dir {
        Some(d) => list_images(d)?,
        None if require_reference => {
            return Err(Error::data(format!(
                "{}: full-reference evaluation needs a reference directory",
                raw_dir.display()
            )))
        }
        None => BTreeMap::new(),
    };
    let missing: Vec<&str> = raw
        .keys()
        .filter(|k| !refs.contains_key(*k))
        .map(String::as_str)
        .collect();
    if require_reference && !missing.is_empty() {
        return Err(Error::data(format!("no reference image for: {}", missing.join(", "))));
    }
    let entries = raw
        .into_iter()
        .map(|(id, path)| IndexEntry {
            reference: refs.get(&id).cloned(),
            id,
            raw: path,
        })
        .collect();
    Ok(DatasetIndex {
        entries,
        height: size.0,
        width: size.1,
    })
}

impl DatasetIndex {
    /// Scans `<root>/raw` and, when present, `<root>/reference`.
    pub fn open(root: &Path, size: (usize, usize), require_reference: bool) -> Result<Self> {
        let raw = root.join("raw");
        if !raw.is_dir() {
            return Err(Error::data(format!("{}: missing raw/ directory", root.display())));
        }
        let reference = root.join("reference");
        let reference = reference.is_dir().then_some(reference);
        scan_paired_dataset(&raw, reference.as_deref(), size, require_reference)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Decodes and resizes every entry.
    pub fn load(&self) -> Result<Vec<ImagePair>> {
        let fit = |p: &Path| resize_bilinear(&load_image(p)?, self.height, self.width);
        self.entries
            .iter()
            .map(|e| {
                Ok(ImagePair {
                    id: e.id.clone(),
                    raw: fit(&e.raw)?,
                    reference: e.reference.as_deref().map(fit).transpose()?,
                })
            })
            .collect()
    }
}

/// A raw image and, when available, its reference, both `[3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub raw: Tensor<f32>,
    pub reference: Option<Tensor<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B, 3, H, W]`
    pub raw: Tensor<f32>,
    pub reference: Option<Tensor<f32>>,
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Item indices per batch; shuffled deterministically from `(seed, epoch)` when asked.
pub fn batch_order(n: usize, batch_size: usize, shuffle: bool, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut epoch_rng(seed, epoch));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Stacks pairs into batches. The last batch may be smaller.
pub fn make_batches(
    pairs: &[ImagePair],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
    flip: bool,
) -> Result<Vec<Batch>> {
    let order = batch_order(pairs.len(), batch_size, shuffle, seed, epoch)?;
    let mut flip_rng = epoch_rng(seed.rotate_left(17), epoch);
    let mut batches = Vec::with_capacity(order.len());
    for idx in order {
        let mut raws = Vec::with_capacity(idx.len());
        let mut refs = Vec::with_capacity(idx.len());
        for &i in &idx {
            let p = &pairs[i];
            let flipped = flip && flip_rng.random::<bool>();
            let f = |t: &Tensor<f32>| if flipped { hflip(t) } else { t.clone() };
            raws.push(f(&p.raw));
            refs.push(p.reference.as_ref().map(f));
        }
        let reference = if refs.iter().all(Option::is_some) {
            Some(Tensor::stack(&refs.into_iter().flatten().collect::<Vec<_>>())?)
        } else {
            None
        };
        batches.push(Batch {
            ids: idx.iter().map(|&i| pairs[i].id.clone()).collect(),
            raw: Tensor::stack(&raws)?,
            reference,
        });
    }
    Ok(batches)
}
