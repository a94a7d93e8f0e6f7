//! Patch embedding, resampling, skip fusion and the output projection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ursct_tensor::{Conv2dConfig, Element, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamSpec};

fn dims4(g: &Graph<impl Element>, z: Var, op: &str) -> Result<[usize; 4]> {
    g.shape(z)
        .try_into()
        .map_err(|_| Error::config(format!("{op}: expected a rank-4 tensor, got {:?}", g.shape(z))))
}

pub(crate) fn linear_specs(prefix: &str, cin: usize, cout: usize, bias: bool) -> Vec<ParamSpec> {
    let mut v = vec![ParamSpec::new(
        format!("{prefix}.weight"),
        [cin, cout],
        Init::TruncNormal(0.02),
    )];
    if bias {
        v.push(ParamSpec::new(format!("{prefix}.bias"), [cout], Init::Zeros));
    }
    v
}

pub(crate) fn norm_specs(prefix: &str, c: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.weight"), [c], Init::Ones),
        ParamSpec::new(format!("{prefix}.bias"), [c], Init::Zeros),
    ]
}

pub(crate) fn linear<F: Element>(g: &mut Graph<F>, p: &Bound, prefix: &str, x: Var, bias: bool) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = if bias {
        Some(p.get(&format!("{prefix}.bias"))?)
    } else {
        None
    };
    Ok(g.linear(x, w, b)?)
}

pub(crate) fn layer_norm<F: Element>(g: &mut Graph<F>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gamma = p.get(&format!("{prefix}.weight"))?;
    let beta = p.get(&format!("{prefix}.bias"))?;
    Ok(g.layer_norm(x, gamma, beta, 1e-5)?)
}

pub fn patch_embed_specs(patch: usize, c: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new("patch_embed.weight", [c, 3, patch, patch], Init::TruncNormal(0.02)),
        ParamSpec::new("patch_embed.bias", [c], Init::Zeros),
    ]
}

/// `[B, 3, H, W]` image to `[B, H/P, W/P, C]` tokens via a stride-P convolution.
pub fn patch_embed<F: Element>(g: &mut Graph<F>, p: &Bound, image: Var, patch: usize) -> Result<Var> {
    let [_, ch, h, w] = dims4(g, image, "patch_embed")?;
    if ch != 3 || patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::config(format!(
            "patch_embed: need 3 channels and sides divisible by {patch}, got {:?}",
            g.shape(image)
        )));
    }
    let cfg = Conv2dConfig {
        stride: patch,
        ..Default::default()
    };
    let x = g.conv2d(
        image,
        p.get("patch_embed.weight")?,
        Some(p.get("patch_embed.bias")?),
        cfg,
    )?;
    Ok(g.permute(x, &[0, 2, 3, 1])?)
}

pub fn downsample_specs(prefix: &str, c: usize) -> Vec<ParamSpec> {
    let mut v = norm_specs(&format!("{prefix}.norm"), 4 * c);
    v.extend(linear_specs(&format!("{prefix}.reduction"), 4 * c, 2 * c, false));
    v
}

/// Patch merging: each 2x2 neighbourhood (top-left first) concatenated to 4c, normalized, then 4c -> 2c.
pub fn downsample<F: Element>(g: &mut Graph<F>, p: &Bound, prefix: &str, z: Var) -> Result<Var> {
    let [b, h, w, c] = dims4(g, z, "downsample")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::config(format!("downsample: odd spatial size {h}x{w}")));
    }
    let x = g.reshape(z, [b, h / 2, 2, w / 2, 2, c])?;
    let x = g.permute(x, &[0, 1, 3, 2, 4, 5])?;
    let x = g.reshape(x, [b, h / 2, w / 2, 4 * c])?;
    let x = layer_norm(g, p, &format!("{prefix}.norm"), x)?;
    linear(g, p, &format!("{prefix}.reduction"), x, false)
}

pub fn upsample_specs(prefix: &str, c: usize, last: bool) -> Vec<ParamSpec> {
    let (out, co) = if last { (4 * c, c) } else { (2 * c, c / 2) };
    let mut v = linear_specs(&format!("{prefix}.expand"), c, out, false);
    v.extend(norm_specs(&format!("{prefix}.norm"), co));
    v
}

/// Linear expansion, a 2x2 pixel rearrangement, then layer norm.
///
/// Regular stages map `[B, h, w, c]` to `[B, 2h, 2w, c/2]`; the last keeps `c` channels.
pub fn upsample<F: Element>(g: &mut Graph<F>, p: &Bound, prefix: &str, z: Var, last: bool) -> Result<Var> {
    let [b, h, w, c] = dims4(g, z, "upsample")?;
    if !last && c % 2 != 0 {
        return Err(Error::config(format!("upsample: odd channel count {c}")));
    }
    let x = linear(g, p, &format!("{prefix}.expand"), z, false)?;
    let co = if last { c } else { c / 2 };
    let x = g.reshape(x, [b, h, w, 2, 2, co])?;
    let x = g.permute(x, &[0, 1, 3, 2, 4, 5])?;
    let x = g.reshape(x, [b, 2 * h, 2 * w, co])?;
    layer_norm(g, p, &format!("{prefix}.norm"), x)
}

pub fn skip_fuse_specs(prefix: &str, c: usize) -> Vec<ParamSpec> {
    linear_specs(prefix, 2 * c, c, true)
}

/// Dropout on the encoder features, channel concat `[dec, enc]`, then 2c -> c.
///
/// Dropout only runs when `rng` is given.
pub fn skip_fuse<F: Element>(
    g: &mut Graph<F>,
    p: &Bound,
    prefix: &str,
    dec: Var,
    enc: Var,
    drop_ratio: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    if g.shape(dec) != g.shape(enc) {
        return Err(Error::config(format!(
            "skip_fuse: decoder {:?} and encoder {:?} differ",
            g.shape(dec),
            g.shape(enc)
        )));
    }
    let enc = match rng {
        Some(rng) if drop_ratio > 0.0 => {
            let shape = g.shape(enc).to_vec();
            let n: usize = shape.iter().product();
            let data = if drop_ratio >= 1.0 {
                vec![F::zero(); n]
            } else {
                let keep = F::from_f64(1.0 / (1.0 - drop_ratio));
                (0..n)
                    .map(|_| {
                        if rng.random::<f64>() < drop_ratio {
                            F::zero()
                        } else {
                            keep
                        }
                    })
                    .collect()
            };
            let mask = g.constant(Tensor::new(shape, data)?);
            g.mul(enc, mask)?
        }
        _ => enc,
    };
    let x = g.concat(&[dec, enc], 3)?;
    linear(g, p, prefix, x, true)
}

pub fn to_rgb_specs(c: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new("to_rgb.weight", [3, c, 3, 3], Init::TruncNormal(0.02)),
        ParamSpec::new("to_rgb.bias", [3], Init::Zeros),
    ]
}

/// `[B, H, W, C]` features to a `[B, 3, H, W]` image with a 3x3 convolution.
pub fn to_rgb<F: Element>(g: &mut Graph<F>, p: &Bound, z: Var) -> Result<Var> {
    let x = g.permute(z, &[0, 3, 1, 2])?;
    let cfg = Conv2dConfig {
        padding: 1,
        ..Default::default()
    };
    Ok(g.conv2d(x, p.get("to_rgb.weight")?, Some(p.get("to_rgb.bias")?), cfg)?)
}
