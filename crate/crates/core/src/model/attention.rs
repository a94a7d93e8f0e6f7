//! Windowed multi-head self-attention with the three QKV generators.

use ursct_tensor::{Conv2dConfig, Element, Graph, Var};

use crate::config::{AttnScale, Variant};
use crate::error::{Error, Result};
use crate::model::window::relative_position_bias;
use crate::params::{Bound, Init, ParamSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
}

impl AttentionDims {
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    fn tokens(&self) -> usize {
        self.window * self.window
    }
}

pub fn attention_specs(prefix: &str, d: &AttentionDims, variant: Variant) -> Vec<ParamSpec> {
    let c = d.channels;
    let span = 2 * d.window - 1;
    let w = Init::TruncNormal(0.02);
    let n = |leaf: &str| format!("{prefix}.{leaf}");
    let mut specs = vec![
        ParamSpec::new(n("relative_position_bias_table"), [span * span, d.heads], w),
        ParamSpec::new(n("proj.weight"), [c, c], w),
        ParamSpec::new(n("proj.bias"), [c], Init::Zeros),
    ];
    match variant {
        Variant::Origin => specs.extend([
            ParamSpec::new(n("qkv.weight"), [c, 3 * c], w),
            ParamSpec::new(n("qkv.bias"), [3 * c], Init::Zeros),
        ]),
        Variant::ConvType1 => specs.extend([
            ParamSpec::new(n("qkv_channel.weight"), [3 * c, c, 1, 1], w),
            ParamSpec::new(n("qkv_channel.bias"), [3 * c], Init::Zeros),
            ParamSpec::new(n("qkv_spatial.weight"), [3 * c, 1, 3, 3], w),
            ParamSpec::new(n("qkv_spatial.bias"), [3 * c], Init::Zeros),
        ]),
        Variant::ConvType2 => specs.extend([
            ParamSpec::new(n("qkv.weight"), [c, 3 * c], w),
            ParamSpec::new(n("qkv.bias"), [3 * c], Init::Zeros),
            ParamSpec::new(n("local.weight"), [c, 1, 3, 3], w),
            ParamSpec::new(n("local.bias"), [c], Init::Zeros),
        ]),
    }
    specs
}

/// `[Nw, T*T, C]` window tokens as an NCHW image `[Nw, C, T, T]`.
fn tokens_to_spatial<F: Element>(g: &mut Graph<F>, x: Var, t: usize) -> Result<Var> {
    let [nw, _, c] = g
        .shape(x)
        .try_into()
        .map_err(|_| Error::config("expected window tokens"))?;
    let x = g.reshape(x, [nw, t, t, c])?;
    Ok(g.permute(x, &[0, 3, 1, 2])?)
}

fn spatial_to_tokens<F: Element>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let [nw, c, h, w] = g.shape(x).try_into().map_err(|_| Error::config("expected NCHW"))?;
    let x = g.permute(x, &[0, 2, 3, 1])?;
    Ok(g.reshape(x, [nw, h * w, c])?)
}

fn depthwise3x3<F: Element>(g: &mut Graph<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let channels = g.shape(x)[1];
    let cfg = Conv2dConfig {
        padding: 1,
        groups: channels,
        ..Default::default()
    };
    Ok(g.conv2d(x, w, Some(b), cfg)?)
}

/// Concatenated `[Nw, T*T, 3C]` query, key and value features.
pub fn qkv_features<F: Element>(
    g: &mut Graph<F>,
    p: &Bound,
    prefix: &str,
    x: Var,
    d: &AttentionDims,
    variant: Variant,
) -> Result<Var> {
    let n = |leaf: &str| format!("{prefix}.{leaf}");
    match variant {
        Variant::Origin | Variant::ConvType2 => g
            .linear(x, p.get(&n("qkv.weight"))?, Some(p.get(&n("qkv.bias"))?))
            .map_err(Into::into),
        Variant::ConvType1 => {
            let s = tokens_to_spatial(g, x, d.window)?;
            let s = g.conv2d(
                s,
                p.get(&n("qkv_channel.weight"))?,
                Some(p.get(&n("qkv_channel.bias"))?),
                Conv2dConfig::default(),
            )?;
            let s = depthwise3x3(g, s, p.get(&n("qkv_spatial.weight"))?, p.get(&n("qkv_spatial.bias"))?)?;
            spatial_to_tokens(g, s)
        }
    }
}

/// Splits `[Nw, T*T, 3C]` into Q, K, V, each `[Nw, U, T*T, C/U]`.
pub fn split_heads<F: Element>(g: &mut Graph<F>, qkv: Var, heads: usize) -> Result<(Var, Var, Var)> {
    let [nw, tt, c3] = g
        .shape(qkv)
        .try_into()
        .map_err(|_| Error::config("expected [Nw, T*T, 3C]"))?;
    let c = c3 / 3;
    if c3 % 3 != 0 || c % heads != 0 {
        return Err(Error::config(format!(
            "{c3} qkv channels do not split into 3 x {heads} heads"
        )));
    }
    let x = g.reshape(qkv, [nw, tt, 3, heads, c / heads])?;
    let x = g.permute(x, &[2, 0, 3, 1, 4])?;
    let mut out = [qkv; 3];
    for (i, slot) in out.iter_mut().enumerate() {
        let part = g.narrow(x, 0, i, 1)?;
        *slot = g.reshape(part, [nw, heads, tt, c / heads])?;
    }
    Ok((out[0], out[1], out[2]))
}

pub fn make_qkv<F: Element>(
    g: &mut Graph<F>,
    p: &Bound,
    prefix: &str,
    x: Var,
    d: &AttentionDims,
    variant: Variant,
) -> Result<(Var, Var, Var)> {
    let qkv = qkv_features(g, p, prefix, x, d, variant)?;
    split_heads(g, qkv, d.heads)
}

/// `softmax(Q K^T / denom + B [+ mask]) V` with heads merged back to `[Nw, T*T, C]`.
///
/// `bias` is `[U, T*T, T*T]`; `mask`, when given, is `[N, 1, T*T, T*T]` with `Nw` a multiple of `N`.
pub fn attend<F: Element>(
    g: &mut Graph<F>,
    q: Var,
    k: Var,
    v: Var,
    bias: Var,
    mask: Option<Var>,
    denom: f64,
) -> Result<Var> {
    let [nw, u, tt, hd] = g
        .shape(q)
        .try_into()
        .map_err(|_| Error::config("expected [Nw, U, T*T, d]"))?;
    let kt = g.transpose_last(k)?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, 1.0 / denom)?;
    let mut logits = g.add(logits, bias)?;
    if let Some(m) = mask {
        let n = g.shape(m)[0];
        if nw % n != 0 {
            return Err(Error::config(format!("{nw} windows do not match a mask for {n}")));
        }
        let l = g.reshape(logits, [nw / n, n, u, tt, tt])?;
        let l = g.add(l, m)?;
        logits = g.reshape(l, [nw, u, tt, tt])?;
    }
    let attn = g.softmax(logits, 3)?;
    let out = g.matmul(attn, v)?;
    let out = g.permute(out, &[0, 2, 1, 3])?;
    Ok(g.reshape(out, [nw, tt, u * hd])?)
}

/// Full attention sublayer on normalized window tokens `[Nw, T*T, C]`.
#[allow(clippy::too_many_arguments)]
pub fn window_attention<F: Element>(
    g: &mut Graph<F>,
    p: &Bound,
    prefix: &str,
    x: Var,
    d: &AttentionDims,
    variant: Variant,
    scale: AttnScale,
    mask: Option<Var>,
) -> Result<Var> {
    let n = |leaf: &str| format!("{prefix}.{leaf}");
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != d.tokens() || shape[2] != d.channels {
        return Err(Error::config(format!(
            "attention expects [Nw, {}, {}], got {shape:?}",
            d.tokens(),
            d.channels
        )));
    }
    let qkv = qkv_features(g, p, prefix, x, d, variant)?;
    let (q, k, v) = split_heads(g, qkv, d.heads)?;
    let bias = relative_position_bias(g, p.get(&n("relative_position_bias_table"))?, d.window)?;
    let denom = scale.denominator(d.channels, d.heads);
    let mut out = attend(g, q, k, v, bias, mask, denom)?;
    if variant == Variant::ConvType2 {
        let vt = g.narrow(qkv, 2, 2 * d.channels, d.channels)?;
        let vs = tokens_to_spatial(g, vt, d.window)?;
        let local = depthwise3x3(g, vs, p.get(&n("local.weight"))?, p.get(&n("local.bias"))?)?;
        let local = spatial_to_tokens(g, local)?;
        out = g.add(out, local)?;
    }
    Ok(g.linear(out, p.get(&n("proj.weight"))?, Some(p.get(&n("proj.bias"))?))?)
}
