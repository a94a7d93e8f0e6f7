//! Reinforced Swin-conv transformer blocks and the layers built from them.

use ursct_tensor::{Element, Graph, Var};

use crate::config::{AttnScale, Variant};
use crate::error::{Error, Result};
use crate::model::attention::{attention_specs, window_attention, AttentionDims};
use crate::model::layers::{layer_norm, linear, linear_specs, norm_specs};
use crate::model::window::{build_attn_mask, cyclic_shift, window_merge, window_partition};
use crate::params::{Bound, ParamSpec};

/// Hyperparameters shared by every block of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub dims: AttentionDims,
    pub depth: usize,
    pub mlp_ratio: usize,
    pub variant: Variant,
    pub attn_scale: AttnScale,
    /// Add the region mask in the shifted blocks.
    pub masked: bool,
}

impl LayerSpec {
    pub fn shift(&self) -> usize {
        self.dims.window / 2
    }
}

pub fn block_specs(prefix: &str, spec: &LayerSpec) -> Vec<ParamSpec> {
    let c = spec.dims.channels;
    let hidden = c * spec.mlp_ratio;
    let mut v = norm_specs(&format!("{prefix}.norm1"), c);
    v.extend(attention_specs(&format!("{prefix}.attn"), &spec.dims, spec.variant));
    v.extend(norm_specs(&format!("{prefix}.norm2"), c));
    v.extend(linear_specs(&format!("{prefix}.mlp.fc1"), c, hidden, true));
    v.extend(linear_specs(&format!("{prefix}.mlp.fc2"), hidden, c, true));
    v
}

/// Region mask for an `h x w` map as a `[N, 1, T*T, T*T]` constant.
pub fn mask_var<F: Element>(g: &mut Graph<F>, h: usize, w: usize, t: usize, s: usize) -> Result<Var> {
    let m = build_attn_mask::<F>(h, w, t, s)?;
    let [n, tt, _] = m.shape().try_into().expect("mask is rank 3");
    Ok(g.constant(m.reshape([n, 1, tt, tt])?))
}

/// One block on `[B, h, w, C]`: windowed (or shifted-window) attention and an MLP, each residual.
pub fn rsct_block<F: Element>(
    g: &mut Graph<F>,
    p: &Bound,
    prefix: &str,
    z: Var,
    spec: &LayerSpec,
    shift: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let [_, h, w, _] = g
        .shape(z)
        .try_into()
        .map_err(|_| Error::config("block input must be [B, h, w, C]"))?;
    let t = spec.dims.window;
    let y = layer_norm(g, p, &format!("{prefix}.norm1"), z)?;
    let y = cyclic_shift(g, y, shift as isize)?;
    let windows = window_partition(g, y, t)?;
    let a = window_attention(
        g,
        p,
        &format!("{prefix}.attn"),
        windows,
        &spec.dims,
        spec.variant,
        spec.attn_scale,
        mask,
    )?;
    let y = window_merge(g, a, h, w, t)?;
    let y = cyclic_shift(g, y, -(shift as isize))?;
    let z = g.add(z, y)?;

    let y = layer_norm(g, p, &format!("{prefix}.norm2"), z)?;
    let y = linear(g, p, &format!("{prefix}.mlp.fc1"), y, true)?;
    let y = g.gelu(y)?;
    let y = linear(g, p, &format!("{prefix}.mlp.fc2"), y, true)?;
    Ok(g.add(z, y)?)
}

pub fn layer_specs(prefix: &str, spec: &LayerSpec) -> Vec<ParamSpec> {
    (0..spec.depth)
        .flat_map(|j| block_specs(&format!("{prefix}.blocks.{j}"), spec))
        .collect()
}

/// `depth` blocks alternating plain windows (even index) and shifted windows (odd index).
pub fn rsct_layer<F: Element>(g: &mut Graph<F>, p: &Bound, prefix: &str, z: Var, spec: &LayerSpec) -> Result<Var> {
    let [_, h, w, _] = g
        .shape(z)
        .try_into()
        .map_err(|_| Error::config("layer input must be [B, h, w, C]"))?;
    let s = spec.shift();
    let mask = if spec.masked && s > 0 && spec.depth > 1 {
        Some(mask_var(g, h, w, spec.dims.window, s)?)
    } else {
        None
    };
    let mut z = z;
    for j in 0..spec.depth {
        let (shift, m) = if j % 2 == 1 { (s, mask) } else { (0, None) };
        z = rsct_block(g, p, &format!("{prefix}.blocks.{j}"), z, spec, shift, m)?;
    }
    Ok(z)
}
