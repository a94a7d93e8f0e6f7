//! Window partitioning, cyclic shift, region masks and relative position indices.

use ursct_tensor::{Element, Graph, Tensor, Var};

use crate::error::{Error, Result};

/// Additive logit for token pairs that must not attend to each other.
pub const MASK_VALUE: f64 = -1e9;

fn dims4(g: &Graph<impl Element>, z: Var, op: &str) -> Result<[usize; 4]> {
    match *g.shape(z) {
        [b, h, w, c] => Ok([b, h, w, c]),
        ref s => Err(Error::config(format!("{op}: expected [B, h, w, C], got {s:?}"))),
    }
}

/// `[B, h, w, C]` to `[B * N, T*T, C]`, windows in row-major order.
pub fn window_partition<F: Element>(g: &mut Graph<F>, z: Var, t: usize) -> Result<Var> {
    let [b, h, w, c] = dims4(g, z, "window_partition")?;
    if t == 0 || h % t != 0 || w % t != 0 {
        return Err(Error::config(format!(
            "window_partition: {h}x{w} is not divisible by window {t}"
        )));
    }
    let x = g.reshape(z, [b, h / t, t, w / t, t, c])?;
    let x = g.permute(x, &[0, 1, 3, 2, 4, 5])?;
    Ok(g.reshape(x, [b * (h / t) * (w / t), t * t, c])?)
}

/// Inverse of [`window_partition`].
pub fn window_merge<F: Element>(g: &mut Graph<F>, y: Var, h: usize, w: usize, t: usize) -> Result<Var> {
    let (bn, tt, c) = match *g.shape(y) {
        [bn, tt, c] => (bn, tt, c),
        ref s => {
            return Err(Error::config(format!(
                "window_merge: expected [B*N, T*T, C], got {s:?}"
            )))
        }
    };
    if t == 0 || tt != t * t || !h.is_multiple_of(t) || !w.is_multiple_of(t) {
        return Err(Error::config(format!(
            "window_merge: {tt} tokens do not tile {h}x{w} with window {t}"
        )));
    }
    let n = (h / t) * (w / t);
    if bn % n != 0 {
        return Err(Error::config(format!(
            "window_merge: {bn} windows is not a multiple of {n}"
        )));
    }
    let x = g.reshape(y, [bn / n, h / t, w / t, t, t, c])?;
    let x = g.permute(x, &[0, 1, 3, 2, 4, 5])?;
    Ok(g.reshape(x, [bn / n, h, w, c])?)
}

/// Rolls rows and columns of `[B, h, w, C]` by `-s`; `cyclic_shift(.., -s)` undoes it.
pub fn cyclic_shift<F: Element>(g: &mut Graph<F>, z: Var, s: isize) -> Result<Var> {
    if s == 0 {
        return Ok(z);
    }
    dims4(g, z, "cyclic_shift")?;
    let x = g.roll(z, 1, -s)?;
    Ok(g.roll(x, 2, -s)?)
}

/// Region label of every pixel of an `h x w` map after a shift by `s`:
/// three bands per axis, `0..h-T`, `h-T..h-s` and `h-s..h`.
pub fn shift_regions(h: usize, w: usize, t: usize, s: usize) -> Vec<usize> {
    let band = |i: usize, n: usize| {
        if i < n - t {
            0
        } else if i < n - s {
            1
        } else {
            2
        }
    };
    let mut ids = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            ids.push(band(r, h) * 3 + band(c, w));
        }
    }
    ids
}

/// Additive attention mask `[N, T*T, T*T]` for shifted windows: 0 for pairs from the
/// same pre-shift region, [`MASK_VALUE`] otherwise. All zero when `s == 0`.
pub fn build_attn_mask<F: Element>(h: usize, w: usize, t: usize, s: usize) -> Result<Tensor<F>> {
    if t == 0 || !h.is_multiple_of(t) || !w.is_multiple_of(t) || s >= t {
        return Err(Error::config(format!(
            "attention mask needs T | {h}x{w} and shift {s} < T = {t}"
        )));
    }
    let (nh, nw, tt) = (h / t, w / t, t * t);
    let mut data = vec![F::zero(); nh * nw * tt * tt];
    if s == 0 {
        return Ok(Tensor::new([nh * nw, tt, tt], data)?);
    }
    let ids = shift_regions(h, w, t, s);
    let large = F::from_f64(MASK_VALUE);
    for wr in 0..nh {
        for wc in 0..nw {
            let n = wr * nw + wc;
            let label = |k: usize| ids[(wr * t + k / t) * w + wc * t + k % t];
            for i in 0..tt {
                for j in 0..tt {
                    if label(i) != label(j) {
                        data[(n * tt + i) * tt + j] = large;
                    }
                }
            }
        }
    }
    Ok(Tensor::new([nh * nw, tt, tt], data)?)
}

/// Row of the `[(2T-1)^2, U]` bias table used by each token pair, flattened `[T^2 * T^2]`.
pub fn relative_position_index(t: usize) -> Vec<usize> {
    let tt = t * t;
    let span = 2 * t - 1;
    let mut idx = Vec::with_capacity(tt * tt);
    for i in 0..tt {
        for j in 0..tt {
            let dr = (i / t) as isize - (j / t) as isize + t as isize - 1;
            let dc = (i % t) as isize - (j % t) as isize + t as isize - 1;
            idx.push(dr as usize * span + dc as usize);
        }
    }
    idx
}

/// Expands the bias table `[(2T-1)^2, U]` to `B: [U, T^2, T^2]`.
pub fn relative_position_bias<F: Element>(g: &mut Graph<F>, table: Var, t: usize) -> Result<Var> {
    let span = 2 * t - 1;
    let heads = match *g.shape(table) {
        [rows, u] if rows == span * span => u,
        ref s => return Err(Error::config(format!("bias table shape {s:?} does not fit window {t}"))),
    };
    let tt = t * t;
    let rows = g.gather_rows(table, &relative_position_index(t))?;
    let rows = g.reshape(rows, [tt, tt, heads])?;
    Ok(g.permute(rows, &[2, 0, 1])?)
}
