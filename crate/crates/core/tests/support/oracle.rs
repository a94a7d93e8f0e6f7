//! Straightforward reference implementations of the no-reference metrics.
//!
//! Written from the metric definitions with plain loops and textbook
//! constants, sharing no code with the library.

#![allow(clippy::needless_range_loop)]

use ursct_tensor::Tensor;

fn channels(img: &Tensor<f32>) -> (usize, usize, Vec<Vec<f64>>) {
    let s = img.shape();
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    let planes = (0..3)
        .map(|c| (0..h * w).map(|i| d[c * h * w + i] as f64).collect())
        .collect();
    (h, w, planes)
}

fn alpha_trimmed_mean(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = v.len() as f64;
    let t_low = (alpha * k).ceil() as usize;
    let t_high = (alpha * k).floor() as usize;
    let kept = &v[t_low..v.len() - t_high];
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn uicm(r: &[f64], g: &[f64], b: &[f64]) -> f64 {
    let n = r.len();
    let mut rg = Vec::new();
    let mut yb = Vec::new();
    for i in 0..n {
        rg.push(r[i] - g[i]);
        yb.push(0.5 * (r[i] + g[i]) - b[i]);
    }
    let m_rg = alpha_trimmed_mean(&rg, 0.1);
    let m_yb = alpha_trimmed_mean(&yb, 0.1);
    let mut s_rg = 0.0;
    let mut s_yb = 0.0;
    for i in 0..n {
        s_rg += (rg[i] - m_rg) * (rg[i] - m_rg);
        s_yb += (yb[i] - m_yb) * (yb[i] - m_yb);
    }
    s_rg /= n as f64;
    s_yb /= n as f64;
    -0.0268 * (m_rg * m_rg + m_yb * m_yb).sqrt() + 0.1586 * (s_rg + s_yb).sqrt()
}

fn sobel(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    let yy = (y as i64 + dy as i64 - 1).max(0).min(h as i64 - 1) as usize;
                    let xx = (x as i64 + dx as i64 - 1).max(0).min(w as i64 - 1) as usize;
                    gx += KX[dy][dx] * p[yy * w + xx];
                    gy += KY[dy][dx] * p[yy * w + xx];
                }
            }
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v = *v / peak * 255.0);
    }
    out
}

fn blocks(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for by in 0..h / 8 {
        for bx in 0..w / 8 {
            v.push((by * 8, bx * 8));
        }
    }
    v
}

fn block_extrema(planes: &[&[f64]], w: usize, y0: usize, x0: usize) -> (f64, f64) {
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for p in planes {
        for y in y0..y0 + 8 {
            for x in x0..x0 + 8 {
                lo = lo.min(p[y * w + x]);
                hi = hi.max(p[y * w + x]);
            }
        }
    }
    (lo, hi)
}

fn eme(p: &[f64], h: usize, w: usize) -> f64 {
    let bs = blocks(h, w);
    let mut acc = 0.0;
    for &(y0, x0) in &bs {
        let (lo, hi) = block_extrema(&[p], w, y0, x0);
        if lo != 0.0 && hi != 0.0 {
            acc += (hi / lo).ln();
        }
    }
    2.0 * acc / bs.len() as f64
}

/// `(uicm, uism, uiconm, uiqm)` on the 0..255 scale.
pub fn uiqm(img: &Tensor<f32>) -> [f64; 4] {
    let (h, w, mut planes) = channels(img);
    for p in planes.iter_mut() {
        for v in p.iter_mut() {
            *v *= 255.0;
        }
    }
    let (r, g, b) = (&planes[0], &planes[1], &planes[2]);
    let c = uicm(r, g, b);

    let mut s = 0.0;
    for (p, lw) in [(r, 0.299), (g, 0.587), (b, 0.114)] {
        let edge = sobel(p, h, w);
        let weighted: Vec<f64> = (0..h * w).map(|i| edge[i] * p[i]).collect();
        s += lw * eme(&weighted, h, w);
    }

    let bs = blocks(h, w);
    let mut acc = 0.0;
    for &(y0, x0) in &bs {
        let (lo, hi) = block_extrema(&[r, g, b], w, y0, x0);
        let d = hi - lo;
        let t = hi + lo;
        if d != 0.0 && t != 0.0 {
            acc += (d / t) * (d / t).ln();
        }
    }
    let k = -acc / bs.len() as f64;
    [c, s, k, 0.0282 * c + 0.2953 * s + 3.5753 * k]
}

fn lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let lin = |c: f64| {
        if c > 0.04045 {
            ((c + 0.055) / 1.055).powf(2.4)
        } else {
            c / 12.92
        }
    };
    let (r, g, b) = (lin(r), lin(g), lin(b));
    let x = (0.4124 * r + 0.3576 * g + 0.1805 * b) / 0.95047;
    let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
    let z = (0.0193 * r + 0.1192 * g + 0.9505 * b) / 1.08883;
    let f = |t: f64| {
        if t > 0.008856 {
            t.powf(1.0 / 3.0)
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// `(chroma std, luminance contrast, mean saturation, uciqe)` with Lab scaled by 1/100.
pub fn uciqe(img: &Tensor<f32>) -> [f64; 4] {
    let (_, _, planes) = channels(img);
    let n = planes[0].len();
    let mut ls = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    let mut sat = 0.0;
    for i in 0..n {
        let (l, a, b) = lab(planes[0][i], planes[1][i], planes[2][i]);
        let (l, a, b) = (l / 100.0, a / 100.0, b / 100.0);
        let c = (a * a + b * b).sqrt();
        ls.push(l);
        cs.push(c);
        if l > 1e-12 {
            sat += c / l;
        }
    }
    let mu = cs.iter().sum::<f64>() / n as f64;
    let sd = (cs.iter().map(|c| (c - mu) * (c - mu)).sum::<f64>() / n as f64).sqrt();
    ls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = |q: f64| ((q * n as f64).floor() as usize).min(n - 1);
    let con = ls[idx(0.99)] - ls[idx(0.01)];
    let ms = sat / n as f64;
    [sd, con, ms, 0.4680 * sd + 0.2745 * con + 0.2576 * ms]
}
