use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dConfig {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

pub(crate) struct Conv2dGeometry {
    cfg: Conv2dConfig,
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Conv2dGeometry {
    fn cin_per_group(&self) -> usize {
        self.cin / self.cfg.groups
    }

    fn cout_per_group(&self) -> usize {
        self.cout / self.cfg.groups
    }

    /// Output positions `o` along one axis whose input `o*stride + k - pad` is inside `0..len`.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.cfg.stride as isize, self.cfg.padding as isize);
        let k = k as isize;
        // smallest o with o*s + k - p >= 0
        let lo = ((p - k).max(0) + s - 1) / s;
        // largest o with o*s + k - p <= len - 1
        let hi_num = len as isize - 1 + p - k;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_len as isize);
        (lo.min(hi) as usize, hi.max(0) as usize)
    }

    /// Calls `f(x_offset, w_offset, out_offset, run)`, one call per contiguous output row segment.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (cig, cog) = (self.cin_per_group(), self.cout_per_group());
        let (s, p) = (self.cfg.stride, self.cfg.padding);
        for b in 0..self.batch {
            for oc in 0..self.cout {
                let group = oc / cog;
                for icg in 0..cig {
                    let ic = group * cig + icg;
                    let x_plane = (b * self.cin + ic) * self.h * self.w;
                    let out_plane = (b * self.cout + oc) * self.oh * self.ow;
                    for ky in 0..self.kh {
                        let (oy0, oy1) = self.valid(ky, self.h, self.oh);
                        for kx in 0..self.kw {
                            let (ox0, ox1) = self.valid(kx, self.w, self.ow);
                            if ox0 >= ox1 {
                                continue;
                            }
                            let w_off = ((oc * cig + icg) * self.kh + ky) * self.kw + kx;
                            for oy in oy0..oy1 {
                                let iy = oy * s + ky - p;
                                let ix0 = ox0 * s + kx - p;
                                f(
                                    x_plane + iy * self.w + ix0,
                                    w_off,
                                    out_plane + oy * self.ow + ox0,
                                    ox1 - ox0,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<F: Element> Graph<F> {
    /// 2-D cross-correlation on NCHW input with weight `[cout, cin/groups, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, cfg: Conv2dConfig) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cig, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if cfg.groups == 0 || cfg.stride == 0 || cin % cfg.groups != 0 || cout % cfg.groups != 0 {
            return Err(Error::Config {
                op: "conv2d",
                msg: format!("channels in {cin} / out {cout} not divisible by groups {}", cfg.groups),
            });
        }
        if cig != cin / cfg.groups {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        if h + 2 * cfg.padding < kh || wd + 2 * cfg.padding < kw {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![cout],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let oh = (h + 2 * cfg.padding - kh) / cfg.stride + 1;
        let ow = (wd + 2 * cfg.padding - kw) / cfg.stride + 1;
        let geom = Conv2dGeometry {
            cfg,
            batch,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            oh,
            ow,
        };
        let (xd, wdat) = (self.data(x), self.data(w));
        let mut out = vec![F::zero(); batch * cout * oh * ow];
        if let Some(b) = bias {
            let bd = self.data(b);
            for (i, plane) in out.chunks_mut(oh * ow).enumerate() {
                plane.fill(bd[i % cout]);
            }
        }
        let s = cfg.stride;
        geom.for_each_tap(|xo, wo, oo, run| {
            let wv = wdat[wo];
            for j in 0..run {
                out[oo + j] = out[oo + j] + wv * xd[xo + j * s];
            }
        });
        let value = Tensor::new(vec![batch, cout, oh, ow], out)?;
        self.push(value, Op::Conv2d { x, w, bias, geom })
    }
}

pub(crate) fn conv2d_backward<F: Element>(
    sink: &mut GradSink<'_, F>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    geom: &Conv2dGeometry,
    g: &[F],
) {
    let graph = sink.graph;
    let (xd, wd) = (graph.data(x), graph.data(w));
    let s = geom.cfg.stride;
    if sink.wants(x) {
        let gx = sink.slot(x);
        geom.for_each_tap(|xo, wo, oo, run| {
            let wv = wd[wo];
            for j in 0..run {
                gx[xo + j * s] = gx[xo + j * s] + wv * g[oo + j];
            }
        });
    }
    if sink.wants(w) {
        let gw = sink.slot(w);
        geom.for_each_tap(|xo, wo, oo, run| {
            let mut acc = F::zero();
            for j in 0..run {
                acc = acc + xd[xo + j * s] * g[oo + j];
            }
            gw[wo] = gw[wo] + acc;
        });
    }
    if let Some(b) = bias {
        if sink.wants(b) {
            let plane = geom.oh * geom.ow;
            let cout = geom.cout;
            let gb = sink.slot(b);
            for (i, chunk) in g.chunks(plane).enumerate() {
                let total = chunk.iter().fold(F::zero(), |a, &v| a + v);
                gb[i % cout] = gb[i % cout] + total;
            }
        }
    }
}
