use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::shape::{self, split_at_axis};
use crate::tensor::Tensor;

fn check_permutation(perm: &[usize], ndim: usize) -> Result<()> {
    let mut seen = vec![false; ndim];
    if perm.len() != ndim {
        return Err(Error::dim("permute", format!("order {perm:?} for {ndim} axes")));
    }
    for &p in perm {
        if p >= ndim || seen[p] {
            return Err(Error::dim("permute", format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

fn permute_data<F: Copy>(data: &[F], shape: &[usize], perm: &[usize]) -> Vec<F> {
    let in_strides = shape::strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    shape::strided_offsets(&out_shape, &src_strides)
        .into_iter()
        .map(|o| data[o])
        .collect()
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

impl<F: Element> Graph<F> {
    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push(value, Op::Reshape { a })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        check_permutation(perm, in_shape.len())?;
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let data = permute_data(self.data(a), &in_shape, perm);
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Permute { a, perm: perm.to_vec() })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a).len();
        if n < 2 {
            return Err(Error::dim("transpose", "needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(a, &perm)
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        if axis >= in_shape.len() || len == 0 || start + len > in_shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {in_shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_at_axis(&in_shape, axis);
        let src = self.data(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = in_shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Narrow { a, axis, start })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let ref_shape = self.shape(*first).to_vec();
        if axis >= ref_shape.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} out of range for {ref_shape:?}"),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == ref_shape.len()
                && s.iter()
                    .zip(&ref_shape)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: ref_shape,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&ref_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                let d = self.data(p);
                data.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut out_shape = ref_shape;
        out_shape[axis] = total;
        let value = Tensor::new(out_shape, data)?;
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Cyclic roll along `axis`: element `i` moves to `(i + shift) mod n`.
    pub fn roll(&mut self, a: Var, axis: usize, shift: isize) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        if axis >= in_shape.len() {
            return Err(Error::dim("roll", format!("axis {axis} out of range for {in_shape:?}")));
        }
        let (outer, n, inner) = split_at_axis(&in_shape, axis);
        let src = self.data(a);
        let mut data = vec![F::zero(); src.len()];
        for o in 0..outer {
            for i in 0..n {
                let j = wrap(i as isize + shift, n);
                let (s, d) = ((o * n + i) * inner, (o * n + j) * inner);
                data[d..d + inner].copy_from_slice(&src[s..s + inner]);
            }
        }
        let value = Tensor::new(in_shape, data)?;
        self.push(value, Op::Roll { a, axis, shift })
    }

    /// Row lookup: `table[R, ..]` indexed by `indices` gives `[indices.len(), ..]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tshape = self.shape(table).to_vec();
        if tshape.is_empty() || indices.is_empty() {
            return Err(Error::dim("gather", "needs a non-scalar table and at least one index"));
        }
        let rows = tshape[0];
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(
                "gather",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let width = shape::numel(&tshape[1..]);
        let src = self.data(table);
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut out_shape = vec![indices.len()];
        out_shape.extend_from_slice(&tshape[1..]);
        let value = Tensor::new(out_shape, data)?;
        self.push(
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// `out[i] = a[i + 1] - a[i]` along `axis`, with the last position set to zero.
    pub fn forward_diff(&mut self, a: Var, axis: usize) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        if axis >= in_shape.len() {
            return Err(Error::dim(
                "forward_diff",
                format!("axis {axis} out of range for {in_shape:?}"),
            ));
        }
        let (outer, n, inner) = split_at_axis(&in_shape, axis);
        let src = self.data(a);
        let mut data = vec![F::zero(); src.len()];
        for o in 0..outer {
            for i in 0..n.saturating_sub(1) {
                let base = (o * n + i) * inner;
                for k in 0..inner {
                    data[base + k] = src[base + inner + k] - src[base + k];
                }
            }
        }
        let value = Tensor::new(in_shape, data)?;
        self.push(value, Op::ForwardDiff { a, axis })
    }
}

pub(crate) fn permute_backward<F: Element>(
    sink: &mut GradSink<'_, F>,
    a: Var,
    perm: &[usize],
    out_shape: &[usize],
    g: &[F],
) {
    if !sink.wants(a) {
        return;
    }
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let back = permute_data(g, out_shape, &inverse);
    sink.add(a, &back);
}

pub(crate) fn narrow_backward<F: Element>(
    sink: &mut GradSink<'_, F>,
    a: Var,
    axis: usize,
    start: usize,
    out_shape: &[usize],
    g: &[F],
) {
    if !sink.wants(a) {
        return;
    }
    let n = sink.graph.shape(a)[axis];
    let (outer, len, inner) = split_at_axis(out_shape, axis);
    let ga = sink.slot(a);
    for o in 0..outer {
        let dst = (o * n + start) * inner;
        let src = o * len * inner;
        for k in 0..len * inner {
            ga[dst + k] = ga[dst + k] + g[src + k];
        }
    }
}

pub(crate) fn concat_backward<F: Element>(sink: &mut GradSink<'_, F>, parts: &[Var], axis: usize, g: &[F]) {
    let graph = sink.graph;
    let shape0 = graph.shape(parts[0]);
    let (outer, _, inner) = split_at_axis(shape0, axis);
    let total: usize = parts.iter().map(|&p| graph.shape(p)[axis]).sum();
    let mut offset = 0;
    for &p in parts {
        let n = graph.shape(p)[axis];
        if sink.wants(p) {
            let gp = sink.slot(p);
            for o in 0..outer {
                let src = (o * total + offset) * inner;
                let dst = o * n * inner;
                for k in 0..n * inner {
                    gp[dst + k] = gp[dst + k] + g[src + k];
                }
            }
        }
        offset += n;
    }
}

pub(crate) fn roll_backward<F: Element>(sink: &mut GradSink<'_, F>, a: Var, axis: usize, shift: isize, g: &[F]) {
    if !sink.wants(a) {
        return;
    }
    let shape = sink.graph.shape(a).to_vec();
    let (outer, n, inner) = split_at_axis(&shape, axis);
    let ga = sink.slot(a);
    for o in 0..outer {
        for i in 0..n {
            let j = wrap(i as isize + shift, n);
            let (s, d) = ((o * n + i) * inner, (o * n + j) * inner);
            for k in 0..inner {
                ga[s + k] = ga[s + k] + g[d + k];
            }
        }
    }
}

pub(crate) fn gather_backward<F: Element>(sink: &mut GradSink<'_, F>, table: Var, indices: &[usize], g: &[F]) {
    if !sink.wants(table) {
        return;
    }
    let width = g.len() / indices.len();
    let gt = sink.slot(table);
    for (r, &i) in indices.iter().enumerate() {
        for k in 0..width {
            gt[i * width + k] = gt[i * width + k] + g[r * width + k];
        }
    }
}

pub(crate) fn forward_diff_backward<F: Element>(sink: &mut GradSink<'_, F>, a: Var, axis: usize, g: &[F]) {
    if !sink.wants(a) {
        return;
    }
    let shape = sink.graph.shape(a).to_vec();
    let (outer, n, inner) = split_at_axis(&shape, axis);
    let ga = sink.slot(a);
    for o in 0..outer {
        for i in 0..n.saturating_sub(1) {
            let base = (o * n + i) * inner;
            for k in 0..inner {
                let v = g[base + k];
                ga[base + inner + k] = ga[base + inner + k] + v;
                ga[base + k] = ga[base + k] - v;
            }
        }
    }
}
