use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::shape;
use crate::tensor::Tensor;

/// Batched `[.., m, k] x [.., k, n]`. A side without leading dims is shared across the batch.
pub(crate) struct MatMulGeometry {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

/// `c += a * b` for row-major `m x k` and `k x n` blocks.
fn gemm_acc<F: Element>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip.is_zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + aip * bj;
            }
        }
    }
}

/// `c += a * b^T` with `a: m x n`, `b: k x n`, `c: m x k`.
fn gemm_nt_acc<F: Element>(a: &[F], b: &[F], c: &mut [F], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot = arow.iter().zip(brow).fold(F::zero(), |s, (&x, &y)| s + x * y);
            c[i * k + p] = c[i * k + p] + dot;
        }
    }
}

/// `c += a^T * b` with `a: m x k`, `b: m x n`, `c: k x n`.
fn gemm_tn_acc<F: Element>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip.is_zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + aip * bj;
            }
        }
    }
}

impl<F: Element> Graph<F> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: ashape.clone(),
            rhs: bshape.clone(),
        };
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (k2, n) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let a_lead = &ashape[..ashape.len() - 2];
        let b_lead = &bshape[..bshape.len() - 2];
        let lead = if a_lead == b_lead || b_lead.is_empty() {
            a_lead.to_vec()
        } else if a_lead.is_empty() {
            b_lead.to_vec()
        } else {
            return Err(mismatch());
        };
        let geom = MatMulGeometry {
            batch: shape::numel(&lead),
            a_batched: !a_lead.is_empty(),
            b_batched: !b_lead.is_empty(),
            m,
            k,
            n,
        };
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![F::zero(); geom.batch * m * n];
        for t in 0..geom.batch {
            let ao = if geom.a_batched { t * m * k } else { 0 };
            let bo = if geom.b_batched { t * k * n } else { 0 };
            gemm_acc(
                &ad[ao..ao + m * k],
                &bd[bo..bo + k * n],
                &mut out[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut out_shape = lead;
        out_shape.extend([m, n]);
        let value = Tensor::new(out_shape, out)?;
        self.push(value, Op::MatMul { a, b, geom })
    }

    /// `x @ w + bias` over the last axis of `x`, `w: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        let cin = *xshape.last().ok_or_else(|| Error::dim("linear", "scalar input"))?;
        let rows = shape::numel(&xshape) / cin;
        let flat = self.reshape(x, [rows, cin])?;
        let y = self.matmul(flat, w)?;
        let y = match bias {
            Some(b) => self.add(y, b)?,
            None => y,
        };
        let cout = self.shape(y)[1];
        let mut out_shape = xshape;
        *out_shape.last_mut().unwrap() = cout;
        self.reshape(y, out_shape)
    }
}

pub(crate) fn matmul_backward<F: Element>(sink: &mut GradSink<'_, F>, a: Var, b: Var, geom: &MatMulGeometry, g: &[F]) {
    let graph = sink.graph;
    let (ad, bd) = (graph.data(a), graph.data(b));
    let MatMulGeometry { m, k, n, .. } = *geom;
    if sink.wants(a) {
        let ga = sink.slot(a);
        for t in 0..geom.batch {
            let ao = if geom.a_batched { t * m * k } else { 0 };
            let bo = if geom.b_batched { t * k * n } else { 0 };
            gemm_nt_acc(
                &g[t * m * n..(t + 1) * m * n],
                &bd[bo..bo + k * n],
                &mut ga[ao..ao + m * k],
                m,
                n,
                k,
            );
        }
    }
    if sink.wants(b) {
        let gb = sink.slot(b);
        for t in 0..geom.batch {
            let ao = if geom.a_batched { t * m * k } else { 0 };
            let bo = if geom.b_batched { t * k * n } else { 0 };
            gemm_tn_acc(
                &ad[ao..ao + m * k],
                &g[t * m * n..(t + 1) * m * n],
                &mut gb[bo..bo + k * n],
                m,
                k,
                n,
            );
        }
    }
}
