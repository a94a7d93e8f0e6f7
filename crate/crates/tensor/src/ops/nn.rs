use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::shape::split_at_axis;
use crate::tensor::Tensor;

impl<F: Element> Graph<F> {
    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let x = self.data(a);
        let mut out = vec![F::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let at = |j: usize| base + j * inner;
                let max = (0..n).map(|j| x[at(j)]).fold(F::neg_infinity(), F::max);
                let mut total = F::zero();
                for j in 0..n {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    total = total + e;
                }
                for j in 0..n {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Softmax { a, axis })
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![c],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let eps = F::from_f64(eps);
        let cf = F::from_f64(c as f64);
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let rows = xd.len() / c;
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![F::zero(); xd.len()];
        for (r, row) in xd.chunks(c).enumerate() {
            let mu = row.iter().fold(F::zero(), |s, &v| s + v) / cf;
            let var = row.iter().fold(F::zero(), |s, &v| s + (v - mu) * (v - mu)) / cf;
            let rs = F::one() / (var + eps).sqrt();
            for j in 0..c {
                out[r * c + j] = (row[j] - mu) * rs * gd[j] + bd[j];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
        )
    }
}

pub(crate) fn softmax_backward<F: Element>(sink: &mut GradSink<'_, F>, a: Var, axis: usize, out: &[F], g: &[F]) {
    if !sink.wants(a) {
        return;
    }
    let shape = sink.graph.shape(a).to_vec();
    let (outer, n, inner) = split_at_axis(&shape, axis);
    let ga = sink.slot(a);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let dot = (0..n).fold(F::zero(), |s, j| {
                let k = base + j * inner;
                s + g[k] * out[k]
            });
            for j in 0..n {
                let k = base + j * inner;
                ga[k] = ga[k] + out[k] * (g[k] - dot);
            }
        }
    }
}

pub(crate) fn layer_norm_backward<F: Element>(
    sink: &mut GradSink<'_, F>,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[F],
    rstd: &[F],
    g: &[F],
) {
    let graph = sink.graph;
    let (xd, gd) = (graph.data(x), graph.data(gamma));
    let c = gd.len();
    let cf = F::from_f64(c as f64);
    let xhat = |r: usize, j: usize| (xd[r * c + j] - mean[r]) * rstd[r];
    if sink.wants(x) {
        let gx = sink.slot(x);
        for r in 0..mean.len() {
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for j in 0..c {
                let d = g[r * c + j] * gd[j];
                sum_d = sum_d + d;
                sum_dx = sum_dx + d * xhat(r, j);
            }
            let (md, mdx) = (sum_d / cf, sum_dx / cf);
            for j in 0..c {
                let d = g[r * c + j] * gd[j];
                let k = r * c + j;
                gx[k] = gx[k] + rstd[r] * (d - md - xhat(r, j) * mdx);
            }
        }
    }
    if sink.wants(gamma) {
        let gg = sink.slot(gamma);
        for r in 0..mean.len() {
            for j in 0..c {
                gg[j] = gg[j] + g[r * c + j] * xhat(r, j);
            }
        }
    }
    if sink.wants(beta) {
        let gb = sink.slot(beta);
        for r in 0..mean.len() {
            for j in 0..c {
                gb[j] = gb[j] + g[r * c + j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_reference_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[4], &[0.0; 4]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.25; 4]);

        let x = g.constant(t(&[2], &[1f64.ln(), 3f64.ln()]));
        let y = g.softmax(x, 0).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);

        let x = g.constant(t(&[2], &[1000.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);
    }

    #[test]
    fn softmax_inner_axis() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[0.0, 5.0, 0.0, 5.0]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5; 4]);
    }

    #[test]
    fn layer_norm_reference_values() {
        let mut g = Graph::new();
        let ones = g.constant(t(&[2], &[1.0, 1.0]));
        let zeros = g.constant(t(&[2], &[0.0, 0.0]));
        let x = g.constant(t(&[2], &[1.0, 3.0]));
        let y = g.layer_norm(x, ones, zeros, 1e-12).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

        let c = g.constant(t(&[3], &[7.0; 3]));
        let ones3 = g.constant(t(&[3], &[1.0; 3]));
        let zeros3 = g.constant(t(&[3], &[0.0; 3]));
        let y = g.layer_norm(c, ones3, zeros3, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 3]);

        let fives = g.constant(t(&[3], &[5.0; 3]));
        let x = g.constant(t(&[3], &[-1.0, 0.3, 9.0]));
        let y = g.layer_norm(x, zeros3, fives, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[5.0; 3]);
    }
}
