use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::shape;
use crate::tensor::Tensor;

/// For each input element, the flat index of the output element it reduces into.
fn reduction_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let kept: Vec<usize> = (0..shape.len())
        .map(|d| if axes.contains(&d) { 1 } else { shape[d] })
        .collect();
    let mut strides = shape::strides(&kept);
    for &a in axes {
        strides[a] = 0;
    }
    shape::strided_offsets(shape, &strides)
}

impl<F: Element> Graph<F> {
    /// Mean over `axes`; reduced axes are removed from the shape.
    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&d| d >= in_shape.len()) {
            return Err(Error::dim(
                "mean",
                format!("axes {axes:?} out of range for {in_shape:?}"),
            ));
        }
        let out_shape: Vec<usize> = (0..in_shape.len())
            .filter(|d| !axes.contains(d))
            .map(|d| in_shape[d])
            .collect();
        let count: usize = axes.iter().map(|&d| in_shape[d]).product();
        let inv = F::from_f64(1.0 / count as f64);
        let map = reduction_map(&in_shape, &axes);
        let src = self.data(a);
        let mut out = vec![F::zero(); shape::numel(&out_shape)];
        for (i, &o) in map.iter().enumerate() {
            out[o] = out[o] + src[i];
        }
        for v in &mut out {
            *v = *v * inv;
        }
        let value = Tensor::new(out_shape, out)?;
        self.push(value, Op::Mean { a, axes })
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.mean(a, &axes)
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.data(a).iter().fold(F::zero(), |s, &v| s + v);
        self.push(Tensor::scalar(total), Op::Sum { a })
    }
}

pub(crate) fn mean_backward<F: Element>(sink: &mut GradSink<'_, F>, a: Var, axes: &[usize], g: &[F]) {
    if !sink.wants(a) {
        return;
    }
    let in_shape = sink.graph.shape(a).to_vec();
    let count: usize = axes.iter().map(|&d| in_shape[d]).product();
    let inv = F::from_f64(1.0 / count as f64);
    let map = reduction_map(&in_shape, axes);
    let ga = sink.slot(a);
    for (i, &o) in map.iter().enumerate() {
        ga[i] = ga[i] + g[o] * inv;
    }
}
