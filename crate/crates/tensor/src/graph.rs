//! Tape of executed operations and reverse-mode replay.
//!
//! Every differentiable op appends one node holding its output value and the
//! information its backward rule needs. `backward` walks the tape in exact
//! reverse order and adds the result into the gradient buffers of leaves
//! created with `requires_grad`. Those buffers persist until `zero_grad`, so a
//! second `backward` on the same tape doubles them.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::ops::conv::Conv2dGeometry;
use crate::ops::elementwise::{BinaryKind, Broadcast, UnaryKind};
use crate::ops::matmul::MatMulGeometry;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<F> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    Scale {
        a: Var,
        factor: F,
    },
    AddScalar {
        a: Var,
    },
    Clamp {
        a: Var,
        lo: F,
        hi: F,
    },
    Powf {
        a: Var,
        exponent: F,
    },
    MatMul {
        a: Var,
        b: Var,
        geom: MatMulGeometry,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: Conv2dGeometry,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<F>,
        rstd: Vec<F>,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Roll {
        a: Var,
        axis: usize,
        shift: isize,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    ForwardDiff {
        a: Var,
        axis: usize,
    },
    Mean {
        a: Var,
        axes: Vec<usize>,
    },
    Sum {
        a: Var,
    },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary { kind, .. } => kind.name(),
            Op::Unary { kind, .. } => kind.name(),
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Clamp { .. } => "clamp",
            Op::Powf { .. } => "powf",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Narrow { .. } => "narrow",
            Op::Concat { .. } => "concat",
            Op::Roll { .. } => "roll",
            Op::Gather { .. } => "gather",
            Op::ForwardDiff { .. } => "forward_diff",
            Op::Mean { .. } => "mean",
            Op::Sum { .. } => "sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Unary { a, .. }
            | Op::Scale { a, .. }
            | Op::AddScalar { a }
            | Op::Clamp { a, .. }
            | Op::Powf { a, .. }
            | Op::Softmax { a, .. }
            | Op::Reshape { a }
            | Op::Permute { a, .. }
            | Op::Narrow { a, .. }
            | Op::Roll { a, .. }
            | Op::ForwardDiff { a, .. }
            | Op::Mean { a, .. }
            | Op::Sum { a } => vec![*a],
            Op::Conv2d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Gather { table, .. } => vec![*table],
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// A single-threaded recording tape.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Leaf that collects a gradient.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Frees the values of every computed node except `keep`.
    ///
    /// Kept nodes turn into constants, so nothing recorded so far can be
    /// differentiated afterwards. Leaves are untouched. Inference uses this
    /// to bound memory between blocks.
    pub fn release_except(&mut self, keep: &[Var]) {
        for (id, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            if !keep.iter().any(|v| v.0 == id) {
                node.value = Tensor::released();
            }
            node.op = Op::Leaf;
            node.requires_grad = false;
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut pending: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let shape = node.value.shape().to_vec();
                match &mut self.grads[id] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                            *a = *a + *v;
                        }
                    }
                    slot @ None => *slot = Some(Tensor::new(shape, g)?),
                }
                continue;
            }
            let mut sink = GradSink {
                graph: self,
                pending: &mut pending,
            };
            sink.dispatch(id, &g)?;
        }
        Ok(())
    }
}

/// Accumulates input gradients while one node's backward rule runs.
pub(crate) struct GradSink<'a, F> {
    pub(crate) graph: &'a Graph<F>,
    pending: &'a mut Vec<Option<Vec<F>>>,
}

impl<F: Element> GradSink<'_, F> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.graph.nodes[v.0].requires_grad
    }

    /// Buffer for `v`'s gradient, created zeroed on first use.
    pub(crate) fn slot(&mut self, v: Var) -> &mut [F] {
        let n = self.graph.nodes[v.0].value.numel();
        self.pending[v.0].get_or_insert_with(|| vec![F::zero(); n])
    }

    pub(crate) fn add(&mut self, v: Var, contribution: &[F]) {
        if !self.wants(v) {
            return;
        }
        let slot = self.slot(v);
        for (s, c) in slot.iter_mut().zip(contribution) {
            *s = *s + *c;
        }
    }

    fn dispatch(&mut self, id: usize, g: &[F]) -> Result<()> {
        use crate::ops::*;
        let graph = self.graph;
        let node = &graph.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, bcast } => elementwise::binary_backward(self, *kind, *a, *b, bcast, g),
            Op::Unary { kind, a } => elementwise::unary_backward(self, *kind, *a, out, g),
            Op::Scale { a, factor } => {
                let c: Vec<F> = g.iter().map(|&v| v * *factor).collect();
                self.add(*a, &c);
            }
            Op::AddScalar { a } => self.add(*a, g),
            Op::Clamp { a, lo, hi } => elementwise::clamp_backward(self, *a, *lo, *hi, g),
            Op::Powf { a, exponent } => elementwise::powf_backward(self, *a, *exponent, g),
            Op::MatMul { a, b, geom } => matmul::matmul_backward(self, *a, *b, geom, g),
            Op::Conv2d { x, w, bias, geom } => conv::conv2d_backward(self, *x, *w, *bias, geom, g),
            Op::Softmax { a, axis } => nn::softmax_backward(self, *a, *axis, out, g),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => nn::layer_norm_backward(self, *x, *gamma, *beta, mean, rstd, g),
            Op::Reshape { a } => self.add(*a, g),
            Op::Permute { a, perm } => layout::permute_backward(self, *a, perm, node.value.shape(), g),
            Op::Narrow { a, axis, start } => layout::narrow_backward(self, *a, *axis, *start, node.value.shape(), g),
            Op::Concat { parts, axis } => layout::concat_backward(self, parts, *axis, g),
            Op::Roll { a, axis, shift } => layout::roll_backward(self, *a, *axis, *shift, g),
            Op::Gather { table, indices } => layout::gather_backward(self, *table, indices, g),
            Op::ForwardDiff { a, axis } => layout::forward_diff_backward(self, *a, *axis, g),
            Op::Mean { a, axes } => reduce::mean_backward(self, *a, axes, g),
            Op::Sum { a } => {
                let n = graph.value(*a).numel();
                let c = vec![g[0]; n];
                self.add(*a, &c);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let m = g.mean_all(sq).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn release_keeps_selected_values() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.scale(x, 2.0).unwrap();
        let z = g.add_scalar(y, 1.0).unwrap();
        g.release_except(&[z]);
        assert_eq!(g.value(z).data(), &[3.0, 5.0, 7.0]);
        assert_eq!(g.value(y).numel(), 0);
        assert!(!g.requires_grad(z));
        let w = g.add(z, x).unwrap();
        assert_eq!(g.value(w).data(), &[4.0, 7.0, 10.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let c = g.constant(Tensor::new([2], vec![3.0, 4.0]).unwrap());
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
        assert!(g.grad(c).is_none());
    }
}
