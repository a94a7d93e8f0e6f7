use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    pub(crate) fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Sqrt,
    Abs,
    Gelu,
}

impl UnaryKind {
    pub(crate) fn name(self) -> &'static str {
        match self {
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Abs => "abs",
            UnaryKind::Gelu => "gelu",
        }
    }
}

/// How the right operand of a binary op maps onto the left operand's elements.
pub(crate) enum Broadcast {
    Same,
    /// `b` is an exact trailing suffix of `a` (covers scalars).
    Suffix(usize),
    /// General right-aligned broadcast with unit extents.
    Map(Vec<usize>),
}

impl Broadcast {
    fn resolve(a: &[usize], b: &[usize]) -> Option<Self> {
        if a == b {
            return Some(Broadcast::Same);
        }
        if b.len() > a.len() {
            return None;
        }
        let offset = a.len() - b.len();
        if a[offset..] == *b {
            return Some(Broadcast::Suffix(shape::numel(b)));
        }
        let b_strides = shape::strides(b);
        let mut strides = vec![0; a.len()];
        for (i, (&bd, &bs)) in b.iter().zip(&b_strides).enumerate() {
            let ad = a[offset + i];
            if bd == ad {
                strides[offset + i] = bs;
            } else if bd != 1 {
                return None;
            }
        }
        Some(Broadcast::Map(shape::strided_offsets(a, &strides)))
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Suffix(n) => i % n,
            Broadcast::Map(m) => m[i],
        }
    }
}

#[inline]
fn gelu_cdf<F: Element>(x: F) -> F {
    let half = F::from_f64(0.5);
    half * (F::one() + (x * F::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_pdf<F: Element>(x: F) -> F {
    let inv_sqrt_2pi = F::from_f64(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * F::from_f64(0.5)).exp()
}

impl<F: Element> Graph<F> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ashape, bshape) = (self.shape(a), self.shape(b));
        let bcast = Broadcast::resolve(ashape, bshape).ok_or_else(|| Error::ShapeMismatch {
            op: kind.name(),
            lhs: ashape.to_vec(),
            rhs: bshape.to_vec(),
        })?;
        let (ad, bd) = (self.data(a), self.data(b));
        if kind == BinaryKind::Div && bd.iter().any(|v| v.is_zero()) {
            return Err(Error::DivisionByZero { op: "div" });
        }
        let out: Vec<F> = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[bcast.index(i)];
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::new(ashape.to_vec(), out)?;
        self.push(value, Op::Binary { kind, a, b, bcast })
    }

    /// `a + b`, with `b` broadcast onto `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Errors when any divisor element is exactly zero.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let factor = F::from_f64(factor);
        let value = self.value(a).map(|v| v * factor);
        self.push(value, Op::Scale { a, factor })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = F::from_f64(c);
        let value = self.value(a).map(|v| v + c);
        self.push(value, Op::AddScalar { a })
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| match kind {
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Gelu => x * gelu_cdf(x),
        });
        self.push(value, Op::Unary { kind, a })
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.data(a).iter().any(|v| *v < F::zero()) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, a)
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (F::from_f64(lo), F::from_f64(hi));
        let value = self.value(a).map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp { a, lo, hi })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.clamp(a, 0.0, f64::INFINITY)
    }

    /// `a^exponent` for nonnegative `a`.
    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var> {
        if self.data(a).iter().any(|v| *v < F::zero()) {
            return Err(Error::NonFinite { op: "powf" });
        }
        let exponent = F::from_f64(exponent);
        let value = self.value(a).map(|v| v.powf(exponent));
        self.push(value, Op::Powf { a, exponent })
    }
}

pub(crate) fn binary_backward<F: Element>(
    sink: &mut GradSink<'_, F>,
    kind: BinaryKind,
    a: Var,
    b: Var,
    bcast: &Broadcast,
    g: &[F],
) {
    let graph = sink.graph;
    let (ad, bd) = (graph.data(a), graph.data(b));
    if sink.wants(a) {
        let ga: Vec<F> = match kind {
            BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
            BinaryKind::Mul => g.iter().enumerate().map(|(i, &v)| v * bd[bcast.index(i)]).collect(),
            BinaryKind::Div => g.iter().enumerate().map(|(i, &v)| v / bd[bcast.index(i)]).collect(),
        };
        sink.add(a, &ga);
    }
    if sink.wants(b) {
        let slot = sink.slot(b);
        for (i, &v) in g.iter().enumerate() {
            let j = bcast.index(i);
            let c = match kind {
                BinaryKind::Add => v,
                BinaryKind::Sub => -v,
                BinaryKind::Mul => v * ad[i],
                BinaryKind::Div => -v * ad[i] / (bd[j] * bd[j]),
            };
            slot[j] = slot[j] + c;
        }
    }
}

pub(crate) fn unary_backward<F: Element>(sink: &mut GradSink<'_, F>, kind: UnaryKind, a: Var, out: &[F], g: &[F]) {
    let x = sink.graph.data(a);
    let two = F::from_f64(2.0);
    let ga: Vec<F> = g
        .iter()
        .enumerate()
        .map(|(i, &v)| match kind {
            // zero output only arises from a zero input, where the derivative is unbounded
            UnaryKind::Sqrt if out[i].is_zero() => F::zero(),
            UnaryKind::Sqrt => v / (two * out[i]),
            UnaryKind::Abs if x[i].is_zero() => F::zero(),
            UnaryKind::Abs => v * x[i].signum(),
            UnaryKind::Gelu => v * (gelu_cdf(x[i]) + x[i] * gelu_pdf(x[i])),
        })
        .collect();
    sink.add(a, &ga);
}

pub(crate) fn clamp_backward<F: Element>(sink: &mut GradSink<'_, F>, a: Var, lo: F, hi: F, g: &[F]) {
    let x = sink.graph.data(a);
    let ga: Vec<F> = g
        .iter()
        .zip(x)
        .map(|(&v, &xi)| if xi > lo && xi < hi { v } else { F::zero() })
        .collect();
    sink.add(a, &ga);
}

pub(crate) fn powf_backward<F: Element>(sink: &mut GradSink<'_, F>, a: Var, exponent: F, g: &[F]) {
    let x = sink.graph.data(a);
    let ga: Vec<F> = g
        .iter()
        .zip(x)
        .map(|(&v, &xi)| {
            if xi.is_zero() {
                F::zero()
            } else {
                v * exponent * xi.powf(exponent - F::one())
            }
        })
        .collect();
    sink.add(a, &ga);
}
