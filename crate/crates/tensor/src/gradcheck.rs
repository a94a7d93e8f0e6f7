//! Central finite-difference verification of analytic gradients.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Central difference step.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Coordinates probed per input (all of them if the input is smaller).
    pub probes_per_input: usize,
    /// Denominator floor for the relative error, so near-zero gradients are compared absolutely.
    pub rel_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-5,
            probes_per_input: 10,
            rel_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub probes: usize,
    pub pass: bool,
}

/// Compares `backward` against `(f(x+h) - f(x-h)) / 2h` on randomly chosen coordinates.
///
/// Non-scalar outputs are reduced with a fixed random weighting so every
/// output element contributes to the checked scalar.
pub fn gradcheck<Fun>(f: Fun, inputs: &[Tensor<f64>], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    Fun: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut weights: Option<Tensor<f64>> = None;

    let mut eval =
        |xs: &[Tensor<f64>], rng: &mut ChaCha8Rng, want_grad: bool| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
            let out = f(&mut g, &vars)?;
            let loss = if g.value(out).numel() == 1 {
                out
            } else {
                let w = weights
                    .get_or_insert_with(|| {
                        let shape = g.shape(out).to_vec();
                        let n = g.value(out).numel();
                        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                        Tensor::new(shape, data).expect("weights match output shape")
                    })
                    .clone();
                let w = g.constant(w);
                let p = g.mul(out, w)?;
                g.sum(p)?
            };
            let value = g.value(loss).item()?;
            let grads = if want_grad {
                g.backward(loss)?;
                vars.iter().map(|&v| g.grad(v).cloned()).collect()
            } else {
                Vec::new()
            };
            Ok((value, grads))
        };

    let (_, analytic) = eval(inputs, &mut rng, true)?;
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        probes: 0,
        pass: true,
    };
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= opts.probes_per_input {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, opts.probes_per_input).into_vec()
        };
        for c in coords {
            let mut xs = inputs.to_vec();
            xs[which].data_mut()[c] = input.data()[c] + opts.h;
            let (plus, _) = eval(&xs, &mut rng, false)?;
            xs[which].data_mut()[c] = input.data()[c] - opts.h;
            let (minus, _) = eval(&xs, &mut rng, false)?;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let exact = analytic[which].as_ref().map_or(0.0, |t| t.data()[c]);
            let abs = (numeric - exact).abs();
            let rel = abs / numeric.abs().max(exact.abs()).max(opts.rel_floor);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.probes += 1;
        }
    }
    report.pass = report.max_rel_err < opts.tol;
    Ok(report)
}

/// Random tensor with entries in `lo..hi`, kept at least `gap` away from each value in `avoid`.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, avoid: &[f64], gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if avoid.iter().all(|a| (v - a).abs() >= gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches element count")
}

type CaseFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Gradient check of every differentiable tensor op on small random instances.
pub fn tensor_op_suite(opts: &GradcheckOptions) -> Result<Vec<(String, GradcheckReport)>> {
    use crate::ops::conv::Conv2dConfig;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let r = &mut rng;
    let mut cases: Vec<(&str, CaseFn, Vec<Tensor<f64>>)> = Vec::new();
    let mut case = |name: &'static str, f: CaseFn, inputs: Vec<Tensor<f64>>| cases.push((name, f, inputs));

    case(
        "add",
        Box::new(|g, v| g.add(v[0], v[1])),
        vec![
            random_tensor(r, &[3, 4], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[4], -1.0, 1.0, &[], 0.0),
        ],
    );
    case(
        "sub",
        Box::new(|g, v| g.sub(v[0], v[1])),
        vec![
            random_tensor(r, &[2, 3, 4], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[3, 1], -1.0, 1.0, &[], 0.0),
        ],
    );
    case(
        "mul",
        Box::new(|g, v| g.mul(v[0], v[1])),
        vec![
            random_tensor(r, &[2, 3, 4], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[2, 1, 4], -1.0, 1.0, &[], 0.0),
        ],
    );
    case(
        "div",
        Box::new(|g, v| g.div(v[0], v[1])),
        vec![
            random_tensor(r, &[3, 4], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[3, 4], 0.5, 2.0, &[], 0.0),
        ],
    );
    case(
        "scale",
        Box::new(|g, v| g.scale(v[0], -2.5)),
        vec![random_tensor(r, &[12], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "add_scalar",
        Box::new(|g, v| g.add_scalar(v[0], 0.75)),
        vec![random_tensor(r, &[12], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "sqrt",
        Box::new(|g, v| g.sqrt(v[0])),
        vec![random_tensor(r, &[12], 0.2, 3.0, &[], 0.0)],
    );
    case(
        "abs",
        Box::new(|g, v| g.abs(v[0])),
        vec![random_tensor(r, &[12], -1.0, 1.0, &[0.0], 0.05)],
    );
    case(
        "clamp",
        Box::new(|g, v| g.clamp(v[0], -0.5, 0.5)),
        vec![random_tensor(r, &[12], -1.0, 1.0, &[-0.5, 0.5], 0.05)],
    );
    case(
        "powf",
        Box::new(|g, v| g.powf(v[0], 0.3)),
        vec![random_tensor(r, &[12], 0.2, 2.0, &[], 0.0)],
    );
    case(
        "gelu",
        Box::new(|g, v| g.gelu(v[0])),
        vec![random_tensor(r, &[12], -3.0, 3.0, &[], 0.0)],
    );
    case(
        "matmul",
        Box::new(|g, v| g.matmul(v[0], v[1])),
        vec![
            random_tensor(r, &[2, 3, 4], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[2, 4, 5], -1.0, 1.0, &[], 0.0),
        ],
    );
    case(
        "linear",
        Box::new(|g, v| g.linear(v[0], v[1], Some(v[2]))),
        vec![
            random_tensor(r, &[2, 3, 4], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[4, 6], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[6], -1.0, 1.0, &[], 0.0),
        ],
    );
    case(
        "conv2d",
        Box::new(|g, v| {
            g.conv2d(
                v[0],
                v[1],
                Some(v[2]),
                Conv2dConfig {
                    stride: 1,
                    padding: 1,
                    groups: 2,
                },
            )
        }),
        vec![
            random_tensor(r, &[2, 4, 5, 5], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[6, 2, 3, 3], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[6], -1.0, 1.0, &[], 0.0),
        ],
    );
    case(
        "conv2d_strided",
        Box::new(|g, v| {
            g.conv2d(
                v[0],
                v[1],
                None,
                Conv2dConfig {
                    stride: 2,
                    padding: 0,
                    groups: 1,
                },
            )
        }),
        vec![
            random_tensor(r, &[1, 3, 6, 6], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[4, 3, 2, 2], -1.0, 1.0, &[], 0.0),
        ],
    );
    case(
        "softmax",
        Box::new(|g, v| g.softmax(v[0], 1)),
        vec![random_tensor(r, &[2, 5, 3], -2.0, 2.0, &[], 0.0)],
    );
    case(
        "layer_norm",
        Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        vec![
            random_tensor(r, &[3, 6], -2.0, 2.0, &[], 0.0),
            random_tensor(r, &[6], 0.5, 1.5, &[], 0.0),
            random_tensor(r, &[6], -0.5, 0.5, &[], 0.0),
        ],
    );
    case(
        "layer_norm_near_constant",
        Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        vec![
            random_tensor(r, &[3, 6], 0.999, 1.001, &[], 0.0),
            random_tensor(r, &[6], 0.5, 1.5, &[], 0.0),
            random_tensor(r, &[6], -0.5, 0.5, &[], 0.0),
        ],
    );
    case(
        "reshape",
        Box::new(|g, v| g.reshape(v[0], [4, 3])),
        vec![random_tensor(r, &[2, 6], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "permute",
        Box::new(|g, v| g.permute(v[0], &[2, 0, 1])),
        vec![random_tensor(r, &[2, 3, 4], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "narrow",
        Box::new(|g, v| g.narrow(v[0], 1, 1, 2)),
        vec![random_tensor(r, &[3, 4, 2], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "concat",
        Box::new(|g, v| g.concat(&[v[0], v[1]], 1)),
        vec![
            random_tensor(r, &[2, 3], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[2, 2], -1.0, 1.0, &[], 0.0),
        ],
    );
    case(
        "roll",
        Box::new(|g, v| g.roll(v[0], 1, -2)),
        vec![random_tensor(r, &[2, 5, 3], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "gather",
        Box::new(|g, v| g.gather_rows(v[0], &[3, 0, 3, 1, 2, 3])),
        vec![random_tensor(r, &[4, 3], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "forward_diff",
        Box::new(|g, v| g.forward_diff(v[0], 2)),
        vec![random_tensor(r, &[2, 3, 4], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "mean",
        Box::new(|g, v| g.mean(v[0], &[0, 2])),
        vec![random_tensor(r, &[2, 3, 4], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "sum",
        Box::new(|g, v| g.sum(v[0])),
        vec![random_tensor(r, &[12], -1.0, 1.0, &[], 0.0)],
    );
    case(
        "conv_softmax_mean",
        Box::new(|g, v| {
            let c = g.conv2d(
                v[0],
                v[1],
                None,
                Conv2dConfig {
                    padding: 1,
                    ..Default::default()
                },
            )?;
            let s = g.softmax(c, 3)?;
            let sq = g.mul(s, s)?;
            g.mean_all(sq)
        }),
        vec![
            random_tensor(r, &[1, 2, 4, 4], -1.0, 1.0, &[], 0.0),
            random_tensor(r, &[3, 2, 3, 3], -1.0, 1.0, &[], 0.0),
        ],
    );

    cases
        .into_iter()
        .map(|(name, f, inputs)| Ok((name.to_string(), gradcheck(f, &inputs, opts)?)))
        .collect()
}
