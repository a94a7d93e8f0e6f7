//! Finite-difference checks of the model blocks, the full network and the losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ursct_tensor::gradcheck::{gradcheck, random_tensor, GradcheckOptions, GradcheckReport};
use ursct_tensor::{Graph, Tensor, Var};

use crate::config::{AttnScale, GradientOperator, LossConfig, MaskPolicy, ModelConfig, Variant};
use crate::error::Result;
use crate::losses::{charbonnier, gradient_loss, ms_ssim_loss, total_loss};
use crate::model::attention::AttentionDims;
use crate::model::block::{block_specs, mask_var, rsct_block, LayerSpec};
use crate::model::{Mode, Urscht};
use crate::params::{Bound, ParamSpec};

pub type Suite = Vec<(String, GradcheckReport)>;

/// Network used by the full-model check: C=8, two heads, 2x2 windows on 32x32 input.
pub fn gradcheck_model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        image_height: 32,
        image_width: 32,
        patch_size: 2,
        embed_dim: 8,
        window_size: 2,
        layer_depth: 2,
        num_heads: 2,
        mlp_ratio: 2,
        skip_drop_ratio: 0.1,
        attn_scale: AttnScale::SqrtChannels,
        variant,
        mask_policy: MaskPolicy::AllShifted,
    }
}

/// Parameters drawn wider than the training init so every path carries a visible gradient.
fn random_params(specs: &[ParamSpec], scale: f64, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    specs
        .iter()
        .map(|s| {
            let t = random_tensor(rng, &s.shape, -scale, scale, &[], 0.0);
            if s.name.contains("norm") && s.name.ends_with(".weight") {
                t.map(|v| 1.0 + v)
            } else {
                t
            }
        })
        .collect()
}

fn bind_inputs(specs: &[ParamSpec], vars: &[Var]) -> Bound {
    Bound::from_vars(specs.iter().zip(vars).map(|(s, &v)| (s.name.clone(), v)))
}

fn block_case(
    variant: Variant,
    shifted: bool,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GradcheckReport> {
    let spec = LayerSpec {
        dims: AttentionDims {
            channels: 8,
            heads: 2,
            window: 2,
        },
        depth: 2,
        mlp_ratio: 2,
        variant,
        attn_scale: AttnScale::SqrtChannels,
        masked: true,
    };
    let specs = block_specs("b", &spec);
    let mut inputs = vec![random_tensor(rng, &[1, 4, 4, 8], -1.0, 1.0, &[], 0.0)];
    inputs.extend(random_params(&specs, 0.5, rng));
    let f = |g: &mut Graph<f64>, v: &[Var]| -> ursct_tensor::Result<Var> {
        let p = bind_inputs(&specs, &v[1..]);
        let run = |g: &mut Graph<f64>| -> Result<Var> {
            let (shift, mask) = if shifted {
                (spec.shift(), Some(mask_var(g, 4, 4, 2, spec.shift())?))
            } else {
                (0, None)
            };
            rsct_block(g, &p, "b", v[0], &spec, shift, mask)
        };
        run(g).map_err(to_tensor_error)
    };
    Ok(gradcheck(f, &inputs, opts)?)
}

fn to_tensor_error(e: crate::Error) -> ursct_tensor::Error {
    match e {
        crate::Error::Tensor(t) => t,
        other => ursct_tensor::Error::Config {
            op: "model",
            msg: other.to_string(),
        },
    }
}

/// One check per attention variant, both unshifted and shifted with the region mask.
pub fn block_suite(opts: &GradcheckOptions) -> Result<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xb10c);
    let mut out = Vec::new();
    for variant in Variant::ALL {
        for shifted in [false, true] {
            let name = format!("block/{variant}/{}", if shifted { "shifted" } else { "plain" });
            out.push((name, block_case(variant, shifted, opts, &mut rng)?));
        }
    }
    Ok(out)
}

/// End-to-end check of the output image with respect to the input and every parameter tensor.
pub fn network_case(cfg: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x0de1);
    let model = Urscht::new(cfg.clone())?;
    let specs = model.param_specs();
    let shape = [1, 3, cfg.image_height, cfg.image_width];
    let mut inputs = vec![random_tensor(&mut rng, &shape, 0.0, 1.0, &[], 0.0)];
    inputs.extend(random_params(&specs, 0.2, &mut rng));
    let f = |g: &mut Graph<f64>, v: &[Var]| -> ursct_tensor::Result<Var> {
        let p = bind_inputs(&specs, &v[1..]);
        model.forward(g, &p, v[0], Mode::Eval).map_err(to_tensor_error)
    };
    Ok(gradcheck(f, &inputs, opts)?)
}

/// Every loss term and the weighted total on small image pairs.
pub fn loss_suite(opts: &GradcheckOptions) -> Result<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1055);
    let mut pair = |h: usize, w: usize| {
        let a = random_tensor(&mut rng, &[1, 3, h, w], 0.05, 0.95, &[], 0.0);
        let noise: Vec<f64> = (0..a.numel()).map(|_| rng.random_range(-0.05..0.05)).collect();
        let b = Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(&noise).map(|(v, n)| 0.8 * v + 0.1 + n).collect(),
        )
        .expect("same shape");
        vec![a, b]
    };
    let mut out = Vec::new();
    let small = pair(6, 7);
    out.push((
        "loss/charbonnier".to_string(),
        gradcheck(
            |g, v| charbonnier(g, v[0], v[1], 1e-3).map_err(to_tensor_error),
            &small,
            opts,
        )?,
    ));
    for op in [GradientOperator::ForwardDifference, GradientOperator::Sobel] {
        out.push((
            format!("loss/gradient/{op}"),
            gradcheck(
                |g, v| gradient_loss(g, v[0], v[1], op).map_err(to_tensor_error),
                &small,
                opts,
            )?,
        ));
    }
    let big = pair(24, 24);
    for scales in [1, 2] {
        out.push((
            format!("loss/ms_ssim/{scales}"),
            gradcheck(
                |g, v| ms_ssim_loss(g, v[0], v[1], scales).map_err(to_tensor_error),
                &big,
                opts,
            )?,
        ));
    }
    let cfg = LossConfig {
        ms_ssim_scales: 2,
        ..LossConfig::default()
    };
    out.push((
        "loss/total".to_string(),
        gradcheck(
            |g, v| Ok(total_loss(g, v[0], v[1], &cfg).map_err(to_tensor_error)?.total),
            &big,
            opts,
        )?,
    ));
    Ok(out)
}

/// Blocks and losses at `opts`, the full network at `network_tol`.
pub fn model_suite(opts: &GradcheckOptions, network_tol: f64) -> Result<Suite> {
    let mut out = block_suite(opts)?;
    out.extend(loss_suite(opts)?);
    let net_opts = GradcheckOptions {
        tol: network_tol,
        probes_per_input: opts.probes_per_input.min(2),
        ..opts.clone()
    };
    out.push((
        "network/conv_type1".to_string(),
        network_case(&gradcheck_model_config(Variant::ConvType1), &net_opts)?,
    ));
    Ok(out)
}
