mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ursct::config::{LossConfig, ModelConfig, Variant};
use ursct::losses::total_loss;
use ursct::model::window::{build_attn_mask, MASK_VALUE};
use ursct::{Mode, Urscht};
use ursct_tensor::{Graph, Tensor};

use support::checks;

#[test]
fn attention_matches_loop_oracle() {
    assert!(checks::attention_vs_naive(false) < 1e-12);
    assert!(checks::attention_vs_naive(true) < 1e-12);
}

#[test]
fn zeroed_branches_make_blocks_identity() {
    assert!(checks::residual_identity_exact());
}

#[test]
fn delta_kernels_reduce_conv_qkv_to_linear() {
    let d = checks::variant_equivalence_diff();
    assert!(d <= 1e-6, "{d}");
}

#[test]
fn heads_do_not_mix() {
    assert!(checks::head_isolation_diff() < 1e-12);
}

#[test]
fn mask_blocks_cross_region_attention() {
    for seed in 0..3 {
        let leak = checks::mask_leakage(16, 8, 4, seed);
        assert!(leak < 1e-7, "{leak}");
    }
    assert!(checks::mask_leakage(8, 4, 2, 9) < 1e-7);
}

#[test]
fn mask_agrees_with_slice_labels() {
    let (h, w, t, s) = (16, 24, 8, 4);
    let mask = build_attn_mask::<f64>(h, w, t, s).unwrap();
    let labels = checks::region_labels(h, w, t, s);
    let per_row = w / t;
    let tt = t * t;
    for (k, &v) in mask.data().iter().enumerate() {
        let (win, i, j) = (k / (tt * tt), k / tt % tt, k % tt);
        let (wr, wc) = (win / per_row, win % per_row);
        let lab = |q: usize| labels[wr * t + q / t][wc * t + q % t];
        let want = if lab(i) == lab(j) { 0.0 } else { MASK_VALUE };
        assert_eq!(v, want);
    }
}

#[test]
fn windows_and_shifts_roundtrip() {
    assert!(checks::window_roundtrips_exact(8, 12, 4, 2, 0));
    assert!(checks::window_roundtrips_exact(16, 16, 8, 4, 1));
}

#[test]
fn default_network_keeps_shape_at_128() {
    let (shape, finite) = checks::forward_shape(128);
    assert_eq!(shape, vec![3, 128, 128]);
    assert!(finite);
}

#[test]
fn stage_widths_follow_the_pyramid() {
    let model = Urscht::new(ModelConfig::tiny()).unwrap();
    let params = model.init_params::<f64>(0).unwrap();
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(Tensor::full([1, 3, 64, 64], 0.5));
    let s = model.forward_stages(&mut g, &p, x, Mode::Eval).unwrap();
    assert_eq!(g.shape(s.embed), &[1, 32, 32, 8]);
    let enc: Vec<&[usize]> = s.encoder.iter().map(|&v| g.shape(v)).collect();
    assert_eq!(enc, [&[1, 32, 32, 8][..], &[1, 16, 16, 16], &[1, 8, 8, 32]]);
    assert_eq!(g.shape(s.bottleneck), &[1, 4, 4, 64]);
    let dec: Vec<&[usize]> = s.decoder.iter().map(|&v| g.shape(v)).collect();
    assert_eq!(dec, [&[1, 16, 16, 16][..], &[1, 32, 32, 8], &[1, 64, 64, 8]]);
    assert_eq!(g.shape(s.output), &[1, 3, 64, 64]);
}

#[test]
fn rejects_indivisible_input() {
    let model = Urscht::new(ModelConfig::tiny()).unwrap();
    let params = model.init_params::<f32>(0).unwrap();
    let err = model
        .enhance_image(&params, &Tensor::full([3, 48, 64], 0.5))
        .unwrap_err();
    assert!(err.to_string().contains("multiple of 64"), "{err}");
}

#[test]
fn every_parameter_receives_a_finite_gradient() {
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            ..ModelConfig::tiny()
        };
        let model = Urscht::new(cfg).unwrap();
        let params = model.init_params::<f32>(1).unwrap();
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let pair = support::synthetic_pair("a", 64, 64, 3);
        let x = g.constant(pair.raw.reshape([1, 3, 64, 64]).unwrap());
        let y = g.constant(pair.reference.unwrap().reshape([1, 3, 64, 64]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(&mut g, &p, x, Mode::Train(&mut rng)).unwrap();
        let loss = total_loss(
            &mut g,
            out,
            y,
            &LossConfig {
                ms_ssim_scales: 3,
                ..Default::default()
            },
        )
        .unwrap();
        g.backward(loss.total).unwrap();
        let grads = params.grads(&g, &p).unwrap();
        assert_eq!(grads.len(), params.len());
        for (name, gr) in &grads {
            assert!(gr.is_finite(), "{variant}: {name}");
            assert!(
                gr.data().iter().any(|&v| v != 0.0),
                "{variant}: {name} has an all-zero gradient"
            );
        }
    }
}

#[test]
fn eval_is_deterministic_and_train_mode_drops() {
    let model = Urscht::new(ModelConfig::tiny()).unwrap();
    let params = model.init_params::<f32>(2).unwrap();
    let pair = support::synthetic_pair("a", 64, 64, 1);
    let a = model.enhance_image(&params, &pair.raw).unwrap();
    let b = model.enhance_image(&params, &pair.raw).unwrap();
    assert_eq!(a, b);

    let run = |mode: Mode<'_>| {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(pair.raw.reshape([1, 3, 64, 64]).unwrap());
        let y = model.forward(&mut g, &p, x, mode).unwrap();
        g.value(y).clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert_ne!(run(Mode::Train(&mut rng)), run(Mode::Eval));
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

    #[test]
    fn window_and_shift_roundtrips(
        (t, nh, nw) in (1usize..5, 1usize..4, 1usize..4),
        s in -9isize..10,
        seed in 0u64..1000,
    ) {
        proptest::prop_assert!(checks::window_roundtrips_exact(t * nh, t * nw, t, s, seed));
    }
}
