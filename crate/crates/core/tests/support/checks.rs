//! Measurements shared by the model tests and the acceptance runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ursct::config::{AttnScale, ModelConfig, Variant};
use ursct::model::attention::{window_attention, AttentionDims};
use ursct::model::block::{block_specs, mask_var, rsct_block, LayerSpec};
use ursct::model::window::{cyclic_shift, window_merge, window_partition};
use ursct::params::{ParamSpec, ParamStore};
use ursct::Urscht;
use ursct_tensor::{Graph, Tensor};

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], spread: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-spread..spread)).collect(),
    )
    .unwrap()
}

/// Parameters with every entry uniform in `(-spread, spread)`.
pub fn random_store(specs: &[ParamSpec], rng: &mut ChaCha8Rng, spread: f64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for s in specs {
        store.insert(&s.name, random(rng, &s.shape, spread)).unwrap();
    }
    store
}

fn eye(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|i| f64::from(u8::from(f(i / cols, i % cols))))
        .collect();
    Tensor::new([rows, cols], data).unwrap()
}

/// Region label of each pixel of a shifted `h x w` map, from the three slices
/// `[0, n-T)`, `[n-T, n-s)` and `[n-s, n)` along each axis.
pub fn region_labels(h: usize, w: usize, t: usize, s: usize) -> Vec<Vec<usize>> {
    let slices = |n: usize| [(0, n - t), (n - t, n - s), (n - s, n)];
    let mut label = vec![vec![0; w]; h];
    let mut id = 0;
    for (r0, r1) in slices(h) {
        for (c0, c1) in slices(w) {
            for row in label.iter_mut().take(r1).skip(r0) {
                for v in row.iter_mut().take(c1).skip(c0) {
                    *v = id;
                }
            }
            id += 1;
        }
    }
    label
}

pub const DIMS: AttentionDims = AttentionDims {
    channels: 8,
    heads: 2,
    window: 4,
};

/// Attention by explicit loops over windows, heads and token pairs, for the linear-QKV variant.
fn naive_attention(
    x: &Tensor<f64>,
    p: &ParamStore<f64>,
    prefix: &str,
    mask_shift: Option<usize>,
    side: usize,
) -> Vec<f64> {
    let (c, u, t) = (DIMS.channels, DIMS.heads, DIMS.window);
    let (tt, d) = (t * t, c / u);
    let nw = x.shape()[0];
    let get = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap().data().to_vec();
    let (wq, bq) = (get("qkv.weight"), get("qkv.bias"));
    let (wp, bp) = (get("proj.weight"), get("proj.bias"));
    let table = get("relative_position_bias_table");
    let xs = x.data();
    let labels = mask_shift.map(|s| region_labels(side, side, t, s));
    let per_row = side / t;
    let mut out = vec![0.0; nw * tt * c];
    for n in 0..nw {
        let tok = |i: usize, ch: usize| xs[(n * tt + i) * c + ch];
        let feat = |i: usize, col: usize| bq[col] + (0..c).map(|k| tok(i, k) * wq[k * 3 * c + col]).sum::<f64>();
        let mut merged = vec![0.0; tt * c];
        for h in 0..u {
            for i in 0..tt {
                let mut logits = vec![0.0; tt];
                for (j, l) in logits.iter_mut().enumerate() {
                    let dot: f64 = (0..d).map(|e| feat(i, h * d + e) * feat(j, c + h * d + e)).sum();
                    let (yi, xi, yj, xj) = (i / t, i % t, j / t, j % t);
                    let rel = (yi + t - 1 - yj) * (2 * t - 1) + (xi + t - 1 - xj);
                    *l = dot / (c as f64).sqrt() + table[rel * u + h];
                    if let Some(lab) = &labels {
                        let (wr, wc) = ((n % (per_row * per_row)) / per_row, n % per_row);
                        if lab[wr * t + yi][wc * t + xi] != lab[wr * t + yj][wc * t + xj] {
                            *l += -1e9;
                        }
                    }
                }
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for e in 0..d {
                    merged[i * c + h * d + e] = (0..tt)
                        .map(|j| (logits[j] - m).exp() / z * feat(j, 2 * c + h * d + e))
                        .sum();
                }
            }
        }
        for i in 0..tt {
            for o in 0..c {
                out[(n * tt + i) * c + o] = bp[o] + (0..c).map(|k| merged[i * c + k] * wp[k * c + o]).sum::<f64>();
            }
        }
    }
    out
}

/// Largest gap between library attention and the loop oracle on an 8x8 map of 4x4 windows.
pub fn attention_vs_naive(shifted: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let specs = ursct::model::attention::attention_specs("a", &DIMS, Variant::Origin);
    let p = random_store(&specs, &mut rng, 0.5);
    let side = 8;
    let x = random(&mut rng, &[4, 16, 8], 1.0);
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let mask = shifted.then(|| mask_var(&mut g, side, side, 4, 2).unwrap());
    let y = window_attention(
        &mut g,
        &bound,
        "a",
        xv,
        &DIMS,
        Variant::Origin,
        AttnScale::SqrtChannels,
        mask,
    )
    .unwrap();
    let want = naive_attention(&x, &p, "a", shifted.then_some(2), side);
    g.value(y)
        .data()
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn block_spec(variant: Variant) -> LayerSpec {
    LayerSpec {
        dims: DIMS,
        depth: 2,
        mlp_ratio: 4,
        variant,
        attn_scale: AttnScale::SqrtChannels,
        masked: true,
    }
}

/// With the attention projection and the second MLP layer zeroed, every block returns its input bit for bit.
pub fn residual_identity_exact() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    Variant::ALL.into_iter().all(|variant| {
        let spec = block_spec(variant);
        let specs = block_specs("b", &spec);
        let mut p = random_store(&specs, &mut rng, 0.5);
        for name in ["attn.proj.weight", "attn.proj.bias", "mlp.fc2.weight", "mlp.fc2.bias"] {
            let full = format!("b.{name}");
            let zeros = Tensor::zeros(p.get(&full).unwrap().shape().to_vec());
            p.set(&full, zeros).unwrap();
        }
        let z = random(&mut rng, &[2, 8, 8, 8], 2.0);
        [0, 2].into_iter().all(|shift| {
            let mut g = Graph::new();
            let bound = p.bind(&mut g, false);
            let zv = g.constant(z.clone());
            let mask = (shift > 0).then(|| mask_var(&mut g, 8, 8, 4, shift).unwrap());
            let y = rsct_block(&mut g, &bound, "b", zv, &spec, shift, mask).unwrap();
            g.value(y) == &z
        })
    })
}

/// Conv-typeI with delta kernels against the linear variant with identity QKV, sharing every other weight.
pub fn variant_equivalence_diff() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let c = DIMS.channels;
    let origin_specs = ursct::model::attention::attention_specs("a", &DIMS, Variant::Origin);
    let mut origin = random_store(&origin_specs, &mut rng, 0.5);
    origin
        .set("a.qkv.weight", eye(c, 3 * c, |r, col| col % c == r))
        .unwrap();
    origin.set("a.qkv.bias", Tensor::zeros([3 * c])).unwrap();

    let conv_specs = ursct::model::attention::attention_specs("a", &DIMS, Variant::ConvType1);
    let mut conv = random_store(&conv_specs, &mut rng, 0.5);
    for name in ["a.relative_position_bias_table", "a.proj.weight", "a.proj.bias"] {
        conv.set(name, origin.get(name).unwrap().clone()).unwrap();
    }
    conv.set(
        "a.qkv_channel.weight",
        eye(3 * c, c, |o, i| o % c == i).reshape([3 * c, c, 1, 1]).unwrap(),
    )
    .unwrap();
    conv.set("a.qkv_channel.bias", Tensor::zeros([3 * c])).unwrap();
    let mut delta = vec![0.0; 3 * c * 9];
    for o in 0..3 * c {
        delta[o * 9 + 4] = 1.0;
    }
    conv.set("a.qkv_spatial.weight", Tensor::new([3 * c, 1, 3, 3], delta).unwrap())
        .unwrap();
    conv.set("a.qkv_spatial.bias", Tensor::zeros([3 * c])).unwrap();

    let x = random(&mut rng, &[4, 16, c], 1.0);
    let run = |p: &ParamStore<f64>, variant: Variant| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mask = mask_var(&mut g, 8, 8, 4, 2).unwrap();
        let y = window_attention(
            &mut g,
            &bound,
            "a",
            xv,
            &DIMS,
            variant,
            AttnScale::SqrtChannels,
            Some(mask),
        )
        .unwrap();
        g.value(y).clone()
    };
    run(&origin, Variant::Origin)
        .max_abs_diff(&run(&conv, Variant::ConvType1))
        .unwrap()
}

/// With identity QKV and projection, changing head 0's input channels leaves head 1's output unchanged.
pub fn head_isolation_diff() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let c = DIMS.channels;
    let d = c / DIMS.heads;
    let specs = ursct::model::attention::attention_specs("a", &DIMS, Variant::Origin);
    let mut p = random_store(&specs, &mut rng, 0.5);
    p.set("a.qkv.weight", eye(c, 3 * c, |r, col| col % c == r)).unwrap();
    p.set("a.qkv.bias", Tensor::zeros([3 * c])).unwrap();
    p.set("a.proj.weight", eye(c, c, |r, col| r == col)).unwrap();
    p.set("a.proj.bias", Tensor::zeros([c])).unwrap();
    let x = random(&mut rng, &[4, 16, c], 1.0);
    let mut x2 = x.clone();
    for (i, v) in x2.data_mut().iter_mut().enumerate() {
        if i % c < d {
            *v += 0.7;
        }
    }
    let run = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = window_attention(
            &mut g,
            &bound,
            "a",
            xv,
            &DIMS,
            Variant::Origin,
            AttnScale::SqrtChannels,
            None,
        )
        .unwrap();
        g.value(y).clone()
    };
    let (a, b) = (run(&x), run(&x2));
    a.data()
        .iter()
        .zip(b.data())
        .enumerate()
        .filter(|(i, _)| i % c >= d)
        .map(|(_, (u, v))| (u - v).abs())
        .fold(0.0, f64::max)
}

/// Largest post-softmax weight between tokens of different regions, with random logits.
pub fn mask_leakage(side: usize, t: usize, s: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (per_row, tt, heads) = (side / t, t * t, 3);
    let n = per_row * per_row;
    let logits = random(&mut rng, &[1, n, heads, tt, tt], 30.0);
    let mut g = Graph::<f64>::new();
    let l = g.constant(logits);
    let m = mask_var(&mut g, side, side, t, s).unwrap();
    let l = g.add(l, m).unwrap();
    let a = g.softmax(l, 4).unwrap();
    let attn = g.value(a).data().to_vec();
    let labels = region_labels(side, side, t, s);
    let mut worst: f64 = 0.0;
    for win in 0..n {
        let (wr, wc) = (win / per_row, win % per_row);
        let lab = |k: usize| labels[wr * t + k / t][wc * t + k % t];
        for h in 0..heads {
            for i in 0..tt {
                for j in 0..tt {
                    if lab(i) != lab(j) {
                        worst = worst.max(attn[((win * heads + h) * tt + i) * tt + j]);
                    }
                }
            }
        }
    }
    worst
}

/// Partition/merge and shift/unshift on a random `[2, h, w, C]` map reproduce it exactly.
pub fn window_roundtrips_exact(h: usize, w: usize, t: usize, s: isize, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = random(&mut rng, &[2, h, w, 3], 1.0);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let parts = window_partition(&mut g, zv, t).unwrap();
    let merged = window_merge(&mut g, parts, h, w, t).unwrap();
    let shifted = cyclic_shift(&mut g, zv, s).unwrap();
    let back = cyclic_shift(&mut g, shifted, -s).unwrap();
    g.value(merged) == &z && g.value(back) == &z
}

/// Output shape of the default network on a random `size x size` image.
pub fn forward_shape(size: usize) -> (Vec<usize>, bool) {
    let cfg = ModelConfig {
        image_height: size,
        image_width: size,
        ..ModelConfig::default()
    };
    let model = Urscht::new(cfg).unwrap();
    let params = model.init_params::<f32>(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random(&mut rng, &[3, size, size], 0.5).map(|v| v + 0.5).cast::<f32>();
    let y = model.enhance_image(&params, &x).unwrap();
    (y.shape().to_vec(), y.is_finite())
}

/// Tiny network, one 64x64 pair, constant learning rate, one step per epoch.
pub fn overfit_config(steps: usize) -> ursct::RunConfig {
    let mut cfg = ursct::RunConfig {
        model: ModelConfig::tiny(),
        ..Default::default()
    };
    cfg.loss.ms_ssim_scales = 3;
    cfg.train.epochs = steps;
    cfg.train.warmup_epochs = 0;
    cfg.train.batch_size = 1;
    cfg.train.schedule = ursct::config::Schedule::Constant;
    cfg.train.shuffle = false;
    cfg.train.seed = Some(0);
    cfg.train.checkpoint_every = 0;
    cfg
}

/// `(first step loss, last step loss)` after training on a single pair.
pub fn overfit(steps: usize) -> (f64, f64) {
    let cfg = overfit_config(steps);
    let pair = super::synthetic_pair("only", 64, 64, 4);
    let out = ursct::trainer::train(&cfg, &[pair], &Default::default()).unwrap();
    (out.step_losses[0], *out.step_losses.last().unwrap())
}

/// Four short epochs over two pairs with shuffling, flips, warmup and skip dropout all active.
pub fn persistence_config() -> ursct::RunConfig {
    let mut cfg = overfit_config(4);
    cfg.train.warmup_epochs = 1;
    cfg.train.schedule = ursct::config::Schedule::WarmupCosine;
    cfg.train.shuffle = true;
    cfg.train.hflip = true;
    cfg.train.checkpoint_every = 2;
    cfg.train.seed = Some(17);
    cfg
}

pub fn persistence_pairs() -> Vec<ursct::data::ImagePair> {
    vec![
        super::synthetic_pair("a", 64, 64, 1),
        super::synthetic_pair("b", 64, 64, 2),
    ]
}

/// Two identical runs write byte-identical checkpoints.
pub fn runs_are_bitwise_identical(dir: &std::path::Path) -> bool {
    let cfg = persistence_config();
    let pairs = persistence_pairs();
    let run = |name: &str| {
        let out = dir.join(name);
        let opts = ursct::trainer::TrainOptions {
            out_dir: Some(out.clone()),
            ..Default::default()
        };
        ursct::trainer::train(&cfg, &pairs, &opts).unwrap();
        (
            std::fs::read(out.join("last.ursct")).unwrap(),
            std::fs::read(out.join("epoch_0002.ursct")).unwrap(),
            std::fs::read_to_string(out.join("train_log.csv")).unwrap(),
        )
    };
    run("one") == run("two")
}

/// Save then load reproduces the encoded state byte for byte.
pub fn checkpoint_roundtrip_is_exact(dir: &std::path::Path) -> bool {
    use ursct::trainer::checkpoint::encode;
    let cfg = persistence_config();
    let out = ursct::trainer::train(&cfg, &persistence_pairs(), &Default::default()).unwrap();
    let path = dir.join("state.ursct");
    ursct::trainer::save_checkpoint(&out.state, &path).unwrap();
    let back = ursct::trainer::load_checkpoint(&path).unwrap();
    encode(&back).unwrap() == encode(&out.state).unwrap()
        && std::fs::read(&path).unwrap() == encode(&out.state).unwrap()
}

/// Stopping after epoch `k`, reloading the checkpoint and continuing in the same directory
/// gives the uninterrupted checkpoint, log and per-step losses.
pub fn resume_matches_uninterrupted(dir: &std::path::Path, k: usize) -> bool {
    use ursct::trainer::{load_checkpoint, train, TrainOptions};
    let cfg = persistence_config();
    let pairs = persistence_pairs();
    let full_dir = dir.join(format!("full{k}"));
    let part_dir = dir.join(format!("part{k}"));
    let in_dir = |d: &std::path::Path| TrainOptions {
        out_dir: Some(d.to_path_buf()),
        ..Default::default()
    };
    let full = train(&cfg, &pairs, &in_dir(&full_dir)).unwrap();
    let first = TrainOptions {
        stop_after: Some(k),
        ..in_dir(&part_dir)
    };
    let partial = train(&cfg, &pairs, &first).unwrap();
    let second = TrainOptions {
        resume: Some(load_checkpoint(&part_dir.join("last.ursct")).unwrap()),
        ..in_dir(&part_dir)
    };
    let rest = train(&cfg, &pairs, &second).unwrap();
    let mut losses = partial.step_losses.clone();
    losses.extend(&rest.step_losses);
    let read = |d: &std::path::Path, name: &str| std::fs::read(d.join(name)).unwrap();
    losses == full.step_losses
        && read(&part_dir, "last.ursct") == read(&full_dir, "last.ursct")
        && read(&part_dir, "train_log.csv") == read(&full_dir, "train_log.csv")
}

/// Runs the tiny ablation twice; returns the table and whether both runs agree exactly.
pub fn tiny_ablation() -> (ursct::trainer::AblationTable, bool) {
    let mut cfg = persistence_config();
    cfg.train.epochs = 2;
    let train_pairs = persistence_pairs();
    let eval_pairs = vec![super::synthetic_pair("c", 64, 64, 3)];
    let a = ursct::trainer::ablate(&cfg, &train_pairs, &eval_pairs, 1).unwrap();
    let b = ursct::trainer::ablate(&cfg, &train_pairs, &eval_pairs, 1).unwrap();
    let same = a == b;
    (a, same)
}
