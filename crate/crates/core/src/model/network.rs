//! The full encoder / bottleneck / decoder network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ursct_tensor::{Element, Graph, Tensor, Var};

use crate::config::{MaskPolicy, ModelConfig};
use crate::error::{Error, Result};
use crate::model::attention::AttentionDims;
use crate::model::block::{layer_specs, rsct_layer, LayerSpec};
use crate::model::layers::{
    downsample, downsample_specs, patch_embed, patch_embed_specs, skip_fuse, skip_fuse_specs, to_rgb, to_rgb_specs,
    upsample, upsample_specs,
};
use crate::params::{Bound, ParamSpec, ParamStore};

/// Number of encoder (and decoder) stages.
pub const STAGES: usize = 3;

/// Forward-pass mode. Training enables skip-path dropout drawn from the given generator.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// Intermediate feature maps of one forward pass, all `[B, h, w, c]` except `output`.
#[derive(Clone, Debug)]
pub struct StageTensors {
    pub embed: Var,
    /// Encoder layer outputs before downsampling, shallowest first.
    pub encoder: Vec<Var>,
    pub bottleneck: Var,
    /// Decoder outputs after upsampling; the last is the full-resolution feature map.
    pub decoder: Vec<Var>,
    /// `[B, 3, H, W]`, unclamped.
    pub output: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Urscht {
    cfg: ModelConfig,
}

impl Urscht {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn layer(&self, channels: usize, masked: bool) -> LayerSpec {
        let c = &self.cfg;
        LayerSpec {
            dims: AttentionDims {
                channels,
                heads: c.num_heads,
                window: c.window_size,
            },
            depth: c.layer_depth,
            mlp_ratio: c.mlp_ratio,
            variant: c.variant,
            attn_scale: c.attn_scale,
            masked,
        }
    }

    fn encoder_masked(&self) -> bool {
        self.cfg.mask_policy == MaskPolicy::AllShifted
    }

    /// Channel width of encoder stage `i`; the bottleneck runs at `width(STAGES)`.
    pub fn width(&self, i: usize) -> usize {
        self.cfg.embed_dim << i
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = self.cfg.embed_dim;
        let enc = self.encoder_masked();
        let mut v = patch_embed_specs(self.cfg.patch_size, c);
        for i in 0..STAGES {
            v.extend(layer_specs(&format!("encoder.{i}"), &self.layer(self.width(i), enc)));
            v.extend(downsample_specs(&format!("encoder.{i}.downsample"), self.width(i)));
        }
        v.extend(layer_specs("bottleneck", &self.layer(self.width(STAGES), enc)));
        v.extend(upsample_specs("bottleneck.upsample", self.width(STAGES), false));
        for i in 0..STAGES {
            let ch = self.width(STAGES - 1 - i);
            v.extend(skip_fuse_specs(&format!("decoder.{i}.fuse"), ch));
            v.extend(layer_specs(&format!("decoder.{i}"), &self.layer(ch, true)));
            v.extend(upsample_specs(&format!("decoder.{i}.upsample"), ch, i + 1 == STAGES));
        }
        v.extend(to_rgb_specs(c));
        v
    }

    pub fn init_params<F: Element>(&self, seed: u64) -> Result<ParamStore<F>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParamStore::init(&self.param_specs(), &mut rng)
    }

    /// Checks that an `h x w` input survives patching, three halvings and windowing.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let unit = self.cfg.patch_size << STAGES;
        let t = self.cfg.window_size;
        for (name, n) in [("height", h), ("width", w)] {
            if n == 0 || n % unit != 0 || !(n / unit).is_multiple_of(t) {
                return Err(Error::config(format!(
                    "input {name} {n} must be a multiple of {}",
                    unit * t
                )));
            }
        }
        Ok(())
    }

    pub fn forward<F: Element>(&self, g: &mut Graph<F>, p: &Bound, image: Var, mode: Mode<'_>) -> Result<Var> {
        Ok(self.run(g, p, image, mode, false)?.output)
    }

    pub fn forward_stages<F: Element>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        image: Var,
        mode: Mode<'_>,
    ) -> Result<StageTensors> {
        self.run(g, p, image, mode, false)
    }

    fn run<F: Element>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        image: Var,
        mut mode: Mode<'_>,
        release: bool,
    ) -> Result<StageTensors> {
        let shape = g.shape(image).to_vec();
        match shape[..] {
            [_, 3, h, w] => self.check_input(h, w)?,
            _ => return Err(Error::config(format!("expected a [B, 3, H, W] image, got {shape:?}"))),
        }
        let drop = self.cfg.skip_drop_ratio;
        let enc_masked = self.encoder_masked();
        let mut live: Vec<Var> = Vec::new();
        let settle = |g: &mut Graph<F>, keep: &[Var]| {
            if release {
                g.release_except(keep);
            }
        };

        let embed = patch_embed(g, p, image, self.cfg.patch_size)?;
        let mut z = embed;
        let mut encoder = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            let spec = self.layer(self.width(i), enc_masked);
            let f = rsct_layer(g, p, &format!("encoder.{i}"), z, &spec)?;
            encoder.push(f);
            z = downsample(g, p, &format!("encoder.{i}.downsample"), f)?;
            live.clear();
            live.extend(&encoder);
            live.push(z);
            settle(g, &live);
        }
        let bottleneck = rsct_layer(g, p, "bottleneck", z, &self.layer(self.width(STAGES), enc_masked))?;
        z = upsample(g, p, "bottleneck.upsample", bottleneck, false)?;
        let mut decoder = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            let skip = encoder[STAGES - 1 - i];
            let ch = self.width(STAGES - 1 - i);
            let rng = match &mut mode {
                Mode::Train(r) => Some(&mut **r),
                Mode::Eval => None,
            };
            let fused = skip_fuse(g, p, &format!("decoder.{i}.fuse"), z, skip, drop, rng)?;
            let f = rsct_layer(g, p, &format!("decoder.{i}"), fused, &self.layer(ch, true))?;
            z = upsample(g, p, &format!("decoder.{i}.upsample"), f, i + 1 == STAGES)?;
            decoder.push(z);
            live.clear();
            live.extend(&encoder);
            live.push(z);
            settle(g, &live);
        }
        let output = to_rgb(g, p, z)?;
        Ok(StageTensors {
            embed,
            encoder,
            bottleneck,
            decoder,
            output,
        })
    }

    /// Inference on `[B, 3, H, W]` with the output clamped to `[0, 1]`.
    ///
    /// Intermediate activations are dropped as soon as they are consumed.
    pub fn enhance<F: Element>(&self, params: &ParamStore<F>, image: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(image.clone());
        let out = self.run(&mut g, &p, x, Mode::Eval, true)?.output;
        let out = g.clamp(out, 0.0, 1.0)?;
        Ok(g.value(out).clone())
    }

    /// [`Urscht::enhance`] on a single `[3, H, W]` image.
    pub fn enhance_image<F: Element>(&self, params: &ParamStore<F>, image: &Tensor<F>) -> Result<Tensor<F>> {
        let mut shape = vec![1];
        shape.extend_from_slice(image.shape());
        let out = self.enhance(params, &image.reshape(shape)?)?;
        Ok(out.reshape(image.shape().to_vec())?)
    }
}
