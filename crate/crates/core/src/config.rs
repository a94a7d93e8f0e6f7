//! Run configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! model.window_size = 8
//! model.variant = conv_type1
//! train.epochs = 800
//! ```
//!
//! Keys are dotted `section.field` names. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// How Q, K and V are produced inside windowed attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Single linear layer C -> 3C.
    Origin,
    /// 1x1 conv C -> 3C followed by a 3x3 depthwise conv over the window.
    ConvType1,
    /// Linear QKV plus a parallel 3x3 depthwise conv on V added to the attention output.
    ConvType2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Origin, Variant::ConvType1, Variant::ConvType2];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Origin => "Origin",
            Variant::ConvType1 => "Conv-typeI",
            Variant::ConvType2 => "Conv-typeII",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Origin => "origin",
            Variant::ConvType1 => "conv_type1",
            Variant::ConvType2 => "conv_type2",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origin" => Ok(Variant::Origin),
            "conv_type1" => Ok(Variant::ConvType1),
            "conv_type2" => Ok(Variant::ConvType2),
            other => Err(Error::config(format!(
                "unknown variant `{other}` (expected origin, conv_type1 or conv_type2)"
            ))),
        }
    }
}

/// Denominator applied to `QK^T` before the softmax.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttnScale {
    /// `sqrt(C)` with C the channel width of the block.
    SqrtChannels,
    /// `sqrt(C / U)`, the per-head width.
    SqrtHeadDim,
    Fixed(f64),
}

impl AttnScale {
    pub fn denominator(self, channels: usize, heads: usize) -> f64 {
        match self {
            AttnScale::SqrtChannels => (channels as f64).sqrt(),
            AttnScale::SqrtHeadDim => ((channels / heads) as f64).sqrt(),
            AttnScale::Fixed(v) => v,
        }
    }
}

impl fmt::Display for AttnScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttnScale::SqrtChannels => f.write_str("sqrt_c"),
            AttnScale::SqrtHeadDim => f.write_str("sqrt_head_dim"),
            AttnScale::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for AttnScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt_c" => Ok(AttnScale::SqrtChannels),
            "sqrt_head_dim" => Ok(AttnScale::SqrtHeadDim),
            other => match other.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(AttnScale::Fixed(v)),
                _ => Err(Error::config(format!(
                    "attn_scale `{other}` is not sqrt_c, sqrt_head_dim or a positive number"
                ))),
            },
        }
    }
}

/// Which shifted-window blocks add the region mask to their logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskPolicy {
    AllShifted,
    DecoderOnly,
}

impl fmt::Display for MaskPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskPolicy::AllShifted => "all",
            MaskPolicy::DecoderOnly => "decoder_only",
        })
    }
}

impl FromStr for MaskPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(MaskPolicy::AllShifted),
            "decoder_only" => Ok(MaskPolicy::DecoderOnly),
            other => Err(Error::config(format!(
                "unknown mask policy `{other}` (expected all or decoder_only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub window_size: usize,
    /// Blocks per transformer layer; even, since blocks come in (window, shifted window) pairs.
    pub layer_depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub skip_drop_ratio: f64,
    pub attn_scale: AttnScale,
    pub variant: Variant,
    pub mask_policy: MaskPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_height: 256,
            image_width: 256,
            patch_size: 2,
            embed_dim: 32,
            window_size: 8,
            layer_depth: 8,
            num_heads: 8,
            mlp_ratio: 4,
            skip_drop_ratio: 0.1,
            attn_scale: AttnScale::SqrtChannels,
            variant: Variant::ConvType1,
            mask_policy: MaskPolicy::AllShifted,
        }
    }
}

impl ModelConfig {
    /// Smallest practical configuration: C=8, depth 2, two heads, 4x4 windows on 64x64 input.
    pub fn tiny() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            embed_dim: 8,
            window_size: 4,
            layer_depth: 2,
            num_heads: 2,
            ..Self::default()
        }
    }

    /// Cyclic shift used by the odd blocks of each layer.
    pub fn shift_size(&self) -> usize {
        self.window_size / 2
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if self.patch_size == 0 || self.embed_dim == 0 || self.window_size == 0 || self.num_heads == 0 {
            return fail("patch_size, embed_dim, window_size and num_heads must be positive".into());
        }
        if self.layer_depth == 0 || !self.layer_depth.is_multiple_of(2) {
            return fail(format!(
                "layer_depth must be a positive even number, got {}",
                self.layer_depth
            ));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.mlp_ratio == 0 {
            return fail("mlp_ratio must be positive".into());
        }
        if !(0.0..1.0).contains(&self.skip_drop_ratio) {
            return fail(format!(
                "skip_drop_ratio must lie in [0, 1), got {}",
                self.skip_drop_ratio
            ));
        }
        let unit = 8 * self.patch_size;
        for (name, extent) in [("height", self.image_height), ("width", self.image_width)] {
            if extent == 0 || extent % unit != 0 || !(extent / unit).is_multiple_of(self.window_size) {
                return fail(format!(
                    "image {name} {extent} must be a positive multiple of 8 * patch_size * window_size = {}",
                    unit * self.window_size
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 2.0,
            epsilon: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.w1, self.w2, self.w3]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("loss epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientOperator {
    /// One-pixel forward difference, zero on the trailing edge.
    ForwardDifference,
    /// 3x3 Sobel over interior pixels.
    Sobel,
}

impl fmt::Display for GradientOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientOperator::ForwardDifference => "forward",
            GradientOperator::Sobel => "sobel",
        })
    }
}

impl FromStr for GradientOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(GradientOperator::ForwardDifference),
            "sobel" => Ok(GradientOperator::Sobel),
            other => Err(Error::config(format!(
                "unknown gradient operator `{other}` (expected forward or sobel)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub ms_ssim_scales: usize,
    pub gradient_operator: GradientOperator,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            ms_ssim_scales: 5,
            gradient_operator: GradientOperator::ForwardDifference,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    WarmupCosine,
    Constant,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::WarmupCosine => "warmup_cosine",
            Schedule::Constant => "constant",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup_cosine" => Ok(Schedule::WarmupCosine),
            "constant" => Ok(Schedule::Constant),
            other => Err(Error::config(format!(
                "unknown schedule `{other}` (expected warmup_cosine or constant)"
            ))),
        }
    }
}

/// Granularity at which the learning rate is re-evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleUnit {
    Epoch,
    Step,
}

impl fmt::Display for ScheduleUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleUnit::Epoch => "epoch",
            ScheduleUnit::Step => "step",
        })
    }
}

impl FromStr for ScheduleUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(ScheduleUnit::Epoch),
            "step" => Ok(ScheduleUnit::Step),
            other => Err(Error::config(format!(
                "unknown schedule unit `{other}` (expected epoch or step)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub min_lr: f64,
    /// `None` until resolved from the command line or environment.
    pub seed: Option<u64>,
    /// Write a checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub schedule: Schedule,
    pub schedule_unit: ScheduleUnit,
    pub shuffle: bool,
    pub hflip: bool,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            epochs: 800,
            warmup_epochs: 3,
            min_lr: 1e-6,
            seed: None,
            checkpoint_every: 50,
            schedule: Schedule::WarmupCosine,
            schedule_unit: ScheduleUnit::Epoch,
            shuffle: true,
            hflip: false,
            out_dir: PathBuf::from("runs/train"),
        }
    }
}

impl TrainConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::config(format!(
                "warmup_epochs {} must be smaller than epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr > self.min_lr && self.min_lr >= 0.0) {
            return Err(Error::config(format!(
                "need lr > min_lr >= 0, got lr {} min_lr {}",
                self.lr, self.min_lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::config("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataConfig {
    /// Dataset root holding `raw/` and `reference/`.
    pub train_dir: Option<PathBuf>,
    /// Evaluation root for ablation cells; falls back to `train_dir`.
    pub eval_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_size(key: &str, value: &str) -> Result<(usize, usize)> {
    match value.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(key, h.trim())?, parse(key, w.trim())?)),
        None => {
            let s = parse(key, value)?;
            Ok((s, s))
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let l = &mut self.loss;
        let t = &mut self.train;
        match key {
            "model.image_size" => (m.image_height, m.image_width) = parse_size(key, value)?,
            "model.patch_size" => m.patch_size = parse(key, value)?,
            "model.embed_dim" => m.embed_dim = parse(key, value)?,
            "model.window_size" => m.window_size = parse(key, value)?,
            "model.layer_depth" => m.layer_depth = parse(key, value)?,
            "model.num_heads" => m.num_heads = parse(key, value)?,
            "model.mlp_ratio" => m.mlp_ratio = parse(key, value)?,
            "model.skip_drop_ratio" => m.skip_drop_ratio = parse(key, value)?,
            "model.attn_scale" => m.attn_scale = value.parse()?,
            "model.variant" => m.variant = value.parse()?,
            "model.mask" => m.mask_policy = value.parse()?,
            "loss.w1" => l.weights.w1 = parse(key, value)?,
            "loss.w2" => l.weights.w2 = parse(key, value)?,
            "loss.w3" => l.weights.w3 = parse(key, value)?,
            "loss.epsilon" => l.weights.epsilon = parse(key, value)?,
            "loss.ms_ssim_scales" => l.ms_ssim_scales = parse(key, value)?,
            "loss.gradient_operator" => l.gradient_operator = value.parse()?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.beta1" => t.beta1 = parse(key, value)?,
            "train.beta2" => t.beta2 = parse(key, value)?,
            "train.adam_eps" => t.adam_eps = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.warmup_epochs" => t.warmup_epochs = parse(key, value)?,
            "train.min_lr" => t.min_lr = parse(key, value)?,
            "train.seed" => t.seed = Some(parse(key, value)?),
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "train.schedule" => t.schedule = value.parse()?,
            "train.schedule_unit" => t.schedule_unit = value.parse()?,
            "train.shuffle" => t.shuffle = parse_bool(key, value)?,
            "train.hflip" => t.hflip = parse_bool(key, value)?,
            "train.out_dir" => t.out_dir = PathBuf::from(value),
            "data.train_dir" => self.data.train_dir = Some(PathBuf::from(value)),
            "data.eval_dir" => self.data.eval_dir = Some(PathBuf::from(value)),
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Every effective setting, in a form `parse_str` reads back.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let l = &self.loss;
        let t = &self.train;
        let mut pairs = vec![
            ("model.image_size", format!("{}x{}", m.image_height, m.image_width)),
            ("model.patch_size", m.patch_size.to_string()),
            ("model.embed_dim", m.embed_dim.to_string()),
            ("model.window_size", m.window_size.to_string()),
            ("model.layer_depth", m.layer_depth.to_string()),
            ("model.num_heads", m.num_heads.to_string()),
            ("model.mlp_ratio", m.mlp_ratio.to_string()),
            ("model.skip_drop_ratio", m.skip_drop_ratio.to_string()),
            ("model.attn_scale", m.attn_scale.to_string()),
            ("model.variant", m.variant.to_string()),
            ("model.mask", m.mask_policy.to_string()),
            ("loss.w1", l.weights.w1.to_string()),
            ("loss.w2", l.weights.w2.to_string()),
            ("loss.w3", l.weights.w3.to_string()),
            ("loss.epsilon", l.weights.epsilon.to_string()),
            ("loss.ms_ssim_scales", l.ms_ssim_scales.to_string()),
            ("loss.gradient_operator", l.gradient_operator.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.adam_eps", t.adam_eps.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.warmup_epochs", t.warmup_epochs.to_string()),
            ("train.min_lr", t.min_lr.to_string()),
        ];
        if let Some(seed) = t.seed {
            pairs.push(("train.seed", seed.to_string()));
        }
        pairs.extend([
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("train.schedule", t.schedule.to_string()),
            ("train.schedule_unit", t.schedule_unit.to_string()),
            ("train.shuffle", t.shuffle.to_string()),
            ("train.hflip", t.hflip.to_string()),
            ("train.out_dir", t.out_dir.display().to_string()),
        ]);
        if let Some(d) = &self.data.train_dir {
            pairs.push(("data.train_dir", d.display().to_string()));
        }
        if let Some(d) = &self.data.eval_dir {
            pairs.push(("data.eval_dir", d.display().to_string()));
        }
        pairs
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.weights.validate()?;
        if self.loss.ms_ssim_scales == 0 {
            return Err(Error::config("loss.ms_ssim_scales must be at least 1"));
        }
        self.train.validate()
    }
}
