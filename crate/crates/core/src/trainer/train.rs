use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ursct_tensor::Graph;

use super::adam::Adam;
use super::checkpoint::{save_checkpoint, TrainState};
use super::schedule::{lr_for_epoch, lr_for_step};
use crate::config::{RunConfig, ScheduleUnit};
use crate::data::{make_batches, ImagePair};
use crate::error::{Error, Result};
use crate::losses::{min_side_for_scales, total_loss, LossValues};
use crate::model::{Mode, Urscht};
use crate::params::ParamStore;

pub const LOG_HEADER: &str = "epoch,lr,L_C,L_gd,L_M,L_sum";

/// Per-epoch means of the loss components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossValues,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where the log and checkpoints go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Continue from this state instead of a fresh initialization.
    pub resume: Option<TrainState>,
    /// Stop once this many epochs are complete, without changing the schedule.
    pub stop_after: Option<usize>,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub epochs: Vec<EpochLog>,
    /// `L_sum` of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Fresh training state: initialized parameters, empty moments, seeded generator.
pub fn initial_state(cfg: &RunConfig) -> Result<TrainState> {
    let model = Urscht::new(cfg.model.clone())?;
    let seed = cfg.train.seed();
    Ok(TrainState {
        params: model.init_params(seed)?,
        moments_m: Default::default(),
        moments_v: Default::default(),
        step: 0,
        epoch: 0,
        rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)),
        config_text: cfg.to_text(),
    })
}

fn check_dataset(cfg: &RunConfig, pairs: &[ImagePair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::data("training dataset is empty"));
    }
    let want = [3, cfg.model.image_height, cfg.model.image_width];
    for p in pairs {
        let Some(r) = &p.reference else {
            return Err(Error::data(format!("training pair `{}` has no reference image", p.id)));
        };
        if p.raw.shape() != want || r.shape() != want {
            return Err(Error::data(format!(
                "training pair `{}` is {:?}, expected {want:?}",
                p.id,
                p.raw.shape()
            )));
        }
    }
    let side = cfg.model.image_height.min(cfg.model.image_width);
    if side < min_side_for_scales(cfg.loss.ms_ssim_scales) {
        return Err(Error::config(format!(
            "loss.ms_ssim_scales = {} needs images of at least {} px, got {side}",
            cfg.loss.ms_ssim_scales,
            min_side_for_scales(cfg.loss.ms_ssim_scales)
        )));
    }
    Ok(())
}

fn check_params(model: &Urscht, params: &ParamStore<f32>) -> Result<()> {
    let specs = model.param_specs();
    if specs.len() != params.len() {
        return Err(Error::config(format!(
            "checkpoint has {} tensors, model expects {}",
            params.len(),
            specs.len()
        )));
    }
    for s in &specs {
        let t = params.get(&s.name)?;
        if t.shape() != s.shape.as_slice() {
            return Err(Error::config(format!(
                "checkpoint tensor `{}` is {:?}, model expects {:?}",
                s.name,
                t.shape(),
                s.shape
            )));
        }
    }
    Ok(())
}

pub fn log_csv(epochs: &[EpochLog]) -> String {
    format!("{LOG_HEADER}\n{}", log_rows(epochs))
}

fn log_rows(epochs: &[EpochLog]) -> String {
    let mut s = String::new();
    for e in epochs {
        let l = &e.losses;
        writeln!(
            s,
            "{},{:e},{:.8},{:.8},{:.8},{:.8}",
            e.epoch, e.lr, l.charbonnier, l.gradient, l.ms_ssim, l.total
        )
        .unwrap();
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rows of an existing log up to and including `epoch`, so a resumed run continues it.
fn kept_log_rows(path: &Path, epoch: u64) -> String {
    let Ok(text) = std::fs::read_to_string(path) else {
        return String::new();
    };
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return String::new();
    }
    lines
        .take_while(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<u64>().ok())
                .is_some_and(|e| e <= epoch)
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Forward, loss, backward and Adam update for every batch of every remaining epoch.
pub fn train(cfg: &RunConfig, pairs: &[ImagePair], opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Urscht::new(cfg.model.clone())?;
    let tc = &cfg.train;
    let mut state = match &opts.resume {
        Some(s) => s.clone(),
        None => initial_state(cfg)?,
    };
    check_params(&model, &state.params)?;
    if tc.epochs > 0 {
        check_dataset(cfg, pairs)?;
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("config.txt"), &cfg.to_text())?;
    }
    let prior_log = match &opts.out_dir {
        Some(dir) if state.epoch > 0 => kept_log_rows(&dir.join("train_log.csv"), state.epoch),
        _ => String::new(),
    };
    let mut adam = Adam::<f32>::new(tc.beta1, tc.beta2, tc.adam_eps);
    adam.t = state.step;
    adam.m = std::mem::take(&mut state.moments_m);
    adam.v = std::mem::take(&mut state.moments_v);

    let steps_per_epoch = pairs.len().div_ceil(tc.batch_size);
    let last = opts.stop_after.map_or(tc.epochs, |s| s.min(tc.epochs));
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    for epoch in state.epoch as usize..last {
        let batches = make_batches(pairs, tc.batch_size, tc.shuffle, tc.seed(), epoch as u64, tc.hflip)?;
        let epoch_lr = lr_for_epoch(tc, epoch);
        let mut sum = LossValues::default();
        let mut lr = epoch_lr;
        for batch in &batches {
            if tc.schedule_unit == ScheduleUnit::Step {
                lr = lr_for_step(tc, adam.t, steps_per_epoch);
            }
            let mut g = Graph::<f32>::new();
            let bound = state.params.bind(&mut g, true);
            let x = g.constant(batch.raw.clone());
            let y = g.constant(batch.reference.clone().expect("checked by check_dataset"));
            let out = model.forward(&mut g, &bound, x, Mode::Train(&mut state.rng))?;
            let terms = total_loss(&mut g, out, y, &cfg.loss)?;
            let v = terms.values(&g)?;
            if !v.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {}", adam.t + 1)));
            }
            g.backward(terms.total)?;
            let grads = state.params.grads(&g, &bound)?;
            adam.step(&mut state.params, &grads, lr)?;
            step_losses.push(v.total);
            sum.charbonnier += v.charbonnier;
            sum.gradient += v.gradient;
            sum.ms_ssim += v.ms_ssim;
            sum.total += v.total;
        }
        let n = batches.len() as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            losses: LossValues {
                charbonnier: sum.charbonnier / n,
                gradient: sum.gradient / n,
                ms_ssim: sum.ms_ssim / n,
                total: sum.total / n,
            },
        };
        if opts.verbose {
            eprintln!(
                "epoch {:>4}  lr {:.3e}  L_C {:.5}  L_gd {:.5}  L_M {:.5}  L_sum {:.5}",
                log.epoch, log.lr, log.losses.charbonnier, log.losses.gradient, log.losses.ms_ssim, log.losses.total
            );
        }
        epochs.push(log);
        state.epoch = epoch as u64 + 1;
        state.step = adam.t;
        if let Some(dir) = &opts.out_dir {
            write(
                &dir.join("train_log.csv"),
                &format!("{LOG_HEADER}\n{prior_log}{}", log_rows(&epochs)),
            )?;
            if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 {
                let snapshot = TrainState {
                    moments_m: adam.m.clone(),
                    moments_v: adam.v.clone(),
                    ..state.clone()
                };
                save_checkpoint(&snapshot, &dir.join(format!("epoch_{:04}.ursct", epoch + 1)))?;
            }
        }
    }
    state.step = adam.t;
    state.moments_m = adam.m;
    state.moments_v = adam.v;
    state.config_text = cfg.to_text();
    if let Some(dir) = &opts.out_dir {
        write(
            &dir.join("train_log.csv"),
            &format!("{LOG_HEADER}\n{prior_log}{}", log_rows(&epochs)),
        )?;
        save_checkpoint(&state, &dir.join("last.ursct"))?;
    }
    Ok(TrainOutcome {
        state,
        epochs,
        step_losses,
    })
}
