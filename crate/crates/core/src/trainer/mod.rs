//! Optimization: learning-rate schedule, Adam, checkpoints, the training loop and the ablation grid.

mod ablate;
mod adam;
pub mod checkpoint;
mod schedule;
mod train;

pub use ablate::{ablate, AblationCell, AblationTable, LOSS_SETS, REFERENCE_PSNR, REFERENCE_SSIM};
pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, TrainState};
pub use schedule::{lr_at, lr_for_epoch, lr_for_step};
pub use train::{initial_state, log_csv, train, EpochLog, TrainOptions, TrainOutcome, LOG_HEADER};
