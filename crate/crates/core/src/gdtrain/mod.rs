//! Gradient descent: relative loss frame, loss-based learning rate, step-size
//! condition and the GD smoothed margin `γ̂`.

pub mod constants;
pub mod frame;
pub mod gamma_hat;
pub mod scheduler;
pub mod trainer;

pub use constants::{sample_constants, CEtaForm, S5Check, S5Constants, SmoothnessConstants};
pub use frame::{gd_step, relative_loss, RelativeLossFrame, Q_THRESHOLD};
pub use gamma_hat::{GammaHat, GammaHatGrid, GammaHatValue};
pub use scheduler::{loss_based_lr_epoch, EpochOutcome, LrSchedulerConfig, LrSchedulerState};
pub use trainer::{direct_replay, EpochRecord, GdConfig, GdMode, GdTheory, GdTrainer};
