//! Loss-based learning rate `η(t) = α(t)/𝓛̄(t−1)` with multiplicative
//! accept/retry updates of `α`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedulerConfig {
    pub alpha0: f64,
    pub r_u: f64,
    pub r_d: f64,
    pub max_retries: usize,
}

impl Default for LrSchedulerConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.1,
            r_u: 2f64.powf(0.2),
            r_d: 2f64.powf(0.1),
            max_retries: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedulerState {
    pub alpha: f64,
    pub r_u: f64,
    pub r_d: f64,
    pub max_retries: usize,
    /// `log 𝓛̄` after the last accepted epoch.
    pub last_log_loss: f64,
}

impl LrSchedulerState {
    pub fn new(cfg: &LrSchedulerConfig, initial_log_loss: f64) -> Result<Self> {
        if !(cfg.alpha0 > 0.0 && cfg.r_u > 1.0 && cfg.r_d > 1.0) {
            return Err(Error::Config("scheduler needs α(0) > 0 and r_u, r_d > 1".into()));
        }
        Ok(Self {
            alpha: cfg.alpha0,
            r_u: cfg.r_u,
            r_d: cfg.r_d,
            max_retries: cfg.max_retries,
            last_log_loss: initial_log_loss,
        })
    }
}

/// Result of one accepted epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome<T> {
    pub candidate: T,
    /// `α` used for the accepted pass.
    pub alpha_used: f64,
    pub retries: usize,
    pub log_loss: f64,
}

/// Runs `train_fn(α)` and `eval_fn` (returning `log 𝓛̄`) until the loss
/// strictly decreases. On success `α ← α·r_u`; each failure sets `α ← α/r_d`
/// and retries from the same starting point. Gives up with
/// [`Error::RetryBudget`] after `max_retries` failures, leaving `α` reduced.
pub fn loss_based_lr_epoch<T, F, E>(
    state: &mut LrSchedulerState,
    mut train_fn: F,
    mut eval_fn: E,
) -> Result<EpochOutcome<T>>
where
    F: FnMut(f64) -> Result<T>,
    E: FnMut(&T) -> Result<f64>,
{
    let mut retries = 0;
    loop {
        let alpha = state.alpha;
        let candidate = train_fn(alpha)?;
        let log_loss = eval_fn(&candidate)?;
        if log_loss < state.last_log_loss {
            state.alpha *= state.r_u;
            state.last_log_loss = log_loss;
            return Ok(EpochOutcome {
                candidate,
                alpha_used: alpha,
                retries,
                log_loss,
            });
        }
        state.alpha /= state.r_d;
        retries += 1;
        if retries >= state.max_retries {
            return Err(Error::RetryBudget(retries));
        }
    }
}
