use log::{debug, info};

use super::forward::{forward_train, LossBreakdown, Sampling};
use super::RvraeModel;
use crate::data::Window;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{adam_step, AdamConfig, AdamState, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// KL weight.
    pub lambda: f64,
    /// Latent draws per window.
    pub mc_samples: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            mc_samples: 1,
            lr: 1e-3,
            epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("`lambda` must be non-negative, got {}", self.lambda)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("`mc_samples` must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("`lr` must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation total.
    pub model: RvraeModel,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Mean deterministic (`ε = 0`) loss over `windows`.
pub fn evaluate_loss(model: &RvraeModel, windows: &[Window], lambda: f64, exec: Exec) -> Result<LossBreakdown> {
    if windows.is_empty() {
        return Err(Error::Config("no windows to evaluate".into()));
    }
    let parts = exec.map(windows, |w| forward_train(model, w, lambda, Sampling::Mean).map(|o| o.loss));
    let (mut recon, mut kl) = (0.0, 0.0);
    for p in parts {
        let p = p?;
        recon += p.reconstruction;
        kl += p.kl;
    }
    let n = windows.len() as f64;
    LossBreakdown::new(recon / n, kl / n, lambda)
}

/// Adam over shuffled windows, one update per window, with early stopping
/// on the validation total.
pub fn train(
    mut model: RvraeModel,
    train_windows: &[Window],
    val_windows: &[Window],
    config: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation windows".into()));
    }
    let mut rng = Rng::derived(config.seed, "train");
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0, model.clone());
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let last_good = model.clone();
        let diverged = |epoch| Error::Diverged {
            epoch,
            last_good: Box::new(last_good.clone()),
        };
        rng.shuffle(&mut order);
        model.params.zero_grads();
        for &i in &order {
            let out = match forward_train(
                &model,
                &train_windows[i],
                config.lambda,
                Sampling::Random {
                    rng: &mut rng,
                    samples: config.mc_samples,
                },
            ) {
                Ok(o) => o,
                Err(Error::NumericFault { op }) => {
                    debug!("non-finite `{op}` in epoch {epoch}");
                    return Err(diverged(epoch));
                }
                Err(e) => return Err(e),
            };
            let grads = out.tape.backward(out.objective)?;
            model.params.accumulate(&out.tape, &grads);
            if adam_step(&mut model.params, &mut adam).is_err() {
                return Err(diverged(epoch));
            }
        }
        let eval = |windows| match evaluate_loss(&model, windows, config.lambda, exec) {
            Err(Error::NumericFault { .. }) => Err(diverged(epoch)),
            other => other,
        };
        let train_loss = eval(train_windows)?;
        let validation = eval(val_windows)?;
        if !validation.total.is_finite() || !train_loss.total.is_finite() {
            return Err(diverged(epoch));
        }
        info!(
            "epoch {epoch}: train {:.6} validation {:.6}",
            train_loss.total, validation.total
        );
        history.push(EpochRecord {
            epoch,
            train: train_loss,
            validation,
        });
        if validation.total < best.0 {
            best = (validation.total, epoch, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                info!("early stop at epoch {epoch}, best {}", best.1);
                break;
            }
        }
    }
    let (_, best_epoch, best_model) = best;
    Ok(TrainOutcome {
        model: if best_epoch == 0 { model } else { best_model },
        history,
        best_epoch,
    })
}
