use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    backward_into, init_params, lr_at, score_pair, sgd_step, Gradients, InputNorm, ScorerConfig, ScorerParams,
};
use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::rng;

/// Minimum validation-AUC gain that resets the patience counter.
const MIN_IMPROVEMENT: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct PairSample<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

fn validation_auc(params: &ScorerParams, val: &[PairSample]) -> Result<f64> {
    let scored = val
        .iter()
        .map(|s| Ok((score_pair(params, s.a, s.b)?, s.positive)))
        .collect::<Result<Vec<(f64, bool)>>>()?;
    roc_auc(&scored)
}

fn dropout_mask(r: &mut rng::Rng, len: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if r.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Minibatch SGD with step-decayed learning rate and patience-based early
/// stopping on validation AUC. Returns the parameters of the best epoch.
pub fn train(cfg: &ScorerConfig, train: &[PairSample], val: &[PairSample]) -> Result<(ScorerParams, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::validation("training needs non-empty train and validation sets"));
    }
    let n_pos = train.iter().filter(|s| s.positive).count();
    if 2 * n_pos != train.len() {
        log::warn!("training set is unbalanced: {n_pos} positives of {}", train.len());
    }

    let mut params = init_params(cfg)?;
    if cfg.standardize {
        let vectors = train.iter().flat_map(|s| [s.a, s.b]);
        params.input_norm = Some(InputNorm::fit(vectors, cfg.input_dim));
    }
    let mut order_rng = rng::stream(cfg.seed, 1);
    let mut dropout_rng = rng::stream(cfg.seed, 2);
    let mut grads = Gradients::zeros(&params);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut stale = 0usize;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut order_rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let s = &train[i];
                let mask = (cfg.dropout_p > 0.0)
                    .then(|| dropout_mask(&mut dropout_rng, params.hidden1.out_dim, cfg.dropout_p));
                total_loss += backward_into(&params, s.a, s.b, s.positive, mask.as_deref(), &mut grads)?;
            }
            sgd_step(&mut params, &grads, lr / batch.len() as f64);
        }
        let train_loss = total_loss / train.len() as f64;
        if !train_loss.is_finite() || !params.is_finite() {
            log::warn!("training diverged at epoch {epoch}");
            stop_reason = StopReason::Diverged;
            break;
        }
        let val_auc = validation_auc(&params, val)?;
        log::info!("epoch {epoch}: lr {lr} loss {train_loss:.5} val auc {val_auc:.5}");
        epochs.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_auc,
        });

        if val_auc > best.2 + MIN_IMPROVEMENT {
            best = (params.clone(), epoch, val_auc);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    let (params, best_epoch, best_val_auc) = best;
    if epochs.is_empty() {
        return Err(Error::validation("training diverged in the first epoch"));
    }
    Ok((
        params,
        TrainLog {
            epochs,
            stop_reason,
            best_epoch,
            best_val_auc,
        },
    ))
}
