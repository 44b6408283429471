//! Epoch loop shared by the captioner and the translation model: Adam with
//! global-norm clipping, validation after every epoch, best-model selection
//! and early stopping.

use numkit::{AdamConfig, AdamState, Graph, ParamStore, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    pub patience: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 5e-4,
            clip: 5.0,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid: f64,
}

/// Trains `store` in place and leaves it at the epoch with the lowest
/// validation loss. `batches` yields this epoch's batches; `loss` builds
/// one batch loss on a fresh graph; `valid` scores the current parameters.
pub fn fit<B>(
    store: &mut ParamStore,
    sched: &TrainSchedule,
    rng: &mut ChaCha8Rng,
    mut batches: impl FnMut(&mut ChaCha8Rng) -> Vec<B>,
    mut loss: impl FnMut(&mut Graph, &ParamStore, &B) -> Result<Var>,
    mut valid: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<TrainReport> {
    let mut adam = AdamState::new(AdamConfig {
        lr: sched.lr,
        ..AdamConfig::default()
    });
    let mut report = TrainReport {
        best_valid: valid(store)?,
        ..TrainReport::default()
    };
    let mut best = store.clone();
    let mut stale = 0;
    for epoch in 1..=sched.epochs {
        let mut total = 0.0;
        let list = batches(rng);
        if list.is_empty() {
            return Err(Error::Data("no training batches".into()));
        }
        for b in &list {
            let mut g = Graph::new();
            let l = loss(&mut g, store, b)?;
            total += g.value(l).item();
            store.zero_grad();
            g.backward_into(l, store)?;
            if sched.clip > 0.0 {
                store.clip_grad_norm(sched.clip);
            }
            adam.step(store)?;
        }
        let v = valid(store)?;
        if !v.is_finite() {
            return Err(numkit::NumError::NumericDomain("validation loss").into());
        }
        report.epochs.push(EpochLog {
            epoch,
            train_loss: total / list.len() as f64,
            valid_loss: v,
        });
        if v < report.best_valid {
            report.best_valid = v;
            report.best_epoch = epoch;
            best = store.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= sched.patience {
                break;
            }
        }
    }
    *store = best;
    Ok(report)
}
