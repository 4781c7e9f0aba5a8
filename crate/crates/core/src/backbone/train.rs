use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackboneConfig, BackboneParams, Dropout};
use crate::error::{Error, Result};
use crate::graphio::{Dataset, ReactionRecord};
use crate::optim::{Adam, AdamConfig, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneTrainConfig {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for BackboneTrainConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            hidden: 320,
            epochs: 50,
            lr: 1e-3,
            patience: 5,
            batch_size: 32,
            dropout: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch (with dropout).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub params: BackboneParams<S>,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were returned (0 = initialization).
    pub best_epoch: usize,
}

fn record_loss<S: Scalar>(p: &BackboneParams<S>, r: &ReactionRecord) -> Result<S> {
    let emb = p.encode(r)?;
    let (atoms, bonds) = p.head_probs(&emb)?;
    let mut loss = S::zero();
    if !atoms.is_empty() {
        let s: S = atoms
            .iter()
            .zip(&r.atom_labels)
            .map(|(d, &t)| -d[t as usize].ln())
            .sum();
        loss = loss + s / S::of(atoms.len() as f64);
    }
    if !bonds.is_empty() {
        let s: S = bonds
            .iter()
            .zip(&r.bond_labels)
            .map(|(d, &t)| -d[t as usize].ln())
            .sum();
        loss = loss + s / S::of(bonds.len() as f64);
    }
    Ok(loss)
}

/// Mean per-record classification loss without dropout.
pub fn dataset_loss<S: Scalar>(p: &BackboneParams<S>, d: &Dataset) -> Result<S> {
    if d.is_empty() {
        return Ok(S::zero());
    }
    let mut total = S::zero();
    for r in &d.records {
        total = total + record_loss(p, r)?;
    }
    Ok(total / S::of(d.len() as f64))
}

/// Minibatch Adam with early stopping on validation loss. Returns the
/// parameters of the best validation epoch (the last epoch when `val` is empty).
pub fn train_backbone<S: Scalar>(
    train: &Dataset,
    val: &Dataset,
    cfg: &BackboneTrainConfig,
) -> Result<TrainOutcome<S>> {
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config("batch size must be positive and dropout in [0, 1)".into()));
    }
    let config = BackboneConfig::for_dataset(&train.header, cfg.layers, cfg.hidden);
    if !val.is_empty() && !config.matches(&val.header) {
        return Err(Error::Config("train and validation vocabularies differ".into()));
    }
    let mut params: BackboneParams<S> = BackboneParams::init(config, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let use_val = !val.is_empty();
    let mut best = (
        if use_val {
            dataset_loss(&params, val)?.to_f64_lossless()
        } else {
            f64::INFINITY
        },
        0usize,
        params.clone(),
    );
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = params.zeros_like();
            let w = S::one() / S::of(chunk.len() as f64);
            let mut batch_loss = S::zero();
            for &i in chunk {
                let dropout = (cfg.dropout > 0.0).then(|| Dropout {
                    rng: &mut rng,
                    p: cfg.dropout,
                });
                batch_loss = batch_loss + params.record_loss_and_grads(&train.records[i], w, &mut grad, dropout)?;
            }
            let batch_loss = (batch_loss * w).to_f64_lossless();
            if !batch_loss.is_finite() || !grad.all_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: "non-finite loss or gradient".into(),
                });
            }
            epoch_loss += batch_loss * chunk.len() as f64;
            adam.step(&mut params, &grad);
            if !params.all_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: "parameters diverged".into(),
                });
            }
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = if use_val {
            let v = dataset_loss(&params, val)?.to_f64_lossless();
            if !v.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: "non-finite validation loss".into(),
                });
            }
            Some(v)
        } else {
            None
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        match val_loss {
            Some(v) if v < best.0 => {
                best = (v, epoch, params.clone());
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
            None => best = (f64::INFINITY, epoch, params.clone()),
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        history,
        best_epoch: best.1,
    })
}
