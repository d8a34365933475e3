use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsReport};
use crate::error::{Error, Result};
use crate::model::{CprGcnModel, LabelPrediction, ModelConfig, TreeInput};
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tape};

/// How the checkpoint kept at the end of training is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Selection {
    /// Best micro precision on the evaluation fold itself.
    HeldOut,
    /// Best micro precision on a slice of the training trees that is then
    /// excluded from training.
    Validation { fraction: f64 },
    /// Parameters after the final epoch.
    LastEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Trees per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            seed: 0,
            selection: Selection::HeldOut,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Node-weighted mean training loss over the epoch's batches.
    pub loss: f64,
    /// Micro precision on the selection set, when there is one.
    pub selection_precision: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Loss of the untrained model over the training set.
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub struct TrainOutcome {
    pub model: CprGcnModel,
    pub log: TrainLog,
}

/// Predicted class per node for every tree, evaluated in batches.
pub fn predict_all(model: &CprGcnModel, trees: &[&TreeInput], batch: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(trees.len());
    for chunk in trees.chunks(batch.max(1)) {
        let tape = Tape::new();
        let params = model.params.bind(&tape);
        let logits = model.forward(&tape, &params, chunk)?;
        let pred = LabelPrediction::from_logits(logits.value().clone());
        let mut offset = 0;
        for t in chunk {
            out.push(pred.classes[offset..offset + t.len()].to_vec());
            offset += t.len();
        }
    }
    Ok(out)
}

/// Metrics of `model` over labeled trees.
pub fn evaluate(model: &CprGcnModel, trees: &[&TreeInput]) -> Result<MetricsReport> {
    let pred = predict_all(model, trees, 8)?;
    let truth: Vec<usize> = trees.iter().flat_map(|t| t.labels.iter().copied()).collect();
    compute_metrics(&pred.concat(), &truth)
}

/// Node-weighted mean loss over trees, evaluated in batches.
pub fn mean_loss(model: &CprGcnModel, trees: &[&TreeInput], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut nodes = 0;
    for chunk in trees.chunks(batch.max(1)) {
        let n: usize = chunk.iter().map(|t| t.len()).sum();
        total += model.loss(chunk)? * n as f64;
        nodes += n;
    }
    Ok(total / nodes.max(1) as f64)
}

fn dump_diagnostics(params: &ParamStore) {
    for (name, t) in params.iter() {
        let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        log::error!("  {name} {:?} norm {norm:.6e} finite {}", t.shape(), t.is_finite());
    }
}

/// Trains a fresh model end to end with Adam. `selection` holds the trees
/// used to pick the kept checkpoint (ignored for [`Selection::LastEpoch`]).
pub fn train(
    model_config: &ModelConfig,
    optimizer: &AdamConfig,
    config: &TrainConfig,
    train_set: &[&TreeInput],
    selection: &[&TreeInput],
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut model = CprGcnModel::new(model_config.clone(), config.seed)?;
    let mut adam = AdamState::new(&model.params, optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_0dde);
    let initial_loss = mean_loss(&model, train_set, config.batch_size)?;
    let use_selection = !matches!(config.selection, Selection::LastEpoch) && !selection.is_empty();

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut nodes = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TreeInput> = chunk.iter().map(|&i| train_set[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&batch)?;
            if !loss.is_finite() {
                log::error!("non-finite loss {loss} at epoch {epoch}, batch {b}; parameters:");
                dump_diagnostics(&model.params);
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            adam.step(&mut model.params, &grads)?;
            let n: usize = batch.iter().map(|t| t.len()).sum();
            total += loss * n as f64;
            nodes += n;
        }
        let loss = total / nodes.max(1) as f64;
        let selection_precision = if use_selection {
            let p = evaluate(&model, selection)?.accuracy;
            if best.as_ref().is_none_or(|(b, _, _)| p > *b) {
                best = Some((p, epoch, model.params.clone()));
            }
            Some(p)
        } else {
            None
        };
        log::info!("epoch {epoch}: loss {loss:.4} selection {selection_precision:?}");
        epochs.push(EpochLog {
            epoch,
            loss,
            selection_precision,
        });
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => config.epochs,
    };
    Ok(TrainOutcome {
        model,
        log: TrainLog {
            initial_loss,
            epochs,
            best_epoch,
        },
    })
}
