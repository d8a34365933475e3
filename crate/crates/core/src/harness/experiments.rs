use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::PipelineConfig;
use super::folds::{FoldSplit, NUM_FOLDS};
use super::metrics::MetricsReport;
use super::train::{evaluate, train, Selection, TrainConfig, TrainLog};
use crate::cohort::CohortSpec;
use crate::condition::ConditionConfig;
use crate::error::{Error, Result};
use crate::model::{CprGcnModel, ModelConfig, ShortcutMode, TreeInput};
use crate::tensor::AdamConfig;

/// Everything needed to reproduce an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub cohort: CohortSpec,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub training: TrainConfig,
    pub fold_seed: u64,
    pub attack_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cohort: CohortSpec::default(),
            pipeline: PipelineConfig::default(),
            model: desk_model(),
            optimizer: AdamConfig::default(),
            training: TrainConfig::default(),
            fold_seed: 0,
            attack_seed: 1,
        }
    }
}

/// Reduced-width model that trains on one CPU core in minutes.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        condition: ConditionConfig {
            gamma: 8,
            channels: [2, 4, 8],
            lstm_layers: 4,
            lstm_hidden: 16,
        },
        gcn_hidden: 64,
        fc_hidden: 32,
        ..ModelConfig::default()
    }
}

impl ExperimentConfig {
    /// Layer sizes of the full-width network.
    pub fn full_size() -> Self {
        Self {
            model: ModelConfig::default(),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies `CPRGCN_SEED`, which reseeds the cohort, folds, attack and
    /// training.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("CPRGCN_SEED") {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("CPRGCN_SEED is not an integer: {v}")))?;
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.cohort.seed = seed;
        self.fold_seed = seed;
        self.attack_seed = seed.wrapping_add(1);
        self.training.seed = seed;
    }
}

pub struct FoldResult {
    pub fold: usize,
    pub report: MetricsReport,
    pub log: TrainLog,
    pub model: CprGcnModel,
}

pub struct CrossValidation {
    pub name: String,
    pub folds: Vec<FoldResult>,
    /// Metrics over all held-out segments of all folds.
    pub pooled: MetricsReport,
}

impl CrossValidation {
    /// Mean and standard deviation of the per-fold mean F1.
    pub fn fold_mean_f1(&self) -> (f64, f64) {
        let v: Vec<f64> = self.folds.iter().map(|f| f.report.mean_f1).collect();
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

fn select<'a>(data: &'a [TreeInput], idx: &[usize]) -> Vec<&'a TreeInput> {
    idx.iter().map(|&i| &data[i]).collect()
}

/// Trains one model per fold on the other four and evaluates it on the
/// held-out fold.
pub fn cross_validate(
    name: &str,
    model: &ModelConfig,
    optimizer: &AdamConfig,
    training: &TrainConfig,
    data: &[TreeInput],
    split: &FoldSplit,
) -> Result<CrossValidation> {
    let mut folds = Vec::with_capacity(NUM_FOLDS);
    for k in 0..split.folds.len() {
        let test = select(data, split.test_indices(k));
        let mut train_idx = split.train_indices(k);
        let selection_idx = match training.selection {
            Selection::HeldOut => split.test_indices(k).to_vec(),
            Selection::LastEpoch => Vec::new(),
            Selection::Validation { fraction } => {
                if !(0.0..1.0).contains(&fraction) {
                    return Err(Error::Config(format!("validation fraction {fraction}")));
                }
                train_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed ^ k as u64));
                let n_val = ((fraction * train_idx.len() as f64).round() as usize).max(1);
                train_idx.split_off(train_idx.len() - n_val)
            }
        };
        let outcome = train(
            model,
            optimizer,
            training,
            &select(data, &train_idx),
            &select(data, &selection_idx),
        )?;
        let report = evaluate(&outcome.model, &test)?.with_config(format!("{name} fold {k}"));
        log::info!("{name} fold {k}: meanF1 {:.3}", report.mean_f1);
        folds.push(FoldResult {
            fold: k,
            report,
            log: outcome.log,
            model: outcome.model,
        });
    }
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.report.clone()).collect();
    let pooled = MetricsReport::pooled(&reports)?.with_config(name);
    Ok(CrossValidation {
        name: name.to_owned(),
        folds,
        pooled,
    })
}

/// The ablation configurations: the four named variants at the base depth
/// and the full model at every other depth from 1 to 4.
pub fn ablation_configs(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let mut cells = vec![
        (format!("full-{}", base.blocks), base.clone()),
        (
            "no-conditions".to_owned(),
            ModelConfig {
                use_conditions: false,
                ..base.clone()
            },
        ),
        (
            "no-residual".to_owned(),
            ModelConfig {
                shortcut: ShortcutMode::None,
                ..base.clone()
            },
        ),
        (
            "undirected".to_owned(),
            ModelConfig {
                directed: false,
                ..base.clone()
            },
        ),
    ];
    for blocks in 1..=4 {
        if blocks != base.blocks {
            cells.push((
                format!("full-{blocks}"),
                ModelConfig {
                    blocks,
                    ..base.clone()
                },
            ));
        }
    }
    cells
}

/// Cross-validates every ablation cell on the same folds.
pub fn run_ablation_grid(
    base: &ModelConfig,
    optimizer: &AdamConfig,
    training: &TrainConfig,
    data: &[TreeInput],
    split: &FoldSplit,
) -> Result<Vec<CrossValidation>> {
    ablation_configs(base)
        .into_iter()
        .map(|(name, cfg)| cross_validate(&name, &cfg, optimizer, training, data, split))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub original: MetricsReport,
    pub attacked: MetricsReport,
    pub delta_mean_precision: f64,
    pub delta_mean_recall: f64,
    /// `original.mean_f1 - attacked.mean_f1`.
    pub delta_mean_f1: f64,
}

/// Evaluates each fold's trained model on its held-out trees, once from the
/// original cohort and once from the attacked copy. No retraining.
pub fn run_data_attack(
    cv: &CrossValidation,
    original: &[TreeInput],
    attacked: &[TreeInput],
    split: &FoldSplit,
) -> Result<AttackReport> {
    if original.len() != attacked.len() {
        return Err(Error::Contract("attacked cohort differs in size".into()));
    }
    let mut before = Vec::new();
    let mut after = Vec::new();
    for f in &cv.folds {
        let idx = split.test_indices(f.fold);
        before.push(evaluate(&f.model, &select(original, idx))?);
        after.push(evaluate(&f.model, &select(attacked, idx))?);
    }
    let original = MetricsReport::pooled(&before)?.with_config(format!("{} original", cv.name));
    let attacked = MetricsReport::pooled(&after)?.with_config(format!("{} attacked", cv.name));
    Ok(AttackReport {
        delta_mean_precision: original.mean_precision - attacked.mean_precision,
        delta_mean_recall: original.mean_recall - attacked.mean_recall,
        delta_mean_f1: original.mean_f1 - attacked.mean_f1,
        original,
        attacked,
    })
}
