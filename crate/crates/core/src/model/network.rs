use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adjacency::{block_diagonal, normalize_adjacency};
use crate::condition::{ConditionConfig, ConditionEncoder, CubeSequence};
use crate::error::{Error, Result};
use crate::geometry::FEATURE_DIM;
use crate::labels::{AnatomicalLabel, NUM_CLASSES};
use crate::tensor::{
    load_checkpoint, save_checkpoint, BoundParams, ParamId, ParamStore, Tape, Tensor, Var,
};

/// Where the projected position features re-enter the block stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShortcutMode {
    /// `x · W_s` added to every block output.
    PerBlock,
    /// Added to the first block output only.
    Single,
    /// No shortcut.
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub condition: ConditionConfig,
    /// When false, the condition vector is replaced by zeros and the image
    /// encoder is not built.
    pub use_conditions: bool,
    pub blocks: usize,
    pub gcn_hidden: usize,
    pub fc_hidden: usize,
    pub directed: bool,
    pub shortcut: ShortcutMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            condition: ConditionConfig::default(),
            use_conditions: true,
            blocks: 3,
            gcn_hidden: 256,
            fc_hidden: 128,
            directed: true,
            shortcut: ShortcutMode::PerBlock,
        }
    }
}

impl ModelConfig {
    /// Width of the first block's input: position features plus conditions.
    pub fn input_dim(&self) -> usize {
        FEATURE_DIM + self.condition.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.gcn_hidden == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("model layer sizes must be positive".into()));
        }
        self.condition.validate()
    }
}

pub const MODEL_CONFIG_VERSION: u32 = 1;

/// On-disk description stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub config: ModelConfig,
    pub classes: Vec<AnatomicalLabel>,
}

/// One tree prepared for the network: raw parent→child adjacency,
/// position features, a cube sequence per node and optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeInput {
    pub adjacency: Tensor,
    pub features: Tensor,
    pub cubes: Vec<CubeSequence>,
    pub labels: Vec<usize>,
}

impl TreeInput {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if self.features.shape() != [n, FEATURE_DIM] {
            return Err(Error::dim("tree features", self.features.shape(), &[n, FEATURE_DIM]));
        }
        if self.adjacency.shape() != [n, n] {
            return Err(Error::dim("tree adjacency", self.adjacency.shape(), &[n, n]));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

/// All learnable parameters of the network plus their layout.
#[derive(Clone, Debug)]
pub struct CprGcnModel {
    config: ModelConfig,
    pub params: ParamStore,
    condition: Option<ConditionEncoder>,
    gcn: Vec<ParamId>,
    shortcuts: Vec<ParamId>,
    fc1: Dense,
    fc2: Dense,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

/// He-uniform bound for weights feeding a ReLU, so that activation scale
/// survives a stack of blocks without shortcuts.
fn he_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    Tensor::uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

impl CprGcnModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let condition = if config.use_conditions {
            Some(ConditionEncoder::new(
                config.condition.clone(),
                &mut params,
                "condition.",
                &mut rng,
            )?)
        } else {
            None
        };
        let hidden = config.gcn_hidden;
        let mut gcn = Vec::with_capacity(config.blocks);
        let mut shortcuts = Vec::new();
        for l in 0..config.blocks {
            let d = if l == 0 { config.input_dim() } else { hidden };
            gcn.push(params.insert(format!("gcn{l}.weight"), he_uniform(&mut rng, &[d, hidden], d)));
            let has_shortcut = match config.shortcut {
                ShortcutMode::PerBlock => true,
                ShortcutMode::Single => l == 0,
                ShortcutMode::None => false,
            };
            if has_shortcut {
                shortcuts.push(params.insert(
                    format!("shortcut{l}.weight"),
                    uniform(&mut rng, &[FEATURE_DIM, hidden], FEATURE_DIM),
                ));
            }
        }
        let mut dense = |name: &str, d_in: usize, d_out: usize| Dense {
            weight: params.insert(
                format!("{name}.weight"),
                uniform(&mut rng, &[d_in, d_out], d_in),
            ),
            bias: params.insert(format!("{name}.bias"), uniform(&mut rng, &[d_out], d_in)),
        };
        let fc1 = dense("head.fc1", hidden, config.fc_hidden);
        let fc2 = dense("head.fc2", config.fc_hidden, NUM_CLASSES);
        Ok(Self {
            config,
            params,
            condition,
            gcn,
            shortcuts,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn gcn_weights(&self) -> &[ParamId] {
        &self.gcn
    }

    pub fn shortcut_weights(&self) -> &[ParamId] {
        &self.shortcuts
    }

    /// Normalized block-diagonal adjacency for a batch of trees.
    pub fn batch_adjacency(&self, trees: &[&TreeInput]) -> Result<Tensor> {
        let blocks = trees
            .iter()
            .map(|t| normalize_adjacency(&t.adjacency, self.config.directed))
            .collect::<Result<Vec<_>>>()?;
        block_diagonal(&blocks.iter().collect::<Vec<_>>())
    }

    /// Condition vectors `[n × 2k]` for every node of the batch, zeros when
    /// conditions are disabled.
    pub fn conditions<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        trees: &[&TreeInput],
    ) -> Result<Var<'t>> {
        let n: usize = trees.iter().map(|t| t.len()).sum();
        match &self.condition {
            None => Ok(tape.constant(Tensor::zeros(&[n, self.config.condition.output_dim()]))),
            Some(enc) => {
                let seqs: Vec<&CubeSequence> = trees.iter().flat_map(|t| &t.cubes).collect();
                if seqs.len() != n {
                    return Err(Error::Contract(format!(
                        "{} cube sequences for {n} nodes",
                        seqs.len()
                    )));
                }
                enc.encode(tape, params, &seqs)
            }
        }
    }

    /// Block stack: `H⁰ = [x, y]`, `Hˡ = ReLU(Â Hˡ⁻¹ Wˡ) + x W_sˡ`.
    pub fn partial_residual_forward<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        x: Var<'t>,
        y: Var<'t>,
        a_hat: Var<'t>,
    ) -> Result<Var<'t>> {
        let mut h = tape.concat_cols(&[x, y])?;
        let mut shortcuts = self.shortcuts.iter();
        for (l, &w) in self.gcn.iter().enumerate() {
            h = gcn_block(tape, h, a_hat, params.get(w))?;
            let has_shortcut = match self.config.shortcut {
                ShortcutMode::PerBlock => true,
                ShortcutMode::Single => l == 0,
                ShortcutMode::None => false,
            };
            if has_shortcut {
                let ws = shortcuts.next().expect("shortcut per block");
                h = tape.add(h, tape.matmul(x, params.get(*ws))?)?;
            }
        }
        Ok(h)
    }

    /// Logits `ReLU(H W₁ + b₁) W₂ + b₂`.
    pub fn classify<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        h: Var<'t>,
    ) -> Result<Var<'t>> {
        let z = tape.add_row(tape.matmul(h, params.get(self.fc1.weight))?, params.get(self.fc1.bias))?;
        let z = tape.relu(z);
        tape.add_row(tape.matmul(z, params.get(self.fc2.weight))?, params.get(self.fc2.bias))
    }

    /// Logits `[n × 11]` for all nodes of a batch, in tree then node order.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        trees: &[&TreeInput],
    ) -> Result<Var<'t>> {
        for t in trees {
            t.check()?;
        }
        let n: usize = trees.iter().map(|t| t.len()).sum();
        let mut xs = Vec::with_capacity(n * FEATURE_DIM);
        for t in trees {
            xs.extend_from_slice(t.features.data());
        }
        let x = tape.constant(Tensor::new(vec![n, FEATURE_DIM], xs)?);
        let a_hat = tape.constant(self.batch_adjacency(trees)?);
        let y = self.conditions(tape, params, trees)?;
        let h = self.partial_residual_forward(tape, params, x, y, a_hat)?;
        self.classify(tape, params, h)
    }

    /// Mean cross-entropy over every node of the batch.
    pub fn forward_loss<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        trees: &[&TreeInput],
    ) -> Result<Var<'t>> {
        let mut labels = Vec::new();
        for t in trees {
            if t.labels.len() != t.len() {
                return Err(Error::Contract(format!(
                    "{} labels for {} nodes",
                    t.labels.len(),
                    t.len()
                )));
            }
            labels.extend_from_slice(&t.labels);
        }
        let logits = self.forward(tape, params, trees)?;
        tape.softmax_cross_entropy(logits, &labels)
    }

    /// Loss and per-parameter gradients for one batch.
    pub fn loss_and_gradients(&self, trees: &[&TreeInput]) -> Result<(f64, Vec<Tensor>)> {
        let tape = Tape::new();
        let params = self.params.bind(&tape);
        let loss = self.forward_loss(&tape, &params, trees)?;
        let grads = tape.backward(loss)?;
        Ok((loss.item(), params.gradients(&grads)))
    }

    pub fn loss(&self, trees: &[&TreeInput]) -> Result<f64> {
        let tape = Tape::new();
        let params = self.params.bind(&tape);
        Ok(self.forward_loss(&tape, &params, trees)?.item())
    }

    pub fn predict(&self, tree: &TreeInput) -> Result<LabelPrediction> {
        let tape = Tape::new();
        let params = self.params.bind(&tape);
        let logits = self.forward(&tape, &params, &[tree])?;
        let logits = logits.value().clone();
        Ok(LabelPrediction::from_logits(logits))
    }

    /// Writes `<stem>.json` (model description), `<stem>.params.json` and
    /// its payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = ModelDocument {
            version: MODEL_CONFIG_VERSION,
            config: self.config.clone(),
            classes: AnatomicalLabel::ALL.to_vec(),
        };
        fs::write(path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(path, e))?;
        save_checkpoint(&self.params, &params_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ModelDocument = serde_json::from_str(&text)?;
        if doc.version != MODEL_CONFIG_VERSION {
            return Err(Error::format(path, format!("unsupported model version {}", doc.version)));
        }
        if doc.classes != AnatomicalLabel::ALL {
            return Err(Error::format(path, "class list differs from this build"));
        }
        let mut model = Self::new(doc.config, 0)?;
        let stored = load_checkpoint(&params_path(path))?;
        model.params.copy_from(&stored)?;
        Ok(model)
    }
}

fn params_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("params.json")
}

/// `ReLU(Â H W)`.
pub fn gcn_block<'t>(tape: &'t Tape, h: Var<'t>, a_hat: Var<'t>, w: Var<'t>) -> Result<Var<'t>> {
    let hw = tape.matmul(h, w)?;
    Ok(tape.relu(tape.matmul(a_hat, hw)?))
}

/// Per-node logits with their argmax classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelPrediction {
    pub logits: Tensor,
    pub classes: Vec<usize>,
}

impl LabelPrediction {
    /// Argmax per row; ties go to the lowest class index.
    pub fn from_logits(logits: Tensor) -> Self {
        let classes = (0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        Self { logits, classes }
    }

    pub fn labels(&self) -> Vec<AnatomicalLabel> {
        self.classes
            .iter()
            .map(|&c| AnatomicalLabel::from_index(c).expect("class index in range"))
            .collect()
    }
}
