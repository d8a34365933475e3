//! Image-domain conditions: a shared three-stage 3D CNN applied to every
//! cube, followed by a stacked bidirectional LSTM over each segment's cube
//! sequence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cubes::CubeSequence;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionConfig {
    /// Cube radius; cubes have side `2 * gamma`.
    pub gamma: usize,
    /// Output channels of the three convolution stages.
    pub channels: [usize; 3],
    pub lstm_layers: usize,
    /// Hidden size per direction.
    pub lstm_hidden: usize,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self {
            gamma: 12,
            channels: [16, 32, 64],
            lstm_layers: 4,
            lstm_hidden: 128,
        }
    }
}

impl ConditionConfig {
    pub fn cube_side(&self) -> usize {
        2 * self.gamma
    }

    /// Length of the flattened CNN output per cube.
    pub fn cnn_feature_dim(&self) -> usize {
        self.channels[2] * (self.cube_side() / 8).pow(3)
    }

    /// Length of the condition vector.
    pub fn output_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.cube_side();
        if side % 8 != 0 || side / 4 < 3 {
            return Err(Error::Config(format!(
                "cube side {side} must be a multiple of 8 and at least 16"
            )));
        }
        if self.channels.contains(&0) || self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return Err(Error::Config("condition layer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    kernels: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// Parameter handles of the condition extractor.
#[derive(Clone, Debug)]
pub struct ConditionEncoder {
    config: ConditionConfig,
    conv: [ConvIds; 3],
    /// Per layer: forward then backward direction.
    lstm: Vec<[LstmIds; 2]>,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

impl ConditionEncoder {
    /// Registers all parameters under `prefix`, initialized uniformly in
    /// `±1/√fan_in`.
    pub fn new(
        config: ConditionConfig,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut c_in = 1;
        let conv = std::array::from_fn(|i| {
            let c_out = config.channels[i];
            let fan = c_in * 27;
            let ids = ConvIds {
                kernels: store.insert(
                    format!("{prefix}conv{i}.kernels"),
                    uniform(rng, &[c_out, c_in, 3, 3, 3], fan),
                ),
                bias: store.insert(format!("{prefix}conv{i}.bias"), uniform(rng, &[c_out], fan)),
            };
            c_in = c_out;
            ids
        });
        let k = config.lstm_hidden;
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for layer in 0..config.lstm_layers {
            let d = if layer == 0 {
                config.cnn_feature_dim()
            } else {
                2 * k
            };
            let dirs = ["fwd", "bwd"].map(|dir| {
                let name = format!("{prefix}lstm{layer}.{dir}");
                LstmIds {
                    w_ih: store.insert(format!("{name}.w_ih"), uniform(rng, &[d, 4 * k], d)),
                    w_hh: store.insert(format!("{name}.w_hh"), uniform(rng, &[k, 4 * k], k)),
                    bias: store.insert(format!("{name}.bias"), uniform(rng, &[4 * k], k)),
                }
            });
            lstm.push(dirs);
        }
        Ok(Self { config, conv, lstm })
    }

    pub fn config(&self) -> &ConditionConfig {
        &self.config
    }

    /// `[N × 1 × S × S × S]` cubes to `[N × F]` flattened CNN features.
    pub fn cnn_encode<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        cubes: Var<'t>,
    ) -> Result<Var<'t>> {
        let s = self.config.cube_side();
        let shape = cubes.shape();
        if shape.len() != 5 || shape[1] != 1 || shape[2..] != [s, s, s] {
            return Err(Error::dim("cnn_encode", &shape, &[0, 1, s, s, s]));
        }
        let mut h = cubes;
        for ids in &self.conv {
            h = tape.conv3d(h, params.get(ids.kernels), params.get(ids.bias))?;
            h = tape.relu(h);
            h = tape.maxpool3d(h)?;
        }
        tape.reshape(h, &[shape[0], self.config.cnn_feature_dim()])
    }

    /// Runs the stacked BiLSTM over sequences stored back to back in the
    /// rows of `features`, with `lengths[b]` rows for sequence `b`. Returns
    /// `[B × 2k]`: the top layer's forward state after each sequence's last
    /// real step followed by its backward state after the first step.
    pub fn bilstm_summarize<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        features: Var<'t>,
        lengths: &[usize],
    ) -> Result<Var<'t>> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::Degenerate("BiLSTM needs non-empty sequences".into()));
        }
        let rows: usize = lengths.iter().sum();
        let shape = features.shape();
        if shape.len() != 2 || shape[0] != rows {
            return Err(Error::dim("bilstm_summarize", &shape, &[rows]));
        }
        let batch = lengths.len();
        let steps = *lengths.iter().max().expect("non-empty");
        let mut offsets = Vec::with_capacity(batch);
        let mut acc = 0;
        for &l in lengths {
            offsets.push(acc);
            acc += l;
        }
        let active = |t: usize| -> Vec<bool> { lengths.iter().map(|&l| t < l).collect() };

        let mut inputs: Vec<Var<'t>> = (0..steps)
            .map(|t| {
                let index = (0..batch)
                    .map(|b| (t < lengths[b]).then_some(offsets[b] + t))
                    .collect();
                tape.gather_rows(features, index)
            })
            .collect::<Result<_>>()?;

        let k = self.config.lstm_hidden;
        let zeros = tape.constant(Tensor::zeros(&[batch, k]));
        let mut finals = (zeros, zeros);
        for layer in &self.lstm {
            let run = |ids: &LstmIds, order: &mut dyn Iterator<Item = usize>| -> Result<_> {
                let (w_ih, w_hh, bias) =
                    (params.get(ids.w_ih), params.get(ids.w_hh), params.get(ids.bias));
                let (mut h, mut c) = (zeros, zeros);
                let mut outs = vec![zeros; steps];
                for t in order {
                    let hc = tape.lstm_cell(inputs[t], h, c, w_ih, w_hh, bias)?;
                    let mask = active(t);
                    h = tape.select_rows(mask.clone(), tape.narrow_cols(hc, 0, k)?, h)?;
                    c = tape.select_rows(mask, tape.narrow_cols(hc, k, k)?, c)?;
                    outs[t] = h;
                }
                Ok((outs, h))
            };
            let (fwd, fwd_last) = run(&layer[0], &mut (0..steps))?;
            let (bwd, bwd_last) = run(&layer[1], &mut (0..steps).rev())?;
            inputs = fwd
                .iter()
                .zip(&bwd)
                .map(|(&f, &b)| tape.concat_cols(&[f, b]))
                .collect::<Result<_>>()?;
            finals = (fwd_last, bwd_last);
        }
        tape.concat_cols(&[finals.0, finals.1])
    }

    /// Condition vectors `[B × 2k]` for a batch of segments.
    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        sequences: &[&CubeSequence],
    ) -> Result<Var<'t>> {
        let s = self.config.cube_side();
        let mut data = Vec::new();
        let mut lengths = Vec::with_capacity(sequences.len());
        for seq in sequences {
            if seq.side() != s {
                return Err(Error::dim("encode", &[seq.side()], &[s]));
            }
            data.extend_from_slice(seq.data());
            lengths.push(seq.len());
        }
        let total = lengths.iter().sum();
        let cubes = tape.constant(Tensor::new(vec![total, 1, s, s, s], data)?);
        let features = self.cnn_encode(tape, params, cubes)?;
        self.bilstm_summarize(tape, params, features, &lengths)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> ConditionConfig {
        ConditionConfig {
            gamma: 8,
            channels: [2, 3, 4],
            lstm_layers: 2,
            lstm_hidden: 5,
        }
    }

    #[test]
    fn default_feature_dims() {
        let c = ConditionConfig::default();
        assert_eq!(c.cnn_feature_dim(), 1728);
        assert_eq!(c.output_dim(), 256);
    }

    #[test]
    fn invalid_cube_side_is_rejected() {
        let c = ConditionConfig {
            gamma: 6,
            ..small()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_cube_with_zero_biases_gives_zero_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = ConditionEncoder::new(small(), &mut store, "", &mut rng).unwrap();
        for ids in &enc.conv {
            store.get_mut(ids.bias).data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let params = store.bind(&tape);
        let cubes = tape.constant(Tensor::zeros(&[2, 1, 16, 16, 16]));
        let f = enc.cnn_encode(&tape, &params, cubes).unwrap();
        assert_eq!(f.shape(), vec![2, 4 * 8]);
        assert!(f.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_cube_shape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = ConditionEncoder::new(small(), &mut store, "", &mut rng).unwrap();
        let tape = Tape::new();
        let params = store.bind(&tape);
        let cubes = tape.constant(Tensor::zeros(&[1, 1, 8, 8, 8]));
        assert!(matches!(
            enc.cnn_encode(&tape, &params, cubes),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn padding_does_not_change_summaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let enc = ConditionEncoder::new(small(), &mut store, "", &mut rng).unwrap();
        let d = small().cnn_feature_dim();
        let feats = Tensor::uniform(&[10, d], 1.0, &mut rng);

        let tape = Tape::new();
        let params = store.bind(&tape);
        let batched = enc
            .bilstm_summarize(&tape, &params, tape.constant(feats.clone()), &[3, 7])
            .unwrap()
            .value()
            .clone();

        for (b, (start, len)) in [(0usize, 3usize), (3, 7)].into_iter().enumerate() {
            let rows = feats.data()[start * d..(start + len) * d].to_vec();
            let tape = Tape::new();
            let params = store.bind(&tape);
            let single = enc
                .bilstm_summarize(
                    &tape,
                    &params,
                    tape.constant(Tensor::new(vec![len, d], rows).unwrap()),
                    &[len],
                )
                .unwrap();
            assert_eq!(single.value().row(0), batched.row(b));
        }
    }

    #[test]
    fn empty_sequence_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = ConditionEncoder::new(small(), &mut store, "", &mut rng).unwrap();
        let tape = Tape::new();
        let params = store.bind(&tape);
        let f = tape.constant(Tensor::zeros(&[0, 32]));
        assert!(matches!(
            enc.bilstm_summarize(&tape, &params, f, &[]),
            Err(Error::Degenerate(_))
        ));
    }
}
