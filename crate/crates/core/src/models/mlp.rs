//! Bag-of-genes baseline: a feed-forward network over the flattened node
//! features of all genes, with no structural prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::xavier_uniform;
use super::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![64],
            activation: Activation::Relu,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub num_genes: usize,
    pub feature_dim: usize,
    pub layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn new(config: MlpConfig, num_genes: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0,1), got {}", config.dropout)));
        }
        if config.hidden.contains(&0) || num_genes == 0 || feature_dim == 0 {
            return Err(Error::Config("MLP layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![num_genes * feature_dim];
        sizes.extend(&config.hidden);
        sizes.push(num_genes);
        let layers = sizes
            .windows(2)
            .map(|w| {
                Ok(DenseLayer {
                    weight: xavier_uniform(&[w[0], w[1]], &mut rng)?,
                    bias: Tensor::zeros(&[1, w[1]]),
                })
            })
            .collect::<Result<_>>()?;
        Ok(MlpModel {
            config,
            num_genes,
            feature_dim,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.num_genes * self.feature_dim
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Returns `B x N` predictions.
    pub(crate) fn forward_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let flat = batch.flattened()?;
        if flat.dims2().1 != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                left: vec![self.input_dim()],
                right: vec![flat.dims2().1],
            });
        }
        let mut h = tape.constant(flat);
        let last = self.layers.len() - 1;
        for l in 0..self.layers.len() {
            let z = tape.matmul(h, params[2 * l])?;
            h = tape.add(z, params[2 * l + 1])?;
            if l < last {
                h = match self.config.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
                h = tape.dropout(h, self.config.dropout, train_mode, rng)?;
            }
        }
        Ok(h)
    }

    /// Eval-mode predictions for one `N x F` feature matrix.
    pub fn forward(&self, features: &Tensor) -> Result<Vec<f64>> {
        let batch = Batch::features_only(&[features], self.num_genes)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.parameters().into_iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.forward_tape(&mut tape, &params, &batch, false, &mut super::eval_rng())?;
        Ok(tape.value(out).data().to_vec())
    }
}
