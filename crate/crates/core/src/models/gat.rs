//! Relation-typed multi-head graph attention.
//!
//! For each relation `r` and head `h` a projection `W` (`F x D`) and an
//! attention vector `a` (`2D`) score every permitted (target, source) pair as
//! `LeakyReLU(a[..D]·Wh_i + a[D..]·Wh_j)`. The scores are either
//! softmax-normalised over the permitted sources or squashed with `tanh`
//! (signed, unnormalised). Head outputs `sum_j alpha_ij W h_j` are
//! concatenated over heads, then relations, and a linear readout maps each
//! node's embedding to its prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::xavier_uniform;
use super::Batch;
use crate::error::{Error, Result};
use crate::graph::PathwayGraph;
use crate::dataset::Sample;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionActivation {
    #[default]
    Softmax,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatConfig {
    pub heads: usize,
    pub head_dim: usize,
    /// Number of stacked attention layers.
    pub depth: usize,
    pub dropout_features: f64,
    pub dropout_attention: f64,
    pub leaky_slope: f64,
    pub activation: AttentionActivation,
    pub readout_bias: bool,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            heads: 4,
            head_dim: 8,
            depth: 1,
            dropout_features: 0.1,
            dropout_attention: 0.1,
            leaky_slope: 0.2,
            activation: AttentionActivation::Softmax,
            readout_bias: true,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 || self.depth == 0 {
            return Err(Error::Config("heads, head_dim and depth must be positive".into()));
        }
        for (name, p) in [
            ("dropout_features", self.dropout_features),
            ("dropout_attention", self.dropout_attention),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0,1), got {p}")));
            }
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky_slope must lie in (0,1), got {}", self.leaky_slope)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    /// `F_in x D` projection.
    pub projection: Tensor,
    /// `2D x 1`; the first half scores the target, the second the source.
    pub attention: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatModel {
    pub config: GatConfig,
    pub num_relations: usize,
    pub feature_dim: usize,
    /// `layers[l][r * heads + h]`.
    pub layers: Vec<Vec<AttentionHead>>,
    /// `R*H*D x 1`.
    pub readout: Tensor,
    pub bias: Option<Tensor>,
}

/// Attention weights of one (layer, relation, head) over a batch, `B*N x N`.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub layer: usize,
    pub relation: usize,
    pub head: usize,
    pub weights: Tensor,
}

pub(crate) struct GatForward {
    pub prediction: Var,
    pub attention: Vec<(usize, usize, usize, Var)>,
}

impl GatModel {
    pub fn new(config: GatConfig, num_relations: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_relations == 0 || feature_dim == 0 {
            return Err(Error::Config("a GAT needs at least one relation and one feature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.head_dim;
        let embed = num_relations * config.heads * d;
        let mut layers = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let f_in = if l == 0 { feature_dim } else { embed };
            let mut heads = Vec::with_capacity(num_relations * config.heads);
            for _ in 0..num_relations * config.heads {
                heads.push(AttentionHead {
                    projection: xavier_uniform(&[f_in, d], &mut rng)?,
                    attention: xavier_uniform(&[2 * d, 1], &mut rng)?,
                });
            }
            layers.push(heads);
        }
        let readout = xavier_uniform(&[embed, 1], &mut rng)?;
        let bias = config.readout_bias.then(|| Tensor::zeros(&[1]));
        Ok(GatModel {
            config,
            num_relations,
            feature_dim,
            layers,
            readout,
            bias,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.num_relations * self.config.heads * self.config.head_dim
    }

    /// Parameters in binding order: per layer, per relation, per head
    /// `(projection, attention)`; then readout and bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for h in layer {
                out.push(&h.projection);
                out.push(&h.attention);
            }
        }
        out.push(&self.readout);
        if let Some(b) = &self.bias {
            out.push(b);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for h in layer {
                out.push(&mut h.projection);
                out.push(&mut h.attention);
            }
        }
        out.push(&mut self.readout);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
        out
    }

    pub(crate) fn forward_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<GatForward> {
        let f = batch.features.dims2().1;
        if f != self.feature_dim {
            return Err(Error::Shape {
                op: "gat_forward",
                left: vec![self.feature_dim],
                right: vec![f],
            });
        }
        if batch.masks.len() != self.num_relations {
            return Err(Error::Shape {
                op: "gat_forward relations",
                left: vec![self.num_relations],
                right: vec![batch.masks.len()],
            });
        }
        let cfg = &self.config;
        let d = cfg.head_dim;
        let n = batch.num_genes;
        let mut x = tape.constant(batch.features.clone());
        let mut attention = Vec::new();
        let mut p = 0;
        for l in 0..self.layers.len() {
            x = tape.dropout(x, cfg.dropout_features, train_mode, rng)?;
            let mut parts = Vec::with_capacity(self.num_relations * cfg.heads);
            for r in 0..self.num_relations {
                let mask = &batch.masks[r];
                for h in 0..cfg.heads {
                    let (w, a) = (params[p], params[p + 1]);
                    p += 2;
                    let wx = tape.matmul(x, w)?;
                    let a_target = tape.slice_rows(a, 0, d)?;
                    let a_source = tape.slice_rows(a, d, 2 * d)?;
                    let s_target = tape.matmul(wx, a_target)?;
                    let s_source = tape.matmul(wx, a_source)?;
                    let scores = tape.outer_sum(s_target, s_source, n)?;
                    let scores = tape.leaky_relu(scores, cfg.leaky_slope)?;
                    let alpha = match cfg.activation {
                        AttentionActivation::Softmax => tape.masked_softmax(scores, mask)?,
                        AttentionActivation::Tanh => {
                            let t = tape.tanh(scores);
                            tape.apply_mask(t, mask)?
                        }
                    };
                    attention.push((l, r, h, alpha));
                    let alpha = tape.dropout(alpha, cfg.dropout_attention, train_mode, rng)?;
                    parts.push(tape.block_matmul(alpha, wx, n)?);
                }
            }
            x = tape.concat(&parts)?;
        }
        let mut pred = tape.matmul(x, params[p])?;
        if self.bias.is_some() {
            pred = tape.add(pred, params[p + 1])?;
        }
        Ok(GatForward {
            prediction: pred,
            attention,
        })
    }

    /// Eval-mode predictions, one row of `N` values per sample.
    pub fn forward(&self, graph: &PathwayGraph, sample: &Sample) -> Result<Vec<f64>> {
        let batch = Batch::uniform(&[sample], graph)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.parameters().into_iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.forward_tape(&mut tape, &params, &batch, false, &mut super::eval_rng())?;
        Ok(tape.value(out.prediction).data().to_vec())
    }

    /// Eval-mode attention weights for every layer, relation and head.
    pub fn attention(&self, batch: &Batch) -> Result<Vec<AttentionMap>> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.parameters().into_iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.forward_tape(&mut tape, &params, batch, false, &mut super::eval_rng())?;
        Ok(out
            .attention
            .into_iter()
            .map(|(layer, relation, head, v)| AttentionMap {
                layer,
                relation,
                head,
                weights: tape.value(v).clone(),
            })
            .collect())
    }

    /// Final-layer `N x N` attention for one sample, indexed `[relation][head]`.
    pub fn extract_attention(&self, graph: &PathwayGraph, sample: &Sample) -> Result<Vec<Vec<Tensor>>> {
        let batch = Batch::uniform(&[sample], graph)?;
        let last = self.layers.len() - 1;
        let mut out = vec![Vec::with_capacity(self.config.heads); self.num_relations];
        for m in self.attention(&batch)? {
            if m.layer == last {
                out[m.relation].push(m.weights);
            }
        }
        Ok(out)
    }
}
