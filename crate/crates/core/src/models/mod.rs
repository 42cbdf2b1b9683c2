//! Trainable predictors: the relation-typed GAT and the MLP baseline.

pub mod gat;
pub mod init;
pub mod mlp;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gat::{AttentionActivation, AttentionHead, AttentionMap, GatConfig, GatModel};
pub use init::{xavier_init, xavier_uniform};
pub use mlp::{Activation, MlpConfig, MlpModel};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::graph::{GraphSet, PathwayGraph};
use crate::tensor::{Tape, Tensor, Var};

pub(crate) fn eval_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// A stack of `B` samples: features `B*N x F` and, per relation, the
/// matching `B*N x N` attention masks.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Tensor,
    pub masks: Vec<Tensor>,
    pub num_genes: usize,
    pub num_samples: usize,
}

impl Batch {
    pub fn new(samples: &[&Sample], graphs: &GraphSet) -> Result<Self> {
        Self::build(samples, |s| graphs.for_condition(&s.condition))
    }

    pub fn uniform(samples: &[&Sample], graph: &PathwayGraph) -> Result<Self> {
        Self::build(samples, |_| graph)
    }

    fn build<'g>(samples: &[&Sample], graph_for: impl Fn(&Sample) -> &'g PathwayGraph) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InsufficientData("empty batch".into()))?;
        let n = first.num_genes();
        let r = graph_for(first).num_relations();
        let mut mask_data = vec![Vec::with_capacity(samples.len() * n * n); r];
        for s in samples {
            let g = graph_for(s);
            if g.num_genes() != s.features.dims2().0 || g.num_relations() != r {
                return Err(Error::Shape {
                    op: "batch graph",
                    left: vec![g.num_genes(), g.num_relations()],
                    right: vec![s.features.dims2().0, r],
                });
            }
            for (rel, m) in mask_data.iter_mut().enumerate() {
                m.extend_from_slice(g.adjacency(rel).data());
            }
        }
        let features = Tensor::vstack(&samples.iter().map(|s| &s.features).collect::<Vec<_>>())?;
        let masks = mask_data
            .into_iter()
            .map(|d| Tensor::new(vec![samples.len() * n, n], d))
            .collect::<Result<_>>()?;
        Ok(Batch {
            features,
            masks,
            num_genes: n,
            num_samples: samples.len(),
        })
    }

    /// Batch without graph structure, for the MLP.
    pub fn features_only(features: &[&Tensor], num_genes: usize) -> Result<Self> {
        let features = Tensor::vstack(features)?;
        let num_samples = features.dims2().0 / num_genes;
        Ok(Batch {
            features,
            masks: Vec::new(),
            num_genes,
            num_samples,
        })
    }

    /// The same data viewed as `B x (N*F)`, sample-major and gene-minor.
    pub fn flattened(&self) -> Result<Tensor> {
        let (rows, f) = self.features.dims2();
        Tensor::new(vec![rows / self.num_genes, self.num_genes * f], self.features.data().to_vec())
    }
}

/// Which model to build, with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Gat(GatConfig),
    Mlp(MlpConfig),
}

impl ModelSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Gat(_) => "GAT",
            ModelSpec::Mlp(_) => "MLP",
        }
    }

    pub fn build(&self, num_genes: usize, num_relations: usize, feature_dim: usize, seed: u64) -> Result<Model> {
        Ok(match self {
            ModelSpec::Gat(cfg) => Model::Gat(GatModel::new(cfg.clone(), num_relations, feature_dim, seed)?),
            ModelSpec::Mlp(cfg) => Model::Mlp(MlpModel::new(cfg.clone(), num_genes, feature_dim, seed)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Gat(GatModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Gat(m) => ModelSpec::Gat(m.config.clone()),
            Model::Mlp(m) => ModelSpec::Mlp(m.config.clone()),
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        match self {
            Model::Gat(m) => m.parameters(),
            Model::Mlp(m) => m.parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::Gat(m) => m.parameters_mut(),
            Model::Mlp(m) => m.parameters_mut(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// Registers every parameter on the tape as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.parameters().into_iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Predictions for the batch, flattened sample-major to a `B*N x 1` column.
    pub fn forward_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Var> {
        match self {
            Model::Gat(m) => Ok(m.forward_tape(tape, params, batch, train_mode, rng)?.prediction),
            Model::Mlp(m) => {
                let out = m.forward_tape(tape, params, batch, train_mode, rng)?;
                // B x N is already sample-major; only the shape changes
                let rows = tape.value(out).numel();
                tape.reshape(out, &[rows, 1])
            }
        }
    }

    /// Stacks samples the way this model consumes them.
    pub fn batch(&self, samples: &[&Sample], graphs: &GraphSet) -> Result<Batch> {
        match self {
            Model::Gat(_) => Batch::new(samples, graphs),
            Model::Mlp(_) => {
                let first = samples
                    .first()
                    .ok_or_else(|| Error::InsufficientData("empty batch".into()))?;
                Batch::features_only(&samples.iter().map(|s| &s.features).collect::<Vec<_>>(), first.num_genes())
            }
        }
    }

    /// Eval-mode predictions, one `Vec` of `N` values per sample.
    pub fn predict(&self, samples: &[&Sample], graphs: &GraphSet) -> Result<Vec<Vec<f64>>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.batch(samples, graphs)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.parameters().into_iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.forward_tape(&mut tape, &params, &batch, false, &mut eval_rng())?;
        let n = batch.num_genes;
        Ok(tape.value(out).data().chunks(n).map(|c| c.to_vec()).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (num_genes, num_relations, feature_dim) = match self {
            Model::Gat(m) => (None, m.num_relations, m.feature_dim),
            Model::Mlp(m) => (Some(m.num_genes), 0, m.feature_dim),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            spec: self.spec(),
            num_genes,
            num_relations,
            feature_dim,
            parameters: self
                .parameters()
                .into_iter()
                .map(|t| FlatTensor {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format `{}`", ck.format)));
        }
        let mut model = ck.spec.build(ck.num_genes.unwrap_or(1), ck.num_relations, ck.feature_dim, 0)?;
        let slots = model.parameters_mut();
        if slots.len() != ck.parameters.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameter arrays, model expects {}",
                ck.parameters.len(),
                slots.len()
            )));
        }
        for (slot, flat) in slots.into_iter().zip(&ck.parameters) {
            if slot.shape() != flat.shape.as_slice() {
                return Err(Error::Shape {
                    op: "checkpoint",
                    left: slot.shape().to_vec(),
                    right: flat.shape.clone(),
                });
            }
            *slot = Tensor::new(flat.shape.clone(), flat.data.clone())?;
        }
        Ok(model)
    }
}

pub const CHECKPOINT_FORMAT: &str = "pathgat-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub num_genes: Option<usize>,
    pub num_relations: usize,
    pub feature_dim: usize,
    pub parameters: Vec<FlatTensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
