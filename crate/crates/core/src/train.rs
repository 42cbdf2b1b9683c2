//! Adam training on standardised targets, MSE evaluation and the
//! leave-one-condition-out runner.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{loco_folds, LocoFold, Sample};
use crate::error::{Error, Result};
use crate::graph::{GraphSet, Intervention, PathwayGraph};
use crate::models::{Batch, Model, ModelSpec};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    /// `None` disables early stopping and trains on every sample.
    pub patience: Option<usize>,
    /// Share of the training samples held back for early stopping.
    pub val_fraction: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 2000,
            batch_size: None,
            patience: Some(200),
            val_fraction: 0.2,
            seeds: (0..10).collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("Adam needs beta1, beta2 in [0,1) and eps > 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0,1), got {}", self.val_fraction)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config(format!("seeds must be distinct, got {:?}", self.seeds)));
        }
        Ok(())
    }

    fn early_stopping(&self) -> bool {
        self.patience.is_some() && self.val_fraction > 0.0
    }
}

/// Adaptive-moment gradient descent over a fixed parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &[&Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Early-stopping loss per epoch; empty when early stopping is off.
    pub val_curve: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

/// Deterministic, seed-independent early-stopping split: `(train, validation)`.
pub fn validation_split(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let m = ((n as f64) * fraction).round() as usize;
    let m = m.min(n.saturating_sub(1));
    let val: BTreeSet<usize> = (0..m).map(|k| ((k as f64 + 0.5) * n as f64 / m as f64) as usize).collect();
    let train = (0..n).filter(|i| !val.contains(i)).collect();
    (train, val.into_iter().collect())
}

fn target_column(samples: &[&Sample]) -> Result<Tensor> {
    Tensor::column(samples.iter().flat_map(|s| s.target.iter().copied()).collect())
}

struct Prepared {
    batch: Batch,
    targets: Tensor,
}

fn prepare(model: &Model, samples: &[&Sample], graphs: &GraphSet) -> Result<Prepared> {
    Ok(Prepared {
        batch: model.batch(samples, graphs)?,
        targets: target_column(samples)?,
    })
}

fn mse_loss(tape: &mut Tape, pred: Var, targets: &Tensor) -> Result<Var> {
    let t = tape.constant(targets.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

fn eval_loss(model: &Model, data: &Prepared) -> Result<f64> {
    let mut tape = Tape::new();
    let params: Vec<Var> = model.parameters().into_iter().map(|t| tape.constant(t.clone())).collect();
    let pred = model.forward_tape(&mut tape, &params, &data.batch, false, &mut crate::models::eval_rng())?;
    let loss = mse_loss(&mut tape, pred, &data.targets)?;
    Ok(tape.value(loss).data()[0])
}

/// Minimises the mean over samples and genes of the squared error.
///
/// `seed` drives initialisation, dropout and shuffling.
pub fn train(spec: &ModelSpec, samples: &[Sample], graphs: &GraphSet, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("training set is empty".into()))?;
    let model = spec.build(
        first.num_genes(),
        graphs.base().num_relations(),
        first.features.dims2().1,
        seed,
    )?;
    train_model(model, samples, graphs, cfg, seed)
}

/// Continues training an existing model.
pub fn train_model(
    mut model: Model,
    samples: &[Sample],
    graphs: &GraphSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let (fit_idx, val_idx) = if cfg.early_stopping() {
        validation_split(samples.len(), cfg.val_fraction)
    } else {
        ((0..samples.len()).collect(), Vec::new())
    };
    let fit: Vec<&Sample> = fit_idx.iter().map(|&i| &samples[i]).collect();
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let val_data = if val.is_empty() { None } else { Some(prepare(&model, &val, graphs)?) };
    let batch_size = cfg.batch_size.unwrap_or(fit.len()).min(fit.len());
    let full = if batch_size == fit.len() { Some(prepare(&model, &fit, graphs)?) } else { None };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg, &model.parameters());
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let chunks: Vec<Vec<usize>> = if full.is_some() {
            vec![order.clone()]
        } else {
            order.shuffle(&mut rng);
            order.chunks(batch_size).map(|c| c.to_vec()).collect()
        };
        for chunk in &chunks {
            let owned;
            let data = match &full {
                Some(d) => d,
                None => {
                    let part: Vec<&Sample> = chunk.iter().map(|&i| fit[i]).collect();
                    owned = prepare(&model, &part, graphs)?;
                    &owned
                }
            };
            tape.clear();
            let params = model.bind(&mut tape);
            let pred = model.forward_tape(&mut tape, &params, &data.batch, true, &mut rng)?;
            let loss = mse_loss(&mut tape, pred, &data.targets)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            total += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = params.iter().map(|&p| grads.get(p)).collect();
            adam.update(model.parameters_mut(), &grads);
        }
        loss_curve.push(total / fit.len() as f64);

        if let (Some(data), Some(patience)) = (&val_data, cfg.patience) {
            let v = eval_loss(&model, data)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, loss: v });
            }
            val_curve.push(v);
            match &best {
                Some((b, _, _)) if v >= *b => {}
                _ => best = Some((v, epoch, model.clone())),
            }
            if let Some((_, at, _)) = &best {
                if epoch - at >= patience {
                    break;
                }
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, Some(epoch)),
        None => (model, None),
    };
    Ok(TrainOutcome {
        model,
        loss_curve,
        val_curve,
        best_epoch,
    })
}

/// Mean over samples and genes of the squared error, in eval mode.
pub fn evaluate(model: &Model, samples: &[Sample], graphs: &GraphSet) -> Result<f64> {
    let preds = predict_samples(model, samples, graphs)?;
    mse(&preds, samples)
}

pub fn predict_samples(model: &Model, samples: &[Sample], graphs: &GraphSet) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("evaluation set is empty".into()));
    }
    model.predict(&samples.iter().collect::<Vec<_>>(), graphs)
}

pub fn mse(predictions: &[Vec<f64>], samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() || predictions.len() != samples.len() {
        return Err(Error::InsufficientData(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, s) in predictions.iter().zip(samples) {
        for (a, b) in p.iter().zip(&s.target) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// One test prediction in standardised space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample: String,
    pub gene: usize,
    pub target: f64,
    pub prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub held_out: String,
    pub seed: u64,
    pub mse: f64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub final_train_loss: f64,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub held_out: String,
    /// Test MSE per seed, in seed-list order.
    pub mses: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocoReport {
    pub model: String,
    pub seeds: Vec<u64>,
    pub folds: Vec<FoldSummary>,
    /// Mean of the fold means.
    pub overall_mean: f64,
    /// Mean of the fold standard deviations.
    pub overall_std: f64,
    pub runs: Vec<RunRecord>,
}

impl LocoReport {
    pub fn fold(&self, held_out: &str) -> Option<&FoldSummary> {
        self.folds.iter().find(|f| f.held_out == held_out)
    }

    pub fn from_runs(model: &str, seeds: &[u64], folds: &[String], runs: Vec<RunRecord>) -> Self {
        let summaries: Vec<FoldSummary> = folds
            .iter()
            .map(|c| {
                let mses: Vec<f64> = runs.iter().filter(|r| &r.held_out == c).map(|r| r.mse).collect();
                let (mean, std) = mean_std(&mses);
                FoldSummary {
                    held_out: c.clone(),
                    mses,
                    mean,
                    std,
                }
            })
            .collect();
        let k = summaries.len().max(1) as f64;
        LocoReport {
            model: model.to_string(),
            seeds: seeds.to_vec(),
            overall_mean: summaries.iter().map(|f| f.mean).sum::<f64>() / k,
            overall_std: summaries.iter().map(|f| f.std).sum::<f64>() / k,
            folds: summaries,
            runs,
        }
    }
}

/// Mean and sample standard deviation; the deviation is 0 for a single value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains on a fold's training part and scores its test part.
pub fn run_fold(
    fold: &LocoFold,
    spec: &ModelSpec,
    graphs: &GraphSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunRecord> {
    let outcome = train(spec, &fold.train, graphs, cfg, seed)?;
    let preds = predict_samples(&outcome.model, &fold.test, graphs)?;
    let mse = mse(&preds, &fold.test)?;
    let predictions = fold
        .test
        .iter()
        .zip(&preds)
        .flat_map(|(s, p)| {
            s.target.iter().zip(p).enumerate().map(|(gene, (&target, &prediction))| PredictionRecord {
                sample: s.id(),
                gene,
                target,
                prediction,
            })
        })
        .collect();
    Ok(RunRecord {
        held_out: fold.held_out.clone(),
        seed,
        mse,
        epochs_run: outcome.loss_curve.len(),
        best_epoch: outcome.best_epoch,
        final_train_loss: outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
        predictions,
    })
}

/// Every fold times every seed, in parallel, assembled in fold-then-seed order.
///
/// Each condition's interventions edit the graph its samples are scored
/// (and, when it is a training condition, trained) with.
pub fn run_loco(
    samples: &[Sample],
    conditions: &[String],
    spec: &ModelSpec,
    graph: &PathwayGraph,
    cfg: &TrainConfig,
    interventions: &HashMap<String, Vec<Intervention>>,
) -> Result<LocoReport> {
    cfg.validate()?;
    let folds = loco_folds(samples, conditions)?;
    let graphs = GraphSet::with_interventions(graph.clone(), interventions)?;
    let jobs: Vec<(usize, u64)> = (0..folds.len())
        .flat_map(|f| cfg.seeds.iter().map(move |&s| (f, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(f, seed)| run_fold(&folds[f], spec, &graphs, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = folds.iter().map(|f| f.held_out.clone()).collect();
    Ok(LocoReport::from_runs(spec.label(), &cfg.seeds, &names, runs))
}
