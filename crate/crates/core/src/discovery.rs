//! Interaction discovery without a structural prior.
//!
//! A tanh-attention GAT is trained on a single fully connected relation over
//! all conditions pooled. The eval-mode attention it assigns each (target,
//! source) pair, averaged over samples, heads and seeds, is read as a signed
//! interaction score and compared with a known signed edge set.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, Standardizer};
use crate::error::{Error, Result};
use crate::graph::{GraphSet, PathwayGraph};
use crate::models::{AttentionActivation, Batch, GatConfig, Model, ModelSpec};
use crate::train::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub gat: GatConfig,
    pub train: TrainConfig,
    /// Whether the fully connected graph keeps self-loops.
    pub include_self: bool,
    /// Z-score expression per gene before training.
    pub standardize: bool,
    pub threshold: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            gat: GatConfig {
                activation: AttentionActivation::Tanh,
                ..GatConfig::default()
            },
            train: TrainConfig::default(),
            include_self: true,
            standardize: true,
            threshold: 0.05,
        }
    }
}

/// Learned scores indexed `[target][source]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedInteractionMatrix {
    pub genes: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Per-seed matrices in seed order.
    pub per_seed: Vec<Vec<Vec<f64>>>,
    pub heads: usize,
    pub samples: usize,
}

impl SignedInteractionMatrix {
    pub fn from_scores(genes: Vec<String>, scores: Vec<Vec<f64>>) -> Self {
        SignedInteractionMatrix {
            genes,
            per_seed: vec![scores.clone()],
            scores,
            seeds: Vec::new(),
            heads: 0,
            samples: 0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.genes.len()).map(|i| self.scores[i][i]).collect()
    }

    /// `(target, source, score)` for every ordered pair of distinct genes.
    pub fn off_diagonal(&self) -> Vec<(usize, usize, f64)> {
        let n = self.genes.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.scores[i][j]))
            .collect()
    }

    /// Square matrix: one row per target, one column per source.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target");
        for g in &self.genes {
            write!(out, ",{g}").unwrap();
        }
        out.push('\n');
        for (gene, row) in self.genes.iter().zip(&self.scores) {
            out.push_str(gene);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Long-form edge list for plotting.
    pub fn edge_list_csv(&self) -> String {
        let mut out = String::from("source,target,score,kind\n");
        for (i, target) in self.genes.iter().enumerate() {
            for (j, source) in self.genes.iter().enumerate() {
                let kind = if i == j { "self" } else { "edge" };
                writeln!(out, "{source},{target},{},{kind}", self.scores[i][j]).unwrap();
            }
        }
        out
    }
}

/// +1 activatory, -1 inhibitory, 0 absent, indexed `[target][source]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSigns {
    pub genes: Vec<String>,
    pub signs: Vec<Vec<i8>>,
}

impl GroundTruthSigns {
    pub fn from_graph(graph: &PathwayGraph) -> Self {
        GroundTruthSigns {
            genes: graph.genes().to_vec(),
            signs: graph.signed_edges(),
        }
    }

    pub fn true_edges(&self) -> Vec<(usize, usize, i8)> {
        let n = self.genes.len();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.signs[i][j] != 0)
            .map(|(i, j)| (i, j, self.signs[i][j]))
            .collect()
    }
}

/// Trains one tanh GAT per seed on every sample and averages the attention.
pub fn discover(samples: &[Sample], genes: &[String], cfg: &DiscoveryConfig) -> Result<SignedInteractionMatrix> {
    if cfg.gat.activation != AttentionActivation::Tanh {
        return Err(Error::Config("discovery needs tanh attention".into()));
    }
    cfg.train.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientData("discovery needs at least one sample".into()));
    }
    let names: Vec<&str> = genes.iter().map(String::as_str).collect();
    let graph = PathwayGraph::fully_connected(&names, cfg.include_self)?;
    let mut data = samples.to_vec();
    data.sort_by(|a, b| a.provenance.cmp(&b.provenance));
    if cfg.standardize {
        data = Standardizer::fit(&data)?.apply_all(&data);
    }
    let graphs = GraphSet::uniform(graph.clone());
    let spec = ModelSpec::Gat(cfg.gat.clone());
    let per_seed = cfg
        .train
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = train(&spec, &data, &graphs, &cfg.train, seed)?;
            attention_scores(&out.model, &data, &graph)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignedInteractionMatrix {
        genes: genes.to_vec(),
        scores: mean_matrix(&per_seed),
        seeds: cfg.train.seeds.clone(),
        per_seed,
        heads: cfg.gat.heads,
        samples: samples.len(),
    })
}

/// Final-layer attention averaged over samples and heads, `[target][source]`.
pub fn attention_scores(model: &Model, samples: &[Sample], graph: &PathwayGraph) -> Result<Vec<Vec<f64>>> {
    let Model::Gat(gat) = model else {
        return Err(Error::Config("attention scores need a GAT".into()));
    };
    if graph.num_relations() != 1 {
        return Err(Error::Config("discovery expects a single relation".into()));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::uniform(&refs, graph)?;
    let n = graph.num_genes();
    let last = gat.layers.len() - 1;
    let mut sum = vec![vec![0.0; n]; n];
    let mut count = 0usize;
    for map in gat.attention(&batch)?.into_iter().filter(|m| m.layer == last) {
        for b in 0..samples.len() {
            for (i, row) in sum.iter_mut().enumerate() {
                for (j, s) in row.iter_mut().enumerate() {
                    *s += map.weights.get(b * n + i, j);
                }
            }
        }
        count += samples.len();
    }
    for row in sum.iter_mut() {
        for s in row.iter_mut() {
            *s /= count as f64;
        }
    }
    Ok(sum)
}

fn mean_matrix(ms: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let n = ms[0].len();
    (0..n)
        .map(|i| (0..n).map(|j| ms.iter().map(|m| m[i][j]).sum::<f64>() / ms.len() as f64).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeVerdict {
    pub source: String,
    pub target: String,
    pub truth: i8,
    pub score: f64,
    /// `|score|` reaches the threshold.
    pub detected: bool,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsentPair {
    pub source: String,
    pub target: String,
    pub score: f64,
    pub below_threshold: bool,
}

/// "`source` is the strongest `sign` input of `target`".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingExpectation {
    pub target: String,
    pub source: String,
    pub sign: i8,
}

impl RankingExpectation {
    pub fn new(target: &str, source: &str, sign: i8) -> Self {
        RankingExpectation {
            target: target.into(),
            source: source.into(),
            sign,
        }
    }
}

/// TP53 is the main activator of MDM2 and MDM2 the main inhibitor of TP53.
pub fn p53_expectations() -> Vec<RankingExpectation> {
    vec![
        RankingExpectation::new("MDM2", "TP53", 1),
        RankingExpectation::new("TP53", "MDM2", -1),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingCheck {
    pub expectation: RankingExpectation,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub threshold: f64,
    pub edges: Vec<EdgeVerdict>,
    pub correct: usize,
    pub total: usize,
    pub absent: Vec<AbsentPair>,
    /// Off-diagonal pairs by decreasing magnitude.
    pub ranking: Vec<(String, String, f64)>,
    pub rankings: Vec<RankingCheck>,
    pub diagonal: Vec<(String, f64)>,
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// A true edge is correct when its score has the true sign and reaches `threshold`.
pub fn compare_signs(learned: &SignedInteractionMatrix, truth: &GroundTruthSigns, threshold: f64) -> Result<SignReport> {
    let expectations: Vec<RankingExpectation> = p53_expectations()
        .into_iter()
        .filter(|e| truth.genes.contains(&e.target) && truth.genes.contains(&e.source))
        .collect();
    compare_signs_with(learned, truth, threshold, &expectations)
}

pub fn compare_signs_with(
    learned: &SignedInteractionMatrix,
    truth: &GroundTruthSigns,
    threshold: f64,
    expectations: &[RankingExpectation],
) -> Result<SignReport> {
    if learned.genes != truth.genes {
        return Err(Error::Contract(format!(
            "gene sets differ: learned {:?}, truth {:?}",
            learned.genes, truth.genes
        )));
    }
    let genes = &truth.genes;
    let edges: Vec<EdgeVerdict> = truth
        .true_edges()
        .into_iter()
        .map(|(i, j, s)| {
            let score = learned.scores[i][j];
            EdgeVerdict {
                source: genes[j].clone(),
                target: genes[i].clone(),
                truth: s,
                score,
                detected: score.abs() >= threshold,
                correct: sign_of(score) == s && score.abs() >= threshold,
            }
        })
        .collect();
    let absent = learned
        .off_diagonal()
        .into_iter()
        .filter(|&(i, j, _)| truth.signs[i][j] == 0)
        .map(|(i, j, score)| AbsentPair {
            source: genes[j].clone(),
            target: genes[i].clone(),
            score,
            below_threshold: score.abs() < threshold,
        })
        .collect();
    let mut ranking: Vec<(String, String, f64)> = learned
        .off_diagonal()
        .into_iter()
        .map(|(i, j, s)| (genes[j].clone(), genes[i].clone(), s))
        .collect();
    ranking.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
    let mut rankings = Vec::with_capacity(expectations.len());
    for e in expectations {
        let i = index(genes, &e.target)?;
        let j = index(genes, &e.source)?;
        let own = learned.scores[i][j];
        let passed = sign_of(own) == e.sign
            && (0..genes.len())
                .filter(|&k| k != i && k != j)
                .all(|k| f64::from(e.sign) * learned.scores[i][k] < f64::from(e.sign) * own);
        rankings.push(RankingCheck {
            expectation: e.clone(),
            passed,
        });
    }
    let correct = edges.iter().filter(|e| e.correct).count();
    Ok(SignReport {
        threshold,
        total: edges.len(),
        correct,
        edges,
        absent,
        ranking,
        rankings,
        diagonal: genes.iter().cloned().zip(learned.diagonal()).collect(),
    })
}

fn index(genes: &[String], name: &str) -> Result<usize> {
    genes
        .iter()
        .position(|g| g == name)
        .ok_or_else(|| Error::UnknownGene(name.to_string()))
}

fn sign_word(s: i8) -> &'static str {
    match s {
        1 => "activates",
        -1 => "inhibits",
        _ => "absent",
    }
}

impl fmt::Display for SignReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "signs correct: {}/{} (threshold {})", self.correct, self.total, self.threshold)?;
        for e in &self.edges {
            writeln!(
                f,
                "  {:<6} {} {:<6} score {:+.4}  {}",
                e.source,
                sign_word(e.truth),
                e.target,
                e.score,
                if !e.detected {
                    "absent"
                } else if e.correct {
                    "correct"
                } else {
                    "WRONG"
                }
            )?;
        }
        for a in &self.absent {
            writeln!(
                f,
                "  {:<6} -> {:<6} (no edge) score {:+.4}  {}",
                a.source,
                a.target,
                a.score,
                if a.below_threshold { "below threshold" } else { "above threshold" }
            )?;
        }
        for r in &self.rankings {
            let e = &r.expectation;
            let role = if e.sign > 0 { "activator" } else { "inhibitor" };
            writeln!(
                f,
                "  main {role} of {}: {} {}",
                e.target,
                e.source,
                if r.passed { "yes" } else { "no" }
            )?;
        }
        for (g, s) in &self.diagonal {
            writeln!(f, "  self {:<6} score {:+.4}", g, s)?;
        }
        Ok(())
    }
}
