//! Relation-typed pathway graphs.
//!
//! Row `i`, column `j` of relation `r`'s adjacency is 1 when target gene `i`
//! may attend to source gene `j` under `r`. "TP53 activates MDM2" is therefore
//! stored at `activatory[MDM2][TP53]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ACTIVATORY: &str = "activatory";
pub const INHIBITORY: &str = "inhibitory";
pub const SELF_RELATION: &str = "self";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeAction {
    Remove,
    Add,
}

/// Edits a single adjacency entry to encode a known mechanism, e.g. a drug
/// blocking an interaction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Intervention {
    pub relation: String,
    pub source: String,
    pub target: String,
    pub action: EdgeAction,
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let action = match self.action {
            EdgeAction::Remove => "remove",
            EdgeAction::Add => "add",
        };
        write!(f, "{}:{}:{}:{}", self.relation, self.source, self.target, action)
    }
}

impl FromStr for Intervention {
    type Err = Error;

    /// Parses `relation:source:target:remove|add`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [relation, source, target, action] = parts.as_slice() else {
            return Err(Error::Config(format!(
                "intervention `{s}` is not of the form relation:source:target:remove|add"
            )));
        };
        let action = match *action {
            "remove" => EdgeAction::Remove,
            "add" => EdgeAction::Add,
            other => return Err(Error::Config(format!("unknown intervention action `{other}`"))),
        };
        Ok(Intervention {
            relation: relation.to_string(),
            source: source.to_string(),
            target: target.to_string(),
            action,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub relation: String,
}

impl Edge {
    pub fn new(source: &str, target: &str, relation: &str) -> Self {
        Edge {
            source: source.into(),
            target: target.into(),
            relation: relation.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathwayGraph {
    genes: Vec<String>,
    relations: Vec<String>,
    self_relation: Option<usize>,
    /// One row-major `N*N` matrix per relation.
    adjacency: Vec<Vec<u8>>,
}

impl PathwayGraph {
    /// Builds the default three-relation graph (activatory, inhibitory, self).
    pub fn build(genes: &[&str], edges: &[Edge]) -> Result<Self> {
        let genes: Vec<String> = genes.iter().map(|g| g.to_string()).collect();
        let relations = vec![ACTIVATORY.to_string(), INHIBITORY.to_string(), SELF_RELATION.to_string()];
        Self::build_with_relations(genes, relations, Some(SELF_RELATION), edges)
    }

    /// The relation named `self_relation` starts as the identity; every other
    /// relation starts empty.
    pub fn build_with_relations(
        genes: Vec<String>,
        relations: Vec<String>,
        self_relation: Option<&str>,
        edges: &[Edge],
    ) -> Result<Self> {
        if genes.is_empty() {
            return Err(Error::Config("a pathway needs at least one gene".into()));
        }
        unique("gene", &genes)?;
        unique("relation", &relations)?;
        if relations.is_empty() {
            return Err(Error::Config("a pathway needs at least one relation".into()));
        }
        let self_idx = match self_relation {
            Some(name) => Some(
                relations
                    .iter()
                    .position(|r| r == name)
                    .ok_or_else(|| Error::UnknownRelation(name.to_string()))?,
            ),
            None => None,
        };
        let n = genes.len();
        let mut adjacency = vec![vec![0u8; n * n]; relations.len()];
        if let Some(s) = self_idx {
            for i in 0..n {
                adjacency[s][i * n + i] = 1;
            }
        }
        let mut graph = PathwayGraph {
            genes,
            relations,
            self_relation: self_idx,
            adjacency,
        };
        for e in edges {
            let r = graph.relation_index(&e.relation)?;
            let src = graph.gene_index(&e.source)?;
            let tgt = graph.gene_index(&e.target)?;
            graph.adjacency[r][tgt * n + src] = 1;
        }
        Ok(graph)
    }

    /// One relation whose adjacency is all ones (diagonal per `include_self`).
    pub fn fully_connected(genes: &[&str], include_self: bool) -> Result<Self> {
        let genes: Vec<String> = genes.iter().map(|g| g.to_string()).collect();
        if genes.is_empty() {
            return Err(Error::Config("a pathway needs at least one gene".into()));
        }
        unique("gene", &genes)?;
        let n = genes.len();
        let mut adj = vec![1u8; n * n];
        if !include_self {
            for i in 0..n {
                adj[i * n + i] = 0;
            }
        }
        Ok(PathwayGraph {
            genes,
            relations: vec!["all".into()],
            self_relation: None,
            adjacency: vec![adj],
        })
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn num_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn self_relation(&self) -> Option<&str> {
        self.self_relation.map(|i| self.relations[i].as_str())
    }

    pub fn gene_index(&self, name: &str) -> Result<usize> {
        self.genes
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| Error::UnknownGene(name.to_string()))
    }

    pub fn relation_index(&self, name: &str) -> Result<usize> {
        self.relations
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    /// Entry `[target][source]` of a relation's adjacency.
    pub fn entry(&self, relation: usize, target: usize, source: usize) -> u8 {
        let n = self.genes.len();
        self.adjacency[relation][target * n + source]
    }

    pub fn entry_by_name(&self, relation: &str, target: &str, source: &str) -> Result<u8> {
        Ok(self.entry(
            self.relation_index(relation)?,
            self.gene_index(target)?,
            self.gene_index(source)?,
        ))
    }

    /// Adjacency of one relation as an `N x N` 0/1 tensor.
    pub fn adjacency(&self, relation: usize) -> Tensor {
        let n = self.genes.len();
        let data = self.adjacency[relation].iter().map(|&v| f64::from(v)).collect();
        Tensor::new(vec![n, n], data).expect("square adjacency")
    }

    pub fn edge_count(&self, relation: usize) -> usize {
        self.adjacency[relation].iter().filter(|&&v| v == 1).count()
    }

    /// Permitted sources of `target` under `relation`.
    pub fn neighbors(&self, relation: &str, target: usize) -> Result<BTreeSet<usize>> {
        let r = self.relation_index(relation)?;
        let n = self.genes.len();
        if target >= n {
            return Err(Error::Contract(format!("gene index {target} out of range for {n} genes")));
        }
        Ok((0..n).filter(|&j| self.adjacency[r][target * n + j] == 1).collect())
    }

    /// Returns an edited copy; `self` is left untouched.
    pub fn apply_intervention(&self, iv: &Intervention) -> Result<PathwayGraph> {
        let r = self.relation_index(&iv.relation)?;
        let src = self.gene_index(&iv.source)?;
        let tgt = self.gene_index(&iv.target)?;
        let n = self.genes.len();
        let mut out = self.clone();
        out.adjacency[r][tgt * n + src] = match iv.action {
            EdgeAction::Remove => 0,
            EdgeAction::Add => 1,
        };
        Ok(out)
    }

    pub fn apply_interventions(&self, ivs: &[Intervention]) -> Result<PathwayGraph> {
        let mut g = self.clone();
        for iv in ivs {
            g = g.apply_intervention(iv)?;
        }
        Ok(g)
    }

    /// Reorders genes: new gene `k` is old gene `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<PathwayGraph> {
        let n = self.genes.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Contract(format!("{perm:?} is not a permutation of {n} genes")));
        }
        let genes = perm.iter().map(|&p| self.genes[p].clone()).collect();
        let adjacency = self
            .adjacency
            .iter()
            .map(|adj| {
                let mut out = vec![0u8; n * n];
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = adj[perm[i] * n + perm[j]];
                    }
                }
                out
            })
            .collect();
        Ok(PathwayGraph {
            genes,
            relations: self.relations.clone(),
            self_relation: self.self_relation,
            adjacency,
        })
    }

    /// Config that rebuilds exactly this graph.
    pub fn to_config(&self) -> PathwayConfig {
        let n = self.genes.len();
        let mut edges = Vec::new();
        let mut removed_self_loops = Vec::new();
        for (r, adj) in self.adjacency.iter().enumerate() {
            let is_self = self.self_relation == Some(r);
            for i in 0..n {
                for j in 0..n {
                    let v = adj[i * n + j];
                    if is_self && i == j {
                        if v == 0 {
                            removed_self_loops.push(self.genes[i].clone());
                        }
                    } else if v == 1 {
                        edges.push(Edge {
                            source: self.genes[j].clone(),
                            target: self.genes[i].clone(),
                            relation: self.relations[r].clone(),
                        });
                    }
                }
            }
        }
        PathwayConfig {
            genes: self.genes.clone(),
            relations: self.relations.clone(),
            self_relation: self.self_relation().map(str::to_string),
            edges,
            removed_self_loops,
            interventions: BTreeMap::new(),
        }
    }

    /// Signed ground truth: +1 for activatory, -1 for inhibitory, 0 otherwise.
    /// Indexed `[target][source]`; self loops are not included.
    pub fn signed_edges(&self) -> Vec<Vec<i8>> {
        let n = self.genes.len();
        let act = self.relations.iter().position(|r| r == ACTIVATORY);
        let inh = self.relations.iter().position(|r| r == INHIBITORY);
        let mut out = vec![vec![0i8; n]; n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i == j {
                    continue;
                }
                if act.is_some_and(|r| self.entry(r, i, j) == 1) {
                    *v = 1;
                } else if inh.is_some_and(|r| self.entry(r, i, j) == 1) {
                    *v = -1;
                }
            }
        }
        out
    }
}

fn unique(kind: &str, names: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::Config(format!("duplicate {kind} `{n}`")));
        }
    }
    Ok(())
}

fn default_relations() -> Vec<String> {
    vec![ACTIVATORY.into(), INHIBITORY.into(), SELF_RELATION.into()]
}

fn default_self_relation() -> Option<String> {
    Some(SELF_RELATION.into())
}

/// On-disk pathway description (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwayConfig {
    pub genes: Vec<String>,
    #[serde(default = "default_relations")]
    pub relations: Vec<String>,
    #[serde(default = "default_self_relation")]
    pub self_relation: Option<String>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_self_loops: Vec<String>,
    /// Named intervention sets, e.g. `Nutlin`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub interventions: BTreeMap<String, Vec<Intervention>>,
}

impl PathwayConfig {
    /// TP53 / MDM2 / MDM4 feedback loop with five interactions.
    pub fn canonical_p53() -> Self {
        let mut interventions = BTreeMap::new();
        interventions.insert("Nutlin".to_string(), vec![nutlin_intervention()]);
        PathwayConfig {
            genes: vec!["TP53".into(), "MDM2".into(), "MDM4".into()],
            relations: default_relations(),
            self_relation: default_self_relation(),
            edges: vec![
                Edge::new("TP53", "MDM2", ACTIVATORY),
                Edge::new("TP53", "MDM4", ACTIVATORY),
                Edge::new("MDM2", "TP53", INHIBITORY),
                Edge::new("MDM4", "TP53", INHIBITORY),
                Edge::new("MDM2", "MDM4", INHIBITORY),
            ],
            removed_self_loops: Vec::new(),
            interventions,
        }
    }

    pub fn build(&self) -> Result<PathwayGraph> {
        let mut g = PathwayGraph::build_with_relations(
            self.genes.clone(),
            self.relations.clone(),
            self.self_relation.as_deref(),
            &self.edges,
        )?;
        let n = g.genes.len();
        for gene in &self.removed_self_loops {
            let s = g
                .self_relation
                .ok_or_else(|| Error::Config("removed_self_loops requires a self relation".into()))?;
            let i = g.gene_index(gene)?;
            g.adjacency[s][i * n + i] = 0;
        }
        for ivs in self.interventions.values() {
            for iv in ivs {
                g.relation_index(&iv.relation)?;
                g.gene_index(&iv.source)?;
                g.gene_index(&iv.target)?;
            }
        }
        Ok(g)
    }

    pub fn intervention_map(&self) -> HashMap<String, Vec<Intervention>> {
        self.interventions.clone().into_iter().collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pathway config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// A base graph plus per-condition edited copies.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSet {
    base: PathwayGraph,
    by_condition: BTreeMap<String, PathwayGraph>,
}

impl GraphSet {
    pub fn uniform(base: PathwayGraph) -> Self {
        GraphSet {
            base,
            by_condition: BTreeMap::new(),
        }
    }

    /// Applies each condition's interventions to a copy of `base`.
    pub fn with_interventions(base: PathwayGraph, map: &HashMap<String, Vec<Intervention>>) -> Result<Self> {
        let mut by_condition = BTreeMap::new();
        for (cond, ivs) in map {
            if !ivs.is_empty() {
                by_condition.insert(cond.clone(), base.apply_interventions(ivs)?);
            }
        }
        Ok(GraphSet { base, by_condition })
    }

    pub fn base(&self) -> &PathwayGraph {
        &self.base
    }

    pub fn for_condition(&self, condition: &str) -> &PathwayGraph {
        self.by_condition.get(condition).unwrap_or(&self.base)
    }
}

/// Nutlin blocks MDM2's inhibition of TP53.
pub fn nutlin_intervention() -> Intervention {
    Intervention {
        relation: INHIBITORY.into(),
        source: "MDM2".into(),
        target: "TP53".into(),
        action: EdgeAction::Remove,
    }
}
