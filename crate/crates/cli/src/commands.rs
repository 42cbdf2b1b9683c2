use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pathgat::dataset::{fold_manifest, read_trajectory_source, window_all, write_trajectories, Sample, Standardizer};
use pathgat::discovery::{compare_signs, discover, GroundTruthSigns, SignReport, SignedInteractionMatrix};
use pathgat::graph::{GraphSet, Intervention, PathwayGraph};
use pathgat::models::ModelSpec;
use pathgat::report::{config_hash, intervention_table, loco_csv, loco_table, predictions_csv, run_log};
use pathgat::simulator::{generate_dataset, Trajectory, GENES};
use pathgat::train::{run_loco, train, LocoReport};
use pathgat::{Error, Result};

use crate::config::ExperimentConfig;

pub const RESOLVED: &str = "config.resolved.toml";
pub const REPORTS: &str = "reports.json";
pub const DISCOVERY: &str = "discovery.json";

/// A loaded config plus everything derived from it.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub graph: PathwayGraph,
    pub interventions: HashMap<String, Vec<Intervention>>,
    pub out: PathBuf,
}

impl Experiment {
    pub fn new(mut cfg: ExperimentConfig, out: PathBuf) -> Result<Self> {
        cfg.inline_simulator()?;
        cfg.train.validate()?;
        cfg.discovery.train.validate()?;
        if cfg.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        let pathway = cfg.pathway()?;
        let graph = pathway.build()?;
        let interventions = cfg.intervention_map(&pathway)?;
        for ivs in interventions.values() {
            graph.apply_interventions(ivs)?;
        }
        Ok(Experiment {
            cfg,
            graph,
            interventions,
            out,
        })
    }

    fn genes(&self) -> &[String] {
        self.graph.genes()
    }

    fn conditions(&self) -> &[String] {
        &self.cfg.dataset.conditions
    }

    /// The resolved config, with the intervention map spelled out.
    fn resolved(&self) -> String {
        let mut cfg = self.cfg.clone();
        let mut keys: Vec<&String> = self.interventions.keys().collect();
        keys.sort();
        cfg.interventions = keys
            .into_iter()
            .map(|k| (k.clone(), self.interventions[k].iter().map(|iv| iv.to_string()).collect()))
            .collect();
        cfg.to_toml()
    }

    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        self.write(RESOLVED, &self.resolved())
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn trajectories(&self) -> Result<Vec<Trajectory>> {
        match &self.cfg.paths.data {
            Some(path) => {
                if !path.exists() {
                    return Err(Error::InsufficientData(format!("data path {} does not exist", path.display())));
                }
                read_trajectory_source(path, self.genes(), self.conditions())
            }
            None => {
                if self.genes().iter().map(String::as_str).ne(GENES) {
                    return Err(Error::Config(
                        "the simulator models TP53, MDM2 and MDM4; set paths.data for other pathways".into(),
                    ));
                }
                let sim = &self.cfg.simulation;
                generate_dataset(&sim.config, &sim.conditions, sim.replicates)
            }
        }
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        let trajs = self.trajectories()?;
        window_all(&trajs, self.conditions(), self.cfg.dataset.delta_t)
    }
}

pub fn simulate(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let trajs = {
        let sim = &exp.cfg.simulation;
        generate_dataset(&sim.config, &sim.conditions, sim.replicates)?
    };
    exp.prepare_out()?;
    let mut written = Vec::new();
    for t in &trajs {
        let path = exp.out.join(format!("{}_rep{}.csv", t.condition, t.replicate));
        write_trajectories(&path, std::slice::from_ref(t))?;
        written.push(path);
    }
    Ok(written)
}

/// Fits every model on all samples and saves one checkpoint per seed.
pub fn train_all(exp: &Experiment) -> Result<String> {
    let samples = exp.samples()?;
    let standardizer = Standardizer::fit(&samples)?;
    let data = standardizer.apply_all(&samples);
    let graphs = GraphSet::with_interventions(exp.graph.clone(), &exp.interventions)?;
    exp.prepare_out()?;
    let seeds = &exp.cfg.train.seeds;
    let mut summary = format!("seeds: {seeds:?}\nsamples: {}\n", data.len());
    for spec in &exp.cfg.models {
        let label = spec.label().to_lowercase();
        let outcomes = seeds
            .par_iter()
            .map(|&seed| train(spec, &data, &graphs, &exp.cfg.train, seed))
            .collect::<Result<Vec<_>>>()?;
        let mut curves = String::from("seed,epoch,train_loss,val_loss\n");
        for (seed, out) in seeds.iter().zip(&outcomes) {
            out.model.to_checkpoint().save(&exp.out.join(format!("{label}_seed{seed}.json")))?;
            for (epoch, loss) in out.loss_curve.iter().enumerate() {
                let val = out.val_curve.get(epoch).map(|v| v.to_string()).unwrap_or_default();
                writeln!(curves, "{seed},{epoch},{loss},{val}").unwrap();
            }
            writeln!(
                summary,
                "{} seed {seed}: {} epochs, best {:?}, final loss {}",
                spec.label(),
                out.loss_curve.len(),
                out.best_epoch,
                out.loss_curve.last().copied().unwrap_or(f64::NAN)
            )
            .unwrap();
        }
        exp.write(&format!("loss_{label}.csv"), &curves)?;
    }
    exp.write("standardizer.json", &serde_json::to_string_pretty(&standardizer).expect("serialises"))?;
    exp.write("train_summary.txt", &summary)?;
    Ok(summary)
}

/// A named LOCO result column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub report: LocoReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocoOutput {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub columns: Vec<Column>,
    /// `(unmodified column, intervened column)` pairs.
    pub comparisons: Vec<(String, String)>,
}

impl LocoOutput {
    fn column(&self, name: &str) -> Option<&LocoReport> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.report)
    }

    /// The fold comparison across models, followed by any intervention tables.
    pub fn tables_text(&self) -> String {
        let base: Vec<&LocoReport> = self
            .columns
            .iter()
            .filter(|c| !self.comparisons.iter().any(|(_, iv)| iv == &c.name))
            .map(|c| &c.report)
            .collect();
        let mut out = loco_table(&base).to_text();
        for (plain, iv) in &self.comparisons {
            if let (Some(p), Some(i)) = (self.column(plain), self.column(iv)) {
                writeln!(out, "\n{} with interventions", p.model).unwrap();
                out.push_str(&intervention_table(p, i).to_text());
            }
        }
        out
    }
}

fn column_name(spec: &ModelSpec, intervened: bool) -> String {
    let label = spec.label().to_lowercase();
    if intervened {
        format!("{label}_intervened")
    } else {
        label
    }
}

pub fn loco(exp: &Experiment) -> Result<LocoOutput> {
    let samples = exp.samples()?;
    let conditions = exp.conditions();
    let folds = pathgat::dataset::loco_folds(&samples, conditions)?;
    let resolved = exp.resolved();
    let hash = config_hash(&resolved);
    let none = HashMap::new();
    let any_interventions = exp.interventions.values().any(|v| !v.is_empty());
    let mut columns = Vec::new();
    let mut comparisons = Vec::new();
    for spec in &exp.cfg.models {
        let report = run_loco(&samples, conditions, spec, &exp.graph, &exp.cfg.train, &none)?;
        let plain = column_name(spec, false);
        columns.push(Column {
            name: plain.clone(),
            report,
        });
        if any_interventions && matches!(spec, ModelSpec::Gat(_)) {
            let report = run_loco(&samples, conditions, spec, &exp.graph, &exp.cfg.train, &exp.interventions)?;
            let iv = column_name(spec, true);
            columns.push(Column {
                name: iv.clone(),
                report,
            });
            comparisons.push((plain, iv));
        }
    }
    let output = LocoOutput {
        config_hash: hash.clone(),
        seeds: exp.cfg.train.seeds.clone(),
        columns,
        comparisons,
    };
    exp.prepare_out()?;
    let pairs: Vec<(&str, &LocoReport)> = output.columns.iter().map(|c| (c.name.as_str(), &c.report)).collect();
    exp.write("loco.csv", &loco_csv(&pairs))?;
    exp.write("loco.txt", &output.tables_text())?;
    let mut log = String::new();
    let mut preds = String::new();
    for (name, report) in &pairs {
        log.push_str(&run_log(name, report, &hash));
        let csv = predictions_csv(name, report, exp.genes());
        if preds.is_empty() {
            preds = csv;
        } else {
            preds.extend(csv.split_inclusive('\n').skip(1));
        }
    }
    exp.write("runs.jsonl", &log)?;
    exp.write("predictions.csv", &preds)?;
    exp.write("folds.toml", &fold_manifest(&folds))?;
    exp.write(REPORTS, &serde_json::to_string_pretty(&output).expect("serialises"))?;
    Ok(output)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscoveryOutput {
    pub config_hash: String,
    pub matrix: SignedInteractionMatrix,
    pub report: SignReport,
}

pub fn discover_signs(exp: &Experiment, threshold: Option<f64>) -> Result<DiscoveryOutput> {
    let samples = exp.samples()?;
    let mut cfg = exp.cfg.discovery.clone();
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    let matrix = discover(&samples, exp.genes(), &cfg)?;
    let truth = GroundTruthSigns::from_graph(&exp.graph);
    let report = compare_signs(&matrix, &truth, cfg.threshold)?;
    let output = DiscoveryOutput {
        config_hash: config_hash(&exp.resolved()),
        matrix,
        report,
    };
    exp.prepare_out()?;
    exp.write("interaction_matrix.csv", &output.matrix.to_csv())?;
    exp.write("interaction_edges.csv", &output.matrix.edge_list_csv())?;
    exp.write("verdict.txt", &output.report.to_string())?;
    exp.write(DISCOVERY, &serde_json::to_string_pretty(&output).expect("serialises"))?;
    Ok(output)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Collects a run directory's results into `summary.md`.
pub fn report(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(Error::InsufficientData(format!("{} is not a directory", dir.display())));
    }
    let resolved_path = dir.join(RESOLVED);
    let loco: Option<LocoOutput> = read_json(&dir.join(REPORTS))?;
    let disc: Option<DiscoveryOutput> = read_json(&dir.join(DISCOVERY))?;
    if loco.is_none() && disc.is_none() {
        return Err(Error::InsufficientData(format!(
            "{} holds no LOCO or discovery results",
            dir.display()
        )));
    }
    let mut md = String::from("# Run summary\n\n");
    if resolved_path.exists() {
        let text = fs::read_to_string(&resolved_path).map_err(|e| Error::io(&resolved_path, e))?;
        writeln!(md, "Config hash: `{}`\n", config_hash(&text)).unwrap();
    }
    if let Some(l) = &loco {
        writeln!(md, "## Leave-one-condition-out\n").unwrap();
        writeln!(md, "Seeds: {:?}\n", l.seeds).unwrap();
        writeln!(md, "```\n{}```\n", l.tables_text()).unwrap();
    }
    if let Some(d) = &disc {
        writeln!(md, "## Discovery\n").unwrap();
        writeln!(md, "Seeds: {:?}\n", d.matrix.seeds).unwrap();
        writeln!(md, "```\n{}{}```\n", d.matrix.to_csv(), d.report).unwrap();
    }
    let path = dir.join("summary.md");
    fs::write(&path, &md).map_err(|e| Error::io(&path, e))?;
    Ok(md)
}
