//! Windowed samples, per-gene standardisation and leave-one-condition-out folds.
//!
//! Node features are laid out as
//!
//! | columns        | content                                   |
//! |----------------|-------------------------------------------|
//! | `0..3`         | the gene's expression at t1, t2, t3       |
//! | `3..6`         | time gaps, shared by all genes            |
//! | `6..6+K`       | one-hot treatment condition, shared       |
//!
//! By default the gaps are `(t2-t1, t3-t2, t4-t3)`: the last one is the
//! horizon to the predicted point, which matters on irregular grids.
//! [`DeltaTMode::WindowOnly`] keeps only the two gaps inside the window and
//! zero-fills the third column.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::Trajectory;
use crate::tensor::Tensor;

pub const WINDOW: usize = 3;
/// Standard deviations below this are replaced by 1.
pub const MIN_SD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaTMode {
    #[default]
    IncludeTarget,
    WindowOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub num_conditions: usize,
}

impl FeatureLayout {
    pub fn expression(&self) -> Range<usize> {
        0..WINDOW
    }

    pub fn time_gaps(&self) -> Range<usize> {
        WINDOW..2 * WINDOW
    }

    pub fn treatment(&self) -> Range<usize> {
        2 * WINDOW..2 * WINDOW + self.num_conditions
    }

    pub fn width(&self) -> usize {
        2 * WINDOW + self.num_conditions
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub trajectory: String,
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `N x F` node features.
    pub features: Tensor,
    /// Expression at t4, one value per gene.
    pub target: Vec<f64>,
    pub condition: String,
    pub provenance: Provenance,
}

impl Sample {
    pub fn num_genes(&self) -> usize {
        self.target.len()
    }

    pub fn id(&self) -> String {
        format!("{}@{}", self.provenance.trajectory, self.provenance.start)
    }
}

/// Consecutive stride-1 windows `(t1, t2, t3) -> t4` over one trajectory.
pub fn window_samples(traj: &Trajectory, conditions: &[String], mode: DeltaTMode) -> Result<Vec<Sample>> {
    let t = traj.len();
    if t < WINDOW + 1 {
        return Err(Error::InsufficientData(format!(
            "trajectory {} has {t} time points; at least {} are needed",
            traj.id(),
            WINDOW + 1
        )));
    }
    let k = conditions
        .iter()
        .position(|c| *c == traj.condition)
        .ok_or_else(|| Error::UnknownCondition(traj.condition.clone()))?;
    let layout = FeatureLayout {
        num_conditions: conditions.len(),
    };
    let n = traj.genes.len();
    let f = layout.width();
    let mut out = Vec::with_capacity(t - WINDOW);
    for start in 0..t - WINDOW {
        let ts = &traj.times[start..start + WINDOW + 1];
        let gaps = match mode {
            DeltaTMode::IncludeTarget => [ts[1] - ts[0], ts[2] - ts[1], ts[3] - ts[2]],
            DeltaTMode::WindowOnly => [ts[1] - ts[0], ts[2] - ts[1], 0.0],
        };
        let mut data = vec![0.0; n * f];
        for g in 0..n {
            let row = &mut data[g * f..(g + 1) * f];
            row[..WINDOW].copy_from_slice(&traj.values[g][start..start + WINDOW]);
            row[layout.time_gaps()].copy_from_slice(&gaps);
            row[layout.treatment().start + k] = 1.0;
        }
        out.push(Sample {
            features: Tensor::new(vec![n, f], data)?,
            target: (0..n).map(|g| traj.values[g][start + WINDOW]).collect(),
            condition: traj.condition.clone(),
            provenance: Provenance {
                trajectory: traj.id(),
                start,
            },
        });
    }
    Ok(out)
}

pub fn window_all(trajs: &[Trajectory], conditions: &[String], mode: DeltaTMode) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for t in trajs {
        out.extend(window_samples(t, conditions, mode)?);
    }
    Ok(out)
}

/// Per-gene z-scoring fitted on training samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Statistics over every distinct measurement the samples cover, so
    /// points shared by overlapping windows count once.
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InsufficientData("cannot fit a standardizer on zero samples".into()))?;
        let n = first.num_genes();
        let mut points: BTreeMap<(&str, usize), Vec<f64>> = BTreeMap::new();
        for s in samples {
            let traj = s.provenance.trajectory.as_str();
            for offset in 0..=WINDOW {
                points.entry((traj, s.provenance.start + offset)).or_insert_with(|| {
                    (0..n)
                        .map(|g| {
                            if offset < WINDOW {
                                s.features.get(g, offset)
                            } else {
                                s.target[g]
                            }
                        })
                        .collect()
                });
            }
        }
        let count = points.len() as f64;
        let mut mean = vec![0.0; n];
        for v in points.values() {
            for g in 0..n {
                mean[g] += v[g];
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        let mut sd = vec![0.0; n];
        for v in points.values() {
            for g in 0..n {
                sd[g] += (v[g] - mean[g]).powi(2);
            }
        }
        for (g, s) in sd.iter_mut().enumerate() {
            *s = (*s / count).sqrt();
            if *s < MIN_SD {
                log::warn!("gene {g} has near-zero variance; passing it through with sd = 1");
                *s = 1.0;
            }
        }
        Ok(Standardizer { mean, sd })
    }

    pub fn apply_value(&self, gene: usize, v: f64) -> f64 {
        (v - self.mean[gene]) / self.sd[gene]
    }

    pub fn invert_value(&self, gene: usize, z: f64) -> f64 {
        z * self.sd[gene] + self.mean[gene]
    }

    /// Standardises the expression columns and the target.
    pub fn apply(&self, s: &Sample) -> Sample {
        let mut out = s.clone();
        for g in 0..s.num_genes() {
            for c in 0..WINDOW {
                let v = s.features.get(g, c);
                out.features.set(g, c, self.apply_value(g, v));
            }
            out.target[g] = self.apply_value(g, s.target[g]);
        }
        out
    }

    pub fn apply_all(&self, samples: &[Sample]) -> Vec<Sample> {
        samples.iter().map(|s| self.apply(s)).collect()
    }

    /// Restores raw units for the expression columns and the target.
    pub fn invert(&self, s: &Sample) -> Sample {
        let mut out = s.clone();
        for g in 0..s.num_genes() {
            for c in 0..WINDOW {
                let v = s.features.get(g, c);
                out.features.set(g, c, self.invert_value(g, v));
            }
            out.target[g] = self.invert_value(g, s.target[g]);
        }
        out
    }

    pub fn invert_predictions(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(g, &v)| self.invert_value(g, v)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LocoFold {
    pub held_out: String,
    /// Both parts are standardised with `standardizer`.
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub standardizer: Standardizer,
}

/// One fold per condition; each fold refits the standardizer on its training part.
pub fn loco_folds(samples: &[Sample], conditions: &[String]) -> Result<Vec<LocoFold>> {
    if conditions.len() < 2 {
        return Err(Error::InsufficientData("LOCO needs at least two conditions".into()));
    }
    for c in conditions {
        if !samples.iter().any(|s| &s.condition == c) {
            return Err(Error::InsufficientData(format!("condition {c} has no samples")));
        }
    }
    if let Some(s) = samples.iter().find(|s| !conditions.contains(&s.condition)) {
        return Err(Error::UnknownCondition(s.condition.clone()));
    }
    conditions
        .iter()
        .map(|held| {
            let (test_raw, train_raw): (Vec<Sample>, Vec<Sample>) =
                samples.iter().cloned().partition(|s| &s.condition == held);
            let standardizer = Standardizer::fit(&train_raw)?;
            Ok(LocoFold {
                held_out: held.clone(),
                train: standardizer.apply_all(&train_raw),
                test: standardizer.apply_all(&test_raw),
                standardizer,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct FoldEntry<'a> {
    held_out: &'a str,
    train_conditions: Vec<&'a str>,
    mean: &'a [f64],
    sd: &'a [f64],
    train: Vec<String>,
    test: Vec<String>,
}

#[derive(Serialize)]
struct FoldManifest<'a> {
    fold: Vec<FoldEntry<'a>>,
}

/// TOML listing of each fold's sample ids and standardisation statistics.
pub fn fold_manifest(folds: &[LocoFold]) -> String {
    let manifest = FoldManifest {
        fold: folds
            .iter()
            .map(|f| {
                let conds: BTreeSet<&str> = f.train.iter().map(|s| s.condition.as_str()).collect();
                FoldEntry {
                    held_out: &f.held_out,
                    train_conditions: conds.into_iter().collect(),
                    mean: &f.standardizer.mean,
                    sd: &f.standardizer.sd,
                    train: f.train.iter().map(Sample::id).collect(),
                    test: f.test.iter().map(Sample::id).collect(),
                }
            })
            .collect(),
    };
    toml::to_string(&manifest).expect("fold manifest serialises")
}

const FIXED_COLUMNS: [&str; 3] = ["condition", "replicate", "time_h"];

fn header_for(genes: &[String]) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(genes.iter().cloned())
        .collect()
}

/// Writes `condition,replicate,time_h,<genes...>` rows, one per time point.
pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let text = trajectories_to_csv(trajs)?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn trajectories_to_csv(trajs: &[Trajectory]) -> Result<String> {
    let genes = match trajs.first() {
        Some(t) => t.genes.clone(),
        None => return Err(Error::InsufficientData("no trajectories to write".into())),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(header_for(&genes)).map_err(csv_err)?;
    for t in trajs {
        if t.genes != genes {
            return Err(Error::Config(format!("trajectory {} has a different gene set", t.id())));
        }
        for (k, time) in t.times.iter().enumerate() {
            let mut row = vec![t.condition.clone(), t.replicate.to_string(), time.to_string()];
            row.extend(t.values.iter().map(|series| series[k].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Reads a trajectory CSV. Rows sharing `(condition, replicate)` form one
/// trajectory, in order of first appearance.
pub fn read_trajectories(path: &Path, genes: &[String], conditions: &[String]) -> Result<Vec<Trajectory>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trajectories(file, path, genes, conditions)
}

fn parse_trajectories<R: std::io::Read>(
    reader: R,
    path: &Path,
    genes: &[String],
    conditions: &[String],
) -> Result<Vec<Trajectory>> {
    let schema = |line: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| schema(1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let expected = header_for(genes);
    if header != expected {
        return Err(schema(
            1,
            format!("expected header [{}], found [{}]", expected.join(","), header.join(",")),
        ));
    }
    let mut order: Vec<(String, u32)> = Vec::new();
    let mut groups: BTreeMap<(String, u32), Trajectory> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            schema(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let condition = rec[0].trim().to_string();
        if !conditions.contains(&condition) {
            return Err(schema(line, format!("unknown condition `{condition}`")));
        }
        let replicate: u32 = rec[1]
            .trim()
            .parse()
            .map_err(|_| schema(line, format!("replicate `{}` is not an integer", &rec[1])))?;
        let parse_f = |field: &str, col: &str| -> Result<f64> {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| schema(line, format!("{col} value `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(schema(line, format!("{col} value `{field}` is not finite")));
            }
            Ok(v)
        };
        let time = parse_f(&rec[2], "time_h")?;
        let key = (condition.clone(), replicate);
        if !groups.contains_key(&key) {
            order.push(key.clone());
            groups.insert(
                key.clone(),
                Trajectory {
                    condition,
                    replicate,
                    genes: genes.to_vec(),
                    times: Vec::new(),
                    values: vec![Vec::new(); genes.len()],
                },
            );
        }
        let traj = groups.get_mut(&key).unwrap();
        if let Some(&last) = traj.times.last() {
            if time == last {
                return Err(schema(line, format!("duplicate time stamp {time} in {}", traj.id())));
            }
            if time < last {
                return Err(schema(line, format!("time {time} is not increasing in {}", traj.id())));
            }
        }
        traj.times.push(time);
        for (g, gene) in genes.iter().enumerate() {
            let v = parse_f(&rec[3 + g], gene)?;
            traj.values[g].push(v);
        }
    }
    Ok(order.into_iter().map(|k| groups.remove(&k).unwrap()).collect())
}

/// Reads one CSV file, or every `*.csv` in a directory in file-name order.
pub fn read_trajectory_source(path: &Path, genes: &[String], conditions: &[String]) -> Result<Vec<Trajectory>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::InsufficientData(format!(
                "{} contains no trajectory CSV files",
                path.display()
            )));
        }
        let mut out = Vec::new();
        for f in files {
            out.extend(read_trajectories(&f, genes, conditions)?);
        }
        Ok(out)
    } else {
        read_trajectories(path, genes, conditions)
    }
}
