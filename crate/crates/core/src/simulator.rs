//! Synthetic TP53 / MDM2 / MDM4 expression trajectories.
//!
//! Three mRNA species with linear degradation:
//!
//! ```text
//! dP/dt = k * bP / ((1 + (M/KM)^nM) (1 + (Q/KQ)^nQ)) - dP P
//! dM/dt = bM * P^nP / (KP^nP + P^nP)                  - dM M
//! dQ/dt = bQ * P^nP / (KP^nP + P^nP)                  - dQ Q - g M Q
//! ```
//!
//! `P` is TP53, `M` MDM2 and `Q` MDM4. Under Nutlin the MDM2 repression
//! factor is dropped; under TP53-sh `k` is the knockdown factor, otherwise 1.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GENES: [&str; 3] = ["TP53", "MDM2", "MDM4"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    WT,
    TP53sh,
    Nutlin,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::WT, Condition::TP53sh, Condition::Nutlin];

    pub fn label(self) -> &'static str {
        match self {
            Condition::WT => "WT",
            Condition::TP53sh => "TP53sh",
            Condition::Nutlin => "Nutlin",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WT" => Ok(Condition::WT),
            "TP53sh" | "TP53-sh" => Ok(Condition::TP53sh),
            "Nutlin" => Ok(Condition::Nutlin),
            other => Err(Error::UnknownCondition(other.to_string())),
        }
    }
}

/// Rate constants (per hour) and Hill parameters of the feedback loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeParams {
    pub tp53_production: f64,
    pub tp53_degradation: f64,
    pub mdm2_repression_threshold: f64,
    pub mdm2_repression_hill: f64,
    pub mdm4_repression_threshold: f64,
    pub mdm4_repression_hill: f64,
    pub tp53_activation_threshold: f64,
    pub tp53_activation_hill: f64,
    pub mdm2_production: f64,
    pub mdm2_degradation: f64,
    pub mdm4_production: f64,
    pub mdm4_degradation: f64,
    pub mdm4_degradation_by_mdm2: f64,
    /// Multiplier on TP53 production under TP53-sh.
    pub knockdown_factor: f64,
}

impl Default for OdeParams {
    fn default() -> Self {
        OdeParams {
            tp53_production: 3.5,
            tp53_degradation: 0.35,
            mdm2_repression_threshold: 0.25,
            mdm2_repression_hill: 7.0,
            mdm4_repression_threshold: 0.7,
            mdm4_repression_hill: 3.0,
            tp53_activation_threshold: 0.5,
            tp53_activation_hill: 3.0,
            mdm2_production: 0.5,
            mdm2_degradation: 0.12,
            mdm4_production: 2.0,
            mdm4_degradation: 0.18,
            mdm4_degradation_by_mdm2: 0.6,
            knockdown_factor: 0.2,
        }
    }
}

impl OdeParams {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("tp53_production", self.tp53_production),
            ("tp53_degradation", self.tp53_degradation),
            ("mdm2_repression_threshold", self.mdm2_repression_threshold),
            ("mdm2_repression_hill", self.mdm2_repression_hill),
            ("mdm4_repression_threshold", self.mdm4_repression_threshold),
            ("mdm4_repression_hill", self.mdm4_repression_hill),
            ("tp53_activation_threshold", self.tp53_activation_threshold),
            ("tp53_activation_hill", self.tp53_activation_hill),
            ("mdm2_production", self.mdm2_production),
            ("mdm2_degradation", self.mdm2_degradation),
            ("mdm4_production", self.mdm4_production),
            ("mdm4_degradation", self.mdm4_degradation),
            ("mdm4_degradation_by_mdm2", self.mdm4_degradation_by_mdm2),
            ("knockdown_factor", self.knockdown_factor),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("simulator parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Time derivative of `[TP53, MDM2, MDM4]` under `condition`.
    pub fn derivative(&self, state: [f64; 3], condition: Condition) -> [f64; 3] {
        let [p, m, q] = state;
        let knock = if condition == Condition::TP53sh {
            self.knockdown_factor
        } else {
            1.0
        };
        let mdm2_rep = if condition == Condition::Nutlin {
            1.0
        } else {
            1.0 / (1.0 + (m / self.mdm2_repression_threshold).powf(self.mdm2_repression_hill))
        };
        let mdm4_rep = 1.0 / (1.0 + (q / self.mdm4_repression_threshold).powf(self.mdm4_repression_hill));
        let pn = p.powf(self.tp53_activation_hill);
        let act = pn / (self.tp53_activation_threshold.powf(self.tp53_activation_hill) + pn);
        [
            knock * self.tp53_production * mdm2_rep * mdm4_rep - self.tp53_degradation * p,
            self.mdm2_production * act - self.mdm2_degradation * m,
            self.mdm4_production * act - self.mdm4_degradation * q - self.mdm4_degradation_by_mdm2 * m * q,
        ]
    }
}

fn default_sample_times() -> Vec<f64> {
    (0..9).map(|k| 3.0 * k as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub params: OdeParams,
    pub condition: Condition,
    /// Hours.
    pub duration: f64,
    pub sample_times: Vec<f64>,
    /// Standard deviation of the multiplicative log-normal observation noise.
    pub noise_sd: f64,
    /// Standard deviation of the multiplicative log-normal jitter on the
    /// initial state.
    pub init_jitter: f64,
    pub initial_state: [f64; 3],
    /// Upper bound on the RK4 step, hours.
    pub max_step: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            params: OdeParams::default(),
            condition: Condition::WT,
            duration: 24.0,
            sample_times: default_sample_times(),
            noise_sd: 0.05,
            init_jitter: 0.05,
            initial_state: [1.0, 0.15, 0.2],
            max_step: 0.01,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn noiseless(condition: Condition) -> Self {
        SimConfig {
            condition,
            noise_sd: 0.0,
            init_jitter: 0.0,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::Config(format!("duration must be nonnegative, got {}", self.duration)));
        }
        if self.sample_times.is_empty() {
            return Err(Error::Config("sample_times is empty".into()));
        }
        if self.sample_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sample_times must be strictly increasing".into()));
        }
        let first = self.sample_times[0];
        let last = *self.sample_times.last().unwrap();
        if first < 0.0 || last > self.duration {
            return Err(Error::Config(format!(
                "sample_times must lie in [0, {}], got [{first}, {last}]",
                self.duration
            )));
        }
        if !(self.max_step > 0.0 && self.max_step <= 0.01) {
            return Err(Error::Config(format!("max_step must lie in (0, 0.01] h, got {}", self.max_step)));
        }
        if self.noise_sd < 0.0 || self.init_jitter < 0.0 {
            return Err(Error::Config("noise_sd and init_jitter must be nonnegative".into()));
        }
        if self.initial_state.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("initial_state must be positive".into()));
        }
        let count = self.sample_times.len();
        if !(6..=12).contains(&count) && count > 1 {
            log::warn!("{count} sample times is outside the 6-12 range of typical time-course data");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// A condition-tagged expression time course.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub condition: String,
    pub replicate: u32,
    pub genes: Vec<String>,
    /// Hours, strictly increasing.
    pub times: Vec<f64>,
    /// `values[gene][time]`.
    pub values: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn id(&self) -> String {
        format!("{}/rep{}", self.condition, self.replicate)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn gene_series(&self, gene: &str) -> Option<&[f64]> {
        self.genes.iter().position(|g| g == gene).map(|i| self.values[i].as_slice())
    }
}

fn rk4_step(params: &OdeParams, cond: Condition, s: [f64; 3], h: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], f: f64| [a[0] + f * b[0], a[1] + f * b[1], a[2] + f * b[2]];
    let k1 = params.derivative(s, cond);
    let k2 = params.derivative(add(s, k1, h / 2.0), cond);
    let k3 = params.derivative(add(s, k2, h / 2.0), cond);
    let k4 = params.derivative(add(s, k3, h), cond);
    [
        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

/// Fixed-step RK4 from `initial` at t=0, returning the state at each of
/// `times`. Steps are shortened so every sample time is hit exactly.
pub fn integrate(
    params: &OdeParams,
    condition: Condition,
    initial: [f64; 3],
    times: &[f64],
    max_step: f64,
) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut state = initial;
    for &target in times {
        let gap = target - t;
        if gap > 0.0 {
            let steps = (gap / max_step).ceil() as usize;
            let h = gap / steps as f64;
            for k in 0..steps {
                state = rk4_step(params, condition, state, h);
                if state.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::SimulationDiverged {
                        time: t + (k + 1) as f64 * h,
                    });
                }
            }
            t = target;
        }
        out.push(state);
    }
    Ok(out)
}

pub fn simulate(cfg: &SimConfig) -> Result<Trajectory> {
    simulate_replicate(cfg, 0)
}

fn simulate_replicate(cfg: &SimConfig, replicate: u32) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut initial = cfg.initial_state;
    if cfg.init_jitter > 0.0 {
        let jitter = Normal::new(0.0, cfg.init_jitter).map_err(|e| Error::Config(e.to_string()))?;
        for v in initial.iter_mut() {
            *v *= jitter.sample(&mut rng).exp();
        }
    }
    let states = integrate(&cfg.params, cfg.condition, initial, &cfg.sample_times, cfg.max_step)?;
    let mut values = vec![Vec::with_capacity(states.len()); 3];
    for s in &states {
        for (g, v) in s.iter().enumerate() {
            values[g].push(*v);
        }
    }
    if cfg.noise_sd > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        for series in values.iter_mut() {
            for v in series.iter_mut() {
                *v *= noise.sample(&mut rng).exp();
            }
        }
    }
    Ok(Trajectory {
        condition: cfg.condition.label().to_string(),
        replicate,
        genes: GENES.iter().map(|g| g.to_string()).collect(),
        times: cfg.sample_times.clone(),
        values,
    })
}

fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed used for replicate `replicate` of `condition` given a base seed.
pub fn replicate_seed(base: u64, condition: Condition, replicate: u32) -> u64 {
    let c = Condition::ALL.iter().position(|&x| x == condition).unwrap() as u64;
    mix_seed(base ^ mix_seed(c * 1_000 + u64::from(replicate)))
}

/// `replicates` trajectories per condition, replicate ids starting at 1.
pub fn generate_dataset(base: &SimConfig, conditions: &[Condition], replicates: u32) -> Result<Vec<Trajectory>> {
    if conditions.is_empty() {
        return Err(Error::Config("at least one condition is required".into()));
    }
    let mut out = Vec::with_capacity(conditions.len() * replicates as usize);
    for &condition in conditions {
        for rep in 1..=replicates {
            let cfg = SimConfig {
                condition,
                seed: replicate_seed(base.seed, condition, rep),
                ..base.clone()
            };
            out.push(simulate_replicate(&cfg, rep)?);
        }
    }
    Ok(out)
}
