//! Non-stationary two-arm experiment series and the K-arm environments built
//! from them.
//!
//! CSV layout: `experiment_id,metric_id,time_index,mean_c,var_c,mean_t,var_t`,
//! one row per interval.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Environment, NoiseFamily};
use crate::error::{Error, Result};
use crate::model::{ContextSet, FeatureMap, LossFamily, ModelSpec};
use crate::posterior::HorizonSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    experiment_id: String,
    metric_id: String,
    time_index: usize,
    mean_c: f64,
    var_c: f64,
    mean_t: f64,
    var_t: f64,
}

/// Per-interval control and treatment moments of one experiment metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsosInstance {
    pub experiment_id: String,
    pub metric_id: String,
    pub mean_c: Vec<f64>,
    pub var_c: Vec<f64>,
    pub mean_t: Vec<f64>,
    pub var_t: Vec<f64>,
}

impl AsosInstance {
    pub fn intervals(&self) -> usize {
        self.mean_c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.mean_c.len();
        if t == 0 || self.var_c.len() != t || self.mean_t.len() != t || self.var_t.len() != t {
            return Err(Error::MalformedInstance(format!(
                "{}/{}: series lengths differ",
                self.experiment_id, self.metric_id
            )));
        }
        let all = self.mean_c.iter().chain(&self.var_c).chain(&self.mean_t).chain(&self.var_t);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::MalformedInstance(format!("{}/{}: non-finite value", self.experiment_id, self.metric_id)));
        }
        if self.var_c.iter().chain(&self.var_t).any(|&v| v <= 0.0) {
            return Err(Error::MalformedInstance(format!(
                "{}/{}: variances must be positive",
                self.experiment_id, self.metric_id
            )));
        }
        Ok(())
    }

    /// `|mean_t - mean_c|` per interval.
    pub fn gaps(&self) -> Vec<f64> {
        self.mean_t.iter().zip(&self.mean_c).map(|(t, c)| (t - c).abs()).collect()
    }

    pub fn mean_gap(&self) -> f64 {
        let g = self.gaps();
        g.iter().sum::<f64>() / g.len() as f64
    }

    pub fn mean_variance(&self) -> f64 {
        let n = 2 * self.intervals();
        self.var_c.iter().chain(&self.var_t).sum::<f64>() / n as f64
    }
}

/// Signal-to-noise ratio of an average gap against the standard error of a batch mean.
pub fn batch_snr(gap: f64, variance: f64, batch: usize) -> f64 {
    gap / (variance / batch as f64).sqrt()
}

/// Reads every series in a CSV, grouped by `(experiment_id, metric_id)` in
/// first-appearance order and sorted by `time_index`.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<AsosInstance>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::MalformedInstance(e.to_string()))?.clone();
    let expected = ["experiment_id", "metric_id", "time_index", "mean_c", "var_c", "mean_t", "var_t"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::MalformedInstance(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut groups: Vec<(String, String, Vec<CsvRow>)> = Vec::new();
    for (line, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = rec.map_err(|e| Error::MalformedInstance(format!("row {}: {e}", line + 2)))?;
        for v in [row.mean_c, row.var_c, row.mean_t, row.var_t] {
            if !v.is_finite() {
                return Err(Error::MalformedInstance(format!("row {}: non-finite value", line + 2)));
            }
        }
        match groups.iter_mut().find(|g| g.0 == row.experiment_id && g.1 == row.metric_id) {
            Some(g) => g.2.push(row),
            None => groups.push((row.experiment_id.clone(), row.metric_id.clone(), vec![row])),
        }
    }
    groups
        .into_iter()
        .map(|(experiment_id, metric_id, mut rows)| {
            rows.sort_by_key(|r| r.time_index);
            if rows.windows(2).any(|w| w[0].time_index == w[1].time_index) {
                return Err(Error::MalformedInstance(format!("{experiment_id}/{metric_id}: repeated time_index")));
            }
            let inst = AsosInstance {
                experiment_id,
                metric_id,
                mean_c: rows.iter().map(|r| r.mean_c).collect(),
                var_c: rows.iter().map(|r| r.var_c).collect(),
                mean_t: rows.iter().map(|r| r.mean_t).collect(),
                var_t: rows.iter().map(|r| r.var_t).collect(),
            };
            inst.validate()?;
            Ok(inst)
        })
        .collect()
}

pub fn write_csv<W: Write>(instances: &[AsosInstance], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let io = |e: csv::Error| Error::MalformedInstance(e.to_string());
    for inst in instances {
        for t in 0..inst.intervals() {
            w.serialize(CsvRow {
                experiment_id: inst.experiment_id.clone(),
                metric_id: inst.metric_id.clone(),
                time_index: t,
                mean_c: inst.mean_c[t],
                var_c: inst.var_c[t],
                mean_t: inst.mean_t[t],
                var_t: inst.var_t[t],
            })
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::MalformedInstance(e.to_string()))
}

/// Random two-arm series with drifting levels and a gap that can change sign.
///
/// Each instance draws a log-normal reward variance, a base gap between 0.1
/// and roughly 1.5 standard errors of a `batch`-unit mean, and an AR(1) drift
/// shared by both arms.
pub fn synthetic_instance(id: usize, intervals: usize, batch: usize, seed: u64) -> AsosInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (id as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
    let log_var = 3.0 * z();
    let var = log_var.exp().clamp(1e-3, 3e3);
    let se = (var / batch as f64).sqrt();
    let base_gap = se * (0.1 + 0.4 * z().abs());
    let level = 10.0 * z();
    let mut drift = 0.0;
    let mut mean_c = Vec::with_capacity(intervals);
    let mut mean_t = Vec::with_capacity(intervals);
    let mut var_c = Vec::with_capacity(intervals);
    let mut var_t = Vec::with_capacity(intervals);
    for _ in 0..intervals {
        drift = 0.7 * drift + se * z();
        let gap = base_gap * (1.0 + 0.8 * z());
        mean_c.push(level + drift);
        mean_t.push(level + drift + gap);
        var_c.push(var * (0.1 * z()).exp());
        var_t.push(var * (0.1 * z()).exp());
    }
    AsosInstance {
        experiment_id: format!("synthetic-{id}"),
        metric_id: "0".into(),
        mean_c,
        var_c,
        mean_t,
        var_t,
    }
}

/// True per-interval arm means: control, treatment, then synthetic arms at
/// `control + z_k * gap(t)` with one `z_k ~ N(0, 1)` per arm.
pub fn arm_means(source: &AsosInstance, k: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    source.validate()?;
    if k < 2 {
        return Err(Error::param("num_arms", "at least the two source arms"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (2..k).map(|_| StandardNormal.sample(&mut rng)).collect();
    let gaps = source.gaps();
    let means = (0..source.intervals())
        .map(|t| {
            let mut row = vec![source.mean_c[t], source.mean_t[t]];
            row.extend(z.iter().map(|zk| source.mean_c[t] + zk * gaps[t]));
            row
        })
        .collect();
    Ok((means, z))
}

/// Context of interval `t` under the interaction model: `[1; e_t]`.
pub fn interval_contexts(intervals: usize) -> Vec<Vec<f64>> {
    (0..intervals)
        .map(|t| {
            let mut x = vec![0.0; intervals + 1];
            x[0] = 1.0;
            x[t + 1] = 1.0;
            x
        })
        .collect()
}

/// K-arm environment with context = interval index. Epoch `t` sees interval `t`
/// only; the post-experiment population is uniform over intervals.
pub fn gen_asos_like(source: &AsosInstance, k: usize, batch: usize, seed: u64) -> Result<Environment> {
    let (means, _) = arm_means(source, k, seed)?;
    let t = source.intervals();
    let p = t + 1;
    // arm constant = average over intervals, interaction = deviation
    let mut theta = vec![0.0; k * p];
    for a in 0..k {
        let avg = means.iter().map(|r| r[a]).sum::<f64>() / t as f64;
        theta[a * p] = avg;
        for (s, row) in means.iter().enumerate() {
            theta[a * p + 1 + s] = row[a] - avg;
        }
    }
    let noise_var: Vec<Vec<f64>> = (0..t)
        .map(|s| {
            let mut row = vec![source.var_c[s]];
            row.extend(std::iter::repeat_n(source.var_t[s], k - 1));
            row
        })
        .collect();
    let arm_var: Vec<f64> = (0..k).map(|a| noise_var.iter().map(|r| r[a]).sum::<f64>() / t as f64).collect();
    let epoch_weights = (0..t)
        .map(|s| {
            let mut w = vec![0.0; t];
            w[s] = 1.0;
            w
        })
        .collect();
    let ctx = ContextSet::new(interval_contexts(t), epoch_weights, vec![1.0 / t as f64; t])?;
    let env = Environment {
        truth: ModelSpec::new(FeatureMap::Mixed { context_dim: p }, LossFamily::SquaredError, k, arm_var)?,
        theta_star: theta,
        ctx,
        noise: NoiseFamily::Gaussian,
        noise_var,
        horizon: HorizonSpec::constant(t, batch),
    };
    env.validate()?;
    Ok(env)
}

/// Agent model for an interval environment: the interaction model, or one
/// parameter per arm when `contextual` is false.
pub fn agent_model(env: &Environment, contextual: bool) -> Result<ModelSpec<f64>> {
    if contextual {
        Ok(env.truth.clone())
    } else {
        ModelSpec::new(FeatureMap::ArmOnly, LossFamily::SquaredError, env.num_arms(), env.truth.noise_var.clone())
    }
}
