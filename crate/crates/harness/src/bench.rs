//! Replicated benchmark runs, `runs.csv` and `summary.json`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, Policy};
use crate::episode::{build_instances, mix_seed, run_episode};
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub policy: String,
    pub instance: usize,
    pub replication: usize,
    pub seed: u64,
    pub simple_regret: f64,
    pub cumulative_regret: f64,
    pub chosen_arm: usize,
    /// Arm marginal per epoch.
    pub allocations: Vec<Vec<f64>>,
    pub wall_time_s: f64,
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn fmt_allocations(a: &[Vec<f64>]) -> String {
    a.iter()
        .map(|row| row.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(";"))
        .collect::<Vec<_>>()
        .join("|")
}

pub fn parse_allocations(s: &str) -> Option<Vec<Vec<f64>>> {
    if s.is_empty() {
        return Some(vec![]);
    }
    s.split('|')
        .map(|row| row.split(';').map(|v| v.parse().ok()).collect())
        .collect()
}

pub const RUNS_HEADER: [&str; 8] = [
    "policy",
    "instance",
    "replication",
    "seed",
    "simple_regret",
    "cumulative_regret",
    "chosen_arm",
    "allocations",
];

/// One row per run in key order. Wall times go to a separate file so the
/// runs table is reproducible byte for byte.
pub fn write_runs_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(RUNS_HEADER)?;
    for r in records {
        out.write_record([
            r.policy.clone(),
            r.instance.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            fmt_f64(r.simple_regret),
            fmt_f64(r.cumulative_regret),
            r.chosen_arm.to_string(),
            fmt_allocations(&r.allocations),
        ])?;
    }
    out.flush().map_err(|e| HarnessError::io("runs.csv", e))?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["policy", "instance", "replication", "wall_time_s"])?;
    for r in records {
        out.write_record([r.policy.clone(), r.instance.to_string(), r.replication.to_string(), fmt_f64(r.wall_time_s)])?;
    }
    out.flush().map_err(|e| HarnessError::io("timings.csv", e))?;
    Ok(())
}

/// Runs parsed back from `runs.csv`.
pub fn read_runs_csv<R: std::io::Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(r);
    let bad = |row: usize, what: &str| HarnessError::config(what.to_owned(), format!("runs row {row}: cannot parse `{what}`"));
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::config(name.to_owned(), "missing column in runs file"))
    };
    let idx: Vec<usize> = RUNS_HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |j: usize| rec.get(idx[j]).unwrap_or_default();
        out.push(RunRecord {
            policy: get(0).to_owned(),
            instance: get(1).parse().map_err(|_| bad(i + 1, "instance"))?,
            replication: get(2).parse().map_err(|_| bad(i + 1, "replication"))?,
            seed: get(3).parse().map_err(|_| bad(i + 1, "seed"))?,
            simple_regret: get(4).parse().map_err(|_| bad(i + 1, "simple_regret"))?,
            cumulative_regret: get(5).parse().map_err(|_| bad(i + 1, "cumulative_regret"))?,
            chosen_arm: get(6).parse().map_err(|_| bad(i + 1, "chosen_arm"))?,
            allocations: parse_allocations(get(7)).ok_or_else(|| bad(i + 1, "allocations"))?,
            wall_time_s: 0.0,
        });
    }
    Ok(out)
}

/// Seed shared by every policy for one (instance, replication).
pub fn task_seed(master: u64, instance: usize, replication: usize) -> u64 {
    mix_seed(&[master, instance as u64, replication as u64])
}

/// Runs every (instance, policy, replication) on a pool of `threads` workers.
/// Records come back in key order whatever the schedule.
pub fn run_bench(cfg: &BenchConfig, threads: usize) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    pool.install(|| {
        let instances = build_instances(cfg)?;
        let policies: Vec<(String, Policy)> = cfg
            .policies
            .iter()
            .map(|p| Ok((p.id.clone(), p.resolve()?)))
            .collect::<Result<_>>()?;
        let tasks: Vec<(usize, usize, usize)> = (0..instances.len())
            .flat_map(|i| (0..policies.len()).flat_map(move |p| (0..cfg.replications).map(move |r| (i, p, r))))
            .collect();
        tasks
            .par_iter()
            .map(|&(i, p, r)| {
                let seed = task_seed(cfg.seed, i, r);
                let start = Instant::now();
                let ep = run_episode(&instances[i], &policies[p].1, seed)?;
                Ok(RunRecord {
                    policy: policies[p].0.clone(),
                    instance: i,
                    replication: r,
                    seed,
                    simple_regret: ep.simple_regret,
                    cumulative_regret: ep.cumulative_regret,
                    chosen_arm: ep.chosen_arm,
                    allocations: ep.epochs.into_iter().map(|t| t.allocation).collect(),
                    wall_time_s: start.elapsed().as_secs_f64(),
                })
            })
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub runs: usize,
    pub mean_simple_regret: f64,
    pub mean_cumulative_regret: f64,
    /// Fraction of instances whose mean simple regret is below the baseline's.
    pub beat_fraction: Option<f64>,
    /// Mean of instance regret over baseline regret where the policy wins.
    pub mean_ratio_beat: Option<f64>,
    /// Same where it does not.
    pub mean_ratio_lost: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub instances_beat: usize,
    pub instances_lost: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub baseline: Option<String>,
    pub policies: Vec<PolicySummary>,
}

/// Mean simple regret per (policy, instance), policies in first-seen order.
pub fn instance_means(records: &[RunRecord]) -> Vec<(String, BTreeMap<usize, f64>)> {
    let mut order: Vec<String> = Vec::new();
    let mut acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        if !order.contains(&r.policy) {
            order.push(r.policy.clone());
        }
        let e = acc.entry((r.policy.clone(), r.instance)).or_default();
        e.0 += r.simple_regret;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|p| {
            let m = acc
                .iter()
                .filter(|((q, _), _)| *q == p)
                .map(|((_, i), (s, n))| (*i, s / *n as f64))
                .collect();
            (p, m)
        })
        .collect()
}

/// `policy / baseline`, with `0 / 0 = 1`.
pub fn regret_ratio(policy: f64, baseline: f64) -> f64 {
    if policy == baseline {
        1.0
    } else {
        policy / baseline
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(records: &[RunRecord], baseline: Option<&str>) -> Result<BenchSummary> {
    let means = instance_means(records);
    let base = match baseline {
        Some(b) => Some(
            means
                .iter()
                .find(|(p, _)| p == b)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| HarnessError::MissingBaseline(b.to_owned()))?,
        ),
        None => None,
    };
    let policies = means
        .iter()
        .map(|(p, inst)| {
            let rows: Vec<&RunRecord> = records.iter().filter(|r| &r.policy == p).collect();
            let n = rows.len();
            let mut s = PolicySummary {
                policy: p.clone(),
                runs: n,
                mean_simple_regret: rows.iter().map(|r| r.simple_regret).sum::<f64>() / n as f64,
                mean_cumulative_regret: rows.iter().map(|r| r.cumulative_regret).sum::<f64>() / n as f64,
                beat_fraction: None,
                mean_ratio_beat: None,
                mean_ratio_lost: None,
                mean_ratio: None,
                instances_beat: 0,
                instances_lost: 0,
            };
            if let Some(base) = &base {
                let ratios: Vec<f64> = inst
                    .iter()
                    .filter_map(|(i, &v)| base.get(i).map(|&b| regret_ratio(v, b)))
                    .collect();
                let (beat, lost): (Vec<f64>, Vec<f64>) = ratios.iter().partition(|&&r| r < 1.0);
                s.instances_beat = beat.len();
                s.instances_lost = lost.len();
                s.beat_fraction = (!ratios.is_empty()).then(|| beat.len() as f64 / ratios.len() as f64);
                s.mean_ratio_beat = mean(&beat);
                s.mean_ratio_lost = mean(&lost);
                s.mean_ratio = mean(&ratios);
            }
            s
        })
        .collect();
    Ok(BenchSummary {
        baseline: baseline.map(str::to_owned),
        policies,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

/// Writes `runs.csv`, `timings.csv` and `summary.json` under `dir`.
pub fn write_outputs(dir: &Path, records: &[RunRecord], summary: &BenchSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_runs_csv(records, create(&dir.join("runs.csv"))?)?;
    write_timings_csv(records, create(&dir.join("timings.csv"))?)?;
    let mut f = create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    f.write_all(b"\n").map_err(|e| HarnessError::io(dir.join("summary.json"), e))?;
    Ok(())
}
