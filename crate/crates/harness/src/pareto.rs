//! Simple-versus-cumulative regret frontiers: RHO over objective weights and
//! TTTS over its top-two probability.

use std::io::Write;

use bldp_core::baselines::{BaselineKind, BaselineSpec};
use bldp_core::objectives::ObjectiveSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{csv_writer, fmt_f64, task_seed};
use crate::config::{BenchConfig, ParetoConfig, Policy, PolicyKind};
use crate::episode::{build_instances, run_episode};
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub policy: String,
    pub w_cum: Option<f64>,
    pub w_terminal: Option<f64>,
    pub beta: Option<f64>,
    pub mean_simple: f64,
    pub se_simple: f64,
    pub mean_cumulative: f64,
    pub se_cumulative: f64,
    pub runs: usize,
    /// Per-run simple regrets in (instance, replication) order.
    #[serde(skip)]
    pub simple: Vec<f64>,
}

/// Share of the objective on the post-experiment term.
pub fn simple_weight(w: [f64; 2]) -> f64 {
    w[1] / (w[0] + w[1])
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

struct Point {
    policy: String,
    w: Option<[f64; 2]>,
    beta: Option<f64>,
    run: Policy,
}

fn sweep_points(cfg: &BenchConfig, pc: &ParetoConfig) -> Result<Vec<Point>> {
    let template = match &pc.rho_policy {
        Some(id) => cfg.policies.iter().find(|p| &p.id == id && p.kind == PolicyKind::Rho),
        None => cfg.policies.iter().find(|p| p.kind == PolicyKind::Rho),
    };
    let mut points = Vec::new();
    if let Some(t) = template {
        let mut weights = pc.weights.clone();
        weights.sort_by(|a, b| simple_weight(*a).total_cmp(&simple_weight(*b)));
        for w in weights {
            let mut run = t.resolve()?;
            if let Policy::Rho { spec, .. } = &mut run {
                let constraints = std::mem::take(&mut spec.constraints);
                *spec = ObjectiveSpec::weighted(w[0], w[1]);
                spec.constraints = constraints;
            }
            points.push(Point {
                policy: t.id.clone(),
                w: Some(w),
                beta: None,
                run,
            });
        }
    } else if pc.rho_policy.is_some() {
        return Err(HarnessError::config("pareto.rho_policy", "no rho policy with that id"));
    }
    let mut betas = pc.ttts_betas.clone();
    betas.sort_by(f64::total_cmp);
    let contextual = !matches!(cfg.environment, crate::config::EnvConfig::Asos { .. });
    for b in betas {
        points.push(Point {
            policy: "ttts".into(),
            w: None,
            beta: Some(b),
            run: Policy::Baseline {
                contextual,
                spec: BaselineSpec::new(BaselineKind::Ttts { beta: b }),
            },
        });
    }
    Ok(points)
}

/// Mean regrets per sweep point over every instance and replication, with
/// seeds paired across points. RHO rows come first, sorted by simple-regret
/// weight, then TTTS rows sorted by `beta`.
pub fn pareto_sweep(cfg: &BenchConfig, threads: usize) -> Result<Vec<FrontierRow>> {
    cfg.validate()?;
    let pc = cfg.pareto.clone().unwrap_or_default();
    if pc.weights.is_empty() {
        return Err(HarnessError::config("pareto.weights", "weight grid must be non-empty"));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    pool.install(|| {
        let instances = build_instances(cfg)?;
        let points = sweep_points(cfg, &pc)?;
        let tasks: Vec<(usize, usize, usize)> = (0..points.len())
            .flat_map(|p| (0..instances.len()).flat_map(move |i| (0..cfg.replications).map(move |r| (p, i, r))))
            .collect();
        let eps = tasks
            .par_iter()
            .map(|&(p, i, r)| run_episode(&instances[i], &points[p].run, task_seed(cfg.seed, i, r)))
            .collect::<Result<Vec<_>>>()?;
        let per = instances.len() * cfg.replications;
        Ok(points
            .iter()
            .zip(eps.chunks(per))
            .map(|(pt, runs)| {
                let simple: Vec<f64> = runs.iter().map(|e| e.simple_regret).collect();
                let cum: Vec<f64> = runs.iter().map(|e| e.cumulative_regret).collect();
                let (ms, ss) = mean_se(&simple);
                let (mc, sc) = mean_se(&cum);
                FrontierRow {
                    policy: pt.policy.clone(),
                    w_cum: pt.w.map(|w| w[0]),
                    w_terminal: pt.w.map(|w| w[1]),
                    beta: pt.beta,
                    mean_simple: ms,
                    se_simple: ss,
                    mean_cumulative: mc,
                    se_cumulative: sc,
                    runs: runs.len(),
                    simple,
                }
            })
            .collect())
    })
}

pub fn write_frontier_csv<W: Write>(rows: &[FrontierRow], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "policy",
        "w_cum",
        "w_terminal",
        "beta",
        "mean_simple_regret",
        "se_simple_regret",
        "mean_cumulative_regret",
        "se_cumulative_regret",
        "runs",
    ])?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.policy.clone(),
            opt(r.w_cum),
            opt(r.w_terminal),
            opt(r.beta),
            fmt_f64(r.mean_simple),
            fmt_f64(r.se_simple),
            fmt_f64(r.mean_cumulative),
            fmt_f64(r.se_cumulative),
            r.runs.to_string(),
        ])?;
    }
    out.flush().map_err(|e| HarnessError::io("frontier.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> BenchConfig {
        BenchConfig::parse(&format!(
            r#"
seed = 1
replications = 2
[environment]
kind = "ranking"
instances = 1
users = 4
epochs = 2
batch = 20
[[policy]]
id = "rho"
kind = "rho"
num_steps = 4
num_scenarios = 8
{extra}
"#
        ))
        .unwrap()
    }

    #[test]
    fn single_point_gives_one_row() {
        let c = cfg("[pareto]\nweights = [[1.0, 10.0]]\nttts_betas = []");
        let rows = pareto_sweep(&c, 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].runs, 2);
    }

    #[test]
    fn default_ttts_sweep_has_ten_points() {
        let c = cfg("[pareto]\nweights = [[0.0, 1.0]]");
        let rows = pareto_sweep(&c, 1).unwrap();
        let betas: Vec<f64> = rows.iter().filter_map(|r| r.beta).collect();
        assert_eq!(betas.len(), 10);
        assert!((betas[0] - 0.1).abs() < 1e-12 && (betas[9] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rho_rows_sorted_by_simple_weight() {
        let c = cfg("[pareto]\nweights = [[0.0, 1.0], [1.0, 0.0], [1.0, 5.0]]\nttts_betas = []");
        let rows = pareto_sweep(&c, 1).unwrap();
        let w: Vec<f64> = rows.iter().map(|r| simple_weight([r.w_cum.unwrap(), r.w_terminal.unwrap()])).collect();
        assert!(w.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn empty_weight_grid_is_a_config_error() {
        let text = "seed = 1\n[environment]\nkind = \"ranking\"\ninstances = 1\n[[policy]]\nid = \"r\"\nkind = \"rho\"\n[pareto]\nweights = []\n";
        assert_eq!(BenchConfig::parse(text).unwrap_err().exit_code(), 2);
    }
}
