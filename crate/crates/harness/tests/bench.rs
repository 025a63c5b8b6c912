use std::collections::BTreeMap;

use bldp_harness::bench::{read_runs_csv, run_bench, summarize, write_outputs, BenchSummary};
use bldp_harness::config::BenchConfig;
use bldp_harness::pareto::pareto_sweep;

const TWO_UNIFORM: &str = r#"
seed = 3
replications = 4
[environment]
kind = "asos"
instances = 3
arms = 3
batch = 30
intervals = 3
[[policy]]
id = "uniform"
kind = "uniform"
[[policy]]
id = "uniform2"
kind = "uniform"
[[policy]]
id = "ts"
kind = "ts"
[[policy]]
id = "rho"
kind = "rho"
num_steps = 10
num_scenarios = 32
coverage = 0.05
"#;

#[test]
fn duplicate_uniform_entries_match_exactly() {
    let cfg = BenchConfig::parse(TWO_UNIFORM).unwrap();
    let recs = run_bench(&cfg, 2).unwrap();
    let pick = |id: &str| recs.iter().filter(|r| r.policy == id).map(|r| r.simple_regret.to_bits()).collect::<Vec<_>>();
    assert_eq!(pick("uniform"), pick("uniform2"));
    let s = summarize(&recs, Some("uniform")).unwrap();
    let u2 = s.policies.iter().find(|p| p.policy == "uniform2").unwrap();
    assert_eq!(u2.mean_ratio, Some(1.0));
    assert_eq!(u2.instances_beat, 0);
}

#[test]
fn logged_allocations_respect_coverage() {
    let cfg = BenchConfig::parse(TWO_UNIFORM).unwrap();
    let recs = run_bench(&cfg, 1).unwrap();
    for r in recs.iter().filter(|r| r.policy == "rho") {
        for row in &r.allocations {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.05 - 1e-12), "{row:?}");
        }
    }
}

// Recomputes the summary fractions from runs.csv with a separate aggregation.
#[test]
fn summary_json_agrees_with_runs_csv() {
    let cfg = BenchConfig::parse(TWO_UNIFORM).unwrap();
    let recs = run_bench(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &recs, &summarize(&recs, Some("uniform")).unwrap()).unwrap();
    let back = read_runs_csv(std::fs::File::open(dir.path().join("runs.csv")).unwrap()).unwrap();
    let summary: BenchSummary = serde_json::from_reader(std::fs::File::open(dir.path().join("summary.json")).unwrap()).unwrap();

    let mut sums: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in &back {
        sums.entry((r.policy.clone(), r.instance)).or_default().push(r.simple_regret);
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    for p in &summary.policies {
        let mut beat = 0;
        let mut total = 0;
        for i in 0..3 {
            let pol = mean(&sums[&(p.policy.clone(), i)]);
            let base = mean(&sums[&("uniform".to_string(), i)]);
            total += 1;
            if pol < base {
                beat += 1;
            }
        }
        assert_eq!(p.instances_beat, beat, "{}", p.policy);
        assert_eq!(p.beat_fraction, Some(beat as f64 / total as f64));
        let all: Vec<f64> = back.iter().filter(|r| r.policy == p.policy).map(|r| r.simple_regret).collect();
        assert!((p.mean_simple_regret - mean(&all)).abs() < 1e-12);
    }
}

#[test]
fn cumulative_weight_lowers_cumulative_regret() {
    let cfg = BenchConfig::parse(
        r#"
seed = 8
replications = 40
[environment]
kind = "asos"
instances = 1
arms = 3
batch = 40
intervals = 4
[[policy]]
id = "rho"
kind = "rho"
num_steps = 30
num_scenarios = 64
[pareto]
weights = [[1.0, 0.0], [0.0, 1.0]]
ttts_betas = []
"#,
    )
    .unwrap();
    let rows = pareto_sweep(&cfg, 2).unwrap();
    let cum_only = rows.iter().find(|r| r.w_terminal == Some(0.0)).unwrap();
    let simple_only = rows.iter().find(|r| r.w_cum == Some(0.0)).unwrap();
    assert!(
        cum_only.mean_cumulative <= simple_only.mean_cumulative,
        "{} > {}",
        cum_only.mean_cumulative,
        simple_only.mean_cumulative
    );
}
