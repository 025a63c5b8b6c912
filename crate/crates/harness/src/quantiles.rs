//! Quantiles of instance-level regret normalized by a baseline policy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bench::{csv_writer, fmt_f64, instance_means, regret_ratio, RunRecord};
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyQuantiles {
    pub policy: String,
    /// Ratio at percentiles 0, 1, ..., 100.
    pub quantiles: Vec<f64>,
    pub fraction_below_one: f64,
}

/// Linear interpolation between order statistics, `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per policy, the 0..100 percentiles of `instance mean simple regret /
/// baseline instance mean simple regret`.
pub fn quantile_report(records: &[RunRecord], baseline: &str) -> Result<Vec<PolicyQuantiles>> {
    let means = instance_means(records);
    let base = means
        .iter()
        .find(|(p, _)| p == baseline)
        .map(|(_, m)| m.clone())
        .ok_or_else(|| HarnessError::MissingBaseline(baseline.to_owned()))?;
    Ok(means
        .into_iter()
        .filter_map(|(p, inst)| {
            let mut ratios: Vec<f64> = inst
                .iter()
                .filter_map(|(i, &v)| base.get(i).map(|&b| regret_ratio(v, b)))
                .collect();
            if ratios.is_empty() {
                return None;
            }
            ratios.sort_by(f64::total_cmp);
            let below = ratios.iter().filter(|&&r| r < 1.0).count() as f64 / ratios.len() as f64;
            Some(PolicyQuantiles {
                policy: p,
                quantiles: (0..=100).map(|k| quantile(&ratios, k as f64 / 100.0)).collect(),
                fraction_below_one: below,
            })
        })
        .collect())
}

pub fn write_quantiles_csv<W: Write>(rows: &[PolicyQuantiles], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["policy", "percentile", "ratio", "fraction_below_one"])?;
    for r in rows {
        for (k, v) in r.quantiles.iter().enumerate() {
            out.write_record([r.policy.clone(), k.to_string(), fmt_f64(*v), fmt_f64(r.fraction_below_one)])?;
        }
    }
    out.flush().map_err(|e| HarnessError::io("quantiles.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(policy: &str, instance: usize, simple: f64) -> RunRecord {
        RunRecord {
            policy: policy.into(),
            instance,
            replication: 0,
            seed: 0,
            simple_regret: simple,
            cumulative_regret: 0.0,
            chosen_arm: 0,
            allocations: vec![],
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn baseline_against_itself_is_all_ones() {
        let rs = vec![rec("u", 0, 1.0), rec("u", 1, 0.0), rec("u", 2, 3.0)];
        let q = quantile_report(&rs, "u").unwrap();
        assert!(q[0].quantiles.iter().all(|&v| v == 1.0));
        assert_eq!(q[0].fraction_below_one, 0.0);
    }

    #[test]
    fn dominated_policy_is_above_one_everywhere() {
        let rs = vec![rec("u", 0, 1.0), rec("u", 1, 2.0), rec("p", 0, 1.5), rec("p", 1, 2.5)];
        let q = quantile_report(&rs, "u").unwrap();
        assert!(q[1].quantiles.iter().all(|&v| v > 1.0));
    }

    #[test]
    fn two_instance_fixture_has_median_one() {
        // hand-computed: ratios {0.5, 1.5}
        let rs = vec![rec("u", 0, 2.0), rec("u", 1, 2.0), rec("p", 0, 1.0), rec("p", 1, 3.0)];
        let q = quantile_report(&rs, "u").unwrap();
        let p = &q[1];
        assert!((p.quantiles[50] - 1.0).abs() < 1e-15);
        assert_eq!(p.quantiles[0], 0.5);
        assert_eq!(p.quantiles[100], 1.5);
        assert_eq!(p.fraction_below_one, 0.5);
    }

    #[test]
    fn missing_baseline_is_reported() {
        let rs = vec![rec("u", 0, 1.0)];
        assert!(matches!(quantile_report(&rs, "v"), Err(HarnessError::MissingBaseline(_))));
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(mut v in proptest::collection::vec(0.0f64..10.0, 1..30)) {
            v.sort_by(f64::total_cmp);
            let qs: Vec<f64> = (0..=20).map(|k| quantile(&v, k as f64 / 20.0)).collect();
            prop_assert!(qs.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(qs[0], v[0]);
            prop_assert_eq!(qs[20], *v.last().unwrap());
        }
    }
}
