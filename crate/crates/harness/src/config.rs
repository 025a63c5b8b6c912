//! TOML configuration for benchmarks and sweeps.

use std::path::{Path, PathBuf};

use bldp_core::baselines::{BaselineKind, BaselineSpec, DEFAULT_DTS_DRAWS};
use bldp_core::objectives::{Constraint, ObjectiveSpec};
use bldp_core::planner::OptimizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Policy id used as the normalizer in summaries; defaults to the first
    /// uniform policy.
    #[serde(default)]
    pub baseline: Option<String>,
    pub environment: EnvConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(rename = "policy")]
    pub policies: Vec<PolicyConfig>,
    #[serde(default)]
    pub pareto: Option<ParetoConfig>,
}

fn one() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    /// Interval environments built from ASOS-style instances, read from
    /// `source` or generated.
    Asos {
        instances: usize,
        arms: usize,
        batch: usize,
        #[serde(default = "default_intervals")]
        intervals: usize,
        #[serde(default)]
        source: Option<PathBuf>,
    },
    /// Ranker selection over a finite user pool.
    Ranking {
        instances: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_contents")]
        contents: usize,
        #[serde(default = "default_rankers")]
        rankers: usize,
        #[serde(default = "default_items")]
        items_per_user: usize,
        #[serde(default = "default_users")]
        users: usize,
        #[serde(default = "default_waves")]
        epochs: usize,
        #[serde(default = "default_wave_size")]
        batch: usize,
        #[serde(default = "default_noise")]
        noise_var: f64,
    },
}

fn default_intervals() -> usize {
    10
}
fn default_dim() -> usize {
    5
}
fn default_contents() -> usize {
    10
}
fn default_rankers() -> usize {
    10
}
fn default_items() -> usize {
    4
}
fn default_users() -> usize {
    20
}
fn default_waves() -> usize {
    5
}
fn default_wave_size() -> usize {
    100
}
fn default_noise() -> f64 {
    1.0
}

impl EnvConfig {
    pub fn instances(&self) -> usize {
        match self {
            EnvConfig::Asos { instances, .. } | EnvConfig::Ranking { instances, .. } => *instances,
        }
    }
}

/// Prior `N(0, lambda I)` with `lambda = c_prior / mean batch`; `c_prior`
/// defaults to 100 times the mean noise variance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub c_prior: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Rho,
    Uniform,
    Ts,
    Ttts,
    Dts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub id: String,
    pub kind: PolicyKind,
    /// Use the environment's contextual model (default: true for RHO, false otherwise).
    #[serde(default)]
    pub contextual: Option<bool>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub resample_cap: Option<usize>,
    #[serde(default)]
    pub mc_draws: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub num_steps: Option<usize>,
    #[serde(default)]
    pub num_scenarios: Option<usize>,
    #[serde(default)]
    pub qmc: Option<bool>,
    #[serde(default)]
    pub coverage: Option<f64>,
    /// Objective weights `w_cum * cumulative + w_terminal * simple`; simple regret alone by default.
    #[serde(default)]
    pub w_cum: Option<f64>,
    #[serde(default)]
    pub w_terminal: Option<f64>,
}

impl PolicyConfig {
    pub fn new(id: impl Into<String>, kind: PolicyKind) -> Self {
        PolicyConfig {
            id: id.into(),
            kind,
            contextual: None,
            beta: None,
            resample_cap: None,
            mc_draws: None,
            learning_rate: None,
            num_steps: None,
            num_scenarios: None,
            qmc: None,
            coverage: None,
            w_cum: None,
            w_terminal: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoConfig {
    /// `[w_cum, w_terminal]` pairs for the RHO sweep.
    #[serde(default = "default_weights")]
    pub weights: Vec<[f64; 2]>,
    #[serde(default = "default_betas")]
    pub ttts_betas: Vec<f64>,
    /// RHO policy used as the template; defaults to the first RHO entry.
    #[serde(default)]
    pub rho_policy: Option<String>,
}

fn default_weights() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0], [1.0, 100.0], [1.0, 500.0], [1.0, 2500.0], [0.0, 1.0]]
}

fn default_betas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

impl Default for ParetoConfig {
    fn default() -> Self {
        ParetoConfig {
            weights: default_weights(),
            ttts_betas: default_betas(),
            rho_policy: None,
        }
    }
}

/// A policy ready to run.
#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Rho {
        contextual: bool,
        opt: OptimizerConfig<f64>,
        spec: ObjectiveSpec<f64>,
    },
    Baseline {
        contextual: bool,
        spec: BaselineSpec,
    },
}

impl Policy {
    pub fn contextual(&self) -> bool {
        match self {
            Policy::Rho { contextual, .. } | Policy::Baseline { contextual, .. } => *contextual,
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(
            self,
            Policy::Baseline {
                spec: BaselineSpec {
                    kind: BaselineKind::Uniform,
                    ..
                },
                ..
            }
        )
    }
}

fn field_err(id: &str, field: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::config(format!("policy.{field}"), format!("policy `{id}`: {}", msg.into()))
}

impl PolicyConfig {
    pub fn resolve(&self) -> Result<Policy> {
        let id = &self.id;
        let only_rho = [
            ("learning_rate", self.learning_rate.is_some()),
            ("num_steps", self.num_steps.is_some()),
            ("num_scenarios", self.num_scenarios.is_some()),
            ("qmc", self.qmc.is_some()),
            ("coverage", self.coverage.is_some()),
            ("w_cum", self.w_cum.is_some()),
            ("w_terminal", self.w_terminal.is_some()),
        ];
        if self.kind != PolicyKind::Rho {
            if let Some((f, _)) = only_rho.iter().find(|(_, set)| *set) {
                return Err(field_err(id, f, "only applies to rho policies"));
            }
        }
        if self.kind != PolicyKind::Ttts && (self.beta.is_some() || self.resample_cap.is_some()) {
            return Err(field_err(id, "beta", "only applies to ttts policies"));
        }
        if self.kind != PolicyKind::Dts && self.mc_draws.is_some() {
            return Err(field_err(id, "mc_draws", "only applies to dts policies"));
        }
        let policy = match self.kind {
            PolicyKind::Rho => {
                let defaults = OptimizerConfig::<f64>::default();
                let opt = OptimizerConfig {
                    learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
                    num_steps: self.num_steps.unwrap_or(defaults.num_steps),
                    num_scenarios: self.num_scenarios.unwrap_or(defaults.num_scenarios),
                    qmc: self.qmc.unwrap_or(defaults.qmc),
                    ..defaults
                };
                opt.validate().map_err(|e| field_err(id, "learning_rate", e.to_string()))?;
                let mut spec = match (self.w_cum, self.w_terminal) {
                    (None, None) => ObjectiveSpec::simple_regret(),
                    (c, t) => ObjectiveSpec::weighted(c.unwrap_or(0.0), t.unwrap_or(0.0)),
                };
                if let Some(eps) = self.coverage {
                    spec = spec.with_constraint(Constraint::Coverage { epsilon: eps });
                }
                if spec.terms.iter().all(|t| t.weight == 0.0) {
                    return Err(field_err(id, "w_terminal", "all objective weights are zero"));
                }
                Policy::Rho {
                    contextual: self.contextual.unwrap_or(true),
                    opt,
                    spec,
                }
            }
            kind => {
                let bk = match kind {
                    PolicyKind::Uniform => BaselineKind::Uniform,
                    PolicyKind::Ts => BaselineKind::Ts,
                    PolicyKind::Ttts => BaselineKind::Ttts {
                        beta: self.beta.unwrap_or(0.5),
                    },
                    PolicyKind::Dts => BaselineKind::Dts {
                        mc_draws: self.mc_draws.unwrap_or(DEFAULT_DTS_DRAWS),
                    },
                    PolicyKind::Rho => unreachable!(),
                };
                let mut spec = BaselineSpec::new(bk);
                if let Some(cap) = self.resample_cap {
                    spec.resample_cap = cap;
                }
                spec.validate().map_err(|e| field_err(id, "beta", e.to_string()))?;
                let contextual = self.contextual.unwrap_or(false);
                if kind == PolicyKind::Dts && contextual {
                    return Err(field_err(id, "contextual", "dts needs the non-contextual model"));
                }
                Policy::Baseline { contextual, spec }
            }
        };
        Ok(policy)
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(HarnessError::config("replications", "must be at least 1"));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::config("policy", "at least one [[policy]] entry is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if p.id.is_empty() || p.id.contains([',', '\n', '"']) {
                return Err(HarnessError::config("policy.id", format!("policy #{i} has an empty id or one with commas, quotes or newlines")));
            }
            if self.policies[..i].iter().any(|q| q.id == p.id) {
                return Err(HarnessError::config("policy.id", format!("duplicate policy id `{}`", p.id)));
            }
            p.resolve()?;
        }
        if self.environment.instances() == 0 {
            return Err(HarnessError::config("environment.instances", "must be at least 1"));
        }
        match &self.environment {
            EnvConfig::Asos { arms, batch, intervals, .. } => {
                if *arms < 2 {
                    return Err(HarnessError::config("environment.arms", "at least 2"));
                }
                if *batch == 0 || *intervals == 0 {
                    return Err(HarnessError::config("environment.batch", "batch and intervals must be positive"));
                }
            }
            EnvConfig::Ranking {
                contents,
                rankers,
                items_per_user,
                users,
                epochs,
                batch,
                noise_var,
                ..
            } => {
                if *rankers < 2 || *users == 0 || *epochs == 0 || *batch == 0 {
                    return Err(HarnessError::config("environment.rankers", "rankers >= 2 and positive users, epochs and batch"));
                }
                if *items_per_user == 0 || items_per_user > contents {
                    return Err(HarnessError::config("environment.items_per_user", "between 1 and the number of contents"));
                }
                if !(*noise_var >= 0.0 && noise_var.is_finite()) {
                    return Err(HarnessError::config("environment.noise_var", "finite and non-negative"));
                }
                if let Some(p) = self.policies.iter().find(|p| p.contextual == Some(false)) {
                    return Err(field_err(&p.id, "contextual", "ranking environments only support the ranking model"));
                }
            }
        }
        if let Some(c) = self.prior.c_prior {
            if !(c > 0.0 && c.is_finite()) {
                return Err(HarnessError::config("prior.c_prior", "positive and finite"));
            }
        }
        if let Some(b) = &self.baseline {
            if !self.policies.iter().any(|p| &p.id == b) {
                return Err(HarnessError::config("baseline", format!("no policy with id `{b}`")));
            }
        }
        if let Some(p) = &self.pareto {
            if p.weights.is_empty() {
                return Err(HarnessError::config("pareto.weights", "weight grid must be non-empty"));
            }
            if p.weights.iter().flatten().any(|w| !(*w >= 0.0 && w.is_finite())) || p.weights.iter().any(|w| w[0] + w[1] == 0.0) {
                return Err(HarnessError::config("pareto.weights", "weights must be non-negative and not both zero"));
            }
            if p.ttts_betas.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
                return Err(HarnessError::config("pareto.ttts_betas", "each beta in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Id of the normalizing policy, if any.
    pub fn baseline_id(&self) -> Option<&str> {
        self.baseline
            .as_deref()
            .or_else(|| self.policies.iter().find(|p| p.kind == PolicyKind::Uniform).map(|p| p.id.as_str()))
    }

    /// Replaces every RHO entry by one copy per learning rate, with ids `<id>@<lr>`.
    pub fn expand_lr_sweep(&mut self, rates: &[f64]) {
        if rates.is_empty() {
            return;
        }
        let mut out = Vec::new();
        for p in self.policies.drain(..) {
            if p.kind == PolicyKind::Rho {
                for &lr in rates {
                    let mut q = p.clone();
                    q.id = format!("{}@{lr}", p.id);
                    q.learning_rate = Some(lr);
                    out.push(q);
                }
            } else {
                out.push(p);
            }
        }
        self.policies = out;
    }

    /// Keeps only the listed policy ids (plus the baseline).
    pub fn retain_policies(&mut self, ids: &[String]) -> Result<()> {
        if ids.is_empty() {
            return Ok(());
        }
        if let Some(missing) = ids.iter().find(|id| !self.policies.iter().any(|p| &p.id == *id)) {
            return Err(HarnessError::config("policy", format!("no policy with id `{missing}`")));
        }
        let base = self.baseline_id().map(str::to_owned);
        self.policies.retain(|p| ids.contains(&p.id) || Some(&p.id) == base.as_ref());
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        cfg.validate().map_err(|e| locate(text, e))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Config { line, field, message, .. } => HarnessError::Config {
                path: Some(path.to_owned()),
                line,
                field,
                message,
            },
            other => other,
        })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Config error for a TOML parse or type failure, with the line of the offending span.
pub fn toml_error(text: &str, e: &toml::de::Error) -> HarnessError {
    let message = e.message().to_owned();
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.contains("field"))
        .unwrap_or_default()
        .to_owned();
    HarnessError::Config {
        path: None,
        line: e.span().map(|s| line_of(text, s.start)),
        field,
        message,
    }
}

/// Attaches the line of the first assignment to the error's field.
fn locate(text: &str, e: HarnessError) -> HarnessError {
    match e {
        HarnessError::Config {
            path,
            line: None,
            field,
            message,
        } => {
            let key = field.rsplit('.').next().unwrap_or_default();
            let line = text.lines().position(|l| {
                let l = l.trim_start();
                !key.is_empty() && l.starts_with(key) && l[key.len()..].trim_start().starts_with('=')
            });
            HarnessError::Config {
                path,
                line: line.map(|l| l + 1),
                field,
                message,
            }
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 7
replications = 3

[environment]
kind = "asos"
instances = 2
arms = 4
batch = 50

[[policy]]
id = "rho"
kind = "rho"
num_steps = 10

[[policy]]
id = "uniform"
kind = "uniform"

[[policy]]
id = "ttts"
kind = "ttts"
beta = 0.5
"#;

    #[test]
    fn parses_a_basic_config() {
        let cfg = BenchConfig::parse(BASIC).unwrap();
        assert_eq!(cfg.policies.len(), 3);
        assert_eq!(cfg.baseline_id(), Some("uniform"));
        match cfg.policies[0].resolve().unwrap() {
            Policy::Rho { contextual, opt, .. } => {
                assert!(contextual);
                assert_eq!(opt.num_steps, 10);
                assert_eq!(opt.num_scenarios, 512);
            }
            p => panic!("{p:?}"),
        }
    }

    #[test]
    fn unknown_field_reports_its_line() {
        let text = BASIC.replace("beta = 0.5", "beta = 0.5\nbogus = 1");
        match BenchConfig::parse(&text).unwrap_err() {
            HarnessError::Config { line, field, .. } => {
                assert_eq!(field, "bogus");
                let expected = text.lines().position(|l| l.starts_with("bogus")).unwrap() + 1;
                assert_eq!(line, Some(expected));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn semantic_error_points_at_the_field() {
        let text = BASIC.replace("beta = 0.5", "beta = 1.5");
        let e = BenchConfig::parse(&text).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("policy.beta"), "{msg}");
        let line = text.lines().position(|l| l.starts_with("beta")).unwrap() + 1;
        assert!(msg.contains(&format!("line {line}")), "{msg}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn rejects_empty_policy_list_and_zero_replications() {
        let none = "[environment]\nkind = \"asos\"\ninstances = 1\narms = 2\nbatch = 10\npolicy = []\n";
        assert!(BenchConfig::parse(none).is_err());
        let zero = BASIC.replace("replications = 3", "replications = 0");
        assert!(BenchConfig::parse(&zero).unwrap_err().to_string().contains("replications"));
    }

    #[test]
    fn rho_only_fields_are_rejected_on_baselines() {
        let text = BASIC.replace("kind = \"uniform\"", "kind = \"uniform\"\nnum_steps = 3");
        assert!(BenchConfig::parse(&text).unwrap_err().to_string().contains("num_steps"));
    }

    #[test]
    fn lr_sweep_expands_rho_entries() {
        let mut cfg = BenchConfig::parse(BASIC).unwrap();
        cfg.expand_lr_sweep(&[0.01, 0.1]);
        let ids: Vec<_> = cfg.policies.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["rho@0.01", "rho@0.1", "uniform", "ttts"]);
    }

    #[test]
    fn retain_keeps_the_baseline() {
        let mut cfg = BenchConfig::parse(BASIC).unwrap();
        cfg.retain_policies(&["ttts".into()]).unwrap();
        let ids: Vec<_> = cfg.policies.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["uniform", "ttts"]);
        assert!(cfg.retain_policies(&["nope".into()]).is_err());
    }
}
