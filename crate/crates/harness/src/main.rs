use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bldp_core::simulator::asos::{synthetic_instance, write_csv};
use bldp_core::verify::{
    check_clt, check_dts_limit, check_policy_improvement, check_reparam, CheckReport, CltConfig, DtsLimitConfig,
    ImprovementConfig,
};
use bldp_harness::bench::{read_runs_csv, run_bench, summarize, task_seed, write_outputs};
use bldp_harness::config::BenchConfig;
use bldp_harness::episode::{build_instances, run_episode};
use bldp_harness::pareto::{pareto_sweep, write_frontier_csv};
use bldp_harness::plan::{parse_posterior, run_plan, PlanConfig};
use bldp_harness::quantiles::{quantile_report, write_quantiles_csv};
use bldp_harness::{HarnessError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bldp", version, about = "Batched adaptive experiment planning and benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
    /// Restricts the run to these policy ids.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    /// Replaces every RHO policy with one copy per learning rate.
    #[arg(long, value_delimiter = ',')]
    lr_sweep: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    All,
    Reparam,
    Clt,
    Improvement,
    Dts,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for an allocation plan from a JSON posterior.
    Plan {
        /// Posterior state as JSON (`beta`, `sigma`, `epoch`).
        #[arg(long)]
        posterior: PathBuf,
        /// TOML with `model`, `contexts`, `horizon`, `objective` and `optimizer`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one episode and print its per-epoch trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        instance: usize,
        #[arg(long, default_value_t = 0)]
        replication: usize,
    },
    /// Run every policy on every instance and replication.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep RHO objective weights and the TTTS top-two probability.
    Pareto {
        #[command(flatten)]
        common: Common,
    },
    /// Percentiles of instance regret relative to a baseline policy.
    Quantiles {
        /// A `runs.csv` written by `bench`.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value = "uniform")]
        baseline: String,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic two-arm experiment series as CSV.
    GenAsos {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        intervals: usize,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical verification checks.
    Verify {
        #[arg(long, value_enum, default_value_t = Check::All)]
        check: Check,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn with_path(e: HarnessError, p: &Path) -> HarnessError {
    match e {
        HarnessError::Config {
            path: None,
            line,
            field,
            message,
        } => HarnessError::Config {
            path: Some(p.to_owned()),
            line,
            field,
            message,
        },
        e => e,
    }
}

fn load(common: &Common) -> Result<(BenchConfig, usize)> {
    let mut cfg = BenchConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = d.clone();
    }
    if !common.policy.is_empty() {
        cfg.retain_policies(&common.policy)?;
    }
    if !common.lr_sweep.is_empty() {
        cfg.expand_lr_sweep(&common.lr_sweep);
    }
    cfg.validate().map_err(|e| with_path(e, &common.config))?;
    let threads = common
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok((cfg, threads))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| HarnessError::io(p, e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn verify(check: Check, seed: u64) -> Result<()> {
    let want = |c: Check| check == Check::All || check == c;
    let mut reports: Vec<CheckReport> = Vec::new();
    if want(Check::Reparam) {
        reports.extend(check_reparam(&[1, 2, 4], 100_000, seed)?);
    }
    if want(Check::Clt) {
        let out = check_clt(&CltConfig {
            seed,
            ..CltConfig::default()
        })?;
        reports.push(out.report);
    }
    if want(Check::Improvement) {
        reports.extend(check_policy_improvement(&ImprovementConfig {
            seed,
            ..ImprovementConfig::default()
        })?);
    }
    if want(Check::Dts) {
        reports.extend(check_dts_limit(&DtsLimitConfig {
            seed,
            ..DtsLimitConfig::default()
        })?);
    }
    print_json(&reports)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(HarnessError::ChecksFailed { failed });
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Plan { posterior, config, seed } => {
            let state = parse_posterior(&read(&posterior)?)?;
            let mut cfg = PlanConfig::parse(&read(&config)?).map_err(|e| with_path(e, &config))?;
            if let Some(s) = seed {
                cfg.optimizer.seed = s;
            }
            print_json(&run_plan(&state, &cfg)?)
        }
        Cmd::Simulate {
            common,
            instance,
            replication,
        } => {
            let (cfg, _) = load(&common)?;
            let instances = build_instances(&cfg)?;
            let inst = instances
                .get(instance)
                .ok_or_else(|| HarnessError::config("instance", format!("only {} instances", instances.len())))?;
            let seed = task_seed(cfg.seed, instance, replication);
            for p in &cfg.policies {
                let ep = run_episode(inst, &p.resolve()?, seed)?;
                for t in &ep.epochs {
                    println!(
                        "{} epoch={} reward={:.6} regret={:.6} best={} allocation={:?}",
                        p.id, t.epoch, t.reward, t.regret, t.posterior_best, t.allocation
                    );
                }
                println!(
                    "{} simple_regret={:.6} cumulative_regret={:.6} chosen_arm={}",
                    p.id, ep.simple_regret, ep.cumulative_regret, ep.chosen_arm
                );
            }
            Ok(())
        }
        Cmd::Bench { common } => {
            let (cfg, threads) = load(&common)?;
            let records = run_bench(&cfg, threads)?;
            let summary = summarize(&records, cfg.baseline_id())?;
            write_outputs(&cfg.out_dir, &records, &summary)?;
            print_json(&summary)
        }
        Cmd::Pareto { common } => {
            let (cfg, threads) = load(&common)?;
            let rows = pareto_sweep(&cfg, threads)?;
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::io(&cfg.out_dir, e))?;
            let path = cfg.out_dir.join("frontier.csv");
            write_frontier_csv(&rows, output(Some(&path))?)?;
            write_frontier_csv(&rows, output(None)?)
        }
        Cmd::Quantiles { runs, baseline, out } => {
            let file = std::fs::File::open(&runs).map_err(|e| HarnessError::io(&runs, e))?;
            let records = read_runs_csv(std::io::BufReader::new(file))?;
            let rows = quantile_report(&records, &baseline)?;
            write_quantiles_csv(&rows, output(out.as_deref())?)
        }
        Cmd::GenAsos {
            count,
            intervals,
            batch,
            seed,
            out,
        } => {
            if count == 0 || intervals == 0 || batch == 0 {
                return Err(HarnessError::config("gen-asos", "count, intervals and batch must be positive"));
            }
            let insts: Vec<_> = (0..count).map(|i| synthetic_instance(i, intervals, batch, seed)).collect();
            write_csv(&insts, output(out.as_deref())?)?;
            Ok(())
        }
        Cmd::Verify { check, seed } => verify(check, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
