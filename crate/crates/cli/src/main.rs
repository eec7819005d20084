//! `lifereward`: meta-train intrinsic rewards, evaluate them on fresh agents,
//! run reference baselines and the gradient-check suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lifereward_core::env::ActionMode;
use lifereward_core::eval::{AgentAlgo, EvalSummary};
use lifereward_core::harness::checks::{run_suite, SuiteOptions};
use lifereward_core::harness::run::{self, BaselineMethod};
use lifereward_core::harness::{Checkpoint, ExperimentConfig};
use lifereward_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lifereward", version, about = "Learned intrinsic rewards across agent lifetimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Domain preset (empty_rooms, fixed_abc, random_abc, nonstationary_abc,
    /// key_box, key_box_long, tiny_abc).
    #[arg(long)]
    domain: String,
    /// Config file whose settings override the domain defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "LIFEREWARD_OUT", default_value = "runs")]
    out: PathBuf,
    /// Seed; overrides the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Meta-train the intrinsic reward.
    Train {
        #[command(flatten)]
        common: Common,
        /// Number of meta-updates; overrides the config.
        #[arg(long)]
        updates: Option<usize>,
    },
    /// Train fresh agents on a checkpoint's frozen reward.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lifetimes: Option<usize>,
        /// pg or q.
        #[arg(long)]
        agent: Option<AgentAlgo>,
        /// standard, permuted or extended.
        #[arg(long)]
        actions: Option<ActionMode>,
    },
    /// Run a reference method.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// extrinsic_ep, extrinsic_life, count or heuristic.
        #[arg(long)]
        method: BaselineMethod,
        #[arg(long)]
        lifetimes: Option<usize>,
        /// Episodes per lifetime; overrides the domain default.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Finite-difference checks of every gradient path.
    Gradcheck {
        /// Only `tiny` is available.
        #[arg(long, default_value = "tiny")]
        scale: String,
        /// Perturb analytic gradients (the suite must then fail).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ExperimentConfig::parse_for_domain(&text, &common.domain)?
        }
        None => ExperimentConfig::for_domain(&common.domain)?,
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    cfg.output_dir = common.out.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn print_curve(summary: &EvalSummary) {
    let curve = summary.curve();
    println!("episode,mean_return");
    for (e, r) in curve.iter().enumerate() {
        println!("{e},{r:.4}");
    }
    println!("mean lifetime return: {:.4}", summary.mean_lifetime_return());
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { common, updates } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = updates {
                cfg.meta.meta_updates = n;
            }
            for &seed in &cfg.seeds {
                let dir = seed_dir(&cfg.output_dir, seed);
                let out = run::train(&cfg, seed, &dir, |row| {
                    eprintln!(
                        "update {:>7}  episode return {}  entropy {:.3}",
                        row.index,
                        row.episode_return.map_or("-".into(), |r| format!("{r:.3}")),
                        row.entropy.unwrap_or(0.0)
                    );
                })?;
                println!("{}", out.checkpoint.display());
            }
            Ok(true)
        }
        Command::Eval {
            common,
            checkpoint,
            lifetimes,
            agent,
            actions,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = lifetimes {
                cfg.eval_lifetimes = k;
            }
            if let Some(a) = agent {
                cfg.agent_algo = a;
            }
            if let Some(m) = actions {
                cfg.action_mode = m;
            }
            let ck = Checkpoint::load(&checkpoint)?;
            for &seed in &cfg.seeds {
                let summary = run::evaluate_checkpoint(&ck, &cfg, seed, Some(&seed_dir(&cfg.output_dir, seed)))?;
                print_curve(&summary);
            }
            Ok(true)
        }
        Command::Baseline {
            common,
            method,
            lifetimes,
            episodes,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = lifetimes {
                cfg.eval_lifetimes = k;
            }
            if let Some(e) = episodes {
                cfg.preset.episodes = e;
            }
            for &seed in &cfg.seeds {
                let dir = seed_dir(&cfg.output_dir, seed).join(method.to_string());
                let summary = run::run_baseline(method, &cfg, seed, Some(&dir))?;
                print_curve(&summary);
            }
            Ok(true)
        }
        Command::Gradcheck { scale, corrupt } => {
            if scale != "tiny" {
                return Err(Error::Config(format!("unknown scale `{scale}`")));
            }
            let results = run_suite(SuiteOptions { corrupt })?;
            let mut ok = true;
            for r in &results {
                let status = if r.passed() { "ok  " } else { "FAIL" };
                ok &= r.passed();
                println!("{status} {:<36} max rel error {:.3e} (< {:.0e})", r.name, r.report.max_rel_error, r.tolerance);
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
