//! Drivers behind the command-line subcommands: meta-training with periodic
//! metrics and checkpoints, evaluation of a frozen reward, and baselines.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::autodiff::ParamSet;
use crate::baselines::{self, extrinsic_life_config};
use crate::env::{sample_task, DomainId};
use crate::error::{Error, Result};
use crate::eval::{self, EvalSummary, LearnerSpec, LifetimeRun, RewardSignal, EVAL_WORKER};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{emit_heatmap, MetricsRow, MetricsWriter, Phase};
use crate::meta::{lifetime_rng, StepStats, Trainer};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Files written by a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub eta: ParamSet,
    pub phi: ParamSet,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub updates: usize,
}

/// Everything needed to resume inspection of a trainer as a checkpoint.
pub fn checkpoint_of(trainer: &Trainer, config: &ExperimentConfig) -> Checkpoint {
    Checkpoint {
        eta: trainer.eta.clone(),
        phi: trainer.phi.clone(),
        config: config.to_text(),
        rng_summary: format!(
            "chacha8 seed={} workers={} updates={} lifetimes_started={}",
            trainer.seed,
            trainer.streams.len(),
            trainer.updates_done,
            trainer.streams.iter().map(|s| s.lifetimes_started).sum::<u64>()
        ),
    }
}

/// Meta-train with `seed`, writing `train.csv`, periodic
/// `checkpoint_<update>.irf` files and `final.irf` into `out_dir`.
/// `on_row` sees every metrics row as it is written.
pub fn train(
    config: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    create_dir(out_dir)?;
    let metrics_path = out_dir.join("train.csv");
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    let mut trainer = Trainer::new(config.setup(), seed)?;
    let start = Instant::now();
    let mut block = StepStats::default();
    let mut lifetimes = 0u64;
    for _ in 0..config.meta.meta_updates {
        let summary = trainer.step()?;
        lifetimes += summary.stats.lifetime_returns.len() as u64;
        block.absorb(&summary.stats);
        let done = trainer.updates_done;
        if done % config.log_interval == 0 {
            let steps = block.steps.max(1) as f64;
            let row = MetricsRow {
                phase: Phase::Train,
                index: done as u64,
                lifetime: lifetimes,
                seed,
                episode_return: mean(&block.episode_returns),
                lifetime_return: mean(&block.lifetime_returns),
                intrinsic_reward: Some(block.intrinsic_sum / steps),
                entropy: Some(block.entropy_sum / steps),
                wall_ms: if config.record_wall_clock {
                    start.elapsed().as_millis() as u64
                } else {
                    0
                },
            };
            metrics.write(&row)?;
            on_row(&row);
            block = StepStats::default();
        }
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 {
            checkpoint_of(&trainer, config).save(&out_dir.join(format!("checkpoint_{done:06}.irf")))?;
        }
    }
    metrics.flush()?;
    let checkpoint = out_dir.join("final.irf");
    checkpoint_of(&trainer, config).save(&checkpoint)?;
    Ok(TrainOutcome {
        eta: trainer.eta,
        phi: trainer.phi,
        metrics: metrics_path,
        checkpoint,
        updates: trainer.updates_done,
    })
}

/// One row per episode of every evaluated lifetime.
pub fn write_eval_rows(path: &Path, summary: &EvalSummary, seed: u64) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for (k, l) in summary.lifetimes.iter().enumerate() {
        let steps = l.steps.max(1) as f64;
        let mut cumulative = 0.0;
        for (e, r) in l.episode_returns.iter().enumerate() {
            cumulative += r;
            w.write(&MetricsRow {
                phase: Phase::Eval,
                index: e as u64,
                lifetime: k as u64,
                seed,
                episode_return: Some(*r),
                lifetime_return: Some(cumulative),
                intrinsic_reward: Some(l.signal_sum / steps),
                entropy: Some(l.entropy_sum / steps),
                wall_ms: 0,
            })?;
        }
    }
    w.flush()
}

/// Train fresh agents on the checkpoint's frozen reward. The evaluated
/// domain, action set and agent come from `config`; network widths and the
/// reward input come from the checkpoint.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    config: &ExperimentConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<EvalSummary> {
    let trained = checkpoint.experiment()?;
    checkpoint.validate_against(&trained)?;
    let mut config = config.clone();
    config.conv_filters = trained.conv_filters;
    config.hidden = trained.hidden;
    config.lstm = trained.lstm;
    config.meta.reward_input = trained.meta.reward_input;
    if config.preset.observation_shape() != trained.preset.observation_shape() {
        return Err(Error::ArchMismatch(format!(
            "checkpoint trained on {} cannot read {} observations",
            trained.preset.name, config.preset.name
        )));
    }
    let signal = RewardSignal::learned(checkpoint.eta.clone(), config.meta.reward_input);
    let summary = eval::evaluate(
        &config.preset,
        &config.arch(),
        &config.learner(),
        &signal,
        config.action_mode,
        config.eval_lifetimes,
        seed,
    )?;
    if let Some(dir) = out_dir {
        write_outputs(dir, &summary, &config, seed)?;
    }
    Ok(summary)
}

fn write_outputs(dir: &Path, summary: &EvalSummary, config: &ExperimentConfig, seed: u64) -> Result<()> {
    create_dir(dir)?;
    write_eval_rows(&dir.join("eval.csv"), summary, seed)?;
    emit_heatmap(&summary.visits(), config.preset.layout().width, &dir.join("visits.csv"))
}

/// Reference methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMethod {
    ExtrinsicEp,
    ExtrinsicLife,
    Count,
    Heuristic,
}

impl FromStr for BaselineMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "extrinsic_ep" => Ok(BaselineMethod::ExtrinsicEp),
            "extrinsic_life" => Ok(BaselineMethod::ExtrinsicLife),
            "count" => Ok(BaselineMethod::Count),
            "heuristic" => Ok(BaselineMethod::Heuristic),
            other => Err(format!("unknown baseline `{other}`")),
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMethod::ExtrinsicEp => "extrinsic_ep",
            BaselineMethod::ExtrinsicLife => "extrinsic_life",
            BaselineMethod::Count => "count",
            BaselineMethod::Heuristic => "heuristic",
        })
    }
}

/// Run a baseline for `config.eval_lifetimes` lifetimes. Lifetime `k` sees
/// the same task as lifetime `k` of [`evaluate_checkpoint`] with the same
/// seed.
pub fn run_baseline(
    method: BaselineMethod,
    config: &ExperimentConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<EvalSummary> {
    config.validate()?;
    let summary = match method {
        BaselineMethod::Heuristic => {
            if config.preset.domain != DomainId::RandomAbc {
                return Err(Error::Unsupported(format!(
                    "the heuristic is defined for random_abc, not {}",
                    config.preset.name
                )));
            }
            let mut s = EvalSummary::default();
            for k in 0..config.eval_lifetimes {
                let mut rng = lifetime_rng(seed, EVAL_WORKER, k as u64);
                let task = sample_task(&config.preset, &mut rng);
                let episode_returns = baselines::run_heuristic_lifetime(&task)?;
                s.lifetimes.push(LifetimeRun {
                    episode_returns,
                    ..LifetimeRun::default()
                });
            }
            s
        }
        _ => {
            let mut learner: LearnerSpec = config.learner();
            let signal = match method {
                BaselineMethod::ExtrinsicEp => RewardSignal::Extrinsic,
                BaselineMethod::ExtrinsicLife => {
                    learner.returns = extrinsic_life_config();
                    RewardSignal::Extrinsic
                }
                _ => RewardSignal::count_bonus(config.count_beta),
            };
            eval::evaluate(
                &config.preset,
                &config.arch(),
                &learner,
                &signal,
                config.action_mode,
                config.eval_lifetimes,
                seed,
            )?
        }
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, &summary, config, seed)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::read_metrics;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::for_domain("tiny_abc").unwrap();
        c.conv_filters = 2;
        c.hidden = 4;
        c.lstm = 4;
        c.meta.batch_lifetimes = 1;
        c.meta.outer_unroll = 2;
        c.meta.meta_updates = 6;
        c.log_interval = 2;
        c.checkpoint_interval = 3;
        c.eval_lifetimes = 2;
        c.record_wall_clock = false;
        c
    }

    #[test]
    fn train_writes_rows_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let out = train(&cfg, 1, dir.path(), |_| {}).unwrap();
        let rows = read_metrics(&out.metrics).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(dir.path().join("checkpoint_000003.irf").exists());
        assert!(dir.path().join("checkpoint_000006.irf").exists());
        let ck = Checkpoint::load(&out.checkpoint).unwrap();
        assert_eq!(ck.eta, out.eta);
        let before = ck.eta.fingerprint();
        let s = evaluate_checkpoint(&ck, &cfg, 0, Some(dir.path())).unwrap();
        assert_eq!(ck.eta.fingerprint(), before);
        assert_eq!(s.lifetimes.len(), 2);
        assert!(read_metrics(&dir.path().join("eval.csv")).is_ok());
    }

    #[test]
    fn heuristic_only_on_random_abc() {
        let cfg = tiny_config();
        assert!(matches!(
            run_baseline(BaselineMethod::Heuristic, &cfg, 0, None),
            Err(Error::Unsupported(_))
        ));
        let mut cfg = ExperimentConfig::for_domain("random_abc").unwrap();
        cfg.eval_lifetimes = 3;
        let s = run_baseline(BaselineMethod::Heuristic, &cfg, 0, None).unwrap();
        assert_eq!(s.curve().len(), 50);
    }
}
