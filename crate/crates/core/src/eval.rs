//! Fresh agents trained for a whole lifetime on a fixed reward signal:
//! a frozen learned reward, extrinsic reward, or extrinsic reward plus a
//! count bonus. Nothing here updates η or φ.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Tensor, Var, VarSet};
use crate::baselines::{ReturnSpec, VisitCounts};
use crate::env::{sample_task, ActionMode, Env, EnvPreset, TaskSpec};
use crate::error::Result;
use crate::inner::{self, InnerConfig, QBatch, TrajectoryWindow};
use crate::meta::{lifetime_rng, window_rewards, RewardCursor};
use crate::nets::{self, Arch, RewardInput, StepFeatures};

/// Stream id reserved for evaluation lifetimes.
pub const EVAL_WORKER: u64 = 0xffff_fff0;

/// The agent's learning algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AgentAlgo {
    /// REINFORCE on returns of the supplied reward.
    #[default]
    PolicyGradient,
    /// One-step Q-learning with ε-greedy exploration.
    QLearning,
}

impl FromStr for AgentAlgo {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pg" => Ok(AgentAlgo::PolicyGradient),
            "q" => Ok(AgentAlgo::QLearning),
            other => Err(format!("unknown agent `{other}`")),
        }
    }
}

impl fmt::Display for AgentAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentAlgo::PolicyGradient => "pg",
            AgentAlgo::QLearning => "q",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QConfig {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            alpha: 0.05,
            epsilon: 0.1,
        }
    }
}

/// Where the agent's per-step rewards come from.
#[derive(Clone, Debug)]
pub enum RewardSignal {
    Learned {
        eta: ParamSet,
        input: RewardInput,
        cursor: Option<RewardCursor>,
    },
    Extrinsic,
    /// Extrinsic reward plus `β/√count`.
    CountBonus { beta: f64, counts: VisitCounts },
}

impl RewardSignal {
    pub fn learned(eta: ParamSet, input: RewardInput) -> Self {
        RewardSignal::Learned {
            eta,
            input,
            cursor: None,
        }
    }

    pub fn count_bonus(beta: f64) -> Self {
        RewardSignal::CountBonus {
            beta,
            counts: VisitCounts::new(),
        }
    }

    /// Prepare for a new lifetime whose first observation is `first`.
    pub fn start_lifetime(&mut self, first: StepFeatures) {
        match self {
            RewardSignal::Learned { eta, cursor, .. } => {
                let width = eta.get("lstm.wh").map(|t| t.shape()[0]).unwrap_or(0);
                *cursor = Some(RewardCursor::lifetime_start(width, first));
            }
            RewardSignal::CountBonus { counts, .. } => *counts = VisitCounts::new(),
            RewardSignal::Extrinsic => {}
        }
    }

    /// Rewards for every step of `window`, advancing any internal state.
    pub fn rewards(&mut self, window: &TrajectoryWindow) -> Vec<f64> {
        match self {
            RewardSignal::Learned { eta, input, cursor } => {
                let c = cursor.as_mut().expect("start_lifetime not called");
                let tape = Tape::inference();
                let (r, state) = window_rewards(
                    &eta.constants(&tape),
                    *input,
                    window,
                    c.state.on_tape(&tape),
                    c.pending.take().as_ref(),
                );
                c.state = state.values();
                r.value().data().to_vec()
            }
            RewardSignal::Extrinsic => window.extrinsic(),
            RewardSignal::CountBonus { beta, counts } => window
                .steps
                .iter()
                .map(|s| s.extrinsic_reward + counts.bonus(s.state_key, *beta))
                .collect(),
        }
    }
}

/// Everything that defines an evaluated learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnerSpec {
    pub algo: AgentAlgo,
    pub inner: InnerConfig,
    pub returns: ReturnSpec,
    pub q: QConfig,
}

impl LearnerSpec {
    /// Policy gradient on episodic returns of the supplied reward.
    pub fn episodic(inner: InnerConfig) -> Self {
        LearnerSpec {
            algo: AgentAlgo::PolicyGradient,
            inner,
            returns: crate::baselines::extrinsic_ep_config(&inner),
            q: QConfig::default(),
        }
    }
}

/// Outcome of one evaluated lifetime.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LifetimeRun {
    pub episode_returns: Vec<f64>,
    pub signal_sum: f64,
    pub entropy_sum: f64,
    pub steps: usize,
    /// Agent-cell visit counts, row-major over the layout, including the
    /// lifetime's start cell.
    pub visits: Vec<u64>,
}

impl LifetimeRun {
    pub fn lifetime_return(&self) -> f64 {
        self.episode_returns.iter().sum()
    }

    /// Mean episode return over episodes `from..to` (clipped to what ran).
    pub fn mean_return(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.episode_returns.len());
        if from >= to {
            return 0.0;
        }
        self.episode_returns[from..to].iter().sum::<f64>() / (to - from) as f64
    }
}

fn q_values<'t>(q: &VarSet<'t>, obs: &Var<'t>) -> Var<'t> {
    nets::policy_logits(q, obs)
}

fn greedy_values(q: &ParamSet, obs: &Tensor) -> Vec<f64> {
    let tape = Tape::inference();
    let x = tape.constant(nets::stack_observations(&[obs]));
    q_values(&q.constants(&tape), &x).value().data().to_vec()
}

/// Train a fresh agent on `task` for its whole lifetime.
pub fn run_lifetime(
    task: TaskSpec,
    arch: &Arch,
    learner: &LearnerSpec,
    signal: &mut RewardSignal,
    mode: ActionMode,
    rng: &mut impl Rng,
) -> Result<LifetimeRun> {
    let arch = Arch {
        num_actions: mode.num_actions(),
        ..*arch
    };
    let mut theta = nets::init_policy(rng, &arch);
    let mut env = Env::new(task);
    signal.start_lifetime(StepFeatures::lifetime_start(env.observation()));
    let layout = env.task().layout.clone();
    let mut run = LifetimeRun {
        visits: vec![0; layout.height * layout.width],
        ..LifetimeRun::default()
    };
    run.visits[layout.index(env.state().agent_cell)] += 1;
    let mut episode = 0.0;
    while !env.lifetime_done() {
        let window = match learner.algo {
            AgentAlgo::PolicyGradient => inner::collect_window(&theta, &mut env, mode, learner.inner.unroll, rng),
            AgentAlgo::QLearning => inner::collect_with(&mut env, mode, learner.inner.unroll, |obs| {
                inner::epsilon_greedy(&greedy_values(&theta, &obs.grid), learner.q.epsilon, rng)
            }),
        };
        for s in &window.steps {
            run.visits[layout.index(s.cell)] += 1;
            episode += s.extrinsic_reward;
            if s.episode_done {
                run.episode_returns.push(episode);
                episode = 0.0;
            }
        }
        run.steps += window.len();
        let rewards = signal.rewards(&window);
        run.signal_sum += rewards.iter().sum::<f64>();
        theta = match learner.algo {
            AgentAlgo::PolicyGradient => {
                let (next, entropy) = pg_update(&theta, &window, &rewards, learner)?;
                run.entropy_sum += entropy;
                next
            }
            AgentAlgo::QLearning => {
                let batch = QBatch::from_window(&window, rewards);
                inner::q_learning_step(&theta, &batch, learner.q.alpha, learner.returns.gamma, q_values)?
            }
        };
    }
    Ok(run)
}

/// One REINFORCE step on constant returns; also reports summed entropy.
pub fn pg_update(
    theta: &ParamSet,
    window: &TrajectoryWindow,
    rewards: &[f64],
    learner: &LearnerSpec,
) -> Result<(ParamSet, f64)> {
    let tape = Tape::new();
    let vars = theta.leaves(&tape);
    let (log_probs, entropies) = inner::policy_terms(&vars, window);
    let m = inner::return_matrix(&window.dones(), learner.returns.gamma, learner.returns.reset_at_done);
    let g: Vec<f64> = m
        .data()
        .chunks(rewards.len())
        .map(|row| row.iter().zip(rewards).map(|(a, b)| a * b).sum())
        .collect();
    let returns = tape.constant(Tensor::vector(g));
    let loss = inner::policy_loss(&log_probs, &returns, &entropies, learner.inner.entropy_coef);
    let grads = vars.gradients(&loss)?;
    let entropy = entropies.value().sum();
    Ok((inner::sgd_step(theta, &grads, learner.inner.alpha)?, entropy))
}

/// Summary over several evaluated lifetimes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub lifetimes: Vec<LifetimeRun>,
}

impl EvalSummary {
    /// Per-episode return averaged across lifetimes.
    pub fn curve(&self) -> Vec<f64> {
        let n = self.lifetimes.iter().map(|l| l.episode_returns.len()).max().unwrap_or(0);
        (0..n)
            .map(|e| {
                let xs: Vec<f64> = self
                    .lifetimes
                    .iter()
                    .filter_map(|l| l.episode_returns.get(e).copied())
                    .collect();
                xs.iter().sum::<f64>() / xs.len() as f64
            })
            .collect()
    }

    pub fn mean_lifetime_return(&self) -> f64 {
        mean(self.lifetimes.iter().map(LifetimeRun::lifetime_return))
    }

    /// Mean over lifetimes of the mean return in episodes `from..to`.
    pub fn mean_return(&self, from: usize, to: usize) -> f64 {
        mean(self.lifetimes.iter().map(|l| l.mean_return(from, to)))
    }

    /// Visit counts summed over lifetimes.
    pub fn visits(&self) -> Vec<u64> {
        let mut total = vec![0; self.lifetimes.first().map_or(0, |l| l.visits.len())];
        for l in &self.lifetimes {
            for (t, v) in total.iter_mut().zip(&l.visits) {
                *t += v;
            }
        }
        total
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Evaluate `lifetimes` fresh agents on tasks drawn from `preset`.
/// Lifetime `k` uses the same task and initial parameters whatever the
/// signal, so methods can be compared on common random numbers.
pub fn evaluate(
    preset: &EnvPreset,
    arch: &Arch,
    learner: &LearnerSpec,
    signal: &RewardSignal,
    mode: ActionMode,
    lifetimes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let mut summary = EvalSummary::default();
    for k in 0..lifetimes {
        let mut rng = lifetime_rng(seed, EVAL_WORKER, k as u64);
        let task = sample_task(preset, &mut rng);
        let mut signal = signal.clone();
        summary
            .lifetimes
            .push(run_lifetime(task, arch, learner, &mut signal, mode, &mut rng)?);
    }
    Ok(summary)
}
