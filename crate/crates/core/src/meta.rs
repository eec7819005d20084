//! Outer learner: meta-gradients of the lifetime objective with respect to
//! the intrinsic reward parameters, truncated after `N` inner updates and
//! bootstrapped with a recurrent lifetime value function.
//!
//! One outer step of a worker builds a single tape holding
//!
//! * the reward network over the `N·L` new history elements (η leaves),
//! * `N` policy forwards and their differentiable SGD steps
//!   (`θ_0` is a fresh leaf, so only `θ_1..θ_N` depend on η),
//! * the meta-loss `-(1/T) Σ_t c_t log π_{θ_k}(a_t|s_t)` whose coefficients
//!   `c_t` are constants (lifetime TD targets, optionally minus a baseline).
//!
//! Backpropagating the meta-loss to η realises `G_t ∇_θ log π · ∇_η θ_t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tape, Tensor, Var, VarSet};
use crate::env::{sample_task, ActionMode, Env, EnvPreset};
use crate::error::{Error, Result};
use crate::inner::{self, InnerConfig, TrajectoryWindow};
use crate::nets::{self, Arch, RecurrentState, RecurrentVars, RewardInput, StepFeatures};

/// What the meta-gradient maximises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Objective {
    /// Bootstrapped lifetime return of extrinsic rewards.
    #[default]
    Lifetime,
    /// Extrinsic episodic return, reset at dones.
    Episodic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Inner updates per outer step (`N`).
    pub outer_unroll: usize,
    /// Lifetime discount.
    pub gamma: f64,
    pub eta_lr: f64,
    pub value_lr: f64,
    pub batch_lifetimes: usize,
    pub meta_updates: usize,
    pub objective: Objective,
    pub use_baseline: bool,
    pub reward_input: RewardInput,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            outer_unroll: 5,
            gamma: 0.99,
            eta_lr: 0.001,
            value_lr: 0.001,
            batch_lifetimes: 8,
            meta_updates: 20_000,
            objective: Objective::Lifetime,
            use_baseline: false,
            reward_input: RewardInput::Lstm,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_unroll == 0 {
            return Err(Error::Config("outer_unroll must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.batch_lifetimes == 0 {
            return Err(Error::Config("batch_lifetimes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &ParamSet) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step minimising along `grads`. A gradient with non-finite
/// entries is reported and the step is skipped.
pub fn adam_update(params: &ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64) -> Result<ParamSet> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("adam gradient".into()));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    state.m = state.m.zip_map(grads, |m, g| b1 * m + (1.0 - b1) * g);
    state.v = state.v.zip_map(grads, |v, g| b2 * v + (1.0 - b2) * g * g);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let step = state.m.zip_map(&state.v, |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps));
    Ok(params.zip_map(&step, |p, s| p - s))
}

/// n-step lifetime return of extrinsic rewards, bootstrapped from the value
/// of the history after the last reward unless the lifetime ended.
pub fn lifetime_td_target(rewards: &[f64], gamma: f64, bootstrap: f64, lifetime_done: bool) -> f64 {
    let mut g = if lifetime_done { 0.0 } else { bootstrap };
    for r in rewards.iter().rev() {
        g = r + gamma * g;
    }
    g
}

/// [`lifetime_td_target`] for every step of a window.
pub fn lifetime_td_targets(rewards: &[f64], gamma: f64, bootstrap: f64, lifetime_done: bool) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = if lifetime_done { 0.0 } else { bootstrap };
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        g = r + gamma * g;
        *o = g;
    }
    out
}

/// Extrinsic episodic returns within a window: reset at dones, no bootstrap.
pub fn episodic_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            g = 0.0;
        }
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// `-(1/T) Σ_t c_t log π(a_t|s_t)` with constant coefficients.
pub fn meta_loss<'t>(log_probs: &[Var<'t>], coefficients: &[f64]) -> Var<'t> {
    assert!(!log_probs.is_empty(), "empty outer window");
    let tape = log_probs[0].tape();
    let all = tape.concat(&log_probs.iter().collect::<Vec<_>>());
    assert_eq!(all.shape()[0], coefficients.len(), "one coefficient per step");
    let c = tape.constant(Tensor::vector(coefficients.to_vec()));
    all.mul(&c).sum().scale(-1.0 / coefficients.len() as f64)
}

/// Where a reward network picks up within a lifetime.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardCursor {
    pub state: RecurrentState,
    /// History element not yet consumed (the lifetime's first observation).
    pub pending: Option<StepFeatures>,
}

impl RewardCursor {
    pub fn lifetime_start(width: usize, first: StepFeatures) -> Self {
        RewardCursor {
            state: RecurrentState::zeros(width),
            pending: Some(first),
        }
    }
}

/// Value network position: the state before `last` has been consumed, so the
/// next outer step can re-evaluate `V(τ_t0)` with current parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueCursor {
    pub state: RecurrentState,
    pub last: StepFeatures,
}

/// Intrinsic rewards for a window, continuing the reward network's history.
pub fn window_rewards<'t>(
    eta: &VarSet<'t>,
    input: RewardInput,
    window: &TrajectoryWindow,
    state: RecurrentVars<'t>,
    pending: Option<&StepFeatures>,
) -> (Var<'t>, RecurrentVars<'t>) {
    let mut feats: Vec<StepFeatures> = pending.into_iter().cloned().collect();
    let skip = feats.len();
    feats.extend(window.features());
    match input {
        RewardInput::Lstm => {
            let (r, s) = nets::reward_sequence(eta, &feats, state);
            let r = if skip > 0 { r.slice_cols(skip, window.len()) } else { r };
            (r, s)
        }
        RewardInput::FeedForward => {
            (nets::feed_forward_rewards(eta, &window.features()), state)
        }
    }
}

/// The differentiable chain `θ_0 → θ_1 → … → θ_N` for one outer step.
pub struct OuterGraph<'t> {
    tape: &'t Tape,
    pub eta: VarSet<'t>,
    pub theta0: VarSet<'t>,
    theta: VarSet<'t>,
    reward_input: RewardInput,
    reward_state: RecurrentVars<'t>,
    pending: Option<StepFeatures>,
    inner: InnerConfig,
    pub windows: Vec<TrajectoryWindow>,
    pub log_probs: Vec<Var<'t>>,
    pub entropies: Vec<Var<'t>>,
    pub intrinsic: Vec<Var<'t>>,
}

impl<'t> OuterGraph<'t> {
    pub fn new(
        tape: &'t Tape,
        eta: &ParamSet,
        theta0: &ParamSet,
        reward: &RewardCursor,
        reward_input: RewardInput,
        inner: InnerConfig,
    ) -> Self {
        let eta = eta.leaves(tape);
        let theta0 = theta0.leaves(tape);
        OuterGraph {
            tape,
            theta: theta0.clone(),
            theta0,
            eta,
            reward_input,
            reward_state: reward.state.on_tape(tape),
            pending: reward.pending.clone(),
            inner,
            windows: Vec::new(),
            log_probs: Vec::new(),
            entropies: Vec::new(),
            intrinsic: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Current policy parameters as values.
    pub fn theta_values(&self) -> ParamSet {
        self.theta.values()
    }

    pub fn theta(&self) -> &VarSet<'t> {
        &self.theta
    }

    /// Add one collected window and take the differentiable inner step.
    pub fn push_window(&mut self, window: TrajectoryWindow) -> Result<()> {
        assert!(!window.is_empty(), "empty window");
        let (log_probs, entropies) = inner::policy_terms(&self.theta, &window);
        let (rewards, state) = window_rewards(
            &self.eta,
            self.reward_input,
            &window,
            self.reward_state.clone(),
            self.pending.take().as_ref(),
        );
        self.reward_state = state;
        let returns = inner::intrinsic_returns(&rewards, &window.dones(), self.inner.gamma_bar);
        let loss = inner::policy_loss(&log_probs, &returns, &entropies, self.inner.entropy_coef);
        self.theta = inner::sgd_step_differentiable(&self.theta, &loss, self.inner.alpha)?;
        self.windows.push(window);
        self.log_probs.push(log_probs);
        self.entropies.push(entropies);
        self.intrinsic.push(rewards);
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.windows.iter().map(TrajectoryWindow::len).sum()
    }

    pub fn extrinsic(&self) -> Vec<f64> {
        self.windows.iter().flat_map(|w| w.extrinsic()).collect()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.windows.iter().flat_map(|w| w.dones()).collect()
    }

    pub fn lifetime_done(&self) -> bool {
        self.windows.last().is_some_and(TrajectoryWindow::lifetime_done)
    }

    pub fn meta_loss(&self, coefficients: &[f64]) -> Var<'t> {
        meta_loss(&self.log_probs, coefficients)
    }

    pub fn reward_cursor(&self) -> RewardCursor {
        RewardCursor {
            state: self.reward_state.values(),
            pending: self.pending.clone(),
        }
    }
}

/// Rebuild an outer step from recorded windows and return the meta-loss
/// value. Used by finite-difference checks.
#[allow(clippy::too_many_arguments)]
pub fn replay_meta_loss(
    eta: &ParamSet,
    theta0: &ParamSet,
    reward: &RewardCursor,
    reward_input: RewardInput,
    inner: InnerConfig,
    windows: &[TrajectoryWindow],
    coefficients: &[f64],
) -> Result<f64> {
    let tape = Tape::new();
    let mut g = OuterGraph::new(&tape, eta, theta0, reward, reward_input, inner);
    for w in windows {
        g.push_window(w.clone())?;
    }
    Ok(g.meta_loss(coefficients).item())
}

/// Lifetime value predictions `V(τ_t)` for each step of an outer window and
/// the bootstrap value after its last step.
pub struct ValuePass<'t> {
    pub predictions: Var<'t>,
    pub bootstrap: f64,
    pub cursor: ValueCursor,
}

pub fn value_pass<'t>(phi: &VarSet<'t>, cursor: &ValueCursor, features: &[StepFeatures]) -> ValuePass<'t> {
    assert!(!features.is_empty(), "value pass over no steps");
    let tape = phi["head.w"].tape();
    let mut first: Vec<StepFeatures> = vec![cursor.last.clone()];
    first.extend_from_slice(&features[..features.len() - 1]);
    let (predictions, state) = nets::value_sequence(phi, &first, cursor.state.on_tape(tape));
    let before_last = state.values();
    let last = features[features.len() - 1].clone();
    let (boot, _) = nets::value_sequence(phi, std::slice::from_ref(&last), state);
    ValuePass {
        predictions,
        bootstrap: boot.item(),
        cursor: ValueCursor {
            state: before_last,
            last,
        },
    }
}

/// Mean squared TD error; targets are constants.
pub fn value_loss<'t>(predictions: &Var<'t>, targets: &[f64]) -> Var<'t> {
    let t = predictions.tape().constant(Tensor::vector(targets.to_vec()));
    let err = t.sub(predictions);
    err.mul(&err).mean()
}

/// Per-step coefficients of the meta-loss.
pub fn meta_coefficients(
    objective: Objective,
    extrinsic: &[f64],
    dones: &[bool],
    lifetime_done: bool,
    bootstrap: f64,
    values: Option<&[f64]>,
    gamma: f64,
    gamma_bar: f64,
) -> Vec<f64> {
    let mut c = match objective {
        Objective::Lifetime => lifetime_td_targets(extrinsic, gamma, bootstrap, lifetime_done),
        Objective::Episodic => episodic_returns(extrinsic, dones, gamma_bar),
    };
    if let Some(b) = values {
        for (ci, bi) in c.iter_mut().zip(b) {
            *ci -= bi;
        }
    }
    c
}

/// Everything a training problem needs besides the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSetup {
    pub preset: EnvPreset,
    pub arch: Arch,
    pub inner: InnerConfig,
    pub meta: MetaConfig,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        self.meta.validate()
    }
}

/// Counter-based stream for one lifetime of one worker.
pub fn lifetime_rng(seed: u64, worker: u64, lifetime: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((worker << 32) | (lifetime & 0xffff_ffff));
    rng
}

/// A worker's lifetime in progress.
#[derive(Clone, Debug)]
pub struct LifetimeStream {
    pub worker: u64,
    pub lifetimes_started: u64,
    pub env: Env,
    pub theta: ParamSet,
    pub reward: RewardCursor,
    pub value: ValueCursor,
    pub rng: ChaCha8Rng,
    episode_return: f64,
    lifetime_return: f64,
    needs_reset: bool,
}

impl LifetimeStream {
    pub fn new(setup: &TrainSetup, seed: u64, worker: u64) -> Self {
        let mut s = LifetimeStream::start(setup, seed, worker, 0);
        s.needs_reset = false;
        s
    }

    fn start(setup: &TrainSetup, seed: u64, worker: u64, lifetime: u64) -> Self {
        let mut rng = lifetime_rng(seed, worker, lifetime);
        let task = sample_task(&setup.preset, &mut rng);
        let theta = nets::init_policy(&mut rng, &setup.arch);
        let env = Env::new(task);
        let first = StepFeatures::lifetime_start(env.observation());
        LifetimeStream {
            worker,
            lifetimes_started: lifetime + 1,
            env,
            theta,
            reward: RewardCursor::lifetime_start(setup.arch.lstm, first.clone()),
            value: ValueCursor {
                state: RecurrentState::zeros(setup.arch.lstm),
                last: first,
            },
            rng,
            episode_return: 0.0,
            lifetime_return: 0.0,
            needs_reset: false,
        }
    }

    /// Begin a fresh lifetime: new task, new θ, zeroed recurrent states.
    pub fn restart(&mut self, setup: &TrainSetup, seed: u64) {
        *self = LifetimeStream::start(setup, seed, self.worker, self.lifetimes_started);
    }

    pub fn finished(&self) -> bool {
        self.needs_reset || self.env.lifetime_done()
    }
}

/// Summary statistics of one worker's outer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub episode_returns: Vec<f64>,
    pub lifetime_returns: Vec<f64>,
    pub intrinsic_sum: f64,
    pub entropy_sum: f64,
    pub steps: usize,
}

impl StepStats {
    pub fn absorb(&mut self, other: &StepStats) {
        self.episode_returns.extend_from_slice(&other.episode_returns);
        self.lifetime_returns.extend_from_slice(&other.lifetime_returns);
        self.intrinsic_sum += other.intrinsic_sum;
        self.entropy_sum += other.entropy_sum;
        self.steps += other.steps;
    }
}

/// Data retained from an outer step, enough to replay it.
#[derive(Clone, Debug)]
pub struct OuterRecord {
    pub theta0: ParamSet,
    pub reward: RewardCursor,
    pub windows: Vec<TrajectoryWindow>,
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct WorkerOutput {
    pub eta_grad: ParamSet,
    pub phi_grad: ParamSet,
    pub stats: StepStats,
    pub record: OuterRecord,
}

/// Run `N` inner updates for one worker against frozen `(η, φ)` and return
/// the meta-gradient and value gradient.
pub fn outer_step(
    stream: &mut LifetimeStream,
    eta: &ParamSet,
    phi: &ParamSet,
    setup: &TrainSetup,
    seed: u64,
) -> Result<WorkerOutput> {
    if stream.finished() {
        stream.restart(setup, seed);
    }
    let meta = &setup.meta;
    let tape = Tape::new();
    let theta0 = stream.theta.clone();
    let reward0 = stream.reward.clone();
    let mut graph = OuterGraph::new(&tape, eta, &theta0, &reward0, meta.reward_input, setup.inner);
    for _ in 0..meta.outer_unroll {
        let theta = graph.theta_values();
        let window = inner::collect_window(&theta, &mut stream.env, ActionMode::Standard, setup.inner.unroll, &mut stream.rng);
        let done = window.lifetime_done();
        graph.push_window(window)?;
        if done {
            break;
        }
    }

    let features: Vec<StepFeatures> = graph.windows.iter().flat_map(|w| w.features()).collect();
    let phi_vars = phi.leaves(&tape);
    let vp = value_pass(&phi_vars, &stream.value, &features);
    let extrinsic = graph.extrinsic();
    let dones = graph.dones();
    let lifetime_done = graph.lifetime_done();
    let targets = lifetime_td_targets(&extrinsic, meta.gamma, vp.bootstrap, lifetime_done);
    let baseline: Option<Vec<f64>> = meta
        .use_baseline
        .then(|| vp.predictions.value().data().to_vec());
    let coefficients = meta_coefficients(
        meta.objective,
        &extrinsic,
        &dones,
        lifetime_done,
        vp.bootstrap,
        baseline.as_deref(),
        meta.gamma,
        setup.inner.gamma_bar,
    );

    let loss = graph.meta_loss(&coefficients);
    let eta_grad = graph.eta.gradients(&loss)?;
    let vloss = value_loss(&vp.predictions, &targets);
    let phi_grad = phi_vars.gradients(&vloss)?;
    if !eta_grad.all_finite() || !phi_grad.all_finite() {
        return Err(Error::NonFinite("meta-gradient".into()));
    }

    let mut stats = StepStats {
        steps: extrinsic.len(),
        ..StepStats::default()
    };
    for (r, d) in extrinsic.iter().zip(&dones) {
        stream.episode_return += r;
        stream.lifetime_return += r;
        if *d {
            stats.episode_returns.push(stream.episode_return);
            stream.episode_return = 0.0;
        }
    }
    if lifetime_done {
        stats.lifetime_returns.push(stream.lifetime_return);
    }
    stats.intrinsic_sum = graph.intrinsic.iter().map(|v| v.value().sum()).sum();
    stats.entropy_sum = graph.entropies.iter().map(|v| v.value().sum()).sum();

    stream.theta = graph.theta_values();
    if !stream.theta.all_finite() {
        return Err(Error::NonFinite("policy parameters".into()));
    }
    stream.reward = graph.reward_cursor();
    stream.value = vp.cursor;

    Ok(WorkerOutput {
        eta_grad,
        phi_grad,
        stats,
        record: OuterRecord {
            theta0,
            reward: reward0,
            windows: graph.windows.clone(),
            coefficients,
        },
    })
}

/// Entrywise mean. Each entry is summed in ascending order so the result
/// does not depend on the order of `grads`.
pub fn average_gradients(grads: &[ParamSet]) -> ParamSet {
    assert!(!grads.is_empty(), "nothing to average");
    let n = grads.len() as f64;
    grads[0].map(|name, t| {
        let sources: Vec<&[f64]> = grads.iter().map(|g| g[name].data()).collect();
        let mut column = vec![0.0; grads.len()];
        let data = (0..t.len())
            .map(|i| {
                for (c, src) in column.iter_mut().zip(&sources) {
                    *c = src[i];
                }
                column.sort_by(f64::total_cmp);
                column.iter().sum::<f64>() / n
            })
            .collect();
        Tensor::new(t.shape(), data)
    })
}

/// One logged unit of training progress.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateSummary {
    pub update: usize,
    pub stats: StepStats,
    pub aborted: usize,
}

/// Synchronous data-parallel meta-trainer.
pub struct Trainer {
    pub setup: TrainSetup,
    pub seed: u64,
    pub eta: ParamSet,
    pub phi: ParamSet,
    pub eta_adam: AdamState,
    pub phi_adam: AdamState,
    pub streams: Vec<LifetimeStream>,
    pub updates_done: usize,
}

impl Trainer {
    pub fn new(setup: TrainSetup, seed: u64) -> Result<Self> {
        setup.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(u64::MAX);
        let eta = nets::init_reward(&mut init_rng, &setup.arch, setup.meta.reward_input);
        let phi = nets::init_value(&mut init_rng, &setup.arch);
        let streams = (0..setup.meta.batch_lifetimes as u64)
            .map(|w| LifetimeStream::new(&setup, seed, w))
            .collect();
        Ok(Trainer {
            eta_adam: AdamState::new(&eta),
            phi_adam: AdamState::new(&phi),
            eta,
            phi,
            streams,
            setup,
            seed,
            updates_done: 0,
        })
    }

    /// One synchronous meta-update over all workers.
    pub fn step(&mut self) -> Result<UpdateSummary> {
        let mut eta_grads = Vec::with_capacity(self.streams.len());
        let mut phi_grads = Vec::with_capacity(self.streams.len());
        let mut summary = UpdateSummary {
            update: self.updates_done,
            ..UpdateSummary::default()
        };
        for stream in &mut self.streams {
            match outer_step(stream, &self.eta, &self.phi, &self.setup, self.seed) {
                Ok(out) => {
                    eta_grads.push(out.eta_grad);
                    phi_grads.push(out.phi_grad);
                    summary.stats.absorb(&out.stats);
                }
                Err(_) => {
                    stream.needs_reset = true;
                    summary.aborted += 1;
                }
            }
        }
        let workers = self.streams.len();
        if summary.aborted * 10 > workers {
            return Err(Error::TooManyAborts {
                aborted: summary.aborted,
                workers,
            });
        }
        let eta_grad = average_gradients(&eta_grads);
        let phi_grad = average_gradients(&phi_grads);
        self.eta = adam_update(&self.eta, &eta_grad, &mut self.eta_adam, self.setup.meta.eta_lr)?;
        self.phi = adam_update(&self.phi, &phi_grad, &mut self.phi_adam, self.setup.meta.value_lr)?;
        self.updates_done += 1;
        Ok(summary)
    }
}
