//! The agent's own learner: REINFORCE on intrinsic returns, one
//! differentiable SGD step per unroll window.

use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Tensor, Var, VarSet};
use crate::env::{ActionMode, Cell, Env, Observation};
use crate::error::{Error, Result};
use crate::nets::{self, StepFeatures};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerConfig {
    /// Policy SGD step size.
    pub alpha: f64,
    /// Discount for episodic intrinsic returns.
    pub gamma_bar: f64,
    pub entropy_coef: f64,
    /// Environment steps per policy update.
    pub unroll: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            alpha: 0.1,
            gamma_bar: 0.9,
            entropy_coef: 0.01,
            unroll: 4,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_bar > 0.0 && self.gamma_bar <= 1.0) {
            return Err(Error::Config(format!("gamma_bar must be in (0, 1], got {}", self.gamma_bar)));
        }
        if self.unroll == 0 {
            return Err(Error::Config("unroll must be at least 1".into()));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One environment transition as seen by the learner.
#[derive(Clone, Debug)]
pub struct Transition {
    /// Observation the action was chosen from.
    pub observation: Tensor,
    /// Policy-output index.
    pub action: usize,
    /// History element produced by the transition.
    pub features: StepFeatures,
    pub extrinsic_reward: f64,
    pub episode_done: bool,
    pub lifetime_done: bool,
    /// Agent cell after the move.
    pub cell: Cell,
    /// [`crate::env::EnvState::state_key`] after the move.
    pub state_key: u64,
}

/// One unroll of at most `L` transitions.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryWindow {
    pub steps: Vec<Transition>,
}

impl TrajectoryWindow {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.episode_done).collect()
    }

    pub fn lifetime_done(&self) -> bool {
        self.steps.last().is_some_and(|s| s.lifetime_done)
    }

    pub fn features(&self) -> Vec<StepFeatures> {
        self.steps.iter().map(|s| s.features.clone()).collect()
    }

    pub fn extrinsic(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.extrinsic_reward).collect()
    }

    pub fn observations(&self) -> Tensor {
        let obs: Vec<&Tensor> = self.steps.iter().map(|s| &s.observation).collect();
        nets::stack_observations(&obs)
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Roll the environment forward up to `len` steps, choosing actions with
/// `choose(observation) -> policy index`. Episodes restart inside the window;
/// collection stops early when the lifetime ends.
///
/// Panics if the lifetime is already over.
pub fn collect_with(
    env: &mut Env,
    mode: ActionMode,
    len: usize,
    mut choose: impl FnMut(&Observation) -> usize,
) -> TrajectoryWindow {
    assert!(!env.lifetime_done(), "collect_window called on a finished lifetime");
    let mut steps = Vec::with_capacity(len);
    for _ in 0..len {
        if env.state().episode_done {
            env.next_episode();
        }
        let obs = env.observation().clone();
        let action = choose(&obs);
        let executed = mode.action(action);
        let r = env.step(executed);
        steps.push(Transition {
            observation: obs.grid,
            action,
            features: StepFeatures::transition(&r.observation, executed, r.extrinsic_reward, r.episode_done),
            extrinsic_reward: r.extrinsic_reward,
            episode_done: r.episode_done,
            lifetime_done: r.lifetime_done,
            cell: env.state().agent_cell,
            state_key: env.state().state_key(),
        });
        if r.lifetime_done {
            break;
        }
    }
    TrajectoryWindow { steps }
}

/// Sample actions from `π_θ`.
pub fn collect_window(theta: &ParamSet, env: &mut Env, mode: ActionMode, len: usize, rng: &mut impl Rng) -> TrajectoryWindow {
    collect_with(env, mode, len, |obs| {
        let probs = nets::policy_probs(theta, &obs.grid);
        nets::sample_index(&probs, rng)
    })
}

/// Constant matrix `M` with `returns = M · rewards`.
///
/// Row `t` holds `γ^(k-t)` for `k ≥ t` up to and including the first done at
/// or after `t`; when `reset_at_done` is false dones are ignored.
pub fn return_matrix(dones: &[bool], gamma: f64, reset_at_done: bool) -> Tensor {
    let n = dones.len();
    let mut m = vec![0.0; n * n];
    for t in 0..n {
        let mut w = 1.0;
        for k in t..n {
            m[t * n + k] = w;
            if reset_at_done && dones[k] {
                break;
            }
            w *= gamma;
        }
    }
    Tensor::new(&[n, n], m)
}

/// Discounted returns of `rewards` (shape `[L]`) within the window.
pub fn discounted_returns<'t>(rewards: &Var<'t>, dones: &[bool], gamma: f64, reset_at_done: bool) -> Var<'t> {
    let n = dones.len();
    assert_eq!(rewards.shape(), &[n], "rewards and dones disagree in length");
    let m = rewards.tape().constant(return_matrix(dones, gamma, reset_at_done));
    m.matmul(&rewards.reshape(&[n, 1])).reshape(&[n])
}

/// `G^ep_t`: intrinsic returns that reset after each done and never bootstrap.
pub fn intrinsic_returns<'t>(rewards: &Var<'t>, dones: &[bool], gamma_bar: f64) -> Var<'t> {
    discounted_returns(rewards, dones, gamma_bar, true)
}

/// `-(1/L) Σ_t [G_t log π(a_t|s_t) + c H_t]`.
pub fn policy_loss<'t>(log_probs: &Var<'t>, returns: &Var<'t>, entropies: &Var<'t>, entropy_coef: f64) -> Var<'t> {
    let n = log_probs.shape()[0] as f64;
    returns
        .mul(log_probs)
        .add(&entropies.scale(entropy_coef))
        .sum()
        .scale(-1.0 / n)
}

/// Log-probabilities of the taken actions and per-step entropies under `theta`.
pub fn policy_terms<'t>(theta: &VarSet<'t>, window: &TrajectoryWindow) -> (Var<'t>, Var<'t>) {
    let tape = theta["head.w"].tape();
    let obs = tape.constant(window.observations());
    let lsm = nets::policy_logits(theta, &obs).log_softmax();
    (lsm.index_select(&window.actions()), nets::entropy_of(&lsm))
}

/// `θ' = θ - α ∇_θ loss`, keeping the dependence of the gradient on
/// everything upstream of `loss`.
pub fn sgd_step_differentiable<'t>(theta: &VarSet<'t>, loss: &Var<'t>, alpha: f64) -> Result<VarSet<'t>> {
    let grads = theta.gradients_graph(loss)?;
    if !grads.values().all_finite() {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    Ok(theta.sgd_step(&grads, alpha))
}

/// Plain SGD step on detached parameters.
pub fn sgd_step(theta: &ParamSet, grads: &ParamSet, alpha: f64) -> Result<ParamSet> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    Ok(theta.zip_map(grads, |p, g| p - alpha * g))
}

/// Transitions for a Q-learning update.
#[derive(Clone, Debug)]
pub struct QBatch {
    /// `[B, ...]` pre-action observations.
    pub observations: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `[B, ...]` post-action observations.
    pub next_observations: Tensor,
    pub dones: Vec<bool>,
}

impl QBatch {
    /// Pair a window with the rewards the learner should see.
    pub fn from_window(window: &TrajectoryWindow, rewards: Vec<f64>) -> Self {
        let next: Vec<&Tensor> = window.steps.iter().map(|s| &s.features.observation).collect();
        QBatch {
            observations: window.observations(),
            actions: window.actions(),
            rewards,
            next_observations: nets::stack_observations(&next),
            dones: window.dones(),
        }
    }
}

/// One TD(0) step on `½·mean (Q(s,a) - y)²` with `y = r + γ max_a' Q(s',a')`,
/// bootstrap masked at dones. `q_forward` maps `[B, ...]` observations to
/// `[B, A]` action values.
pub fn q_learning_step<F>(q: &ParamSet, batch: &QBatch, alpha: f64, gamma: f64, q_forward: F) -> Result<ParamSet>
where
    F: for<'t> Fn(&VarSet<'t>, &Var<'t>) -> Var<'t>,
{
    let targets: Vec<f64> = {
        let tape = Tape::inference();
        let next = q_forward(&q.constants(&tape), &tape.constant(batch.next_observations.clone()));
        let a = next.value().cols();
        next.value()
            .data()
            .chunks(a)
            .zip(&batch.rewards)
            .zip(&batch.dones)
            .map(|((row, &r), &d)| {
                if d {
                    r
                } else {
                    r + gamma * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect()
    };
    let tape = Tape::new();
    let vars = q.leaves(&tape);
    let qsa = q_forward(&vars, &tape.constant(batch.observations.clone())).index_select(&batch.actions);
    let err = qsa.sub(&tape.constant(Tensor::vector(targets)));
    let loss = err.mul(&err).mean().scale(0.5);
    let grads = vars.gradients(&loss)?;
    sgd_step(q, &grads, alpha)
}

/// ε-greedy choice from action values.
pub fn epsilon_greedy(values: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..values.len());
    }
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_task, EnvPreset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intrinsic_return_examples() {
        let tape = Tape::new();
        let r = tape.leaf(Tensor::vector(vec![1.0, 0.0, 2.0]));
        let g = intrinsic_returns(&r, &[false, false, false], 0.9);
        assert!((g.value().data()[0] - 2.62).abs() < 1e-12);
        let r2 = tape.leaf(Tensor::vector(vec![1.0, 5.0]));
        let g2 = intrinsic_returns(&r2, &[true, false], 0.9);
        assert_eq!(g2.value().data(), &[1.0, 5.0]);
        let g0 = intrinsic_returns(&r, &[false, false, false], 0.0);
        for (a, b) in g0.value().data().iter().zip(r.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_returns_zero_loss() {
        let tape = Tape::new();
        let lp = tape.leaf(Tensor::vector(vec![-1.0, -2.0]));
        let g = tape.constant(Tensor::zeros(&[2]));
        let h = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        assert_eq!(policy_loss(&lp, &g, &h, 0.0).item(), 0.0);
    }

    #[test]
    fn quadratic_sgd_step() {
        let tape = Tape::new();
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(3.0));
        let vars = p.leaves(&tape);
        let d = vars["x"].affine(1.0, -1.0);
        let loss = d.mul(&d);
        let next = sgd_step_differentiable(&vars, &loss, 0.1).unwrap();
        // (θ - c)² with θ=3, c=1: gradient 4, step 0.4
        assert!((next["x"].item() - 2.6).abs() < 1e-12);
        let same = sgd_step_differentiable(&vars, &loss, 0.0).unwrap();
        assert_eq!(same["x"].item(), 3.0);
    }

    #[test]
    fn window_boundaries() {
        let preset = EnvPreset::by_name("fixed_abc").unwrap();
        let task = sample_task(&preset, &mut ChaCha8Rng::seed_from_u64(0));
        let mut env = Env::new(task);
        // Right x4 from (4,0) reaches C at (4,4) on the 4th step.
        let w = collect_with(&mut env, ActionMode::Standard, 4, |_| 3);
        assert_eq!(w.dones(), vec![false, false, false, true]);
        // Two more steps, then episode restarts with Up moves.
        let mut k = 0;
        let w = collect_with(&mut env, ActionMode::Standard, 4, |_| {
            k += 1;
            if k <= 2 { 1 } else { 0 }
        });
        assert_eq!(w.len(), 4);
        assert_eq!(env.state().episode_index, 1);
        assert_eq!(w.dones(), vec![false, false, false, false]);
    }

    #[test]
    fn lifetime_end_truncates_window() {
        let preset = EnvPreset::by_name("tiny_abc").unwrap();
        let task = sample_task(&preset, &mut ChaCha8Rng::seed_from_u64(0));
        let mut env = Env::new(task);
        // start (2,0); A at (0,0): two Ups end an episode.
        let w = collect_with(&mut env, ActionMode::Standard, 2, |_| 0);
        assert!(w.steps[1].episode_done && !w.lifetime_done());
        let w = collect_with(&mut env, ActionMode::Standard, 1, |_| 0);
        assert_eq!(w.len(), 1);
        let w = collect_with(&mut env, ActionMode::Standard, 4, |_| 0);
        assert_eq!(w.len(), 1);
        assert!(w.lifetime_done());
    }

    #[test]
    fn terminal_target_is_reward() {
        let mut q = ParamSet::new();
        q.insert("table", Tensor::new(&[1, 2], vec![5.0, 7.0]));
        let batch = QBatch {
            observations: Tensor::new(&[1, 1], vec![1.0]),
            actions: vec![0],
            rewards: vec![0.3],
            next_observations: Tensor::new(&[1, 1], vec![1.0]),
            dones: vec![true],
        };
        fn fwd<'t>(p: &VarSet<'t>, o: &Var<'t>) -> Var<'t> {
            o.matmul(&p["table"])
        }
        let q1 = q_learning_step(&q, &batch, 1.0, 0.9, fwd).unwrap();
        assert!((q1["table"].data()[0] - 0.3).abs() < 1e-12);
        let q0 = q_learning_step(&q, &batch, 0.0, 0.9, fwd).unwrap();
        assert_eq!(q0, q);
    }

    /// Two-action softmax with logits `[w, 0]` for a scalar leaf `w`.
    fn two_action_log_probs<'t>(w: &Var<'t>, actions: &[usize]) -> Var<'t> {
        let tape = w.tape();
        let basis = tape.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]));
        let one = tape.constant(Tensor::full(&[actions.len(), 1], 1.0));
        one.matmul(&w.reshape(&[1, 1]).matmul(&basis))
            .log_softmax()
            .index_select(actions)
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn reinforce_gradient_by_hand() {
        let w0 = 0.4;
        let p0 = sigmoid(w0);
        for (action, score) in [(0, 1.0 - p0), (1, -p0)] {
            let tape = Tape::new();
            let w = tape.leaf(Tensor::vector(vec![w0]));
            let lp = two_action_log_probs(&w, &[action]);
            let g = tape.constant(Tensor::vector(vec![1.0]));
            let h = tape.constant(Tensor::zeros(&[1]));
            let loss = policy_loss(&lp, &g, &h, 0.0);
            let grad = tape.gradients(&loss, &[&w]).unwrap()[0].item();
            assert!((grad + score).abs() < 1e-12, "action {action}: {grad} vs {}", -score);
        }
    }

    #[test]
    fn updated_policy_derivative_in_reward_matches_finite_differences() {
        // One parameter each: θ' = w - α ∇_w loss(w; rewards η·x).
        let (w0, alpha, gamma_bar) = (0.3, 0.7, 0.9);
        let actions = [0, 1, 0];
        let features = [1.0, -0.5, 2.0];
        let dones = [false, true, false];
        let updated = |eta: f64| -> (f64, f64) {
            let tape = Tape::new();
            let w = tape.leaf(Tensor::vector(vec![w0]));
            let e = tape.leaf(Tensor::vector(vec![eta]));
            let x = tape.constant(Tensor::new(&[3, 1], features.to_vec()));
            let rewards = x.matmul(&e.reshape(&[1, 1])).reshape(&[3]);
            let lp = two_action_log_probs(&w, &actions);
            let loss = policy_loss(&lp, &intrinsic_returns(&rewards, &dones, gamma_bar), &tape.constant(Tensor::zeros(&[3])), 0.0);
            let theta = VarSet::from_vars([("w".to_string(), w)]);
            let next = sgd_step_differentiable(&theta, &loss, alpha).unwrap();
            let d = tape.gradients(&next["w"].sum(), &[&e]).unwrap()[0].item();
            (next["w"].value().item(), d)
        };
        let eta = 0.8;
        let (_, tape_d) = updated(eta);
        let h = 1e-5;
        let fd = (updated(eta + h).0 - updated(eta - h).0) / (2.0 * h);
        assert!((tape_d - fd).abs() / fd.abs().max(1.0) < 1e-5, "{tape_d} vs {fd}");
        // θ' is linear in η: α/L Σ_t (Σ_k γ^(k-t) x_k within the episode) ∂log π(a_t)/∂w.
        let p0 = sigmoid(w0);
        let score = |a: usize| if a == 0 { 1.0 - p0 } else { -p0 };
        let ret = [features[0] + gamma_bar * features[1], features[1], features[2]];
        let hand: f64 = alpha / 3.0 * (0..3).map(|t| ret[t] * score(actions[t])).sum::<f64>();
        assert!((tape_d - hand).abs() < 1e-12, "{tape_d} vs {hand}");
    }

    #[test]
    fn q_learning_converges_on_a_two_state_chain() {
        // s0 -a0-> s1 (0), s0 -a1-> s0 (0.1), s1 -a0-> end (1), s1 -a1-> s0 (0).
        let gamma = 0.9;
        let mut v = [0.0f64; 2];
        for _ in 0..10_000 {
            v = [
                (gamma * v[1]).max(0.1 + gamma * v[0]),
                1.0f64.max(gamma * v[0]),
            ];
        }
        let want = [[gamma * v[1], 0.1 + gamma * v[0]], [1.0, gamma * v[0]]];

        let onehot = |s: &[usize]| {
            let mut m = vec![0.0; s.len() * 2];
            for (i, &x) in s.iter().enumerate() {
                m[i * 2 + x] = 1.0;
            }
            Tensor::new(&[s.len(), 2], m)
        };
        let batch = QBatch {
            observations: onehot(&[0, 0, 1, 1]),
            actions: vec![0, 1, 0, 1],
            rewards: vec![0.0, 0.1, 1.0, 0.0],
            next_observations: onehot(&[1, 0, 0, 0]),
            dones: vec![false, false, true, false],
        };
        fn table<'t>(q: &VarSet<'t>, obs: &Var<'t>) -> Var<'t> {
            obs.matmul(&q["q"])
        }
        let mut q = ParamSet::new();
        q.insert("q", Tensor::zeros(&[2, 2]));
        for _ in 0..5000 {
            q = q_learning_step(&q, &batch, 2.0, gamma, table).unwrap();
        }
        let got = q["q"].data();
        for s in 0..2 {
            for a in 0..2 {
                assert!((got[s * 2 + a] - want[s][a]).abs() < 1e-3, "Q({s},{a}) {} vs {}", got[s * 2 + a], want[s][a]);
            }
        }
    }
}
