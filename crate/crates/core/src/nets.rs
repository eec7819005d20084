//! Policy, intrinsic-reward and lifetime-value networks.
//!
//! All three share a Conv-FC trunk over the grid observation. The reward and
//! value networks append the previous action, extrinsic reward and done flag
//! to the embedding and feed the result through an LSTM that runs over the
//! whole lifetime; episode boundaries do not reset it.

use rand::Rng;

use crate::autodiff::{conv2d, pad2d, ParamSet, Tape, Tensor, Var, VarSet};
use crate::env::{Action, Observation};

/// Width of the action part of [`StepFeatures`].
pub const ACTION_FEATURES: usize = 4;

/// Network sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arch {
    /// `[channels, height, width]`.
    pub obs_shape: [usize; 3],
    pub num_actions: usize,
    pub conv_filters: usize,
    pub hidden: usize,
    pub lstm: usize,
}

impl Arch {
    /// Conv(16)-FC(64) trunk with an LSTM(64).
    pub fn standard(obs_shape: [usize; 3], num_actions: usize) -> Self {
        Arch {
            obs_shape,
            num_actions,
            conv_filters: 16,
            hidden: 64,
            lstm: 64,
        }
    }

    fn flat(&self) -> usize {
        self.conv_filters * self.obs_shape[1] * self.obs_shape[2]
    }

    /// Input width of the recurrent core.
    pub fn history_width(&self) -> usize {
        self.hidden + ACTION_FEATURES + 2
    }
}

/// Which intrinsic-reward network to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RewardInput {
    /// Recurrent over the lifetime history.
    #[default]
    Lstm,
    /// Current step only.
    FeedForward,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
}

fn trunk_params(p: &mut ParamSet, rng: &mut impl Rng, arch: &Arch) {
    let c = arch.obs_shape[0];
    let f = arch.conv_filters;
    p.insert("conv.w", uniform(rng, &[f, c, 3, 3], c * 9));
    p.insert("conv.b", Tensor::zeros(&[f]));
    p.insert("fc.w", uniform(rng, &[arch.flat(), arch.hidden], arch.flat()));
    p.insert("fc.b", Tensor::zeros(&[arch.hidden]));
}

/// Policy parameters θ.
pub fn init_policy(rng: &mut impl Rng, arch: &Arch) -> ParamSet {
    let mut p = ParamSet::new();
    trunk_params(&mut p, rng, arch);
    p.insert("head.w", uniform(rng, &[arch.hidden, arch.num_actions], arch.hidden));
    p.insert("head.b", Tensor::zeros(&[arch.num_actions]));
    p
}

fn init_recurrent(rng: &mut impl Rng, arch: &Arch) -> ParamSet {
    let mut p = ParamSet::new();
    trunk_params(&mut p, rng, arch);
    let (x, h) = (arch.history_width(), arch.lstm);
    p.insert("lstm.wx", uniform(rng, &[x, 4 * h], x));
    p.insert("lstm.wh", uniform(rng, &[h, 4 * h], h));
    p.insert("lstm.b", Tensor::zeros(&[4 * h]));
    p.insert("head.w", uniform(rng, &[h, 1], h));
    p.insert("head.b", Tensor::zeros(&[1]));
    p
}

/// Intrinsic reward parameters η.
pub fn init_reward(rng: &mut impl Rng, arch: &Arch, input: RewardInput) -> ParamSet {
    match input {
        RewardInput::Lstm => init_recurrent(rng, arch),
        RewardInput::FeedForward => {
            let mut p = ParamSet::new();
            trunk_params(&mut p, rng, arch);
            let x = arch.history_width();
            p.insert("mlp.w", uniform(rng, &[x, arch.hidden], x));
            p.insert("mlp.b", Tensor::zeros(&[arch.hidden]));
            p.insert("head.w", uniform(rng, &[arch.hidden, 1], arch.hidden));
            p.insert("head.b", Tensor::zeros(&[1]));
            p
        }
    }
}

/// Lifetime value parameters φ.
pub fn init_value(rng: &mut impl Rng, arch: &Arch) -> ParamSet {
    init_recurrent(rng, arch)
}

/// Infer the architecture a parameter set was built for.
pub fn arch_of(params: &ParamSet, obs_shape: [usize; 3]) -> Option<Arch> {
    let conv = params.get("conv.w")?.shape().to_vec();
    let fc = params.get("fc.w")?.shape().to_vec();
    let head = params.get("head.w")?.shape().to_vec();
    let lstm = params.get("lstm.wh").map(|t| t.shape()[0]).unwrap_or(0);
    Some(Arch {
        obs_shape,
        num_actions: head[1],
        conv_filters: conv[0],
        hidden: fc[1],
        lstm,
    })
}

/// Stack observations into `[B, C, H, W]`.
pub fn stack_observations(obs: &[&Tensor]) -> Tensor {
    assert!(!obs.is_empty(), "no observations to stack");
    let shape = obs[0].shape();
    let mut data = Vec::with_capacity(obs.len() * obs[0].len());
    for o in obs {
        assert_eq!(o.shape(), shape, "observation shapes differ");
        data.extend_from_slice(o.data());
    }
    let mut full = vec![obs.len()];
    full.extend_from_slice(shape);
    Tensor::new(&full, data)
}

/// Conv-FC trunk: `[B, C, H, W] -> [B, hidden]`.
pub fn embed<'t>(p: &VarSet<'t>, obs: &Var<'t>) -> Var<'t> {
    let b = obs.shape()[0];
    let conv = conv2d(&pad2d(obs, 1), &p["conv.w"], &p["conv.b"]).relu();
    let flat = conv.reshape(&[b, conv.value().len() / b]);
    flat.matmul(&p["fc.w"]).add_row(&p["fc.b"]).relu()
}

/// Action logits `[B, A]`.
pub fn policy_logits<'t>(theta: &VarSet<'t>, obs: &Var<'t>) -> Var<'t> {
    embed(theta, obs)
        .matmul(&theta["head.w"])
        .add_row(&theta["head.b"])
}

/// Row-wise entropy of a log-softmax matrix.
pub fn entropy_of<'t>(log_probs: &Var<'t>) -> Var<'t> {
    log_probs.exp().mul(log_probs).sum_cols().neg()
}

/// A sampled action with its tape-tracked log-probability and entropy.
#[derive(Clone, Debug)]
pub struct Sampled<'t> {
    pub action: usize,
    pub log_prob: Var<'t>,
    pub entropy: Var<'t>,
}

/// Sample an index from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draw from `softmax(logits)` for a single logits vector `[A]`.
pub fn sample_action<'t>(logits: &Var<'t>, rng: &mut impl Rng) -> Sampled<'t> {
    let lsm = logits.log_softmax();
    let probs: Vec<f64> = lsm.value().data().iter().map(|x| x.exp()).collect();
    let action = sample_index(&probs, rng);
    let lsm_row = lsm.reshape(&[1, probs.len()]);
    Sampled {
        action,
        log_prob: lsm_row.index_select(&[action]).sum(),
        entropy: entropy_of(&lsm_row).sum(),
    }
}

/// One element of the lifetime history, observed after a transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFeatures {
    /// Observation after the move.
    pub observation: Tensor,
    /// Encoding of the executed move; all zero at lifetime start.
    pub action: [f64; ACTION_FEATURES],
    pub reward: f64,
    pub done: f64,
}

impl StepFeatures {
    /// The first history element: the initial observation, nothing else.
    pub fn lifetime_start(observation: &Observation) -> Self {
        StepFeatures {
            observation: observation.grid.clone(),
            action: [0.0; ACTION_FEATURES],
            reward: 0.0,
            done: 0.0,
        }
    }

    pub fn transition(observation: &Observation, executed: Action, reward: f64, done: bool) -> Self {
        StepFeatures {
            observation: observation.grid.clone(),
            action: executed.base_encoding(),
            reward,
            done: if done { 1.0 } else { 0.0 },
        }
    }
}

/// LSTM hidden and cell vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl RecurrentState {
    pub fn zeros(width: usize) -> Self {
        RecurrentState {
            hidden: Tensor::zeros(&[width]),
            cell: Tensor::zeros(&[width]),
        }
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape) -> RecurrentVars<'t> {
        RecurrentVars {
            hidden: tape.constant(self.hidden.clone()),
            cell: tape.constant(self.cell.clone()),
        }
    }
}

/// Recurrent state inside a graph.
#[derive(Clone, Debug)]
pub struct RecurrentVars<'t> {
    pub hidden: Var<'t>,
    pub cell: Var<'t>,
}

impl RecurrentVars<'_> {
    pub fn values(&self) -> RecurrentState {
        RecurrentState {
            hidden: self.hidden.value().clone(),
            cell: self.cell.value().clone(),
        }
    }
}

/// History inputs `[T, hidden + 6]` for a run of features.
pub fn history_inputs<'t>(p: &VarSet<'t>, features: &[StepFeatures]) -> Var<'t> {
    let tape = p["fc.w"].tape();
    let obs: Vec<&Tensor> = features.iter().map(|f| &f.observation).collect();
    let emb = embed(p, &tape.constant(stack_observations(&obs)));
    let extra: Vec<f64> = features
        .iter()
        .flat_map(|f| f.action.iter().copied().chain([f.reward, f.done]))
        .collect();
    let extra = tape.constant(Tensor::new(&[features.len(), ACTION_FEATURES + 2], extra));
    tape.concat(&[&emb, &extra])
}

/// Run the LSTM over the rows of `inputs`, returning `[T, width]` outputs.
pub fn lstm_sequence<'t>(p: &VarSet<'t>, inputs: &Var<'t>, state: RecurrentVars<'t>) -> (Var<'t>, RecurrentVars<'t>) {
    let tape = inputs.tape();
    let steps = inputs.shape()[0];
    let width = p["lstm.wh"].shape()[0];
    let pre = inputs.matmul(&p["lstm.wx"]).add_row(&p["lstm.b"]);
    let mut h = state.hidden;
    let mut c = state.cell;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let z = pre
            .row(t)
            .add(&h.reshape(&[1, width]).matmul(&p["lstm.wh"]).reshape(&[4 * width]));
        let i = z.slice_cols(0, width).sigmoid();
        let f = z.slice_cols(width, width).sigmoid();
        let g = z.slice_cols(2 * width, width).tanh();
        let o = z.slice_cols(3 * width, width).sigmoid();
        c = f.mul(&c).add(&i.mul(&g));
        h = o.mul(&c.tanh());
        outs.push(h.clone());
    }
    let refs: Vec<&Var<'t>> = outs.iter().collect();
    let stacked = tape.concat(&refs).reshape(&[steps, width]);
    (stacked, RecurrentVars { hidden: h, cell: c })
}

fn scalar_head<'t>(p: &VarSet<'t>, h: &Var<'t>) -> Var<'t> {
    let steps = h.shape()[0];
    h.matmul(&p["head.w"]).add_row(&p["head.b"]).reshape(&[steps])
}

/// Intrinsic rewards `arctan(head(lstm))` for each feature, in order.
pub fn reward_sequence<'t>(
    eta: &VarSet<'t>,
    features: &[StepFeatures],
    state: RecurrentVars<'t>,
) -> (Var<'t>, RecurrentVars<'t>) {
    let x = history_inputs(eta, features);
    let (h, state) = lstm_sequence(eta, &x, state);
    (scalar_head(eta, &h).atan(), state)
}

/// Lifetime value estimates for each feature, in order.
pub fn value_sequence<'t>(
    phi: &VarSet<'t>,
    features: &[StepFeatures],
    state: RecurrentVars<'t>,
) -> (Var<'t>, RecurrentVars<'t>) {
    let x = history_inputs(phi, features);
    let (h, state) = lstm_sequence(phi, &x, state);
    (scalar_head(phi, &h), state)
}

/// Stateless intrinsic rewards from each feature alone.
pub fn feed_forward_rewards<'t>(eta: &VarSet<'t>, features: &[StepFeatures]) -> Var<'t> {
    let x = history_inputs(eta, features);
    let h = x.matmul(&eta["mlp.w"]).add_row(&eta["mlp.b"]).relu();
    scalar_head(eta, &h).atan()
}

/// Single-step reward evaluation.
pub fn reward_forward(eta: &ParamSet, features: &StepFeatures, state: &RecurrentState) -> (f64, RecurrentState) {
    let tape = Tape::inference();
    let p = eta.constants(&tape);
    let (r, s) = reward_sequence(&p, std::slice::from_ref(features), state.on_tape(&tape));
    (r.item(), s.values())
}

/// Single-step value evaluation.
pub fn value_forward(phi: &ParamSet, features: &StepFeatures, state: &RecurrentState) -> (f64, RecurrentState) {
    let tape = Tape::inference();
    let p = phi.constants(&tape);
    let (v, s) = value_sequence(&p, std::slice::from_ref(features), state.on_tape(&tape));
    (v.item(), s.values())
}

/// Stateless single-step reward.
pub fn feed_forward_reward_forward(eta: &ParamSet, features: &StepFeatures) -> f64 {
    let tape = Tape::inference();
    feed_forward_rewards(&eta.constants(&tape), std::slice::from_ref(features)).item()
}

/// Policy probabilities for one observation, without recording anything.
pub fn policy_probs(theta: &ParamSet, obs: &Tensor) -> Vec<f64> {
    let tape = Tape::inference();
    let p = theta.constants(&tape);
    let x = tape.constant(stack_observations(&[obs]));
    policy_logits(&p, &x)
        .softmax()
        .value()
        .data()
        .to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Arch {
        Arch {
            obs_shape: [7, 3, 3],
            num_actions: 4,
            conv_filters: 2,
            hidden: 5,
            lstm: 3,
        }
    }

    fn features(seed: u64) -> StepFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StepFeatures {
            observation: Tensor::new(&[7, 3, 3], (0..63).map(|_| rng.random_range(0.0..1.0)).collect()),
            action: Action::Down.base_encoding(),
            reward: 0.5,
            done: 0.0,
        }
    }

    #[test]
    fn init_draws_differ_and_biases_are_zero() {
        let a = init_policy(&mut ChaCha8Rng::seed_from_u64(1), &small());
        let b = init_policy(&mut ChaCha8Rng::seed_from_u64(2), &small());
        assert_ne!(a, b);
        assert!(a.all_finite());
        for (name, t) in a.iter() {
            if name.ends_with(".b") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn zero_policy_is_uniform() {
        let arch = small();
        let theta = init_policy(&mut ChaCha8Rng::seed_from_u64(1), &arch).zeros_like();
        let probs = policy_probs(&theta, &features(0).observation);
        for p in &probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
        let h: f64 = -probs.iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((h - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_dominates() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::vector(vec![40.0, 0.0, 0.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_action(&logits, &mut rng);
        assert!(s.log_prob.item().exp() >= 1.0 - 1e-9);
        let uniform = tape.constant(Tensor::vector(vec![0.0; 4]));
        let s = sample_action(&uniform, &mut rng);
        assert!((s.entropy.item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reward_is_bounded_and_head_bias_passes_through() {
        let arch = small();
        let eta = init_reward(&mut ChaCha8Rng::seed_from_u64(3), &arch, RewardInput::Lstm);
        let (r, _) = reward_forward(&eta, &features(1), &RecurrentState::zeros(arch.lstm));
        assert!(r.abs() < std::f64::consts::FRAC_PI_2);
        let eta0 = eta.map(|k, t| match k {
            "head.w" => Tensor::zeros(t.shape()),
            "head.b" => Tensor::vector(vec![0.7]),
            _ => t.clone(),
        });
        let (r, _) = reward_forward(&eta0, &features(1), &RecurrentState::zeros(arch.lstm));
        assert!((r - 0.7f64.atan()).abs() < 1e-15);
    }

    #[test]
    fn zero_value_params_give_zero() {
        let arch = small();
        let phi = init_value(&mut ChaCha8Rng::seed_from_u64(3), &arch).zeros_like();
        let (v, _) = value_forward(&phi, &features(2), &RecurrentState::zeros(arch.lstm));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn history_carries_across_steps() {
        let arch = small();
        let eta = init_reward(&mut ChaCha8Rng::seed_from_u64(4), &arch, RewardInput::Lstm);
        let f = features(5);
        let s0 = RecurrentState::zeros(arch.lstm);
        let (r1, s1) = reward_forward(&eta, &f, &s0);
        let (r2, _) = reward_forward(&eta, &f, &s1);
        assert_ne!(r1, r2);
        let (r1_again, _) = reward_forward(&eta, &f, &RecurrentState::zeros(arch.lstm));
        assert_eq!(r1, r1_again);
    }

    #[test]
    fn feed_forward_reward_ignores_history() {
        let arch = small();
        let eta = init_reward(&mut ChaCha8Rng::seed_from_u64(6), &arch, RewardInput::FeedForward);
        let a = feed_forward_reward_forward(&eta, &features(7));
        let _ = feed_forward_reward_forward(&eta, &features(8));
        let b = feed_forward_reward_forward(&eta, &features(7));
        assert_eq!(a, b);
        assert!(a.abs() < std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn init_weights_have_zero_mean() {
        let arch = small();
        let draws: Vec<ParamSet> = (0..1000)
            .map(|s| init_policy(&mut ChaCha8Rng::seed_from_u64(s), &arch))
            .collect();
        for (name, index) in [("conv.w", 0), ("fc.w", 7), ("head.w", 3)] {
            let xs: Vec<f64> = draws.iter().map(|p| p[name].data()[index]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 3.0 * (var / n).sqrt(), "{name}[{index}] mean {mean}");
        }
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let tape = Tape::inference();
        let logits = tape.constant(Tensor::zeros(&[4]));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_action(&logits, &mut rng).action] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }
}
