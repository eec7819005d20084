//! Finite-difference suite over every differentiable building block, the
//! inner and value losses, LSTM backpropagation through time and the
//! truncated meta-gradient.

use std::cell::RefCell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{conv2d, pad2d, ParamSet, Tape, Tensor, Var, VarSet};
use crate::env::{sample_task, ActionMode, Env, EnvPreset};
use crate::error::Result;
use crate::gradcheck::{compare, numerical_gradient, GradCheckReport};
use crate::inner::{self, InnerConfig};
use crate::meta::{self, LifetimeStream, MetaConfig, TrainSetup};
use crate::nets::{self, Arch, RecurrentState, RewardInput, StepFeatures};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const RECURRENT_TOLERANCE: f64 = 1e-5;
pub const META_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

/// One named comparison and the bound it must stay under.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SuiteOptions {
    /// Perturb every analytic gradient before comparing; every check
    /// should then fail.
    pub corrupt: bool,
}

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn spoil(g: ParamSet, opts: SuiteOptions) -> ParamSet {
    if opts.corrupt {
        g.map(|_, t| t.map(|x| x + 1e-2))
    } else {
        g
    }
}

/// Gradient of `f` by the tape against central differences.
pub fn check_scalar_fn<F>(params: &ParamSet, opts: SuiteOptions, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&VarSet<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let vars = params.leaves(&tape);
    let analytic = spoil(vars.gradients(&f(&vars))?, opts);
    let numeric = numerical_gradient(params, FD_STEP, |p| {
        let t = Tape::inference();
        f(&p.constants(&t)).item()
    });
    Ok(compare(&analytic, &numeric))
}

/// Check the derivative of `⟨∇f, v⟩`, exercising gradients of gradients.
pub fn check_second_order<F>(params: &ParamSet, direction: &ParamSet, opts: SuiteOptions, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&VarSet<'t>) -> Var<'t>,
{
    let directional = |p: &ParamSet| -> Result<f64> {
        let tape = Tape::new();
        let vars = p.leaves(&tape);
        let g = vars.gradients(&f(&vars))?;
        Ok(g.iter()
            .map(|(k, t)| t.data().iter().zip(direction[k].data()).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    };
    let tape = Tape::new();
    let vars = params.leaves(&tape);
    let g = vars.gradients_graph(&f(&vars))?;
    let mut dot = tape.scalar(0.0);
    for (k, gv) in g.iter() {
        let v = tape.constant(direction[k].clone());
        dot = dot.add(&gv.mul(&v).sum());
    }
    // A gradient that does not depend on the parameters has zero derivative.
    let second = if dot.is_tracked() {
        vars.gradients(&dot)?
    } else {
        params.zeros_like()
    };
    let analytic = spoil(second, opts);
    let failure = RefCell::new(None);
    let numeric = numerical_gradient(params, FD_STEP, |p| match directional(p) {
        Ok(x) => x,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(compare(&analytic, &numeric))
}

type Objective = for<'t> fn(&VarSet<'t>) -> Var<'t>;

/// Each primitive is projected onto a fixed random direction so every
/// output entry contributes to the scalar.
fn project<'t>(y: &Var<'t>, seed: u64) -> Var<'t> {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let c = y.tape().constant(random(&mut rng, y.shape()));
    y.mul(&c).sum()
}

fn matmul<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].matmul(&p["b"]), 1)
}
fn matmul_transposed<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].matmul_t(&p["b"], true, true), 2)
}
fn conv<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&conv2d(&pad2d(&p["x"], 1), &p["k"], &p["b"]), 3)
}
fn add<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].add(&p["b"]), 4)
}
fn mul<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].mul(&p["b"]), 5)
}
fn relu<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].relu(), 6)
}
fn sigmoid<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].sigmoid(), 7)
}
fn tanh<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].tanh(), 8)
}
fn arctan<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].scale(3.0).atan(), 9)
}
fn exp<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].exp(), 10)
}
fn log_softmax<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].scale(4.0).log_softmax(), 11)
}
fn sum<'t>(p: &VarSet<'t>) -> Var<'t> {
    p["a"].mul(&p["a"]).sum()
}
fn mean<'t>(p: &VarSet<'t>) -> Var<'t> {
    p["a"].mul(&p["a"]).mean()
}
fn scale<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].scale(-2.5), 12)
}
fn index_select<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].index_select(&[2, 0, 3]), 13)
}
fn concat<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].tape().concat(&[&p["a"], &p["b"]]), 14)
}
fn add_row<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].add_row(&p["b"]), 15)
}
fn gather_scatter<'t>(p: &VarSet<'t>) -> Var<'t> {
    let g = p["a"].gather(Arc::new(vec![5, 0, 0, 3]), &[4]);
    project(&g.scatter_add(Arc::new(vec![1, 1, 2, 0]), &[3]), 16)
}
fn recip<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].mul(&p["a"]).affine(1.0, 0.5).recip(), 17)
}
fn transpose_slice<'t>(p: &VarSet<'t>) -> Var<'t> {
    project(&p["a"].transpose().slice_cols(1, 2), 18)
}

type Shapes = Vec<(&'static str, Vec<usize>)>;

fn primitives() -> Vec<(&'static str, Shapes, Objective)> {
    let one = |n: &[usize]| vec![("a", n.to_vec())];
    let two = |a: &[usize], b: &[usize]| vec![("a", a.to_vec()), ("b", b.to_vec())];
    vec![
        ("matmul", two(&[3, 4], &[4, 2]), matmul),
        ("matmul_transposed", two(&[4, 3], &[2, 4]), matmul_transposed),
        ("conv2d", vec![("x", vec![2, 3, 4, 4]), ("k", vec![2, 3, 3, 3]), ("b", vec![2])], conv),
        ("add", two(&[2, 3], &[2, 3]), add),
        ("mul", two(&[2, 3], &[2, 3]), mul),
        ("relu", one(&[3, 3]), relu),
        ("sigmoid", one(&[3, 3]), sigmoid),
        ("tanh", one(&[3, 3]), tanh),
        ("arctan", one(&[3, 3]), arctan),
        ("exp", one(&[3, 3]), exp),
        ("log_softmax", one(&[3, 5]), log_softmax),
        ("sum", one(&[2, 5]), sum),
        ("mean", one(&[2, 5]), mean),
        ("scale", one(&[4]), scale),
        ("index_select", one(&[3, 4]), index_select),
        ("concat", two(&[2, 3], &[2, 2]), concat),
        ("add_row", two(&[3, 4], &[4]), add_row),
        ("gather_scatter", one(&[6]), gather_scatter),
        ("recip", one(&[4]), recip),
        ("transpose_slice", one(&[3, 4]), transpose_slice),
    ]
}

fn params_for(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes.iter().map(|(n, s)| (n.to_string(), random(&mut rng, s))).collect()
}

/// Replace every entry (biases included) with a fresh draw so no unit
/// sits exactly on a ReLU kink.
fn jitter(params: ParamSet, rng: &mut impl Rng) -> ParamSet {
    params.map(|_, t| random(rng, t.shape()).map(|x| 0.5 * x))
}

fn small_arch(preset: &EnvPreset) -> Arch {
    Arch {
        obs_shape: preset.observation_shape(),
        num_actions: 4,
        conv_filters: 4,
        hidden: 4,
        lstm: 4,
    }
}

fn rollout(preset: &EnvPreset, steps: usize, seed: u64) -> Vec<StepFeatures> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(sample_task(preset, &mut rng));
    let mut feats = vec![StepFeatures::lifetime_start(env.observation())];
    let w = inner::collect_with(&mut env, ActionMode::Standard, steps - 1, |_| rng.random_range(0..4));
    feats.extend(w.features());
    feats
}

/// Run every check. The tiny scale keeps the whole suite to a few seconds.
pub fn run_suite(opts: SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, (name, shapes, f)) in primitives().into_iter().enumerate() {
        let params = params_for(&shapes, i as u64);
        let report = check_scalar_fn(&params, opts, f)?;
        out.push(CheckResult {
            name: format!("primitive {name}"),
            tolerance: PRIMITIVE_TOLERANCE,
            report,
        });
        if name != "relu" {
            let direction = params_for(&shapes, 100 + i as u64);
            let report = check_second_order(&params, &direction, opts, f)?;
            out.push(CheckResult {
                name: format!("second-order {name}"),
                tolerance: PRIMITIVE_TOLERANCE,
                report,
            });
        }
    }

    let preset = EnvPreset::by_name("tiny_abc").expect("tiny preset");
    let arch = small_arch(&preset);
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Policy loss on a collected window with fixed returns.
    let theta = jitter(nets::init_policy(&mut rng, &arch), &mut rng);
    let mut env = Env::new(sample_task(&preset, &mut rng));
    let window = inner::collect_window(&theta, &mut env, ActionMode::Standard, 4, &mut rng);
    let returns = random(&mut rng, &[window.len()]);
    let report = check_scalar_fn(&theta, opts, |p| {
        let (lp, h) = inner::policy_terms(p, &window);
        let g = p["head.w"].tape().constant(returns.clone());
        inner::policy_loss(&lp, &g, &h, 0.01)
    })?;
    out.push(CheckResult {
        name: "policy loss".into(),
        tolerance: PRIMITIVE_TOLERANCE,
        report,
    });

    // Six-step LSTM through the reward network.
    let feats = rollout(&preset, 6, 3);
    let eta = jitter(nets::init_reward(&mut rng, &arch, RewardInput::Lstm), &mut rng);
    let report = check_scalar_fn(&eta, opts, |p| {
        let tape = p["head.w"].tape();
        let (r, _) = nets::reward_sequence(p, &feats, RecurrentState::zeros(arch.lstm).on_tape(tape));
        let w = tape.constant(Tensor::vector((0..r.shape()[0]).map(|i| 1.0 - 0.3 * i as f64).collect()));
        r.mul(&w).sum()
    })?;
    out.push(CheckResult {
        name: "lstm bptt (6 steps)".into(),
        tolerance: RECURRENT_TOLERANCE,
        report,
    });

    // Value loss against fixed targets.
    let phi = jitter(nets::init_value(&mut rng, &arch), &mut rng);
    let targets: Vec<f64> = (0..feats.len()).map(|i| 0.5 - 0.2 * i as f64).collect();
    let report = check_scalar_fn(&phi, opts, |p| {
        let tape = p["head.w"].tape();
        let (v, _) = nets::value_sequence(p, &feats, RecurrentState::zeros(arch.lstm).on_tape(tape));
        meta::value_loss(&v, &targets)
    })?;
    out.push(CheckResult {
        name: "value loss".into(),
        tolerance: RECURRENT_TOLERANCE,
        report,
    });

    for input in [RewardInput::Lstm, RewardInput::FeedForward] {
        out.push(CheckResult {
            name: format!("meta-gradient ({input} reward)"),
            tolerance: META_TOLERANCE,
            report: meta_gradient_check(input, 5, opts)?,
        });
    }
    Ok(out)
}

/// The configuration of the cardinal meta-gradient check: a 3×3 room, two
/// episodes of at most five steps, two inner updates, widths 4.
pub fn tiny_meta_setup(input: RewardInput) -> TrainSetup {
    let preset = EnvPreset::by_name("tiny_abc").expect("tiny preset");
    TrainSetup {
        arch: small_arch(&preset),
        preset,
        inner: InnerConfig {
            unroll: 3,
            ..InnerConfig::default()
        },
        meta: MetaConfig {
            outer_unroll: 2,
            batch_lifetimes: 1,
            reward_input: input,
            ..MetaConfig::default()
        },
    }
}

/// Tape meta-gradient of one outer step against central differences of the
/// replayed meta-loss over every η entry.
pub fn meta_gradient_check(input: RewardInput, seed: u64, opts: SuiteOptions) -> Result<GradCheckReport> {
    let setup = tiny_meta_setup(input);
    let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let eta = nets::init_reward(&mut init, &setup.arch, input);
    let phi = nets::init_value(&mut init, &setup.arch);
    let mut stream = LifetimeStream::new(&setup, seed, 0);
    let out = meta::outer_step(&mut stream, &eta, &phi, &setup, seed)?;
    let rec = &out.record;
    let failure = RefCell::new(None);
    let numeric = numerical_gradient(&eta, FD_STEP, |e| {
        match meta::replay_meta_loss(e, &rec.theta0, &rec.reward, input, setup.inner, &rec.windows, &rec.coefficients) {
            Ok(x) => x,
            Err(err) => {
                failure.borrow_mut().get_or_insert(err);
                f64::NAN
            }
        }
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(compare(&spoil(out.eta_grad, opts), &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_corruption_fails() {
        let results = run_suite(SuiteOptions::default()).unwrap();
        for r in &results {
            assert!(r.passed(), "{} {:?}", r.name, r.report);
        }
        let corrupted = run_suite(SuiteOptions { corrupt: true }).unwrap();
        assert!(corrupted.iter().all(|r| !r.passed()));
    }
}
