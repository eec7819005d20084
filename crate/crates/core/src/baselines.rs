//! Reference learners and oracles: extrinsic-reward agents, a count-based
//! exploration bonus and the hand-designed Random ABC heuristic.

use std::collections::HashMap;

use rand::Rng;

use crate::env::{self, Action, DomainId, Env, Object, TaskSpec};
use crate::error::{Error, Result};
use crate::inner::InnerConfig;

/// Default scale of the count bonus.
pub const COUNT_BETA: f64 = 0.1;

/// Discount used by the lifetime-return baseline.
pub const LIFETIME_GAMMA: f64 = 0.99;

/// Per-lifetime visit counts keyed by [`env::EnvState::state_key`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisitCounts {
    counts: HashMap<u64, u64>,
}

impl VisitCounts {
    pub fn new() -> Self {
        VisitCounts::default()
    }

    pub fn count(&self, key: u64) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    /// Record a visit and return `β / √count`, counting this visit.
    pub fn bonus(&mut self, key: u64, beta: f64) -> f64 {
        let c = self.counts.entry(key).or_insert(0);
        *c += 1;
        count_bonus(*c, beta)
    }
}

/// `β / √max(1, count)`.
pub fn count_bonus(count: u64, beta: f64) -> f64 {
    beta / (count.max(1) as f64).sqrt()
}

/// How a learner turns per-step rewards into returns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnSpec {
    pub gamma: f64,
    /// Cut returns at episode ends.
    pub reset_at_done: bool,
}

/// Episodic returns with the inner discount.
pub fn extrinsic_ep_config(inner: &InnerConfig) -> ReturnSpec {
    ReturnSpec {
        gamma: inner.gamma_bar,
        reset_at_done: true,
    }
}

/// Returns that run across episode boundaries within a window.
pub fn extrinsic_life_config() -> ReturnSpec {
    ReturnSpec {
        gamma: LIFETIME_GAMMA,
        reset_at_done: false,
    }
}

/// What the heuristic has learned about the current task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeuristicState {
    pub episode_index: usize,
    pub reward_a: Option<f64>,
    pub reward_c: Option<f64>,
}

impl HeuristicState {
    /// Object pursued this episode: A, then C, then whichever paid more
    /// (A on ties).
    pub fn target(&self) -> Object {
        match self.episode_index {
            0 => Object::A,
            1 => Object::C,
            _ => match (self.reward_a, self.reward_c) {
                (Some(a), Some(c)) if c > a => Object::C,
                (None, Some(_)) => Object::C,
                _ => Object::A,
            },
        }
    }

    /// Remember what reaching `object` paid.
    pub fn observe(&mut self, object: Object, reward: f64) {
        match object {
            Object::A => self.reward_a = Some(reward),
            Object::C => self.reward_c = Some(reward),
            _ => {}
        }
    }
}

/// Next move along a shortest path to the current target that steps around
/// every other object.
pub fn heuristic_policy(task: &TaskSpec, state: &env::EnvState, memory: &HeuristicState) -> Result<Action> {
    if task.domain != DomainId::RandomAbc {
        return Err(Error::Unsupported(format!("heuristic policy on {}", task.domain)));
    }
    let target = memory.target();
    let goal = state.object_cells[&target];
    let avoid: Vec<_> = state
        .object_cells
        .iter()
        .filter(|(o, _)| **o != target)
        .map(|(_, &c)| c)
        .collect();
    let path = task.layout.shortest_path(state.agent_cell, goal, &Action::BASE, &avoid)?;
    Ok(path.first_action.unwrap_or(Action::Up))
}

/// Play one lifetime with the heuristic, returning per-episode returns.
pub fn run_heuristic_lifetime(task: &TaskSpec) -> Result<Vec<f64>> {
    let mut env = Env::new(task.clone());
    let mut memory = HeuristicState::default();
    let mut returns = Vec::with_capacity(task.episodes_per_lifetime);
    let mut episode = 0.0;
    loop {
        let action = heuristic_policy(task, env.state(), &memory)?;
        let target = memory.target();
        let r = env.step(action);
        episode += r.extrinsic_reward;
        if env.state().agent_cell == env.state().object_cells[&target] {
            memory.observe(target, r.extrinsic_reward);
        }
        if r.episode_done {
            returns.push(episode);
            episode = 0.0;
            if r.lifetime_done {
                return Ok(returns);
            }
            env.next_episode();
            memory.episode_index += 1;
        }
    }
}

/// Uniform reward intervals of the Random ABC task distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbcIntervals {
    pub a: (f64, f64),
    pub c: (f64, f64),
}

impl Default for AbcIntervals {
    fn default() -> Self {
        AbcIntervals {
            a: (-1.0, 1.0),
            c: (0.0, 0.5),
        }
    }
}

/// A Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            std_err: (var / n).sqrt(),
            samples: xs.len(),
        }
    }

    /// Two-sided interval at `z` standard errors.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.std_err, self.mean + z * self.std_err)
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Expected undiscounted lifetime return of the heuristic,
/// `E[r_A] + E[r_C] + (episodes − 2)·E[max(r_A, r_C)]`, by sampling.
pub fn heuristic_expected_lifetime_return(
    intervals: AbcIntervals,
    episodes: usize,
    samples: usize,
    rng: &mut impl Rng,
) -> Estimate {
    let tail = episodes.saturating_sub(2) as f64;
    let xs: Vec<f64> = (0..samples)
        .map(|_| {
            let a = draw(rng, intervals.a);
            let c = draw(rng, intervals.c);
            match episodes {
                0 => 0.0,
                1 => a,
                _ => a + c + tail * a.max(c),
            }
        })
        .collect();
    Estimate::from_samples(&xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_task, EnvPreset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bonus_examples() {
        assert_eq!(count_bonus(0, 0.1), 0.1);
        assert_eq!(count_bonus(1, 0.1), 0.1);
        assert_eq!(count_bonus(4, 0.1), 0.05);
        let mut v = VisitCounts::new();
        assert_eq!(v.bonus(7, 0.1), 0.1);
        assert_eq!(v.count(7), 1);
        assert!(v.bonus(7, 0.1) < 0.1);
    }

    #[test]
    fn heuristic_targets() {
        let mut m = HeuristicState::default();
        assert_eq!(m.target(), Object::A);
        m.episode_index = 1;
        assert_eq!(m.target(), Object::C);
        m.episode_index = 5;
        m.observe(Object::A, 0.2);
        m.observe(Object::C, 0.1);
        assert_eq!(m.target(), Object::A);
        m.observe(Object::C, 0.2);
        assert_eq!(m.target(), Object::A);
        m.observe(Object::C, 0.3);
        assert_eq!(m.target(), Object::C);
    }

    #[test]
    fn heuristic_rejects_other_domains() {
        let task = sample_task(&EnvPreset::by_name("fixed_abc").unwrap(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(run_heuristic_lifetime(&task).is_err());
    }

    #[test]
    fn heuristic_lifetime_matches_formula() {
        let preset = EnvPreset::by_name("random_abc").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let task = sample_task(&preset, &mut rng);
            let a = task.object_rewards[&Object::A];
            let c = task.object_rewards[&Object::C];
            let returns = run_heuristic_lifetime(&task).unwrap();
            assert_eq!(returns.len(), 50);
            let total: f64 = returns.iter().sum();
            let expected = a + c + 48.0 * a.max(c);
            assert!((total - expected).abs() < 1e-9, "{total} vs {expected}");
        }
    }

    #[test]
    fn degenerate_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fixed = AbcIntervals {
            a: (1.0, 1.0),
            c: (0.0, 0.0),
        };
        let e = heuristic_expected_lifetime_return(fixed, 50, 10, &mut rng);
        assert_eq!(e.mean, 49.0);
        assert_eq!(e.std_err, 0.0);
        let e = heuristic_expected_lifetime_return(fixed, 2, 10, &mut rng);
        assert_eq!(e.mean, 1.0);
    }

    #[test]
    fn oracle_matches_closed_form() {
        // E[max(A, c)] = (1 + c)²/4 for A ~ U[-1, 1], c in [0, 1]; averaging
        // over c ~ U[0, 0.5] gives 2.375/6. With E[A] = 0, E[C] = 0.25:
        let exact = 0.25 + 48.0 * 2.375 / 6.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = heuristic_expected_lifetime_return(AbcIntervals::default(), 50, 200_000, &mut rng);
        assert!((e.mean - exact).abs() < 4.0 * e.std_err, "{e:?} vs {exact}");
    }
}
