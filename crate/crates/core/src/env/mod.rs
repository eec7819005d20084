//! Gridworld task distributions with lifetime/episode semantics.
//!
//! A lifetime is a fixed number of episodes on one sampled [`TaskSpec`]. The
//! environment itself never learns anything: it only places entities, moves
//! the agent and pays out extrinsic reward.

mod action;
mod grid;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

pub use action::{Action, ActionMode};
pub use grid::{Cell, Layout, PathStep};

/// Observation planes.
pub mod channel {
    pub const AGENT: usize = 0;
    pub const WALL: usize = 1;
    pub const A: usize = 2;
    pub const B: usize = 3;
    pub const C: usize = 4;
    pub const KEY: usize = 5;
    pub const CARRIED_KEY: usize = 6;
    pub const COUNT: usize = 7;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Object {
    A,
    B,
    C,
    Key,
    /// Invisible goal of Empty Rooms.
    Goal,
}

impl Object {
    fn channel(self) -> Option<usize> {
        match self {
            Object::A => Some(channel::A),
            Object::B => Some(channel::B),
            Object::C => Some(channel::C),
            Object::Key => Some(channel::KEY),
            Object::Goal => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DomainId {
    EmptyRooms,
    FixedAbc,
    RandomAbc,
    NonstationaryAbc,
    KeyBox,
}

impl DomainId {
    pub fn is_abc(self) -> bool {
        matches!(
            self,
            DomainId::FixedAbc | DomainId::RandomAbc | DomainId::NonstationaryAbc
        )
    }
}

/// Room geometry of a preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoomShape {
    /// One open room.
    Single { height: usize, width: usize },
    /// Four square rooms joined by doors.
    FourRooms { room: usize },
}

/// Everything needed to sample tasks from one distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvPreset {
    pub name: String,
    pub domain: DomainId,
    pub shape: RoomShape,
    pub time_limit: usize,
    pub episodes: usize,
    pub key_reward: f64,
    pub swap_period: usize,
}

impl EnvPreset {
    pub const NAMES: [&'static str; 7] = [
        "empty_rooms",
        "fixed_abc",
        "random_abc",
        "nonstationary_abc",
        "key_box",
        "key_box_long",
        "tiny_abc",
    ];

    pub fn by_name(name: &str) -> Option<EnvPreset> {
        let abc = RoomShape::Single { height: 5, width: 5 };
        let (domain, shape, time_limit, episodes, key_reward) = match name {
            "empty_rooms" => (DomainId::EmptyRooms, RoomShape::FourRooms { room: 5 }, 100, 200, 0.0),
            "fixed_abc" => (DomainId::FixedAbc, abc, 10, 200, 0.0),
            "random_abc" => (DomainId::RandomAbc, abc, 10, 50, 0.0),
            "nonstationary_abc" => (DomainId::NonstationaryAbc, abc, 10, 1000, 0.0),
            "key_box" => (
                DomainId::KeyBox,
                RoomShape::Single { height: 6, width: 6 },
                50,
                200,
                -0.1,
            ),
            "key_box_long" => (
                DomainId::KeyBox,
                RoomShape::Single { height: 6, width: 6 },
                100,
                5000,
                0.0,
            ),
            // Gradient-check scale: 3x3 room, two short episodes.
            "tiny_abc" => (
                DomainId::FixedAbc,
                RoomShape::Single { height: 3, width: 3 },
                5,
                2,
                0.0,
            ),
            _ => return None,
        };
        Some(EnvPreset {
            name: name.to_string(),
            domain,
            shape,
            time_limit,
            episodes,
            key_reward,
            swap_period: 250,
        })
    }

    pub fn layout(&self) -> Layout {
        match self.shape {
            RoomShape::Single { height, width } => Layout::open(height, width),
            RoomShape::FourRooms { room } => Layout::four_rooms(room),
        }
    }

    /// Observation shape `[channels, height, width]`.
    pub fn observation_shape(&self) -> [usize; 3] {
        let l = self.layout();
        [channel::COUNT, l.height, l.width]
    }
}

/// One sampled task. Fixed for a whole lifetime.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub domain: DomainId,
    pub object_rewards: BTreeMap<Object, f64>,
    pub goal_cell: Option<Cell>,
    pub swap_period: Option<usize>,
    pub episode_time_limit: usize,
    pub episodes_per_lifetime: usize,
    /// Seeds the per-episode placement stream (Key-Box).
    pub layout_seed: u64,
    pub layout: Layout,
    pub start_cell: Cell,
    /// Entity cells that stay put across episodes.
    pub fixed_cells: BTreeMap<Object, Cell>,
}

fn abc_cells(layout: &Layout) -> (Cell, BTreeMap<Object, Cell>) {
    let (h, w) = (layout.height, layout.width);
    let cells = BTreeMap::from([
        (Object::A, (0, 0)),
        (Object::B, (0, w - 1)),
        (Object::C, (h - 1, w - 1)),
    ]);
    ((h - 1, 0), cells)
}

/// Draw a task from the preset's distribution.
pub fn sample_task(preset: &EnvPreset, rng: &mut impl Rng) -> TaskSpec {
    let layout = preset.layout();
    let layout_seed = rng.random::<u64>();
    let mut task = TaskSpec {
        domain: preset.domain,
        object_rewards: BTreeMap::new(),
        goal_cell: None,
        swap_period: None,
        episode_time_limit: preset.time_limit,
        episodes_per_lifetime: preset.episodes,
        layout_seed,
        start_cell: (0, 0),
        fixed_cells: BTreeMap::new(),
        layout,
    };
    let random_abc = |rng: &mut dyn rand::RngCore| {
        BTreeMap::from([
            (Object::A, rng.random_range(-1.0..=1.0)),
            (Object::B, rng.random_range(-0.5..=0.0)),
            (Object::C, rng.random_range(0.0..=0.5)),
        ])
    };
    match preset.domain {
        DomainId::EmptyRooms => {
            let floor = task.layout.floor_cells();
            task.goal_cell = Some(floor[rng.random_range(0..floor.len())]);
            task.object_rewards.insert(Object::Goal, 1.0);
            let mid = match preset.shape {
                RoomShape::FourRooms { room } => room / 2,
                RoomShape::Single { height, width } => height.min(width) / 2,
            };
            task.start_cell = (mid, mid);
        }
        DomainId::FixedAbc | DomainId::RandomAbc | DomainId::NonstationaryAbc => {
            let (start, cells) = abc_cells(&task.layout);
            task.start_cell = start;
            task.fixed_cells = cells;
            task.object_rewards = match preset.domain {
                DomainId::FixedAbc => {
                    BTreeMap::from([(Object::A, 1.0), (Object::B, -0.5), (Object::C, 0.5)])
                }
                DomainId::RandomAbc => random_abc(rng),
                _ => BTreeMap::from([(Object::A, 1.0), (Object::B, -0.5), (Object::C, -1.0)]),
            };
            if preset.domain == DomainId::NonstationaryAbc {
                task.swap_period = Some(preset.swap_period);
            }
        }
        DomainId::KeyBox => {
            task.object_rewards = random_abc(rng);
            task.object_rewards.insert(Object::Key, preset.key_reward);
        }
    }
    task
}

/// Rewards in force during `episode_index`.
pub fn effective_rewards(task: &TaskSpec, episode_index: usize) -> BTreeMap<Object, f64> {
    let mut rewards = task.object_rewards.clone();
    if let Some(period) = task.swap_period {
        if (episode_index / period) % 2 == 1 {
            let a = rewards[&Object::A];
            let c = rewards[&Object::C];
            rewards.insert(Object::A, c);
            rewards.insert(Object::C, a);
        }
    }
    rewards
}

/// Live state within a lifetime.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub agent_cell: Cell,
    /// Visible entities still present in the room.
    pub object_cells: BTreeMap<Object, Cell>,
    pub has_key: bool,
    pub episode_step: usize,
    pub episode_index: usize,
    pub lifetime_step: usize,
    pub episode_done: bool,
    pub lifetime_done: bool,
}

impl EnvState {
    /// Hash of everything that distinguishes states for visit counting:
    /// agent cell, key possession and the placement of remaining entities.
    pub fn state_key(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.agent_cell, self.has_key, &self.object_cells).hash(&mut h);
        h.finish()
    }
}

/// Grid tensor `[channels, height, width]` of one-hot occupancy planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub grid: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub extrinsic_reward: f64,
    pub episode_done: bool,
    pub lifetime_done: bool,
}

/// Render the state as occupancy planes.
pub fn observe(task: &TaskSpec, state: &EnvState) -> Observation {
    let l = &task.layout;
    let plane = l.height * l.width;
    let mut data = vec![0.0; channel::COUNT * plane];
    for cell in (0..l.height).flat_map(|r| (0..l.width).map(move |c| (r, c))) {
        if l.is_wall(cell) {
            data[channel::WALL * plane + l.index(cell)] = 1.0;
        }
    }
    data[channel::AGENT * plane + l.index(state.agent_cell)] = 1.0;
    for (obj, &cell) in &state.object_cells {
        if let Some(ch) = obj.channel() {
            data[ch * plane + l.index(cell)] = 1.0;
        }
    }
    if state.has_key {
        data[channel::CARRIED_KEY * plane + l.index(state.agent_cell)] = 1.0;
    }
    Observation {
        grid: Tensor::new(&[channel::COUNT, l.height, l.width], data),
    }
}

/// Start a lifetime (`prev == None`) or the episode after a finished one.
///
/// Panics if `prev` is still mid-episode or its lifetime is over.
pub fn reset_episode(task: &TaskSpec, prev: Option<&EnvState>, rng: &mut impl Rng) -> (EnvState, Observation) {
    let (episode_index, lifetime_step) = match prev {
        None => (0, 0),
        Some(p) => {
            assert!(p.episode_done, "reset_episode called on a live episode");
            assert!(!p.lifetime_done, "reset_episode called after the lifetime ended");
            (p.episode_index + 1, p.lifetime_step)
        }
    };
    let (agent_cell, object_cells) = match task.domain {
        DomainId::KeyBox => {
            let mut floor = task.layout.floor_cells();
            floor.shuffle(rng);
            let cells = BTreeMap::from([
                (Object::Key, floor[1]),
                (Object::A, floor[2]),
                (Object::B, floor[3]),
                (Object::C, floor[4]),
            ]);
            (floor[0], cells)
        }
        _ => (task.start_cell, task.fixed_cells.clone()),
    };
    let state = EnvState {
        agent_cell,
        object_cells,
        has_key: false,
        episode_step: 0,
        episode_index,
        lifetime_step,
        episode_done: false,
        lifetime_done: false,
    };
    let obs = observe(task, &state);
    (state, obs)
}

/// Advance one step. Panics if the episode is already over.
pub fn step(state: &mut EnvState, task: &TaskSpec, action: Action) -> StepResult {
    assert!(!state.episode_done, "step called on a finished episode");
    let next = task.layout.apply(state.agent_cell, action);
    state.agent_cell = next;
    state.episode_step += 1;
    state.lifetime_step += 1;

    let rewards = effective_rewards(task, state.episode_index);
    let mut reward = 0.0;
    let mut done = false;
    match task.domain {
        DomainId::EmptyRooms => {
            if task.goal_cell == Some(next) {
                reward = rewards[&Object::Goal];
                done = true;
            }
        }
        DomainId::KeyBox => {
            if state.object_cells.get(&Object::Key) == Some(&next) {
                state.has_key = true;
                state.object_cells.remove(&Object::Key);
                reward = rewards[&Object::Key];
            } else if state.has_key {
                if let Some((obj, _)) = state.object_cells.iter().find(|(_, &c)| c == next) {
                    reward = rewards[obj];
                    done = true;
                }
            }
        }
        _ => {
            if let Some((obj, _)) = state.object_cells.iter().find(|(_, &c)| c == next) {
                reward = rewards[obj];
                done = true;
            }
        }
    }
    if state.episode_step >= task.episode_time_limit {
        done = true;
    }
    state.episode_done = done;
    state.lifetime_done = done && state.episode_index + 1 == task.episodes_per_lifetime;
    StepResult {
        observation: observe(task, state),
        extrinsic_reward: reward,
        episode_done: done,
        lifetime_done: state.lifetime_done,
    }
}

/// A task plus its live state and placement stream.
#[derive(Clone, Debug)]
pub struct Env {
    task: TaskSpec,
    state: EnvState,
    rng: ChaCha8Rng,
    observation: Observation,
}

impl Env {
    pub fn new(task: TaskSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(task.layout_seed);
        let (state, observation) = reset_episode(&task, None, &mut rng);
        Env {
            task,
            state,
            rng,
            observation,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Observation of the current (pre-action) state.
    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn step(&mut self, action: Action) -> StepResult {
        let result = step(&mut self.state, &self.task, action);
        self.observation = result.observation.clone();
        result
    }

    /// Begin the next episode after one has finished.
    pub fn next_episode(&mut self) -> &Observation {
        let (state, obs) = reset_episode(&self.task, Some(&self.state), &mut self.rng);
        self.state = state;
        self.observation = obs;
        &self.observation
    }

    pub fn lifetime_done(&self) -> bool {
        self.state.lifetime_done
    }
}

impl FromStr for DomainId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvPreset::by_name(s)
            .map(|p| p.domain)
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainId::EmptyRooms => "empty_rooms",
            DomainId::FixedAbc => "fixed_abc",
            DomainId::RandomAbc => "random_abc",
            DomainId::NonstationaryAbc => "nonstationary_abc",
            DomainId::KeyBox => "key_box",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preset(name: &str) -> EnvPreset {
        EnvPreset::by_name(name).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn fixed_abc_rewards() {
        let t = sample_task(&preset("fixed_abc"), &mut rng(3));
        assert_eq!(t.object_rewards[&Object::A], 1.0);
        assert_eq!(t.object_rewards[&Object::B], -0.5);
        assert_eq!(t.object_rewards[&Object::C], 0.5);
        assert_eq!(effective_rewards(&t, 173), t.object_rewards);
    }

    #[test]
    fn nonstationary_schedule() {
        let t = sample_task(&preset("nonstationary_abc"), &mut rng(0));
        assert_eq!(t.swap_period, Some(250));
        assert_eq!(t.episodes_per_lifetime, 1000);
        let r0 = effective_rewards(&t, 0);
        assert_eq!((r0[&Object::A], r0[&Object::B], r0[&Object::C]), (1.0, -0.5, -1.0));
        let r1 = effective_rewards(&t, 250);
        assert_eq!((r1[&Object::A], r1[&Object::B], r1[&Object::C]), (-1.0, -0.5, 1.0));
        assert_eq!(effective_rewards(&t, 249), r0);
        assert_eq!(effective_rewards(&t, 500), r0);
        assert_eq!(effective_rewards(&t, 750), r1);
    }

    #[test]
    fn empty_rooms_start_and_hidden_goal() {
        let t = sample_task(&preset("empty_rooms"), &mut rng(9));
        let env = Env::new(t.clone());
        assert_eq!(env.state().agent_cell, (2, 2));
        assert!(t.goal_cell.is_some());
        let g = env.observation().grid.data();
        // no plane marks the goal: only agent and walls are non-zero
        let plane = 121;
        assert_eq!(g[..plane].iter().sum::<f64>(), 1.0);
        assert!(g[2 * plane..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn move_onto_object_ends_episode() {
        let t = sample_task(&preset("fixed_abc"), &mut rng(1));
        let mut env = Env::new(t);
        // start (4,0); A at (0,0)
        for _ in 0..3 {
            let r = env.step(Action::Up);
            assert!(!r.episode_done);
            assert_eq!(r.extrinsic_reward, 0.0);
        }
        let r = env.step(Action::Up);
        assert!(r.episode_done);
        assert_eq!(r.extrinsic_reward, 1.0);
        assert!(!r.lifetime_done);
    }

    #[test]
    fn wall_bump_is_a_noop() {
        let t = sample_task(&preset("fixed_abc"), &mut rng(1));
        let mut env = Env::new(t);
        let r = env.step(Action::Left);
        assert_eq!(env.state().agent_cell, (4, 0));
        assert_eq!(r.extrinsic_reward, 0.0);
        assert!(!r.episode_done);
    }

    #[test]
    fn time_limit_ends_episode_with_zero() {
        let t = sample_task(&preset("random_abc"), &mut rng(2));
        let mut env = Env::new(t);
        for i in 0..10 {
            let r = env.step(Action::Left);
            assert_eq!(r.episode_done, i == 9);
            assert_eq!(r.extrinsic_reward, 0.0);
        }
        assert_eq!(env.state().episode_step, 10);
        env.next_episode();
        assert_eq!(env.state().episode_index, 1);
        assert_eq!(env.state().episode_step, 0);
    }

    #[test]
    fn key_box_needs_key() {
        let p = preset("key_box");
        let t = sample_task(&p, &mut rng(4));
        let mut state = EnvState {
            agent_cell: (0, 0),
            object_cells: BTreeMap::from([
                (Object::A, (0, 1)),
                (Object::Key, (1, 1)),
                (Object::B, (5, 5)),
                (Object::C, (5, 0)),
            ]),
            has_key: false,
            episode_step: 0,
            episode_index: 0,
            lifetime_step: 0,
            episode_done: false,
            lifetime_done: false,
        };
        let r = step(&mut state, &t, Action::Right);
        assert_eq!(r.extrinsic_reward, 0.0);
        assert!(!r.episode_done);
        let r = step(&mut state, &t, Action::Down);
        assert_eq!(r.extrinsic_reward, -0.1);
        assert!(state.has_key && !r.episode_done);
        let plane = 36;
        assert_eq!(r.observation.grid.data()[channel::CARRIED_KEY * plane + 7], 1.0);
        let r = step(&mut state, &t, Action::Up);
        assert!(r.episode_done);
        assert_eq!(r.extrinsic_reward, t.object_rewards[&Object::A]);
    }

    #[test]
    fn key_box_layout_varies_per_episode() {
        let t = sample_task(&preset("key_box"), &mut rng(5));
        let mut env = Env::new(t);
        let first = env.state().object_cells.clone();
        let mut changed = false;
        for _ in 0..5 {
            while !env.step(Action::Up).episode_done {}
            env.next_episode();
            assert!(!env.state().has_key);
            changed |= env.state().object_cells != first;
        }
        assert!(changed);
    }

    #[test]
    #[should_panic(expected = "live episode")]
    fn reset_on_live_episode_panics() {
        let t = sample_task(&preset("fixed_abc"), &mut rng(1));
        let mut env = Env::new(t);
        env.next_episode();
    }

    #[test]
    #[should_panic(expected = "finished episode")]
    fn step_after_done_panics() {
        let t = sample_task(&preset("tiny_abc"), &mut rng(1));
        let mut env = Env::new(t);
        while !env.step(Action::Up).episode_done {}
        env.step(Action::Up);
    }

    fn random_run(name: &str, seed: u64, steps: usize) -> Vec<StepResult> {
        let t = sample_task(&preset(name), &mut rng(seed));
        let mut env = Env::new(t);
        let mut actions = rng(seed + 1);
        let mut out = Vec::new();
        for _ in 0..steps {
            let r = env.step(Action::BASE[actions.random_range(0..4)]);
            let (ep, life) = (r.episode_done, r.lifetime_done);
            out.push(r);
            if life {
                break;
            }
            if ep {
                env.next_episode();
            }
        }
        out
    }

    #[test]
    fn identical_inputs_give_identical_steps() {
        for name in EnvPreset::NAMES {
            assert_eq!(random_run(name, 3, 300), random_run(name, 3, 300), "{name}");
        }
    }

    #[test]
    fn observation_planes_are_one_hot() {
        for name in EnvPreset::NAMES {
            for r in random_run(name, 4, 300) {
                let g = r.observation.grid.data();
                let plane = g.len() / channel::COUNT;
                let count = |ch: usize| g[ch * plane..(ch + 1) * plane].iter().filter(|&&x| x == 1.0).count();
                assert!(g.iter().all(|&x| x == 0.0 || x == 1.0));
                assert_eq!(count(channel::AGENT), 1, "{name}");
                assert!(count(channel::CARRIED_KEY) <= 1);
                for ch in [channel::A, channel::B, channel::C, channel::KEY] {
                    assert!(count(ch) <= 1, "{name} plane {ch}");
                }
                if name == "empty_rooms" {
                    for ch in [channel::A, channel::B, channel::C, channel::KEY] {
                        assert_eq!(count(ch), 0);
                    }
                }
            }
        }
    }

    #[test]
    fn random_abc_rewards_stay_in_their_intervals() {
        let p = preset("random_abc");
        let mut r = rng(12);
        let mut sums = [0.0; 3];
        let n = 10_000;
        for _ in 0..n {
            let t = sample_task(&p, &mut r);
            let (a, b, c) = (t.object_rewards[&Object::A], t.object_rewards[&Object::B], t.object_rewards[&Object::C]);
            assert!((-1.0..=1.0).contains(&a));
            assert!((-0.5..=0.0).contains(&b));
            assert!((0.0..=0.5).contains(&c));
            for (s, v) in sums.iter_mut().zip([a, b, c]) {
                *s += v;
            }
        }
        // Midpoints, within 3 standard errors of a uniform draw.
        for ((s, mid), width) in sums.iter().zip([0.0, -0.25, 0.25]).zip([2.0, 0.5, 0.5]) {
            let se = width / (12.0f64 * n as f64).sqrt();
            assert!((s / n as f64 - mid).abs() < 3.0 * se);
        }
    }
}
