//! Experiment configuration: flat `key = value` lines grouped under
//! `[section]` headers. Blank lines and `#` comments are ignored; unknown
//! keys are errors.
//!
//! ```text
//! [env]
//! domain = fixed_abc
//!
//! [meta]
//! meta_updates = 2000
//! batch_lifetimes = 8
//! ```

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::baselines::COUNT_BETA;
use crate::env::{ActionMode, DomainId, EnvPreset};
use crate::error::{Error, Result};
use crate::eval::{AgentAlgo, LearnerSpec, QConfig};
use crate::inner::InnerConfig;
use crate::meta::{MetaConfig, Objective, TrainSetup};
use crate::nets::{Arch, RewardInput};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: EnvPreset,
    pub inner: InnerConfig,
    pub meta: MetaConfig,
    pub conv_filters: usize,
    pub hidden: usize,
    pub lstm: usize,
    pub action_mode: ActionMode,
    pub agent_algo: AgentAlgo,
    pub q: QConfig,
    pub eval_lifetimes: usize,
    pub count_beta: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Meta-updates between training metric rows.
    pub log_interval: usize,
    /// Meta-updates between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Write elapsed milliseconds into metrics; off gives reproducible files.
    pub record_wall_clock: bool,
}

impl ExperimentConfig {
    /// Defaults for a domain preset, including its per-domain settings.
    pub fn for_domain(name: &str) -> Result<Self> {
        let preset = EnvPreset::by_name(name).ok_or_else(|| Error::Config(format!("unknown domain `{name}`")))?;
        let mut inner = InnerConfig::default();
        match preset.domain {
            DomainId::EmptyRooms => inner.unroll = 8,
            DomainId::NonstationaryAbc => inner.entropy_coef = 0.05,
            _ => {}
        }
        if preset.name == "key_box_long" {
            inner.unroll = 16;
        }
        Ok(ExperimentConfig {
            preset,
            inner,
            meta: MetaConfig::default(),
            conv_filters: 16,
            hidden: 64,
            lstm: 64,
            action_mode: ActionMode::Standard,
            agent_algo: AgentAlgo::PolicyGradient,
            q: QConfig::default(),
            eval_lifetimes: 30,
            count_beta: COUNT_BETA,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            log_interval: 50,
            checkpoint_interval: 0,
            record_wall_clock: true,
        })
    }

    /// Read a config file's text. `[env] domain` is applied first so the
    /// remaining keys override that domain's defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let domain = file_domain(&entries).unwrap_or("fixed_abc").to_string();
        ExperimentConfig::apply(&domain, &entries)
    }

    /// Like [`ExperimentConfig::parse`] for a domain chosen elsewhere; a
    /// file naming a different domain is an error.
    pub fn parse_for_domain(text: &str, domain: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        if let Some(d) = file_domain(&entries) {
            if d != domain {
                return Err(Error::Config(format!("config is for `{d}` but `{domain}` was requested")));
            }
        }
        ExperimentConfig::apply(domain, &entries)
    }

    fn apply(domain: &str, entries: &[(String, String, usize)]) -> Result<Self> {
        let mut cfg = ExperimentConfig::for_domain(domain)?;
        for (key, value, line) in entries {
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {line}: {msg}")),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text)
    }

    /// Set one `section.key` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        fn choice<T: FromStr<Err = String>>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|e| Error::Config(format!("`{key}`: {e}")))
        }
        match key {
            "env.domain" => {
                if EnvPreset::by_name(value).map(|p| p.name) != Some(self.preset.name.clone()) {
                    return Err(Error::Config(format!("`env.domain` given twice with `{value}`")));
                }
            }
            "env.episodes" => self.preset.episodes = num(key, value)?,
            "env.time_limit" => self.preset.time_limit = num(key, value)?,
            "env.swap_period" => self.preset.swap_period = num(key, value)?,
            "inner.alpha" => self.inner.alpha = num(key, value)?,
            "inner.gamma_bar" => self.inner.gamma_bar = num(key, value)?,
            "inner.entropy_coef" => self.inner.entropy_coef = num(key, value)?,
            "inner.unroll" => self.inner.unroll = num(key, value)?,
            "meta.outer_unroll" => self.meta.outer_unroll = num(key, value)?,
            "meta.gamma" => self.meta.gamma = num(key, value)?,
            "meta.eta_lr" => self.meta.eta_lr = num(key, value)?,
            "meta.value_lr" => self.meta.value_lr = num(key, value)?,
            "meta.batch_lifetimes" => self.meta.batch_lifetimes = num(key, value)?,
            "meta.meta_updates" => self.meta.meta_updates = num(key, value)?,
            "meta.objective" => self.meta.objective = choice(key, value)?,
            "meta.use_baseline" => self.meta.use_baseline = num(key, value)?,
            "meta.reward_input" => self.meta.reward_input = choice(key, value)?,
            "network.conv_filters" => self.conv_filters = num(key, value)?,
            "network.hidden" => self.hidden = num(key, value)?,
            "network.lstm" => self.lstm = num(key, value)?,
            "eval.lifetimes" => self.eval_lifetimes = num(key, value)?,
            "eval.agent" => self.agent_algo = choice(key, value)?,
            "eval.actions" => self.action_mode = choice(key, value)?,
            "eval.q_alpha" => self.q.alpha = num(key, value)?,
            "eval.q_epsilon" => self.q.epsilon = num(key, value)?,
            "baseline.count_beta" => self.count_beta = num(key, value)?,
            "run.seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "run.output_dir" => self.output_dir = PathBuf::from(value),
            "run.log_interval" => self.log_interval = num(key, value)?,
            "run.checkpoint_interval" => self.checkpoint_interval = num(key, value)?,
            "run.record_wall_clock" => self.record_wall_clock = num(key, value)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.setup().validate()?;
        if self.conv_filters == 0 || self.hidden == 0 || self.lstm == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.preset.episodes == 0 || self.preset.time_limit == 0 {
            return Err(Error::Config("episodes and time_limit must be positive".into()));
        }
        if self.count_beta <= 0.0 {
            return Err(Error::Config("count_beta must be positive".into()));
        }
        Ok(())
    }

    /// Architecture for the training action set.
    pub fn arch(&self) -> Arch {
        Arch {
            obs_shape: self.preset.observation_shape(),
            num_actions: 4,
            conv_filters: self.conv_filters,
            hidden: self.hidden,
            lstm: self.lstm,
        }
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            preset: self.preset.clone(),
            arch: self.arch(),
            inner: self.inner,
            meta: self.meta.clone(),
        }
    }

    pub fn learner(&self) -> LearnerSpec {
        LearnerSpec {
            algo: self.agent_algo,
            q: self.q,
            ..LearnerSpec::episodic(self.inner)
        }
    }

    /// Every setting as config text that [`ExperimentConfig::parse`] reads
    /// back to an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let sections: [(&str, Vec<(&str, String)>); 7] = [
            (
                "env",
                vec![
                    ("domain", self.preset.name.clone()),
                    ("episodes", self.preset.episodes.to_string()),
                    ("time_limit", self.preset.time_limit.to_string()),
                    ("swap_period", self.preset.swap_period.to_string()),
                ],
            ),
            (
                "inner",
                vec![
                    ("alpha", fmt_f64(self.inner.alpha)),
                    ("gamma_bar", fmt_f64(self.inner.gamma_bar)),
                    ("entropy_coef", fmt_f64(self.inner.entropy_coef)),
                    ("unroll", self.inner.unroll.to_string()),
                ],
            ),
            (
                "meta",
                vec![
                    ("outer_unroll", self.meta.outer_unroll.to_string()),
                    ("gamma", fmt_f64(self.meta.gamma)),
                    ("eta_lr", fmt_f64(self.meta.eta_lr)),
                    ("value_lr", fmt_f64(self.meta.value_lr)),
                    ("batch_lifetimes", self.meta.batch_lifetimes.to_string()),
                    ("meta_updates", self.meta.meta_updates.to_string()),
                    ("objective", self.meta.objective.to_string()),
                    ("use_baseline", self.meta.use_baseline.to_string()),
                    ("reward_input", self.meta.reward_input.to_string()),
                ],
            ),
            (
                "network",
                vec![
                    ("conv_filters", self.conv_filters.to_string()),
                    ("hidden", self.hidden.to_string()),
                    ("lstm", self.lstm.to_string()),
                ],
            ),
            (
                "eval",
                vec![
                    ("lifetimes", self.eval_lifetimes.to_string()),
                    ("agent", self.agent_algo.to_string()),
                    ("actions", self.action_mode.to_string()),
                    ("q_alpha", fmt_f64(self.q.alpha)),
                    ("q_epsilon", fmt_f64(self.q.epsilon)),
                ],
            ),
            ("baseline", vec![("count_beta", fmt_f64(self.count_beta))]),
            (
                "run",
                vec![
                    ("seeds", seeds.join(",")),
                    ("output_dir", self.output_dir.display().to_string()),
                    ("log_interval", self.log_interval.to_string()),
                    ("checkpoint_interval", self.checkpoint_interval.to_string()),
                    ("record_wall_clock", self.record_wall_clock.to_string()),
                ],
            ),
        ];
        for (i, (name, entries)) in sections.iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            let _ = writeln!(s, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Shortest text that parses back to the same bits.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn file_domain(entries: &[(String, String, usize)]) -> Option<&str> {
    entries.iter().find(|(k, _, _)| k == "env.domain").map(|(_, v, _)| v.as_str())
}

/// `(section.key, value, line number)` for every entry, in file order.
fn parse_entries(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
        let sec = section
            .as_deref()
            .ok_or_else(|| Error::Config(format!("line {line_no}: `{}` is outside any section", k.trim())))?;
        out.push((format!("{sec}.{}", k.trim()), v.trim().to_string(), line_no));
    }
    Ok(out)
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lifetime" => Ok(Objective::Lifetime),
            "episodic" => Ok(Objective::Episodic),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Lifetime => "lifetime",
            Objective::Episodic => "episodic",
        })
    }
}

impl FromStr for RewardInput {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lstm" => Ok(RewardInput::Lstm),
            "feedforward" => Ok(RewardInput::FeedForward),
            other => Err(format!("unknown reward input `{other}`")),
        }
    }
}

impl fmt::Display for RewardInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardInput::Lstm => "lstm",
            RewardInput::FeedForward => "feedforward",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_defaults() {
        let c = ExperimentConfig::for_domain("empty_rooms").unwrap();
        assert_eq!(c.inner.unroll, 8);
        assert_eq!(c.preset.time_limit, 100);
        let c = ExperimentConfig::for_domain("nonstationary_abc").unwrap();
        assert_eq!(c.inner.entropy_coef, 0.05);
        assert_eq!(c.preset.episodes, 1000);
        let c = ExperimentConfig::for_domain("key_box").unwrap();
        assert_eq!(c.inner.unroll, 4);
        assert_eq!(c.preset.time_limit, 50);
        assert!(ExperimentConfig::for_domain("mars").is_err());
    }

    #[test]
    fn parse_overrides_and_round_trips() {
        let text = "# desk run\n[meta]\nmeta_updates = 100\n\n[env]\ndomain = random_abc\n[run]\nseeds = 1, 2,3\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.preset.name, "random_abc");
        assert_eq!(c.meta.meta_updates, 100);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        let again = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("[inner]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(&err, Error::UnknownKey(k) if k == "inner.learning_rate"), "{err}");
        assert!(ExperimentConfig::parse("alpha = 1\n").is_err());
        assert!(ExperimentConfig::parse("[inner]\nalpha = fast\n").is_err());
        assert!(ExperimentConfig::parse("[inner]\nunroll = 0\n").is_err());
    }

    #[test]
    fn requested_domain_must_agree() {
        let c = ExperimentConfig::parse_for_domain("[meta]\nmeta_updates = 3\n", "key_box").unwrap();
        assert_eq!(c.preset.name, "key_box");
        assert!(ExperimentConfig::parse_for_domain("[env]\ndomain = fixed_abc\n", "key_box").is_err());
    }
}
