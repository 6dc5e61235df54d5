//! Run configuration: `key = value` lines with dotted section prefixes,
//! `#` comments, and command-line overrides of the same keys.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adaptive_bc::{Averaging, ControllerConfig, TargetMode};
use crate::agent::{AgentConfig, EnsembleMode};
use crate::dataset::Tier;
use crate::env::EnvId;
use crate::error::{Error, Result};
use crate::forge::ForgeConfig;
use crate::replay::DownsampleMode;
use crate::train::{EvalSettings, FinetuneSettings, OnlineSettings};

/// A value that can appear on the right-hand side of a config line.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! scalar_values {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_values!(
    f64, u64, usize, bool, String, EnvId, Tier, EnsembleMode, TargetMode, DownsampleMode,
    AlphaMode, AveragingKind, SweepKind
);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Option<Self> {
        (!s.is_empty()).then(|| PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> Option<Self> {
        if s.is_empty() {
            Some(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.as_ref().map(T::render).unwrap_or_default()
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> Option<Self> {
        if s.trim().is_empty() {
            return Some(Vec::new());
        }
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for [usize; 2] {
    fn parse_value(s: &str) -> Option<Self> {
        Vec::<usize>::parse_value(s)?.try_into().ok()
    }
    fn render(&self) -> String {
        format!("{},{}", self[0], self[1])
    }
}

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name { $($variant),* }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),* })
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)*
                    _ => Err(Error::InvalidConfig(format!("unknown {} `{s}`", stringify!($name)))),
                }
            }
        }
    };
}

named_enum!(AlphaMode { Adaptive => "adaptive", Fixed => "fixed" });
named_enum!(AveragingKind { Ema => "ema", Window => "window" });
named_enum!(SweepKind { Alpha => "alpha", Gains => "gains" });

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub tier: Tier,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSection {
    pub steps: u64,
    pub alpha: f64,
    pub eval_interval: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSection {
    pub steps: u64,
    pub utd: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub interval: u64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSection {
    pub mode: AlphaMode,
    pub fixed: f64,
    pub kp: f64,
    pub kd: f64,
    pub target_mode: TargetMode,
    pub averaging: AveragingKind,
    pub ema_beta: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownsampleSection {
    pub keep_fraction: f64,
    pub mode: DownsampleMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeSection {
    pub train_steps: u64,
    pub random_steps: u64,
    pub utd: usize,
    pub snapshot_interval: u64,
    pub snapshot_episodes: usize,
    pub reference_episodes: usize,
    pub collect_noise: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub hidden: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub kind: SweepKind,
    pub alphas: Vec<f64>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvId,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Agent checkpoint read by `finetune`, `evaluate` and `sweep`.
    pub checkpoint: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub agent: AgentConfig,
    pub offline: OfflineSection,
    pub online: OnlineSection,
    pub eval: EvalSection,
    pub alpha: AlphaSection,
    pub downsample: DownsampleSection,
    pub replay_capacity: usize,
    pub forge: ForgeSection,
    pub sweep: SweepSection,
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let forge = ForgeConfig::default();
        let controller = ControllerConfig::default();
        RunConfig {
            env: EnvId::Pendulum,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            checkpoint: None,
            dataset: DatasetSection {
                path: None,
                tier: Tier::Medium,
                size: 20_000,
            },
            agent: AgentConfig::default(),
            offline: OfflineSection {
                steps: 50_000,
                alpha: 0.4,
                eval_interval: 5_000,
            },
            online: OnlineSection {
                steps: 20_000,
                utd: 5,
            },
            eval: EvalSection {
                interval: 5_000,
                episodes: 10,
            },
            alpha: AlphaSection {
                mode: AlphaMode::Adaptive,
                fixed: 0.0,
                kp: controller.kp,
                kd: controller.kd,
                target_mode: TargetMode::ExpertReference,
                averaging: AveragingKind::Ema,
                ema_beta: 0.1,
                window: 10,
            },
            downsample: DownsampleSection {
                keep_fraction: 0.05,
                mode: DownsampleMode::Random,
            },
            replay_capacity: 1_100_000,
            forge: ForgeSection {
                train_steps: forge.train_steps,
                random_steps: forge.random_steps,
                utd: forge.utd,
                snapshot_interval: forge.snapshot_interval,
                snapshot_episodes: forge.snapshot_episodes,
                reference_episodes: forge.reference_episodes,
                collect_noise: forge.collect_noise,
                band_low: forge.medium_band.0,
                band_high: forge.medium_band.1,
                hidden: forge.agent.hidden,
            },
            sweep: SweepSection {
                kind: SweepKind::Alpha,
                alphas: vec![0.0, 0.1, 0.3],
                kp: vec![0.003, 0.01, 0.03, 0.1],
                kd: vec![0.01, 0.03, 0.1],
            },
            wall_clock: false,
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Sets one key; the error names the key.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::parse_value(value).ok_or_else(|| {
                            Error::InvalidConfig(format!("invalid value `{value}` for key `{key}`"))
                        })?;
                    })*
                    _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// Every key with its current value, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.render())),*]
            }
        }
    };
}

config_keys! {
    "env" => env,
    "seed" => seed,
    "output_dir" => output_dir,
    "checkpoint" => checkpoint,
    "dataset.path" => dataset.path,
    "dataset.tier" => dataset.tier,
    "dataset.size" => dataset.size,
    "net.hidden" => agent.hidden,
    "agent.gamma" => agent.gamma,
    "agent.tau" => agent.tau,
    "agent.n_critics" => agent.n_critics,
    "agent.m_subset" => agent.m_subset,
    "agent.batch_size" => agent.batch_size,
    "agent.expl_noise" => agent.expl_noise,
    "agent.policy_noise" => agent.policy_noise,
    "agent.noise_clip" => agent.noise_clip,
    "agent.policy_delay" => agent.policy_delay,
    "agent.ensemble_mode" => agent.ensemble_mode,
    "agent.q_norm_epsilon" => agent.q_norm_epsilon,
    "agent.q_norm_abs" => agent.q_norm_abs,
    "agent.per_sample_subsets" => agent.per_sample_subsets,
    "agent.actor_lr" => agent.actor_adam.lr,
    "agent.critic_lr" => agent.critic_adam.lr,
    "offline.steps" => offline.steps,
    "offline.alpha" => offline.alpha,
    "offline.eval_interval" => offline.eval_interval,
    "online.steps" => online.steps,
    "online.utd" => online.utd,
    "eval.interval" => eval.interval,
    "eval.episodes" => eval.episodes,
    "alpha.mode" => alpha.mode,
    "alpha.fixed" => alpha.fixed,
    "alpha.kp" => alpha.kp,
    "alpha.kd" => alpha.kd,
    "alpha.target_mode" => alpha.target_mode,
    "alpha.averaging" => alpha.averaging,
    "alpha.ema_beta" => alpha.ema_beta,
    "alpha.window" => alpha.window,
    "downsample.keep_fraction" => downsample.keep_fraction,
    "downsample.mode" => downsample.mode,
    "replay.capacity" => replay_capacity,
    "forge.train_steps" => forge.train_steps,
    "forge.random_steps" => forge.random_steps,
    "forge.utd" => forge.utd,
    "forge.snapshot_interval" => forge.snapshot_interval,
    "forge.snapshot_episodes" => forge.snapshot_episodes,
    "forge.reference_episodes" => forge.reference_episodes,
    "forge.collect_noise" => forge.collect_noise,
    "forge.band_low" => forge.band_low,
    "forge.band_high" => forge.band_high,
    "forge.hidden" => forge.hidden,
    "sweep.kind" => sweep.kind,
    "sweep.alphas" => sweep.alphas,
    "sweep.kp" => sweep.kp,
    "sweep.kd" => sweep.kd,
    "log.wall_clock" => wall_clock,
}

/// Splits config text into `(line number, key, value)` triples.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected `key = value`, found `{line}`", i + 1))
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (line, k, v) in parse_lines(text)? {
            self.set(&k, &v)
                .map_err(|e| Error::InvalidConfig(format!("line {line}: {}", strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Applies `--key=value` arguments in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        for a in args {
            let a = a.as_ref();
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| Error::InvalidConfig(format!("override `{a}` must look like --key=value")))?;
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{a}` must look like --key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// The full resolved configuration in the same grammar it is read from.
    pub fn resolved_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.agent.validate()?;
        self.controller()?.validate()?;
        if self.offline.eval_interval == 0 || self.eval.interval == 0 || self.eval.episodes == 0 {
            return bad("eval intervals and eval.episodes must be positive".into());
        }
        if self.online.steps == 0 {
            return bad("online.steps must be positive".into());
        }
        if self.eval.interval > self.online.steps {
            return bad("eval.interval must not exceed online.steps".into());
        }
        if !(0.0..=1.0).contains(&self.downsample.keep_fraction) {
            return bad("downsample.keep_fraction must lie in [0, 1]".into());
        }
        if self.replay_capacity == 0 || self.dataset.size == 0 {
            return bad("replay.capacity and dataset.size must be positive".into());
        }
        if !(self.alpha.fixed >= 0.0 && self.alpha.fixed.is_finite()) {
            return bad("alpha.fixed must be finite and non-negative".into());
        }
        self.forge_config().validate()
    }

    pub fn controller(&self) -> Result<ControllerConfig> {
        let averaging = match self.alpha.averaging {
            AveragingKind::Ema => Averaging::Ema { beta: self.alpha.ema_beta },
            AveragingKind::Window => Averaging::Window { size: self.alpha.window },
        };
        Ok(ControllerConfig {
            alpha_offline: self.offline.alpha,
            kp: self.alpha.kp,
            kd: self.alpha.kd,
            r_target: crate::adaptive_bc::DEFAULT_R_TARGET,
            averaging,
        })
    }

    pub fn forge_config(&self) -> ForgeConfig {
        let f = &self.forge;
        let base = ForgeConfig::default();
        ForgeConfig {
            train_steps: f.train_steps,
            random_steps: f.random_steps,
            utd: f.utd,
            snapshot_interval: f.snapshot_interval,
            snapshot_episodes: f.snapshot_episodes,
            reference_episodes: f.reference_episodes,
            collect_noise: f.collect_noise,
            medium_band: (f.band_low, f.band_high),
            agent: AgentConfig {
                hidden: f.hidden,
                gamma: self.agent.gamma,
                tau: self.agent.tau,
                batch_size: self.agent.batch_size,
                actor_adam: self.agent.actor_adam,
                critic_adam: self.agent.critic_adam,
                ..base.agent
            },
        }
    }

    pub fn offline_eval(&self) -> EvalSettings {
        EvalSettings {
            interval: self.offline.eval_interval,
            episodes: self.eval.episodes,
        }
    }

    pub fn finetune_settings(&self) -> FinetuneSettings {
        FinetuneSettings {
            online: OnlineSettings {
                steps: self.online.steps,
                utd: self.online.utd,
                eval: EvalSettings {
                    interval: self.eval.interval,
                    episodes: self.eval.episodes,
                },
                random_steps: 0,
                learn_start: 1,
                wall_clock: self.wall_clock,
            },
            keep_fraction: self.downsample.keep_fraction,
            downsample_mode: self.downsample.mode,
            capacity: self.replay_capacity,
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidConfig(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("agent.n_critics", "4").unwrap();
        c.set("sweep.alphas", "0,0.5").unwrap();
        c.set("checkpoint", "a/b.ckpt").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.resolved_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.entries().len(), RunConfig::KEYS.len());
    }

    #[test]
    fn overrides_beat_file_values() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nseed = 3\n\nenv = pointmass  # trailing\n").unwrap();
        assert_eq!(c.seed, 3);
        c.apply_overrides(&["--seed=7"]).unwrap();
        assert_eq!(c.seed, 7);
        assert!(c.resolved_text().contains("seed = 7\n"));
        assert_eq!(c.env, EnvId::PointMass);
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = RunConfig::default();
        let e = c.set("agent.bogus", "1").unwrap_err().to_string();
        assert!(e.contains("agent.bogus"), "{e}");
        let e = c.set("agent.gamma", "high").unwrap_err().to_string();
        assert!(e.contains("agent.gamma"), "{e}");
        let e = c.apply_text("seed = 1\nalpha.kp = x\n").unwrap_err().to_string();
        assert!(e.contains("alpha.kp") && e.contains("line 2"), "{e}");
        assert!(c.apply_overrides(&["seed=1"]).is_err());
        assert!(c.apply_text("just words").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let mut c = RunConfig::default();
        c.eval.interval = c.online.steps + 1;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.agent.m_subset = 20;
        assert!(c.validate().is_err());
    }
}
