//! Offline datasets, their reference scores and the on-disk format.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::env::{EnvId, EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::replay::{Origin, ReplayBuffer};
use crate::textio::{self, Header};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    Random,
    Medium,
    MediumReplay,
    MediumExpert,
    Expert,
}

impl Tier {
    pub const ALL: [Tier; 5] = [
        Tier::Random,
        Tier::Medium,
        Tier::MediumReplay,
        Tier::MediumExpert,
        Tier::Expert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Random => "random",
            Tier::Medium => "medium",
            Tier::MediumReplay => "medium_replay",
            Tier::MediumExpert => "medium_expert",
            Tier::Expert => "expert",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown dataset tier `{s}`")))
    }
}

/// Returns of the uniform-random and expert policies used to put episode
/// returns on a common scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceScores {
    pub r_random: f64,
    pub r_expert: f64,
    pub rmax_times_t: f64,
    pub episodes: usize,
}

impl ReferenceScores {
    pub fn new(r_random: f64, r_expert: f64, rmax_times_t: f64, episodes: usize) -> Result<Self> {
        if !(r_random.is_finite() && r_expert.is_finite() && rmax_times_t.is_finite()) {
            return Err(Error::InvalidReferences("reference scores must be finite".into()));
        }
        if r_expert <= r_random {
            return Err(Error::InvalidReferences(format!(
                "expert return {r_expert} does not exceed random return {r_random}"
            )));
        }
        Ok(ReferenceScores {
            r_random,
            r_expert,
            rmax_times_t,
            episodes,
        })
    }
}

/// `(R − R_random) / (R_expert − R_random)`: 0 for random, 1 for expert.
pub fn normalize_return(r: f64, refs: &ReferenceScores) -> f64 {
    (r - refs.r_random) / (refs.r_expert - refs.r_random)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub env: EnvId,
    pub tier: Tier,
    pub refs: ReferenceScores,
    pub seed: u64,
    pub transitions: Vec<Transition>,
    /// Index of the first transition of each episode, starting at 0.
    pub episode_starts: Vec<usize>,
}

impl OfflineDataset {
    /// Checks the structural invariants against the environment definition.
    pub fn validate(&self) -> Result<()> {
        let spec = self.env.spec();
        let bad = |m: String| Err(Error::Format(m));
        let n = self.transitions.len();
        if n == 0 {
            return bad("dataset holds no transitions".into());
        }
        if self.episode_starts.first() != Some(&0) {
            return bad("episode markers must start at 0".into());
        }
        if self.episode_starts.windows(2).any(|w| w[0] >= w[1]) || *self.episode_starts.last().unwrap() >= n {
            return bad("episode markers must be strictly increasing and in range".into());
        }
        if let Some(r) = self.episodes().find(|r| r.len() > spec.max_steps) {
            return bad(format!("episode of {} steps exceeds T = {}", r.len(), spec.max_steps));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.obs.len() != spec.obs_dim || t.next_obs.len() != spec.obs_dim || t.action.len() != spec.act_dim {
                return bad(format!("transition {i} has wrong dimensions"));
            }
            let in_bounds = t.action.iter().enumerate().all(|(j, &a)| {
                (a as f64) >= spec.action_low[j] && (a as f64) <= spec.action_high[j]
            });
            if !in_bounds {
                return bad(format!("transition {i} has an out-of-bounds action"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let n = self.transitions.len();
        self.episode_starts.iter().enumerate().map(move |(k, &s)| {
            let end = self.episode_starts.get(k + 1).copied().unwrap_or(n);
            s..end
        })
    }

    pub fn episode_returns(&self) -> Vec<f64> {
        self.episodes()
            .map(|r| self.transitions[r].iter().map(|t| t.reward as f64).sum())
            .collect()
    }

    /// Mean normalized return over complete (length-`T`) episodes, or over
    /// all episodes when none is complete.
    pub fn mean_normalized_return(&self) -> f64 {
        let t = self.env.spec().max_steps;
        let returns = self.episode_returns();
        let lens: Vec<usize> = self.episodes().map(|r| r.len()).collect();
        let full: Vec<f64> = returns
            .iter()
            .zip(&lens)
            .filter(|(_, &l)| l == t)
            .map(|(r, _)| *r)
            .collect();
        let pick = if full.is_empty() { returns } else { full };
        pick.iter().map(|r| normalize_return(*r, &self.refs)).sum::<f64>() / pick.len() as f64
    }

    /// A buffer holding every transition tagged offline, one episode id per
    /// dataset episode.
    pub fn to_replay(&self, capacity: usize) -> ReplayBuffer {
        let spec = self.env.spec();
        let mut buf = ReplayBuffer::new(capacity, spec.obs_dim, spec.act_dim);
        let returns = self.episode_returns();
        for (k, range) in self.episodes().enumerate() {
            for t in &self.transitions[range] {
                buf.push(t.clone(), Origin::Offline, k as u64, Some(returns[k]));
            }
        }
        buf
    }
}

const DATASET_MAGIC: &str = "ADAPTBC-DATASET";
const DATASET_VERSION: u32 = 1;

pub fn write_dataset<W: Write>(ds: &OfflineDataset, w: &mut W) -> Result<()> {
    let spec = ds.env.spec();
    let mut h = Header::new();
    h.put("version", DATASET_VERSION)
        .put("env_id", ds.env)
        .put("tier", ds.tier)
        .put("obs_dim", spec.obs_dim)
        .put("act_dim", spec.act_dim)
        .put("max_steps", spec.max_steps)
        .put("r_max", spec.r_max)
        .put("r_random", ds.refs.r_random)
        .put("r_expert", ds.refs.r_expert)
        .put("rmax_times_t", ds.refs.rmax_times_t)
        .put("reference_episodes", ds.refs.episodes)
        .put("transitions", ds.transitions.len())
        .put("episodes", ds.episode_starts.len())
        .put("seed", ds.seed);
    h.write_to(DATASET_MAGIC, w)?;
    let ts = &ds.transitions;
    textio::write_f32s(w, ts.iter().flat_map(|t| t.obs.iter().copied()))?;
    textio::write_f32s(w, ts.iter().flat_map(|t| t.action.iter().copied()))?;
    textio::write_f32s(w, ts.iter().map(|t| t.reward))?;
    textio::write_f32s(w, ts.iter().flat_map(|t| t.next_obs.iter().copied()))?;
    textio::write_f32s(w, ts.iter().map(|t| if t.terminal { 1.0 } else { 0.0 }))?;
    let starts = ds
        .episode_starts
        .iter()
        .map(|&s| u32::try_from(s).map_err(|_| Error::Format("dataset too large".into())))
        .collect::<Result<Vec<_>>>()?;
    textio::write_u32s(w, starts)
}

pub fn read_dataset<R: std::io::BufRead>(r: &mut R) -> Result<OfflineDataset> {
    let h = Header::read_from(DATASET_MAGIC, r)?;
    let version: u32 = h.get("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let env: EnvId = h.raw("env_id")?.parse()?;
    let spec = EnvSpec::of(env);
    let tier: Tier = h
        .raw("tier")?
        .parse()
        .map_err(|e| Error::Format(format!("{e}")))?;
    let (obs_dim, act_dim): (usize, usize) = (h.get("obs_dim")?, h.get("act_dim")?);
    if obs_dim != spec.obs_dim || act_dim != spec.act_dim || h.get::<usize>("max_steps")? != spec.max_steps {
        return Err(Error::Format(format!("header dimensions do not match `{env}`")));
    }
    let refs = ReferenceScores::new(
        h.get("r_random")?,
        h.get("r_expert")?,
        h.get("rmax_times_t")?,
        h.get("reference_episodes")?,
    )
    .map_err(|e| Error::Format(e.to_string()))?;
    let n: usize = h.get("transitions")?;
    let episodes: usize = h.get("episodes")?;
    // Refuse absurd counts before allocating.
    const LIMIT: usize = 1 << 28;
    if n > LIMIT || episodes > n {
        return Err(Error::Format(format!("implausible counts: {n} transitions, {episodes} episodes")));
    }
    let obs = textio::read_f32s(r, n * obs_dim)?;
    let actions = textio::read_f32s(r, n * act_dim)?;
    let rewards = textio::read_f32s(r, n)?;
    let next_obs = textio::read_f32s(r, n * obs_dim)?;
    let terminals = textio::read_f32s(r, n)?;
    let starts = textio::read_u32s(r, episodes)?;
    textio::expect_eof(r)?;

    let transitions = (0..n)
        .map(|i| Transition {
            obs: obs[i * obs_dim..(i + 1) * obs_dim].to_vec(),
            action: actions[i * act_dim..(i + 1) * act_dim].to_vec(),
            reward: rewards[i],
            next_obs: next_obs[i * obs_dim..(i + 1) * obs_dim].to_vec(),
            terminal: terminals[i] != 0.0,
        })
        .collect();
    let ds = OfflineDataset {
        env,
        tier,
        refs,
        seed: h.get("seed")?,
        transitions,
        episode_starts: starts.into_iter().map(|s| s as usize).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &OfflineDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(ds, &mut w)?;
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(file);
    read_dataset(&mut r)
}

/// Reads only the reference scores of a dataset file.
pub fn peek_references(path: &Path) -> Result<ReferenceScores> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(file.take(1 << 16));
    let h = Header::read_from(DATASET_MAGIC, &mut r)?;
    ReferenceScores::new(
        h.get("r_random")?,
        h.get("r_expert")?,
        h.get("rmax_times_t")?,
        h.get("reference_episodes")?,
    )
}
