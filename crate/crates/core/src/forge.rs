//! Dataset generation. One online training run (no behavior cloning,
//! twin critics) produces the expert, the medium snapshot and the replay
//! history; rollouts of those policies make up the tiers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{ActionBounds, Agent, AgentConfig, EnsembleMode};
use crate::dataset::{normalize_return, OfflineDataset, ReferenceScores, Tier};
use crate::env::{Env, EnvId, EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::replay::{Origin, ReplayBuffer};
use crate::rng::{self, Stream};
use crate::train::{
    evaluate_policy, evaluate_random, run_online, uniform_action, AlphaSchedule, EvalHook,
    EvalResult, EvalSettings, LearningCurve, OnlineSettings, Phase, TrainRngs,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeConfig {
    /// Environment steps of expert training.
    pub train_steps: u64,
    pub random_steps: u64,
    pub utd: usize,
    pub snapshot_interval: u64,
    pub snapshot_episodes: usize,
    pub reference_episodes: usize,
    /// Gaussian action noise during rollouts, as a fraction of the range.
    pub collect_noise: f64,
    pub medium_band: (f64, f64),
    pub agent: AgentConfig,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            train_steps: 30_000,
            random_steps: 1_000,
            utd: 1,
            snapshot_interval: 500,
            snapshot_episodes: 10,
            reference_episodes: 100,
            collect_noise: 0.05,
            medium_band: (0.4, 0.6),
            agent: AgentConfig {
                n_critics: 2,
                m_subset: 2,
                ensemble_mode: EnsembleMode::Twin,
                hidden: [64, 64],
                ..AgentConfig::default()
            },
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.train_steps == 0 || self.snapshot_interval == 0 || self.snapshot_episodes == 0 {
            return Err(Error::InvalidConfig(
                "forge.train_steps, forge.snapshot_interval and forge.snapshot_episodes must be positive".into(),
            ));
        }
        if self.reference_episodes == 0 {
            return Err(Error::InvalidConfig("forge.reference_episodes must be positive".into()));
        }
        if !(self.collect_noise >= 0.0) {
            return Err(Error::InvalidConfig("forge.collect_noise must be non-negative".into()));
        }
        let (lo, hi) = self.medium_band;
        if !(lo < hi) {
            return Err(Error::InvalidConfig("medium band must be a non-empty interval".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: u64,
    pub actor: DenseNet<f32>,
    pub eval_mean: f64,
}

#[derive(Default)]
struct Snapshots(Vec<Snapshot>);

impl EvalHook for Snapshots {
    fn on_eval(&mut self, step: u64, agent: &Agent<f32>, result: &EvalResult) -> Result<()> {
        self.0.push(Snapshot {
            step,
            actor: agent.actor.clone(),
            eval_mean: result.mean,
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Forged {
    /// One dataset per tier, in `Tier::ALL` order.
    pub datasets: Vec<OfflineDataset>,
    pub refs: ReferenceScores,
    /// Expert training curve with raw (unnormalized) returns.
    pub curve: LearningCurve,
    pub medium_step: u64,
    pub expert_step: u64,
    pub snapshot_scores: Vec<(u64, f64)>,
}

impl Forged {
    pub fn tier(&self, tier: Tier) -> &OfflineDataset {
        self.datasets.iter().find(|d| d.tier == tier).expect("every tier is forged")
    }
}

/// Rollouts totalling exactly `n` transitions; the last episode may be cut short.
fn collect(
    spec: &EnvSpec,
    actor: Option<&DenseNet<f32>>,
    n: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Transition>, Vec<usize>)> {
    let bounds = ActionBounds::of(spec);
    let sigma = bounds.scaled(noise);
    let mut transitions = Vec::with_capacity(n);
    let mut starts = Vec::new();
    while transitions.len() < n {
        starts.push(transitions.len());
        let (mut env, mut obs) = Env::reset(spec, rng.random());
        while transitions.len() < n {
            let a = match actor {
                Some(actor) => crate::agent::select_action(actor, &obs, &sigma, &bounds, rng)?,
                None => uniform_action(spec, rng),
            };
            let out = env.step(&a)?;
            transitions.push(Transition {
                obs: obs.iter().map(|&v| v as f32).collect(),
                action: a.iter().map(|&v| v as f32).collect(),
                reward: out.reward as f32,
                next_obs: out.obs.iter().map(|&v| v as f32).collect(),
                terminal: out.terminal,
            });
            obs = out.obs;
            if out.terminal || out.truncated {
                break;
            }
        }
    }
    Ok((transitions, starts))
}

fn replay_prefix(buffer: &ReplayBuffer, n: usize) -> (Vec<Transition>, Vec<usize>) {
    let mut transitions = Vec::with_capacity(n);
    let mut starts = Vec::new();
    let mut last = None;
    for e in buffer.iter().filter(|e| e.origin == Origin::Online).take(n) {
        if last != Some(e.episode) {
            starts.push(transitions.len());
            last = Some(e.episode);
        }
        transitions.push(e.transition.clone());
    }
    (transitions, starts)
}

fn prefix(ts: &[Transition], starts: &[usize], n: usize) -> (Vec<Transition>, Vec<usize>) {
    let n = n.min(ts.len());
    (ts[..n].to_vec(), starts.iter().copied().filter(|&s| s < n).collect())
}

/// Trains the expert and builds every tier. `size` transitions per tier,
/// except medium_replay, which is the whole history up to the medium snapshot.
pub fn forge_datasets(env: EnvId, size: usize, seed: u64, cfg: &ForgeConfig) -> Result<Forged> {
    cfg.validate()?;
    let spec = env.spec();
    if size < spec.max_steps {
        return Err(Error::InvalidConfig(format!(
            "dataset.size {size} is shorter than one episode ({})",
            spec.max_steps
        )));
    }

    let mut agent = Agent::<f32>::new(cfg.agent.clone(), &spec, rng::stream(seed, Stream::Init).random())?;
    let mut buffer = ReplayBuffer::new(cfg.train_steps as usize + 1, spec.obs_dim, spec.act_dim);
    let settings = OnlineSettings {
        steps: cfg.train_steps,
        utd: cfg.utd,
        eval: EvalSettings {
            interval: cfg.snapshot_interval,
            episodes: cfg.snapshot_episodes,
        },
        random_steps: cfg.random_steps,
        learn_start: cfg.agent.batch_size,
        wall_clock: false,
    };
    let mut rngs = TrainRngs::new(seed);
    let mut snaps = Snapshots::default();
    let outcome = run_online(
        &mut agent,
        &mut buffer,
        &spec,
        &mut AlphaSchedule::Fixed(0.0),
        None,
        &settings,
        &mut rngs,
        Phase::Forge,
        &mut snaps,
    )?;
    let snaps = snaps.0;

    // Ties go to the later snapshot, which has trained longer.
    let best = snaps
        .iter()
        .max_by(|a, b| a.eval_mean.total_cmp(&b.eval_mean))
        .expect("step 0 is always evaluated");
    let ref_seed = rng::sub_seed(seed, 1 << 40);
    let r_expert = evaluate_policy(&best.actor, &spec, cfg.reference_episodes, ref_seed)?.mean;
    let r_random = evaluate_random(&spec, cfg.reference_episodes, ref_seed)?.mean;
    let refs = ReferenceScores::new(r_random, r_expert, spec.max_return(), cfg.reference_episodes)?;

    let (lo, hi) = cfg.medium_band;
    let scores: Vec<(u64, f64)> = snaps
        .iter()
        .map(|s| (s.step, normalize_return(s.eval_mean, &refs)))
        .collect();
    let medium = snaps
        .iter()
        .zip(&scores)
        .find(|(s, (_, n))| s.step > 0 && (lo..=hi).contains(n))
        .map(|(s, _)| s)
        .ok_or_else(|| Error::MediumBandNotReached {
            low: lo,
            high: hi,
            best: scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max),
        })?;

    let tier_rng = |t: usize| rng::stream(rng::sub_seed(seed, t as u64), Stream::Forge);
    let make = |tier, (transitions, episode_starts): (Vec<Transition>, Vec<usize>)| {
        let ds = OfflineDataset {
            env,
            tier,
            refs,
            seed,
            transitions,
            episode_starts,
        };
        ds.validate().map(|_| ds)
    };
    let random = make(Tier::Random, collect(&spec, None, size, 0.0, &mut tier_rng(0))?)?;
    let medium_ds = make(
        Tier::Medium,
        collect(&spec, Some(&medium.actor), size, cfg.collect_noise, &mut tier_rng(1))?,
    )?;
    let medium_replay = make(Tier::MediumReplay, replay_prefix(&buffer, medium.step as usize))?;
    let expert = make(
        Tier::Expert,
        collect(&spec, Some(&best.actor), size, cfg.collect_noise, &mut tier_rng(4))?,
    )?;
    let half = size / 2;
    let (mut ts, mut starts) = prefix(&medium_ds.transitions, &medium_ds.episode_starts, half);
    let (ets, estarts) = prefix(&expert.transitions, &expert.episode_starts, size - half);
    starts.extend(estarts.iter().map(|s| s + ts.len()));
    ts.extend(ets);
    let medium_expert = make(Tier::MediumExpert, (ts, starts))?;

    Ok(Forged {
        datasets: vec![random, medium_ds, medium_replay, medium_expert, expert],
        refs,
        curve: outcome.curve,
        medium_step: medium.step,
        expert_step: best.step,
        snapshot_scores: scores,
    })
}

pub fn generate_dataset(env: EnvId, tier: Tier, size: usize, seed: u64, cfg: &ForgeConfig) -> Result<OfflineDataset> {
    let forged = forge_datasets(env, size, seed, cfg)?;
    Ok(forged.tier(tier).clone())
}
