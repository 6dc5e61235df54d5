//! Training loops: policy evaluation, offline pre-training and the online
//! loop shared by expert training and fine-tuning.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adaptive_bc::AlphaController;
use crate::agent::{select_action, ActionBounds, Agent};
use crate::dataset::{normalize_return, OfflineDataset, ReferenceScores};
use crate::env::{Env, EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, Real};
use crate::replay::{DownsampleMode, Origin, ReplayBuffer};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalResult {
    fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        EvalResult {
            mean,
            std: var.sqrt(),
            returns,
        }
    }
}

fn run_episode<F>(spec: &EnvSpec, seed: u64, mut policy: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let (mut env, mut obs) = Env::reset(spec, seed);
    let mut ret = 0.0;
    loop {
        let out = env.step(&policy(&obs)?)?;
        ret += out.reward;
        if out.terminal || out.truncated {
            return Ok(ret);
        }
        obs = out.obs;
    }
}

/// Deterministic rollouts of `actor` on fresh environments, one sub-seed
/// of `seed` per episode.
pub fn evaluate_policy<T: Real>(
    actor: &DenseNet<T>,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    let bounds = ActionBounds::of(spec);
    let zero = vec![0.0; spec.act_dim];
    // σ = 0 draws nothing; the generator only satisfies the signature.
    let mut unused = rng::stream(seed, Stream::Eval);
    let returns = (0..episodes)
        .map(|i| {
            run_episode(spec, rng::sub_seed(seed, i as u64), |obs| {
                select_action(actor, obs, &zero, &bounds, &mut unused)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_returns(returns))
}

pub fn uniform_action<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Vec<f64> {
    spec.action_low
        .iter()
        .zip(&spec.action_high)
        .map(|(&l, &h)| rng.random_range(l..=h))
        .collect()
}

/// Rollouts of the uniform-random policy.
pub fn evaluate_random(spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalResult> {
    let mut actions = rng::stream(seed, Stream::Exploration);
    let returns = (0..episodes)
        .map(|i| run_episode(spec, rng::sub_seed(seed, i as u64), |_| Ok(uniform_action(spec, &mut actions))))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_returns(returns))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Offline,
    Online,
    Forge,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
            Phase::Forge => "forge",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Phase::Offline),
            "online" => Ok(Phase::Online),
            "forge" => Ok(Phase::Forge),
            _ => Err(Error::Format(format!("unknown phase `{s}`"))),
        }
    }
}

/// One line of a learning curve. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub phase: Phase,
    pub step: u64,
    pub episode_return: Option<f64>,
    pub normalized_return: Option<f64>,
    pub alpha_online: Option<f64>,
    pub r_avg: Option<f64>,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub td_loss: Option<f64>,
    pub wall_seconds: Option<f64>,
}

impl CurveRow {
    pub fn new(phase: Phase, step: u64) -> Self {
        CurveRow {
            phase,
            step,
            episode_return: None,
            normalized_return: None,
            alpha_online: None,
            r_avg: None,
            eval_mean: None,
            eval_std: None,
            td_loss: None,
            wall_seconds: None,
        }
    }

    fn cells(&self) -> [Option<f64>; 8] {
        [
            self.episode_return,
            self.normalized_return,
            self.alpha_online,
            self.r_avg,
            self.eval_mean,
            self.eval_std,
            self.td_loss,
            self.wall_seconds,
        ]
    }

    fn cells_mut(&mut self) -> [&mut Option<f64>; 8] {
        [
            &mut self.episode_return,
            &mut self.normalized_return,
            &mut self.alpha_online,
            &mut self.r_avg,
            &mut self.eval_mean,
            &mut self.eval_std,
            &mut self.td_loss,
            &mut self.wall_seconds,
        ]
    }
}

pub const CURVE_HEADER: &str = "phase,step,episode_return,normalized_return,alpha_online,r_avg,eval_mean,eval_std,td_loss,wall_seconds";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    /// Appends a row, merging it into the last one when phase and step match.
    pub fn push(&mut self, row: CurveRow) {
        if let Some(last) = self.rows.last_mut() {
            if last.phase == row.phase && last.step == row.step {
                for (dst, src) in last.cells_mut().into_iter().zip(row.cells()) {
                    if src.is_some() {
                        *dst = src;
                    }
                }
                return;
            }
        }
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: LearningCurve) {
        for r in other.rows {
            self.push(r);
        }
    }

    pub fn eval_rows(&self) -> impl Iterator<Item = &CurveRow> {
        self.rows.iter().filter(|r| r.eval_mean.is_some())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CURVE_HEADER}")?;
        for r in &self.rows {
            write!(w, "{},{}", r.phase, r.step)?;
            for c in r.cells() {
                match c {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CURVE_HEADER) {
            return Err(Error::Format("curve header does not match".into()));
        }
        let mut curve = LearningCurve::default();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 10 {
                return Err(Error::Format(format!("curve row `{line}` has {} fields", fields.len())));
            }
            let step = fields[1]
                .parse()
                .map_err(|_| Error::Format(format!("bad step `{}`", fields[1])))?;
            let mut row = CurveRow::new(fields[0].parse()?, step);
            for (dst, src) in row.cells_mut().into_iter().zip(&fields[2..]) {
                if !src.is_empty() {
                    *dst = Some(src.parse().map_err(|_| Error::Format(format!("bad cell `{src}`")))?);
                }
            }
            curve.rows.push(row);
        }
        Ok(curve)
    }
}

struct Clock(Option<Instant>);

impl Clock {
    fn new(enabled: bool) -> Self {
        Clock(enabled.then(Instant::now))
    }

    fn read(&self) -> Option<f64> {
        self.0.map(|t| t.elapsed().as_secs_f64())
    }
}

/// Generators a run draws from; evaluation has its own fixed seed and never
/// touches these.
pub struct TrainRngs {
    pub env: ChaCha8Rng,
    pub exploration: ChaCha8Rng,
    pub minibatch: ChaCha8Rng,
    pub subset: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub downsample: ChaCha8Rng,
    pub eval_seed: u64,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        TrainRngs {
            env: rng::stream(seed, Stream::Env),
            exploration: rng::stream(seed, Stream::Exploration),
            minibatch: rng::stream(seed, Stream::Minibatch),
            subset: rng::stream(seed, Stream::EnsembleSubset),
            noise: rng::stream(seed, Stream::TargetNoise),
            downsample: rng::stream(seed, Stream::Downsample),
            eval_seed: rng::sub_seed(seed, u64::from(u32::MAX)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub interval: u64,
    pub episodes: usize,
}

/// Score used in curves: normalized when references are known.
fn score(r: f64, refs: Option<&ReferenceScores>) -> f64 {
    refs.map_or(r, |refs| normalize_return(r, refs))
}

fn eval_row(
    phase: Phase,
    step: u64,
    agent: &Agent<f32>,
    spec: &EnvSpec,
    eval: &EvalSettings,
    eval_seed: u64,
    refs: Option<&ReferenceScores>,
) -> Result<(CurveRow, EvalResult)> {
    let res = evaluate_policy(&agent.actor, spec, eval.episodes, eval_seed)?;
    let scores: Vec<f64> = res.returns.iter().map(|&r| score(r, refs)).collect();
    let norm = EvalResult::from_returns(scores);
    let mut row = CurveRow::new(phase, step);
    row.eval_mean = Some(norm.mean);
    row.eval_std = Some(norm.std);
    Ok((row, res))
}

/// `steps` critic updates on the dataset with fixed `alpha`, evaluating
/// at step 0 and every `eval.interval` steps.
pub fn pretrain_offline(
    agent: &mut Agent<f32>,
    dataset: &OfflineDataset,
    steps: u64,
    alpha: f64,
    eval: &EvalSettings,
    seed: u64,
    wall_clock: bool,
) -> Result<LearningCurve> {
    let spec = dataset.env.spec();
    if agent.obs_dim != spec.obs_dim || agent.bounds.dim() != spec.act_dim {
        return Err(Error::InvalidConfig(format!(
            "agent dimensions do not match dataset environment `{}`",
            dataset.env
        )));
    }
    if eval.interval == 0 {
        return Err(Error::InvalidConfig("eval interval must be positive".into()));
    }
    let clock = Clock::new(wall_clock);
    let mut rngs = TrainRngs::new(seed);
    let buffer = dataset.to_replay(dataset.len());
    let refs = Some(&dataset.refs);
    agent.begin_phase();
    let mut curve = LearningCurve::default();
    let (mut row, _) = eval_row(Phase::Offline, 0, agent, &spec, eval, rngs.eval_seed, refs)?;
    row.alpha_online = Some(alpha);
    row.wall_seconds = clock.read();
    curve.push(row);
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;
    for k in 1..=steps {
        let batch = buffer.sample_minibatch(agent.config.batch_size, &mut rngs.minibatch)?;
        let stats = agent.train_step(&batch, alpha, &mut rngs.noise, &mut rngs.subset)?;
        loss_sum += stats.critic_loss;
        loss_n += 1;
        if k % eval.interval == 0 {
            let (mut row, _) = eval_row(Phase::Offline, k, agent, &spec, eval, rngs.eval_seed, refs)?;
            row.alpha_online = Some(alpha);
            row.td_loss = Some(loss_sum / loss_n as f64);
            row.wall_seconds = clock.read();
            curve.push(row);
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    Ok(curve)
}

/// Source of the behavior-cloning weight during online training.
#[derive(Debug, Clone)]
pub enum AlphaSchedule {
    Fixed(f64),
    Adaptive(AlphaController),
}

impl AlphaSchedule {
    pub fn current(&self) -> f64 {
        match self {
            AlphaSchedule::Fixed(a) => *a,
            AlphaSchedule::Adaptive(c) => c.alpha(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSettings {
    pub steps: u64,
    /// Critic updates per environment step.
    pub utd: usize,
    pub eval: EvalSettings,
    /// Environment steps that use uniform-random actions.
    pub random_steps: u64,
    /// No updates until the buffer holds this many transitions.
    pub learn_start: usize,
    pub wall_clock: bool,
}

/// Observer for the online loop's evaluations.
pub trait EvalHook {
    fn on_eval(&mut self, step: u64, agent: &Agent<f32>, result: &EvalResult) -> Result<()>;
}

impl EvalHook for () {
    fn on_eval(&mut self, _: u64, _: &Agent<f32>, _: &EvalResult) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub curve: LearningCurve,
    pub episodes: u64,
    pub adaptations: u64,
}

/// Interacts for `settings.steps` environment steps, storing every
/// transition online-tagged and running `utd` updates after each step.
/// Evaluation happens at step 0 and every `eval.interval` steps and never
/// counts toward the step budget.
#[allow(clippy::too_many_arguments)]
pub fn run_online<H: EvalHook>(
    agent: &mut Agent<f32>,
    buffer: &mut ReplayBuffer,
    spec: &EnvSpec,
    schedule: &mut AlphaSchedule,
    refs: Option<&ReferenceScores>,
    settings: &OnlineSettings,
    rngs: &mut TrainRngs,
    phase: Phase,
    hook: &mut H,
) -> Result<OnlineOutcome> {
    if settings.eval.interval == 0 {
        return Err(Error::InvalidConfig("eval interval must be positive".into()));
    }
    if matches!(schedule, AlphaSchedule::Adaptive(_)) && refs.is_none() {
        return Err(Error::InvalidConfig("adaptive alpha needs reference scores".into()));
    }
    let clock = Clock::new(settings.wall_clock);
    let sigma = agent.exploration_sigma();
    agent.begin_phase();
    let mut curve = LearningCurve::default();
    let eval_seed = rngs.eval_seed;
    let mut log_eval = |step: u64, agent: &Agent<f32>, alpha: f64, r_avg: Option<f64>, loss: Option<f64>, curve: &mut LearningCurve| -> Result<()> {
        let (mut row, res) = eval_row(phase, step, agent, spec, &settings.eval, eval_seed, refs)?;
        row.alpha_online = Some(alpha);
        row.r_avg = r_avg;
        row.td_loss = loss;
        row.wall_seconds = clock.read();
        curve.push(row);
        hook.on_eval(step, agent, &res)
    };
    let r_avg = |s: &AlphaSchedule| match s {
        AlphaSchedule::Adaptive(c) => c.r_avg(),
        AlphaSchedule::Fixed(_) => None,
    };
    log_eval(0, agent, schedule.current(), r_avg(schedule), None, &mut curve)?;

    let episode_base = buffer.iter().map(|e| e.episode + 1).max().unwrap_or(0);
    let mut episode = 0u64;
    let (mut env, mut obs) = Env::reset(spec, rngs.env.random());
    let mut ep_return = 0.0;
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;
    let mut adaptations = 0;
    for t in 1..=settings.steps {
        let action = if t <= settings.random_steps {
            uniform_action(spec, &mut rngs.exploration)
        } else {
            agent.act(&obs, &sigma, &mut rngs.exploration)?
        };
        let out = env.step(&action)?;
        buffer.push(
            Transition {
                obs: obs.iter().map(|&v| v as f32).collect(),
                action: action.iter().map(|&v| v as f32).collect(),
                reward: out.reward as f32,
                next_obs: out.obs.iter().map(|&v| v as f32).collect(),
                terminal: out.terminal,
            },
            Origin::Online,
            episode_base + episode,
            None,
        );
        ep_return += out.reward;
        obs = out.obs;

        if buffer.len() >= settings.learn_start.max(1) {
            let alpha = schedule.current();
            for _ in 0..settings.utd {
                let batch = buffer.sample_minibatch(agent.config.batch_size, &mut rngs.minibatch)?;
                let stats = agent.train_step(&batch, alpha, &mut rngs.noise, &mut rngs.subset)?;
                loss_sum += stats.critic_loss;
                loss_n += 1;
            }
        }

        if out.terminal || out.truncated {
            buffer.set_episode_return(Origin::Online, episode_base + episode, ep_return);
            let normalized = refs.map(|r| normalize_return(ep_return, r));
            if let AlphaSchedule::Adaptive(c) = schedule {
                c.adapt(normalized.expect("checked above"))?;
                adaptations += 1;
            }
            let mut row = CurveRow::new(phase, t);
            row.episode_return = Some(ep_return);
            row.normalized_return = normalized;
            row.alpha_online = Some(schedule.current());
            row.r_avg = r_avg(schedule);
            row.wall_seconds = clock.read();
            curve.push(row);
            episode += 1;
            ep_return = 0.0;
            (env, obs) = Env::reset(spec, rngs.env.random());
        }

        if t % settings.eval.interval == 0 {
            let loss = (loss_n > 0).then(|| loss_sum / loss_n as f64);
            log_eval(t, agent, schedule.current(), r_avg(schedule), loss, &mut curve)?;
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    Ok(OnlineOutcome {
        curve,
        episodes: episode,
        adaptations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSettings {
    pub online: OnlineSettings,
    pub keep_fraction: f64,
    pub downsample_mode: DownsampleMode,
    pub capacity: usize,
}

/// Seeds a buffer with the dataset, downsamples the offline part and runs
/// the online loop.
pub fn finetune_online(
    agent: &mut Agent<f32>,
    dataset: &OfflineDataset,
    schedule: &mut AlphaSchedule,
    settings: &FinetuneSettings,
    seed: u64,
) -> Result<OnlineOutcome> {
    let spec = dataset.env.spec();
    if agent.obs_dim != spec.obs_dim || agent.bounds.dim() != spec.act_dim {
        return Err(Error::InvalidConfig(format!(
            "agent dimensions do not match dataset environment `{}`",
            dataset.env
        )));
    }
    let mut rngs = TrainRngs::new(seed);
    let mut buffer = dataset.to_replay(settings.capacity.max(dataset.len()));
    buffer.downsample(settings.keep_fraction, settings.downsample_mode, &mut rngs.downsample)?;
    run_online(
        agent,
        &mut buffer,
        &spec,
        schedule,
        Some(&dataset.refs),
        &settings.online,
        &mut rngs,
        Phase::Online,
        &mut (),
    )
}
