//! TD3-style actor-critic with an N-critic randomized ensemble and a
//! behavior-cloning term in the policy objective.
//!
//! Critic step: every critic regresses onto one shared target
//! `r + γ (1 - done) min_{i ∈ S} Q'_i(s', a')`, where `S` is drawn once per
//! update and `a'` is the smoothed target-policy action.
//!
//! Actor step (every `policy_delay` critic steps): ascend
//! `mean_b [ (1/N) Σ_i Q_i(s, π(s)) / (mean_b |Q_i| + ε) - α · mean_j (π(s)_j - a_j)² ]`
//! with the normalizer held constant.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, DenseNet, Head, Mat, ParamGrads, Real};
use crate::replay::Minibatch;
use crate::textio::{self, Header};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMode {
    /// Random subset of `M` target critics, redrawn every update.
    RedqRandomPair,
    /// Minimum over all `N` target critics.
    FullMin,
    /// Critics 0 and 1 only (classic clipped double Q).
    Twin,
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleMode::RedqRandomPair => "redq_random_pair",
            EnsembleMode::FullMin => "full_min",
            EnsembleMode::Twin => "twin",
        })
    }
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "redq_random_pair" | "redq" => Ok(EnsembleMode::RedqRandomPair),
            "full_min" => Ok(EnsembleMode::FullMin),
            "twin" => Ok(EnsembleMode::Twin),
            _ => Err(Error::InvalidConfig(format!("unknown ensemble mode `{s}`"))),
        }
    }
}

/// Hyperparameters. Noise scales are fractions of each action dimension's range.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub n_critics: usize,
    pub m_subset: usize,
    pub batch_size: usize,
    pub expl_noise: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    pub ensemble_mode: EnsembleMode,
    pub q_norm_epsilon: f64,
    /// Normalize by `mean |Q|` (true) or the signed `mean Q` (false).
    pub q_norm_abs: bool,
    /// Draw a target subset per transition instead of per update.
    pub per_sample_subsets: bool,
    pub hidden: [usize; 2],
    pub actor_adam: AdamConfig,
    pub critic_adam: AdamConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            tau: 0.005,
            n_critics: 10,
            m_subset: 2,
            batch_size: 256,
            expl_noise: 0.1,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            ensemble_mode: EnsembleMode::RedqRandomPair,
            q_norm_epsilon: 1e-6,
            q_norm_abs: true,
            per_sample_subsets: false,
            hidden: [256, 256],
            actor_adam: AdamConfig::default(),
            critic_adam: AdamConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        // N = M = 1 is admitted as the degenerate single-critic case.
        let degenerate = self.n_critics == 1 && self.m_subset == 1;
        if !degenerate && !(2 <= self.m_subset && self.m_subset <= self.n_critics) {
            return bad("ensemble sizes must satisfy 2 <= M <= N");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.policy_delay == 0 || self.batch_size == 0 {
            return bad("policy_delay and batch_size must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.expl_noise < 0.0 || self.policy_noise < 0.0 || self.noise_clip < 0.0 {
            return bad("noise scales must be non-negative");
        }
        if !(self.q_norm_epsilon > 0.0) {
            return bad("q_norm_epsilon must be positive");
        }
        Ok(())
    }

    /// Critic indices used by non-random modes.
    fn fixed_subset(&self) -> Vec<usize> {
        match self.ensemble_mode {
            EnsembleMode::FullMin => (0..self.n_critics).collect(),
            EnsembleMode::Twin => (0..self.n_critics.min(2)).collect(),
            EnsembleMode::RedqRandomPair => unreachable!("random subsets are drawn"),
        }
    }

    /// Draws the critic subset for one target computation.
    pub fn draw_subset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        match self.ensemble_mode {
            EnsembleMode::RedqRandomPair => {
                let mut s = index::sample(rng, self.n_critics, self.m_subset).into_vec();
                s.sort_unstable();
                s
            }
            _ => self.fixed_subset(),
        }
    }
}

/// Per-dimension action box.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn of(spec: &EnvSpec) -> Self {
        ActionBounds {
            low: spec.action_low.clone(),
            high: spec.action_high.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    /// `fraction` times each dimension's range.
    pub fn scaled(&self, fraction: f64) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| fraction * (h - l))
            .collect()
    }
}

/// Independent `N(0, σ_j²)` draws, one per action dimension.
pub fn gaussian_noise<R: Rng + ?Sized>(sigma: &[f64], rng: &mut R) -> Vec<f64> {
    sigma
        .iter()
        .map(|&s| {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        })
        .collect()
}

/// `clip(actor(obs) + N(0, σ²), low, high)`. With `σ = 0` no randomness is consumed.
pub fn select_action<T: Real, R: Rng + ?Sized>(
    actor: &DenseNet<T>,
    obs: &[f64],
    sigma: &[f64],
    bounds: &ActionBounds,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let x = Mat::from_vec(1, obs.len(), obs.iter().map(|&v| T::of(v)).collect())?;
    let mut a: Vec<f64> = actor.predict(&x)?.row(0).iter().map(|v| v.as_f64()).collect();
    if sigma.iter().any(|&s| s > 0.0) {
        for (ai, n) in a.iter_mut().zip(gaussian_noise(sigma, rng)) {
            *ai += n;
        }
    }
    for (j, ai) in a.iter_mut().enumerate() {
        *ai = ai.clamp(bounds.low[j], bounds.high[j]);
    }
    Ok(a)
}

/// `r + γ (1 - done) min_{i ∈ subset} q[i][b]` for every transition `b`.
pub fn subset_min_target<T: Real>(
    next_q: &[Vec<T>],
    subset: &[usize],
    rewards: &[T],
    terminals: &[T],
    gamma: f64,
) -> Vec<T> {
    let g = T::of(gamma);
    (0..rewards.len())
        .map(|b| {
            let m = subset
                .iter()
                .map(|&i| next_q[i][b])
                .fold(T::infinity(), T::min);
            rewards[b] + g * (T::one() - terminals[b]) * m
        })
        .collect()
}

/// Result of a target computation.
#[derive(Debug, Clone)]
pub struct CriticTargets<T> {
    pub targets: Vec<T>,
    /// Subset used for every transition (empty in per-sample mode).
    pub subset: Vec<usize>,
}

/// Critic regression targets; one subset and one smoothed `a'` per call,
/// shared by the whole batch.
#[allow(clippy::too_many_arguments)]
pub fn compute_critic_target<T: Real, R: Rng + ?Sized>(
    batch: &Minibatch<T>,
    target_actor: &DenseNet<T>,
    target_critics: &[DenseNet<T>],
    config: &AgentConfig,
    bounds: &ActionBounds,
    noise_rng: &mut R,
    subset_rng: &mut R,
) -> Result<CriticTargets<T>> {
    let b = batch.len();
    let act_dim = bounds.dim();
    let sigma = bounds.scaled(config.policy_noise);
    let clip = bounds.scaled(config.noise_clip);
    let mut next_a = target_actor.predict(&batch.next_obs)?;
    for r in 0..b {
        let row = next_a.row_mut(r);
        for j in 0..act_dim {
            let z: f64 = StandardNormal.sample(noise_rng);
            let eps = (sigma[j] * z).clamp(-clip[j], clip[j]);
            let v = (row[j].as_f64() + eps).clamp(bounds.low[j], bounds.high[j]);
            row[j] = T::of(v);
        }
    }
    let input = Mat::hconcat(&batch.next_obs, &next_a)?;
    let n = target_critics.len();

    if config.per_sample_subsets && config.ensemble_mode == EnsembleMode::RedqRandomPair {
        let q: Vec<Vec<T>> = target_critics
            .iter()
            .map(|c| c.predict(&input).map(Mat::into_vec))
            .collect::<Result<_>>()?;
        let g = T::of(config.gamma);
        let targets = (0..b)
            .map(|k| {
                let subset = config.draw_subset(subset_rng);
                let m = subset.iter().map(|&i| q[i][k]).fold(T::infinity(), T::min);
                batch.rewards[k] + g * (T::one() - batch.terminals[k]) * m
            })
            .collect();
        return Ok(CriticTargets {
            targets,
            subset: Vec::new(),
        });
    }

    let subset = config.draw_subset(subset_rng);
    let mut q = vec![Vec::new(); n];
    for &i in &subset {
        q[i] = target_critics[i].predict(&input)?.into_vec();
    }
    let targets = subset_min_target(&q, &subset, &batch.rewards, &batch.terminals, config.gamma);
    Ok(CriticTargets { targets, subset })
}

/// `q / (mean(|q|) + ε)` and the denominator. The denominator is a constant
/// for differentiation purposes.
pub fn qbar_normalize<T: Real>(q: &[T], epsilon: f64, use_abs: bool) -> (Vec<T>, T) {
    let n = T::of(q.len().max(1) as f64);
    let mean = if use_abs {
        q.iter().map(|v| v.abs()).sum::<T>() / n
    } else {
        q.iter().copied().sum::<T>() / n
    };
    let denom = mean + T::of(epsilon);
    (q.iter().map(|&v| v / denom).collect(), denom)
}

/// Components of the actor objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStats {
    /// Ensemble-average normalized Q term.
    pub q_term: f64,
    /// Mean squared distance to dataset actions.
    pub bc_term: f64,
    /// `q_term - α · bc_term`, the maximized quantity.
    pub objective: f64,
}

/// Gradient of the negated actor objective with respect to actor parameters.
pub fn actor_objective_grad<T: Real>(
    actor: &DenseNet<T>,
    critics: &[DenseNet<T>],
    batch: &Minibatch<T>,
    alpha: f64,
    config: &AgentConfig,
) -> Result<(ActorStats, ParamGrads<T>)> {
    let b = batch.len();
    let obs_dim = batch.obs.cols();
    let act_dim = actor.output_dim();
    let n = critics.len();
    let (pi, actor_cache) = actor.forward(&batch.obs)?;
    let input = Mat::hconcat(&batch.obs, &pi)?;

    let mut d_pi = Mat::<T>::zeros(b, act_dim);
    let mut q_term = 0.0;
    for critic in critics {
        let (q, cache) = critic.forward(&input)?;
        let (qn, denom) = qbar_normalize(q.as_slice(), config.q_norm_epsilon, config.q_norm_abs);
        q_term += qn.iter().map(|v| v.as_f64()).sum::<f64>() / (b * n) as f64;
        let dq = Mat::from_vec(b, 1, vec![-T::one() / (T::of((b * n) as f64) * denom); b])?;
        let dx = critic.backward_inputs(&cache, &dq)?;
        for r in 0..b {
            for (d, &g) in d_pi.row_mut(r).iter_mut().zip(&dx.row(r)[obs_dim..]) {
                *d += g;
            }
        }
    }

    let mut bc = 0.0;
    let scale = T::of(2.0 * alpha / (b * act_dim) as f64);
    for r in 0..b {
        let (p, a) = (pi.row(r), batch.actions.row(r));
        let d = d_pi.row_mut(r);
        for j in 0..act_dim {
            let diff = p[j] - a[j];
            bc += diff.as_f64() * diff.as_f64();
            d[j] += scale * diff;
        }
    }
    bc /= (b * act_dim) as f64;

    let (grads, _) = actor.backward(&actor_cache, &d_pi)?;
    Ok((
        ActorStats {
            q_term,
            bc_term: bc,
            objective: q_term - alpha * bc,
        },
        grads,
    ))
}

/// `target ← τ · online + (1 − τ) · target`.
pub fn polyak_update<T: Real>(online: &DenseNet<T>, target: &mut DenseNet<T>, tau: f64) -> Result<()> {
    if !online.same_shape(target) {
        return Err(Error::Shape("polyak update between different architectures".into()));
    }
    let t = T::of(tau);
    let keep = T::of(1.0 - tau);
    let src = online.params();
    for (p, &o) in target.params_mut().iter_mut().zip(src) {
        *p = if tau == 1.0 { o } else { t * o + keep * *p };
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CriticStats<T> {
    /// Mean over critics and transitions of the squared residual.
    pub loss: f64,
    pub targets: CriticTargets<T>,
}

#[derive(Debug, Clone)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor: Option<ActorStats>,
}

/// Actor, critic ensemble, their targets and optimizer states.
#[derive(Debug, Clone)]
pub struct Agent<T: Real = f32> {
    pub config: AgentConfig,
    pub bounds: ActionBounds,
    pub obs_dim: usize,
    pub actor: DenseNet<T>,
    pub critics: Vec<DenseNet<T>>,
    pub target_actor: DenseNet<T>,
    pub target_critics: Vec<DenseNet<T>>,
    actor_opt: Adam<T>,
    critic_opts: Vec<Adam<T>>,
    critic_steps: u64,
    actor_steps: u64,
    phase_critic_steps: u64,
}

impl<T: Real> Agent<T> {
    pub fn new(config: AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let bounds = ActionBounds::of(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h1, h2] = config.hidden;
        let actor = DenseNet::with_seed(
            &[spec.obs_dim, h1, h2, spec.act_dim],
            Head::ScaledTanh {
                low: bounds.low.clone(),
                high: bounds.high.clone(),
            },
            rng.random(),
        )?;
        let critics = (0..config.n_critics)
            .map(|_| {
                DenseNet::with_seed(
                    &[spec.obs_dim + spec.act_dim, h1, h2, 1],
                    Head::Linear,
                    rng.random(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_nets(config, bounds, spec.obs_dim, actor, critics))
    }

    /// Wraps given networks; targets start as exact copies.
    pub fn from_nets(
        config: AgentConfig,
        bounds: ActionBounds,
        obs_dim: usize,
        actor: DenseNet<T>,
        critics: Vec<DenseNet<T>>,
    ) -> Self {
        let actor_opt = Adam::new(actor.param_count(), config.actor_adam);
        let critic_opts = critics
            .iter()
            .map(|c| Adam::new(c.param_count(), config.critic_adam))
            .collect();
        Agent {
            target_actor: actor.clone(),
            target_critics: critics.clone(),
            actor,
            critics,
            actor_opt,
            critic_opts,
            bounds,
            obs_dim,
            config,
            critic_steps: 0,
            actor_steps: 0,
            phase_critic_steps: 0,
        }
    }

    pub fn critic_steps(&self) -> u64 {
        self.critic_steps
    }

    pub fn actor_steps(&self) -> u64 {
        self.actor_steps
    }

    /// Restarts the policy-delay counter at a phase boundary.
    pub fn begin_phase(&mut self) {
        self.phase_critic_steps = 0;
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], sigma: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        select_action(&self.actor, obs, sigma, &self.bounds, rng)
    }

    pub fn exploration_sigma(&self) -> Vec<f64> {
        self.bounds.scaled(self.config.expl_noise)
    }

    pub fn critic_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Minibatch<T>,
        noise_rng: &mut R,
        subset_rng: &mut R,
    ) -> Result<CriticStats<T>> {
        let targets = compute_critic_target(
            batch,
            &self.target_actor,
            &self.target_critics,
            &self.config,
            &self.bounds,
            noise_rng,
            subset_rng,
        )?;
        let b = batch.len();
        let input = Mat::hconcat(&batch.obs, &batch.actions)?;
        let scale = T::of(2.0 / b as f64);
        let mut total = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let (q, cache) = critic.forward(&input)?;
            let mut dq = Mat::zeros(b, 1);
            for k in 0..b {
                let res = q.get(k, 0) - targets.targets[k];
                total += res.as_f64() * res.as_f64();
                dq.as_mut_slice()[k] = scale * res;
            }
            let (grads, _) = critic.backward(&cache, &dq)?;
            opt.apply(critic, &grads)?;
        }
        self.critic_steps += 1;
        self.phase_critic_steps += 1;
        Ok(CriticStats {
            loss: total / (b * self.critics.len()) as f64,
            targets,
        })
    }

    pub fn actor_update(&mut self, batch: &Minibatch<T>, alpha: f64) -> Result<ActorStats> {
        let (stats, grads) =
            actor_objective_grad(&self.actor, &self.critics, batch, alpha, &self.config)?;
        self.actor_opt.apply(&mut self.actor, &grads)?;
        self.actor_steps += 1;
        Ok(stats)
    }

    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        polyak_update(&self.actor, &mut self.target_actor, tau)?;
        for (c, t) in self.critics.iter().zip(&mut self.target_critics) {
            polyak_update(c, t, tau)?;
        }
        Ok(())
    }

    /// One critic update; every `policy_delay`-th call within the phase also
    /// runs the actor update and the target blend.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Minibatch<T>,
        alpha: f64,
        noise_rng: &mut R,
        subset_rng: &mut R,
    ) -> Result<TrainStats> {
        let critic = self.critic_update(batch, noise_rng, subset_rng)?;
        let mut actor = None;
        if self.phase_critic_steps % self.config.policy_delay as u64 == 0 {
            actor = Some(self.actor_update(batch, alpha)?);
            self.update_targets()?;
        }
        if !critic.loss.is_finite() || actor.is_some_and(|a| !a.objective.is_finite()) {
            return Err(Error::NonFinite(format!(
                "losses after critic step {}: critic {} actor {:?}",
                self.critic_steps, critic.loss, actor
            )));
        }
        Ok(TrainStats {
            critic_loss: critic.loss,
            actor,
        })
    }

    /// Mean of the ensemble's Q estimates for each row of `(obs, actions)`.
    pub fn ensemble_q(&self, obs: &Mat<T>, actions: &Mat<T>) -> Result<Vec<f64>> {
        let input = Mat::hconcat(obs, actions)?;
        let mut acc = vec![0.0; obs.rows()];
        for c in &self.critics {
            for (a, q) in acc.iter_mut().zip(c.predict(&input)?.as_slice()) {
                *a += q.as_f64() / self.critics.len() as f64;
            }
        }
        Ok(acc)
    }
}

const AGENT_MAGIC: &str = "ADAPTBC-AGENT";
const ADAM_MAGIC: &str = "ADAPTBC-ADAM";

/// Behavior-cloning weights stored alongside the networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaRecord {
    pub alpha_offline: f64,
    pub alpha_online: f64,
}

impl AgentConfig {
    pub(crate) fn header_entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("agent.gamma", self.gamma.to_string()),
            ("agent.tau", self.tau.to_string()),
            ("agent.n_critics", self.n_critics.to_string()),
            ("agent.m_subset", self.m_subset.to_string()),
            ("agent.batch_size", self.batch_size.to_string()),
            ("agent.expl_noise", self.expl_noise.to_string()),
            ("agent.policy_noise", self.policy_noise.to_string()),
            ("agent.noise_clip", self.noise_clip.to_string()),
            ("agent.policy_delay", self.policy_delay.to_string()),
            ("agent.ensemble_mode", self.ensemble_mode.to_string()),
            ("agent.q_norm_epsilon", self.q_norm_epsilon.to_string()),
            ("agent.q_norm_abs", self.q_norm_abs.to_string()),
            ("agent.per_sample_subsets", self.per_sample_subsets.to_string()),
            ("agent.hidden", textio::join(&self.hidden)),
            ("agent.actor_lr", self.actor_adam.lr.to_string()),
            ("agent.critic_lr", self.critic_adam.lr.to_string()),
            ("agent.adam_beta1", self.actor_adam.beta1.to_string()),
            ("agent.adam_beta2", self.actor_adam.beta2.to_string()),
            ("agent.adam_eps", self.actor_adam.eps.to_string()),
        ]
    }

    fn from_header(h: &Header) -> Result<Self> {
        let hidden: Vec<usize> = h.get_list("agent.hidden")?;
        let hidden: [usize; 2] = hidden
            .try_into()
            .map_err(|_| Error::Format("agent.hidden needs two widths".into()))?;
        let adam = |lr: f64| -> Result<AdamConfig> {
            Ok(AdamConfig {
                lr,
                beta1: h.get("agent.adam_beta1")?,
                beta2: h.get("agent.adam_beta2")?,
                eps: h.get("agent.adam_eps")?,
            })
        };
        Ok(AgentConfig {
            gamma: h.get("agent.gamma")?,
            tau: h.get("agent.tau")?,
            n_critics: h.get("agent.n_critics")?,
            m_subset: h.get("agent.m_subset")?,
            batch_size: h.get("agent.batch_size")?,
            expl_noise: h.get("agent.expl_noise")?,
            policy_noise: h.get("agent.policy_noise")?,
            noise_clip: h.get("agent.noise_clip")?,
            policy_delay: h.get("agent.policy_delay")?,
            ensemble_mode: h.raw("agent.ensemble_mode")?.parse()?,
            q_norm_epsilon: h.get("agent.q_norm_epsilon")?,
            q_norm_abs: h.get("agent.q_norm_abs")?,
            per_sample_subsets: h.get("agent.per_sample_subsets")?,
            hidden,
            actor_adam: adam(h.get("agent.actor_lr")?)?,
            critic_adam: adam(h.get("agent.critic_lr")?)?,
        })
    }
}

fn write_adam<T: Real, W: Write>(opt: &Adam<T>, w: &mut W) -> Result<()> {
    let mut h = Header::new();
    h.put("steps", opt.steps())
        .put("len", opt.first_moment().len())
        .put("lr", opt.config.lr)
        .put("beta1", opt.config.beta1)
        .put("beta2", opt.config.beta2)
        .put("eps", opt.config.eps);
    h.write_to(ADAM_MAGIC, w)?;
    textio::write_f32s(w, opt.first_moment().iter().map(|v| v.as_f64() as f32))?;
    textio::write_f32s(w, opt.second_moment().iter().map(|v| v.as_f64() as f32))
}

fn read_adam<T: Real, R: BufRead>(r: &mut R) -> Result<Adam<T>> {
    let h = Header::read_from(ADAM_MAGIC, r)?;
    let n: usize = h.get("len")?;
    let config = AdamConfig {
        lr: h.get("lr")?,
        beta1: h.get("beta1")?,
        beta2: h.get("beta2")?,
        eps: h.get("eps")?,
    };
    let to_t = |v: Vec<f32>| v.into_iter().map(|x| T::of(x as f64)).collect();
    let m = to_t(textio::read_f32s(r, n)?);
    let v = to_t(textio::read_f32s(r, n)?);
    Adam::from_parts(config, m, v, h.get("steps")?)
}

impl<T: Real> Agent<T> {
    /// Header with configuration and α values, then the actor, critics,
    /// target actor and target critics as network containers, then the
    /// optimizer states.
    pub fn write_checkpoint<W: Write>(&self, alphas: AlphaRecord, w: &mut W) -> Result<()> {
        let mut h = Header::new();
        h.put("version", 1)
            .put("obs_dim", self.obs_dim)
            .put("action_low", textio::join(&self.bounds.low))
            .put("action_high", textio::join(&self.bounds.high))
            .put("alpha_offline", alphas.alpha_offline)
            .put("alpha_online", alphas.alpha_online)
            .put("critic_steps", self.critic_steps)
            .put("actor_steps", self.actor_steps);
        for (k, v) in self.config.header_entries() {
            h.put(k, v);
        }
        h.write_to(AGENT_MAGIC, w)?;
        self.actor.write_checkpoint(w)?;
        for c in &self.critics {
            c.write_checkpoint(w)?;
        }
        self.target_actor.write_checkpoint(w)?;
        for c in &self.target_critics {
            c.write_checkpoint(w)?;
        }
        write_adam(&self.actor_opt, w)?;
        for o in &self.critic_opts {
            write_adam(o, w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<(Self, AlphaRecord)> {
        let h = Header::read_from(AGENT_MAGIC, r)?;
        let version: u32 = h.get("version")?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported agent version {version}")));
        }
        let config = AgentConfig::from_header(&h)?;
        config
            .validate()
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let bounds = ActionBounds {
            low: h.get_list("action_low")?,
            high: h.get_list("action_high")?,
        };
        let obs_dim: usize = h.get("obs_dim")?;
        let n = config.n_critics;
        let actor = DenseNet::read_checkpoint(r)?;
        let critics = (0..n)
            .map(|_| DenseNet::read_checkpoint(r))
            .collect::<Result<Vec<_>>>()?;
        let target_actor: DenseNet<T> = DenseNet::read_checkpoint(r)?;
        let target_critics = (0..n)
            .map(|_| DenseNet::read_checkpoint(r))
            .collect::<Result<Vec<_>>>()?;
        let actor_opt = read_adam(r)?;
        let critic_opts = (0..n).map(|_| read_adam(r)).collect::<Result<Vec<_>>>()?;
        textio::expect_eof(r)?;

        let shapes_ok = actor.input_dim() == obs_dim
            && actor.output_dim() == bounds.dim()
            && target_actor.same_shape(&actor)
            && critics
                .iter()
                .chain(&target_critics)
                .all(|c| c.input_dim() == obs_dim + bounds.dim() && c.output_dim() == 1)
            && actor_opt.first_moment().len() == actor.param_count()
            && critic_opts
                .iter()
                .zip(&critics)
                .all(|(o, c)| o.first_moment().len() == c.param_count());
        if !shapes_ok {
            return Err(Error::Format("agent checkpoint networks are inconsistent".into()));
        }
        let alphas = AlphaRecord {
            alpha_offline: h.get("alpha_offline")?,
            alpha_online: h.get("alpha_online")?,
        };
        Ok((
            Agent {
                config,
                bounds,
                obs_dim,
                actor,
                critics,
                target_actor,
                target_critics,
                actor_opt,
                critic_opts,
                critic_steps: h.get("critic_steps")?,
                actor_steps: h.get("actor_steps")?,
                phase_critic_steps: 0,
            },
            alphas,
        ))
    }
}
