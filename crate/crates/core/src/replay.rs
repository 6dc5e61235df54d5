//! FIFO replay storage with origin tags and phase-boundary downsampling.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};
use crate::nn::{Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleMode {
    /// Uniformly chosen individual transitions.
    Random,
    /// Whole trajectories in decreasing order of episodic return.
    Prioritized,
}

impl fmt::Display for DownsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DownsampleMode::Random => "random",
            DownsampleMode::Prioritized => "prioritized",
        })
    }
}

impl FromStr for DownsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(DownsampleMode::Random),
            "prioritized" => Ok(DownsampleMode::Prioritized),
            _ => Err(Error::InvalidConfig(format!("unknown downsample mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub transition: Transition,
    pub origin: Origin,
    pub episode: u64,
    /// Return of the episode this transition belongs to, once known.
    pub episode_return: Option<f64>,
}

/// Column-major view of a set of transitions ready for the networks.
#[derive(Debug, Clone)]
pub struct Minibatch<T> {
    pub obs: Mat<T>,
    pub actions: Mat<T>,
    pub rewards: Vec<T>,
    pub next_obs: Mat<T>,
    /// 1 for absorbing termination, 0 otherwise.
    pub terminals: Vec<T>,
}

impl<T: Real> Minibatch<T> {
    pub fn from_transitions<'a, I>(items: I, obs_dim: usize, act_dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut next_obs = Vec::new();
        let mut rewards = Vec::new();
        let mut terminals = Vec::new();
        for t in items {
            if t.obs.len() != obs_dim || t.next_obs.len() != obs_dim || t.action.len() != act_dim {
                return Err(Error::Shape("transition does not match buffer dims".into()));
            }
            obs.extend(t.obs.iter().map(|&v| T::of(v as f64)));
            actions.extend(t.action.iter().map(|&v| T::of(v as f64)));
            next_obs.extend(t.next_obs.iter().map(|&v| T::of(v as f64)));
            rewards.push(T::of(t.reward as f64));
            terminals.push(if t.terminal { T::one() } else { T::zero() });
        }
        let b = rewards.len();
        Ok(Minibatch {
            obs: Mat::from_vec(b, obs_dim, obs)?,
            actions: Mat::from_vec(b, act_dim, actions)?,
            rewards,
            next_obs: Mat::from_vec(b, obs_dim, next_obs)?,
            terminals,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Bounded ring of transitions; the oldest entry is evicted first
/// regardless of its origin.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    entries: VecDeque<Entry>,
}

/// `⌊fraction · n⌋`, tolerant of representation error in `fraction`.
pub fn kept_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor().min(n as f64) as usize
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            obs_dim,
            act_dim,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Entry> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.entries.iter().filter(|e| e.origin == origin).count()
    }

    pub fn push(
        &mut self,
        transition: Transition,
        origin: Origin,
        episode: u64,
        episode_return: Option<f64>,
    ) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(Entry {
            transition,
            origin,
            episode,
            episode_return,
        });
    }

    /// Records the return of a finished episode on its stored transitions.
    pub fn set_episode_return(&mut self, origin: Origin, episode: u64, ret: f64) {
        for e in self.entries.iter_mut().rev() {
            if e.origin == origin && e.episode == episode {
                e.episode_return = Some(ret);
            }
        }
    }

    /// `b` uniform draws with replacement over the current contents.
    pub fn sample_indices<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.entries.len();
        Ok((0..b).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample_minibatch<T: Real, R: Rng + ?Sized>(
        &self,
        b: usize,
        rng: &mut R,
    ) -> Result<Minibatch<T>> {
        let idx = self.sample_indices(b, rng)?;
        Minibatch::from_transitions(
            idx.iter().map(|&i| &self.entries[i].transition),
            self.obs_dim,
            self.act_dim,
        )
    }

    /// Drops offline transitions, keeping `⌊keep_fraction · n_offline⌋`
    /// (prioritized mode may overshoot to keep whole trajectories).
    /// Online transitions are never touched. Returns the number kept.
    pub fn downsample<R: Rng + ?Sized>(
        &mut self,
        keep_fraction: f64,
        mode: DownsampleMode,
        rng: &mut R,
    ) -> Result<usize> {
        if !(0.0..=1.0).contains(&keep_fraction) {
            return Err(Error::InvalidFraction(keep_fraction));
        }
        let offline: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.entries[i].origin == Origin::Offline)
            .collect();
        let target = kept_count(keep_fraction, offline.len());
        if target == offline.len() {
            return Ok(target);
        }
        let mut keep = vec![false; self.entries.len()];
        match mode {
            DownsampleMode::Random => {
                for j in index::sample(rng, offline.len(), target) {
                    keep[offline[j]] = true;
                }
            }
            DownsampleMode::Prioritized => {
                let mut episodes: HashMap<u64, (f64, usize)> = HashMap::new();
                for &i in &offline {
                    let e = &self.entries[i];
                    let slot = episodes
                        .entry(e.episode)
                        .or_insert((e.episode_return.unwrap_or(f64::NEG_INFINITY), 0));
                    slot.1 += 1;
                }
                let mut order: Vec<(u64, f64, usize)> =
                    episodes.into_iter().map(|(id, (r, n))| (id, r, n)).collect();
                order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let mut chosen = Vec::new();
                let mut kept = 0;
                for (id, _, n) in order {
                    if kept >= target {
                        break;
                    }
                    chosen.push(id);
                    kept += n;
                }
                for &i in &offline {
                    if chosen.contains(&self.entries[i].episode) {
                        keep[i] = true;
                    }
                }
            }
        }
        let mut i = 0;
        self.entries.retain(|e| {
            let k = e.origin == Origin::Online || keep[i];
            i += 1;
            k
        });
        Ok(self.count(Origin::Offline))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(tag: f32) -> Transition {
        Transition {
            obs: vec![tag],
            action: vec![0.0],
            reward: tag,
            next_obs: vec![tag + 1.0],
            terminal: false,
        }
    }

    fn offline_buffer(returns: &[f64], len_each: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(100_000, 1, 1);
        for (ep, &r) in returns.iter().enumerate() {
            for k in 0..len_each {
                buf.push(tr((ep * len_each + k) as f32), Origin::Offline, ep as u64, Some(r));
            }
        }
        buf
    }

    #[test]
    fn push_and_fifo_eviction() {
        let mut buf = ReplayBuffer::new(3, 1, 1);
        buf.push(tr(0.0), Origin::Offline, 0, None);
        assert_eq!(buf.len(), 1);
        for k in 1..4 {
            buf.push(tr(k as f32), Origin::Online, 1, None);
        }
        assert_eq!(buf.len(), 3);
        let tags: Vec<f32> = buf.iter().map(|e| e.transition.reward).collect();
        assert_eq!(tags, vec![1.0, 2.0, 3.0]);
        assert!(buf.iter().all(|e| e.origin == Origin::Online));
    }

    #[test]
    fn origin_tag_read_back() {
        let mut buf = ReplayBuffer::new(10, 1, 1);
        buf.push(tr(0.0), Origin::Offline, 0, None);
        buf.push(tr(1.0), Origin::Online, 0, None);
        assert_eq!(buf.get(0).unwrap().origin, Origin::Offline);
        assert_eq!(buf.get(1).unwrap().origin, Origin::Online);
    }

    #[test]
    fn sampling_single_entry_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = ReplayBuffer::new(4, 1, 1);
        assert!(matches!(
            empty.sample_minibatch::<f32, _>(4, &mut rng),
            Err(Error::EmptyBuffer)
        ));
        let mut buf = ReplayBuffer::new(4, 1, 1);
        buf.push(tr(7.0), Origin::Online, 0, None);
        let mb: Minibatch<f32> = buf.sample_minibatch(4, &mut rng).unwrap();
        assert_eq!(mb.rewards, vec![7.0; 4]);
        assert_eq!(mb.next_obs.as_slice(), &[8.0; 4]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let buf = offline_buffer(&[0.0; 10], 10);
        let a = buf.sample_indices(64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = buf.sample_indices(64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_passes_chi_square_uniformity() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let buf = offline_buffer(&[0.0; 10], 10);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = 100_000;
        let mut counts = [0usize; 100];
        for i in buf.sample_indices(draws, &mut rng).unwrap() {
            counts[i] += 1;
        }
        let expected = draws as f64 / 100.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.99);
        assert!(stat < critical, "chi2 {stat} >= {critical}");
    }

    #[test]
    fn random_downsample_keeps_exact_count() {
        let mut buf = offline_buffer(&[1.0; 100], 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kept = buf.downsample(0.05, DownsampleMode::Random, &mut rng).unwrap();
        assert_eq!(kept, 50);
        assert_eq!(buf.len(), 50);
    }

    #[test]
    fn prioritized_downsample_keeps_best_trajectory() {
        let mut buf = offline_buffer(&[1.0, 5.0, 3.0], 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        buf.downsample(1.0 / 3.0, DownsampleMode::Prioritized, &mut rng)
            .unwrap();
        assert_eq!(buf.len(), 10);
        assert!(buf.iter().all(|e| e.episode == 1));
    }

    #[test]
    fn full_keep_fraction_is_identity() {
        let mut buf = offline_buffer(&[1.0, 2.0], 7);
        let before: Vec<Entry> = buf.iter().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [DownsampleMode::Random, DownsampleMode::Prioritized] {
            buf.downsample(1.0, mode, &mut rng).unwrap();
            assert_eq!(buf.iter().cloned().collect::<Vec<_>>(), before);
        }
    }

    #[test]
    fn invalid_fraction_rejected() {
        let mut buf = offline_buffer(&[1.0], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for f in [-0.1, 1.5, f64::NAN] {
            assert!(matches!(
                buf.downsample(f, DownsampleMode::Random, &mut rng),
                Err(Error::InvalidFraction(_))
            ));
        }
    }

    proptest! {
        #[test]
        fn downsample_never_touches_online_and_prioritized_orders_returns(
            returns in proptest::collection::vec(-100.0f64..100.0, 1..20),
            lens in proptest::collection::vec(1usize..15, 20),
            online in 0usize..30,
            frac in 0.0f64..=1.0,
            prioritized in proptest::bool::ANY,
            seed in 0u64..1000,
        ) {
            let mut buf = ReplayBuffer::new(100_000, 1, 1);
            for (ep, &r) in returns.iter().enumerate() {
                for k in 0..lens[ep] {
                    buf.push(tr(k as f32), Origin::Offline, ep as u64, Some(r));
                }
            }
            for k in 0..online {
                buf.push(tr(1000.0 + k as f32), Origin::Online, 0, None);
            }
            let n_off = buf.count(Origin::Offline);
            let online_before: Vec<Entry> =
                buf.iter().filter(|e| e.origin == Origin::Online).cloned().collect();
            let mode = if prioritized { DownsampleMode::Prioritized } else { DownsampleMode::Random };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kept = buf.downsample(frac, mode, &mut rng).unwrap();
            let online_after: Vec<Entry> =
                buf.iter().filter(|e| e.origin == Origin::Online).cloned().collect();
            prop_assert_eq!(online_before, online_after);
            let target = kept_count(frac, n_off);
            if prioritized {
                prop_assert!(kept >= target);
                let kept_eps: Vec<u64> = buf.iter().filter(|e| e.origin == Origin::Offline).map(|e| e.episode).collect();
                let kept_min = kept_eps.iter().map(|&e| returns[e as usize]).fold(f64::INFINITY, f64::min);
                let dropped_max = (0..returns.len() as u64)
                    .filter(|e| !kept_eps.contains(e))
                    .map(|e| returns[e as usize])
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(kept_min >= dropped_max);
            } else {
                prop_assert_eq!(kept, target);
            }
        }
    }
}
