//! Feedback control of the online behavior-cloning weight.
//!
//! After each training episode with normalized return `R`:
//!
//! ```text
//! Δα = K_P (R_avg − R_target) + K_D max(0, R_avg − R)
//! α  = clip(α + Δα, 0, α_offline)
//! ```
//!
//! then `R` is folded into `R_avg`. The proportional term drains α while the
//! agent is below target; the derivative term pushes it back up when a fresh
//! episode falls below the running average.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::dataset::{normalize_return, ReferenceScores};
use crate::error::{Error, Result};

pub const DEFAULT_R_TARGET: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// The fixed normalized target 1.05.
    ExpertReference,
    /// Normalized `r_max · T`.
    RmaxTimesT,
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::ExpertReference => "expert_reference",
            TargetMode::RmaxTimesT => "rmax_times_t",
        })
    }
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "expert_reference" => Ok(TargetMode::ExpertReference),
            "rmax_times_t" => Ok(TargetMode::RmaxTimesT),
            _ => Err(Error::InvalidConfig(format!("unknown target mode `{s}`"))),
        }
    }
}

pub fn resolve_target(mode: TargetMode, refs: &ReferenceScores) -> f64 {
    match mode {
        TargetMode::ExpertReference => DEFAULT_R_TARGET,
        TargetMode::RmaxTimesT => normalize_return(refs.rmax_times_t, refs),
    }
}

/// How `R_avg` summarizes past episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Averaging {
    /// `R_avg ← (1 − β) R_avg + β R`.
    Ema { beta: f64 },
    /// Plain mean of the last `size` returns.
    Window { size: usize },
}

impl Default for Averaging {
    fn default() -> Self {
        Averaging::Ema { beta: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub alpha_offline: f64,
    pub kp: f64,
    pub kd: f64,
    pub r_target: f64,
    pub averaging: Averaging,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            alpha_offline: 0.4,
            kp: 0.1,
            kd: 0.03,
            r_target: DEFAULT_R_TARGET,
            averaging: Averaging::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha_offline >= 0.0 && self.alpha_offline.is_finite()) {
            return bad("alpha_offline must be finite and non-negative");
        }
        if !(self.kp >= 0.0 && self.kd >= 0.0 && self.kp.is_finite() && self.kd.is_finite()) {
            return bad("controller gains must be finite and non-negative");
        }
        if !self.r_target.is_finite() {
            return bad("r_target must be finite");
        }
        match self.averaging {
            Averaging::Ema { beta } if !(beta > 0.0 && beta <= 1.0) => bad("ema beta must lie in (0, 1]"),
            Averaging::Window { size: 0 } => bad("averaging window must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaController {
    config: ControllerConfig,
    alpha: f64,
    r_avg: Option<f64>,
    window: VecDeque<f64>,
    last_delta: f64,
    updates: u64,
}

impl AlphaController {
    /// Starts at `α_online = α_offline`.
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(AlphaController {
            alpha: config.alpha_offline,
            config,
            r_avg: None,
            window: VecDeque::new(),
            last_delta: 0.0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `None` before the first episode.
    pub fn r_avg(&self) -> Option<f64> {
        self.r_avg
    }

    /// Unclipped Δα from the most recent call.
    pub fn last_delta(&self) -> f64 {
        self.last_delta
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Δα for a given history; pure.
    pub fn delta(kp: f64, kd: f64, r_avg: f64, r_target: f64, r_current: f64) -> f64 {
        kp * (r_avg - r_target) + kd * (r_avg - r_current).max(0.0)
    }

    /// Folds one normalized episodic return into the controller and returns the new α.
    pub fn adapt(&mut self, r_current: f64) -> Result<f64> {
        if !r_current.is_finite() {
            return Err(Error::NonFinite(format!("episodic return {r_current}")));
        }
        let c = self.config;
        let r_avg = self.r_avg.unwrap_or(r_current);
        let delta = Self::delta(c.kp, c.kd, r_avg, c.r_target, r_current);
        self.alpha = (self.alpha + delta).clamp(0.0, c.alpha_offline);
        self.last_delta = delta;
        self.r_avg = Some(match c.averaging {
            Averaging::Ema { beta } => match self.r_avg {
                None => r_current,
                Some(prev) => (1.0 - beta) * prev + beta * r_current,
            },
            Averaging::Window { size } => {
                self.window.push_back(r_current);
                if self.window.len() > size {
                    self.window.pop_front();
                }
                self.window.iter().sum::<f64>() / self.window.len() as f64
            }
        });
        self.updates += 1;
        Ok(self.alpha)
    }
}
