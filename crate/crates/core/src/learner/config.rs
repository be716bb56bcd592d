//! Learner configuration: typed keys, flat key-value parsing, and the
//! canonical resolved echo written into every run directory.

use crate::context::CentroidUpdate;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::{HeadInit, DEFAULT_HIDDEN};
use std::fmt::Write as _;

/// Training mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Full method: online context detection, expansion, distillation.
    Dacorl,
    /// Supervised assignments from the generator's true clusters.
    Oracle,
    /// Single head, no context machinery, no distillation.
    Naive,
    /// Fixed set of contexts known up front; assignment by nearest preset
    /// centroid in variation-parameter space.
    FixedK,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dacorl" => Ok(Mode::Dacorl),
            "oracle" => Ok(Mode::Oracle),
            "naive" => Ok(Mode::Naive),
            "fixed_k" => Ok(Mode::FixedK),
            other => Err(Error::Parse(format!("unknown mode {other:?}"))),
        }
    }
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Dacorl => "dacorl",
            Mode::Oracle => "oracle",
            Mode::Naive => "naive",
            Mode::FixedK => "fixed_k",
        }
    }
}

/// Policy-gradient estimator variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Reward-to-go weights per step.
    RewardToGo,
    /// Whole-trajectory return as the weight of every step.
    Trajectory,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward_to_go" => Ok(Estimator::RewardToGo),
            "trajectory" => Ok(Estimator::Trajectory),
            other => Err(Error::Parse(format!("unknown estimator {other:?}"))),
        }
    }
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::RewardToGo => "reward_to_go",
            Estimator::Trajectory => "trajectory",
        }
    }
}

/// Parameter-update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Parse(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Full run configuration with resolved defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub mode: Mode,
    /// CRP concentration.
    pub alpha: f64,
    /// Shared likelihood variance of the context model.
    pub sigma2: f64,
    /// Distillation coefficient in `[0, 1]`.
    pub lambda: f64,
    /// Learning rate.
    pub beta: f64,
    /// Discount factor in `[0, 1]`.
    pub gamma: f64,
    pub iterations_per_task: u32,
    /// Trajectories per policy iteration.
    pub batch_size: u32,
    pub head_init: HeadInit,
    /// Exploration trajectories per feature extraction.
    pub m_explore: u32,
    /// Test episodes per task in periodic evaluation.
    pub m_episodes: u32,
    pub eval_every: u32,
    pub seed: u64,
    pub hidden: usize,
    pub estimator: Estimator,
    /// Subtract the batch-mean return from the weights.
    pub baseline: bool,
    pub centroid_update: CentroidUpdate,
    pub optimizer: OptimizerKind,
    /// Evaluate with the distribution mean instead of sampling.
    pub eval_deterministic: bool,
    /// Assert after every expansion that old parameters and old-head outputs
    /// are bitwise unchanged.
    pub verify_expansion: bool,
    pub env: EnvConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            mode: Mode::Dacorl,
            alpha: 0.03,
            sigma2: 0.004,
            lambda: 0.5,
            beta: 1e-3,
            gamma: 0.99,
            iterations_per_task: 1000,
            batch_size: 10,
            head_init: HeadInit::NearestTrained,
            m_explore: 40,
            m_episodes: 5,
            eval_every: 100,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            estimator: Estimator::RewardToGo,
            baseline: true,
            centroid_update: CentroidUpdate::Normalized,
            optimizer: OptimizerKind::Adam,
            eval_deterministic: true,
            verify_expansion: false,
            env: EnvConfig::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Input("alpha must be positive".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Input("sigma2 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Input("lambda must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Input("gamma must lie in [0, 1]".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Input("beta must be positive".into()));
        }
        if self.iterations_per_task == 0 || self.batch_size == 0 {
            return Err(Error::Input("iterations_per_task and batch_size must be >= 1".into()));
        }
        if self.m_explore == 0 || self.m_episodes == 0 || self.eval_every == 0 {
            return Err(Error::Input("m_explore, m_episodes, eval_every must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Input("hidden must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical echo of every resolved value, one `key = value` per line.
    /// Parsing this text reproduces the config exactly.
    pub fn to_resolved_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "mode = {}", self.mode.as_str());
        let _ = writeln!(w, "alpha = {:?}", self.alpha);
        let _ = writeln!(w, "sigma2 = {:?}", self.sigma2);
        let _ = writeln!(w, "lambda = {:?}", self.lambda);
        let _ = writeln!(w, "beta = {:?}", self.beta);
        let _ = writeln!(w, "gamma = {:?}", self.gamma);
        let _ = writeln!(w, "iterations_per_task = {}", self.iterations_per_task);
        let _ = writeln!(w, "batch_size = {}", self.batch_size);
        let _ = writeln!(w, "head_init = {}", self.head_init.as_str());
        let _ = writeln!(w, "m_explore = {}", self.m_explore);
        let _ = writeln!(w, "m_episodes = {}", self.m_episodes);
        let _ = writeln!(w, "eval_every = {}", self.eval_every);
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "hidden = {}", self.hidden);
        let _ = writeln!(w, "estimator = {}", self.estimator.as_str());
        let _ = writeln!(w, "baseline = {}", self.baseline);
        let _ = writeln!(w, "centroid_update = {}", self.centroid_update.as_str());
        let _ = writeln!(w, "optimizer = {}", self.optimizer.as_str());
        let _ = writeln!(w, "eval_deterministic = {}", self.eval_deterministic);
        let _ = writeln!(w, "verify_expansion = {}", self.verify_expansion);
        let _ = writeln!(w, "env.action_clip = {:?}", self.env.action_clip);
        let _ = writeln!(w, "env.control_cost = {:?}", self.env.control_cost);
        let _ = writeln!(w, "env.puddle_slow = {:?}", self.env.puddle_slow);
        let _ = writeln!(w, "env.goal_radius = {:?}", self.env.goal_radius);
        let _ = writeln!(w, "env.max_steps = {}", self.env.max_steps);
        let _ = writeln!(w, "env.start_x = {:?}", self.env.start[0]);
        let _ = writeln!(w, "env.start_y = {:?}", self.env.start[1]);
        s
    }

    /// Parse flat `key = value` text. Every key is optional (defaults apply);
    /// unknown keys are errors.
    pub fn from_text(text: &str) -> Result<LearnerConfig> {
        let mut cfg = LearnerConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let bad_num = |key: &str| Error::Parse(format!("config key {key}: bad number"));
            match k {
                "mode" => cfg.mode = v.parse()?,
                "alpha" => cfg.alpha = v.parse().map_err(|_| bad_num(k))?,
                "sigma2" => cfg.sigma2 = v.parse().map_err(|_| bad_num(k))?,
                "lambda" => cfg.lambda = v.parse().map_err(|_| bad_num(k))?,
                "beta" => cfg.beta = v.parse().map_err(|_| bad_num(k))?,
                "gamma" => cfg.gamma = v.parse().map_err(|_| bad_num(k))?,
                "iterations_per_task" => {
                    cfg.iterations_per_task = v.parse().map_err(|_| bad_num(k))?
                }
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| bad_num(k))?,
                "head_init" => cfg.head_init = v.parse()?,
                "m_explore" => cfg.m_explore = v.parse().map_err(|_| bad_num(k))?,
                "m_episodes" => cfg.m_episodes = v.parse().map_err(|_| bad_num(k))?,
                "eval_every" => cfg.eval_every = v.parse().map_err(|_| bad_num(k))?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad_num(k))?,
                "hidden" => cfg.hidden = v.parse().map_err(|_| bad_num(k))?,
                "estimator" => cfg.estimator = v.parse()?,
                "baseline" => cfg.baseline = parse_bool(v, k)?,
                "centroid_update" => cfg.centroid_update = v.parse()?,
                "optimizer" => cfg.optimizer = v.parse()?,
                "eval_deterministic" => cfg.eval_deterministic = parse_bool(v, k)?,
                "verify_expansion" => cfg.verify_expansion = parse_bool(v, k)?,
                "env.action_clip" => cfg.env.action_clip = v.parse().map_err(|_| bad_num(k))?,
                "env.control_cost" => cfg.env.control_cost = v.parse().map_err(|_| bad_num(k))?,
                "env.puddle_slow" => cfg.env.puddle_slow = v.parse().map_err(|_| bad_num(k))?,
                "env.goal_radius" => cfg.env.goal_radius = v.parse().map_err(|_| bad_num(k))?,
                "env.max_steps" => cfg.env.max_steps = v.parse().map_err(|_| bad_num(k))?,
                "env.start_x" => cfg.env.start[0] = v.parse().map_err(|_| bad_num(k))?,
                "env.start_y" => cfg.env.start[1] = v.parse().map_err(|_| bad_num(k))?,
                other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse(format!("config key {key}: expected true/false, got {other:?}"))),
    }
}
