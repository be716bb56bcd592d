//! Parametric 2-D navigation tasks in the unit square.
//!
//! A task is a stationary MDP: the agent starts at a fixed point, issues
//! velocity commands clipped to `[-0.1, 0.1]` per axis, and is rewarded with
//! the negative squared distance to the goal minus a small control cost.
//! Circular puddles slow motion (velocity scaled by `puddle_slow` when the
//! move would land inside one). Episodes end within `goal_radius` of the
//! goal or after `max_steps` steps.

mod manifest;
mod stream;

pub use manifest::{manifest_from_string, manifest_to_string, read_manifest, write_manifest};
pub use stream::{generate_stream, sample_uniform_tasks, StreamConfig, TaskStream};

use crate::error::{Error, Result};

/// Half-width of the action box (velocity commands live in `[-b, b]^2`).
pub const ACTION_BOUND: f64 = 0.1;

/// Which task parameters vary across the stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamType {
    /// Goal position varies; puddles fixed.
    I,
    /// Puddle positions vary; goal fixed.
    II,
    /// Both goal and puddles vary.
    III,
}

impl StreamType {
    /// Dimension of the variation-parameter vector.
    pub fn param_dim(&self) -> usize {
        match self {
            StreamType::I => 2,
            StreamType::II => 4,
            StreamType::III => 6,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StreamType::I => "I",
            StreamType::II => "II",
            StreamType::III => "III",
        }
    }
}

impl std::str::FromStr for StreamType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" | "1" => Ok(StreamType::I),
            "II" | "ii" | "2" => Ok(StreamType::II),
            "III" | "iii" | "3" => Ok(StreamType::III),
            other => Err(Error::Parse(format!("unknown stream type {other:?}"))),
        }
    }
}

impl std::fmt::Display for StreamType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A circular puddle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Puddle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Puddle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// One stationary navigation MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    pub goal: [f64; 2],
    pub puddles: Vec<Puddle>,
    /// The parameters that vary across the stream's tasks (goal and/or
    /// puddle centers, depending on the stream type).
    pub variation_params: Vec<f64>,
    /// Generator-side cluster label. Hidden from the learner; read only by
    /// the oracle baseline and purity scoring.
    pub true_cluster: usize,
}

/// Environment dynamics shared by every task of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvConfig {
    pub action_clip: f64,
    pub control_cost: f64,
    /// Velocity scale applied when the move would land inside a puddle.
    pub puddle_slow: f64,
    pub goal_radius: f64,
    pub max_steps: u32,
    pub start: [f64; 2],
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            action_clip: ACTION_BOUND,
            control_cost: 0.1,
            puddle_slow: 0.2,
            goal_radius: 0.01,
            max_steps: 100,
            start: [0.05, 0.05],
        }
    }
}

/// Agent state within one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub steps: u32,
}

/// What the agent observes: its position plus the task's variation
/// parameters, constant within an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub position: [f64; 2],
    pub aug: Vec<f64>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        2 + self.aug.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.position);
        v.extend_from_slice(&self.aug);
        v
    }
}

fn observe(task: &TaskSpec, position: [f64; 2]) -> Observation {
    Observation { position, aug: task.variation_params.clone() }
}

/// Start a fresh episode at the fixed start point.
pub fn reset(task: &TaskSpec, cfg: &EnvConfig) -> (EnvState, Observation) {
    let state = EnvState { position: cfg.start, steps: 0 };
    (state, observe(task, cfg.start))
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Advance one step. Returns the new state, observation, reward, and a
/// terminal flag.
pub fn step(
    task: &TaskSpec,
    cfg: &EnvConfig,
    state: &EnvState,
    action: &[f64],
) -> Result<(EnvState, Observation, f64, bool)> {
    if action.len() != 2 {
        return Err(Error::Shape(format!("action must have 2 entries, got {}", action.len())));
    }
    if !action.iter().all(|a| a.is_finite()) {
        return Err(Error::Input("non-finite action".into()));
    }
    let clipped = [
        action[0].clamp(-cfg.action_clip, cfg.action_clip),
        action[1].clamp(-cfg.action_clip, cfg.action_clip),
    ];
    let tentative = [
        clamp01(state.position[0] + clipped[0]),
        clamp01(state.position[1] + clipped[1]),
    ];
    let kappa = if task.puddles.iter().any(|p| p.contains(tentative)) {
        cfg.puddle_slow
    } else {
        1.0
    };
    let next = [
        clamp01(state.position[0] + kappa * clipped[0]),
        clamp01(state.position[1] + kappa * clipped[1]),
    ];
    let dx = next[0] - task.goal[0];
    let dy = next[1] - task.goal[1];
    let dist2 = dx * dx + dy * dy;
    let control = clipped[0] * clipped[0] + clipped[1] * clipped[1];
    let reward = -dist2 - cfg.control_cost * control;
    let steps = state.steps + 1;
    let done = dist2.sqrt() <= cfg.goal_radius || steps > cfg.max_steps;
    let next_state = EnvState { position: next, steps };
    let obs = observe(task, next);
    Ok((next_state, obs, reward, done))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bare_task(goal: [f64; 2]) -> TaskSpec {
        TaskSpec {
            task_id: 0,
            goal,
            puddles: vec![],
            variation_params: goal.to_vec(),
            true_cluster: 0,
        }
    }

    #[test]
    fn reset_starts_at_fixed_point() {
        let task = bare_task([0.5, 0.5]);
        let cfg = EnvConfig::default();
        let (state, obs) = reset(&task, &cfg);
        assert_eq!(state.position, [0.05, 0.05]);
        assert_eq!(state.steps, 0);
        assert_eq!(obs.position, [0.05, 0.05]);
        assert_eq!(obs.aug, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_action_reward_is_negative_squared_distance() {
        let task = bare_task([0.0, 0.0]);
        let cfg = EnvConfig::default();
        let state = EnvState { position: [0.3, 0.4], steps: 0 };
        let (_, _, reward, done) = step(&task, &cfg, &state, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(reward, -0.25, epsilon = 1e-12);
        assert!(!done);
    }

    #[test]
    fn actions_are_clipped_to_the_bound() {
        let task = bare_task([1.0, 1.0]);
        let cfg = EnvConfig::default();
        let state = EnvState { position: [0.2, 0.2], steps: 0 };
        let (next, _, _, _) = step(&task, &cfg, &state, &[0.5, 0.5]).unwrap();
        assert_relative_eq!(next.position[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(next.position[1], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn done_within_goal_radius() {
        let task = bare_task([0.5, 0.5]);
        let cfg = EnvConfig::default();
        let state = EnvState { position: [0.505, 0.5], steps: 0 };
        let (_, _, _, done) = step(&task, &cfg, &state, &[0.0, 0.0]).unwrap();
        assert!(done, "0.005 <= 0.01 must terminate");
    }

    #[test]
    fn episode_is_capped_at_max_steps() {
        let task = bare_task([1.0, 1.0]);
        let cfg = EnvConfig::default();
        let mut state = EnvState { position: [0.05, 0.05], steps: 0 };
        let mut count = 0;
        loop {
            let (next, _, _, done) = step(&task, &cfg, &state, &[0.0, 0.0]).unwrap();
            state = next;
            count += 1;
            if done {
                break;
            }
        }
        assert_eq!(count, 101, "cap fires when the length exceeds max_steps");
    }

    #[test]
    fn puddle_scales_velocity() {
        let mut task = bare_task([1.0, 1.0]);
        task.puddles.push(Puddle { center: [0.3, 0.2], radius: 0.15 });
        let cfg = EnvConfig::default();
        let state = EnvState { position: [0.2, 0.2], steps: 0 };
        // Move would land at (0.3, 0.2), inside the puddle: velocity x kappa.
        let (next, _, _, _) = step(&task, &cfg, &state, &[0.1, 0.0]).unwrap();
        assert_relative_eq!(next.position[0], 0.2 + 0.2 * 0.1, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_action_is_rejected() {
        let task = bare_task([0.5, 0.5]);
        let cfg = EnvConfig::default();
        let state = EnvState { position: [0.2, 0.2], steps: 0 };
        assert!(matches!(
            step(&task, &cfg, &state, &[f64::NAN, 0.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn reward_improves_as_distance_shrinks() {
        let task = bare_task([0.9, 0.9]);
        let cfg = EnvConfig::default();
        let far = EnvState { position: [0.1, 0.1], steps: 0 };
        let near = EnvState { position: [0.8, 0.8], steps: 0 };
        let (_, _, r_far, _) = step(&task, &cfg, &far, &[0.0, 0.0]).unwrap();
        let (_, _, r_near, _) = step(&task, &cfg, &near, &[0.0, 0.0]).unwrap();
        assert!(r_far <= 0.0 && r_near <= 0.0);
        assert!(r_near > r_far);
    }
}
