//! Continual reinforcement learning over a stream of navigation tasks.
//!
//! The toolkit trains a single multihead policy on a dynamic environment
//! presented as a sequence of stationary tasks. A Chinese-restaurant-process
//! mixture over environment features detects context changes online and
//! grows the policy by one output head per instantiated context, while a
//! KL-distillation term anchors previously learned behavior. Evaluation
//! utilities measure forgetting, forward transfer, and generalization.
//!
//! Module map:
//! - [`numkit`]: dense-network forward/backward passes, Gaussian action
//!   distributions, KL divergence, gradient verification.
//! - [`envs`]: parametric 2-D navigation tasks and clustered task streams.
//! - [`features`]: random-policy exploration and observation-mean features.
//! - [`context`]: CRP-prior infinite Gaussian mixture, online detection.
//! - [`policy`]: expandable multihead policy and head initialization.
//! - [`learner`]: REINFORCE + distillation training loop and baselines.
//! - [`eval`], [`checkpoint`], [`rundir`]: test protocol, metrics,
//!   persistence, and run-directory artifacts.

pub mod checkpoint;
pub mod context;
pub mod envs;
pub mod error;
pub mod eval;
pub mod features;
pub mod learner;
pub mod numkit;
pub mod policy;
pub mod rng;
pub mod rundir;
pub mod verify;

pub use context::{Assignment, CentroidUpdate, ContextRegistry};
pub use envs::{
    generate_stream, EnvConfig, EnvState, Observation, Puddle, StreamConfig, StreamType, TaskSpec,
    TaskStream,
};
pub use error::{Error, Result};
pub use eval::{test_all, EvalOutcome, RunRecord};
pub use features::FeatureVector;
pub use learner::{run_stream, LearnerConfig, LearnerState, Mode, Trajectory};
pub use numkit::{
    gaussian_log_prob, kl_diag_gaussian, Activation, DenseNetParams, GaussianActionDist,
    GradientBundle, Mat,
};
pub use policy::{HeadInit, HeadParams, MultiheadPolicy, PolicyGradient};
