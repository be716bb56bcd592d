//! Shared fixtures for the benchmark suite.

use dacorl_core::envs::{generate_stream, EnvConfig, StreamConfig, StreamType, TaskStream};
use dacorl_core::policy::MultiheadPolicy;
use dacorl_core::rng::{rng_at, TAG_POLICY_INIT};

/// Production-sized single-head policy for Type I observations.
pub fn production_policy(seed: u64) -> MultiheadPolicy {
    let mut rng = rng_at(seed, &[TAG_POLICY_INIT]);
    MultiheadPolicy::new(4, 2, 200, &mut rng)
}

/// Default 50-task Type I stream.
pub fn default_stream(seed: u64) -> TaskStream {
    generate_stream(StreamType::I, seed, &StreamConfig::default()).expect("stream")
}

pub fn env() -> EnvConfig {
    EnvConfig::default()
}
