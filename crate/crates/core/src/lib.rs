//! Bayesian reinforcement learning through inferential induction.
//!
//! The crate infers posteriors over value functions from posteriors over
//! MDPs by Monte-Carlo importance weighting, and plans with Bayesian
//! backwards induction (BBI). Posterior sampling (PSRL) and multi-MDP
//! backwards induction (MMBI) are provided as baselines, together with the
//! benchmark environments and a seeded experiment harness.

pub mod env;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod mdp;
pub mod planners;
pub mod posterior;

pub use error::{Error, Result};
pub use inference::{
    LikelihoodScale, ValueBeliefFittedQ, ValueBeliefGaussian, WeightMode, WeightedValueEnsemble,
};
pub use mdp::{DiscreteMdp, NonstationaryPolicy, StationaryPolicy, ValueVector};
pub use planners::{PlanOutput, PlannerConfig};
pub use posterior::{
    BayesLinRegPosterior, ContinuousTransition, DirichletNormalGammaPosterior, NormalGamma,
    Transition,
};

/// Deterministic, portable generator used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the generator for `seed` on a given `stream`.
///
/// Streams let a single seed drive independent components (environment,
/// agent, evaluation) without their draws interleaving.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
