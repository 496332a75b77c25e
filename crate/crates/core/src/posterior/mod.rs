//! Conjugate beliefs over MDPs.

pub mod conjugacy;
mod discrete;
mod linreg;

pub use discrete::{
    sample_dirichlet, DirichletNormalGammaPosterior, NormalGamma, RewardSampling, Transition,
};
pub use linreg::{
    sample_inverse_wishart, BayesLinRegPosterior, ContinuousTransition, LinRegPrior,
    LinearMdpSample, MatrixNormalInverseWishart, MniwParams, NormalInverseGamma,
};
