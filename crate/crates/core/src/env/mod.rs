//! Benchmark environments as seeded simulators.
//!
//! Discrete environments fold episode resets into their transitions: when a
//! step ends an episode, the returned `next_state` is already the start
//! state and `terminal` marks the boundary. Their exported MDPs describe
//! the same folded process. Continuous environments return the state the
//! dynamics produced and expect the caller to `reset` after a terminal step.

mod chain;
mod grid;
mod linear;
mod pendulum;

pub use chain::{DoubleLoop, NChain};
pub use grid::{CellKind, GridMap, GridWorld, LavaLakeVariant, Maze, LAVALAKE_10X10, LAVALAKE_5X7, MAZE};
pub use linear::{LinearModel, LinearModelConfig};
pub use pendulum::{pendulum_features, InvertedPendulum, PendulumConfig, PENDULUM_SUCCESS_STEPS};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::mdp::DiscreteMdp;
use crate::{Error, Result};

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<S> {
    pub next_state: S,
    pub reward: f64,
    /// Episode boundary.
    pub terminal: bool,
}

pub trait DiscreteEnvironment: Send {
    fn name(&self) -> &str;
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn start_state(&self) -> usize;
    fn state(&self) -> usize;
    fn reset(&mut self) -> usize;
    fn step(&mut self, action: usize) -> Result<StepResult<usize>>;
    /// Exact model of the simulator (resets folded into transitions).
    fn as_mdp(&self, discount: f64) -> DiscreteMdp;
    /// `(r_min, r_max)` over all transitions.
    fn reward_bounds(&self) -> (f64, f64);
}

pub trait ContinuousEnvironment: Send {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn state(&self) -> &DVector<f64>;
    fn reset(&mut self) -> DVector<f64>;
    fn step(&mut self, action: usize) -> Result<StepResult<DVector<f64>>>;
    /// Feature map used by the value and model regressions.
    fn features(&self, state: &DVector<f64>) -> DVector<f64>;
    fn n_features(&self) -> usize;
    /// Regressors of the learned transition and reward models.
    fn model_features(&self, state: &DVector<f64>) -> DVector<f64> {
        self.features(state)
    }
    fn n_model_features(&self) -> usize {
        self.n_features()
    }
    /// States from which the process does not continue.
    fn is_failure(&self, state: &DVector<f64>) -> bool;
    fn reward_bounds(&self) -> (f64, f64);
    /// Box `(low, high)` the planner draws uniform probe states from.
    fn probe_support(&self) -> (DVector<f64>, DVector<f64>);
}

/// `(r_max − r_min) / (1 − γ)`.
pub fn value_span(reward_bounds: (f64, f64), discount: f64) -> f64 {
    (reward_bounds.1 - reward_bounds.0) / (1.0 - discount)
}

/// Identifier of a benchmark environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    Nchain,
    Doubleloop,
    #[serde(rename = "lavalake-5x7")]
    LavaLake5x7,
    #[serde(rename = "lavalake-10x10")]
    LavaLake10x10,
    Maze,
    LinearModel,
    InvertedPendulum,
}

impl EnvId {
    pub fn is_discrete(self) -> bool {
        !matches!(self, EnvId::LinearModel | EnvId::InvertedPendulum)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Nchain => "nchain",
            EnvId::Doubleloop => "doubleloop",
            EnvId::LavaLake5x7 => "lavalake-5x7",
            EnvId::LavaLake10x10 => "lavalake-10x10",
            EnvId::Maze => "maze",
            EnvId::LinearModel => "linear-model",
            EnvId::InvertedPendulum => "inverted-pendulum",
        }
    }

    pub fn all() -> [EnvId; 7] {
        [
            EnvId::Nchain,
            EnvId::Doubleloop,
            EnvId::LavaLake5x7,
            EnvId::LavaLake10x10,
            EnvId::Maze,
            EnvId::LinearModel,
            EnvId::InvertedPendulum,
        ]
    }
}

impl std::str::FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::all()
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment '{s}'")))
    }
}

/// Builds a discrete environment seeded with `seed`.
pub fn make_discrete(id: EnvId, seed: u64) -> Result<Box<dyn DiscreteEnvironment>> {
    Ok(match id {
        EnvId::Nchain => Box::new(NChain::new(seed)),
        EnvId::Doubleloop => Box::new(DoubleLoop::new(seed)),
        EnvId::LavaLake5x7 => Box::new(GridWorld::lavalake(LavaLakeVariant::Small, seed)?),
        EnvId::LavaLake10x10 => Box::new(GridWorld::lavalake(LavaLakeVariant::Large, seed)?),
        EnvId::Maze => Box::new(Maze::new(seed)?),
        other => {
            return Err(Error::Config(format!(
                "{} is not a discrete environment",
                other.as_str()
            )))
        }
    })
}

/// Builds a continuous environment seeded with `seed`.
pub fn make_continuous(id: EnvId, seed: u64) -> Result<Box<dyn ContinuousEnvironment>> {
    Ok(match id {
        EnvId::LinearModel => Box::new(LinearModel::new(LinearModelConfig::default(), seed)?),
        EnvId::InvertedPendulum => Box::new(InvertedPendulum::new(PendulumConfig::default(), seed)),
        other => {
            return Err(Error::Config(format!(
                "{} is not a continuous environment",
                other.as_str()
            )))
        }
    })
}

fn check_action(action: usize, n_actions: usize) -> Result<()> {
    if action >= n_actions {
        Err(Error::InvalidAction { action, n_actions })
    } else {
        Ok(())
    }
}
