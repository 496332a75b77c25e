//! Bayesian backwards induction and the sampling-based baselines.

mod continuous;

pub use continuous::{bbi_plan_continuous, ContinuousPlan};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{value_span, EnvId};
use crate::inference::{
    method_one_induction, LikelihoodScale, MethodOneConfig, StagePolicy, ValueBeliefGaussian,
    WeightMode,
};
use crate::mdp::{argmax_row, exact_optimal, q_values, DiscreteMdp, NonstationaryPolicy, StationaryPolicy};
use crate::posterior::DirichletNormalGammaPosterior;
use crate::{Error, Result};

pub use crate::inference::bayes_q;

/// Hyperparameters shared by the planners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub lookahead: usize,
    pub n_mdp_samples: usize,
    pub n_value_samples: usize,
    pub n_next_value_samples: usize,
    /// `σ² = sigma_sq_factor · V_span²`.
    pub sigma_sq_factor: f64,
    pub gamma: f64,
    pub weight_mode: WeightMode,
    pub ridge_lambda: f64,
    /// Probe states per continuous plan.
    pub n_probe_states: usize,
    /// Share of continuous probe states drawn from the history.
    pub history_probe_fraction: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self::discrete()
    }
}

impl PlannerConfig {
    pub fn discrete() -> Self {
        Self {
            lookahead: 100,
            n_mdp_samples: 10,
            n_value_samples: 50,
            n_next_value_samples: 10,
            sigma_sq_factor: LikelihoodScale::DEFAULT_FACTOR,
            gamma: 0.99,
            weight_mode: WeightMode::Inferential,
            ridge_lambda: 0.01,
            n_probe_states: 30,
            history_probe_fraction: 0.8,
        }
    }

    pub fn continuous() -> Self {
        Self {
            lookahead: 20,
            n_value_samples: 20,
            // Fewer probes left the frozen pendulum policies erratic.
            n_probe_states: 100,
            ..Self::discrete()
        }
    }

    /// Defaults for an environment: fewer value samples on the two large
    /// discrete worlds, the short lookahead on continuous ones.
    pub fn for_env(id: EnvId) -> Self {
        match id {
            EnvId::LavaLake10x10 | EnvId::Maze => Self {
                n_value_samples: 20,
                ..Self::discrete()
            },
            EnvId::LinearModel | EnvId::InvertedPendulum => Self::continuous(),
            _ => Self::discrete(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookahead == 0 || self.n_mdp_samples == 0 || self.n_value_samples == 0 {
            return Err(Error::Config(
                "lookahead, n_mdp_samples and n_value_samples must be at least 1".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} not in (0, 1)", self.gamma)));
        }
        if !(self.sigma_sq_factor > 0.0) || self.ridge_lambda < 0.0 {
            return Err(Error::Config("sigma_sq_factor must be positive, ridge_lambda nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.history_probe_fraction) || self.n_probe_states == 0 {
            return Err(Error::Config("probe settings out of range".into()));
        }
        Ok(())
    }

    pub fn method_one(&self) -> MethodOneConfig {
        MethodOneConfig {
            lookahead: self.lookahead,
            n_mdp_samples: self.n_mdp_samples,
            n_value_samples: self.n_value_samples,
            n_next_value_samples: self.n_next_value_samples,
            weight_mode: self.weight_mode,
        }
    }

    pub fn scale(&self, reward_bounds: (f64, f64)) -> Result<LikelihoodScale> {
        LikelihoodScale::from_span(value_span(reward_bounds, self.gamma), self.sigma_sq_factor)
    }
}

/// A BBI plan with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanOutput {
    pub policy: NonstationaryPolicy,
    /// `ψ_1, …, ψ_T`.
    pub beliefs: Vec<ValueBeliefGaussian>,
    /// `Q̄_1, …, Q̄_T`.
    #[serde(with = "crate::linalg::nested_matrix_vec")]
    pub bayes_q: Vec<DMatrix<f64>>,
    pub scale: LikelihoodScale,
}

impl PlanOutput {
    /// Q̄ tables and belief means as JSON.
    pub fn diagnostics_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Bayesian backwards induction on a discrete posterior.
///
/// Samples `N_M` MDPs before any other draw, then runs the Method-1 pass
/// with greedy stages.
pub fn bbi_plan<R: rand::Rng + ?Sized>(
    posterior: &DirichletNormalGammaPosterior,
    config: &PlannerConfig,
    reward_bounds: (f64, f64),
    rng: &mut R,
) -> Result<PlanOutput> {
    config.validate()?;
    let mdps: Vec<DiscreteMdp> = (0..config.n_mdp_samples)
        .map(|_| posterior.sample_mdp(rng))
        .collect();
    bbi_plan_with_mdps(&mdps, config, reward_bounds, rng)
}

/// [`bbi_plan`] over given MDP samples.
pub fn bbi_plan_with_mdps<R: rand::Rng + ?Sized>(
    mdps: &[DiscreteMdp],
    config: &PlannerConfig,
    reward_bounds: (f64, f64),
    rng: &mut R,
) -> Result<PlanOutput> {
    let mut m1 = config.method_one();
    m1.n_mdp_samples = mdps.len();
    let trace = method_one_induction(mdps, StagePolicy::Greedy, &m1, config.scale(reward_bounds)?, rng)?;
    Ok(PlanOutput {
        policy: NonstationaryPolicy::new(trace.policies)?,
        beliefs: trace.beliefs,
        bayes_q: trace.bayes_q,
        scale: trace.scale,
    })
}

/// Posterior sampling: the optimal policy of one sampled MDP.
pub fn psrl_plan<R: rand::Rng + ?Sized>(
    posterior: &DirichletNormalGammaPosterior,
    rng: &mut R,
) -> StationaryPolicy {
    exact_optimal(&posterior.sample_mdp(rng)).0
}

/// Multi-MDP backwards induction over `n_mdps` posterior samples.
pub fn mmbi_plan<R: rand::Rng + ?Sized>(
    posterior: &DirichletNormalGammaPosterior,
    n_mdps: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<NonstationaryPolicy> {
    if n_mdps == 0 {
        return Err(Error::InvalidInput("MMBI needs at least one MDP".into()));
    }
    let mdps: Vec<DiscreteMdp> = (0..n_mdps).map(|_| posterior.sample_mdp(rng)).collect();
    mmbi_plan_with_mdps(&mdps, horizon)
}

/// Simultaneous backwards induction: each stage picks the action maximising
/// the mean Q over the MDPs, and every MDP's value follows that shared
/// action.
pub fn mmbi_plan_with_mdps(mdps: &[DiscreteMdp], horizon: usize) -> Result<NonstationaryPolicy> {
    let first = mdps
        .first()
        .ok_or_else(|| Error::InvalidInput("MMBI needs at least one MDP".into()))?;
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let n_s = first.n_states();
    let mut values = vec![DVector::<f64>::zeros(n_s); mdps.len()];
    let mut policies = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let qs = mdps
            .iter()
            .zip(&values)
            .map(|(m, v)| q_values(m, v))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = qs[0].clone();
        for q in &qs[1..] {
            mean += q;
        }
        mean /= mdps.len() as f64;
        let actions: Vec<usize> = (0..n_s).map(|s| argmax_row(&mean, s)).collect();
        for (v, q) in values.iter_mut().zip(&qs) {
            *v = DVector::from_fn(n_s, |s, _| q[(s, actions[s])]);
        }
        policies.push(StationaryPolicy::greedy(&mean));
    }
    policies.reverse();
    NonstationaryPolicy::new(policies)
}

/// Monte-Carlo estimate of `∫ max_π V^π_μ dβ(μ|D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesBound {
    /// Per-state mean of the optimal values.
    pub mean: DVector<f64>,
    /// Per-state standard error of that mean.
    pub std_err: DVector<f64>,
    pub samples: Vec<DVector<f64>>,
}

pub fn bayes_upper_bound<R: rand::Rng + ?Sized>(
    posterior: &DirichletNormalGammaPosterior,
    n_mdps: usize,
    rng: &mut R,
) -> Result<BayesBound> {
    if n_mdps == 0 {
        return Err(Error::InvalidInput("the bound needs at least one MDP".into()));
    }
    let mdps: Vec<DiscreteMdp> = (0..n_mdps).map(|_| posterior.sample_mdp(rng)).collect();
    Ok(bayes_upper_bound_with_mdps(&mdps))
}

pub fn bayes_upper_bound_with_mdps(mdps: &[DiscreteMdp]) -> BayesBound {
    let samples: Vec<DVector<f64>> = mdps.iter().map(|m| exact_optimal(m).1).collect();
    let n = samples.len() as f64;
    let n_s = samples[0].len();
    let mean = samples.iter().fold(DVector::zeros(n_s), |acc, v| acc + v) / n;
    let std_err = DVector::from_fn(n_s, |s, _| {
        if samples.len() < 2 {
            return 0.0;
        }
        let var = samples.iter().map(|v| (v[s] - mean[s]).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    BayesBound {
        mean,
        std_err,
        samples,
    }
}
