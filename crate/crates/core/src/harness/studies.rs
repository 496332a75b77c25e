//! The posterior-quality, Bayes-bound and pendulum studies.

use nalgebra::DVector;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlgorithmId, ExperimentConfig};
use super::metrics::{mean_and_se, wasserstein_1d};
use super::runner::{episode_lengths, ContinuousRun, DiscreteRun, AGENT_STREAM};
use crate::env::{make_continuous, make_discrete, DiscreteEnvironment, EnvId, NChain};
use crate::inference::{
    mc_value_distribution, policy_evaluation_method1, LikelihoodScale, MethodOneConfig, WeightMode,
};
use crate::mdp::{exact_policy_value, StationaryPolicy};
use crate::planners::{bayes_upper_bound, bbi_plan, PlannerConfig};
use crate::posterior::{DirichletNormalGammaPosterior, RewardSampling, Transition};
use crate::{seeded_rng, Error, Result};

/// How a value distribution is reduced before measuring distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// Values at the start state.
    #[default]
    StartState,
    /// Per-state distances averaged over the states.
    StateAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosteriorStudyConfig {
    pub checkpoints: Vec<usize>,
    /// Runs of the inferential-induction evaluation per checkpoint.
    pub repetitions: usize,
    pub n_truth_samples: usize,
    pub n_belief_samples: usize,
    /// Probability of action 0 under the fixed policy.
    pub first_action_prob: f64,
    pub method_one: MethodOneConfig,
    pub sigma_sq_factor: f64,
    pub gamma: f64,
    pub seed: u64,
    pub projection: Projection,
    pub reward_sampling: RewardSampling,
}

impl Default for PosteriorStudyConfig {
    fn default() -> Self {
        Self {
            checkpoints: vec![10, 100, 1000],
            repetitions: 5,
            n_truth_samples: 1000,
            n_belief_samples: 1000,
            first_action_prob: 0.8,
            method_one: MethodOneConfig {
                lookahead: 1000,
                ..MethodOneConfig::default()
            },
            sigma_sq_factor: LikelihoodScale::DEFAULT_FACTOR,
            gamma: 0.99,
            seed: 0,
            projection: Projection::StartState,
            reward_sampling: RewardSampling::Sampled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorQualityRow {
    pub checkpoint: usize,
    /// Mean over the repetitions.
    pub inferential: f64,
    pub inferential_runs: Vec<f64>,
    pub mean_mdp: f64,
}

/// Distances of the inferential-induction belief and of the mean MDP's
/// value to the Monte-Carlo value distribution, for posteriors gathered by
/// a fixed NChain policy.
pub fn posterior_quality_experiment(config: &PosteriorStudyConfig) -> Result<Vec<PosteriorQualityRow>> {
    if config.checkpoints.is_empty() || config.repetitions == 0 {
        return Err(Error::Config("need checkpoints and at least one repetition".into()));
    }
    if config.checkpoints.windows(2).any(|w| w[0] >= w[1]) || config.checkpoints[0] == 0 {
        return Err(Error::Config("checkpoints must be positive and increasing".into()));
    }
    let mut env = NChain::new(config.seed);
    let n_s = env.n_states();
    let n_a = env.n_actions();
    let policy = StationaryPolicy::state_independent(
        n_s,
        &[config.first_action_prob, 1.0 - config.first_action_prob],
    )?;
    let mut posterior = DirichletNormalGammaPosterior::default_prior(n_s, n_a, config.gamma)?
        .with_reward_sampling(config.reward_sampling);
    let scale = LikelihoodScale::from_span(
        crate::env::value_span(env.reward_bounds(), config.gamma),
        config.sigma_sq_factor,
    )?;
    let mut act_rng = seeded_rng(config.seed, AGENT_STREAM);

    let mut snapshots = Vec::with_capacity(config.checkpoints.len());
    let mut t = 0;
    for &cp in &config.checkpoints {
        while t < cp {
            let s = env.state();
            let a = policy.sample_action(s, &mut act_rng);
            let out = env.step(a)?;
            posterior.update(&Transition {
                state: s,
                action: a,
                reward: out.reward,
                next_state: out.next_state,
            })?;
            t += 1;
        }
        snapshots.push((cp, posterior.clone()));
    }

    snapshots
        .par_iter()
        .enumerate()
        .map(|(i, (cp, post))| {
            let stream = 100 + 100 * i as u64;
            let truth = mc_value_distribution(
                post,
                &policy,
                config.n_truth_samples,
                &mut seeded_rng(config.seed, stream),
            )?;
            let mean_value = exact_policy_value(&post.mean_mdp(), &policy)?;
            let mean_mdp = project(&truth, config.projection, |s, xs| {
                wasserstein_1d(xs, &[mean_value[s]])
            })?;
            let inferential_runs = (0..config.repetitions)
                .map(|r| {
                    let mut rng = seeded_rng(config.seed, stream + 1 + r as u64);
                    let beliefs = policy_evaluation_method1(post, &policy, &config.method_one, scale, &mut rng)?;
                    project(&truth, config.projection, |s, xs| {
                        let draws = beliefs[0].sample_marginal(s, config.n_belief_samples, &mut rng);
                        wasserstein_1d(xs, &draws)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PosteriorQualityRow {
                checkpoint: *cp,
                inferential: mean_and_se(&inferential_runs).0,
                inferential_runs,
                mean_mdp,
            })
        })
        .collect()
}

fn project<F>(truth: &[DVector<f64>], projection: Projection, mut dist: F) -> Result<f64>
where
    F: FnMut(usize, &[f64]) -> Result<f64>,
{
    let n_s = truth[0].len();
    let states: Vec<usize> = match projection {
        Projection::StartState => vec![0],
        Projection::StateAverage => (0..n_s).collect(),
    };
    let mut total = 0.0;
    for &s in &states {
        let xs: Vec<f64> = truth.iter().map(|v| v[s]).collect();
        total += dist(s, &xs)?;
    }
    Ok(total / states.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesBoundStudyConfig {
    pub environment: EnvId,
    pub steps: usize,
    pub checkpoints: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Planner of the acting agent.
    pub agent: PlannerConfig,
    /// MDP samples of the bound and of the evaluating plan.
    pub n_bound_samples: usize,
    /// Lookahead of the evaluating plan.
    pub eval_lookahead: usize,
}

impl Default for BayesBoundStudyConfig {
    fn default() -> Self {
        Self {
            environment: EnvId::Nchain,
            steps: 10_000,
            checkpoints: vec![100, 1000, 10_000],
            seeds: (0..5).collect(),
            agent: PlannerConfig::discrete(),
            n_bound_samples: 100,
            eval_lookahead: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesBoundPoint {
    pub seed: u64,
    pub step: usize,
    /// BBI's belief mean at the start state.
    pub bbi_value: f64,
    pub bound: f64,
    pub bound_std_err: f64,
}

impl BayesBoundPoint {
    pub fn gap(&self) -> f64 {
        self.bound - self.bbi_value
    }
}

/// Runs a BBI agent and at each checkpoint compares the start-state mean
/// of its value belief with the Monte-Carlo Bayes upper bound.
pub fn bayes_bound_experiment(config: &BayesBoundStudyConfig) -> Result<Vec<BayesBoundPoint>> {
    if !config.environment.is_discrete() {
        return Err(Error::Config("the Bayes bound study needs a discrete environment".into()));
    }
    if config.checkpoints.iter().any(|&c| c == 0 || c > config.steps) {
        return Err(Error::Config("checkpoints must lie in 1..=steps".into()));
    }
    let exp = ExperimentConfig {
        steps: config.steps,
        seeds: config.seeds.clone(),
        lookahead: Some(config.agent.lookahead),
        n_mdp_samples: Some(config.agent.n_mdp_samples),
        n_value_samples: Some(config.agent.n_value_samples),
        n_next_value_samples: Some(config.agent.n_next_value_samples),
        sigma_sq_factor: Some(config.agent.sigma_sq_factor),
        gamma: Some(config.agent.gamma),
        ..ExperimentConfig::new(config.environment, AlgorithmId::Bbi)
    };
    exp.validate()?;
    let eval = PlannerConfig {
        lookahead: config.eval_lookahead,
        n_mdp_samples: config.n_bound_samples,
        ..config.agent
    };
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut run = DiscreteRun::new(&exp, seed)?;
            let start = make_discrete(config.environment, seed)?.start_state();
            let mut points = Vec::new();
            for t in 1..=config.steps {
                run.step()?;
                if !config.checkpoints.contains(&t) {
                    continue;
                }
                let mut rng = seeded_rng(seed, 1000 + t as u64);
                let bounds = run.env().reward_bounds();
                let plan = bbi_plan(run.posterior(), &eval, bounds, &mut rng)?;
                let bound = bayes_upper_bound(run.posterior(), config.n_bound_samples, &mut rng)?;
                points.push(BayesBoundPoint {
                    seed,
                    step: t,
                    bbi_value: plan.beliefs[0].mean[start],
                    bound: bound.mean[start],
                    bound_std_err: bound.std_err[start],
                });
            }
            Ok(points)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumStudyConfig {
    pub seeds: Vec<u64>,
    pub train_steps: usize,
    pub checkpoints: Vec<usize>,
    pub eval_episodes: usize,
    pub max_episode_steps: usize,
    pub baseline_episodes: usize,
    pub planner: PlannerConfig,
    pub weight_mode: WeightMode,
}

impl Default for PendulumStudyConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            train_steps: 30_000,
            checkpoints: vec![10_000, 20_000, 30_000],
            eval_episodes: 10,
            max_episode_steps: crate::env::PENDULUM_SUCCESS_STEPS,
            baseline_episodes: 200,
            planner: PlannerConfig::continuous(),
            weight_mode: WeightMode::Inferential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumStudy {
    /// Mean steps survived by the frozen policy at each checkpoint, per seed.
    pub survival: Vec<Vec<f64>>,
    /// Mean over seeds per checkpoint.
    pub mean_survival: Vec<f64>,
    pub random_baseline: f64,
}

/// Seed of the evaluation environment, disjoint from the training seeds.
fn eval_seed(seed: u64) -> u64 {
    u64::MAX - seed
}

/// Trains BBI on the inverted pendulum and evaluates the frozen first-stage
/// policy at the checkpoints against a uniformly random policy.
pub fn pendulum_study(config: &PendulumStudyConfig) -> Result<PendulumStudy> {
    if config.checkpoints.iter().any(|&c| c == 0 || c > config.train_steps) {
        return Err(Error::Config("checkpoints must lie in 1..=train_steps".into()));
    }
    let exp = ExperimentConfig {
        steps: config.train_steps,
        seeds: config.seeds.clone(),
        lookahead: Some(config.planner.lookahead),
        n_mdp_samples: Some(config.planner.n_mdp_samples),
        n_value_samples: Some(config.planner.n_value_samples),
        n_next_value_samples: Some(config.planner.n_next_value_samples),
        sigma_sq_factor: Some(config.planner.sigma_sq_factor),
        gamma: Some(config.planner.gamma),
        ridge_lambda: Some(config.planner.ridge_lambda),
        n_probe_states: Some(config.planner.n_probe_states),
        ..ExperimentConfig::new(
            EnvId::InvertedPendulum,
            match config.weight_mode {
                WeightMode::Inferential => AlgorithmId::Bbi,
                WeightMode::MeanField => AlgorithmId::MeanFieldBbi,
            },
        )
    };
    exp.validate()?;
    let survival = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut run = ContinuousRun::new(&exp, seed)?;
            let mut env = make_continuous(EnvId::InvertedPendulum, eval_seed(seed))?;
            let mut out = Vec::new();
            for t in 1..=config.train_steps {
                run.step()?;
                if !config.checkpoints.contains(&t) {
                    continue;
                }
                let plan = run
                    .current_plan()
                    .ok_or_else(|| Error::Config("agent has no plan".into()))?;
                let lengths = episode_lengths(
                    env.as_mut(),
                    |e, s| plan.act(&e.features(s)),
                    config.eval_episodes,
                    config.max_episode_steps,
                )?;
                out.push(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_survival = (0..config.checkpoints.len())
        .map(|i| survival.iter().map(|s| s[i]).sum::<f64>() / survival.len() as f64)
        .collect();
    Ok(PendulumStudy {
        survival,
        mean_survival,
        random_baseline: random_pendulum_baseline(config.baseline_episodes, config.max_episode_steps, 0)?,
    })
}

/// Mean steps survived by the uniformly random policy.
pub fn random_pendulum_baseline(episodes: usize, max_steps: usize, seed: u64) -> Result<f64> {
    let mut env = make_continuous(EnvId::InvertedPendulum, eval_seed(seed))?;
    let mut rng = seeded_rng(seed, AGENT_STREAM);
    let n_a = env.n_actions();
    let lengths = episode_lengths(env.as_mut(), |_, _| rng.random_range(0..n_a), episodes, max_steps)?;
    Ok(lengths.iter().sum::<usize>() as f64 / lengths.len().max(1) as f64)
}
