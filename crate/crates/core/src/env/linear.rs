use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{check_action, ContinuousEnvironment, StepResult};
use crate::linalg::spectral_radius;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelConfig {
    pub state_dim: usize,
    pub n_actions: usize,
    /// Standard deviation of additive Gaussian transition noise.
    pub noise_std: f64,
    /// Upper bound on the spectral radius of every transition matrix.
    pub max_spectral_radius: f64,
    /// Episode ends once `‖s‖∞` exceeds this.
    pub state_bound: f64,
    pub max_episode_steps: usize,
    /// Start states are uniform in `[-start_range, start_range]^d`.
    pub start_range: f64,
}

impl Default for LinearModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 4,
            n_actions: 11,
            noise_std: 0.01,
            max_spectral_radius: 0.95,
            state_bound: 100.0,
            max_episode_steps: 200,
            start_range: 1.0,
        }
    }
}

/// Linear dynamics `s' = A_a s + ε`, reward `r = (A^R_a)ᵀ s`, with matrices
/// drawn once from the seed.
#[derive(Debug, Clone)]
pub struct LinearModel {
    config: LinearModelConfig,
    transition: Vec<DMatrix<f64>>,
    reward: Vec<DVector<f64>>,
    state: DVector<f64>,
    episode_steps: usize,
    rng: crate::Rng,
}

impl LinearModel {
    pub fn new(config: LinearModelConfig, seed: u64) -> Result<Self> {
        let d = config.state_dim;
        let mut gen = crate::seeded_rng(seed, 7);
        let scale = 1.0 / (d as f64).sqrt();
        let mut transition = Vec::with_capacity(config.n_actions);
        let mut reward = Vec::with_capacity(config.n_actions);
        for _ in 0..config.n_actions {
            let mut a = DMatrix::from_fn(d, d, |_, _| {
                { let z: f64 = StandardNormal.sample(&mut gen); scale * z }
            });
            let rho = spectral_radius(&a);
            if rho > config.max_spectral_radius {
                a *= config.max_spectral_radius / rho;
            }
            transition.push(a);
            reward.push(DVector::from_fn(d, |_, _| StandardNormal.sample(&mut gen)));
        }
        let mut env = Self {
            state: DVector::zeros(d),
            config,
            transition,
            reward,
            episode_steps: 0,
            rng: crate::seeded_rng(seed, 0),
        };
        env.reset();
        Ok(env)
    }

    pub fn transition_matrix(&self, action: usize) -> &DMatrix<f64> {
        &self.transition[action]
    }

    pub fn reward_vector(&self, action: usize) -> &DVector<f64> {
        &self.reward[action]
    }

    pub fn config(&self) -> &LinearModelConfig {
        &self.config
    }

    pub fn set_state(&mut self, state: DVector<f64>) {
        assert_eq!(state.len(), self.config.state_dim);
        self.state = state;
    }
}

impl ContinuousEnvironment for LinearModel {
    fn name(&self) -> &str {
        "linear-model"
    }

    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    fn state(&self) -> &DVector<f64> {
        &self.state
    }

    fn reset(&mut self) -> DVector<f64> {
        let r = self.config.start_range;
        self.state = DVector::from_fn(self.config.state_dim, |_, _| {
            self.rng.random_range(-r..=r)
        });
        self.episode_steps = 0;
        self.state.clone()
    }

    fn step(&mut self, action: usize) -> Result<StepResult<DVector<f64>>> {
        check_action(action, self.config.n_actions)?;
        let reward = self.reward[action].dot(&self.state);
        let mut next = &self.transition[action] * &self.state;
        if self.config.noise_std > 0.0 {
            for x in next.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *x += self.config.noise_std * z;
            }
        }
        self.episode_steps += 1;
        let terminal =
            self.is_failure(&next) || self.episode_steps >= self.config.max_episode_steps;
        self.state = next.clone();
        Ok(StepResult {
            next_state: next,
            reward,
            terminal,
        })
    }

    fn features(&self, state: &DVector<f64>) -> DVector<f64> {
        state.clone()
    }

    fn n_features(&self) -> usize {
        self.config.state_dim
    }

    fn is_failure(&self, state: &DVector<f64>) -> bool {
        state.amax() > self.config.state_bound
    }

    fn reward_bounds(&self) -> (f64, f64) {
        let max = self
            .reward
            .iter()
            .map(|w| w.lp_norm(1) * self.config.state_bound)
            .fold(0.0, f64::max);
        (-max, max)
    }

    fn probe_support(&self) -> (DVector<f64>, DVector<f64>) {
        let r = 1.5 * self.config.start_range;
        (
            DVector::from_element(self.config.state_dim, -r),
            DVector::from_element(self.config.state_dim, r),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> LinearModel {
        let config = LinearModelConfig {
            noise_std: 0.0,
            ..Default::default()
        };
        LinearModel::new(config, 3).unwrap()
    }

    #[test]
    fn zero_state_is_absorbing_with_zero_reward() {
        let mut env = noiseless();
        for a in 0..11 {
            env.set_state(DVector::zeros(4));
            let r = env.step(a).unwrap();
            assert_eq!(r.reward, 0.0);
            assert!(r.next_state.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn reward_is_dot_product() {
        let mut env = noiseless();
        let s = DVector::from_vec(vec![0.3, -1.0, 0.5, 2.0]);
        env.set_state(s.clone());
        let r = env.step(4).unwrap();
        assert_eq!(r.reward, env.reward_vector(4).dot(&s));
        assert_eq!(r.next_state, env.transition_matrix(4) * &s);
    }

    #[test]
    fn same_seed_same_matrices() {
        let a = LinearModel::new(LinearModelConfig::default(), 9).unwrap();
        let b = LinearModel::new(LinearModelConfig::default(), 9).unwrap();
        assert_eq!(a.transition_matrix(3), b.transition_matrix(3));
    }

    #[test]
    fn episodes_are_capped() {
        let mut env = LinearModel::new(LinearModelConfig::default(), 1).unwrap();
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(0).unwrap().terminal {
                break;
            }
        }
        assert!(steps <= 200);
        assert!(env.step(11).is_err());
    }
}
