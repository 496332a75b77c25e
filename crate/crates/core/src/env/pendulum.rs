use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::DVector;
use rand::Rng as _;

use super::{check_action, ContinuousEnvironment, StepResult};
use crate::Result;

/// Steps after which a balancing episode counts as a success.
pub const PENDULUM_SUCCESS_STEPS: usize = 3000;

const RBF_CENTRES: [(f64, f64); 9] = [
    (-FRAC_PI_4, -1.0),
    (-FRAC_PI_4, 0.0),
    (-FRAC_PI_4, 1.0),
    (0.0, -1.0),
    (0.0, 0.0),
    (0.0, 1.0),
    (FRAC_PI_4, -1.0),
    (FRAC_PI_4, 0.0),
    (FRAC_PI_4, 1.0),
];
const RBF_VARIANCE: f64 = 1.0;

/// A constant followed by the nine radial basis functions
/// `exp(−‖s − μ_c‖² / 2σ²)` on `(θ, θ̇)`.
pub fn pendulum_features(state: &DVector<f64>) -> DVector<f64> {
    let mut phi = DVector::zeros(10);
    phi[0] = 1.0;
    for (i, (ct, cv)) in RBF_CENTRES.iter().enumerate() {
        let d2 = (state[0] - ct).powi(2) + (state[1] - cv).powi(2);
        phi[i + 1] = (-d2 / (2.0 * RBF_VARIANCE)).exp();
    }
    phi
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumConfig {
    pub gravity: f64,
    pub pole_mass: f64,
    pub cart_mass: f64,
    pub pole_length: f64,
    pub dt: f64,
    pub forces: [f64; 3],
    /// Half-width of the uniform force noise; zero disables it.
    pub noise: f64,
    pub start_range: f64,
    pub success_steps: usize,
    /// Append `(θ, θ̇)` to the features the learned model regresses on.
    pub raw_state_regressors: bool,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            pole_mass: 2.0,
            cart_mass: 8.0,
            pole_length: 0.5,
            dt: 0.1,
            forces: [-50.0, 0.0, 50.0],
            noise: 10.0,
            start_range: 0.01,
            success_steps: PENDULUM_SUCCESS_STEPS,
            raw_state_regressors: true,
        }
    }
}

/// Pendulum on a cart; state `(θ, θ̇)`.
///
/// Falling past `|θ| = π/2` ends the episode with reward −1; every other
/// step pays 0, and surviving `success_steps` steps ends the episode too.
#[derive(Debug, Clone)]
pub struct InvertedPendulum {
    config: PendulumConfig,
    state: DVector<f64>,
    episode_steps: usize,
    rng: crate::Rng,
}

impl InvertedPendulum {
    pub fn new(config: PendulumConfig, seed: u64) -> Self {
        let mut env = Self {
            config,
            state: DVector::zeros(2),
            episode_steps: 0,
            rng: crate::seeded_rng(seed, 0),
        };
        env.reset();
        env
    }

    pub fn config(&self) -> &PendulumConfig {
        &self.config
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.state = DVector::from_vec(vec![theta, theta_dot]);
    }

    /// Angular acceleration for force `u`.
    pub fn angular_acceleration(&self, theta: f64, theta_dot: f64, u: f64) -> f64 {
        let c = &self.config;
        let alpha = 1.0 / (c.pole_mass + c.cart_mass);
        let num = c.gravity * theta.sin()
            - alpha * c.pole_mass * c.pole_length * theta_dot.powi(2) * (2.0 * theta).sin() / 2.0
            - alpha * theta.cos() * u;
        let den = 4.0 * c.pole_length / 3.0 - alpha * c.pole_mass * c.pole_length * theta.cos().powi(2);
        num / den
    }
}

impl ContinuousEnvironment for InvertedPendulum {
    fn name(&self) -> &str {
        "inverted-pendulum"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn state(&self) -> &DVector<f64> {
        &self.state
    }

    fn reset(&mut self) -> DVector<f64> {
        let r = self.config.start_range;
        let theta = self.rng.random_range(-r..=r);
        let theta_dot = self.rng.random_range(-r..=r);
        self.state = DVector::from_vec(vec![theta, theta_dot]);
        self.episode_steps = 0;
        self.state.clone()
    }

    fn step(&mut self, action: usize) -> Result<StepResult<DVector<f64>>> {
        check_action(action, 3)?;
        let noise = if self.config.noise > 0.0 {
            self.rng.random_range(-self.config.noise..=self.config.noise)
        } else {
            0.0
        };
        let u = self.config.forces[action] + noise;
        let (theta, theta_dot) = (self.state[0], self.state[1]);
        let acc = self.angular_acceleration(theta, theta_dot, u);
        let next = DVector::from_vec(vec![
            theta + self.config.dt * theta_dot,
            theta_dot + self.config.dt * acc,
        ]);
        self.episode_steps += 1;
        let failed = self.is_failure(&next);
        let terminal = failed || self.episode_steps >= self.config.success_steps;
        self.state = next.clone();
        Ok(StepResult {
            next_state: next,
            reward: if failed { -1.0 } else { 0.0 },
            terminal,
        })
    }

    fn features(&self, state: &DVector<f64>) -> DVector<f64> {
        pendulum_features(state)
    }

    fn n_features(&self) -> usize {
        10
    }

    fn model_features(&self, state: &DVector<f64>) -> DVector<f64> {
        let phi = pendulum_features(state);
        if !self.config.raw_state_regressors {
            return phi;
        }
        DVector::from_iterator(12, phi.iter().copied().chain([state[0], state[1]]))
    }

    fn n_model_features(&self) -> usize {
        if self.config.raw_state_regressors {
            12
        } else {
            10
        }
    }

    fn is_failure(&self, state: &DVector<f64>) -> bool {
        state[0].abs() > FRAC_PI_2
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (-1.0, 0.0)
    }

    fn probe_support(&self) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_vec(vec![-FRAC_PI_2, -3.0]),
            DVector::from_vec(vec![FRAC_PI_2, 3.0]),
        )
    }
}
