use rand::Rng as _;

use super::{check_action, DiscreteEnvironment, StepResult};
use crate::mdp::DiscreteMdp;
use crate::Result;

/// Five-state chain with two actions.
///
/// Action 0 pays 2 and returns to state 0. Action 1 advances one state for
/// no reward, or pays 10 and stays in the last state. With probability
/// `slip` the other action's effect (both transition and reward) applies.
#[derive(Debug, Clone)]
pub struct NChain {
    slip: f64,
    state: usize,
    rng: crate::Rng,
}

impl NChain {
    pub const N_STATES: usize = 5;
    pub const N_ACTIONS: usize = 2;
    pub const DEFAULT_SLIP: f64 = 0.2;

    pub fn new(seed: u64) -> Self {
        Self::with_slip(Self::DEFAULT_SLIP, seed)
    }

    pub fn with_slip(slip: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&slip), "slip must be a probability");
        Self {
            slip,
            state: 0,
            rng: crate::seeded_rng(seed, 0),
        }
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    /// Deterministic effect of `action` in `state`: `(next, reward)`.
    fn effect(state: usize, action: usize) -> (usize, f64) {
        match action {
            0 => (0, 2.0),
            _ if state + 1 < Self::N_STATES => (state + 1, 0.0),
            _ => (state, 10.0),
        }
    }

    /// Whether the last step slipped; exposed for frequency checks.
    pub fn step_with_slip_flag(&mut self, action: usize) -> Result<(StepResult<usize>, bool)> {
        check_action(action, Self::N_ACTIONS)?;
        let slipped = self.rng.random::<f64>() < self.slip;
        let effective = if slipped { 1 - action } else { action };
        let (next, reward) = Self::effect(self.state, effective);
        self.state = next;
        Ok((
            StepResult {
                next_state: next,
                reward,
                terminal: false,
            },
            slipped,
        ))
    }

    pub fn set_state(&mut self, state: usize) {
        assert!(state < Self::N_STATES);
        self.state = state;
    }
}

impl DiscreteEnvironment for NChain {
    fn name(&self) -> &str {
        "nchain"
    }

    fn n_states(&self) -> usize {
        Self::N_STATES
    }

    fn n_actions(&self) -> usize {
        Self::N_ACTIONS
    }

    fn start_state(&self) -> usize {
        0
    }

    fn state(&self) -> usize {
        self.state
    }

    fn reset(&mut self) -> usize {
        self.state = 0;
        0
    }

    fn step(&mut self, action: usize) -> Result<StepResult<usize>> {
        self.step_with_slip_flag(action).map(|(r, _)| r)
    }

    fn as_mdp(&self, discount: f64) -> DiscreteMdp {
        let n = Self::N_STATES;
        let m = Self::N_ACTIONS;
        let mut p = vec![0.0; n * m * n];
        let mut r = vec![0.0; n * m];
        for s in 0..n {
            for a in 0..m {
                for (effective, w) in [(a, 1.0 - self.slip), (1 - a, self.slip)] {
                    let (next, reward) = Self::effect(s, effective);
                    p[(s * m + a) * n + next] += w;
                    r[s * m + a] += w * reward;
                }
            }
        }
        DiscreteMdp::from_tables(n, m, &p, &r, discount).expect("valid NChain model")
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (0.0, 10.0)
    }
}

/// Nine-state deterministic double loop.
///
/// State 0 is shared. Action 0 from the start enters the right loop
/// (states 1–4), which any action advances; leaving state 4 back to the
/// start pays 1. Action 1 enters the left loop (states 5–8), which only
/// action 1 advances; leaving state 8 with action 1 pays 2, and action 0
/// anywhere in the left loop returns to the start for nothing.
#[derive(Debug, Clone)]
pub struct DoubleLoop {
    state: usize,
}

impl DoubleLoop {
    pub const N_STATES: usize = 9;
    pub const N_ACTIONS: usize = 2;

    pub fn new(_seed: u64) -> Self {
        Self { state: 0 }
    }

    fn effect(state: usize, action: usize) -> (usize, f64) {
        match (state, action) {
            (0, 0) => (1, 0.0),
            (0, _) => (5, 0.0),
            (1..=3, _) => (state + 1, 0.0),
            (4, _) => (0, 1.0),
            (5..=7, 1) => (state + 1, 0.0),
            (8, 1) => (0, 2.0),
            (_, _) => (0, 0.0),
        }
    }
}

impl DiscreteEnvironment for DoubleLoop {
    fn name(&self) -> &str {
        "doubleloop"
    }

    fn n_states(&self) -> usize {
        Self::N_STATES
    }

    fn n_actions(&self) -> usize {
        Self::N_ACTIONS
    }

    fn start_state(&self) -> usize {
        0
    }

    fn state(&self) -> usize {
        self.state
    }

    fn reset(&mut self) -> usize {
        self.state = 0;
        0
    }

    fn step(&mut self, action: usize) -> Result<StepResult<usize>> {
        check_action(action, Self::N_ACTIONS)?;
        let (next, reward) = Self::effect(self.state, action);
        self.state = next;
        Ok(StepResult {
            next_state: next,
            reward,
            terminal: false,
        })
    }

    fn as_mdp(&self, discount: f64) -> DiscreteMdp {
        let n = Self::N_STATES;
        let m = Self::N_ACTIONS;
        let mut p = vec![0.0; n * m * n];
        let mut r = vec![0.0; n * m];
        for s in 0..n {
            for a in 0..m {
                let (next, reward) = Self::effect(s, a);
                p[(s * m + a) * n + next] = 1.0;
                r[s * m + a] = reward;
            }
        }
        DiscreteMdp::from_tables(n, m, &p, &r, discount).expect("valid DoubleLoop model")
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (0.0, 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_optimal, exact_policy_value};

    #[test]
    fn nchain_last_state_advance_pays_ten() {
        let mut env = NChain::with_slip(0.0, 0);
        env.set_state(4);
        let r = env.step(1).unwrap();
        assert_eq!((r.next_state, r.reward), (4, 10.0));
    }

    #[test]
    fn nchain_return_pays_two() {
        let mut env = NChain::with_slip(0.0, 0);
        env.set_state(2);
        let r = env.step(0).unwrap();
        assert_eq!((r.next_state, r.reward), (0, 2.0));
    }

    #[test]
    fn nchain_slip_frequency() {
        let mut env = NChain::new(11);
        let n = 100_000;
        let slips = (0..n)
            .filter(|_| env.step_with_slip_flag(0).unwrap().1)
            .count();
        let freq = slips as f64 / n as f64;
        assert!((freq - 0.2).abs() <= 0.005, "{freq}");
    }

    #[test]
    fn nchain_rejects_bad_action() {
        assert!(NChain::new(0).step(2).is_err());
    }

    #[test]
    fn nchain_slip_swaps_reward_as_well() {
        let mdp = NChain::new(0).as_mdp(0.99);
        assert!((mdp.reward(0, 0) - 1.6).abs() < 1e-12);
        assert!((mdp.reward(4, 1) - (0.8 * 10.0 + 0.2 * 2.0)).abs() < 1e-12);
        assert!((mdp.prob(4, 1, 4) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn doubleloop_loop_rewards() {
        let mut env = DoubleLoop::new(0);
        let total: f64 = (0..5).map(|_| env.step(1).unwrap().reward).sum();
        assert_eq!(total, 2.0);
        assert_eq!(env.state(), 0);
        let total: f64 = (0..5).map(|_| env.step(0).unwrap().reward).sum();
        assert_eq!(total, 1.0);
        assert_eq!(env.state(), 0);
    }

    #[test]
    fn doubleloop_left_loop_abort_resets() {
        let mut env = DoubleLoop::new(0);
        env.step(1).unwrap();
        env.step(1).unwrap();
        let r = env.step(0).unwrap();
        assert_eq!((r.next_state, r.reward), (0, 0.0));
    }

    #[test]
    fn doubleloop_optimal_gain_is_point_four() {
        let env = DoubleLoop::new(0);
        let mdp = env.as_mdp(0.99);
        let (pi, _) = exact_optimal(&mdp);
        let mut sim = DoubleLoop::new(0);
        let steps = 10_000;
        let total: f64 = (0..steps)
            .map(|_| {
                let a = pi.mode(sim.state());
                sim.step(a).unwrap().reward
            })
            .sum();
        assert!((total / steps as f64 - 0.4).abs() < 1e-3);
        let v = exact_policy_value(&mdp, &pi).unwrap();
        // (1 − γ)V approaches the gain.
        assert!(((1.0 - 0.99) * v[0] - 0.4).abs() < 0.02);
    }
}
