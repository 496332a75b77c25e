//! Tabular MDPs, policies and exact dynamic programming.

mod dp;

pub use dp::{
    average_reward, backwards_induction, bellman_backup, exact_optimal, exact_policy_value, q_values,
    VALUE_ITERATION_MAX_SWEEPS, VALUE_ITERATION_TOL,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// State values `V(s)`.
pub type ValueVector = DVector<f64>;

const ROW_SUM_TOL: f64 = 1e-9;

/// A finite MDP with state-action mean rewards.
///
/// Transitions are stored as an `(S·A) × S` matrix whose row `s·A + a` is
/// `P(· | s, a)`, so that `P V` for a batch of value vectors is one product.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMdp {
    n_states: usize,
    n_actions: usize,
    transition: DMatrix<f64>,
    reward: DMatrix<f64>,
    discount: f64,
}

impl DiscreteMdp {
    /// Builds an MDP from a transition matrix laid out as described on the
    /// type and an `S × A` reward table.
    pub fn new(
        transition: DMatrix<f64>,
        reward: DMatrix<f64>,
        discount: f64,
    ) -> Result<Self> {
        let n_states = reward.nrows();
        let n_actions = reward.ncols();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidInput("MDP needs at least one state and action".into()));
        }
        if transition.nrows() != n_states * n_actions || transition.ncols() != n_states {
            return Err(Error::Dimension(format!(
                "transition must be {}x{}, got {}x{}",
                n_states * n_actions,
                n_states,
                transition.nrows(),
                transition.ncols()
            )));
        }
        // γ = 0 is accepted for degenerate test fixtures.
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidInput(format!("discount {discount} not in [0, 1)")));
        }
        for row in 0..transition.nrows() {
            let r = transition.row(row);
            if r.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidInput(format!("negative or non-finite probability in row {row}")));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "transition row {row} sums to {sum}"
                )));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
        })
    }

    /// Builds an MDP from a flat `(s, a, s')` probability table.
    pub fn from_tables(
        n_states: usize,
        n_actions: usize,
        transition: &[f64],
        reward: &[f64],
        discount: f64,
    ) -> Result<Self> {
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        Self::new(
            DMatrix::from_row_slice(n_states * n_actions, n_states, transition),
            DMatrix::from_row_slice(n_states, n_actions, reward),
            discount,
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidInput(format!("discount {discount} not in [0, 1)")));
        }
        self.discount = discount;
        Ok(self)
    }

    #[inline]
    pub fn row_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(self.row_index(s, a), next)]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[(s, a)]
    }

    /// `(S·A) × S` transition matrix.
    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// `S × A` mean reward table.
    pub fn reward_table(&self) -> &DMatrix<f64> {
        &self.reward
    }

    fn check_policy(&self, policy: &StationaryPolicy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// Policy-marginal reward `r̄(s, π) = Σ_a π(a|s) r(s,a)`.
    pub fn policy_reward(&self, policy: &StationaryPolicy) -> Result<DVector<f64>> {
        self.check_policy(policy)?;
        Ok(DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions)
                .map(|a| policy.prob(s, a) * self.reward[(s, a)])
                .sum()
        }))
    }

    /// Policy-marginal kernel `P^π(s'|s) = Σ_a π(a|s) P(s'|s,a)`.
    pub fn policy_transition(&self, policy: &StationaryPolicy) -> Result<DMatrix<f64>> {
        self.check_policy(policy)?;
        let mut p = DMatrix::zeros(self.n_states, self.n_states);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                let row = self.transition.row(self.row_index(s, a));
                for next in 0..self.n_states {
                    p[(s, next)] += w * row[next];
                }
            }
        }
        Ok(p)
    }
}

/// A Markov policy `π(a|s)` shared across time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    n_states: usize,
    n_actions: usize,
    action_prob: Vec<f64>,
}

impl StationaryPolicy {
    /// Builds a policy from a row-major `S × A` probability table.
    pub fn new(n_states: usize, n_actions: usize, action_prob: Vec<f64>) -> Result<Self> {
        if action_prob.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "policy table has {} entries, expected {}",
                action_prob.len(),
                n_states * n_actions
            )));
        }
        for s in 0..n_states {
            let row = &action_prob[s * n_actions..(s + 1) * n_actions];
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidInput(format!("policy row {s} has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            action_prob,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            action_prob: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// The same action distribution in every state.
    pub fn state_independent(n_states: usize, probs: &[f64]) -> Result<Self> {
        let table = (0..n_states).flat_map(|_| probs.iter().copied()).collect();
        Self::new(n_states, probs.len(), table)
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut table = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidAction { action: a, n_actions });
            }
            table[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            action_prob: table,
        })
    }

    /// Greedy policy on an `S × A` table; the lowest action index wins ties.
    pub fn greedy(q: &DMatrix<f64>) -> Self {
        let actions: Vec<usize> = (0..q.nrows()).map(|s| argmax_row(q, s)).collect();
        Self::deterministic(&actions, q.ncols()).expect("argmax is in range")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.action_prob[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.action_prob[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// The action with the largest probability in `s` (lowest index on ties).
    pub fn mode(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    /// Actions per state when the policy is deterministic.
    pub fn actions(&self) -> Option<Vec<usize>> {
        (0..self.n_states)
            .map(|s| {
                let row = self.row(s);
                row.iter().position(|&p| p == 1.0)
            })
            .collect()
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let row = self.row(s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Round-off: fall back to the last action with mass.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Index of the largest entry of row `s`; the lowest index wins ties.
pub fn argmax_row(q: &DMatrix<f64>, s: usize) -> usize {
    let mut best = 0;
    for a in 1..q.ncols() {
        if q[(s, a)] > q[(s, best)] {
            best = a;
        }
    }
    best
}

/// A time-indexed sequence of stationary policies `(π_1, …, π_T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonstationaryPolicy {
    steps: Vec<StationaryPolicy>,
}

impl NonstationaryPolicy {
    pub fn new(steps: Vec<StationaryPolicy>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidInput("non-stationary policy needs T >= 1".into()));
        }
        Ok(Self { steps })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// `π_i` for `i` in `1..=T`.
    pub fn step(&self, i: usize) -> &StationaryPolicy {
        &self.steps[i - 1]
    }

    pub fn first(&self) -> &StationaryPolicy {
        &self.steps[0]
    }

    pub fn steps(&self) -> &[StationaryPolicy] {
        &self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_rows_that_do_not_sum_to_one() {
        let err = DiscreteMdp::from_tables(1, 1, &[0.9], &[0.0], 0.9);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_negative_probabilities() {
        let err = DiscreteMdp::from_tables(2, 1, &[1.5, -0.5, 0.0, 1.0], &[0.0, 0.0], 0.9);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_discount_of_one() {
        assert!(DiscreteMdp::from_tables(1, 1, &[1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn greedy_breaks_ties_towards_lowest_index() {
        let q = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        let pi = StationaryPolicy::greedy(&q);
        assert_eq!(pi.actions().unwrap(), vec![0, 1]);
    }

    #[test]
    fn policy_rows_must_sum_to_one() {
        assert!(StationaryPolicy::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(StationaryPolicy::new(1, 2, vec![0.4, 0.6]).is_ok());
    }

    #[test]
    fn nonstationary_policy_needs_a_step() {
        assert!(NonstationaryPolicy::new(vec![]).is_err());
    }

    #[test]
    fn sampled_actions_follow_probabilities() {
        let pi = StationaryPolicy::state_independent(1, &[0.8, 0.2]).unwrap();
        let mut rng = crate::seeded_rng(3, 0);
        let n = 20_000;
        let zeros = (0..n).filter(|_| pi.sample_action(0, &mut rng) == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.8).abs() < 0.01, "{freq}");
    }
}
